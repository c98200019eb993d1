"""Bridge behaviour: mirror, proxies, conversions, resolution, invocation."""

from __future__ import annotations

import json
import random
import time

import pytest

import support
from rjs import Proxy, boolean, cstr, enumval, f64, i64, ref, strobj
from rjs.bridge import FnRef, MethodRef, NsRef, TypeRef, build_root, refresh
from rjs.errors import (
    Ambiguous,
    ConversionError,
    DanglingHandle,
    LoadError,
    NoMatch,
    NotQuiescent,
    PrecisionError,
    ScriptNameError,
    ScriptTypeError,
)
from rjs.model import K_BOOL, K_CSTR, K_F64, K_I64, K_STR, OverloadSet, enum_kind, obj_kind
from rjs.model import MethodSignature, VOID
from rjs.registry import eval_macro, merge, parse_manifest

PI_MANIFEST = json.dumps({
    "namespaces": ["ROOT.Math"],
    "functions": [{"name": "Pi", "namespace": "ROOT.Math", "params": [], "returns": "f64",
                   "body": [{"op": "ret", "value": {"op": "const", "value": 3.141592653589793}}]}],
})

SLEEPY = json.dumps({
    "functions": [{"name": "Nap", "params": ["i64"], "returns": "i64", "body": [
        {"op": "builtin", "name": "sleep_ms", "args": [{"op": "param", "index": 0}]},
        {"op": "ret", "value": {"op": "param", "index": 0}},
    ]}],
})


def load(bridge, text: str) -> None:
    merge(bridge.registry, parse_manifest(text), bridge.heap)
    bridge.refresh()


# -- build_root / refresh -----------------------------------------------------


def test_empty_registry_root_has_no_properties(bridge):
    root = build_root(bridge.registry)
    node = root.tree
    assert not node.namespaces and not node.types
    assert not node.functions and not node.globals


def test_pi_manifest_exposes_fnref(bridge):
    load(bridge, PI_MANIFEST)
    member = bridge.get_member(NsRef(""), "ROOT")
    math_ns = bridge.get_member(member, "Math")
    pi = bridge.get_member(math_ns, "Pi")
    assert pi == FnRef("ROOT.Math.Pi")


def test_root_listing_matches_enumerate(bridge, sample_plugin):
    load(bridge, sample_plugin.read_text())
    listing = bridge.registry.enumerate("")
    node = bridge.root.tree
    assert sorted(node.namespaces) == listing.namespaces
    assert sorted(node.types) == listing.types
    assert sorted(node.functions) == listing.functions
    assert sorted(node.globals) == listing.globals


def test_refresh_unchanged_version_is_noop(bridge):
    load(bridge, PI_MANIFEST)
    assert bridge.refresh() == 0


def test_refresh_counts_added_names(bridge):
    merge(bridge.registry, parse_manifest(PI_MANIFEST), bridge.heap)
    # ROOT, ROOT.Math and ROOT.Math.Pi are new
    assert refresh(bridge.root, bridge.registry) == 3


def test_refresh_after_statement_macro_records_version(bridge):
    load(bridge, json.dumps({"globals": [{"name": "g", "kind": "i64"}]}))
    eval_macro(bridge.registry, bridge.heap, json.dumps(
        {"statements": [{"op": "gset", "name": "g", "value": {"op": "const", "value": 1}}]}))
    assert bridge.root.version_seen != bridge.registry.version
    assert bridge.refresh() == 0
    assert bridge.root.version_seen == bridge.registry.version


def test_refresh_is_idempotent(bridge, sample_plugin):
    merge(bridge.registry, parse_manifest(sample_plugin.read_text()), bridge.heap)
    first = bridge.refresh()
    assert first > 0
    assert bridge.refresh() == 0


# -- proxies ---------------------------------------------------------------------


def test_proxy_for_is_cached(bridge):
    load(bridge, json.dumps({"types": [{"name": "T"}]}))
    addr = bridge.heap.construct("T")
    first = bridge.factory.proxy_for(bridge.heap, addr)
    second = bridge.factory.proxy_for(bridge.heap, addr)
    assert first is second


def test_proxy_for_alias_is_same_identity(bridge):
    load(bridge, json.dumps({"types": [{"name": "T"}]}))
    addr = bridge.heap.construct("T")
    alias = bridge.heap.make_alias(addr)
    assert bridge.factory.proxy_for(bridge.heap, alias) is \
        bridge.factory.proxy_for(bridge.heap, addr)


def test_thousand_aliases_ten_objects_ten_proxies(bridge):
    load(bridge, json.dumps({"types": [{"name": "T"}]}))
    rng = random.Random(11)
    addresses = [bridge.heap.construct("T") for _ in range(10)]
    handles = list(addresses)
    proxies = set()
    groups: dict[int, set[int]] = {}
    for addr in addresses:
        proxies.add(id(bridge.factory.proxy_for(bridge.heap, addr)))
    for _ in range(1000):
        source = rng.choice(handles)
        handle = bridge.heap.make_alias(source)
        handles.append(handle)
        proxy = bridge.factory.proxy_for(bridge.heap, handle)
        proxies.add(id(proxy))
        groups.setdefault(proxy.canonical, set()).add(handle)
    assert len(proxies) == 10
    for canonical, group in groups.items():
        for handle in group:
            assert bridge.heap.normalize(handle) == canonical


def test_proxy_for_dangling_handle(bridge):
    load(bridge, json.dumps({"types": [{"name": "T"}]}))
    addr = bridge.heap.construct("T")
    bridge.heap.destroy(addr)
    with pytest.raises(DanglingHandle):
        bridge.factory.proxy_for(bridge.heap, addr)


# -- to_host -----------------------------------------------------------------------


def test_to_host_integral_num_to_i64(bridge):
    assert bridge.to_host(2.0, K_I64) == i64(2)


def test_to_host_fractional_num_to_i64_rejected(bridge):
    with pytest.raises(ConversionError):
        bridge.to_host(2.5, K_I64)


def test_to_host_string_to_enum_by_name(bridge, sample_plugin):
    load(bridge, sample_plugin.read_text())
    assert bridge.to_host("kBlue", enum_kind("EColor")) == enumval("EColor", 600)


def test_to_host_num_to_enum_by_value(bridge, sample_plugin):
    load(bridge, sample_plugin.read_text())
    assert bridge.to_host(600.0, enum_kind("EColor")) == enumval("EColor", 600)
    with pytest.raises(ConversionError):
        bridge.to_host(601.0, enum_kind("EColor"))


def test_to_host_string_kinds(bridge):
    assert bridge.to_host("s", K_CSTR) == cstr("s")
    assert bridge.to_host("s", K_STR) == strobj("s")


def test_to_host_null_to_object_ref(bridge):
    load(bridge, json.dumps({"types": [{"name": "T"}]}))
    assert bridge.to_host(None, obj_kind("T")) == ref(0)


def test_to_host_proxy_subtyping(bridge):
    proxies, _ = support.load_overload_fixture(bridge)
    leaf = proxies["Leaf"]
    assert bridge.to_host(leaf, obj_kind("Base")) == ref(leaf.canonical)
    with pytest.raises(ConversionError):
        bridge.to_host(proxies["Other"], obj_kind("Base"))


def test_to_host_bool(bridge):
    assert bridge.to_host(True, K_BOOL) == boolean(True)
    with pytest.raises(ConversionError):
        bridge.to_host(True, K_I64)  # bool is not a number script-side


# -- to_script ----------------------------------------------------------------------


def test_to_script_numbers_and_strings(bridge):
    assert bridge.to_script(f64(5.0)) == 5.0
    assert bridge.to_script(i64(3)) == 3.0
    assert bridge.to_script(cstr("a")) == "a"
    assert bridge.to_script(strobj("b")) == "b"
    assert bridge.to_script(boolean(True)) is True
    assert bridge.to_script(VOID) is None


def test_to_script_large_i64_is_precision_error(bridge):
    assert bridge.to_script(i64(2**53)) == float(2**53)
    with pytest.raises(PrecisionError):
        bridge.to_script(i64(2**53 + 1))


def test_to_script_enum_is_number(bridge):
    assert bridge.to_script(enumval("EColor", 600)) == 600.0


def test_to_script_ref_uses_proxy_cache(bridge):
    load(bridge, json.dumps({"types": [{"name": "T"}]}))
    addr = bridge.heap.construct("T")
    via_ref = bridge.to_script(ref(addr))
    assert via_ref is bridge.factory.proxy_for(bridge.heap, addr)


def test_to_script_null_ref_is_null(bridge):
    assert bridge.to_script(ref(0)) is None


def test_round_trip_exact_kinds(bridge):
    for value, kind in ((2.5, K_F64), ("s", K_CSTR), (True, K_BOOL)):
        assert bridge.to_script(bridge.to_host(value, kind)) == value


# -- resolve_overload ----------------------------------------------------------------


def fill_set() -> OverloadSet:
    return OverloadSet("Fill", [
        MethodSignature((K_F64, K_F64), K_I64),
        MethodSignature((K_CSTR, K_F64), K_I64),
    ])


def test_fill_numeric_pair_picks_double_double(bridge):
    resolved = bridge.resolve_overload(fill_set(), [1.5, 2.0])
    assert resolved.index == 0
    assert resolved.converted == [f64(1.5), f64(2.0)]


def test_fill_string_first_picks_cstr(bridge):
    resolved = bridge.resolve_overload(fill_set(), ["bin", 2.0])
    assert resolved.index == 1
    assert resolved.converted == [cstr("bin"), f64(2.0)]


def test_integral_num_prefers_f64_over_i64(bridge):
    overloads = OverloadSet("f", [
        MethodSignature((K_I64,), K_I64),
        MethodSignature((K_F64,), K_F64),
    ])
    resolved = bridge.resolve_overload(overloads, [2.0])
    assert resolved.index == 1  # cost 0 beats cost 1


def test_i64_beats_enum_under_cost_table(bridge):
    # documented deviation: Num->i64 costs 1, Num->enum costs 2, so this
    # resolves to the i64 overload instead of tying
    proxies, _ = support.load_overload_fixture(bridge)
    overloads = OverloadSet("f", [
        MethodSignature((K_I64,), K_I64),
        MethodSignature((enum_kind("E1"),), K_I64),
    ])
    resolved = bridge.resolve_overload(overloads, [2.0])
    assert resolved.index == 0


def test_ambiguous_tie_lists_both(bridge):
    overloads = OverloadSet("f", [
        MethodSignature((K_I64, K_F64), K_I64),
        MethodSignature((K_F64, K_I64), K_I64),
    ])
    with pytest.raises(Ambiguous) as excinfo:
        bridge.resolve_overload(overloads, [2.0, 3.0])
    message = str(excinfo.value)
    assert message.count("f(") == 2


def test_no_match_reports_kinds(bridge):
    with pytest.raises(NoMatch, match="string"):
        bridge.resolve_overload(fill_set(), ["only-one-arg"])


def test_trailing_callable_is_split_not_matched(bridge):
    observed = []
    callback = observed.append
    resolved = bridge.resolve_overload(fill_set(), [1.0, 2.0, callback])
    assert resolved.callback is callback
    assert len(resolved.converted) == 2


def test_resolution_invariant_under_set_permutation(bridge):
    proxies, enums = support.load_overload_fixture(bridge)
    rng = random.Random(23)
    for _ in range(300):
        param_lists = support.random_param_lists(rng)
        args = [support.random_arg(rng, proxies) for _ in range(rng.randint(0, 3))]
        overloads = OverloadSet("f", [MethodSignature(p) for p in param_lists])
        try:
            baseline = param_lists[bridge.resolve_overload(overloads, args).index]
        except NoMatch:
            baseline = "nomatch"
        except Ambiguous:
            baseline = "ambiguous"
        order = list(range(len(param_lists)))
        rng.shuffle(order)
        shuffled = OverloadSet("f", [MethodSignature(param_lists[i]) for i in order])
        try:
            outcome = param_lists[order[bridge.resolve_overload(shuffled, args).index]]
        except NoMatch:
            outcome = "nomatch"
        except Ambiguous:
            outcome = "ambiguous"
        assert outcome == baseline


def test_resolution_agrees_with_exhaustive_oracle(bridge):
    proxies, enums = support.load_overload_fixture(bridge)
    rng = random.Random(42)
    for _ in range(2000):
        param_lists = support.random_param_lists(rng)
        args = [support.random_arg(rng, proxies) for _ in range(rng.randint(0, 3))]
        expected = support.oracle_classify(
            param_lists, args, enums, support.OVERLOAD_TYPE_BASES
        )
        overloads = OverloadSet("f", [MethodSignature(p) for p in param_lists])
        try:
            resolved = bridge.resolve_overload(overloads, args)
            actual = ("ok", resolved.index)
        except NoMatch:
            actual = ("nomatch", None)
        except Ambiguous:
            actual = ("ambiguous", None)
        assert actual[0] == expected[0], (param_lists, args, expected, actual)
        if expected[0] == "ok":
            assert actual[1] == expected[1]


# -- invoke -------------------------------------------------------------------------


def test_invoke_pi_synchronously(bridge):
    load(bridge, PI_MANIFEST)
    result = bridge.invoke(FnRef("ROOT.Math.Pi"), [])
    assert not result.pending
    assert result.value == 3.141592653589793


def test_invoke_construct_and_method(bridge, sample_plugin):
    load(bridge, sample_plugin.read_text())
    made = bridge.invoke(TypeRef("TVector3"), [3.0, 4.0, 0.0])
    v = made.value
    assert isinstance(v, Proxy) and v.type_name == "TVector3"
    mag = bridge.invoke(MethodRef(v, "TVector3", "Mag"), [])
    assert mag.value == 5.0


def test_invoke_default_construction(bridge):
    load(bridge, json.dumps({"types": [
        {"name": "T", "fields": [{"name": "x", "kind": "f64", "initial": 1.5}]}]}))
    result = bridge.invoke(TypeRef("T"), [])
    assert bridge.get_member(result.value, "x") == 1.5
    with pytest.raises(NoMatch):
        bridge.invoke(TypeRef("T"), [3.0])


def test_invoke_static_method_via_typeref(bridge, sample_plugin):
    load(bridge, sample_plugin.read_text())
    opened = bridge.invoke(MethodRef(None, "TFile", "Open"), ["f.root"])
    assert isinstance(opened.value, Proxy)
    assert bridge.get_member(opened.value, "fName") == "f.root"


def test_instance_method_via_typeref_requires_instance(bridge, sample_plugin):
    load(bridge, sample_plugin.read_text())
    with pytest.raises(NoMatch, match="instance"):
        bridge.invoke(MethodRef(None, "TVector3", "Mag"), [])


def test_inherited_method_callable_on_derived(bridge, sample_plugin):
    load(bridge, sample_plugin.read_text())
    h = bridge.invoke(TypeRef("TH1D"), ["h", "title"]).value
    name = bridge.invoke(MethodRef(h, "TH1D", "GetName"), [])
    assert name.value == "h"


def test_async_invoke_returns_pending_id_then_callback_runs(bridge):
    load(bridge, SLEEPY)
    got: list[float] = []
    start = time.monotonic()
    result = bridge.invoke(FnRef("Nap"), [200.0, got.append])
    submit_latency = time.monotonic() - start
    assert result.pending and result.call_id is not None
    assert submit_latency < 0.05
    assert got == []  # nothing delivered before a pump
    assert bridge.dispatcher.drain(2000)
    assert got == [200.0]


def test_sync_invoke_blocks_for_duration(bridge):
    load(bridge, SLEEPY)
    start = time.monotonic()
    result = bridge.invoke(FnRef("Nap"), [200.0])
    elapsed = time.monotonic() - start
    assert elapsed >= 0.2
    assert result.value == 200.0


def test_async_fault_goes_to_sink_not_callback(bridge):
    load(bridge, json.dumps({
        "functions": [{"name": "Bad", "params": [], "returns": "i64", "body": [
            {"op": "ret", "value": {"op": "bin", "o": "/",
                                    "l": {"op": "const", "value": 1},
                                    "r": {"op": "const", "value": 0}}}]}],
    }))
    bridge.invoke(FnRef("Bad"), [lambda v: pytest.fail("callback must not run")])
    assert bridge.dispatcher.drain(2000)
    assert len(bridge.async_faults) == 1


def test_async_construction(bridge, sample_plugin):
    load(bridge, sample_plugin.read_text())
    got: list = []
    result = bridge.invoke(TypeRef("TVector3"), [3.0, 4.0, 0.0, got.append])
    assert result.pending
    assert bridge.dispatcher.drain(2000)
    assert len(got) == 1 and isinstance(got[0], Proxy)
    assert bridge.get_member(got[0], "x") == 3.0


# -- member access ---------------------------------------------------------------------


def test_get_member_global_reads_heap(bridge, sample_plugin):
    load(bridge, sample_plugin.read_text())
    assert bridge.get_member(NsRef(""), "gDebug") == 0.0
    bridge.heap.write_global("gDebug", i64(2))
    assert bridge.get_member(NsRef(""), "gDebug") == 2.0


def test_set_member_global_writes_through(bridge, sample_plugin):
    load(bridge, sample_plugin.read_text())
    bridge.set_member(NsRef(""), "gDebug", 3.0)
    assert bridge.heap.read_global("gDebug") == i64(3)
    with pytest.raises(ConversionError):
        bridge.set_member(NsRef(""), "gDebug", 2.5)


def test_set_member_non_global_rejected(bridge, sample_plugin):
    load(bridge, sample_plugin.read_text())
    with pytest.raises(ScriptTypeError, match="read-only"):
        bridge.set_member(NsRef(""), "TFile", 1.0)


def test_proxy_field_read_write(bridge, sample_plugin):
    load(bridge, sample_plugin.read_text())
    v = bridge.invoke(TypeRef("TVector3"), [0.0, 0.0, 0.0]).value
    bridge.set_member(v, "x", 2.5)
    assert bridge.get_member(v, "x") == 2.5


def test_unknown_member_errors(bridge, sample_plugin):
    load(bridge, sample_plugin.read_text())
    with pytest.raises(ScriptNameError):
        bridge.get_member(NsRef(""), "NoSuch")
    v = bridge.invoke(TypeRef("TVector3"), [0.0, 0.0, 0.0]).value
    with pytest.raises(ScriptNameError):
        bridge.get_member(v, "w")
    with pytest.raises(ScriptTypeError):
        bridge.get_member(3.0, "x")


# -- loadlibrary -------------------------------------------------------------------------


def test_loadlibrary_then_immediate_use(bridge, math_plugin):
    version = bridge.loadlibrary(str(math_plugin))
    assert version == 1
    result = bridge.invoke(FnRef("ROOT.Math.Pi"), [])
    assert result.value == 3.141592653589793


def test_loadlibrary_missing_file_leaves_tree_unchanged(bridge, math_plugin):
    bridge.loadlibrary(str(math_plugin))
    before = bridge.registry.version
    with pytest.raises(LoadError):
        bridge.loadlibrary("does/not/exist.plugin")
    assert bridge.registry.version == before
    assert bridge.get_member(NsRef(""), "ROOT") == NsRef("ROOT")


def test_loadlibrary_not_quiescent_during_sleep(bridge, math_plugin):
    load(bridge, SLEEPY)
    bridge.invoke(FnRef("Nap"), [500.0, lambda v: None])
    with pytest.raises(NotQuiescent):
        bridge.loadlibrary(str(math_plugin))
    assert bridge.dispatcher.drain(2000)
    assert bridge.loadlibrary(str(math_plugin)) >= 2
