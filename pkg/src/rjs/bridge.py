"""The adapter between script values and the host system.

Responsibilities: mirror the registry's namespace tree as a property
tree hanging off a root object, manufacture identity-cached proxies over
normalized addresses, convert values in both directions, resolve
overloads by conversion cost, and route invocations either inline or to
the dispatcher (a trailing callable always becomes the completion
callback). All of this runs on the interpreter domain; async results
are converted at delivery time inside the pump.

Script-side values are plain Python values: float (the single numeric
kind), str, bool, None, callables, and the small marker types below.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from typing import Any, Callable, TextIO

from .dispatcher import CallTask, Dispatcher
from .errors import (
    Ambiguous,
    ConversionError,
    LoadError,
    NoMatch,
    PrecisionError,
    ScriptNameError,
    ScriptTypeError,
)
from .heap import Heap
from .model import (
    TAG_ENUM,
    TAG_OBJ,
    GlobalDecl,
    HostValue,
    MethodSignature,
    NamespaceNode,
    OverloadSet,
    Registry,
    ValueKind,
    boolean,
    cstr,
    enumval,
    f64,
    i64,
    join_path,
    kind_str,
    ref,
    sig_str,
    split_path,
    strobj,
)
from .registry import eval_macro, merge, parse_manifest

MAX_SAFE_INTEGER = 2**53


# ---------------------------------------------------------------------------
# script-side value markers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NsRef:
    """Reference to a namespace by path; resolved against the current mirror."""

    path: str


@dataclass(frozen=True)
class TypeRef:
    qualified: str


@dataclass(frozen=True)
class FnRef:
    path: str


@dataclass(frozen=True)
class Proxy:
    """Script-side stand-in for one host object: identity, no data copies."""

    canonical: int
    type_name: str

    def __str__(self) -> str:
        return f"<{self.type_name} @{self.canonical:#x}>"


@dataclass(frozen=True)
class MethodRef:
    """A method looked up on a proxy (bound) or on a type (static access)."""

    owner: Proxy | None
    type_name: str
    name: str


def is_callback(value: Any) -> bool:
    """Trailing-argument test: any callable script value is a callback."""
    return callable(value)


# ---------------------------------------------------------------------------
# property tree
# ---------------------------------------------------------------------------

@dataclass
class PropertyNode:
    """Materialized mirror of one namespace node, rebuilt on refresh."""

    path: str
    namespaces: dict[str, "PropertyNode"] = field(default_factory=dict)
    types: dict[str, str] = field(default_factory=dict)  # name -> qualified
    functions: dict[str, str] = field(default_factory=dict)  # name -> path
    globals: dict[str, str] = field(default_factory=dict)  # name -> qualified


@dataclass
class RootObject:
    """Top-level object of the bindings; records the mirrored version."""

    tree: PropertyNode
    version_seen: int


def _mirror(node: NamespaceNode, path: str) -> PropertyNode:
    prop = PropertyNode(path)
    for name, child in node.namespaces.items():
        prop.namespaces[name] = _mirror(child, join_path(path, name))
    for name in node.types:
        prop.types[name] = join_path(path, name)
    for name in node.functions:
        prop.functions[name] = join_path(path, name)
    for name in node.globals:
        prop.globals[name] = join_path(path, name)
    return prop


def _entry_paths(prop: PropertyNode, into: set[str]) -> set[str]:
    for name, child in prop.namespaces.items():
        into.add(f"namespace:{child.path}")
        _entry_paths(child, into)
    into.update(f"type:{q}" for q in prop.types.values())
    into.update(f"function:{p}" for p in prop.functions.values())
    into.update(f"global:{q}" for q in prop.globals.values())
    return into


def build_root(registry: Registry) -> RootObject:
    """Expose every namespace, type, function and global as nested properties."""
    return RootObject(_mirror(registry.root, ""), registry.version)


def refresh(root: RootObject, registry: Registry) -> int:
    """Rebuild the mirror if the registry moved on; returns added entry count."""
    if root.version_seen == registry.version:
        return 0
    before = _entry_paths(root.tree, set())
    root.tree = _mirror(registry.root, "")
    root.version_seen = registry.version
    after = _entry_paths(root.tree, set())
    return len(after - before)


# ---------------------------------------------------------------------------
# proxy factory
# ---------------------------------------------------------------------------

class ProxyFactory:
    """Identity cache: at most one Proxy per canonical address, ever."""

    def __init__(self) -> None:
        self.cache: dict[int, Proxy] = {}

    def proxy_for(self, heap: Heap, handle: int) -> Proxy:
        canonical = heap.normalize(handle)
        proxy = self.cache.get(canonical)
        if proxy is None:
            proxy = Proxy(canonical, heap.objects[canonical].type_name)
            self.cache[canonical] = proxy
        return proxy


# ---------------------------------------------------------------------------
# invocation result
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Invocation:
    """Either an immediate value (call_id None) or a pending call id."""

    call_id: int | None
    value: Any = None

    @property
    def pending(self) -> bool:
        return self.call_id is not None


@dataclass(frozen=True)
class ResolvedCall:
    index: int
    signature: MethodSignature
    converted: list[HostValue]
    callback: Callable[[Any], Any] | None


class Bridge:
    """Glue object owning the registry mirror, proxy cache and dispatcher.

    One Bridge per embedding context. The error sink receives faults from
    asynchronous calls (the completion callback itself only ever sees the
    success value); every sunk fault is also recorded on `async_faults`
    so batch mode can exit nonzero.
    """

    def __init__(
        self,
        registry: Registry | None = None,
        heap: Heap | None = None,
        workers: int | None = None,
        diag: TextIO | None = None,
    ):
        self.registry = registry if registry is not None else Registry()
        self.heap = heap if heap is not None else Heap(self.registry)
        self.factory = ProxyFactory()
        self.diag = diag if diag is not None else sys.stderr
        self.async_faults: list[tuple[int, Exception]] = []
        self.error_sink: Callable[[int, Exception], None] = self._default_sink
        self.dispatcher = Dispatcher(
            self.heap,
            workers=workers,
            converter=self.to_script,
            error_sink=self._sink,
            diag=self.diag,
        )
        self.registry.busy_check = self.dispatcher.pending_count
        self.root = build_root(self.registry)

    # -- error sink ------------------------------------------------------------

    def _sink(self, call_id: int, exc: Exception) -> None:
        self.async_faults.append((call_id, exc))
        self.error_sink(call_id, exc)

    def _default_sink(self, call_id: int, exc: Exception) -> None:
        self.diag.write(f"async call #{call_id} failed: {type(exc).__name__}: {exc}\n")

    # -- mirror ------------------------------------------------------------------

    def refresh(self) -> int:
        return refresh(self.root, self.registry)

    def node_at(self, path: str) -> PropertyNode:
        node = self.root.tree
        for part in split_path(path):
            child = node.namespaces.get(part)
            if child is None:
                raise ScriptNameError(f"namespace {path!r} is not exposed")
            node = child
        return node

    # -- conversions ----------------------------------------------------------------

    def to_script(self, value: HostValue) -> Any:
        """Host -> script along the fixed table; object refs become proxies."""
        match value.tag:
            case "i64":
                n = value.value
                if abs(n) > MAX_SAFE_INTEGER:  # type: ignore[arg-type]
                    raise PrecisionError(f"{n} does not fit a binary64 mantissa")
                return float(n)  # type: ignore[arg-type]
            case "f64":
                return value.value
            case "bool":
                return value.value
            case "cstr" | "str":
                return str(value.value)
            case "enum":
                return float(value.value)  # type: ignore[arg-type]
            case "obj":
                if value.value == 0:
                    return None
                return self.factory.proxy_for(self.heap, value.value)  # type: ignore[arg-type]
            case _:
                return None

    def conversion_cost(self, value: Any, kind: ValueKind) -> tuple[int, HostValue] | None:
        """(cost, converted) when the table defines the conversion, else None."""
        if isinstance(value, bool):
            return (0, boolean(value)) if kind.tag == "bool" else None
        if isinstance(value, (int, float)):
            number = float(value)
            if kind.tag == "f64":
                return 0, f64(number)
            if kind.tag == "i64":
                if number.is_integer() and -(2**63) <= number < 2**63:
                    return 1, i64(int(number))
                return None  # no silent truncation
            if kind.tag == TAG_ENUM:
                if number.is_integer() and self.registry.is_enum_value(
                    kind.name or "", int(number)
                ):
                    return 2, enumval(kind.name or "", int(number))
                return None
            return None
        if isinstance(value, str):
            if kind.tag == "cstr":
                return 0, cstr(value)
            if kind.tag == "str":
                return 1, strobj(value)
            if kind.tag == TAG_ENUM:
                enum_value = self.registry.enumerator_value(kind.name or "", value)
                if enum_value is not None:
                    return 2, enumval(kind.name or "", enum_value)
                return None
            return None
        if value is None:
            return (1, ref(0)) if kind.tag == TAG_OBJ else None
        if isinstance(value, Proxy):
            if kind.tag != TAG_OBJ:
                return None
            distance = self.registry.subtype_distance(value.type_name, kind.name or "")
            if distance is None:
                return None
            return distance, ref(value.canonical)
        return None

    def to_host(self, value: Any, kind: ValueKind) -> HostValue:
        result = self.conversion_cost(value, kind)
        if result is None:
            raise ConversionError(
                f"no conversion from {_script_kind_name(value)} to {kind_str(kind)}"
            )
        return result[1]

    # -- overload resolution -----------------------------------------------------------

    def resolve_overload(self, overloads: OverloadSet, args: list[Any]) -> ResolvedCall:
        """Split a trailing callable, then pick the unique minimum-cost overload."""
        callback: Callable[[Any], Any] | None = None
        if args and is_callback(args[-1]):
            callback = args[-1]
            args = args[:-1]
        candidates = list(enumerate(overloads.signatures))
        return self._score(overloads.name, candidates, args, callback)

    def _score(
        self,
        name: str,
        candidates: list[tuple[int, MethodSignature]],
        args: list[Any],
        callback: Callable[[Any], Any] | None,
    ) -> ResolvedCall:
        scored: list[tuple[int, int, MethodSignature, list[HostValue]]] = []
        for index, sig in candidates:
            if len(sig.params) != len(args):
                continue
            total = 0
            converted: list[HostValue] = []
            for value, kind in zip(args, sig.params):
                step = self.conversion_cost(value, kind)
                if step is None:
                    break
                total += step[0]
                converted.append(step[1])
            else:
                scored.append((total, index, sig, converted))
                continue
        if not scored:
            arg_kinds = ", ".join(_script_kind_name(a) for a in args)
            raise NoMatch(f"no overload of {name!r} accepts ({arg_kinds})")
        best = min(s[0] for s in scored)
        winners = [s for s in scored if s[0] == best]
        if len(winners) > 1:
            listing = "; ".join(sig_str(name, s[2]) for s in winners)
            raise Ambiguous(f"call of {name!r} is ambiguous between: {listing}")
        _, index, sig, converted = winners[0]
        return ResolvedCall(index, sig, converted, callback)

    # -- invocation ---------------------------------------------------------------------

    def invoke(self, target: Any, args: list[Any]) -> Invocation:
        """Call a function set, construct a type, or call a method on a proxy.

        Without a trailing callable the call executes inline and the
        converted result is returned; with one, a task is submitted and
        the fresh call id returned immediately.
        """
        match target:
            case FnRef(path):
                overloads = self.registry.lookup(path)
                if not isinstance(overloads, OverloadSet):
                    raise ScriptTypeError(f"{path!r} is not a function set")
                resolved = self.resolve_overload(overloads, args)
                return self._dispatch(None, None, resolved)
            case TypeRef(qualified):
                return self._construct(qualified, args)
            case MethodRef(owner, type_name, name):
                overloads = self.registry.method_set(type_name, name)
                if overloads is None:
                    raise ScriptNameError(f"{type_name!r} has no method {name!r}")
                if owner is None:
                    static_only = [
                        (i, s) for i, s in enumerate(overloads.signatures) if s.is_static
                    ]
                    if not static_only:
                        raise NoMatch(f"method {type_name}.{name} requires an instance")
                    callback = None
                    call_args = args
                    if call_args and is_callback(call_args[-1]):
                        callback = call_args[-1]
                        call_args = call_args[:-1]
                    resolved = self._score(name, static_only, call_args, callback)
                    return self._dispatch(None, None, resolved)
                resolved = self.resolve_overload(overloads, args)
                self_addr = None if resolved.signature.is_static else owner.canonical
                return self._dispatch(self_addr, None, resolved)
            case _:
                raise ScriptTypeError(f"{_script_kind_name(target)} is not callable")

    def _construct(self, qualified: str, args: list[Any]) -> Invocation:
        desc = self.registry.find_type(qualified)
        if desc is None:
            raise ScriptNameError(f"unknown type {qualified!r}")
        callback: Callable[[Any], Any] | None = None
        call_args = args
        if call_args and is_callback(call_args[-1]):
            callback = call_args[-1]
            call_args = call_args[:-1]
        if not desc.constructors.signatures:
            if call_args:
                raise NoMatch(f"{qualified!r} has no constructors taking arguments")
            resolved = ResolvedCall(0, MethodSignature(()), [], callback)
            return self._dispatch(None, qualified, resolved, default_construct=True)
        scored = self._score(
            qualified, list(enumerate(desc.constructors.signatures)), call_args, callback
        )
        return self._dispatch(None, qualified, scored)

    def _dispatch(
        self,
        self_addr: int | None,
        construct_type: str | None,
        resolved: ResolvedCall,
        default_construct: bool = False,
    ) -> Invocation:
        signature = None if default_construct else resolved.signature
        if resolved.callback is not None:
            task = CallTask(
                target=self_addr,
                signature=signature,
                args=resolved.converted,
                construct_type=construct_type,
            )
            call_id = self.dispatcher.submit(task, resolved.callback)
            return Invocation(call_id)
        if construct_type is not None:
            address = self.heap.construct(construct_type, resolved.converted, signature)
            return Invocation(None, self.factory.proxy_for(self.heap, address))
        assert signature is not None
        outcome = self.heap.exec_body(self_addr, signature, resolved.converted)
        return Invocation(None, self.to_script(outcome))

    # -- member access (used by the script evaluator) ---------------------------------------

    def get_member(self, value: Any, name: str) -> Any:
        match value:
            case NsRef(path):
                # the entry-point API cannot be shadowed by registry names
                if path == "" and name == "loadlibrary":
                    return BoundBuiltin("loadlibrary", self._script_loadlibrary)
                if path == "" and name == "evalmacro":
                    return BoundBuiltin("evalmacro", self._script_evalmacro)
                node = self.node_at(path)
                if name in node.namespaces:
                    return NsRef(node.namespaces[name].path)
                if name in node.types:
                    return TypeRef(node.types[name])
                if name in node.functions:
                    return FnRef(node.functions[name])
                if name in node.globals:
                    return self.to_script(self.heap.read_global(node.globals[name]))
                where = path or "the root object"
                raise ScriptNameError(f"{where} has no member {name!r}")
            case TypeRef(qualified):
                if self.registry.method_set(qualified, name) is not None:
                    return MethodRef(None, qualified, name)
                raise ScriptNameError(f"type {qualified!r} has no static member {name!r}")
            case Proxy(canonical, type_name):
                if self.registry.field_decl(type_name, name) is not None:
                    return self.to_script(self.heap.read_field(canonical, name))
                if self.registry.method_set(type_name, name) is not None:
                    return MethodRef(value, type_name, name)
                raise ScriptNameError(f"{type_name!r} has no member {name!r}")
            case _:
                raise ScriptTypeError(
                    f"{_script_kind_name(value)} has no members (reading {name!r})"
                )

    def set_member(self, value: Any, name: str, assigned: Any) -> None:
        """Write-through for globals and proxy fields; all else is read-only."""
        match value:
            case NsRef(path):
                node = self.node_at(path)
                if name in node.globals:
                    decl = self.registry.lookup(node.globals[name])
                    assert isinstance(decl, GlobalDecl)
                    self.heap.write_global(decl.qualified, self.to_host(assigned, decl.kind))
                    return
                if name in node.namespaces or name in node.types or name in node.functions:
                    raise ScriptTypeError(f"property {name!r} is read-only")
                where = path or "the root object"
                raise ScriptNameError(f"{where} has no member {name!r}")
            case Proxy(canonical, type_name):
                decl = self.registry.field_decl(type_name, name)
                if decl is not None:
                    self.heap.write_field(canonical, name, self.to_host(assigned, decl.kind))
                    return
                if self.registry.method_set(type_name, name) is not None:
                    raise ScriptTypeError(f"method {name!r} is read-only")
                raise ScriptNameError(f"{type_name!r} has no member {name!r}")
            case _:
                raise ScriptTypeError(
                    f"{_script_kind_name(value)} has no members (assigning {name!r})"
                )

    # -- plugin loading and macros ---------------------------------------------------------

    def loadlibrary(self, path: str) -> int:
        """Merge a plugin file and refresh the mirror; returns the new version."""
        try:
            with open(path, "r", encoding="utf-8") as handle:
                text = handle.read()
        except OSError as exc:
            raise LoadError(f"cannot read plugin {path!r}: {exc}") from exc
        ast = parse_manifest(text)
        version = merge(self.registry, ast, self.heap)
        self.refresh()
        return version

    def evalmacro(self, text: str) -> Any:
        """Evaluate macro text, resync the mirror, convert the macro's value."""
        try:
            result = eval_macro(self.registry, self.heap, text)
        finally:
            self.refresh()  # declarations may have merged even on fault
        return self.to_script(result.value)

    def _script_loadlibrary(self, *args: Any) -> Any:
        if len(args) != 1 or not isinstance(args[0], str):
            raise ScriptTypeError("loadlibrary takes one string argument")
        return float(self.loadlibrary(args[0]))

    def _script_evalmacro(self, *args: Any) -> Any:
        if len(args) != 1 or not isinstance(args[0], str):
            raise ScriptTypeError("evalmacro takes one string argument")
        return self.evalmacro(args[0])

    # -- lifecycle ---------------------------------------------------------------------------

    def shutdown(self) -> None:
        self.dispatcher.shutdown()


@dataclass(frozen=True)
class BoundBuiltin:
    """Host-provided callable exposed to script (root.loadlibrary and friends)."""

    name: str
    fn: Callable[..., Any]

    def __call__(self, *args: Any) -> Any:
        return self.fn(*args)


def _script_kind_name(value: Any) -> str:
    if value is None:
        return "null"
    if isinstance(value, bool):
        return "bool"
    if isinstance(value, (int, float)):
        return "number"
    if isinstance(value, str):
        return "string"
    if isinstance(value, Proxy):
        return f"proxy<{value.type_name}>"
    if isinstance(value, NsRef):
        return "namespace"
    if isinstance(value, TypeRef):
        return "type"
    if isinstance(value, FnRef):
        return "function"
    if isinstance(value, MethodRef):
        return "method"
    if callable(value):
        return "callable"
    return type(value).__name__
