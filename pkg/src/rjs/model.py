"""Data model of the introspectable host system.

Everything the registry knows about lives here: value kinds, host values,
the statement/expression nodes that give method bodies observable
semantics, type descriptors, the namespace tree and the Registry itself
(with read-only lookup/enumerate). Manifest parsing and mutation live in
`registry`, instance storage and body execution in `heap`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

from .errors import NotANamespace, NotFound

# ---------------------------------------------------------------------------
# value kinds
# ---------------------------------------------------------------------------

#: tags shared by ValueKind and HostValue; "obj" values are reference handles
TAG_I64 = "i64"
TAG_F64 = "f64"
TAG_BOOL = "bool"
TAG_CSTR = "cstr"
TAG_STR = "str"
TAG_ENUM = "enum"
TAG_OBJ = "obj"
TAG_VOID = "void"

SCALAR_TAGS = (TAG_I64, TAG_F64, TAG_BOOL, TAG_CSTR, TAG_STR, TAG_VOID)


@dataclass(frozen=True)
class ValueKind:
    """Host-side type of a field, parameter, return slot or global.

    `name` carries the enum name for tag "enum" and the qualified type
    name for tag "obj"; it is None for scalar tags.
    """

    tag: str
    name: str | None = None

    def __str__(self) -> str:
        return kind_str(self)


K_I64 = ValueKind(TAG_I64)
K_F64 = ValueKind(TAG_F64)
K_BOOL = ValueKind(TAG_BOOL)
K_CSTR = ValueKind(TAG_CSTR)
K_STR = ValueKind(TAG_STR)
K_VOID = ValueKind(TAG_VOID)


def enum_kind(name: str) -> ValueKind:
    return ValueKind(TAG_ENUM, name)


def obj_kind(qualified_name: str) -> ValueKind:
    return ValueKind(TAG_OBJ, qualified_name)


def kind_str(kind: ValueKind) -> str:
    """Human rendering: scalar tags verbatim, enum/object kinds by name."""
    if kind.tag in (TAG_ENUM, TAG_OBJ):
        return kind.name or "?"
    return kind.tag


# ---------------------------------------------------------------------------
# host values
# ---------------------------------------------------------------------------

I64_MIN = -(2**63)
I64_MAX = 2**63 - 1


def wrap_i64(n: int) -> int:
    """Two's-complement wrap into the 64-bit signed range."""
    return (n - I64_MIN) % 2**64 + I64_MIN


@dataclass(frozen=True)
class HostValue:
    """Tagged host-side value.

    value holds int (i64, obj handle, enum integer), float (f64), bool,
    or str (cstr/str); it is None for void. `enum_name` is set only for
    enum values. Handle 0 is the null object reference: it never maps to
    a live object and dereferencing it faults.
    """

    tag: str
    value: object = None
    enum_name: str | None = None


def i64(n: int) -> HostValue:
    return HostValue(TAG_I64, wrap_i64(int(n)))


def f64(x: float) -> HostValue:
    return HostValue(TAG_F64, float(x))


def boolean(b: bool) -> HostValue:
    return HostValue(TAG_BOOL, bool(b))


def cstr(s: str) -> HostValue:
    return HostValue(TAG_CSTR, s)


def strobj(s: str) -> HostValue:
    return HostValue(TAG_STR, s)


def enumval(enum_name: str, n: int) -> HostValue:
    return HostValue(TAG_ENUM, int(n), enum_name)


def ref(handle: int) -> HostValue:
    return HostValue(TAG_OBJ, int(handle))


VOID = HostValue(TAG_VOID)
NULL_REF = ref(0)


def format_number(x: float) -> str:
    """Shortest round-trip decimal for binary64, integral values without '.0'."""
    if x != x:
        return "NaN"
    if x == float("inf"):
        return "Infinity"
    if x == float("-inf"):
        return "-Infinity"
    if x == 0.0:
        return "0"
    text = repr(float(x))
    if text.endswith(".0"):
        return text[:-2]
    return text


def format_host(value: HostValue) -> str:
    """Canonical host rendering, used by the to_str builtin."""
    match value.tag:
        case "i64":
            return str(value.value)
        case "f64":
            return format_number(value.value)  # type: ignore[arg-type]
        case "bool":
            return "true" if value.value else "false"
        case "cstr" | "str":
            return str(value.value)
        case "enum":
            return str(value.value)
        case "obj":
            return "null" if value.value == 0 else f"<obj @{value.value:#x}>"
        case _:
            return "null"


# ---------------------------------------------------------------------------
# body AST: the observable semantics of host methods, ctors and macros
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Const:
    value: HostValue


@dataclass(frozen=True)
class Param:
    index: int


@dataclass(frozen=True)
class SelfRef:
    pass


@dataclass(frozen=True)
class GetField:
    name: str


@dataclass(frozen=True)
class GetGlobal:
    name: str


@dataclass(frozen=True)
class BinOp:
    op: str  # one of + - * / %
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Builtin:
    name: str
    args: tuple["Expr", ...]


@dataclass(frozen=True)
class New:
    type_name: str
    args: tuple["Expr", ...]


Expr = Union[Const, Param, SelfRef, GetField, GetGlobal, BinOp, Builtin, New]


@dataclass(frozen=True)
class SetField:
    name: str
    value: Expr


@dataclass(frozen=True)
class SetGlobal:
    name: str  # qualified
    value: Expr


@dataclass(frozen=True)
class Return:
    value: Expr | None  # None returns void


@dataclass(frozen=True)
class ExprStmt:
    value: Expr


Stmt = Union[SetField, SetGlobal, Return, ExprStmt]

BIN_OPS = ("+", "-", "*", "/", "%")

#: builtin name -> (min arity, max arity or None for unbounded)
BUILTINS: dict[str, tuple[int, int | None]] = {
    "sqrt": (1, 1),
    "floor": (1, 1),
    "concat": (1, None),
    "strlen": (1, 1),
    "to_str": (1, 1),
    "sleep_ms": (1, 1),
    "alias": (1, 1),
}


# ---------------------------------------------------------------------------
# signatures and descriptors
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MethodSignature:
    """One overload: parameter kinds, return kind and an executable body."""

    params: tuple[ValueKind, ...]
    returns: ValueKind = K_VOID
    is_static: bool = False
    body: tuple[Stmt, ...] = ()


@dataclass
class OverloadSet:
    """Ordered signatures sharing one method/function name.

    Pairs with identical (arity, param kinds) are rejected at merge time,
    so call-time scoring can always separate the members.
    """

    name: str
    signatures: list[MethodSignature] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.signatures)


def sig_str(name: str, sig: MethodSignature) -> str:
    params = ", ".join(kind_str(k) for k in sig.params)
    suffix = " [static]" if sig.is_static else ""
    if sig.returns == K_VOID:
        return f"{name}({params}) -> void{suffix}"
    return f"{name}({params}) -> {kind_str(sig.returns)}{suffix}"


@dataclass(frozen=True)
class FieldDecl:
    name: str
    kind: ValueKind
    initial: HostValue


@dataclass
class HostTypeDescriptor:
    """Introspection metadata for one host composite type."""

    qualified_name: str
    bases: tuple[str, ...] = ()
    fields: list[FieldDecl] = field(default_factory=list)
    methods: dict[str, OverloadSet] = field(default_factory=dict)
    constructors: OverloadSet = field(default_factory=lambda: OverloadSet("(ctor)"))


@dataclass
class GlobalDecl:
    name: str
    qualified: str
    kind: ValueKind
    initial: HostValue


@dataclass
class NamespaceNode:
    """One level of the exposed name hierarchy.

    The four child maps are kept mutually disjoint: a name identifies at
    most one of namespace, type, function set or global within a node.
    """

    name: str
    namespaces: dict[str, "NamespaceNode"] = field(default_factory=dict)
    types: dict[str, HostTypeDescriptor] = field(default_factory=dict)
    functions: dict[str, OverloadSet] = field(default_factory=dict)
    globals: dict[str, GlobalDecl] = field(default_factory=dict)

    def categories_holding(self, name: str) -> list[str]:
        held = []
        if name in self.namespaces:
            held.append("namespace")
        if name in self.types:
            held.append("type")
        if name in self.functions:
            held.append("function")
        if name in self.globals:
            held.append("global")
        return held


@dataclass
class Listing:
    """enumerate() result: child names per category, lexicographically sorted."""

    namespaces: list[str]
    types: list[str]
    functions: list[str]
    globals: list[str]


def split_path(path: str) -> list[str]:
    return path.split(".") if path else []


def join_path(prefix: str, name: str) -> str:
    return f"{prefix}.{name}" if prefix else name


class Registry:
    """All introspection metadata: the namespace tree plus enum tables.

    `version` increases by exactly one on every successful mutation
    (plugin merge, macro evaluation) and never otherwise; the bridge
    watches it to decide when the property mirror is stale. `busy_check`,
    when set, returns the number of in-flight asynchronous calls and
    gates mutations (the quiescence rule).
    """

    def __init__(self) -> None:
        self.root = NamespaceNode("")
        self.enums: dict[str, dict[str, int]] = {}
        self.version = 0
        self.busy_check = None  # optional () -> int, wired by the bridge

    # -- lookup / enumeration ------------------------------------------------

    def lookup(self, path: str):
        """Resolve a dot-separated path from the root.

        Returns a NamespaceNode, HostTypeDescriptor, OverloadSet or
        GlobalDecl. Raises NotFound carrying the longest resolvable prefix.
        """
        parts = split_path(path)
        node = self.root
        for i, part in enumerate(parts):
            last = i == len(parts) - 1
            if part in node.namespaces:
                node = node.namespaces[part]
                continue
            if last:
                if part in node.types:
                    return node.types[part]
                if part in node.functions:
                    return node.functions[part]
                if part in node.globals:
                    return node.globals[part]
            raise NotFound(path, ".".join(parts[:i]))
        return node

    def enumerate(self, path: str) -> Listing:
        found = self.lookup(path)
        if not isinstance(found, NamespaceNode):
            raise NotANamespace(f"{path!r} is not a namespace")
        return Listing(
            namespaces=sorted(found.namespaces),
            types=sorted(found.types),
            functions=sorted(found.functions),
            globals=sorted(found.globals),
        )

    def namespace_at(self, path: str) -> NamespaceNode:
        found = self.lookup(path)
        if not isinstance(found, NamespaceNode):
            raise NotANamespace(f"{path!r} is not a namespace")
        return found

    def find_type(self, qualified_name: str) -> HostTypeDescriptor | None:
        try:
            found = self.lookup(qualified_name)
        except NotFound:
            return None
        return found if isinstance(found, HostTypeDescriptor) else None

    def find_global(self, qualified_name: str) -> GlobalDecl | None:
        try:
            found = self.lookup(qualified_name)
        except NotFound:
            return None
        return found if isinstance(found, GlobalDecl) else None

    # -- inheritance helpers ---------------------------------------------------

    def base_chain(self, qualified_name: str) -> list[HostTypeDescriptor]:
        """The type itself followed by its ancestors, nearest first."""
        chain: list[HostTypeDescriptor] = []
        seen: set[str] = set()
        frontier = [qualified_name]
        while frontier:
            name = frontier.pop(0)
            if name in seen:
                continue
            seen.add(name)
            desc = self.find_type(name)
            if desc is None:
                continue
            chain.append(desc)
            frontier.extend(desc.bases)
        return chain

    def subtype_distance(self, dynamic: str, target: str) -> int | None:
        """Steps up the base chain from `dynamic` to `target`, None if unrelated."""
        level = 0
        frontier = [dynamic]
        seen: set[str] = set()
        while frontier:
            if target in frontier:
                return level
            next_frontier: list[str] = []
            for name in frontier:
                if name in seen:
                    continue
                seen.add(name)
                desc = self.find_type(name)
                if desc is not None:
                    next_frontier.extend(desc.bases)
            frontier = next_frontier
            level += 1
        return None

    def all_fields(self, qualified_name: str) -> list[FieldDecl]:
        """Declared plus inherited fields, root base first."""
        decls: list[FieldDecl] = []
        for desc in reversed(self.base_chain(qualified_name)):
            decls.extend(desc.fields)
        return decls

    def field_decl(self, qualified_name: str, field_name: str) -> FieldDecl | None:
        for desc in self.base_chain(qualified_name):
            for decl in desc.fields:
                if decl.name == field_name:
                    return decl
        return None

    def method_set(self, qualified_name: str, method_name: str) -> OverloadSet | None:
        """Nearest declaring type wins: a derived set hides a base set."""
        for desc in self.base_chain(qualified_name):
            if method_name in desc.methods:
                return desc.methods[method_name]
        return None

    def enumerator_value(self, enum_name: str, enumerator: str) -> int | None:
        return self.enums.get(enum_name, {}).get(enumerator)

    def is_enum_value(self, enum_name: str, value: int) -> bool:
        return value in self.enums.get(enum_name, {}).values()

    # -- mutation support (used by registry.merge and the macro executor) -----

    def ensure_namespace(self, path: str) -> NamespaceNode:
        node = self.root
        walked = ""
        for part in split_path(path):
            walked = join_path(walked, part)
            if part not in node.namespaces:
                held = [c for c in node.categories_holding(part) if c != "namespace"]
                if held:
                    from .errors import ConflictError

                    raise ConflictError(f"{walked!r} already declared as a {held[0]}")
                node.namespaces[part] = NamespaceNode(part)
            node = node.namespaces[part]
        return node

    def declare_global(self, qualified: str, kind: ValueKind, initial: HostValue) -> GlobalDecl:
        """Macro support: register a global without bumping the version."""
        parts = split_path(qualified)
        node = self.namespace_at(".".join(parts[:-1]))
        name = parts[-1]
        held = node.categories_holding(name)
        if held:
            from .errors import ConflictError

            raise ConflictError(f"{qualified!r} already declared as a {held[0]}")
        decl = GlobalDecl(name, qualified, kind, initial)
        node.globals[name] = decl
        return decl
