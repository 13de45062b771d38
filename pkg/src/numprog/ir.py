"""Core program representation.

A program is an ordered sequence of sub-programs.  Each sub-program applies
one operator to a tuple of operand references.  Operand references are plain
values (frozen dataclasses), so whole programs compare by value and can be
used as dict keys or set members.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterator, Mapping, Sequence

NONE_NAME = "none"


# --------------------------------------------------------------------------
# operand references


@dataclass(frozen=True)
class Num:
    """A number mentioned in the problem text.

    ``text`` keeps the literal spelling ("80", "3.5") so serialization is
    exact.  ``index`` is the occurrence index among the detected numbers of
    the bound example; it is None until the program is bound to a text.
    """

    text: str
    index: int | None = None

    @property
    def value(self) -> float:
        return float(self.text)


@dataclass(frozen=True)
class Const:
    """A named constant from the constant table, e.g. const_2."""

    name: str


@dataclass(frozen=True)
class Cache:
    """Reference to the result of an earlier sub-program (#slot)."""

    slot: int


@dataclass(frozen=True)
class NoneTok:
    """The operand terminator symbol.

    It may appear as a trailing operand in raw decoder output or annotated
    data; canonicalize() removes it.
    """


NONE = NoneTok()

Operand = Num | Const | Cache | NoneTok


@dataclass(frozen=True)
class SubProgram:
    operator: str
    operands: tuple[Operand, ...] = ()

    def __post_init__(self) -> None:
        if not isinstance(self.operands, tuple):
            object.__setattr__(self, "operands", tuple(self.operands))


@dataclass(frozen=True)
class Program:
    sub_programs: tuple[SubProgram, ...] = ()

    def __post_init__(self) -> None:
        if not isinstance(self.sub_programs, tuple):
            object.__setattr__(self, "sub_programs", tuple(self.sub_programs))

    def __len__(self) -> int:
        return len(self.sub_programs)

    def __iter__(self) -> Iterator[SubProgram]:
        return iter(self.sub_programs)

    def __getitem__(self, i: int) -> SubProgram:
        return self.sub_programs[i]


# --------------------------------------------------------------------------
# operators


@dataclass(frozen=True)
class Arity:
    """Operand-count constraint: exactly ``minimum`` if not variadic,
    at least ``minimum`` otherwise."""

    minimum: int
    variadic: bool = False

    def admits(self, n: int) -> bool:
        return n >= self.minimum if self.variadic else n == self.minimum


def fixed(n: int) -> Arity:
    return Arity(n, variadic=False)


def variadic(minimum: int) -> Arity:
    return Arity(minimum, variadic=True)


KIND_ARITHMETIC = "arithmetic"
KIND_SUPERLATIVE = "superlative"
KIND_TERMINATOR = "terminator"

EOF_NAME = "EOF"


@dataclass(frozen=True)
class OperatorSpec:
    name: str
    arity: Arity
    kind: str = KIND_ARITHMETIC


class DuplicateOperatorError(ValueError):
    pass


@dataclass(frozen=True)
class OperatorRegistry:
    """Immutable name -> OperatorSpec table.  Exactly one terminator."""

    specs: tuple[OperatorSpec, ...]
    _by_name: Mapping[str, OperatorSpec] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        by_name: dict[str, OperatorSpec] = {}
        for spec in self.specs:
            if spec.name in by_name:
                raise DuplicateOperatorError(f"operator {spec.name!r} registered twice")
            by_name[spec.name] = spec
        n_term = sum(1 for s in self.specs if s.kind == KIND_TERMINATOR)
        if n_term != 1:
            raise ValueError(f"registry needs exactly one terminator operator, got {n_term}")
        object.__setattr__(self, "_by_name", by_name)

    def __contains__(self, name: str) -> bool:
        return name in self._by_name

    def __getitem__(self, name: str) -> OperatorSpec:
        return self._by_name[name]

    def get(self, name: str) -> OperatorSpec | None:
        return self._by_name.get(name)

    def names(self) -> tuple[str, ...]:
        return tuple(s.name for s in self.specs)

    @property
    def terminator(self) -> OperatorSpec:
        return next(s for s in self.specs if s.kind == KIND_TERMINATOR)


def register_operator(registry: OperatorRegistry, spec: OperatorSpec) -> OperatorRegistry:
    """Return a new registry extended with ``spec``.

    Duplicate names and second terminators are rejected; the input registry
    is never mutated.
    """
    if spec.name in registry:
        raise DuplicateOperatorError(f"operator {spec.name!r} registered twice")
    if spec.kind == KIND_TERMINATOR:
        raise ValueError("registry already has a terminator operator")
    return OperatorRegistry(registry.specs + (spec,))


def default_registry() -> OperatorRegistry:
    return OperatorRegistry(
        (
            OperatorSpec("add", fixed(2)),
            OperatorSpec("subtract", fixed(2)),
            OperatorSpec("multiply", fixed(2)),
            OperatorSpec("divide", fixed(2)),
            OperatorSpec("power", fixed(2)),
            OperatorSpec("sqrt", fixed(1)),
            OperatorSpec("floor", fixed(1)),
            OperatorSpec("exp", fixed(1)),
            OperatorSpec("log", fixed(1)),
            OperatorSpec("negate", fixed(1)),
            OperatorSpec("biggest", variadic(2), KIND_SUPERLATIVE),
            OperatorSpec("smallest", variadic(2), KIND_SUPERLATIVE),
            OperatorSpec(EOF_NAME, fixed(0), KIND_TERMINATOR),
        )
    )


# --------------------------------------------------------------------------
# constants


@dataclass(frozen=True)
class ConstantTable:
    """Named numeric constants.  ``none`` is a member symbol of the operand
    vocabulary but has no numeric value and is not stored here."""

    values: tuple[tuple[str, float], ...]

    def __contains__(self, name: str) -> bool:
        return any(n == name for n, _ in self.values)

    def value_of(self, name: str) -> float:
        for n, v in self.values:
            if n == name:
                return v
        raise KeyError(name)

    def names(self) -> tuple[str, ...]:
        return tuple(n for n, _ in self.values)


def default_constants() -> ConstantTable:
    return ConstantTable(
        (
            ("const_1", 1.0),
            ("const_2", 2.0),
            ("const_10", 10.0),
            ("const_100", 100.0),
            ("const_1000", 1000.0),
            ("const_pi", math.pi),
        )
    )


# --------------------------------------------------------------------------
# normalization and validation


def canonicalize(program: Program) -> Program:
    """Strip trailing ``none`` operands from every sub-program.

    Idempotent; the result is how programs are compared and exported.
    """
    subs = []
    for sp in program:
        ops = list(sp.operands)
        while ops and isinstance(ops[-1], NoneTok):
            ops.pop()
        subs.append(SubProgram(sp.operator, tuple(ops)) if len(ops) != len(sp.operands) else sp)
    return Program(tuple(subs))


@dataclass(frozen=True)
class Violation:
    kind: str
    sub_program: int
    message: str


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...]

    @property
    def ok(self) -> bool:
        return not self.violations


def validate(
    program: Program,
    registry: OperatorRegistry,
    num_count: int | None = None,
    constants: ConstantTable | None = None,
) -> ValidationReport:
    """Structural checks: operator names resolve, operand counts satisfy
    arity (after stripping trailing none), cache references point strictly
    backwards, Num indices are in range, constant names resolve.

    ``num_count=None`` skips the Num index range check (unbound programs);
    ``constants=None`` skips constant-name resolution.
    """
    bad: list[Violation] = []
    canon = canonicalize(program)
    for i, sp in enumerate(canon):
        spec = registry.get(sp.operator)
        if spec is None:
            bad.append(Violation("unknown-operator", i, f"unknown operator {sp.operator!r}"))
        else:
            if spec.kind == KIND_TERMINATOR:
                bad.append(Violation("terminator-in-program", i, f"{sp.operator} cannot appear as a sub-program"))
            elif not spec.arity.admits(len(sp.operands)):
                want = f">= {spec.arity.minimum}" if spec.arity.variadic else str(spec.arity.minimum)
                bad.append(
                    Violation(
                        "arity-mismatch",
                        i,
                        f"{sp.operator} takes {want} operands, got {len(sp.operands)}",
                    )
                )
        for ref in sp.operands:
            if isinstance(ref, Cache):
                if not (0 <= ref.slot < i):
                    bad.append(
                        Violation("forward-cache-reference", i, f"#{ref.slot} does not refer to an earlier sub-program")
                    )
            elif isinstance(ref, Num):
                if num_count is not None and ref.index is not None and not (0 <= ref.index < num_count):
                    bad.append(Violation("num-index-out-of-range", i, f"number index {ref.index} out of range"))
            elif isinstance(ref, Const):
                if constants is not None and ref.name not in constants:
                    bad.append(Violation("unknown-constant", i, f"unknown constant {ref.name!r}"))
            elif isinstance(ref, NoneTok):
                bad.append(Violation("interior-none", i, "none may only pad the tail of an operand list"))
    return ValidationReport(tuple(bad))


def resolve_nums(program: Program, values: Sequence[float]) -> Program:
    """Bind every Num operand to its first occurrence index in ``values``.

    Matching is by numeric value.  Nums whose value is absent keep
    index=None (the executor and validator will flag them later).
    """
    subs = []
    for sp in program:
        ops: list[Operand] = []
        for ref in sp.operands:
            if isinstance(ref, Num) and ref.index is None:
                idx = next((i for i, v in enumerate(values) if v == ref.value), None)
                ref = replace(ref, index=idx) if idx is not None else ref
            ops.append(ref)
        subs.append(SubProgram(sp.operator, tuple(ops)))
    return Program(tuple(subs))
