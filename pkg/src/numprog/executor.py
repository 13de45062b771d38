"""Program execution over IEEE-754 doubles.

Sub-programs run in order; each result lands in the cache slot with the same
index.  The value of a program is the value of its final sub-program.
Operator semantics live in a plain name -> callable table so registry
extensions can ship their own.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

from .ir import (
    Cache,
    Const,
    ConstantTable,
    KIND_TERMINATOR,
    NoneTok,
    Num,
    OperatorRegistry,
    Program,
    default_constants,
    default_registry,
)


class ExecutionError(Exception):
    """Base class; scoring treats any of these as an incorrect answer."""


class DivisionByZero(ExecutionError):
    pass


class DomainError(ExecutionError):
    pass


class UnresolvedOperand(ExecutionError):
    pass


@dataclass(frozen=True)
class Bindings:
    """Numbers detected in an example's text, in occurrence order, plus the
    constant table.  ``numbers`` pairs (token position, value)."""

    numbers: tuple[tuple[int, float], ...] = ()
    constants: ConstantTable = None  # type: ignore[assignment]

    def __post_init__(self) -> None:
        if self.constants is None:
            object.__setattr__(self, "constants", default_constants())
        positions = [p for p, _ in self.numbers]
        if positions != sorted(set(positions)):
            raise ValueError("number positions must be strictly increasing")
        if not all(math.isfinite(v) for _, v in self.numbers):
            raise ValueError("number values must be finite")

    @classmethod
    def from_values(cls, values: Sequence[float], constants: ConstantTable | None = None) -> "Bindings":
        return cls(tuple(enumerate(float(v) for v in values)), constants or default_constants())

    @property
    def values(self) -> tuple[float, ...]:
        return tuple(v for _, v in self.numbers)


@dataclass(frozen=True)
class ExecutionTrace:
    values: tuple[float, ...]

    @property
    def final(self) -> float:
        return self.values[-1]


def _divide(args: list[float]) -> float:
    if args[1] == 0.0:
        raise DivisionByZero("divide by zero")
    return args[0] / args[1]


def _power(args: list[float]) -> float:
    base, exponent = args
    if base == 0.0 and exponent < 0.0:
        raise DivisionByZero("zero raised to a negative power")
    try:
        return math.pow(base, exponent)
    except ValueError:
        # negative base with a non-integer exponent
        raise DomainError(f"power({base}, {exponent}) is not real") from None
    except OverflowError:
        return math.inf


def _sqrt(args: list[float]) -> float:
    if args[0] < 0.0:
        raise DomainError(f"sqrt of negative value {args[0]}")
    return math.sqrt(args[0])


def _log(args: list[float]) -> float:
    if args[0] <= 0.0:
        raise DomainError(f"log of non-positive value {args[0]}")
    return math.log(args[0])


def _exp(args: list[float]) -> float:
    try:
        return math.exp(args[0])
    except OverflowError:
        return math.inf


BUILTIN_SEMANTICS: dict[str, Callable[[list[float]], float]] = {
    "add": lambda a: a[0] + a[1],
    "subtract": lambda a: a[0] - a[1],
    "multiply": lambda a: a[0] * a[1],
    "divide": _divide,
    "power": _power,
    "sqrt": _sqrt,
    "floor": lambda a: float(math.floor(a[0])),
    "exp": _exp,
    "log": _log,
    "negate": lambda a: -a[0],
    "biggest": max,
    "smallest": min,
}


def _operand_value(ref, bindings: Bindings, cache: list[float], step: int) -> float:
    if isinstance(ref, Num):
        if ref.index is not None:
            if not (0 <= ref.index < len(bindings.numbers)):
                raise UnresolvedOperand(f"number index {ref.index} out of range")
            return bindings.numbers[ref.index][1]
        value = ref.value
        if bindings.numbers and value not in bindings.values:
            raise UnresolvedOperand(f"number {ref.text} not present in bindings")
        return value
    if isinstance(ref, Const):
        try:
            return bindings.constants.value_of(ref.name)
        except KeyError:
            raise UnresolvedOperand(f"unknown constant {ref.name!r}") from None
    if isinstance(ref, Cache):
        if not (0 <= ref.slot < step):
            raise UnresolvedOperand(f"#{ref.slot} not computed yet at step {step}")
        return cache[ref.slot]
    if isinstance(ref, NoneTok):
        raise UnresolvedOperand("none is not a value")
    raise UnresolvedOperand(f"unknown operand kind {type(ref).__name__}")


def execute(
    program: Program,
    bindings: Bindings | None = None,
    registry: OperatorRegistry | None = None,
    semantics: Mapping[str, Callable[[list[float]], float]] = BUILTIN_SEMANTICS,
) -> ExecutionTrace:
    """Run the program and return the per-sub-program value trace.

    Raises ExecutionError subclasses for division by zero, domain errors
    and unresolvable operands; never returns a partially filled trace.
    Overflow saturates to inf and propagates (non-finite answers simply
    score as incorrect downstream).
    """
    bindings = bindings if bindings is not None else Bindings.from_values(())
    registry = registry if registry is not None else default_registry()
    if not len(program):
        raise ExecutionError("empty program has no value")
    cache: list[float] = []
    for i, sp in enumerate(program):
        spec = registry.get(sp.operator)
        if spec is None:
            raise ExecutionError(f"unknown operator {sp.operator!r}")
        if spec.kind == KIND_TERMINATOR:
            raise ExecutionError(f"{sp.operator} cannot be executed")
        args = [
            _operand_value(ref, bindings, cache, i)
            for ref in sp.operands
            if not isinstance(ref, NoneTok)
        ]
        if not spec.arity.admits(len(args)):
            raise ExecutionError(f"{sp.operator} got {len(args)} operands")
        fn = semantics.get(sp.operator)
        if fn is None:
            raise ExecutionError(f"no semantics for operator {sp.operator!r}")
        cache.append(float(fn(args)))
    return ExecutionTrace(tuple(cache))


def compare_answers(predicted: float, gold: float, abs_tol: float = 1e-5, rel_tol: float = 1e-5) -> bool:
    """|predicted - gold| <= max(abs_tol, rel_tol * |gold|); non-finite
    predictions never match."""
    if not math.isfinite(predicted) or not math.isfinite(gold):
        return False
    return abs(predicted - gold) <= max(abs_tol, rel_tol * abs(gold))
