"""Scoring and corpus analysis.

Three accuracy notions:

* execution accuracy -- the predicted program's value matches the gold
  answer within tolerance (execution failures count as wrong, not crashes);
* program accuracy  -- exact symbolic match after canonicalization;
* operator accuracy -- the operator name sequence matches.

Plus M-MDD (maximum memory-dependency distance) profiling: for every cache
reference, the distance between the consuming and producing sub-program;
the program-level statistic is the maximum (0 when no cache is used).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

from .executor import Bindings, ExecutionError, compare_answers, execute
from .ir import (
    Cache,
    Const,
    NoneTok,
    Num,
    OperatorRegistry,
    Program,
    canonicalize,
    default_registry,
)


def _num_value(ref: Num, bindings: Bindings | None) -> float:
    if ref.index is not None and bindings is not None and 0 <= ref.index < len(bindings.numbers):
        return bindings.numbers[ref.index][1]
    return ref.value


def _operands_equal(a, b, bindings: Bindings | None, positional: bool) -> bool:
    if type(a) is not type(b):
        return False
    if isinstance(a, Num):
        if positional:
            return a.index == b.index
        return _num_value(a, bindings) == _num_value(b, bindings)
    if isinstance(a, Const):
        return a.name == b.name
    if isinstance(a, Cache):
        return a.slot == b.slot
    return isinstance(a, NoneTok)


def program_match(
    predicted: Program,
    gold: Program,
    bindings: Bindings | None = None,
    canonical: bool = True,
    positional: bool = False,
) -> bool:
    """Exact symbolic equality.

    By default both sides are canonicalized first and Num operands compare
    by resolved value; ``positional=True`` compares Num occurrence indices
    instead, ``canonical=False`` compares the raw operand lists.
    """
    p = canonicalize(predicted) if canonical else predicted
    g = canonicalize(gold) if canonical else gold
    if len(p) != len(g):
        return False
    for sp, sg in zip(p, g):
        if sp.operator != sg.operator or len(sp.operands) != len(sg.operands):
            return False
        if not all(_operands_equal(a, b, bindings, positional) for a, b in zip(sp.operands, sg.operands)):
            return False
    return True


def operator_match(predicted: Program, gold: Program) -> bool:
    p, g = canonicalize(predicted), canonicalize(gold)
    return [sp.operator for sp in p] == [sp.operator for sp in g]


def execution_match(
    predicted: Program,
    gold_answer: float,
    bindings: Bindings,
    registry: OperatorRegistry | None = None,
    abs_tol: float = 1e-5,
    rel_tol: float = 1e-5,
) -> bool:
    try:
        trace = execute(predicted, bindings, registry or default_registry())
    except ExecutionError:
        return False
    return compare_answers(trace.final, gold_answer, abs_tol, rel_tol)


# --------------------------------------------------------------------------
# memory-dependency distances


@dataclass(frozen=True)
class CacheUse:
    consumer: int
    producer: int

    @property
    def distance(self) -> int:
        return self.consumer - self.producer


@dataclass(frozen=True)
class MddProfile:
    uses: tuple[CacheUse, ...]

    @property
    def maximum(self) -> int:
        return max((u.distance for u in self.uses), default=0)

    @property
    def distances(self) -> tuple[int, ...]:
        return tuple(u.distance for u in self.uses)


def mdd_profile(program: Program) -> MddProfile:
    uses = []
    for i, sp in enumerate(program):
        for ref in sp.operands:
            if isinstance(ref, Cache):
                uses.append(CacheUse(consumer=i, producer=ref.slot))
    return MddProfile(tuple(uses))


# --------------------------------------------------------------------------
# corpus-level report


@dataclass
class Bucket:
    n: int = 0
    exec_correct: int = 0
    prog_correct: int = 0
    op_correct: int = 0

    def rates(self) -> dict:
        d = max(self.n, 1)
        return {
            "n": self.n,
            "exec_acc": self.exec_correct / d,
            "prog_acc": self.prog_correct / d,
            "op_acc": self.op_correct / d,
        }


@dataclass
class MetricsReport:
    overall: Bucket = field(default_factory=Bucket)
    by_steps: dict[int, Bucket] = field(default_factory=dict)
    by_band: dict[str, Bucket] = field(default_factory=dict)
    by_mmdd: dict[int, Bucket] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "overall": self.overall.rates(),
            "by_steps": {str(k): v.rates() for k, v in sorted(self.by_steps.items())},
            "by_band": {k: v.rates() for k, v in sorted(self.by_band.items())},
            "by_mmdd": {str(k): v.rates() for k, v in sorted(self.by_mmdd.items())},
        }


def _band(steps: int) -> str:
    return "1" if steps == 1 else "2" if steps == 2 else "3+"


def corpus_report(
    predictions: Sequence[Program],
    golds: Sequence[Program],
    gold_answers: Sequence[float],
    bindings_list: Sequence[Bindings],
    registry: OperatorRegistry | None = None,
    abs_tol: float = 1e-5,
    rel_tol: float = 1e-5,
) -> MetricsReport:
    """Score aligned prediction/gold corpora, bucketed by gold step count
    (exact and banded 1 / 2 / 3+) and by gold M-MDD."""
    lengths = {len(predictions), len(golds), len(gold_answers), len(bindings_list)}
    if lengths != {len(golds)}:
        raise ValueError("prediction, gold, answer and bindings lists must be aligned")
    if not golds:
        raise ValueError("empty corpus")
    registry = registry or default_registry()
    report = MetricsReport()
    for pred, gold, answer, bindings in zip(predictions, golds, gold_answers, bindings_list):
        gold_c = canonicalize(gold)
        steps = len(gold_c)
        mmdd = mdd_profile(gold_c).maximum
        exec_ok = execution_match(pred, answer, bindings, registry, abs_tol, rel_tol)
        prog_ok = program_match(pred, gold, bindings)
        op_ok = operator_match(pred, gold)
        for bucket in (
            report.overall,
            report.by_steps.setdefault(steps, Bucket()),
            report.by_band.setdefault(_band(steps), Bucket()),
            report.by_mmdd.setdefault(mmdd, Bucket()),
        ):
            bucket.n += 1
            bucket.exec_correct += exec_ok
            bucket.prog_correct += prog_ok
            bucket.op_correct += op_ok
    return report


# --------------------------------------------------------------------------
# operand overlap between corpora


@dataclass(frozen=True)
class OverlapReport:
    value_overlap: float
    program_coverage: float
    reference_values: int
    other_values: int

    def to_dict(self) -> dict:
        return {
            "value_overlap": self.value_overlap,
            "program_coverage": self.program_coverage,
            "reference_values": self.reference_values,
            "other_values": self.other_values,
        }


def _program_values(program: Program, bindings: Bindings) -> set[float]:
    out: set[float] = set()
    for sp in canonicalize(program):
        for ref in sp.operands:
            if isinstance(ref, Num):
                out.add(_num_value(ref, bindings))
            elif isinstance(ref, Const):
                try:
                    out.add(bindings.constants.value_of(ref.name))
                except KeyError:
                    pass
    return out


def operand_overlap(
    reference: Sequence[tuple[Program, Bindings]],
    other: Sequence[tuple[Program, Bindings]],
) -> OverlapReport:
    """How much of ``other``'s operand-value inventory appears in
    ``reference``.

    value_overlap: |values(other) ∩ values(reference)| / |values(other)|.
    program_coverage: fraction of ``other``'s programs whose every operand
    value occurs in the reference inventory.  Cache references carry no
    value and are ignored.  A corpus with no valued operands is vacuously
    covered (overlap 1.0).
    """
    if not reference or not other:
        raise ValueError("empty corpus")
    ref_values: set[float] = set()
    for prog, bnd in reference:
        ref_values |= _program_values(prog, bnd)
    other_sets = [_program_values(prog, bnd) for prog, bnd in other]
    other_values = set().union(*other_sets)
    if not other_values:
        return OverlapReport(1.0, 1.0, len(ref_values), 0)
    covered_programs = sum(1 for s in other_sets if s <= ref_values)
    return OverlapReport(
        value_overlap=len(other_values & ref_values) / len(other_values),
        program_coverage=covered_programs / len(other_sets),
        reference_values=len(ref_values),
        other_values=len(other_values),
    )
