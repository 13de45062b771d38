"""Datasets: JSONL records, loading/validation, and a synthetic generator.

Record schema (one JSON object per line):

    {"id": str, "question": str, "passage": str, "program": str,
     "answer": float (optional), ...}

``program`` is the flattened form.  Unknown fields ride along untouched so
externally produced files survive a load/save round trip.

The generator builds word problems whose reasoning plan is spelled out in
the question (one verb frame per sub-program) while the passage carries
distractor numbers.  It can target an exact maximum memory-dependency
distance (M-MDD): the plan weaves one or two named "tallies" (running
results) so the final step must reach back exactly the requested distance.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field

from .encoder import Tokenization, tokenize
from .executor import Bindings, ExecutionError, compare_answers, execute
from .formats import FormatSyntaxError, parse_flattened, serialize_flattened
from .ir import (
    Cache,
    ConstantTable,
    Num,
    OperatorRegistry,
    Program,
    SubProgram,
    canonicalize,
    default_constants,
    default_registry,
    resolve_nums,
    validate,
)
from .metrics import mdd_profile


class DataError(Exception):
    pass


@dataclass
class ExampleRecord:
    id: str
    question: str
    passage: str = ""
    program: str = ""
    answer: float | None = None
    extra: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        doc = {"id": self.id, "question": self.question, "passage": self.passage, "program": self.program}
        if self.answer is not None:
            doc["answer"] = self.answer
        doc.update(self.extra)
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "ExampleRecord":
        known = {"id", "question", "passage", "program", "answer"}
        return cls(
            id=str(doc["id"]),
            question=doc["question"],
            passage=doc.get("passage", ""),
            program=doc.get("program", ""),
            answer=float(doc["answer"]) if doc.get("answer") is not None else None,
            extra={k: v for k, v in doc.items() if k not in known},
        )


@dataclass
class BoundExample:
    """A record joined with its tokenization, resolved program and answer."""

    id: str
    record: ExampleRecord
    tokenization: Tokenization
    program: Program
    answer: float
    bindings: Bindings


@dataclass(frozen=True)
class LoadError:
    line: int
    id: str
    reason: str


@dataclass
class Dataset:
    records: list[ExampleRecord]
    bound: list[BoundExample]
    errors: list[LoadError]

    def __len__(self) -> int:
        return len(self.bound)


def bind_record(
    record: ExampleRecord,
    registry: OperatorRegistry,
    constants: ConstantTable,
    answer_tolerance: float = 1e-5,
) -> BoundExample:
    """Tokenize, parse, resolve numbers, validate and check the answer.
    Raises ValueError describing the first problem found."""
    tok = tokenize(record.question, record.passage)
    program = canonicalize(parse_flattened(record.program))
    if not len(program):
        raise ValueError("record has no program")
    program = resolve_nums(program, list(tok.num_values))
    for sp in program:
        for ref in sp.operands:
            if isinstance(ref, Num) and ref.index is None:
                raise ValueError(f"program number {ref.text} does not occur in the text")
    report = validate(program, registry, num_count=len(tok.num_values), constants=constants)
    if not report.ok:
        v = report.violations[0]
        raise ValueError(f"invalid program: {v.kind} at sub-program {v.sub_program}: {v.message}")
    bindings = Bindings(tuple(zip(tok.num_positions, tok.num_values)), constants)
    trace = execute(program, bindings, registry)  # ExecutionError propagates
    if record.answer is not None:
        if not compare_answers(trace.final, record.answer, answer_tolerance, answer_tolerance):
            raise ValueError(f"gold program computes {trace.final!r}, answer says {record.answer!r}")
        answer = record.answer
    else:
        answer = trace.final
    return BoundExample(record.id, record, tok, program, answer, bindings)


def load_jsonl(
    path,
    registry: OperatorRegistry | None = None,
    constants: ConstantTable | None = None,
) -> Dataset:
    """Load and validate a JSONL dataset.

    Malformed lines are collected as LoadErrors rather than raised, but if
    more than half the non-empty lines fail (or none survive) the file is
    considered bad and DataError is raised.
    """
    registry = registry or default_registry()
    constants = constants or default_constants()
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as err:
        raise DataError(f"cannot read {path}: {err}") from err
    records: list[ExampleRecord] = []
    bound: list[BoundExample] = []
    errors: list[LoadError] = []
    total = 0
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        total += 1
        rec_id = "?"
        try:
            doc = json.loads(line)
            rec = ExampleRecord.from_json(doc)
            rec_id = rec.id
            bound.append(bind_record(rec, registry, constants))
            records.append(rec)
        except (json.JSONDecodeError, KeyError, TypeError, ValueError, FormatSyntaxError, ExecutionError) as err:
            errors.append(LoadError(lineno, rec_id, str(err)))
    if total == 0:
        raise DataError(f"{path} holds no records")
    if len(errors) * 2 > total:
        raise DataError(f"{path}: {len(errors)} of {total} records are invalid; first: {errors[0].reason}")
    return Dataset(records, bound, errors)


def save_jsonl(records, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_json(), ensure_ascii=False) + "\n")


# --------------------------------------------------------------------------
# synthetic generator


@dataclass(frozen=True)
class SynthConfig:
    n_examples: int = 1000
    steps: tuple[tuple[int, float], ...] = ((1, 1.0), (2, 1.0), (3, 1.0), (4, 1.0))
    mmdd: tuple[tuple[int, float], ...] | None = None  # None: 0 for 1 step, else uniform 1..n-1
    operators: tuple[str, ...] = ("add", "subtract", "multiply", "divide")
    superlative_fraction: float = 0.0
    value_low: int = 2
    value_high: int = 99
    max_distractors: int = 3
    seed: int = 0

    def to_dict(self) -> dict:
        return {
            "n_examples": self.n_examples,
            "steps": {str(k): w for k, w in self.steps},
            "mmdd": None if self.mmdd is None else {str(k): w for k, w in self.mmdd},
            "operators": list(self.operators),
            "superlative_fraction": self.superlative_fraction,
            "value_low": self.value_low,
            "value_high": self.value_high,
            "max_distractors": self.max_distractors,
            "seed": self.seed,
        }


_FRAMES = {
    "add": [
        "combine {a} with {b}",
        "add {a} to {b}",
        "put together {a} and {b}",
        "sum {a} and {b}",
    ],
    "subtract": [
        "subtract {b} from {a}",
        "take {b} away from {a}",
        "reduce {a} by {b}",
        "deduct {b} from {a}",
    ],
    "multiply": [
        "multiply {a} by {b}",
        "scale {a} by a factor of {b}",
        "take {a} lots of {b}",
    ],
    "divide": [
        "divide {a} by {b}",
        "split {a} into {b} equal parts",
        "share {a} among {b} groups",
    ],
}

_SUPERLATIVE_FRAMES = {
    "biggest": ["find the largest of {list}", "pick the biggest among {list}", "which is greatest : {list}"],
    "smallest": ["find the smallest of {list}", "pick the least among {list}", "which is lowest : {list}"],
}

_NOUNS = ["apple", "coin", "marble", "ticket", "stone", "card", "bead", "shell", "token", "pearl"]
_CONNECTIVES = ["then", "next", "after that"]
_PLAIN_REFS = ["the result", "that total", "the running total"]
_TAILS = ["what do you get ?", "what is the final result ?", "what number comes out ?"]

_PASSAGE_TEMPLATES = [
    "the shop kept {v} boxes in the back room .",
    "a sign on the wall showed the number {v} .",
    "someone counted {v} chairs in the hall .",
    "an old ledger listed {v} entries .",
    "the bus passed {v} stations on its route .",
    "a jar on the shelf held {v} buttons .",
    "the notice mentioned {v} visitors last week .",
    "a receipt quoted {v} in small print .",
]


def _weighted_choice(rng: random.Random, pairs) -> int:
    total = sum(w for _, w in pairs)
    if total <= 0:
        raise DataError("weights must sum to a positive value")
    x = rng.random() * total
    for k, w in pairs:
        x -= w
        if x <= 0:
            return k
    return pairs[-1][0]


def _plan_shape(n: int, m: int) -> list[tuple[int | None, ...]]:
    """Cache wiring for an n-step plan with maximum dependency distance
    exactly m.  Entry i lists which producer (or None for a fresh value)
    fills each operand slot of step i.

    m == 0: independent steps.  m == 1: a single chain.  m >= 2: strand A
    is steps 0..p (p = n-1-m), strand B is steps p+1..n-2, and the final
    step joins A's last output (distance exactly m) with B's last.
    """
    if not 0 <= m <= n - 1:
        raise DataError(f"M-MDD {m} is not reachable with {n} steps")
    if m == 0:
        return [(None, None)] * n
    if m == 1:
        return [(None, None)] + [(i - 1, None) for i in range(1, n)]
    p = n - 1 - m
    shape: list[tuple[int | None, ...]] = []
    for i in range(n - 1):
        if i == 0 or i == p + 1:
            shape.append((None, None))
        else:
            shape.append((i - 1, None))
    shape.append((p, n - 2))
    return shape


@dataclass
class _Draft:
    question: str
    passage: str
    program: Program
    mmdd: int


def _render_arith(rng: random.Random, n: int, m: int, operators, values: list[int], n_distractors: int, distractors: list[int]) -> _Draft:
    shape = _plan_shape(n, m)
    p = n - 1 - m
    two_strands = m >= 2
    noun_a, noun_b = rng.sample(_NOUNS, 2)
    strand_noun = {}
    if two_strands:
        for i in range(0, p + 1):
            strand_noun[i] = noun_a
        for i in range(p + 1, n - 1):
            strand_noun[i] = noun_b
    vals = iter(values)
    subs: list[SubProgram] = []
    sentences: list[str] = []
    for i, slots in enumerate(shape):
        op = rng.choice(operators)
        frame = rng.choice(_FRAMES[op])
        operands = []
        fills = {}
        slot_names = ["a", "b"]
        order = rng.sample(slots, len(slots)) if len(set(slots)) == len(slots) else list(slots)
        for name, src in zip(slot_names, order):
            if src is None:
                v = next(vals)
                operands.append(Num(str(v)))
                fills[name] = str(v)
            else:
                operands.append(Cache(src))
                if two_strands and src in strand_noun:
                    fills[name] = f"the {strand_noun[src]} tally"
                else:
                    fills[name] = rng.choice(_PLAIN_REFS)
        subs.append(SubProgram(op, tuple(operands)))
        sentence = frame.format(**fills)
        if two_strands and i == 0:
            sentence = f"begin the {noun_a} tally : {sentence}"
        elif two_strands and i == p + 1:
            sentence = f"meanwhile begin the {noun_b} tally : {sentence}"
        elif two_strands and i == n - 1:
            sentence = f"finally {sentence}"
        elif i > 0:
            sentence = f"{rng.choice(_CONNECTIVES)} {sentence}"
        sentences.append(sentence)
    question = " , ".join(sentences) + " , " + rng.choice(_TAILS)
    passage = " ".join(
        rng.choice(_PASSAGE_TEMPLATES).format(v=d) for d in distractors[:n_distractors]
    )
    return _Draft(question, passage, Program(tuple(subs)), m)


def _render_superlative(rng: random.Random, ops, values: list[int], n_distractors: int, distractors: list[int]) -> _Draft:
    op = rng.choice(ops)
    frame = rng.choice(_SUPERLATIVE_FRAMES[op])
    listed = " , ".join(str(v) for v in values[:-1]) + f" and {values[-1]}"
    question = frame.format(list=listed) + " , " + rng.choice(_TAILS)
    passage = " ".join(rng.choice(_PASSAGE_TEMPLATES).format(v=d) for d in distractors[:n_distractors])
    program = Program((SubProgram(op, tuple(Num(str(v)) for v in values)),))
    return _Draft(question, passage, program, 0)


def _feasible(steps, mmdd) -> bool:
    if mmdd is None:
        return True
    for n, wn in steps:
        if wn <= 0:
            continue
        for m, wm in mmdd:
            if wm > 0 and 0 <= m <= n - 1:
                return True
    return False


def generate_synthetic(
    config: SynthConfig,
    registry: OperatorRegistry | None = None,
    constants: ConstantTable | None = None,
) -> list[ExampleRecord]:
    """Generate records that are guaranteed to parse, validate, execute,
    and hit their plan's exact M-MDD."""
    registry = registry or default_registry()
    constants = constants or default_constants()
    for op in config.operators:
        if op not in _FRAMES and op not in _SUPERLATIVE_FRAMES:
            raise DataError(f"no language frames for operator {op!r}")
    if not _feasible(config.steps, config.mmdd):
        raise DataError("no requested step count admits a requested M-MDD (need M-MDD <= steps - 1)")
    binary_ops = [op for op in config.operators if op in _FRAMES]
    superlative_ops = [op for op in config.operators if op in _SUPERLATIVE_FRAMES]
    if not binary_ops and config.superlative_fraction < 1.0:
        raise DataError("operator pool has no binary operators for arithmetic plans")
    if not superlative_ops and config.superlative_fraction > 0.0:
        raise DataError("superlative fraction requested but no superlative operators in the pool")
    rng = random.Random(config.seed)
    records: list[ExampleRecord] = []
    for i in range(config.n_examples):
        for attempt in range(200):
            try:
                draft = _draw(rng, config, binary_ops, superlative_ops)
                tok = tokenize(draft.question, draft.passage)
                program = resolve_nums(draft.program, list(tok.num_values))
                report = validate(program, registry, num_count=len(tok.num_values), constants=constants)
                if not report.ok:
                    raise ValueError(report.violations[0].message)
                bindings = Bindings(tuple(zip(tok.num_positions, tok.num_values)), constants)
                trace = execute(program, bindings, registry)
                if abs(trace.final) > 1e9:
                    raise ValueError("answer out of range")
                if mdd_profile(program).maximum != draft.mmdd:
                    raise ValueError("plan missed its target dependency distance")
                records.append(
                    ExampleRecord(
                        id=f"syn-{config.seed}-{i:06d}",
                        question=draft.question,
                        passage=draft.passage,
                        program=serialize_flattened(canonicalize(program)),
                        answer=trace.final,
                    )
                )
                break
            except (ExecutionError, ValueError):
                continue
        else:
            raise DataError(f"could not realize example {i} after 200 attempts")
    return records


def _draw(rng: random.Random, config: SynthConfig, binary_ops, superlative_ops) -> _Draft:
    pool = list(range(config.value_low, config.value_high + 1))
    superlative = rng.random() < config.superlative_fraction
    n_distractors = rng.randint(0, config.max_distractors)
    if superlative:
        k = rng.randint(2, 6)
        values = rng.sample(pool, k + n_distractors)
        return _render_superlative(rng, superlative_ops, values[:k], n_distractors, values[k:])
    n = _weighted_choice(rng, config.steps)
    if config.mmdd is None:
        m = 0 if n == 1 else rng.randint(1, n - 1)
    else:
        options = [(mm, w) for mm, w in config.mmdd if w > 0 and 0 <= mm <= n - 1]
        if not options:
            raise ValueError("no feasible M-MDD for drawn step count")
        m = _weighted_choice(rng, options)
    fresh_needed = sum(1 for slots in _plan_shape(n, m) for s in slots if s is None)
    values = rng.sample(pool, fresh_needed + n_distractors)
    return _render_arith(rng, n, m, binary_ops, values[:fresh_needed], n_distractors, values[fresh_needed:])


def check_mmdd(record: ExampleRecord) -> int:
    """Maximum memory-dependency distance of a record's gold program."""
    return mdd_profile(canonicalize(parse_flattened(record.program))).maximum
