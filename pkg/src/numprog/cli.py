"""Command line interface.

One executable, subcommand style.  Options resolve in three layers: hard
defaults, then a JSON config file (``--config``), then explicit flags.
Every run reports the resolved option set -- embedded in the single JSON
document in ``--json`` mode, as a ``config:`` line on stderr otherwise --
so any result can be reproduced from its own output.

Exit codes: 0 success, 1 usage, 2 bad data, 3 numeric failure.  In JSON
mode failures print one machine-readable line ``{"error": {...}}``.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from collections import Counter

import numpy as np

from .autodiff import check_gradients
from . import autodiff as ad
from .data import (
    DataError,
    SynthConfig,
    generate_synthetic,
    load_jsonl,
    save_jsonl,
)
from .decoder import DecoderConfig, ProgramDecoder
from .encoder import GruEncoder, build_vocab
from .executor import Bindings, ExecutionError, execute
from .formats import PARSERS, FormatKind, FormatSyntaxError, export
from .ir import (
    Arity,
    Cache,
    Const,
    ConstantTable,
    NoneTok,
    Num,
    OperatorRegistry,
    OperatorSpec,
    Program,
    default_constants,
    default_registry,
    register_operator,
    resolve_nums,
    validate,
)
from .metrics import corpus_report, mdd_profile, operand_overlap
from .training import (
    CheckpointError,
    TrainConfig,
    evaluate,
    load_checkpoint,
)
from .training import train as run_training

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class CliError(Exception):
    kind = "usage"
    code = EXIT_USAGE


class UsageError(CliError):
    pass


class InputError(CliError):
    kind = "data"
    code = EXIT_DATA


class _Parser(argparse.ArgumentParser):
    """argparse that raises instead of sys.exit'ing, so ``main`` can map
    usage problems onto exit code 1 (and JSON error records)."""

    def error(self, message):
        raise UsageError(message)


# --------------------------------------------------------------------------
# flag value parsing


def _parse_weighted(text: str, flag: str) -> tuple[tuple[int, float], ...]:
    """``"2,3,4"`` or ``"2:1,3:2"`` -> ((2, 1.0), (3, 2.0), ...)."""
    out = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        try:
            if ":" in item:
                k, w = item.split(":", 1)
                out.append((int(k), float(w)))
            else:
                out.append((int(item), 1.0))
        except ValueError:
            raise UsageError(f"{flag} entry {item!r} is not N or N:WEIGHT") from None
    if not out:
        raise UsageError(f"{flag} is empty")
    return tuple(out)


def _parse_numbers(text: str) -> list[float]:
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"--numbers {text!r} is not a comma-separated list of numbers") from None
    if not values:
        raise UsageError("--numbers is empty")
    return values


def _load_registry_file(path: str | None) -> tuple[OperatorRegistry, ConstantTable]:
    """Defaults plus the extensions in a JSON file:

        {"operators": [{"name": "power", "min": 2, "variadic": false}],
         "constants": {"const_pi": 3.14159}}

    Extended operators parse, validate and train; they execute only if the
    built-in semantics table knows them.
    """
    registry = default_registry()
    constants = default_constants()
    if path is None:
        return registry, constants
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as err:
        raise InputError(f"cannot read registry file {path}: {err}") from err
    if not isinstance(doc, dict):
        raise InputError(f"registry file {path} must hold a JSON object")
    for spec in doc.get("operators", []):
        try:
            registry = register_operator(
                registry,
                OperatorSpec(
                    spec["name"],
                    Arity(int(spec.get("min", 2)), bool(spec.get("variadic", False))),
                    spec.get("kind", "arithmetic"),
                ),
            )
        except (KeyError, TypeError, ValueError) as err:
            raise InputError(f"bad operator entry {spec!r}: {err}") from err
    extra = doc.get("constants", {})
    pairs = extra.items() if isinstance(extra, dict) else extra
    try:
        constants = ConstantTable(constants.values + tuple((str(n), float(v)) for n, v in pairs))
    except (TypeError, ValueError) as err:
        raise InputError(f"bad constants entry in {path}: {err}") from err
    return registry, constants


def _operand_text(ref) -> str:
    if isinstance(ref, Num):
        return ref.text
    if isinstance(ref, Const):
        return ref.name
    if isinstance(ref, Cache):
        return f"#{ref.slot}"
    if isinstance(ref, NoneTok):
        return "none"
    return str(ref)


# --------------------------------------------------------------------------
# subcommands: each returns (result payload, exit code)


def cmd_gen_data(args, registry, constants):
    cfg = SynthConfig(
        n_examples=args.n,
        steps=_parse_weighted(args.steps, "--steps"),
        mmdd=None if args.mmdd is None else _parse_weighted(args.mmdd, "--mmdd"),
        operators=tuple(s.strip() for s in args.operators.split(",") if s.strip()),
        superlative_fraction=args.superlative_fraction,
        value_low=args.value_low,
        value_high=args.value_high,
        max_distractors=args.max_distractors,
        seed=args.seed,
    )
    records = generate_synthetic(cfg, registry, constants)
    save_jsonl(records, args.out)
    steps_hist = Counter()
    mmdd_hist = Counter()
    from .data import check_mmdd
    from .formats import parse_flattened

    for rec in records:
        steps_hist[len(parse_flattened(rec.program))] += 1
        mmdd_hist[check_mmdd(rec)] += 1
    return {
        "out": args.out,
        "n": len(records),
        "by_steps_count": {str(k): v for k, v in sorted(steps_hist.items())},
        "by_mmdd_count": {str(k): v for k, v in sorted(mmdd_hist.items())},
    }, EXIT_OK


def cmd_train(args, registry, constants):
    train_ds = load_jsonl(args.train, registry, constants)
    dev_examples = []
    dev_skipped = 0
    if args.dev:
        dev_ds = load_jsonl(args.dev, registry, constants)
        dev_examples = dev_ds.bound
        dev_skipped = len(dev_ds.errors)
    cfg = TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        lr=args.lr,
        halve_every=args.halve_every,
        weight_decay=args.weight_decay,
        seed=args.seed,
        max_vocab=args.max_vocab,
        max_seq_len=args.max_seq_len,
        hidden=args.hidden,
        gru_layers=args.gru_layers,
        cache_slots=args.cache_slots,
        dropout=args.dropout,
        max_sub_programs=args.max_sub_programs,
        max_operands=args.max_operands,
        arity_masking=not args.no_arity_masking,
        memory_register=not args.no_memory_register,
        commit_last_real_operand=args.commit_last_real_operand,
        reset_state_per_subprogram=args.reset_state_per_subprogram,
        early_stop_acc=args.early_stop_acc,
        eval_every=args.eval_every,
    )
    result = run_training(
        train_ds.bound,
        dev_examples,
        cfg,
        registry,
        constants,
        out_dir=args.out,
        quiet=args.quiet or args.json,
    )
    return {
        "checkpoint": result.checkpoint_dir,
        "examples": {"train": len(train_ds.bound), "train_skipped": len(train_ds.errors), "dev": len(dev_examples), "dev_skipped": dev_skipped},
        "best_epoch": result.best_epoch,
        "best_dev": result.best_dev,
        "epochs_run": len(result.history),
        "history": result.history,
    }, EXIT_OK


def cmd_eval(args, registry, constants):
    model = load_checkpoint(args.ckpt)
    ds = load_jsonl(args.data, model.registry, model.constants)
    report, _ = evaluate(model, ds.bound)
    doc = report.to_dict()
    doc["n_skipped"] = len(ds.errors)
    if args.report:
        with open(args.report, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=1)
        doc["report"] = args.report
    return doc, EXIT_OK


def cmd_exec(args, registry, constants):
    if args.program and args.data:
        raise UsageError("--program and --data are mutually exclusive")
    if args.program is None and args.data is None:
        raise UsageError("one of --program or --data is required")
    if args.program is not None:
        kind = FormatKind(args.format)
        program = PARSERS[kind](args.program)
        values = _parse_numbers(args.numbers) if args.numbers else []
        program = resolve_nums(program, values)
        bindings = Bindings.from_values(values, constants)
    else:
        if args.id is None:
            raise UsageError("--data needs --id to pick a record")
        ds = load_jsonl(args.data, registry, constants)
        match = [ex for ex in ds.bound if ex.id == args.id]
        if not match:
            raise InputError(f"no loadable record with id {args.id!r} in {args.data}")
        program, bindings = match[0].program, match[0].bindings
    report = validate(program, registry, num_count=len(bindings.values), constants=constants)
    if not report.ok:
        v = report.violations[0]
        raise InputError(f"invalid program: {v.kind} at sub-program {v.sub_program}: {v.message}")
    trace = execute(program, bindings, registry)
    steps = [
        {
            "index": i,
            "operator": sp.operator,
            "operands": [_operand_text(r) for r in sp.operands],
            "value": trace.values[i],
        }
        for i, sp in enumerate(program)
    ]
    return {"steps": steps, "final": trace.final}, EXIT_OK


def cmd_convert(args, registry, constants):
    src = FormatKind(args.src)
    dst = FormatKind(args.to)
    if src not in PARSERS:
        raise UsageError(f"--from {src.value} is not parseable (only flattened and nested are)")
    program = PARSERS[src](args.program)
    report = validate(program, registry, constants=constants)
    if not report.ok:
        v = report.violations[0]
        raise InputError(f"invalid program: {v.kind} at sub-program {v.sub_program}: {v.message}")
    return {"from": src.value, "to": dst.value, "program": export(program, dst, registry)}, EXIT_OK


def cmd_analyze(args, registry, constants):
    ds = load_jsonl(args.data, registry, constants)
    steps_hist = Counter(len(ex.program) for ex in ds.bound)
    mmdd_hist = Counter(mdd_profile(ex.program).maximum for ex in ds.bound)
    op_hist = Counter(sp.operator for ex in ds.bound for sp in ex.program)
    result = {
        "data": args.data,
        "n": len(ds.bound),
        "n_skipped": len(ds.errors),
        "by_steps_count": {str(k): v for k, v in sorted(steps_hist.items())},
        "by_mmdd_count": {str(k): v for k, v in sorted(mmdd_hist.items())},
        "operator_counts": dict(sorted(op_hist.items())),
    }
    if args.ref:
        ref = load_jsonl(args.ref, registry, constants)
        overlap = operand_overlap(
            [(ex.program, ex.bindings) for ex in ref.bound],
            [(ex.program, ex.bindings) for ex in ds.bound],
        )
        result["overlap"] = overlap.to_dict()
        result["overlap"]["reference"] = args.ref
    if args.pred:
        from .formats import parse_flattened

        by_id = {}
        try:
            with open(args.pred, encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        doc = json.loads(line)
                        by_id[str(doc["id"])] = doc["program"]
        except (OSError, json.JSONDecodeError, KeyError, TypeError) as err:
            raise InputError(f"cannot read predictions {args.pred}: {err}") from err
        missing = [ex.id for ex in ds.bound if ex.id not in by_id]
        if missing:
            raise InputError(f"predictions missing for {len(missing)} records (first: {missing[0]!r})")
        unparsed = 0
        predictions = []
        for ex in ds.bound:
            try:
                pred = parse_flattened(by_id[ex.id])
                pred = resolve_nums(pred, list(ex.tokenization.num_values))
            except FormatSyntaxError:
                pred = Program(())
                unparsed += 1
            predictions.append(pred)
        report = corpus_report(
            predictions,
            [ex.program for ex in ds.bound],
            [ex.answer for ex in ds.bound],
            [ex.bindings for ex in ds.bound],
            registry,
        )
        result["metrics"] = report.to_dict()
        result["metrics"]["unparsed_predictions"] = unparsed
    if args.csv:
        _write_csv(args.csv, result)
        result["csv"] = args.csv
    return result, EXIT_OK


def _write_csv(path: str, result: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        if "metrics" in result:
            fh.write("steps,n,exec_acc,prog_acc,op_acc\n")
            for k, row in result["metrics"]["by_steps"].items():
                fh.write(f"{k},{row['n']},{row['exec_acc']:.6f},{row['prog_acc']:.6f},{row['op_acc']:.6f}\n")
        else:
            fh.write("steps,count\n")
            for k, v in result["by_steps_count"].items():
                fh.write(f"{k},{v}\n")


def cmd_gradcheck(args, registry, constants):
    from .data import bind_record

    cfg = SynthConfig(
        n_examples=1,
        steps=((args.steps, 1.0),),
        operators=("add", "subtract"),
        max_distractors=0,
        seed=args.seed,
    )
    ex = bind_record(generate_synthetic(cfg, registry, constants)[0], registry, constants)
    vocab = build_vocab([ex.tokenization.tokens])
    encoder = GruEncoder(vocab, hidden=args.h, seed=args.seed, dropout=0.0, dtype=np.float64)
    model = ProgramDecoder(
        encoder,
        registry,
        constants,
        DecoderConfig(hidden=args.h, gru_layers=args.gru_layers, dropout=0.0),
        seed=args.seed,
    )

    def loss():
        op_loss, oe_loss, _, _ = model.teacher_forced_loss(ex.tokenization, ex.program)
        return ad.add(op_loss, oe_loss)

    errors = check_gradients(loss, model.params, eps=args.eps)
    max_err = max(errors.values())
    ok = max_err < args.tolerance
    result = {
        "h": args.h,
        "sub_programs": args.steps,
        "parameters": model.param_count(),
        "eps": args.eps,
        "tolerance": args.tolerance,
        "max_relative_error": float(max_err),
        "per_parameter": {k: float(v) for k, v in sorted(errors.items())},
        "ok": ok,
    }
    return result, EXIT_OK if ok else EXIT_NUMERIC


_DISPATCH = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "exec": cmd_exec,
    "convert": cmd_convert,
    "analyze": cmd_analyze,
    "gradcheck": cmd_gradcheck,
}


# --------------------------------------------------------------------------
# text rendering


def _fmt_bucket_table(doc: dict) -> list[str]:
    lines = [f"{'bucket':<12}{'n':>6}{'exec':>8}{'prog':>8}{'op':>8}"]

    def row(name, b):
        lines.append(f"{name:<12}{b['n']:>6}{b['exec_acc']:>8.3f}{b['prog_acc']:>8.3f}{b['op_acc']:>8.3f}")

    row("overall", doc["overall"])
    for k, b in doc["by_steps"].items():
        row(f"steps={k}", b)
    for k, b in doc["by_band"].items():
        row(f"band={k}", b)
    for k, b in doc["by_mmdd"].items():
        row(f"mmdd={k}", b)
    return lines


def _render(command: str, result: dict) -> list[str]:
    if command == "gen-data":
        lines = [f"wrote {result['n']} records to {result['out']}"]
        lines.append("steps: " + " ".join(f"{k}:{v}" for k, v in result["by_steps_count"].items()))
        lines.append("mmdd:  " + " ".join(f"{k}:{v}" for k, v in result["by_mmdd_count"].items()))
        return lines
    if command == "train":
        lines = []
        best = result["best_dev"]
        if result["best_epoch"] >= 0:
            lines.append(
                f"best epoch {result['best_epoch']}: prog_acc {best['prog_acc']:.4f} exec_acc {best['exec_acc']:.4f}"
            )
        else:
            lines.append(f"trained {result['epochs_run']} epochs (no dev set)")
        if result["checkpoint"]:
            lines.append(f"checkpoint: {result['checkpoint']}")
        return lines
    if command == "eval":
        lines = _fmt_bucket_table(result)
        if result.get("n_skipped"):
            lines.append(f"skipped {result['n_skipped']} unloadable records")
        if "report" in result:
            lines.append(f"report: {result['report']}")
        return lines
    if command == "exec":
        lines = [json.dumps(step) for step in result["steps"]]
        lines.append(json.dumps({"final": result["final"]}))
        return lines
    if command == "convert":
        return [result["program"]]
    if command == "analyze":
        lines = [
            f"{result['n']} records ({result['n_skipped']} skipped)",
            "steps: " + " ".join(f"{k}:{v}" for k, v in result["by_steps_count"].items()),
            "mmdd:  " + " ".join(f"{k}:{v}" for k, v in result["by_mmdd_count"].items()),
            "operators: " + " ".join(f"{k}:{v}" for k, v in result["operator_counts"].items()),
        ]
        if "overlap" in result:
            o = result["overlap"]
            lines.append(
                f"overlap vs {o['reference']}: value_overlap {o['value_overlap']:.4f} program_coverage {o['program_coverage']:.4f}"
            )
        if "metrics" in result:
            lines.extend(_fmt_bucket_table(result["metrics"]))
        return lines
    if command == "gradcheck":
        status = "ok" if result["ok"] else "FAILED"
        return [
            f"max relative error {result['max_relative_error']:.3e} over {result['parameters']} parameters "
            f"(tolerance {result['tolerance']:g}): {status}"
        ]
    return [json.dumps(result)]


# --------------------------------------------------------------------------
# parser assembly


def _add_global_options(p: argparse.ArgumentParser, *, suppress: bool) -> None:
    """Attach the global flags; they are accepted before and after the
    subcommand.  The per-subcommand copies default to SUPPRESS so they only
    touch the namespace when given explicitly — otherwise the subparser
    would overwrite values already parsed from the front position."""
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p.add_argument("--seed", type=int, default=d(0), help="global RNG seed")
    p.add_argument("--config", default=d(None), help="JSON file of option defaults")
    p.add_argument("--registry", default=d(None), help="JSON file of extra operators/constants")
    p.add_argument("--quiet", action="store_true", default=d(False), help="suppress progress and the config echo")
    p.add_argument("--json", action="store_true", default=d(False), help="emit one JSON document on stdout")
    p.add_argument("--threads", type=int, default=d(None), help="cap numeric-backend worker threads")


def _build_parser() -> tuple[argparse.ArgumentParser, dict]:
    parser = _Parser(prog="numprog", description="Numerical-reasoning program toolkit.")
    _add_global_options(parser, suppress=False)
    sub = parser.add_subparsers(dest="command")
    subs: dict[str, argparse.ArgumentParser] = {}

    def command(name: str, help: str) -> argparse.ArgumentParser:
        p = subs[name] = sub.add_parser(name, help=help)
        _add_global_options(p, suppress=True)
        return p

    p = command("gen-data", "write a synthetic JSONL dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--steps", default="1,2,3,4", help="step counts, N or N:WEIGHT, comma-separated")
    p.add_argument("--mmdd", default=None, help="exact max dependency distances, N or N:WEIGHT")
    p.add_argument("--operators", default="add,subtract,multiply,divide")
    p.add_argument("--superlative-fraction", type=float, default=0.0)
    p.add_argument("--value-low", type=int, default=2)
    p.add_argument("--value-high", type=int, default=99)
    p.add_argument("--max-distractors", type=int, default=3)

    p = command("train", "train a model on JSONL data")
    p.add_argument("--train", required=True)
    p.add_argument("--dev", default=None)
    p.add_argument("--out", default=None, help="directory for checkpoint + train_log.jsonl")
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch-size", type=int, default=10)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--halve-every", type=int, default=10)
    p.add_argument("--weight-decay", type=float, default=1e-5)
    p.add_argument("--max-vocab", type=int, default=300)
    p.add_argument("--max-seq-len", type=int, default=256)
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--gru-layers", type=int, default=2)
    p.add_argument("--cache-slots", type=int, default=16)
    p.add_argument("--dropout", type=float, default=0.1)
    p.add_argument("--max-sub-programs", type=int, default=16)
    p.add_argument("--max-operands", type=int, default=8)
    p.add_argument("--no-arity-masking", action="store_true")
    p.add_argument("--no-memory-register", action="store_true")
    p.add_argument("--commit-last-real-operand", action="store_true")
    p.add_argument("--reset-state-per-subprogram", action="store_true")
    p.add_argument("--early-stop-acc", type=float, default=None)
    p.add_argument("--eval-every", type=int, default=1)

    p = command("eval", "score a checkpoint on JSONL data")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--report", default=None, help="also write the report JSON here")

    p = command("exec", "run a program and print its trace")
    p.add_argument("--program", default=None)
    p.add_argument("--format", choices=["flattened", "nested"], default="flattened")
    p.add_argument("--numbers", default=None, help="comma-separated values for number operands")
    p.add_argument("--data", default=None, help="take program + numbers from this JSONL file")
    p.add_argument("--id", default=None, help="record id inside --data")

    p = command("convert", "translate between program formats")
    p.add_argument("--from", dest="src", required=True, choices=["flattened", "nested"])
    p.add_argument("--to", required=True, choices=["flattened", "nested", "preorder", "sequential"])
    p.add_argument("--program", required=True)

    p = command("analyze", "corpus statistics, overlap, metrics")
    p.add_argument("--data", required=True)
    p.add_argument("--pred", default=None, help="JSONL of {id, program} predictions")
    p.add_argument("--ref", default=None, help="reference JSONL for operand-overlap rate")
    p.add_argument("--csv", default=None, help="write bucket curves as CSV")

    p = command("gradcheck", "finite-difference gradient audit")
    p.add_argument("--h", type=int, default=8, help="hidden size of the audited model")
    p.add_argument("--steps", type=int, default=2, help="sub-programs in the probe example")
    p.add_argument("--gru-layers", type=int, default=2)
    p.add_argument("--eps", type=float, default=1e-4)
    p.add_argument("--tolerance", type=float, default=1e-4)

    return parser, subs


def _apply_config(parser, subs, args, argv):
    """Layer a JSON config file under the explicit flags and re-parse."""
    try:
        with open(args.config, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as err:
        raise InputError(f"cannot read config {args.config}: {err}") from err
    if not isinstance(doc, dict):
        raise InputError(f"config {args.config} must hold a JSON object")
    flat = {k: v for k, v in doc.items() if not isinstance(v, dict)}
    section = doc.get(args.command, {})
    merged = {k.replace("-", "_"): v for k, v in {**flat, **section}.items()}
    if "config" in merged:
        raise UsageError("config files cannot set --config")
    global_dests = {a.dest for a in parser._actions}
    sub_dests = {a.dest for a in subs[args.command]._actions}
    for key in merged:
        if key not in global_dests | sub_dests:
            raise UsageError(f"config key {key!r} is not an option of {args.command}")
    parser.set_defaults(**{k: v for k, v in merged.items() if k in global_dests})
    # global keys stay on the root parser: setting them on the subcommand
    # would replace its SUPPRESS default and shadow flags given up front
    subs[args.command].set_defaults(**{k: v for k, v in merged.items() if k in sub_dests and k not in global_dests})
    return parser.parse_args(argv)


def _resolved_config(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k != "command"}


def _fail(kind: str, message: str, code: int, json_mode: bool) -> int:
    if json_mode:
        print(json.dumps({"error": {"kind": kind, "message": message, "exit_code": code}}))
    else:
        print(f"error: {message}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    json_mode = "--json" in argv
    try:
        parser, subs = _build_parser()
        try:
            args = parser.parse_args(argv)
        except SystemExit as err:  # --help
            return EXIT_OK if err.code in (0, None) else EXIT_USAGE
        if args.command is None:
            raise UsageError("a subcommand is required (see --help)")
        if args.config:
            args = _apply_config(parser, subs, args, argv)
        json_mode = args.json
        if args.threads is not None:
            if args.threads < 1:
                raise UsageError("--threads must be positive")
            for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
                os.environ[var] = str(args.threads)
        registry, constants = _load_registry_file(args.registry)
        resolved = _resolved_config(args)
        if not args.json and not args.quiet:
            print(f"config: {json.dumps(resolved, sort_keys=True)}", file=sys.stderr)
        result, code = _DISPATCH[args.command](args, registry, constants)
        if args.json:
            print(json.dumps({"command": args.command, "config": resolved, **result}))
        else:
            for line in _render(args.command, result):
                print(line)
        return code
    except CliError as err:
        return _fail(err.kind, str(err), err.code, json_mode)
    except (DataError, FormatSyntaxError, CheckpointError) as err:
        return _fail("data", str(err), EXIT_DATA, json_mode)
    except ExecutionError as err:
        return _fail("numeric", str(err), EXIT_NUMERIC, json_mode)
    except RuntimeError as err:
        return _fail("numeric", str(err), EXIT_NUMERIC, json_mode)
    except (ValueError, OSError) as err:
        return _fail("data", str(err), EXIT_DATA, json_mode)


if __name__ == "__main__":
    sys.exit(main())
