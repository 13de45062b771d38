"""Training loop, evaluation, checkpoints.

Teacher-forced maximum likelihood: per example the loss is the sum of
operator NLL and operand NLL along the gold decode path.  Gradients are
averaged over a mini-batch and applied with Adam (decoupled weight decay);
the learning rate halves every ``halve_every`` epochs.  The checkpoint with
the best dev program accuracy wins.

Everything is deterministic for a fixed seed: example order, dropout masks
(counter-keyed), parameter init, and greedy evaluation.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import random
import time
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import AdamState, adam_step, backward
from .data import BoundExample
from .decoder import DecoderConfig, DropPlan, ProgramDecoder
from .encoder import GruEncoder, Vocabulary, build_vocab
from .ir import (
    Arity,
    ConstantTable,
    OperatorRegistry,
    OperatorSpec,
    Program,
    default_constants,
    default_registry,
)
from .metrics import MetricsReport, corpus_report

CHECKPOINT_VERSION = 1


class CheckpointError(Exception):
    pass


class ChecksumError(CheckpointError):
    pass


class VersionError(CheckpointError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 10
    lr: float = 1e-3
    halve_every: int = 10
    weight_decay: float = 1e-5
    clip_norm: float | None = 5.0
    seed: int = 0
    max_vocab: int = 300
    max_seq_len: int = 256
    hidden: int = 64
    gru_layers: int = 2
    cache_slots: int = 16
    dropout: float = 0.1
    max_sub_programs: int = 16
    max_operands: int = 8
    arity_masking: bool = True
    memory_register: bool = True
    commit_last_real_operand: bool = False
    reset_state_per_subprogram: bool = False
    early_stop_acc: float | None = None
    eval_every: int = 1

    def decoder_config(self) -> DecoderConfig:
        return DecoderConfig(
            hidden=self.hidden,
            gru_layers=self.gru_layers,
            cache_slots=self.cache_slots,
            dropout=self.dropout,
            max_sub_programs=self.max_sub_programs,
            max_operands=self.max_operands,
            arity_masking=self.arity_masking,
            memory_register=self.memory_register,
            commit_last_real_operand=self.commit_last_real_operand,
            reset_state_per_subprogram=self.reset_state_per_subprogram,
        )


def build_model(
    vocab: Vocabulary,
    config: TrainConfig,
    registry: OperatorRegistry | None = None,
    constants: ConstantTable | None = None,
) -> ProgramDecoder:
    registry = registry or default_registry()
    constants = constants or default_constants()
    encoder = GruEncoder(
        vocab,
        hidden=config.hidden,
        seed=config.seed,
        dropout=config.dropout,
        max_len=config.max_seq_len,
    )
    return ProgramDecoder(encoder, registry, constants, config.decoder_config(), seed=config.seed)


def schedule_lr(base_lr: float, epoch: int, halve_every: int) -> float:
    return base_lr * 0.5 ** (epoch // halve_every)


@dataclass
class TrainResult:
    model: ProgramDecoder
    history: list[dict]
    best_epoch: int
    best_dev: dict
    checkpoint_dir: str | None


def evaluate(model: ProgramDecoder, examples: list[BoundExample]) -> tuple[MetricsReport, list[Program]]:
    """Greedy-decode every example and score against the gold corpus."""
    if not examples:
        raise ValueError("empty evaluation set")
    predictions = [model.decode(ex.tokenization)[0] for ex in examples]
    report = corpus_report(
        predictions,
        [ex.program for ex in examples],
        [ex.answer for ex in examples],
        [ex.bindings for ex in examples],
        model.registry,
    )
    return report, predictions


def train(
    train_set: list[BoundExample],
    dev_set: list[BoundExample],
    config: TrainConfig = TrainConfig(),
    registry: OperatorRegistry | None = None,
    constants: ConstantTable | None = None,
    out_dir: str | None = None,
    quiet: bool = False,
) -> TrainResult:
    if not train_set:
        raise ValueError("empty training set")
    registry = registry or default_registry()
    constants = constants or default_constants()
    vocab = build_vocab((ex.tokenization.tokens for ex in train_set), max_size=config.max_vocab)
    model = build_model(vocab, config, registry, constants)
    params = model.params
    adam = AdamState()
    history: list[dict] = []
    best = {"epoch": -1, "prog_acc": -1.0, "exec_acc": 0.0}
    best_weights: dict[str, np.ndarray] | None = None
    grad_acc: dict[str, np.ndarray] = {}
    acc_count = 0
    global_step = 0

    def flush(lr: float) -> None:
        nonlocal acc_count
        if acc_count == 0:
            return
        grads = {k: g / acc_count for k, g in grad_acc.items()}
        if config.clip_norm:
            total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
            if total > config.clip_norm:
                scale = config.clip_norm / total
                for g in grads.values():
                    g *= scale
        adam_step(params, grads, adam, lr=lr, weight_decay=config.weight_decay)
        grad_acc.clear()
        acc_count = 0

    for epoch in range(config.epochs):
        started = time.monotonic()
        lr = schedule_lr(config.lr, epoch, config.halve_every)
        order = list(range(len(train_set)))
        random.Random(config.seed * 100003 + epoch).shuffle(order)
        op_loss_total = 0.0
        oe_loss_total = 0.0
        op_steps = 0
        oe_steps = 0
        for idx in order:
            ex = train_set[idx]
            global_step += 1
            plan = DropPlan(config.seed, global_step)
            op_loss, oe_loss, n_op, n_oe = model.teacher_forced_loss(
                ex.tokenization, ex.program, train=True, plan=plan
            )
            loss = ad.add(op_loss, oe_loss)
            if not math.isfinite(loss.item()):
                raise RuntimeError(f"non-finite loss at example {ex.id!r} (epoch {epoch})")
            backward(loss)
            for name, p in params.items():
                if p.grad is not None:
                    if name in grad_acc:
                        grad_acc[name] += p.grad
                    else:
                        grad_acc[name] = p.grad.copy()
                    p.grad = None
            acc_count += 1
            if acc_count >= config.batch_size:
                flush(lr)
            op_loss_total += op_loss.item()
            oe_loss_total += oe_loss.item()
            op_steps += n_op
            oe_steps += n_oe
        flush(lr)
        entry = {
            "epoch": epoch,
            "lr": lr,
            "op_loss_per_step": op_loss_total / max(op_steps, 1),
            "operand_loss_per_step": oe_loss_total / max(oe_steps, 1),
            "seconds": round(time.monotonic() - started, 2),
        }
        if dev_set and (epoch % config.eval_every == 0 or epoch == config.epochs - 1):
            report, _ = evaluate(model, dev_set)
            rates = report.overall.rates()
            entry["dev_prog_acc"] = rates["prog_acc"]
            entry["dev_exec_acc"] = rates["exec_acc"]
            if rates["prog_acc"] > best["prog_acc"]:
                best = {"epoch": epoch, "prog_acc": rates["prog_acc"], "exec_acc": rates["exec_acc"]}
                best_weights = {k: p.data.copy() for k, p in params.items()}
        history.append(entry)
        if not quiet:
            print(json.dumps(entry))
        if (
            config.early_stop_acc is not None
            and entry.get("dev_prog_acc", 0.0) >= config.early_stop_acc
        ):
            break
    if best_weights is not None:
        for k, p in params.items():
            p.data = best_weights[k]
    checkpoint_dir = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        checkpoint_dir = os.path.join(out_dir, "checkpoint")
        save_checkpoint(checkpoint_dir, model)
        with open(os.path.join(out_dir, "train_log.jsonl"), "w", encoding="utf-8") as fh:
            for entry in history:
                fh.write(json.dumps(entry) + "\n")
    return TrainResult(model, history, best["epoch"], best, checkpoint_dir)


# --------------------------------------------------------------------------
# checkpoints


def _model_config_dict(model: ProgramDecoder) -> dict:
    cfg = asdict(model.config)
    cfg["max_seq_len"] = model.encoder.max_len
    return cfg


def save_checkpoint(path: str, model: ProgramDecoder) -> None:
    """Write manifest.json + weights.bin + vocab.txt.

    Weights are raw little-endian float32 in manifest order; both payloads
    carry sha256 digests so corruption is detected at load."""
    os.makedirs(path, exist_ok=True)
    names = sorted(model.params)
    payload = b"".join(np.ascontiguousarray(model.params[n].data, dtype="<f4").tobytes() for n in names)
    vocab_path = os.path.join(path, "vocab.txt")
    model.encoder.vocab.save(vocab_path)
    with open(vocab_path, "rb") as fh:
        vocab_bytes = fh.read()
    manifest = {
        "format_version": CHECKPOINT_VERSION,
        "config": _model_config_dict(model),
        "registry": [
            {"name": s.name, "min": s.arity.minimum, "variadic": s.arity.variadic, "kind": s.kind}
            for s in model.registry.specs
        ],
        "constants": [[n, v] for n, v in model.constants.values],
        "tensors": [{"name": n, "shape": list(model.params[n].shape)} for n in names],
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
        "vocab_sha256": hashlib.sha256(vocab_bytes).hexdigest(),
    }
    with open(os.path.join(path, "weights.bin"), "wb") as fh:
        fh.write(payload)
    with open(os.path.join(path, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1)


def load_checkpoint(path: str) -> ProgramDecoder:
    """Rebuild the full model; forward passes are bit-identical to the
    saved model's."""
    try:
        with open(os.path.join(path, "manifest.json"), encoding="utf-8") as fh:
            manifest = json.load(fh)
        with open(os.path.join(path, "weights.bin"), "rb") as fh:
            payload = fh.read()
        with open(os.path.join(path, "vocab.txt"), "rb") as fh:
            vocab_bytes = fh.read()
    except OSError as err:
        raise CheckpointError(f"cannot read checkpoint at {path}: {err}") from err
    version = manifest.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise VersionError(f"checkpoint format {version!r} is not supported (expected {CHECKPOINT_VERSION})")
    if hashlib.sha256(payload).hexdigest() != manifest["payload_sha256"]:
        raise ChecksumError("weights.bin does not match its manifest digest")
    if hashlib.sha256(vocab_bytes).hexdigest() != manifest["vocab_sha256"]:
        raise ChecksumError("vocab.txt does not match its manifest digest")
    vocab = Vocabulary([line for line in vocab_bytes.decode("utf-8").splitlines() if line])
    registry = OperatorRegistry(
        tuple(
            OperatorSpec(s["name"], Arity(s["min"], s["variadic"]), s["kind"])
            for s in manifest["registry"]
        )
    )
    constants = ConstantTable(tuple((n, float(v)) for n, v in manifest["constants"]))
    cfg = dict(manifest["config"])
    max_seq_len = cfg.pop("max_seq_len")
    config = DecoderConfig(**cfg)
    encoder = GruEncoder(vocab, hidden=config.hidden, dropout=config.dropout, max_len=max_seq_len)
    model = ProgramDecoder(encoder, registry, constants, config)
    offset = 0
    for spec in manifest["tensors"]:
        name, shape = spec["name"], tuple(spec["shape"])
        if name not in model.params:
            raise CheckpointError(f"checkpoint tensor {name!r} has no home in the model")
        param = model.params[name]
        if tuple(param.shape) != shape:
            raise CheckpointError(f"tensor {name!r} shape {shape} does not match model {tuple(param.shape)}")
        n_bytes = int(np.prod(shape)) * 4 if shape else 4
        raw = payload[offset : offset + n_bytes]
        if len(raw) != n_bytes:
            raise ChecksumError("weights.bin is shorter than the manifest promises")
        param.data = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
        offset += n_bytes
    if offset != len(payload):
        raise ChecksumError("weights.bin is longer than the manifest promises")
    return model
