"""Neural program generator.

A recurrent *manager* turns the running decode state plus the previously
emitted symbol into a guidance vector g, once per emitted symbol:

    u      = W1 @ e_prev                      (bilinear attention query)
    a      = softmax(h_enc @ W2^T @ u)        (over question tokens for
                                               operator steps, all tokens
                                               for operand steps)
    c      = h_enc^T @ a
    x      = relu(W3 @ [c ; e_prev])
    g, s_t = stacked_gru(x, s_{t-1})          (state starts at zero)

Operator choice scores g against the operator embedding table; operand
choice scores g against a candidate table of constant embeddings, cache
slot embeddings and the encoder vectors at number positions.  Operand
decoding for a sub-program ends when ``none`` wins; at that moment the
*memory register* overwrites the cache slot's embedding with the guidance
vector of that step, so later sub-programs can refer to the cached result
by content rather than by a fixed slot embedding.

The first operator step is bootstrapped with a dedicated GO embedding row,
and programs terminate with an EOF operator.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .encoder import EncodedContext, GruEncoder, Tokenization
from .ir import (
    Cache,
    Const,
    ConstantTable,
    KIND_TERMINATOR,
    NONE,
    NONE_NAME,
    NoneTok,
    Num,
    OperatorRegistry,
    Program,
    SubProgram,
    canonicalize,
)


@dataclass(frozen=True)
class DecoderConfig:
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


class DoubleCommitError(RuntimeError):
    """A cache slot's embedding was overwritten twice in one decode."""


@dataclass
class DropPlan:
    """Hands out (seed, example, site) dropout keys; site increments per
    call so every dropout in a forward pass draws an independent mask."""

    seed: int
    step: int
    counter: int = 0

    def key(self) -> tuple[int, int, int]:
        self.counter += 1
        return (self.seed, self.step, self.counter)


@dataclass(frozen=True)
class SymbolTable:
    """Candidate layout for the two output distributions.

    Operators: registry order, GO appended as an extra (non-emittable)
    embedding row.  Operands: constants, then none, then the cache slots,
    then the example's number occurrences.
    """

    op_names: tuple[str, ...]
    cons_names: tuple[str, ...]
    cache_slots: int

    @property
    def n_op(self) -> int:
        return len(self.op_names)

    @property
    def go_row(self) -> int:
        return len(self.op_names)

    @property
    def none_index(self) -> int:
        return len(self.cons_names)

    @property
    def cache_base(self) -> int:
        return len(self.cons_names) + 1

    @property
    def num_base(self) -> int:
        return self.cache_base + self.cache_slots

    def op_id(self, name: str) -> int:
        return self.op_names.index(name)

    def operand_index(self, ref, *, n_nums: int) -> int:
        if isinstance(ref, Const):
            return self.cons_names.index(ref.name)
        if isinstance(ref, NoneTok):
            return self.none_index
        if isinstance(ref, Cache):
            if not (0 <= ref.slot < self.cache_slots):
                raise ValueError(f"cache slot {ref.slot} exceeds the {self.cache_slots}-slot register")
            return self.cache_base + ref.slot
        if isinstance(ref, Num):
            if ref.index is None or not (0 <= ref.index < n_nums):
                raise ValueError(f"number operand {ref.text!r} is not bound to an occurrence")
            return self.num_base + ref.index
        raise TypeError(type(ref).__name__)


@dataclass
class DecodeInfo:
    truncated_sub_programs: bool = False
    truncated_operands: bool = False
    op_steps: int = 0
    operand_steps: int = 0


class _Overlay:
    """Memory register: per-decode cache-slot embedding state.

    Committing adds the sub-program summary onto the slot's learned
    identity embedding instead of replacing it, so a filled slot stays
    addressable both by what it holds and by which slot it is.  Each
    commit also records the attention readout of the sub-program that
    filled the slot, letting the operand head match a slot against the
    question span it came from.
    """

    def __init__(self, initial_rows: list[Tensor], enabled: bool, zero_readout: Tensor):
        self.rows = list(initial_rows)
        self.readouts = [zero_readout] * len(initial_rows)
        self.committed = [False] * len(initial_rows)
        self.enabled = enabled

    def commit(self, slot: int, vec: Tensor, readout: Tensor) -> None:
        if slot >= len(self.rows):
            return  # beyond capacity: slot embedding stays initial
        if self.committed[slot]:
            raise DoubleCommitError(f"cache slot {slot} committed twice")
        self.committed[slot] = True
        if self.enabled:
            self.rows[slot] = ad.add(vec, self.rows[slot])
            self.readouts[slot] = readout

    def matrix(self) -> Tensor:
        return ad.stack_rows(self.rows)

    def readout_matrix(self) -> Tensor:
        return ad.stack_rows(self.readouts)


class ProgramDecoder:
    """Encoder + manager + output heads.  Owns the full parameter dict."""

    def __init__(
        self,
        encoder: GruEncoder,
        registry: OperatorRegistry,
        constants: ConstantTable,
        config: DecoderConfig = DecoderConfig(),
        seed: int = 0,
    ):
        if encoder.hidden != config.hidden:
            raise ValueError("encoder and decoder hidden sizes differ")
        self.encoder = encoder
        self.registry = registry
        self.constants = constants
        self.config = config
        self.symbols = SymbolTable(
            op_names=registry.names(),
            cons_names=constants.names(),
            cache_slots=config.cache_slots,
        )
        self.eof_id = self.symbols.op_id(registry.terminator.name)
        h = config.hidden
        rng = np.random.default_rng(seed + 1)
        dtype = encoder._dtype

        def glorot(*shape):
            if len(shape) == 1:
                return np.zeros(shape, dtype=dtype)
            bound = np.sqrt(6.0 / sum(shape[-2:]))
            return rng.uniform(-bound, bound, size=shape).astype(dtype)

        n_op_rows = self.symbols.n_op + 1  # + GO
        n_cons_rows = self.symbols.cache_base + config.cache_slots
        self.params: dict[str, Tensor] = dict(encoder.params)
        for name, data in {
            "dec.op_emb": (rng.standard_normal((n_op_rows, h)) * 0.1).astype(dtype),
            "dec.cons_emb": (rng.standard_normal((n_cons_rows, h)) * 0.1).astype(dtype),
            "dec.att.W1": glorot(h, h),
            "dec.att.W1g": glorot(h, h),
            "dec.att.W2": glorot(h, h),
            "dec.att.Wcc": glorot(h, h),
            "dec.in.W3": glorot(h, 2 * h),
            "dec.op_head.W": glorot(h, h),
            "dec.oe_head.W": glorot(h, h),
            "dec.init_oe.W4": glorot(h, 2 * h),
        }.items():
            self.params[name] = ad.parameter(data, name)
        for layer in range(config.gru_layers):
            self.params[f"dec.gru{layer}.W"] = ad.parameter(glorot(3 * h, h), f"dec.gru{layer}.W")
            self.params[f"dec.gru{layer}.U"] = ad.parameter(glorot(3 * h, h), f"dec.gru{layer}.U")
            self.params[f"dec.gru{layer}.b"] = ad.parameter(glorot(3 * h), f"dec.gru{layer}.b")
        self._zero_state = Tensor(np.zeros(h, dtype=dtype))

    def param_count(self) -> int:
        return sum(p.data.size for p in self.params.values())

    # ------------------------------------------------------------------
    # per-example precomputation

    @dataclass
    class _Ctx:
        enc: EncodedContext
        hw2: Tensor  # h_enc @ W2^T, (s, h)
        h_enc_t: Tensor  # (h, s)
        num_rows: Tensor | None  # encoder vectors at number positions
        op_rows: Tensor  # emittable operator embeddings (no GO)
        base_rows: Tensor  # constants + none embeddings
        all_mask: np.ndarray

    def _context(self, tok: Tokenization, train: bool, plan: DropPlan | None) -> "_Ctx":
        enc = self.encoder.encode(tok, train=train, drop_key=plan.key() if plan else None)
        p = self.params
        hw2 = ad.matmul(enc.h_enc, ad.transpose(p["dec.att.W2"]))
        num_rows = (
            ad.embedding_rows(enc.h_enc, np.asarray(enc.num_positions, dtype=np.int64))
            if enc.num_positions
            else None
        )
        return self._Ctx(
            enc=enc,
            hw2=hw2,
            h_enc_t=ad.transpose(enc.h_enc),
            num_rows=num_rows,
            op_rows=ad.slice_rows(p["dec.op_emb"], 0, self.symbols.n_op),
            base_rows=ad.slice_rows(p["dec.cons_emb"], 0, self.symbols.cache_base),
            all_mask=np.ones(len(enc.question_mask), dtype=bool),
        )

    def _initial_cache_rows(self) -> list[Tensor]:
        base = self.symbols.cache_base
        return [
            ad.embedding_gather(self.params["dec.cons_emb"], base + j)
            for j in range(self.config.cache_slots)
        ]

    # ------------------------------------------------------------------
    # one manager step

    def _step(self, e: Tensor, ctx: "_Ctx", question_only: bool, state: list[Tensor], train: bool, plan: DropPlan | None):
        p = self.params
        # The query mixes the incoming symbol with the manager's running
        # state so attention can follow decode position, not just content.
        u = ad.add(ad.matmul(p["dec.att.W1"], e), ad.matmul(p["dec.att.W1g"], state[-1]))
        scores = ad.matmul(ctx.hw2, u)
        att = ad.softmax(scores, ctx.enc.question_mask if question_only else ctx.all_mask)
        c = ad.matmul(ctx.h_enc_t, att)
        x = ad.relu(ad.matmul(p["dec.in.W3"], ad.concat([c, e])))
        new_state = []
        for layer in range(self.config.gru_layers):
            hx = ad.gru_cell(x, state[layer], p[f"dec.gru{layer}.W"], p[f"dec.gru{layer}.U"], p[f"dec.gru{layer}.b"])
            new_state.append(hx)
            if train and self.config.dropout > 0.0 and plan is not None and layer + 1 < self.config.gru_layers:
                hx = ad.dropout(hx, self.config.dropout, plan.key())
            x = hx
        return x, new_state, c

    # ------------------------------------------------------------------
    # output heads

    def _op_logits(self, g: Tensor, ctx: "_Ctx") -> Tensor:
        return ad.matmul(ctx.op_rows, ad.relu(ad.matmul(self.params["dec.op_head.W"], g)))

    def _operand_logits(
        self, g: Tensor, ctx: "_Ctx", cache_matrix: Tensor, cache_readouts: Tensor, c_now: Tensor
    ) -> Tensor:
        q = ad.relu(ad.matmul(self.params["dec.oe_head.W"], g))
        # Cache slots score by state match plus an encoder-space match
        # between what this step reads and what the slot's sub-program read.
        cache_logits = ad.add(
            ad.matmul(cache_matrix, q),
            ad.matmul(cache_readouts, ad.matmul(self.params["dec.att.Wcc"], c_now)),
        )
        parts = [ad.matmul(ctx.base_rows, q), cache_logits]
        if ctx.num_rows is not None:
            parts.append(ad.matmul(ctx.num_rows, q))
        return ad.concat(parts)

    def _operand_mask(self, op_name: str, j: int, sub_index: int, n_nums: int) -> np.ndarray:
        syms = self.symbols
        mask = np.ones(syms.num_base + n_nums, dtype=bool)
        usable = min(sub_index, syms.cache_slots)
        mask[syms.cache_base + usable : syms.num_base] = False
        if self.config.arity_masking:
            arity = self.registry[op_name].arity
            if arity.variadic:
                if j < arity.minimum:
                    mask[syms.none_index] = False
            elif j < arity.minimum:
                mask[syms.none_index] = False
            elif j >= arity.minimum:
                mask[:] = False
                mask[syms.none_index] = True
        return mask

    def _embed_operand(self, index: int, ctx: "_Ctx", overlay: _Overlay) -> Tensor:
        syms = self.symbols
        if index < syms.cache_base:
            return ad.embedding_gather(self.params["dec.cons_emb"], index)
        if index < syms.num_base:
            return overlay.rows[index - syms.cache_base]
        pos = ctx.enc.num_positions[index - syms.num_base]
        return ad.embedding_gather(ctx.enc.h_enc, pos)

    def _init_operand_input(self, op_id: int, g: Tensor) -> Tensor:
        e_op = ad.embedding_gather(self.params["dec.op_emb"], op_id)
        return ad.relu(ad.matmul(self.params["dec.init_oe.W4"], ad.concat([e_op, g])))

    # ------------------------------------------------------------------
    # teacher-forced loss

    def teacher_forced_loss(self, tok: Tokenization, gold: Program, train: bool = False, plan: DropPlan | None = None):
        """Sum of operator and operand NLLs along the gold decode path.

        Returns (op_loss, operand_loss, op_steps, operand_steps); the total
        training loss is their sum.  Gold Num operands must be bound.
        """
        gold = canonicalize(gold)
        if len(gold) > self.config.max_sub_programs:
            raise ValueError(f"gold program longer than {self.config.max_sub_programs} sub-programs")
        ctx = self._context(tok, train, plan)
        n_nums = len(ctx.enc.num_positions)
        syms = self.symbols
        overlay = _Overlay(self._initial_cache_rows(), self.config.memory_register, self._zero_state)
        state = [self._zero_state] * self.config.gru_layers
        op_nlls: list[Tensor] = []
        oe_nlls: list[Tensor] = []
        prev_op_row = syms.go_row
        for t, sp in enumerate(gold):
            if self.config.reset_state_per_subprogram:
                state = [self._zero_state] * self.config.gru_layers
            e_prev = ad.embedding_gather(self.params["dec.op_emb"], prev_op_row)
            g, state, c_op = self._step(e_prev, ctx, True, state, train, plan)
            op_id = syms.op_id(sp.operator)
            op_nlls.append(ad.nll(ad.log_softmax(self._op_logits(g, ctx)), op_id))
            cache_matrix = overlay.matrix()
            cache_readouts = overlay.readout_matrix()
            e_oe = self._init_operand_input(op_id, g)
            targets = [syms.operand_index(ref, n_nums=n_nums) for ref in sp.operands]
            targets.append(syms.none_index)
            last_real_g: Tensor | None = None
            for j, target in enumerate(targets):
                g, state, c_now = self._step(e_oe, ctx, False, state, train, plan)
                mask = self._operand_mask(sp.operator, j, t, n_nums)
                if not mask[target]:
                    raise ValueError(
                        f"gold operand {j} of {sp.operator} at sub-program {t} is masked out"
                    )
                logits = self._operand_logits(g, ctx, cache_matrix, cache_readouts, c_now)
                oe_nlls.append(ad.nll(ad.log_softmax(logits, mask), target))
                if target != syms.none_index:
                    last_real_g = g
                    e_oe = self._embed_operand(target, ctx, overlay)
            commit_g = last_real_g if (self.config.commit_last_real_operand and last_real_g is not None) else g
            overlay.commit(t, commit_g, c_op)
            prev_op_row = op_id
        e_prev = ad.embedding_gather(self.params["dec.op_emb"], prev_op_row)
        g, state, _ = self._step(e_prev, ctx, True, state, train, plan)
        op_nlls.append(ad.nll(ad.log_softmax(self._op_logits(g, ctx)), self.eof_id))
        return ad.add_n(op_nlls), ad.add_n(oe_nlls), len(op_nlls), len(oe_nlls)

    # ------------------------------------------------------------------
    # greedy decoding

    def decode(self, tok: Tokenization) -> tuple[Program, DecodeInfo]:
        """Greedy argmax decode; gradients are never recorded."""
        info = DecodeInfo()
        with ad.no_grad():
            ctx = self._context(tok, train=False, plan=None)
            n_nums = len(ctx.enc.num_positions)
            syms = self.symbols
            overlay = _Overlay(self._initial_cache_rows(), self.config.memory_register, self._zero_state)
            state = [self._zero_state] * self.config.gru_layers
            subs: list[SubProgram] = []
            prev_op_row = syms.go_row
            for t in range(self.config.max_sub_programs + 1):
                if t == self.config.max_sub_programs:
                    info.truncated_sub_programs = True
                    break
                if self.config.reset_state_per_subprogram:
                    state = [self._zero_state] * self.config.gru_layers
                e_prev = ad.embedding_gather(self.params["dec.op_emb"], prev_op_row)
                g, state, c_op = self._step(e_prev, ctx, True, state, False, None)
                info.op_steps += 1
                op_id = int(np.argmax(self._op_logits(g, ctx).data))
                if op_id == self.eof_id:
                    break
                op_name = syms.op_names[op_id]
                cache_matrix = overlay.matrix()
                cache_readouts = overlay.readout_matrix()
                e_oe = self._init_operand_input(op_id, g)
                operands: list = []
                last_real_g: Tensor | None = None
                for j in range(self.config.max_operands + 1):
                    g, state, c_now = self._step(e_oe, ctx, False, state, False, None)
                    info.operand_steps += 1
                    if j == self.config.max_operands:
                        info.truncated_operands = True
                        break
                    mask = self._operand_mask(op_name, j, t, n_nums)
                    logits = self._operand_logits(g, ctx, cache_matrix, cache_readouts, c_now).data
                    choice = int(np.argmax(np.where(mask, logits, -np.inf)))
                    if choice == syms.none_index:
                        break
                    operands.append(self._operand_ref(choice, ctx))
                    last_real_g = g
                    e_oe = self._embed_operand(choice, ctx, overlay)
                commit_g = last_real_g if (self.config.commit_last_real_operand and last_real_g is not None) else g
                overlay.commit(t, commit_g, c_op)
                subs.append(SubProgram(op_name, tuple(operands)))
                prev_op_row = op_id
        return Program(tuple(subs)), info

    def _operand_ref(self, index: int, ctx: "_Ctx"):
        syms = self.symbols
        if index < syms.none_index:
            return Const(syms.cons_names[index])
        if index == syms.none_index:
            return NONE
        if index < syms.num_base:
            return Cache(index - syms.cache_base)
        k = index - syms.num_base
        value = ctx.enc.num_values[k]
        text = f"{value:g}"
        return Num(text, index=k)
