"""Two-step training: pretrain a plain transformer, transplant, fine-tune.

The pretrain stage trains (set-up -> punchline) with teacher forcing and
no knowledge side at all. Transplanting copies every pretrainable tensor
into a freshly initialized fused model (fusion attention, gates and the
whole knowledge side start from scratch). Fine-tuning then updates every
parameter. Optimization is Adam at a constant learning rate with global
gradient-norm clipping; early stopping watches validation loss.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autograd as ag
from .config import ModelConfig, TrainConfig
from .corpus import DatasetSplit, JokeRecord
from .model import (
    Model,
    init_params,
    is_knowledge_only,
    load_params,
    save_params,
)
from .tokenizer import Tokenizer


class DivergenceError(Exception):
    """Training loss became non-finite."""


class ConfigMismatch(Exception):
    """Pretrained checkpoint is incompatible with the fused model config."""


@dataclass
class Example:
    src: np.ndarray
    tgt: np.ndarray
    triples: tuple = ()


@dataclass
class TrainResult:
    model: Model
    best_val_loss: float
    history: list[dict] = field(default_factory=list)
    steps_run: int = 0


def prepare_examples(records: list[JokeRecord], tokenizer: Tokenizer,
                     cfg: ModelConfig) -> list[Example]:
    """Tokenize records once; sequences are truncated to the model maximum."""
    out = []
    for rec in records:
        src = tokenizer.encode(rec.setup)[: cfg.max_len]
        tgt = [tokenizer.bos_id] + tokenizer.encode(rec.punchline) + [tokenizer.eos_id]
        tgt = tgt[: cfg.max_len]
        if not src or len(tgt) < 2:
            continue
        out.append(Example(np.asarray(src), np.asarray(tgt), tuple(rec.triples)))
    return out


class Adam:
    """Adam with bias correction and optional global-norm gradient clipping."""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, clip_norm: float | None = 1.0,
                 state: dict | None = None):
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.clip_norm = clip_norm
        if state:
            self.m = {k: v.copy() for k, v in state["m"].items()}
            self.v = {k: v.copy() for k, v in state["v"].items()}
            self.t = state["t"]
        else:
            self.m, self.v = {}, {}
            self.t = 0

    def state(self) -> dict:
        return {"m": {k: v.copy() for k, v in self.m.items()},
                "v": {k: v.copy() for k, v in self.v.items()}, "t": self.t}

    def step(self, params: dict[str, ag.Tensor]) -> bool:
        """Apply one update from the accumulated .grad fields.

        Returns True when clipping was active this step. Parameters
        without a gradient are treated as zero-gradient.
        """
        grads = {name: (p.grad if p.grad is not None else np.zeros_like(p.data))
                 for name, p in params.items()}
        clipped = False
        if self.clip_norm is not None:
            total = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
            if total > self.clip_norm:
                scale = self.clip_norm / total
                grads = {k: g * scale for k, g in grads.items()}
                clipped = True
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in params.items():
            g = grads[name]
            m = self.m.setdefault(name, np.zeros_like(p.data))
            v = self.v.setdefault(name, np.zeros_like(p.data))
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
        return clipped


def batch_loss(model: Model, batch: list[Example], dropout_rng=None) -> tuple[ag.Tensor, int]:
    """Token-weighted mean cross-entropy over a batch (single tape)."""
    total = None
    tokens = 0
    for ex in batch:
        loss, n = model.sequence_loss(ex.src, ex.tgt, ex.triples, dropout_rng=dropout_rng)
        total = loss if total is None else total + loss
        tokens += n
    return total * (1.0 / tokens), tokens


def eval_loss(model: Model, examples: list[Example]) -> float:
    """Per-token validation loss, deterministic (no dropout, no tape)."""
    with ag.no_grad():
        total, tokens = 0.0, 0
        for ex in examples:
            loss, n = model.sequence_loss(ex.src, ex.tgt, ex.triples)
            total += float(loss.data)
            tokens += n
    return total / max(tokens, 1)


def train_step(model: Model, batch: list[Example], opt: Adam, rng) -> tuple[float, bool]:
    """One optimizer step; returns (per-token loss, clipped?)."""
    for p in model.params.values():
        p.zero_grad()
    loss, _ = batch_loss(model, batch, dropout_rng=rng)
    value = float(loss.data)
    if not math.isfinite(value):
        raise DivergenceError(f"loss is {value}")
    loss.backward()
    clipped = opt.step(model.params)
    return value, clipped


def _snapshot(params: dict[str, ag.Tensor]) -> dict[str, np.ndarray]:
    return {k: v.data.copy() for k, v in params.items()}


def _restore(params: dict[str, ag.Tensor], snap: dict[str, np.ndarray]) -> None:
    for k, v in params.items():
        v.data = snap[k].copy()


def train_loop(model: Model, train_ex: list[Example], valid_ex: list[Example],
               tcfg: TrainConfig, rng: np.random.Generator,
               log_fn=None, opt: Adam | None = None) -> TrainResult:
    """Step loop with periodic validation and early stopping (best weights win)."""
    opt = opt or Adam(tcfg.learning_rate, tcfg.beta1, tcfg.beta2, tcfg.eps,
                      clip_norm=tcfg.clip_norm)
    log = log_fn or (lambda event: None)
    best_val = math.inf
    best_snap = _snapshot(model.params)
    stale = 0
    history = []
    step = 0
    for step in range(1, tcfg.max_steps + 1):
        idx = rng.integers(0, len(train_ex), size=tcfg.batch_size)
        loss, clipped = train_step(model, [train_ex[i] for i in idx], opt, rng)
        event = {"step": step, "split": "train", "loss": loss, "ppl": math.exp(min(loss, 50))}
        if clipped:
            event["clipped"] = True
        history.append(event)
        log(event)
        if step % tcfg.eval_every == 0 or step == tcfg.max_steps:
            val = eval_loss(model, valid_ex) if valid_ex else loss
            vevent = {"step": step, "split": "valid", "loss": val, "ppl": math.exp(min(val, 50))}
            history.append(vevent)
            log(vevent)
            if val < best_val - 1e-12:
                best_val = val
                best_snap = _snapshot(model.params)
                stale = 0
            else:
                stale += 1
                if stale >= tcfg.patience:
                    break
    _restore(model.params, best_snap)
    return TrainResult(model=model, best_val_loss=best_val, history=history, steps_run=step)


# ------------------------------------------------------------------ two stages


def pretrain(split: DatasetSplit, mcfg: ModelConfig, tcfg: TrainConfig,
             tokenizer: Tokenizer, log_fn=None) -> TrainResult:
    """Stage one: plain transformer on (set-up -> punchline), no knowledge."""
    rng = np.random.default_rng(tcfg.seed)
    params = init_params(rng, mcfg, tokenizer.vocab_size, fused=False)
    model = Model(params, mcfg, tokenizer, fused=False)
    train_ex = prepare_examples(split.train, tokenizer, mcfg)
    valid_ex = prepare_examples(split.valid, tokenizer, mcfg)
    return train_loop(model, train_ex, valid_ex, tcfg, rng, log_fn=log_fn)


def transplant(pretrained: Model, seed: int = 0) -> Model:
    """Copy the pretrainable partition into a freshly initialized fused model."""
    if pretrained.fused:
        raise ConfigMismatch("transplant source must be a plain (non-fused) model")
    cfg = pretrained.cfg
    rng = np.random.default_rng(seed)
    params = init_params(rng, cfg, pretrained.tokenizer.vocab_size, fused=True)
    for name, tensor in params.items():
        if is_knowledge_only(name):
            continue
        src = pretrained.params.get(name)
        if src is None or src.data.shape != tensor.data.shape:
            raise ConfigMismatch(f"pretrained checkpoint lacks compatible tensor {name!r}")
        tensor.data = src.data.copy()
    return Model(params, cfg, pretrained.tokenizer, fused=True)


def finetune(model: Model, split: DatasetSplit, tcfg: TrainConfig,
             log_fn=None) -> TrainResult:
    """Stage two: every parameter (transplanted and fresh) receives gradients."""
    if not model.fused:
        raise ConfigMismatch("finetune expects the fused model")
    rng = np.random.default_rng(tcfg.seed)
    train_ex = prepare_examples(split.train, model.tokenizer, model.cfg)
    valid_ex = prepare_examples(split.valid, model.tokenizer, model.cfg)
    return train_loop(model, train_ex, valid_ex, tcfg, rng, log_fn=log_fn)


# ------------------------------------------------------------------ checkpoints


def save_checkpoint(path: str | Path, model: Model, opt: Adam | None = None,
                    step: int = 0, rng: np.random.Generator | None = None) -> None:
    rng_state = rng.bit_generator.state if rng is not None else None
    save_params(path, model.params, model.cfg, model.tokenizer, model.fused,
                step=step, opt_state=opt.state() if opt else None, rng_state=rng_state)


def load_checkpoint(path: str | Path):
    """Returns (model, opt_state|None, step, rng_state|None)."""
    params, cfg, tokenizer, manifest, opt_state = load_params(path)
    model = Model(params, cfg, tokenizer, fused=manifest["fused"])
    return model, opt_state, manifest["step"], manifest.get("rng_state")
