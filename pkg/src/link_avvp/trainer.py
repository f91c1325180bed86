"""Optimisation loop: batching, Adam/SGD steps, JSON-lines history."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import ConfigError, VideoSample
from .losses import total_loss
from .metrics import MetricsReport, evaluate
from .predictor import ModelParameters, collate, forward, init_model, predict
from .semantics import CaptionTable

log = logging.getLogger(__name__)


class NonFiniteLossError(ArithmeticError):
    def __init__(self, step: int, batch_id: int, ids: Sequence[str]):
        super().__init__(f"non-finite loss at step {step}, batch {batch_id} (videos {list(ids)[:4]}...)")
        self.step = step
        self.batch_id = batch_id


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 0          # 0 = full batch
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    seed: int = 0
    log_interval: int = 10
    eval_interval: int = 0       # 0 = evaluate only at the end
    include_label_loss: bool = True
    softmax_scale: bool = False
    max_steps: int | None = None
    reduction_ratio: int = 2
    plsim_hidden: int | None = None

    def validate(self) -> None:
        for name in ("epochs", "log_interval"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 1:
                raise ConfigError(name, f"must be a positive integer, got {v!r}")
        for name in ("batch_size", "eval_interval"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 0:
                raise ConfigError(name, f"must be a non-negative integer, got {v!r}")
        if not isinstance(self.learning_rate, (int, float)) or not self.learning_rate >= 0:
            raise ConfigError("learning_rate", f"must be >= 0, got {self.learning_rate!r}")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError("optimizer", f"must be 'adam' or 'sgd', got {self.optimizer!r}")
        if self.max_steps is not None and (not isinstance(self.max_steps, int) or self.max_steps < 1):
            raise ConfigError("max_steps", f"must be a positive integer or null, got {self.max_steps!r}")
        if not isinstance(self.reduction_ratio, int) or self.reduction_ratio < 1:
            raise ConfigError("reduction_ratio", f"must be a positive integer, got {self.reduction_ratio!r}")

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainConfig":
        unknown = set(raw) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown field")
        cfg = cls(**raw)
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        return asdict(self)


class Adam:
    def __init__(self, params, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class SGD:
    def __init__(self, params, lr: float):
        self.params = list(params)
        self.lr = lr

    def step(self) -> None:
        for p in self.params:
            if p.grad is not None:
                p.data = p.data - self.lr * p.grad


def make_optimizer(cfg: TrainConfig, params):
    if cfg.optimizer == "adam":
        return Adam(params, cfg.learning_rate)
    return SGD(params, cfg.learning_rate)


@dataclass
class History:
    losses: list[dict] = field(default_factory=list)
    metrics: list[dict] = field(default_factory=list)

    def write_jsonl(self, path) -> None:
        with Path(path).open("w") as fh:
            for rec in sorted(self.losses + self.metrics, key=lambda r: (r["step"], r["kind"])):
                fh.write(json.dumps(rec) + "\n")


def _batches(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    if batch_size == 0 or batch_size >= n:
        return [np.arange(n)]
    order = rng.permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def train(train_set: Sequence[VideoSample], eval_set: Sequence[VideoSample] | None,
          table: CaptionTable, cfg: TrainConfig, params: ModelParameters | None = None,
          ) -> tuple[ModelParameters, History]:
    cfg.validate()
    if not train_set:
        raise ValueError("training set is empty")
    first = train_set[0]
    if params is None:
        dims = {"T": first.T, "d": first.d, "C": first.C, "d_text": table.d_text}
        params = init_model(dims, cfg.seed, reduction=cfg.reduction_ratio, plsim_hidden=cfg.plsim_hidden)
    opt = make_optimizer(cfg, params.parameters())
    rng = np.random.default_rng(cfg.seed + 1)
    full = collate(train_set)
    history = History()
    step = 0
    window: list[dict] = []

    def record_metrics():
        target = eval_set if eval_set else train_set
        report = evaluate(zip(predict(target, params, table, cfg.softmax_scale), target))
        history.metrics.append({"kind": "metrics", "step": step, **report.to_dict()})
        return report

    done = False
    for epoch in range(cfg.epochs):
        for batch_id, idx in enumerate(_batches(len(train_set), cfg.batch_size, rng)):
            batch = full if len(idx) == len(train_set) else collate([train_set[i] for i in idx])
            params.zero_grad()
            out, inter = forward(batch, params, table, cfg.softmax_scale)
            br = total_loss(batch, out, inter, params, cfg.include_label_loss)
            if not math.isfinite(br.total.item()):
                raise NonFiniteLossError(step, batch_id, batch.ids)
            br.total.backward()
            opt.step()
            step += 1
            window.append({**br.as_dict(), **br.lambda_stats()})
            if step % cfg.log_interval == 0:
                rec = {k: float(np.mean([w[k] for w in window])) for k in window[0]}
                rec.update(kind="loss", step=step, epoch=epoch, mu=params.mu.item())
                history.losses.append(rec)
                log.info("step %d total %.5f mu %.4f", step, rec["total"], rec["mu"])
                window = []
            if cfg.eval_interval and step % cfg.eval_interval == 0:
                record_metrics()
            if cfg.max_steps is not None and step >= cfg.max_steps:
                done = True
                break
        if done:
            break
    if not history.metrics or history.metrics[-1]["step"] != step:
        record_metrics()
    return params, history


def final_metrics(history: History) -> MetricsReport:
    last = dict(history.metrics[-1])
    last.pop("kind")
    last.pop("step")
    return MetricsReport(**last)
