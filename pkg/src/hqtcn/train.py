"""Losses, metrics, AdamW, the seeded training loop and the multi-seed harness."""

from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .baselines import QcnnBaselineModel, TcnModel
from .data import Dataset
from .errors import ConfigurationError, MetricError, TrainingError
from .model import HqtcnModel, ModelConfig

MODEL_KINDS = ("hqtcn", "qcnn", "tcn")


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


def mse(pred, target) -> float:
    p = np.asarray(pred, dtype=float).reshape(-1)
    t = np.asarray(target, dtype=float).reshape(-1)
    if p.shape != t.shape:
        raise ValueError(f"length mismatch: {p.shape[0]} predictions, {t.shape[0]} targets")
    if p.size == 0:
        raise ValueError("mse of empty vectors")
    return float(np.mean((p - t) ** 2))


def auroc(scores, labels) -> float:
    """Mann-Whitney U over all positive/negative pairs, ties counted 1/2."""
    s = np.asarray(scores, dtype=float).reshape(-1)
    y = np.asarray(labels).reshape(-1)
    if s.shape != y.shape:
        raise ValueError("scores and labels differ in length")
    pos, neg = s[y == 1], s[y == 0]
    if pos.size == 0 or neg.size == 0:
        raise MetricError("AUROC needs at least one positive and one negative example")
    diff = pos[:, None] - neg[None, :]
    u = np.count_nonzero(diff > 0) + 0.5 * np.count_nonzero(diff == 0)
    return float(u / (pos.size * neg.size))


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.005
    weight_decay: float = 1e-4
    epochs: int = 300
    patience: int = 30
    batch_size: int = 8
    seeds: tuple = (0, 1, 2)
    threads: int = 1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not self.lr > 0:
            raise ConfigurationError(f"learning rate must be > 0, got {self.lr}")
        if self.weight_decay < 0:
            raise ConfigurationError(f"weight decay must be >= 0, got {self.weight_decay}")
        if self.epochs < 0 or self.patience < 1 or self.batch_size < 1:
            raise ConfigurationError("epochs >= 0, patience >= 1 and batch_size >= 1 required")
        if not self.seeds:
            raise ConfigurationError("at least one seed is required")
        if self.threads < 1:
            raise ConfigurationError(f"threads must be >= 1, got {self.threads}")


@dataclass(frozen=True)
class OptimizerState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros_like(cls, params: np.ndarray) -> "OptimizerState":
        return cls(np.zeros_like(params), np.zeros_like(params), 0)


def adam_step(params: np.ndarray, grads: np.ndarray, state: OptimizerState,
              cfg: TrainConfig) -> tuple[np.ndarray, OptimizerState]:
    """Bias-corrected Adam with decoupled weight decay on every parameter."""
    g = np.asarray(grads, dtype=float)
    if g.shape != params.shape or state.m.shape != params.shape:
        raise ValueError("parameter, gradient and optimizer-state shapes differ")
    if not np.all(np.isfinite(g)):
        raise TrainingError("non-finite gradient")
    step = state.step + 1
    m = cfg.beta1 * state.m + (1 - cfg.beta1) * g
    v = cfg.beta2 * state.v + (1 - cfg.beta2) * g * g
    m_hat = m / (1 - cfg.beta1**step)
    v_hat = v / (1 - cfg.beta2**step)
    new = params - cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps) - cfg.lr * cfg.weight_decay * params
    return new, OptimizerState(m, v, step)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass
class RunRecord:
    model: str
    task: str
    seed: int
    config: dict
    param_count: dict
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    val_metric: list = field(default_factory=list)
    best_epoch: int | None = None
    metric_name: str = ""
    test_metric: float | None = None
    untrained_test_metric: float | None = None
    extra: dict = field(default_factory=dict)
    status: str = "running"
    error: str | None = None
    wall_clock_s: float = 0.0
    # Not serialized.
    predictions: list = field(default_factory=list, repr=False)
    params: np.ndarray | None = field(default=None, repr=False)

    @property
    def config_hash(self) -> str:
        blob = json.dumps(self.config, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]

    def to_json(self) -> str:
        d = asdict(self)
        d.pop("predictions")
        d.pop("params")
        d["config_hash"] = self.config_hash
        return json.dumps(d, sort_keys=True)


def build_model(kind: str, ds: Dataset, cfg: ModelConfig, *, lookback: int | None = None,
                tcn_hidden: int = 24, tcn_kernel: int = 3, tcn_blocks: int = 2):
    channels = ds.items[0].channels
    if kind == "hqtcn":
        return HqtcnModel(cfg, channels)
    if kind == "qcnn":
        steps = ds.items[0].steps
        return QcnnBaselineModel(cfg.n_qubits, cfg.n_layers, channels, lookback or steps, cfg.task)
    if kind == "tcn":
        return TcnModel(channels, cfg.task, tcn_hidden, tcn_kernel, tcn_blocks)
    raise ConfigurationError(f"unknown model {kind!r}; expected one of {MODEL_KINDS}")


class _Regression:
    """Single-series per-step regression on the time indices of each split."""

    def __init__(self, model, ds: Dataset):
        self.model = model
        self.series = ds.items[0]
        self.y = self.series.target
        start = model.start
        self.times = {k: v[v >= start] for k, v in ds.splits.items()}
        self.pos = {k: v - start for k, v in self.times.items()}
        for k, v in self.pos.items():
            if v.size == 0:
                raise ConfigurationError(f"split {k!r} has no steps after the first window")
        self.scale = ds.normalizer.target_scale if ds.normalizer else None

    def losses(self, out: np.ndarray) -> dict:
        return {k: mse(out[p], self.y[self.times[k]]) for k, p in self.pos.items()}

    def epoch(self, flat, threads, step_fn):
        p, t = self.pos["train"], self.times["train"]

        def upstream(outs):
            g = np.zeros_like(outs[0])
            g[p] = 2.0 * (outs[0][p] - self.y[t]) / p.size
            return [g]

        outs, grad = self.model.vjp(flat, [self.series], upstream, threads)
        losses = self.losses(outs[0])
        return losses["train"], losses["val"], step_fn(grad)

    def evaluate(self, flat, threads) -> dict:
        out = self.model.outputs(flat, [self.series], threads)[0]
        losses = self.losses(out)
        result = {"metric": losses["test"], "val_loss": losses["val"], "outputs": out}
        if self.scale is not None:
            result["test_mse_raw"] = losses["test"] * self.scale**2
        return result

    def predictions(self, out: np.ndarray, ds: Dataset) -> list:
        norm = ds.normalizer
        rows = []
        for split, times in self.times.items():
            for t in times:
                pred, truth = out[t - self.model.start], self.y[t]
                if norm is not None:
                    pred, truth = norm.invert_target(pred), norm.invert_target(truth)
                rows.append({"t": int(t), "split": split, "truth": float(truth), "prediction": float(pred)})
        return sorted(rows, key=lambda r: r["t"])


class _Classification:
    """Sequence-level scores (window mean), ±1 squared-error training, AUROC eval."""

    def __init__(self, model, ds: Dataset, batch_size: int):
        self.model = model
        self.ds = ds
        self.batch_size = batch_size
        self.sets = {k: ds.subset(k) for k in ds.splits}
        self.targets = {k: np.array([2.0 * x.label - 1.0 for x in v]) for k, v in self.sets.items()}

    @staticmethod
    def scores(outs) -> np.ndarray:
        return np.array([o.mean() for o in outs])

    def epoch(self, flat, threads, step_fn, rng: np.random.Generator):
        train = self.sets["train"]
        y = self.targets["train"]
        order = rng.permutation(len(train))
        total = 0.0
        for i in range(0, len(order), self.batch_size):
            idx = order[i:i + self.batch_size]
            batch, yb = [train[j] for j in idx], y[idx]

            def upstream(outs):
                s = self.scores(outs)
                return [np.full(o.shape, 2.0 * (sc - t) / (len(outs) * o.size))
                        for o, sc, t in zip(outs, s, yb)]

            outs, grad = self.model.vjp(flat, batch, upstream, threads)
            total += float(np.sum((self.scores(outs) - yb) ** 2))
            flat = step_fn(grad)
        val = self.scores(self.model.outputs(flat, self.sets["val"], threads))
        labels = np.array([x.label for x in self.sets["val"]])
        self.last_val_auroc = auroc(val, labels) if 0 < labels.sum() < labels.size else None
        return total / len(train), mse(val, self.targets["val"]), flat

    def evaluate(self, flat, threads) -> dict:
        test = self.scores(self.model.outputs(flat, self.sets["test"], threads))
        val = self.scores(self.model.outputs(flat, self.sets["val"], threads))
        labels = np.array([x.label for x in self.sets["test"]])
        return {"metric": auroc(test, labels), "val_loss": mse(val, self.targets["val"]),
                "test_scores": test}

    def predictions(self, scores: np.ndarray, ds: Dataset) -> list:
        return [{"subject": x.name, "split": "test", "label": int(x.label), "score": float(s)}
                for x, s in zip(self.sets["test"], scores)]


def train(model, ds: Dataset, tcfg: TrainConfig, seed: int, config: dict | None = None) -> RunRecord:
    """Train from a seeded init; restore the best-validation parameters before
    scoring the test split. Full batch for regression, shuffled mini-batches
    of ``tcfg.batch_size`` series for classification."""
    started = time.perf_counter()
    classical, quantum, total = model.param_count()
    record = RunRecord(
        model=model.name, task=ds.task, seed=int(seed), config=dict(config or {}),
        param_count={"classical": classical, "quantum": quantum, "total": total},
        metric_name="test_auroc" if ds.task == "classification" else "test_mse",
    )
    rng = np.random.default_rng(seed)
    flat = model.init_params(rng)
    if flat.shape[0] != total:
        raise TrainingError(f"model declares {total} parameters but built {flat.shape[0]}")
    job = (_Classification(model, ds, tcfg.batch_size) if ds.task == "classification"
           else _Regression(model, ds))
    threads = tcfg.threads
    state = OptimizerState.zeros_like(flat)

    untrained = job.evaluate(flat, threads)
    record.untrained_test_metric = untrained["metric"]
    best = (untrained["val_loss"], flat, -1)
    since_best = 0
    current = {"flat": flat, "state": state}

    def step(grad):
        current["flat"], current["state"] = adam_step(current["flat"], grad, current["state"], tcfg)
        return current["flat"]

    try:
        for epoch in range(tcfg.epochs):
            before = current["flat"]
            if ds.task == "classification":
                tr, va, _ = job.epoch(before, threads, step, rng)
                scored = current["flat"]  # val measured after this epoch's updates
            else:
                tr, va, _ = job.epoch(before, threads, step)
                scored = before  # val measured at the parameters that produced tr
            if not (math.isfinite(tr) and math.isfinite(va)):
                raise TrainingError(f"loss diverged at epoch {epoch} (train={tr}, val={va})")
            record.train_loss.append(tr)
            record.val_loss.append(va)
            if ds.task == "classification":
                record.val_metric.append(job.last_val_auroc)
            if va < best[0]:
                best, since_best = (va, scored, epoch), 0
            else:
                since_best += 1
                if since_best >= tcfg.patience:
                    break
    except TrainingError as exc:
        record.status, record.error = "failed", str(exc)
        record.wall_clock_s = time.perf_counter() - started
        return record

    record.best_epoch = best[2] if best[2] >= 0 else None
    final = job.evaluate(best[1], threads)
    record.test_metric = final["metric"]
    if "test_mse_raw" in final:
        record.extra["test_mse_raw"] = final["test_mse_raw"]
    record.extra["best_val_loss"] = final["val_loss"]
    record.params = best[1]
    if ds.task == "classification":
        record.predictions = job.predictions(final["test_scores"], ds)
    else:
        record.predictions = job.predictions(final["outputs"], ds)
    record.status = "ok"
    record.wall_clock_s = time.perf_counter() - started
    return record


def evaluate(model, ds: Dataset, flat: np.ndarray, threads: int = 1) -> float:
    """Test-split metric (MSE or AUROC) of a flat parameter vector."""
    job = _Classification(model, ds, 1) if ds.task == "classification" else _Regression(model, ds)
    return job.evaluate(np.asarray(flat, dtype=float), threads)["metric"]


@dataclass
class Summary:
    records: list
    mean: float | None
    std: float | None
    partial: bool

    def to_dict(self) -> dict:
        return {"mean": self.mean, "std": self.std, "partial": self.partial,
                "seeds": [r.seed for r in self.records],
                "metrics": [r.test_metric for r in self.records]}


def summarize(metrics: Sequence[float]) -> tuple[float, float]:
    """Mean and sample (ddof=1) standard deviation."""
    m = np.asarray(metrics, dtype=float)
    if m.size < 2:
        raise ValueError("need at least two values for a sample standard deviation")
    return float(m.mean()), float(m.std(ddof=1))


def multi_seed(run: Callable[[int], RunRecord], seeds: Sequence[int]) -> Summary:
    """Run once per seed; ``partial`` is set when any run failed."""
    if len(seeds) < 2:
        raise ConfigurationError("multi-seed runs need at least two seeds")
    records = [run(int(s)) for s in seeds]
    ok = [r.test_metric for r in records if r.status == "ok"]
    partial = len(ok) != len(records)
    mean = std = None
    if len(ok) >= 2:
        mean, std = summarize(ok)
    elif len(ok) == 1:
        mean, std = float(ok[0]), None
    return Summary(records, mean, std, partial)
