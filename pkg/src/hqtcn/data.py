"""NARMA-10 generation, synthetic multichannel classification, CSV I/O, normalization.

Series CSV format (UTF-8, comma-separated)::

    # channels=2 steps=3 label=1
    0.1,0.2,0.3
    1.0,1.1,1.2

The header line is optional; when present ``channels`` and ``steps`` must
match the table and ``label`` (0 or 1) marks a classification series. Each
following line is one channel, each column one time step.
"""

from __future__ import annotations

import csv
import io
import json
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import DataError
from .model import TimeSeries

NARMA_ORDER = 10
SPLIT_FRACTIONS = (0.70, 0.15, 0.15)
SPLIT_NAMES = ("train", "val", "test")


# ---------------------------------------------------------------------------
# NARMA-10
# ---------------------------------------------------------------------------


def narma10(u) -> np.ndarray:
    """Tenth-order NARMA response to input ``u``; ``y[0:10] = 0``."""
    u = np.asarray(u, dtype=float).reshape(-1)
    if u.shape[0] < NARMA_ORDER + 1:
        raise DataError(f"NARMA-10 needs at least {NARMA_ORDER + 1} inputs, got {u.shape[0]}")
    y = np.zeros_like(u)
    for t in range(NARMA_ORDER, u.shape[0]):
        y[t] = (0.3 * y[t - 1]
                + 0.05 * y[t - 1] * y[t - NARMA_ORDER:t].sum()
                + 1.5 * u[t - NARMA_ORDER] * u[t - 1]
                + 0.1)
    return y


def split_sizes(total: int, fractions=SPLIT_FRACTIONS) -> tuple[int, int, int]:
    n_train = int(round(fractions[0] * total))
    n_val = int(round(fractions[1] * total))
    return n_train, n_val, total - n_train - n_val


@dataclass(frozen=True)
class NarmaData:
    u: np.ndarray
    y: np.ndarray
    splits: dict  # name -> np.ndarray of time indices (chronological)
    seed: int


def generate_narma_dataset(T: int = 240, seed: int = 0) -> NarmaData:
    """``u ~ Uniform[0, 0.5]`` i.i.d., chronological 70/15/15 split."""
    if T < 30:
        raise DataError(f"NARMA series length must be >= 30, got {T}")
    rng = np.random.default_rng(seed)
    u = rng.uniform(0.0, 0.5, T)
    y = narma10(u)
    return NarmaData(u, y, chronological_splits(T), seed)


def chronological_splits(T: int) -> dict:
    n_train, n_val, _ = split_sizes(T)
    bounds = [0, n_train, n_train + n_val, T]
    return {name: np.arange(bounds[i], bounds[i + 1]) for i, name in enumerate(SPLIT_NAMES)}


# ---------------------------------------------------------------------------
# Datasets and normalization
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Normalizer:
    """Per-channel standardization plus min-max target scaling (regression)."""

    mean: np.ndarray
    scale: np.ndarray
    target_min: float | None = None
    target_scale: float | None = None

    def values(self, v: np.ndarray) -> np.ndarray:
        return (v - self.mean[:, None]) / self.scale[:, None]

    def invert_values(self, v: np.ndarray) -> np.ndarray:
        return v * self.scale[:, None] + self.mean[:, None]

    def target(self, y: np.ndarray) -> np.ndarray:
        if self.target_min is None:
            return y
        return (y - self.target_min) / self.target_scale

    def invert_target(self, y: np.ndarray) -> np.ndarray:
        if self.target_min is None:
            return y
        return y * self.target_scale + self.target_min


@dataclass(frozen=True)
class Dataset:
    """A task's series and split assignment.

    Regression datasets hold a single series and ``splits`` maps each split
    to its time indices. Classification datasets hold one series per subject
    and ``splits`` maps each split to item indices.
    """

    task: str
    items: tuple
    splits: dict
    normalizer: Normalizer | None = None
    meta: dict = field(default_factory=dict)

    def subset(self, name: str) -> list[TimeSeries]:
        if self.task != "classification":
            raise ValueError("subset() applies to classification datasets")
        return [self.items[i] for i in self.splits[name]]


def narma_dataset(data: NarmaData) -> Dataset:
    series = TimeSeries(data.u[None, :], target=data.y, name="narma10")
    return Dataset("regression", (series,), dict(data.splits),
                   meta={"T": int(data.u.shape[0]), "seed": data.seed})


def _train_matrix(ds: Dataset) -> np.ndarray:
    if ds.task == "regression":
        return ds.items[0].values[:, ds.splits["train"]]
    return np.concatenate([ds.items[i].values for i in ds.splits["train"]], axis=1)


def normalize(ds: Dataset) -> Dataset:
    """Standardize channels with train-split statistics; for regression also
    min-max scale the target to [0, 1] with train-split extrema. Channels that
    are constant on the train split pass through unchanged."""
    train = _train_matrix(ds)
    if train.shape[1] == 0:
        raise DataError("train split is empty; cannot compute normalization statistics")
    mean = train.mean(axis=1)
    scale = train.std(axis=1)
    flat = scale < 1e-12
    if np.any(flat):
        warnings.warn(
            f"zero-variance channel(s) {np.flatnonzero(flat).tolist()} in train split; left unscaled",
            RuntimeWarning, stacklevel=2,
        )
        mean = np.where(flat, 0.0, mean)
        scale = np.where(flat, 1.0, scale)
    tmin = tscale = None
    if ds.task == "regression":
        y = ds.items[0].target[ds.splits["train"]]
        tmin = float(y.min())
        tscale = float(y.max() - y.min()) or 1.0
    norm = Normalizer(mean, scale, tmin, tscale)
    items = tuple(
        TimeSeries(norm.values(x.values),
                   target=None if x.target is None else norm.target(x.target),
                   label=x.label, name=x.name)
        for x in ds.items
    )
    return replace(ds, items=items, normalizer=norm)


# ---------------------------------------------------------------------------
# Synthetic multichannel classification
# ---------------------------------------------------------------------------


def synth_classification(n_subjects: int, channels: int = 64, steps: int = 249, seed: int = 0,
                         split_counts: tuple[int, int, int] | None = None,
                         noise: float = 1.0, evoked: float = 0.1, amp_pos: float = 1.0,
                         amp_neg: float = 0.2, active_fraction: float = 0.25) -> Dataset:
    """Two-class multichannel series on a fixed random subset of channels.

    The active channels (a quarter by default, shared by all subjects, each
    with its own gain in [0.5, 1.5]) carry

    * a slow half-cycle wave of amplitude ``evoked`` whose phase is 0 for
      label 1 and π for label 0 (so the classes differ in sign), with a
      small per-subject latency jitter, and
    * a band-limited oscillation (two sinusoids, 0.05-0.09 cycles/step,
      random per-subject phases) of amplitude ``amp_pos`` for label 1 and
      ``amp_neg`` for label 0.

    Every channel gets white Gaussian noise of std ``noise``. Labels are
    balanced and subjects are split 70/15/15 (or by ``split_counts``) with
    each split balanced to within one subject.
    """
    if n_subjects < 4:
        raise DataError(f"need at least 4 subjects, got {n_subjects}")
    rng = np.random.default_rng(seed)
    n_active = max(1, int(round(active_fraction * channels)))
    active = np.sort(rng.choice(channels, n_active, replace=False))
    gain = rng.uniform(0.5, 1.5, n_active)[:, None]
    labels = np.array([i % 2 for i in range(n_subjects)])
    rng.shuffle(labels)
    t = np.arange(steps)
    items = []
    for s, label in enumerate(labels):
        x = noise * rng.standard_normal((channels, steps))
        jitter = rng.uniform(-0.1, 0.1) * steps
        phase = 0.0 if label else np.pi
        x[active] += gain * evoked * np.sin(np.pi * (t - jitter) / steps + phase)
        amp = amp_pos if label else amp_neg
        for _ in range(2):
            f = rng.uniform(0.05, 0.09)
            phi = rng.uniform(0, 2 * np.pi, n_active)
            x[active] += gain * (amp / math.sqrt(2)) * np.sin(2 * np.pi * f * t[None, :] + phi[:, None])
        items.append(TimeSeries(x, label=int(label), name=f"subject_{s:03d}"))
    if split_counts is None:
        split_counts = split_sizes(n_subjects)
    if sum(split_counts) != n_subjects or min(split_counts) < 1:
        raise DataError(f"split counts {split_counts} do not partition {n_subjects} subjects")
    # alternate the classes so every contiguous split is balanced to within one
    pos, neg = rng.permutation(np.flatnonzero(labels)), rng.permutation(np.flatnonzero(labels == 0))
    first, second = (pos, neg) if len(pos) >= len(neg) else (neg, pos)
    order = np.empty(n_subjects, dtype=int)
    order[0::2], order[1::2] = first, second
    bounds = np.cumsum((0,) + tuple(split_counts))
    splits = {name: np.sort(order[bounds[i]:bounds[i + 1]]) for i, name in enumerate(SPLIT_NAMES)}
    return Dataset("classification", tuple(items), splits,
                   meta={"seed": seed, "active_channels": active.tolist()})


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------


def _parse_header(line: str, path) -> dict:
    meta = {}
    for tok in line.lstrip("#").split():
        key, sep, val = tok.partition("=")
        if not sep or key not in ("channels", "steps", "label"):
            raise DataError(f"{path}: line 1: bad header token {tok!r}")
        try:
            meta[key] = int(val)
        except ValueError:
            raise DataError(f"{path}: line 1: header value {tok!r} is not an integer") from None
    return meta


def load_csv(path) -> TimeSeries:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"{path}: cannot read ({exc})") from exc
    lines = text.splitlines()
    meta, first = {}, 0
    if lines and lines[0].startswith("#"):
        meta = _parse_header(lines[0], path)
        first = 1
    rows = []
    width = None
    for lineno, row in enumerate(csv.reader(lines[first:]), start=first + 1):
        if not row or all(not c.strip() for c in row):
            continue
        if width is None:
            width = len(row)
        elif len(row) != width:
            raise DataError(f"{path}: row {lineno} has {len(row)} columns, expected {width}")
        vals = []
        for col, cell in enumerate(row, start=1):
            try:
                vals.append(float(cell))
            except ValueError:
                raise DataError(f"{path}: row {lineno}, column {col}: {cell!r} is not numeric") from None
        rows.append(vals)
    if not rows:
        raise DataError(f"{path}: no data rows")
    values = np.array(rows)
    if "channels" in meta and meta["channels"] != values.shape[0]:
        raise DataError(f"{path}: header says {meta['channels']} channels, found {values.shape[0]}")
    if "steps" in meta and meta["steps"] != values.shape[1]:
        raise DataError(f"{path}: header says {meta['steps']} steps, found {values.shape[1]}")
    return TimeSeries(values, label=meta.get("label"), name=path.stem)


def format_csv(X: TimeSeries) -> str:
    buf = io.StringIO()
    header = f"# channels={X.channels} steps={X.steps}"
    if X.label is not None:
        header += f" label={X.label}"
    buf.write(header + "\n")
    for row in X.values:
        buf.write(",".join(repr(float(v)) for v in row) + "\n")
    return buf.getvalue()


def write_csv(path, X: TimeSeries) -> None:
    Path(path).write_text(format_csv(X), encoding="utf-8")


def write_narma(out_dir, data: NarmaData) -> None:
    """``narma.csv`` (columns t,u,y,split) and ``manifest.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tag = np.empty(data.u.shape[0], dtype=object)
    for name, idx in data.splits.items():
        tag[idx] = name
    lines = ["t,u,y,split"]
    lines += [f"{t},{float(data.u[t])!r},{float(data.y[t])!r},{tag[t]}" for t in range(data.u.shape[0])]
    (out / "narma.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    manifest = {
        "kind": "narma10", "T": int(data.u.shape[0]), "seed": data.seed,
        "splits": {k: [int(v[0]), int(v[-1]) + 1] for k, v in data.splits.items()},
        "sizes": {k: int(len(v)) for k, v in data.splits.items()},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def read_narma(out_dir) -> NarmaData:
    out = Path(out_dir)
    try:
        manifest = json.loads((out / "manifest.json").read_text())
        rows = list(csv.DictReader((out / "narma.csv").read_text(encoding="utf-8").splitlines()))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"{out}: cannot read NARMA data ({exc})") from exc
    try:
        u = np.array([float(r["u"]) for r in rows])
        y = np.array([float(r["y"]) for r in rows])
    except (KeyError, ValueError) as exc:
        raise DataError(f"{out / 'narma.csv'}: malformed row ({exc})") from exc
    splits = {k: np.arange(a, b) for k, (a, b) in manifest["splits"].items()}
    return NarmaData(u, y, splits, int(manifest.get("seed", 0)))


def write_classification(out_dir, ds: Dataset) -> None:
    """One series CSV per subject plus ``manifest.json`` listing the splits."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    for x in ds.items:
        name = f"{x.name}.csv"
        write_csv(out / name, x)
        files.append(name)
    manifest = {
        "kind": "classification", "files": files,
        "splits": {k: [int(i) for i in v] for k, v in ds.splits.items()},
        "meta": ds.meta,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def read_classification(out_dir) -> Dataset:
    out = Path(out_dir)
    try:
        manifest = json.loads((out / "manifest.json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"{out}: cannot read manifest ({exc})") from exc
    items = tuple(load_csv(out / f) for f in manifest["files"])
    for x in items:
        if x.label is None:
            raise DataError(f"{out / x.name}.csv: classification series needs a label header")
    splits = {k: np.array(v, dtype=int) for k, v in manifest["splits"].items()}
    return Dataset("classification", items, splits, meta=manifest.get("meta", {}))
