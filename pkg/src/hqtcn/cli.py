"""Command-line entry point: ``hqtcn <subcommand> ...``.

Exit codes: 0 success, 1 runtime or training failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import data as data_mod
from .baselines import qcnn_baseline_param_count, tcn_param_count
from .errors import ConfigurationError, DataError, HqtcnError, TrainingError
from .gradcheck import run_all
from .model import ModelConfig, model_param_count, receptive_field
from .quantum import MAX_QUBITS
from .train import MODEL_KINDS, RunRecord, TrainConfig, build_model, evaluate, multi_seed, train

MODEL_ALIASES = {"hqtcn": "hqtcn", "qcnn": "qcnn", "qcnn_baseline": "qcnn",
                 "tcn": "tcn", "tcn_baseline": "tcn"}
ABLATION_AXES = {"d": "dilation", "L": "n_layers", "n": "n_qubits"}
ABLATION_BASE = {"kernel": 12, "dilation": 3, "n_layers": 2, "n_qubits": 8}


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass
class DataSection:
    kind: str = "narma"  # narma | synth
    path: str = ""  # directory written by narma-gen / synth-gen; empty = generate
    seed: int = 0
    length: int = 240
    train_subjects: int = 40
    val_subjects: int = 20
    test_subjects: int = 20
    channels: int = 64
    steps: int = 249
    noise: float = 1.0
    evoked: float = 0.1
    amp_pos: float = 1.0
    amp_neg: float = 0.2
    active_fraction: float = 0.25


@dataclass
class ModelSection:
    model: str = "hqtcn"
    kernel: int | None = None
    dilation: int | None = None
    n_qubits: int = 8
    n_layers: int = 2
    lookback: int | None = None
    tcn_hidden: int = 24
    tcn_kernel: int = 3
    tcn_blocks: int = 2


@dataclass
class TrainSection:
    lr: float | None = None
    weight_decay: float = 1e-4
    epochs: int | None = None
    patience: int | None = None
    batch_size: int = 8
    seeds: str = "0,1,2"
    threads: int = 1


# Per-task defaults for the fields left as None above.
TASK_DEFAULTS = {
    "narma": {"kernel": 5, "dilation": 2, "lr": 0.005, "epochs": 300, "patience": 30},
    "synth": {"kernel": 12, "dilation": 3, "lr": 0.001, "epochs": 40, "patience": 10},
}


@dataclass
class CliConfig:
    data: DataSection = field(default_factory=DataSection)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)

    def resolve(self) -> "CliConfig":
        if self.data.kind not in TASK_DEFAULTS:
            raise ConfigurationError(f"[data] kind must be one of {sorted(TASK_DEFAULTS)}, got {self.data.kind!r}")
        if self.model.model not in MODEL_ALIASES:
            raise ConfigurationError(f"[model] model must be one of {MODEL_KINDS}, got {self.model.model!r}")
        defaults = TASK_DEFAULTS[self.data.kind]
        m = replace(self.model, model=MODEL_ALIASES[self.model.model],
                    **{k: defaults[k] for k in ("kernel", "dilation") if getattr(self.model, k) is None})
        t = replace(self.train, **{k: defaults[k] for k in ("lr", "epochs", "patience")
                                   if getattr(self.train, k) is None})
        return CliConfig(replace(self.data), m, t)

    @property
    def task(self) -> str:
        return "regression" if self.data.kind == "narma" else "classification"

    def model_config(self) -> ModelConfig:
        m = self.model
        return ModelConfig(m.kernel, m.dilation, m.n_qubits, m.n_layers, self.task)

    def seeds(self) -> tuple[int, ...]:
        try:
            return tuple(int(s) for s in self.train.seeds.split(",") if s.strip())
        except ValueError:
            raise ConfigurationError(f"[train] seeds must be comma-separated integers, got {self.train.seeds!r}") from None

    def train_config(self) -> TrainConfig:
        t = self.train
        return TrainConfig(lr=t.lr, weight_decay=t.weight_decay, epochs=t.epochs, patience=t.patience,
                           batch_size=t.batch_size, seeds=self.seeds(), threads=t.threads)

    def as_dict(self) -> dict:
        return {name: {f.name: getattr(getattr(self, name), f.name) for f in fields(getattr(self, name))}
                for name in ("data", "model", "train")}

    def to_ini(self) -> str:
        lines = []
        for section, values in self.as_dict().items():
            lines.append(f"[{section}]")
            lines += [f"{k} = {'' if v is None else v}" for k, v in values.items()]
            lines.append("")
        return "\n".join(lines)


def _coerce(section: str, f, raw: str):
    kind = f.type if isinstance(f.type, str) else f.type.__name__
    if raw.strip() == "" and "None" in kind:
        return None
    try:
        if kind.startswith("int"):
            return int(raw)
        if kind.startswith("float"):
            return float(raw)
    except ValueError:
        raise ConfigurationError(f"[{section}] {f.name}: cannot parse {raw!r} as {kind.split(' ')[0]}") from None
    return raw.strip()


def load_config(path: str | None) -> CliConfig:
    cfg = CliConfig()
    if path is None:
        return cfg
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    parser.optionxform = str  # keep key case
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigurationError(f"malformed config {path}: {exc}") from exc
    for section in parser.sections():
        if section not in ("data", "model", "train"):
            raise ConfigurationError(f"unknown config section [{section}]")
        target = getattr(cfg, section)
        known = {f.name: f for f in fields(target)}
        for key, raw in parser.items(section):
            if key not in known:
                raise ConfigurationError(f"unknown config key {key!r} in section [{section}]")
            setattr(target, key, _coerce(section, known[key], raw))
    return cfg


# ---------------------------------------------------------------------------
# Data
# ---------------------------------------------------------------------------


def build_dataset(cfg: CliConfig) -> data_mod.Dataset:
    d = cfg.data
    if d.kind == "narma":
        raw = data_mod.read_narma(d.path) if d.path else data_mod.generate_narma_dataset(d.length, d.seed)
        return data_mod.normalize(data_mod.narma_dataset(raw))
    if d.path:
        ds = data_mod.read_classification(d.path)
    else:
        ds = synth_from_section(d)
    return data_mod.normalize(ds)


def synth_from_section(d: DataSection) -> data_mod.Dataset:
    counts = (d.train_subjects, d.val_subjects, d.test_subjects)
    return data_mod.synth_classification(
        sum(counts), channels=d.channels, steps=d.steps, seed=d.seed, split_counts=counts,
        noise=d.noise, evoked=d.evoked, amp_pos=d.amp_pos, amp_neg=d.amp_neg,
        active_fraction=d.active_fraction,
    )


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_narma_gen(args) -> int:
    cfg = load_config(args.config).resolve()
    length = args.length if args.length is not None else cfg.data.length
    seed = args.seed if args.seed is not None else cfg.data.seed
    raw = data_mod.generate_narma_dataset(length, seed)
    out = _out_dir(args)
    data_mod.write_narma(out, raw)
    sizes = "/".join(str(len(raw.splits[k])) for k in data_mod.SPLIT_NAMES)
    print(f"wrote {out / 'narma.csv'} and {out / 'manifest.json'} (T={length}, seed={seed}, train/val/test={sizes})")
    return 0


def cmd_synth_gen(args) -> int:
    cfg = load_config(args.config).resolve()
    d = cfg.data
    if args.seed is not None:
        d.seed = args.seed
    for name in ("train_subjects", "val_subjects", "test_subjects", "channels", "steps"):
        if getattr(args, name) is not None:
            setattr(d, name, getattr(args, name))
    ds = synth_from_section(d)
    out = _out_dir(args)
    data_mod.write_classification(out, ds)
    sizes = "/".join(str(len(ds.splits[k])) for k in data_mod.SPLIT_NAMES)
    print(f"wrote {len(ds.items)} subject files and manifest.json to {out} (train/val/test={sizes})")
    return 0


def _resolved_train_config(args) -> CliConfig:
    cfg = load_config(args.config)
    if args.model is not None:
        cfg.model.model = args.model
    if args.seed is not None:
        cfg.train.seeds = str(args.seed)
    if args.threads is not None:
        cfg.train.threads = args.threads
    return cfg.resolve()


def _build(cfg: CliConfig, ds: data_mod.Dataset):
    m = cfg.model
    return build_model(m.model, ds, cfg.model_config(), lookback=m.lookback,
                       tcn_hidden=m.tcn_hidden, tcn_kernel=m.tcn_kernel, tcn_blocks=m.tcn_blocks)


def write_predictions(path: Path, records: list[RunRecord]) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        classification = records and records[0].task == "classification"
        w.writerow(["subject" if classification else "t", "split", "truth", "prediction", "model", "seed"])
        for r in records:
            for p in r.predictions:
                if classification:
                    w.writerow([p["subject"], p["split"], p["label"], repr(p["score"]), r.model, r.seed])
                else:
                    w.writerow([p["t"], p["split"], repr(p["truth"]), repr(p["prediction"]), r.model, r.seed])


def write_summary(path: Path, rows: list[dict]) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)


def cmd_train(args) -> int:
    cfg = _resolved_train_config(args)
    tcfg = cfg.train_config()
    ds = build_dataset(cfg)
    model = _build(cfg, ds)
    out = _out_dir(args)
    (out / "resolved_config.ini").write_text(cfg.to_ini(), encoding="utf-8")
    snapshot = cfg.as_dict()

    def run(seed: int) -> RunRecord:
        r = train(model, ds, tcfg, seed, snapshot)
        msg = f"{r.model} seed={seed}: {r.status}"
        if r.status == "ok":
            msg += f", {r.metric_name}={r.test_metric:.6g} (untrained {r.untrained_test_metric:.6g}), best epoch {r.best_epoch}"
        else:
            msg += f" ({r.error})"
        print(msg, flush=True)
        return r

    seeds = tcfg.seeds
    if len(seeds) >= 2:
        summary = multi_seed(run, seeds)
        records, mean, std, partial = summary.records, summary.mean, summary.std, summary.partial
    else:
        rec = run(seeds[0])
        records, partial = [rec], rec.status != "ok"
        mean, std = rec.test_metric, None

    params_dir = out / "params"
    params_dir.mkdir(exist_ok=True)
    with (out / "runs.jsonl").open("w", encoding="utf-8") as fh:
        for r in records:
            fh.write(r.to_json() + "\n")
            if r.params is not None:
                np.save(params_dir / f"{r.model}_seed{r.seed}.npy", r.params)
    write_predictions(out / "predictions.csv", records)
    classical, quantum, total = model.param_count()
    write_summary(out / "summary.csv", [{
        "model": model.name, "task": ds.task, "metric": records[0].metric_name,
        "mean": mean, "std": std, "seeds": " ".join(str(r.seed) for r in records),
        "partial": partial, "classical_params": classical, "quantum_params": quantum, "total_params": total,
    }])
    spread = "" if std is None else f" ± {std:.6g}"
    print(f"{model.name}: params {classical}/{quantum}/{total}; {records[0].metric_name} "
          f"{'n/a' if mean is None else f'{mean:.6g}'}{spread} over {len(records)} seed(s)"
          f"{' (partial)' if partial else ''}; outputs in {out}")
    return 1 if partial else 0


def cmd_eval(args) -> int:
    run_dir = Path(args.run)
    cfg = load_config(str(run_dir / "resolved_config.ini"))
    if args.threads is not None:
        cfg.train.threads = args.threads
    cfg = cfg.resolve()
    ds = build_dataset(cfg)
    model = _build(cfg, ds)
    try:
        lines = (run_dir / "runs.jsonl").read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DataError(f"cannot read run records in {run_dir}: {exc}") from exc
    results = []
    for line in lines:
        rec = json.loads(line)
        path = run_dir / "params" / f"{rec['model']}_seed{rec['seed']}.npy"
        if not path.exists():
            print(f"seed={rec['seed']}: no parameters saved (status {rec['status']})")
            continue
        metric = evaluate(model, ds, np.load(path), cfg.train.threads)
        results.append({"model": rec["model"], "seed": rec["seed"], "metric_name": rec["metric_name"],
                        "test_metric": metric, "recorded_test_metric": rec["test_metric"]})
        print(f"{rec['model']} seed={rec['seed']}: {rec['metric_name']}={metric:.6g} "
              f"(recorded {rec['test_metric']:.6g})")
    with (run_dir / "eval.jsonl").open("w", encoding="utf-8") as fh:
        for r in results:
            fh.write(json.dumps(r, sort_keys=True) + "\n")
    return 0 if results else 1


def parse_grid(specs: list[str]) -> tuple[str, list[int]]:
    if not specs:
        raise ConfigurationError("ablate needs one --grid AXIS=V1,V2,... with AXIS one of d, L, n")
    axes = {}
    for spec in specs:
        axis, sep, values = spec.partition("=")
        if not sep or axis not in ABLATION_AXES:
            raise ConfigurationError(f"bad grid {spec!r}; expected AXIS=V1,V2,... with AXIS one of d, L, n")
        try:
            axes[axis] = [int(v) for v in values.split(",") if v.strip()]
        except ValueError:
            raise ConfigurationError(f"grid values must be integers: {spec!r}") from None
    if len(axes) != 1:
        raise ConfigurationError(f"ablation varies exactly one axis at a time, got {sorted(axes)}")
    axis, values = next(iter(axes.items()))
    if not values:
        raise ConfigurationError(f"grid for {axis} has no values")
    return axis, values


def ablation_cells(axis: str, values: list[int], channels: int = 64) -> list[dict]:
    """Receptive field and parameter counts for each cell of a one-axis grid."""
    rows = []
    for v in values:
        dims = dict(ABLATION_BASE, **{ABLATION_AXES[axis]: v})
        classical, quantum, total = model_param_count(channels, dims["kernel"], dims["n_qubits"], dims["n_layers"])
        rows.append({"axis": axis, "value": v, **dims,
                     "receptive_field": receptive_field(dims["kernel"], dims["dilation"]),
                     "classical_params": classical, "quantum_params": quantum, "total_params": total})
    return rows


def cmd_ablate(args) -> int:
    axis, values = parse_grid(args.grid)
    cfg = load_config(args.config)
    if cfg.data.kind == "narma" and args.config is None:
        cfg.data.kind = "synth"
    if args.seed is not None:
        cfg.train.seeds = str(args.seed)
    if args.threads is not None:
        cfg.train.threads = args.threads
    cfg = cfg.resolve()
    rows = ablation_cells(axis, values, cfg.data.channels)
    ds = None if args.counts_only else build_dataset(cfg)
    out = _out_dir(args)
    failed = False
    for row in rows:
        row.update(mean=None, std=None, status="counts only")
        if args.counts_only:
            continue
        if row["n_qubits"] > MAX_QUBITS:
            row["status"] = f"skipped: {row['n_qubits']} qubits exceeds the {MAX_QUBITS}-qubit simulator"
            continue
        cell = replace(cfg, model=replace(cfg.model, model="hqtcn", kernel=row["kernel"], dilation=row["dilation"],
                                          n_qubits=row["n_qubits"], n_layers=row["n_layers"]))
        model = _build(cell, ds)
        tcfg = cell.train_config()
        seeds = tcfg.seeds
        records = ([train(model, ds, tcfg, s, cell.as_dict()) for s in seeds] if len(seeds) < 2
                   else multi_seed(lambda s: train(model, ds, tcfg, s, cell.as_dict()), seeds).records)
        ok = [r.test_metric for r in records if r.status == "ok"]
        row["mean"] = float(np.mean(ok)) if ok else None
        row["std"] = float(np.std(ok, ddof=1)) if len(ok) >= 2 else None
        row["status"] = "ok" if len(ok) == len(records) else "partial"
        failed |= row["status"] != "ok"
        with (out / "ablation_runs.jsonl").open("a", encoding="utf-8") as fh:
            for r in records:
                fh.write(r.to_json() + "\n")
    (out / "resolved_config.ini").write_text(cfg.to_ini(), encoding="utf-8")
    write_summary(out / "ablation.csv", rows)
    for row in rows:
        print(",".join("" if v is None else str(v) for v in row.values()))
    return 1 if failed else 0


def cmd_gradcheck(args) -> int:
    seed = args.seed if args.seed is not None else 0
    reports = run_all(seed, points=args.points, corrupt=args.corrupt)
    for r in reports:
        print(r.line())
    passed = all(r.passed for r in reports)
    print(f"max relative deviation < 1e-5: {'PASS' if passed else 'FAIL'}")
    return 0 if passed else 1


def cmd_paramcount(args) -> int:
    kind = MODEL_ALIASES.get(args.model_kind)
    if kind is None:
        raise ConfigurationError(f"unknown model {args.model_kind!r}; expected one of {MODEL_KINDS}")
    C, K, N, L = args.dims
    if min(C, K, N, L) < 1:
        raise ConfigurationError("all dimensions must be positive")
    if kind == "hqtcn":
        classical, quantum, total = model_param_count(C, K, N, L)
    elif kind == "qcnn":
        if N % 2:
            raise ConfigurationError(f"qubit count must be even, got {N}")
        classical, quantum, total = qcnn_baseline_param_count(C, K, N, L)
    else:
        total = tcn_param_count(C, hidden=N, kernel=K, n_blocks=L)
        classical, quantum = total, 0
    print(f"classical {classical}")
    print(f"quantum {quantum}")
    print(f"total {total}")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hqtcn", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_default: str | None = "runs"):
        sp.add_argument("--config", help="INI file with [data], [model] and [train] sections")
        sp.add_argument("--seed", type=int)
        if out_default is not None:
            sp.add_argument("--out", default=out_default, help="output directory")

    sp = sub.add_parser("narma-gen", help="generate a NARMA-10 series and its split manifest")
    common(sp, "data/narma")
    sp.add_argument("--length", type=int, help="series length T (default 240)")
    sp.set_defaults(func=cmd_narma_gen)

    sp = sub.add_parser("synth-gen", help="generate the synthetic multichannel classification set")
    common(sp, "data/synth")
    for name in ("train-subjects", "val-subjects", "test-subjects", "channels", "steps"):
        sp.add_argument(f"--{name}", dest=name.replace("-", "_"), type=int)
    sp.set_defaults(func=cmd_synth_gen)

    sp = sub.add_parser("train", help="train a model over the configured seeds")
    common(sp)
    sp.add_argument("--model", choices=sorted(MODEL_ALIASES))
    sp.add_argument("--threads", type=int)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="re-score saved parameters of a train run")
    sp.add_argument("run", help="output directory of a previous train run")
    sp.add_argument("--threads", type=int)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("ablate", help="one-axis grid over d, L or n around K=12, d=3, L=2, n=8")
    common(sp, "runs/ablation")
    sp.add_argument("--grid", action="append", default=[], help="AXIS=V1,V2,... (AXIS is d, L or n)")
    sp.add_argument("--counts-only", action="store_true", help="skip training; report formulas only")
    sp.add_argument("--threads", type=int)
    sp.set_defaults(func=cmd_ablate)

    sp = sub.add_parser("gradcheck", help="compare analytic gradients with finite differences")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--points", type=int, default=20)
    sp.add_argument("--corrupt", action="store_true", help="perturb the analytic gradient (exercises FAIL)")
    sp.set_defaults(func=cmd_gradcheck)

    sp = sub.add_parser("paramcount", help="print classical/quantum/total parameter counts",
                        description="MODEL C K N L. For qcnn K is the input length; for tcn N is the "
                                    "hidden width and L the block count.")
    sp.add_argument("model_kind", metavar="MODEL")
    sp.add_argument("dims", metavar="C K N L", type=int, nargs=4)
    sp.set_defaults(func=cmd_paramcount)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigurationError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (TrainingError, HqtcnError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
