"""Experiment runner: configs, one-vs-all training, sweeps and CSV/JSON output."""
from __future__ import annotations

import configparser
import csv
import dataclasses
import functools
import json
import logging
import subprocess
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .adaptive import Alg2Config, Dpsgd5Config, run_alg2, run_dpsgd5_baseline
from .data import (Split, accuracy, load_covertype, load_mnist, make_blobs, make_tasks,
                   partition, preprocess)
from .deep_q import ControllerConfig
from .dp_sgd import Alg1Config, Schedule, run_alg1
from .linalg import RngStream
from .losses import LossParams, mean_loss
from .privacy import PrivacyLedger, PrivacySpec

log = logging.getLogger(__name__)

ALGORITHMS = ("noiseless", "alg1", "alg2", "dpsgd5")
DATASETS = ("mnist", "covertype", "synthetic")
EPSILON_CEILING = 0.999

RESULT_COLUMNS = [
    "dataset", "algorithm", "convexity", "M", "b", "per_node", "epsilon", "delta", "seed",
    "test_accuracy", "test_accuracy_avg", "train_risk", "p_global", "bound", "wall_time",
]


@dataclass
class ExperimentConfig:
    dataset: str = "synthetic"
    algorithm: str = "alg1"
    convexity: str = "convex"
    M: int = 10
    b: int = 50
    per_node: int | None = None
    epsilons: list[float] = field(default_factory=lambda: [EPSILON_CEILING])
    delta: str = "1/n^2"
    seeds: list[int] = field(default_factory=lambda: [1, 2, 3, 4, 5])
    eta: float = 0.1
    lam: float = 1e-4
    radius: float | None = None
    a: float = 0.1
    mode: str = "sequential"
    scheduler: str = "round_robin"
    alg2_eval: str = "local"
    noise_norm_mode: str = "per_coordinate"
    pca_dims: int | None = None
    data_dir: str = "data"
    out_dir: str = "out"
    split_seed: int = 0
    # synthetic blobs
    classes: int = 3
    dim: int = 10
    separation: float = 4.0
    n_train: int = 3000
    n_test: int = 1000
    # controller
    gamma_dq: float = 0.9
    sync_every: int = 50

    def __post_init__(self):
        if self.dataset not in DATASETS:
            raise ValueError(f"dataset must be one of {DATASETS}")
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}")
        if self.convexity not in ("convex", "strongly"):
            raise ValueError("convexity must be 'convex' or 'strongly'")
        self.epsilons = [clamp_epsilon(e) for e in self.epsilons]
        if self.pca_dims is None and self.dataset == "mnist":
            self.pca_dims = 50

    @property
    def params(self) -> LossParams:
        if self.convexity == "convex":
            return LossParams(0.0, self.radius if self.radius is not None else 50.0)
        return LossParams(self.lam, self.radius if self.radius is not None else 1.0 / self.lam)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def clamp_epsilon(eps: float) -> float:
    eps = float(eps)
    if eps >= 1.0:
        log.info("epsilon=%g is outside (0, 1); using %g", eps, EPSILON_CEILING)
        return EPSILON_CEILING
    if eps <= 0:
        raise ValueError("epsilon must be > 0")
    return eps


_LIST_FIELDS = {"epsilons": float, "seeds": int}


def _coerce(name: str, raw: str):
    ftype = {f.name: f.type for f in dataclasses.fields(ExperimentConfig)}[name]
    if name in _LIST_FIELDS:
        return [_LIST_FIELDS[name](v) for v in raw.replace(";", ",").split(",") if v.strip()]
    if raw.strip().lower() in ("none", ""):
        return None
    if "int" in str(ftype):
        return int(raw)
    if "float" in str(ftype):
        return float(raw)
    return raw.strip()


def parse_config(text: str) -> ExperimentConfig:
    """Read ``key = value`` lines grouped under ``[section]`` headers.

    Section names are cosmetic; every key must be an :class:`ExperimentConfig`
    field. Lines before the first header count as ``[experiment]``.
    """
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    if not text.lstrip().startswith("["):
        text = "[experiment]\n" + text
    parser.read_string(text)
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    values = {}
    for section in parser.sections():
        for key, raw in parser.items(section):
            if key not in known:
                raise ValueError(f"unknown config key {key!r} in [{section}]")
            values[key] = _coerce(key, raw)
    return ExperimentConfig(**values)


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text())


def dump_config(cfg: ExperimentConfig) -> str:
    lines = ["[experiment]"]
    for k, v in cfg.to_dict().items():
        if isinstance(v, list):
            v = ",".join(repr(x) if isinstance(x, float) else str(x) for x in v)
        lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"


@functools.lru_cache(maxsize=4)
def _prepared(dataset: str, data_dir: str, pca_dims: int | None, split_seed: int,
              synth: tuple) -> Split:
    if dataset == "mnist":
        split = load_mnist(data_dir)
    elif dataset == "covertype":
        split = load_covertype(data_dir, seed=split_seed)
    else:
        classes, dim, sep, n_train, n_test = synth
        split = make_blobs(classes, dim, sep, n_train, n_test, seed=split_seed)
    train, pca = preprocess(split.train, pca_dims, rng=RngStream(split_seed).child("pca"))
    test, _ = preprocess(split.test, pca=pca)
    return Split(train, test, split.info)


def prepare_data(cfg: ExperimentConfig) -> Split:
    synth = (cfg.classes, cfg.dim, cfg.separation, cfg.n_train, cfg.n_test)
    return _prepared(cfg.dataset, str(cfg.data_dir), cfg.pca_dims, cfg.split_seed, synth)


def resolve_delta(cfg: ExperimentConfig, n: int) -> float:
    if cfg.delta.replace(" ", "") in ("1/n^2", "1/n**2"):
        return 1.0 / n ** 2
    return float(cfg.delta)


@dataclass
class RunOutput:
    row: dict
    ledgers: list[dict]


def _schedule(cfg: ExperimentConfig, params: LossParams, for_alg2: bool) -> Schedule:
    if cfg.convexity == "convex":
        return Schedule("constant", eta=cfg.eta)
    if for_alg2:
        return Schedule("adaptive", gamma=params.strong_convexity, a=cfg.a)
    return Schedule("strongly_convex", gamma=params.strong_convexity)


def run_single(cfg: ExperimentConfig, seed: int, epsilon: float) -> RunOutput:
    """Train one model per class for one (seed, epsilon) cell and evaluate it."""
    start = time.perf_counter()
    split = prepare_data(cfg)
    train, test = split.train, split.test
    per_node = cfg.per_node if cfg.per_node is not None else train.n // cfg.M
    part = partition(train.n, cfg.M, per_node, RngStream(seed).child("partition"))
    n_used = part.total
    delta = resolve_delta(cfg, n_used)
    params = cfg.params
    privacy = None if cfg.algorithm == "noiseless" else PrivacySpec(epsilon, delta)
    tasks = make_tasks(train)

    finals, avgs, ledgers, p_glob = [], [], [], []
    for task in tasks:
        run_seed = seed * 1000 + task.positive_class
        if cfg.algorithm in ("noiseless", "alg1"):
            res = run_alg1(task, part, Alg1Config(
                cfg.M, cfg.b, _schedule(cfg, params, False), privacy, params, run_seed,
                cfg.scheduler, cfg.noise_norm_mode, keep_trajectory=False))
            finals.append(res.final)
            avgs.append(res.average)
            ledger = res.ledger
        elif cfg.algorithm == "alg2":
            ctrl = ControllerConfig(gamma_dq=cfg.gamma_dq, sync_every=cfg.sync_every,
                                    anneal_steps=n_used / (2.0 * cfg.M * cfg.b))
            res = run_alg2(task, part, Alg2Config(
                cfg.M, cfg.b, _schedule(cfg, params, True), privacy, params, run_seed,
                cfg.mode, "dqn", ctrl, cfg.noise_norm_mode))
            finals.append(res.local_finals if cfg.alg2_eval == "local" else res.global_final)
            avgs.append(res.local_averages if cfg.alg2_eval == "local" else res.global_average)
            ledger = res.ledger
            p_glob.append(float(res.p_global.mean()))
        else:
            res = run_dpsgd5_baseline(task, part, Dpsgd5Config(
                cfg.M, cfg.b, privacy, params, run_seed, 5, cfg.noise_norm_mode))
            finals.append(res.final)
            avgs.append(res.average)
            ledger = res.ledger
        entry = ledger.to_dict()
        entry.update(task=task.positive_class, seed=seed, epsilon=epsilon,
                     algorithm=cfg.algorithm, expected_samples=n_used)
        ledgers.append(entry)

    acc, acc_avg, risk = _evaluate(finals, avgs, tasks, train, test, params)
    row = {
        "dataset": cfg.dataset, "algorithm": cfg.algorithm, "convexity": cfg.convexity,
        "M": cfg.M, "b": cfg.b, "per_node": per_node,
        "epsilon": "" if privacy is None else repr(epsilon), "delta": repr(delta), "seed": seed,
        "test_accuracy": repr(acc), "test_accuracy_avg": repr(acc_avg), "train_risk": repr(risk),
        "p_global": repr(float(np.mean(p_glob))) if p_glob else "",
        "bound": "", "wall_time": f"{time.perf_counter() - start:.3f}",
    }
    return RunOutput(row, ledgers)


def _evaluate(finals, avgs, tasks, train, test, params):
    if finals[0].ndim == 2:
        # per-node local models: each node predicts with its own class models
        M = finals[0].shape[0]
        acc = float(np.mean([accuracy(np.stack([f[m] for f in finals]), test) for m in range(M)]))
        acc_avg = float(np.mean([accuracy(np.stack([f[m] for f in avgs]), test) for m in range(M)]))
        risk = float(np.mean([mean_loss(f[m], t.X, t.y, params.lam)
                              for f, t in zip(finals, tasks) for m in range(M)]))
    else:
        acc = accuracy(np.stack(finals), test)
        acc_avg = accuracy(np.stack(avgs), test)
        risk = float(np.mean([mean_loss(f, t.X, t.y, params.lam) for f, t in zip(finals, tasks)]))
    return acc, acc_avg, risk


def _run_cell(args):
    cfg, seed, eps = args
    return run_single(cfg, seed, eps)


def _git_hash() -> str:
    try:
        out = subprocess.run(["git", "rev-parse", "HEAD"], capture_output=True, text=True,
                             cwd=Path(__file__).parent, timeout=5)
        return out.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


def _map_cells(cells, threads: int):
    if threads <= 1:
        return [_run_cell(c) for c in cells]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(_run_cell, cells))


def write_outputs(out_dir, cfg: ExperimentConfig, outputs: list[RunOutput],
                  extra_meta: dict | None = None) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "results.csv", "w", newline="") as fh:
        fh.write("# config: " + json.dumps(cfg.to_dict(), sort_keys=True) + "\n")
        writer = csv.DictWriter(fh, fieldnames=RESULT_COLUMNS)
        writer.writeheader()
        for o in outputs:
            writer.writerow(o.row)
    ledger_doc = {"config": cfg.to_dict(), "runs": [l for o in outputs for l in o.ledgers]}
    (out / "ledger.json").write_text(json.dumps(ledger_doc))
    meta = {"config": cfg.to_dict(), "version": __version__, "git": _git_hash(),
            "seeds": cfg.seeds, **(extra_meta or {})}
    (out / "metadata.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    return out


def run_experiment(cfg: ExperimentConfig, threads: int = 1, write: bool = True) -> list[dict]:
    """Every (seed, epsilon) cell of ``cfg``; rows come back in cell order."""
    cells = [(cfg, s, e) for e in cfg.epsilons for s in cfg.seeds]
    if cfg.algorithm == "noiseless":
        cells = [(cfg, s, cfg.epsilons[0]) for s in cfg.seeds]
    outputs = _map_cells(cells, threads)
    if write:
        write_outputs(cfg.out_dir, cfg, outputs)
    return [o.row for o in outputs]


SWEEP_AXES = {"epsilon": "epsilons", "batch": "b", "nodes": "M"}


def sweep(cfg: ExperimentConfig, axis: str, values, threads: int = 1,
          write: bool = True) -> tuple[list[dict], list[dict]]:
    """Cross ``values`` on one axis with the seed list.

    Returns (long-format rows, summary rows with median and IQR of accuracy).
    """
    if axis not in SWEEP_AXES:
        raise ValueError(f"axis must be one of {sorted(SWEEP_AXES)}")
    values = list(values)
    if not values:
        raise ValueError("sweep needs at least one value")
    cells, keys = [], []
    for v in values:
        if axis == "epsilon":
            sub = dataclasses.replace(cfg, epsilons=[clamp_epsilon(v)])
        elif axis == "batch":
            sub = dataclasses.replace(cfg, b=int(v))
        else:
            sub = dataclasses.replace(cfg, M=int(v))
        for s in cfg.seeds:
            cells.append((sub, s, sub.epsilons[0]))
            keys.append(v)
    outputs = _map_cells(cells, threads)
    rows = []
    for v, o in zip(keys, outputs):
        rows.append({"axis": axis, "value": repr(v), **o.row})
    summary = summarize(rows)
    if write:
        out = Path(cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write_rows(out / "sweep.csv", rows, ["axis", "value"] + RESULT_COLUMNS, cfg)
        _write_rows(out / "sweep_summary.csv", summary, list(summary[0].keys()), cfg)
        write_outputs(out, cfg, outputs, {"sweep_axis": axis, "sweep_values": values})
    return rows, summary


def summarize(rows: list[dict]) -> list[dict]:
    groups: dict[tuple, list[float]] = {}
    for r in rows:
        groups.setdefault((r["axis"], r["value"], r["algorithm"]), []).append(float(r["test_accuracy"]))
    out = []
    for (axis, value, alg), accs in groups.items():
        q1, med, q3 = np.percentile(accs, [25, 50, 75])
        out.append({"axis": axis, "value": value, "algorithm": alg, "runs": len(accs),
                    "median_accuracy": repr(float(med)), "iqr": repr(float(q3 - q1))})
    return out


def _write_rows(path, rows, columns, cfg):
    with open(path, "w", newline="") as fh:
        fh.write("# config: " + json.dumps(cfg.to_dict(), sort_keys=True) + "\n")
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        writer.writerows(rows)


def read_results(path) -> list[dict]:
    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def audit_ledger(path) -> list[str]:
    """Problems found in a ledger.json; an empty list means clean."""
    doc = json.loads(Path(path).read_text())
    problems = []
    for i, run in enumerate(doc["runs"]):
        ledger = PrivacyLedger.from_dict(run)
        tag = f"run {i} (task {run.get('task')}, seed {run.get('seed')}, {run.get('algorithm')})"
        bad = ledger.violations()
        if bad:
            problems.append(f"{tag}: {len(bad)} samples over limit {ledger.limit}, e.g. {bad[0]}")
        expected = run.get("expected_samples")
        if ledger.limit == 1 and expected is not None:
            if len(ledger.counts) != expected or any(c != 1 for c in ledger.counts.values()):
                problems.append(f"{tag}: {len(ledger.counts)} samples used once, expected {expected}")
    return problems
