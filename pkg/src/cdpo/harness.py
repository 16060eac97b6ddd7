"""Experiment configuration, seeded runs, sweeps and CSV persistence."""
from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
import logging
import math
import os
from collections import deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .envs import EnvConfig, VecEnv
from .nn import AdamState, init_params
from .ppo import LossConfig, update
from .regularizers import RegularizerKind
from .rollout import collect, compute_gae

log = logging.getLogger(__name__)

ALGO_OF_REG = {"complexity": "cdpo", "entropy": "ppo_ent", "none": "ppo"}
REG_OF_ALGO = {v: k for k, v in ALGO_OF_REG.items()}

# INI section of every config field
SECTIONS = {
    "env": ("env", "carts", "gravity", "spring", "damper", "max_episode_steps"),
    "algo": ("regularizer", "reg_coef"),
    "train": ("total_timesteps", "n_envs", "n_steps", "n_epochs", "batch_size", "gae_lambda",
              "gamma", "max_grad_norm", "learning_rate", "clip_range", "vf_coef", "hidden_units"),
    "run": ("seeds", "reg_coefs", "algorithms", "include_baseline", "eval_every", "window",
            "out_dir", "workers"),
}
# fields that do not influence a single run's output
_RUN_ONLY = {"seeds", "reg_coefs", "algorithms", "include_baseline", "out_dir", "workers"}


@dataclass(frozen=True)
class ExperimentConfig:
    env: str = "cartpole"
    carts: int = 1
    gravity: float = 9.81
    spring: float = 1.0
    damper: float = 1.0
    max_episode_steps: int = 500

    regularizer: str = "complexity"
    reg_coef: float = 1e-2

    total_timesteps: int = 100_000
    n_envs: int = 8
    n_steps: int = 32
    n_epochs: int = 20
    batch_size: int = 256
    gae_lambda: float = 0.8
    gamma: float = 0.98
    max_grad_norm: float = 0.5
    learning_rate: float = 1e-3
    clip_range: float = 0.2
    vf_coef: float = 0.5
    hidden_units: int = 64

    seeds: tuple[int, ...] = (0, 1, 2)
    reg_coefs: tuple[float, ...] = (1e-1, 1e-2, 1e-3)
    algorithms: tuple[str, ...] = ("cdpo", "ppo_ent")
    include_baseline: bool = True
    eval_every: int = 2048
    window: int = 100
    out_dir: str = "runs"
    workers: int = 1

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.env not in ("cartpole", "carterpillar"):
            raise ValueError(f"unknown env {self.env!r}")
        if self.env == "cartpole" and self.carts != 1:
            raise ValueError("cartpole has exactly one cart")
        RegularizerKind(self.regularizer)
        for a in self.algorithms:
            if a not in REG_OF_ALGO:
                raise ValueError(f"unknown algorithm {a!r}")
        for name in ("n_envs", "n_steps", "batch_size", "eval_every", "window", "hidden_units", "workers"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.total_timesteps < 0 or self.n_epochs < 0:
            raise ValueError("total_timesteps and n_epochs must be non-negative")
        if (self.n_envs * self.n_steps) % self.batch_size:
            raise ValueError(f"batch_size {self.batch_size} does not divide "
                             f"n_envs*n_steps = {self.n_envs * self.n_steps}")
        if not 0 < self.gamma <= 1 or not 0 <= self.gae_lambda <= 1:
            raise ValueError("gamma must be in (0, 1] and gae_lambda in [0, 1]")
        if self.learning_rate <= 0 or self.max_grad_norm <= 0:
            raise ValueError("learning_rate and max_grad_norm must be positive")
        if any(c < 0 for c in self.reg_coefs) or self.reg_coef < 0:
            raise ValueError("regularisation coefficients must be non-negative")
        self.env_config()
        self.loss_config()

    @property
    def algo(self) -> str:
        return ALGO_OF_REG[self.regularizer]

    @property
    def batch_steps(self) -> int:
        return self.n_envs * self.n_steps

    def env_config(self) -> EnvConfig:
        return EnvConfig(kind=self.env, carts=self.carts, gravity=self.gravity, spring=self.spring,
                         damper=self.damper, max_episode_steps=self.max_episode_steps)

    def loss_config(self) -> LossConfig:
        coef = 0.0 if self.regularizer == "none" else self.reg_coef
        return LossConfig(clip_range=self.clip_range, vf_coef=self.vf_coef, reg_coef=coef,
                          regularizer=RegularizerKind(self.regularizer))

    def for_run(self, regularizer: str, reg_coef: float) -> ExperimentConfig:
        return dataclasses.replace(self, regularizer=regularizer,
                                   reg_coef=0.0 if regularizer == "none" else reg_coef)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}

    def run_hash(self) -> str:
        """SHA-256 over every field that affects a single run."""
        d = {k: v for k, v in self.to_dict().items() if k not in _RUN_ONLY}
        if d["regularizer"] == "none":
            d["reg_coef"] = 0.0
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def to_ini(self) -> str:
        lines = []
        for section, names in SECTIONS.items():
            lines.append(f"[{section}]")
            for n in names:
                lines.append(f"{n} = {_fmt_value(getattr(self, n))}")
            lines.append("")
        return "\n".join(lines)

    @classmethod
    def from_ini(cls, text: str, **overrides) -> ExperimentConfig:
        parser = configparser.ConfigParser()
        parser.read_string(text)
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        values = {}
        for section in parser.sections():
            if section not in SECTIONS:
                raise ValueError(f"unknown config section [{section}]")
            for key, raw in parser.items(section):
                if key not in SECTIONS[section]:
                    raise ValueError(f"unknown key {key!r} in [{section}]")
                values[key] = _parse_value(raw, types[key])
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)

    @classmethod
    def from_file(cls, path, **overrides) -> ExperimentConfig:
        return cls.from_ini(Path(path).read_text(encoding="utf-8"), **overrides)


def _fmt_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ", ".join(_fmt_value(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse_value(raw: str, typ: str):
    raw = raw.strip()
    if typ == "bool":
        if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
            raise ValueError(f"not a boolean: {raw!r}")
        return raw.lower() in ("true", "1", "yes")
    if typ == "int":
        return int(raw)
    if typ == "float":
        return float(raw)
    if typ.startswith("tuple"):
        items = [x.strip() for x in raw.split(",") if x.strip()]
        inner = typ[len("tuple["):].split(",")[0]
        conv = {"int": int, "float": float}.get(inner, str)
        return tuple(conv(x) for x in items)
    return raw


# ---------------------------------------------------------------------------
# run records

COLUMNS = ("global_step", "episodes", "mean_return", "entropy", "disequilibrium", "complexity",
           "objective", "clip_objective", "value_loss", "clip_fraction", "approx_kl")
_INT_COLUMNS = {"global_step", "episodes"}


@dataclass
class RunRecord:
    config_hash: str
    seed: int
    regularizer: str
    reg_coef: float
    rows: list[tuple] = field(default_factory=list)

    @property
    def algo(self) -> str:
        return ALGO_OF_REG[self.regularizer]

    def column(self, name: str) -> np.ndarray:
        i = COLUMNS.index(name)
        return np.array([r[i] for r in self.rows], dtype=float)

    @property
    def final_return(self) -> float:
        return float(self.rows[-1][COLUMNS.index("mean_return")]) if self.rows else math.nan

    def __eq__(self, other) -> bool:
        if not isinstance(other, RunRecord):
            return NotImplemented
        head = (self.config_hash, self.seed, self.regularizer, self.reg_coef)
        if head != (other.config_hash, other.seed, other.regularizer, other.reg_coef):
            return False
        if len(self.rows) != len(other.rows):
            return False
        return all(a == b or (isinstance(a, float) and math.isnan(a) and math.isnan(b))
                   for ra, rb in zip(self.rows, other.rows) for a, b in zip(ra, rb))


def _fmt_cell(v) -> str:
    return repr(float(v)) if isinstance(v, float) else str(v)


def format_header(record: RunRecord) -> str:
    return (f"# config_hash={record.config_hash} seed={record.seed} "
            f"regularizer={record.regularizer} reg_coef={record.reg_coef!r}\n"
            + ",".join(COLUMNS) + "\n")


def format_row(row: tuple) -> str:
    return ",".join(_fmt_cell(v) for v in row) + "\n"


def write_run_csv(record: RunRecord, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_header(record))
        for row in record.rows:
            fh.write(format_row(row))


def read_run_csv(path) -> RunRecord:
    with open(path, encoding="utf-8", newline="") as fh:
        lines = fh.read().split("\n")
    if not lines[0].startswith("#"):
        raise ValueError(f"{path}: missing metadata line")
    meta = dict(kv.split("=", 1) for kv in lines[0][1:].split())
    if tuple(lines[1].split(",")) != COLUMNS:
        raise ValueError(f"{path}: unexpected columns {lines[1]!r}")
    rows = []
    for line in lines[2:]:
        if not line:
            continue
        cells = line.split(",")
        rows.append(tuple(int(c) if name in _INT_COLUMNS else float(c)
                          for name, c in zip(COLUMNS, cells)))
    return RunRecord(meta["config_hash"], int(meta["seed"]), meta["regularizer"],
                     float(meta["reg_coef"]), rows)


def run_filename(regularizer: str, reg_coef: float, seed: int) -> str:
    return f"{ALGO_OF_REG[regularizer]}_c{reg_coef!r}_s{seed}.csv"


def run(config: ExperimentConfig, seed: int, csv_path=None, params_path=None) -> RunRecord:
    """Train one agent: collect, estimate advantages, update, repeat.

    With ``csv_path`` every logged row is appended to disk as it is produced,
    so a crash leaves the partial series behind.
    """
    config.validate()
    env_cfg = config.env_config()
    loss_cfg = config.loss_config()
    record = RunRecord(config.run_hash(), seed, config.regularizer,
                       0.0 if config.regularizer == "none" else config.reg_coef)
    init_seq, env_seq, act_seq, batch_seq = np.random.SeedSequence(seed).spawn(4)
    params = init_params(env_cfg.obs_dim, env_cfg.n_actions,
                         int(init_seq.generate_state(1)[0]), hidden=(config.hidden_units,) * 2)
    opt_state = AdamState.zeros(params)
    venv = VecEnv(env_cfg, config.n_envs, int(env_seq.generate_state(1)[0]))
    act_rng = np.random.default_rng(act_seq)
    batch_rng = np.random.default_rng(batch_seq)
    recent = deque(maxlen=config.window)
    episodes = 0
    iterations = config.total_timesteps // config.batch_steps
    next_log = config.eval_every

    fh = None
    if csv_path is not None:
        Path(csv_path).parent.mkdir(parents=True, exist_ok=True)
        fh = open(csv_path, "w", encoding="utf-8", newline="\n")
        fh.write(format_header(record))
    try:
        for it in range(1, iterations + 1):
            buf = collect(params, venv, config.n_steps, act_rng)
            recent.extend(buf.episode_returns)
            episodes += len(buf.episode_returns)
            buf = compute_gae(buf, None, config.gamma, config.gae_lambda)
            params, opt_state, metrics = update(
                params, buf, loss_cfg, config.n_epochs, opt_state=opt_state, rng=batch_rng,
                batch_size=config.batch_size, lr=config.learning_rate,
                max_grad_norm=config.max_grad_norm)
            step = it * config.batch_steps
            if step >= next_log or it == iterations:
                while next_log <= step:
                    next_log += config.eval_every
                mean_ret = float(np.mean(recent)) if recent else math.nan
                m = metrics
                vals = (m.entropy, m.disequilibrium, m.complexity, m.objective, m.clip_objective,
                        m.value_loss, m.clip_fraction, m.approx_kl) if m else (math.nan,) * 8
                row = (step, episodes, mean_ret, *(float(v) for v in vals))
                record.rows.append(row)
                if fh is not None:
                    fh.write(format_row(row))
                    fh.flush()
                log.debug("step %d mean_return %.1f", step, mean_ret)
    finally:
        if fh is not None:
            fh.close()
    if params_path is not None:
        np.savez(params_path, **params.arrays)
    return record


# ---------------------------------------------------------------------------
# sweeps


@dataclass
class SeriesSummary:
    """Aggregate of all seeds for one (algorithm, c_reg) pair."""

    algo: str
    reg_coef: float
    seeds: list[int]
    final_returns: list[float]
    mean: float
    stderr: float
    steps: np.ndarray
    mean_curve: np.ndarray
    stderr_curve: np.ndarray
    failed_seeds: list[int] = field(default_factory=list)

    @property
    def single_seed(self) -> bool:
        return len(self.seeds) == 1


@dataclass
class SweepSummary:
    series: list[SeriesSummary]
    failures: list[dict] = field(default_factory=list)
    records: list[RunRecord] = field(default_factory=list)

    def get(self, algo: str, reg_coef: float) -> SeriesSummary | None:
        for s in self.series:
            if s.algo == algo and s.reg_coef == reg_coef:
                return s
        return None

    def for_algo(self, algo: str) -> list[SeriesSummary]:
        return sorted((s for s in self.series if s.algo == algo), key=lambda s: -s.reg_coef)

    def aggregated(self, algo: str) -> tuple[np.ndarray, np.ndarray, np.ndarray] | None:
        """Pointwise mean of the per-coefficient mean curves, with pooled standard error."""
        group = self.for_algo(algo)
        if not group:
            return None
        steps = group[0].steps
        n = min(len(s.steps) for s in group)
        curves = np.array([s.mean_curve[:n] for s in group])
        mean = _nanmean(curves)
        runs = [r for r in self.records if r.algo == algo]
        if runs:
            pooled = np.array([r.column("mean_return")[:n] for r in runs])
            err = _stderr(pooled)
        else:
            err = np.zeros(n)
        return steps[:n], mean, err


def _nanmean(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    count = np.sum(~np.isnan(a), axis=0)
    total = np.nansum(a, axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(count > 0, total / np.maximum(count, 1), np.nan)


def _stderr(a: np.ndarray) -> np.ndarray | float:
    """Sample standard deviation over axis 0 divided by sqrt(n); 0 when n == 1."""
    a = np.asarray(a, dtype=float)
    n = a.shape[0]
    if n < 2:
        return np.zeros(a.shape[1:]) if a.ndim > 1 else 0.0
    return np.std(a, axis=0, ddof=1) / np.sqrt(n)


def summarize(records: list[RunRecord], failures: list[dict] | None = None) -> SweepSummary:
    groups: dict[tuple[str, float], list[RunRecord]] = {}
    for r in records:
        groups.setdefault((r.algo, r.reg_coef), []).append(r)
    failures = list(failures or [])
    series = []
    for (algo, coef), recs in sorted(groups.items(), key=lambda kv: (kv[0][0], -kv[0][1])):
        recs = sorted(recs, key=lambda r: r.seed)
        n = min(len(r.rows) for r in recs)
        steps = recs[0].column("global_step")[:n]
        curves = np.array([r.column("mean_return")[:n] for r in recs])
        finals = [r.final_return for r in recs]
        series.append(SeriesSummary(
            algo=algo, reg_coef=coef, seeds=[r.seed for r in recs], final_returns=finals,
            mean=float(np.mean(finals)), stderr=float(_stderr(np.array(finals))),
            steps=steps, mean_curve=_nanmean(curves), stderr_curve=_stderr(curves),
            failed_seeds=[f["seed"] for f in failures if f["algo"] == algo and f["reg_coef"] == coef],
        ))
    return SweepSummary(series, failures, list(records))


def _run_job(job):
    config, seed, csv_path = job
    try:
        return run(config, seed, csv_path=csv_path), None
    except Exception as exc:  # recorded as a failed run, never dropped
        return None, {"algo": config.algo, "reg_coef": config.reg_coef, "seed": seed,
                      "error": f"{type(exc).__name__}: {exc}"}


def sweep_jobs(base: ExperimentConfig, reg_coefs, seeds, algorithms=None,
               include_baseline=None) -> list[tuple[ExperimentConfig, int]]:
    algorithms = base.algorithms if algorithms is None else algorithms
    include_baseline = base.include_baseline if include_baseline is None else include_baseline
    if not reg_coefs or not seeds:
        raise ValueError("sweep needs at least one coefficient and one seed")
    jobs = []
    for algo in algorithms:
        if algo == "ppo":
            continue
        for c in reg_coefs:
            for s in seeds:
                jobs.append((base.for_run(REG_OF_ALGO[algo], float(c)), int(s)))
    if include_baseline or "ppo" in algorithms:
        for s in seeds:
            jobs.append((base.for_run("none", 0.0), int(s)))
    return jobs


def sweep(base: ExperimentConfig, reg_coefs=None, seeds=None, *, algorithms=None,
          include_baseline=None, workers: int | None = None, out_dir=None) -> SweepSummary:
    """Run every (algorithm, c_reg, seed) combination and aggregate.

    Jobs execute serially or in a process pool; each run owns its random
    streams, so the per-run CSVs are identical either way.
    """
    reg_coefs = base.reg_coefs if reg_coefs is None else reg_coefs
    seeds = base.seeds if seeds is None else seeds
    workers = base.workers if workers is None else workers
    jobs = sweep_jobs(base, reg_coefs, seeds, algorithms, include_baseline)
    payload = []
    for cfg, s in jobs:
        path = None
        if out_dir is not None:
            path = Path(out_dir) / "runs" / run_filename(cfg.regularizer, cfg.reg_coef, s)
        payload.append((cfg, s, path))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_job, payload))
    else:
        results = [_run_job(p) for p in payload]
    records = [r for r, _ in results if r is not None]
    failures = [f for _, f in results if f is not None]
    for f in failures:
        log.error("run failed: %s", f)
    summary = summarize(records, failures)
    if out_dir is not None:
        write_summary_csv(summary, Path(out_dir) / "summary.csv")
    return summary


def load_runs(in_dir) -> list[RunRecord]:
    in_dir = Path(in_dir)
    paths = sorted(in_dir.glob("runs/*.csv")) or sorted(in_dir.glob("*.csv"))
    records = []
    for p in paths:
        if p.name == "summary.csv":
            continue
        records.append(read_run_csv(p))
    return records


def write_summary_csv(summary: SweepSummary, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("algo,reg_coef,n_seeds,mean_final_return,stderr,single_seed,failed_seeds,final_returns\n")
        for s in summary.series:
            fh.write(",".join([
                s.algo, repr(s.reg_coef), str(len(s.seeds)), repr(s.mean), repr(s.stderr),
                str(int(s.single_seed)), " ".join(map(str, s.failed_seeds)) or "-",
                " ".join(repr(float(v)) for v in s.final_returns),
            ]) + "\n")
        for f in summary.failures:
            fh.write(f"# failed {f['algo']} reg_coef={f['reg_coef']!r} seed={f['seed']}: {f['error']}\n")


def area_under_curve(steps: np.ndarray, curve: np.ndarray) -> float:
    """Trapezoidal area over the finite part of a learning curve."""
    steps = np.asarray(steps, dtype=float)
    curve = np.asarray(curve, dtype=float)
    ok = np.isfinite(curve)
    if ok.sum() < 2:
        return 0.0
    x, y = steps[ok], curve[ok]
    return float(np.sum((x[1:] - x[:-1]) * (y[1:] + y[:-1]) / 2.0))


def auc_spread(summary: SweepSummary, algo: str) -> float:
    """Range across coefficients of the area under each mean learning curve."""
    aucs = [area_under_curve(s.steps, s.mean_curve) for s in summary.for_algo(algo)]
    return float(max(aucs) - min(aucs)) if aucs else math.nan


def default_workers() -> int:
    return max(1, (os.cpu_count() or 1))
