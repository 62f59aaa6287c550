"""Training loop, timing instrumentation and convergence / efficiency metrics."""

from __future__ import annotations

import csv
import dataclasses
import datetime as _dt
import hashlib
import itertools
import json
import logging
import math
import os
import platform
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional, Sequence

import numpy as np
import threadpoolctl

from .estimators import (
    assemble_lm,
    assemble_sr,
    compute_local_quantities,
    exact_batch,
)
from .hilbert import DEFAULT_MAX_SITES, UNRESTRICTED, SymmetrySector
from .operators import PauliHamiltonian, build_j1j2, build_tfi, load_pauli_file, marshall_transform
from .optimizers import LmConfig, SrConfig, lm_step, sr_step
from .oracle import exact_ground_state, relative_error
from .sampling import SamplerConfig, run_chain
from .wavefunction import Rbm, init_params

log = logging.getLogger(__name__)

MODELS = ("tfi", "j1j2", "pauli")
OPTIMIZERS = ("sr", "lm")
DEFAULT_MAX_EPOCHS = {"lm": 150, "sr": 750}
ENV_OUTPUT_DIR = "LMNQS_OUTPUT_DIR"
ENV_THREADS = "LMNQS_THREADS"

RUN_COLUMNS = ["epoch", "energy_re", "energy_var", "eps_rel", "accept_rate",
               "t_s_seconds", "t_u_seconds"]
DIAG_COLUMNS = ["kappa", "lambda0_re", "lambda0_im", "c_abs", "ess", "cg_iterations", "skipped"]


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def _sector_to_dict(sector: Optional[SymmetrySector]) -> Optional[dict]:
    return None if sector is None else {"kind": sector.kind, "value": sector.value}


def _sector_from_dict(data) -> Optional[SymmetrySector]:
    if data is None or isinstance(data, SymmetrySector):
        return data
    return SymmetrySector(data["kind"], data.get("value"))


@dataclass
class ExperimentConfig:
    """One training experiment.  ``None`` fields take model-dependent defaults."""

    model: str = "tfi"
    h: Optional[float] = None
    j2: Optional[float] = None
    pauli_file: Optional[str] = None
    n_sites: int = 10
    alpha: int = 2
    symmetric: bool = True
    visible_bias: bool = True
    optimizer: str = "lm"
    sampler: Optional[SamplerConfig] = None
    sr: SrConfig = field(default_factory=SrConfig)
    lm: LmConfig = field(default_factory=LmConfig)
    max_epochs: Optional[int] = None
    seeds: Sequence[int] = (0,)
    b: float = 2e-3
    early_stop: bool = True
    init_scale: float = 0.01
    marshall: Optional[bool] = None
    sector: Optional[SymmetrySector] = None
    exact_sampling: bool = False
    sampling_delay: float = 0.0
    reference_energy: Optional[float] = None

    # -- defaults -------------------------------------------------------------
    @property
    def epochs(self) -> int:
        return DEFAULT_MAX_EPOCHS[self.optimizer] if self.max_epochs is None else self.max_epochs

    @property
    def use_marshall(self) -> bool:
        return self.model == "j1j2" if self.marshall is None else self.marshall

    @property
    def model_parameter(self) -> Optional[float]:
        if self.model == "tfi":
            return 1.0 if self.h is None else self.h
        if self.model == "j1j2":
            return 0.0 if self.j2 is None else self.j2
        return None

    def hilbert_sector(self) -> SymmetrySector:
        if self.sector is not None:
            return self.sector
        if self.model == "j1j2":
            return SymmetrySector.magnetization(self.n_sites % 2)
        return UNRESTRICTED

    def sampler_config(self) -> SamplerConfig:
        if self.sampler is not None:
            smp = self.sampler
        else:
            smp = SamplerConfig(kernel="exchange" if self.model == "j1j2" else "local")
        if smp.init_sector is None and self.hilbert_sector().kind != "unrestricted":
            smp = dataclasses.replace(smp, init_sector=self.hilbert_sector())
        return smp

    def validate(self) -> None:
        if self.model not in MODELS:
            raise ValueError(f"unknown model {self.model!r}; expected one of {MODELS}")
        given = {"tfi": self.h is not None, "j1j2": self.j2 is not None,
                 "pauli": self.pauli_file is not None}
        others = [m for m, g in given.items() if g and m != self.model]
        if others:
            raise ValueError(f"model {self.model!r} conflicts with parameters for {others}")
        if self.model == "pauli" and self.pauli_file is None:
            raise ValueError("pauli model needs a Hamiltonian file")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.n_sites <= 0 or self.alpha <= 0:
            raise ValueError("n_sites and alpha must be positive")
        if self.max_epochs is not None and self.max_epochs < 0:
            raise ValueError("max_epochs must be non-negative")
        if not self.b > 0:
            raise ValueError("convergence threshold b must be positive")
        if self.init_scale < 0 or self.sampling_delay < 0:
            raise ValueError("init_scale and sampling_delay must be non-negative")
        if not list(self.seeds):
            raise ValueError("at least one seed is required")
        self.sampler_config().validate()
        self.sr.validate()
        self.lm.validate()
        if self.sector is not None:
            self.sector.validate(self.n_sites)

    # -- serialization --------------------------------------------------------
    def to_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if f.name == "sampler":
                value = None if value is None else {
                    **dataclasses.asdict(value), "init_sector": _sector_to_dict(value.init_sector)}
            elif f.name in ("sr", "lm"):
                value = dataclasses.asdict(value)
            elif f.name == "sector":
                value = _sector_to_dict(value)
            elif f.name == "seeds":
                value = [int(s) for s in value]
            out[f.name] = value
        return out

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ExperimentConfig":
        data = dict(data)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown configuration keys: {sorted(unknown)}")
        if data.get("sampler") is not None and not isinstance(data["sampler"], SamplerConfig):
            smp = dict(data["sampler"])
            smp["init_sector"] = _sector_from_dict(smp.get("init_sector"))
            data["sampler"] = SamplerConfig(**smp)
        if isinstance(data.get("sr"), Mapping):
            data["sr"] = SrConfig(**data["sr"])
        if isinstance(data.get("lm"), Mapping):
            data["lm"] = LmConfig(**data["lm"])
        if "sector" in data:
            data["sector"] = _sector_from_dict(data["sector"])
        if "seeds" in data:
            data["seeds"] = tuple(int(s) for s in data["seeds"])
        return cls(**data)


def build_hamiltonian(cfg: ExperimentConfig) -> PauliHamiltonian:
    if cfg.model == "tfi":
        ham = build_tfi(cfg.n_sites, cfg.model_parameter)
    elif cfg.model == "j1j2":
        ham = build_j1j2(cfg.n_sites, cfg.model_parameter)
    else:
        ham = load_pauli_file(cfg.pauli_file)
        if ham.n_sites != cfg.n_sites:
            raise ValueError(f"file declares {ham.n_sites} sites but config has {cfg.n_sites}")
    return marshall_transform(ham) if cfg.use_marshall else ham


# ---------------------------------------------------------------------------
# run records
# ---------------------------------------------------------------------------

def build_id() -> str:
    """Content hash of the package sources."""
    digest = hashlib.sha256()
    for path in sorted(Path(__file__).parent.glob("*.py")):
        digest.update(path.name.encode())
        digest.update(path.read_bytes())
    return digest.hexdigest()[:12]


def thread_count() -> int:
    info = threadpoolctl.threadpool_info()
    return max((int(i.get("num_threads", 1)) for i in info), default=1)


def run_metadata() -> dict:
    return {
        "host": platform.node(),
        "machine": platform.machine(),
        "processor": platform.processor(),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "cpu_count": os.cpu_count(),
        "threads": thread_count(),
        "build_id": build_id(),
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
    }


@dataclass
class RunRecord:
    config: dict
    seed: int
    e0: Optional[float]
    b: float
    rows: list = field(default_factory=list)
    n_conv: Optional[int] = None
    failed: bool = False
    error: Optional[str] = None
    final_params: Optional[Rbm] = None
    metadata: dict = field(default_factory=dict)

    @property
    def converged(self) -> bool:
        return self.n_conv is not None

    @property
    def n_epochs(self) -> int:
        return len(self.rows)

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows], dtype=float)

    @property
    def energies(self) -> np.ndarray:
        return self.column("energy_re")

    @property
    def t_s(self) -> np.ndarray:
        return self.column("t_s_seconds")

    @property
    def t_u(self) -> np.ndarray:
        return self.column("t_u_seconds")

    @property
    def T_u(self) -> float:
        return float(np.sum(self.t_u))

    @property
    def T(self) -> float:
        return float(np.sum(self.t_s) + np.sum(self.t_u))

    def eps_rel(self, e0: Optional[float] = None) -> np.ndarray:
        e0 = self.e0 if e0 is None else e0
        if e0 is None:
            return np.full(self.n_epochs, np.nan)
        return np.abs(e0 - self.energies) / abs(e0)

    def summary(self) -> dict:
        return {
            "config": self.config,
            "seed": self.seed,
            "e0": self.e0,
            "b": self.b,
            "n_conv": self.n_conv,
            "converged": self.converged,
            "n_epochs": self.n_epochs,
            "T_u": self.T_u,
            "T": self.T,
            "failed": self.failed,
            "error": self.error,
            "final_energy": float(self.energies[-1]) if self.rows else None,
            "params": None if self.final_params is None else self.final_params.to_dict(),
            "metadata": self.metadata,
        }


def _diagnostic_fields(diag: dict) -> dict:
    lam = diag.get("lambda0")
    return {
        "kappa": diag.get("kappa"),
        "lambda0_re": None if lam is None else float(np.real(lam)),
        "lambda0_im": None if lam is None else float(np.imag(lam)),
        "c_abs": diag.get("c_abs"),
        "ess": diag.get("ess_chosen"),
        "cg_iterations": diag.get("cg_iterations"),
        "skipped": int(bool(diag.get("skipped", False))),
    }


def _initial_wavefunction(cfg: ExperimentConfig, seq: np.random.SeedSequence) -> Rbm:
    return init_params(np.random.default_rng(seq), cfg.init_scale, cfg.n_sites, cfg.alpha,
                       cfg.symmetric, cfg.visible_bias)


def train(cfg: ExperimentConfig, seed: Optional[int] = None, e0: Optional[float] = None,
          progress=None) -> RunRecord:
    """Run the sample / estimate / solve / update loop for one seed.

    ``e0`` (or ``cfg.reference_energy``) enables the relative-error column and
    early stopping; when neither is given and the system is small enough the
    exact ground energy is computed.
    """
    cfg.validate()
    seed = int(cfg.seeds[0] if seed is None else seed)
    ham = build_hamiltonian(cfg)
    sector = cfg.hilbert_sector()
    if e0 is None:
        e0 = cfg.reference_energy
    if e0 is None and cfg.n_sites <= DEFAULT_MAX_SITES:
        e0 = exact_ground_state(ham, sector, with_vector=False).E0
    record = RunRecord(config=cfg.to_dict(), seed=seed, e0=e0, b=cfg.b, metadata=run_metadata())
    init_seq, chain_seq = np.random.SeedSequence(seed).spawn(2)
    rbm = _initial_wavefunction(cfg, init_seq)
    smp = cfg.sampler_config()
    use_lm = cfg.optimizer == "lm"
    states = None
    try:
        for epoch in range(1, cfg.epochs + 1):
            t0 = time.perf_counter()
            if cfg.exact_sampling:
                batch = exact_batch(rbm, cfg.n_sites, sector)
            else:
                batch = run_chain(rbm, smp, ham, states=states, seed=chain_seq)
                states = batch.chains
            if cfg.sampling_delay:
                time.sleep(cfg.sampling_delay)
            t_s = time.perf_counter() - t0

            t1 = time.perf_counter()
            compute_local_quantities(batch, ham, rbm, with_eloc_derivs=use_lm)
            sr_sys = assemble_sr(batch)
            if use_lm:
                result = lm_step(assemble_lm(batch, sr_sys), cfg.lm, batch, rbm, ham)
            else:
                result = sr_step(sr_sys, cfg.sr)
            t_u = time.perf_counter() - t1

            w = batch.mean_weights
            energy = float(sr_sys.energy.real)
            var = float(w @ np.abs(batch.eloc - sr_sys.energy) ** 2)
            eps = relative_error(energy, e0) if e0 else float("nan")
            row = {
                "epoch": epoch,
                "energy_re": energy,
                "energy_var": var,
                "eps_rel": eps,
                "accept_rate": float(batch.accept_rate),
                "t_s_seconds": t_s,
                "t_u_seconds": t_u,
                **_diagnostic_fields(result.diagnostics),
            }
            record.rows.append(row)
            if progress is not None:
                progress(row)

            new_params = rbm.params + result.delta
            if not np.all(np.isfinite(new_params)):
                raise FloatingPointError(f"non-finite parameters after epoch {epoch}")
            rbm = rbm.with_params(new_params)
            if record.n_conv is None and eps <= cfg.b:
                record.n_conv = epoch
                if cfg.early_stop:
                    break
    except Exception as exc:  # partial record, flagged
        log.warning("run failed at epoch %d: %s", len(record.rows) + 1, exc)
        record.failed = True
        record.error = f"{type(exc).__name__}: {exc}"
    record.final_params = rbm
    return record


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def first_below(eps: Iterable[float], b: float) -> Optional[int]:
    """1-indexed position of the first value <= b."""
    for i, value in enumerate(eps, start=1):
        if value <= b:
            return i
    return None


def convergence_epoch(record: RunRecord, e0: Optional[float] = None, b: float = 2e-3) -> Optional[int]:
    e0 = record.e0 if e0 is None else e0
    if e0 is None or e0 == 0:
        raise ValueError("convergence needs a non-zero reference energy")
    return first_below(record.eps_rel(e0), b)


@dataclass(frozen=True)
class Reliability:
    ratio: float
    lower: float
    upper: float
    n_converged: int
    n_runs: int


def convergence_ratio(n_converged: int, n_runs: int) -> Reliability:
    """Fraction converged with a Wald 2-sigma interval clipped to [0, 1]."""
    if n_runs <= 0:
        raise ValueError("no runs")
    p = n_converged / n_runs
    half = 2.0 * math.sqrt(p * (1.0 - p) / n_runs)
    return Reliability(p, max(0.0, p - half), min(1.0, p + half), n_converged, n_runs)


def reliability(records: Sequence[RunRecord], e0: Optional[float] = None, b: float = 2e-3) -> Reliability:
    if not records:
        raise ValueError("no records")
    n_ok = sum(convergence_epoch(r, e0, b) is not None for r in records)
    return convergence_ratio(n_ok, len(records))


def transition_time(n_conv_lm: float, t_u_lm: float, n_conv_sr: float, t_u_sr: float) -> float:
    """Per-epoch sampling time at which both optimizers need the same total time."""
    if n_conv_sr == n_conv_lm:
        raise ValueError("transition time undefined for equal epoch counts")
    return (n_conv_lm * t_u_lm - n_conv_sr * t_u_sr) / (n_conv_sr - n_conv_lm)


def aggregate_epochs(values: Sequence[float], how: str = "mean") -> float:
    values = np.asarray(values, dtype=float)
    if how == "mean":
        return float(np.mean(values))
    if how == "median":
        return float(np.median(values))
    raise ValueError(f"unknown aggregate {how!r}")


def total_times(record: RunRecord, extra_sampling: float = 0.0) -> tuple[float, float]:
    """(T_u, T) with an optional extra sampling cost per executed epoch."""
    return record.T_u, record.T + extra_sampling * record.n_epochs


@dataclass(frozen=True)
class PhaseRow:
    n_sites: int
    parameter: float
    dT_u: float
    dT: float
    complete: bool


def phase_diagram(cells: Mapping[tuple, Mapping[str, Optional[RunRecord]]],
                  extra_sampling: float = 0.0) -> list[PhaseRow]:
    """Signed SR-minus-LM time differences per (N, parameter) cell; positive favors LM."""
    rows = []
    for (n_sites, param), pair in sorted(cells.items()):
        sr, lm = pair.get("sr"), pair.get("lm")
        if sr is None or lm is None:
            rows.append(PhaseRow(n_sites, param, float("nan"), float("nan"), False))
            continue
        tu_sr, t_sr = total_times(sr, extra_sampling)
        tu_lm, t_lm = total_times(lm, extra_sampling)
        rows.append(PhaseRow(n_sites, param, tu_sr - tu_lm, t_sr - t_lm, True))
    return rows


def write_phase_csv(rows: Sequence[PhaseRow], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["N", "param", "dT_u", "dT", "complete"])
        for r in rows:
            writer.writerow([r.n_sites, r.parameter, r.dT_u, r.dT, int(r.complete)])


# ---------------------------------------------------------------------------
# files
# ---------------------------------------------------------------------------

def output_dir(default: str = "runs") -> Path:
    return Path(os.environ.get(ENV_OUTPUT_DIR, default))


def run_name(record: RunRecord) -> str:
    c = record.config
    param = c.get("h") if c["model"] == "tfi" else c.get("j2")
    ptxt = "" if param is None and c["model"] == "pauli" else f"_p{1.0 if param is None else param:g}"
    return f"{c['model']}_N{c['n_sites']}{ptxt}_{c['optimizer']}_s{record.seed}"


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_run(record: RunRecord, directory) -> tuple[Path, Path]:
    """Write ``<name>.csv`` (per-epoch rows) and ``<name>.json`` (summary)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    name = run_name(record)
    csv_path = directory / f"{name}.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RUN_COLUMNS + DIAG_COLUMNS)
        for row in record.rows:
            writer.writerow([_fmt(row.get(col)) for col in RUN_COLUMNS + DIAG_COLUMNS])
    json_path = directory / f"{name}.json"
    json_path.write_text(json.dumps(record.summary(), indent=2))
    return csv_path, json_path


def read_run(json_path) -> RunRecord:
    """Rebuild a record from a summary JSON and its sibling CSV."""
    json_path = Path(json_path)
    summary = json.loads(json_path.read_text())
    rows = []
    with open(json_path.with_suffix(".csv"), newline="") as fh:
        for raw in csv.DictReader(fh):
            row = {}
            for key, value in raw.items():
                if value == "":
                    row[key] = None
                elif key in ("epoch", "cg_iterations", "skipped"):
                    row[key] = int(value)
                else:
                    row[key] = float(value)
            rows.append(row)
    params = summary.get("params")
    return RunRecord(
        config=summary["config"], seed=summary["seed"], e0=summary["e0"], b=summary["b"],
        rows=rows, n_conv=summary["n_conv"], failed=summary["failed"], error=summary["error"],
        final_params=None if params is None else Rbm.from_dict(params),
        metadata=summary.get("metadata", {}),
    )


def load_config(path) -> ExperimentConfig:
    import yaml  # JSON is a YAML subset

    data = yaml.safe_load(Path(path).read_text()) or {}
    return ExperimentConfig.from_dict(data)


# ---------------------------------------------------------------------------
# sweeps and reports
# ---------------------------------------------------------------------------

SWEEPABLE = ("n_sites", "h", "j2", "optimizer")


def sweep(cfg: ExperimentConfig, grid: Mapping[str, Sequence], seeds: Optional[Sequence[int]] = None,
          directory=None, progress=None) -> list[RunRecord]:
    """Train every (grid point, seed) combination; records are written when
    ``directory`` is given."""
    bad = set(grid) - set(SWEEPABLE)
    if bad:
        raise ValueError(f"cannot sweep over {sorted(bad)}")
    seeds = list(cfg.seeds if seeds is None else seeds)
    keys = list(grid)
    records = []
    for values in itertools.product(*(grid[k] for k in keys)):
        point = dataclasses.replace(cfg, **dict(zip(keys, values)))
        for seed in seeds:
            rec = train(point, seed)
            records.append(rec)
            if directory is not None:
                write_run(rec, directory)
            if progress is not None:
                progress(rec)
    return records


def _group_key(rec: RunRecord) -> tuple:
    c = rec.config
    param = c.get("h") if c["model"] == "tfi" else c.get("j2") if c["model"] == "j1j2" else None
    if param is None and c["model"] == "tfi":
        param = 1.0
    if param is None and c["model"] == "j1j2":
        param = 0.0
    return c["model"], c["n_sites"], param


def report(records: Sequence[RunRecord], b: float = 2e-3, how: str = "mean") -> dict:
    """Reliability table per (model, N, parameter, optimizer), plus phase
    diagram and transition times for cells that have both optimizers."""
    groups: dict = {}
    for rec in records:
        groups.setdefault(_group_key(rec) + (rec.config["optimizer"],), []).append(rec)
    table = []
    cell_stats: dict = {}
    for key in sorted(groups, key=lambda k: tuple(str(v) for v in k)):
        recs = groups[key]
        usable = [r for r in recs if r.e0]
        n_conv = [convergence_epoch(r, None, b) for r in usable]
        conv = [n for n in n_conv if n is not None]
        rel = convergence_ratio(len(conv), len(usable)) if usable else None
        t_u_epoch = [r.T_u / r.n_epochs for r in recs if r.n_epochs]
        row = {
            "model": key[0], "N": key[1], "param": key[2], "optimizer": key[3],
            "runs": len(recs),
            "converged": len(conv),
            "c_r": None if rel is None else rel.ratio,
            "c_r_lower": None if rel is None else rel.lower,
            "c_r_upper": None if rel is None else rel.upper,
            "n_conv_mean": aggregate_epochs(conv, "mean") if conv else None,
            "n_conv_median": aggregate_epochs(conv, "median") if conv else None,
            "t_u_per_epoch": float(np.mean(t_u_epoch)) if t_u_epoch else None,
            "T_u_mean": float(np.mean([r.T_u for r in recs])),
            "T_mean": float(np.mean([r.T for r in recs])),
        }
        table.append(row)
        cell_stats[key] = row
    cells = {}
    for (model, n, param, opt), row in cell_stats.items():
        cells.setdefault((model, n, param), {})[opt] = row
    phase = []
    for (model, n, param), pair in sorted(cells.items(), key=lambda kv: tuple(str(v) for v in kv[0])):
        sr, lm = pair.get("sr"), pair.get("lm")
        complete = sr is not None and lm is not None
        entry = {"model": model, "N": n, "param": param, "complete": complete,
                 "dT_u": None, "dT": None, "t_s_trans": None}
        if complete:
            entry["dT_u"] = sr["T_u_mean"] - lm["T_u_mean"]
            entry["dT"] = sr["T_mean"] - lm["T_mean"]
            n_sr = sr[f"n_conv_{how}"]
            n_lm = lm[f"n_conv_{how}"]
            if n_sr is not None and n_lm is not None and n_sr != n_lm:
                entry["t_s_trans"] = transition_time(n_lm, lm["t_u_per_epoch"], n_sr, sr["t_u_per_epoch"])
        phase.append(entry)
    return {"reliability": table, "phase_diagram": phase}


def load_records(directory) -> list[RunRecord]:
    return [read_run(p) for p in sorted(Path(directory).glob("*.json"))]


def apply_thread_limit(n: Optional[int] = None):
    """Limit BLAS / OpenMP threads from ``n`` or the environment; returns the limiter."""
    if n is None:
        env = os.environ.get(ENV_THREADS)
        n = int(env) if env else None
    if n is None:
        return None
    return threadpoolctl.threadpool_limits(limits=n)
