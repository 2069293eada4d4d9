"""Seeded, repeatable experiment scenarios with CSV/JSON outputs.

A scenario maps a configuration plus a per-run seed to a trajectory log.
Runs are repeated ``repeats`` times (run i uses seed master_seed + i),
optionally across a process pool; aggregation is order-independent, so the
emitted files are byte-identical regardless of the parallelism degree.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .flows import StepControls, integrate
from .manifold import FactoredPoint, GroundTruth, frob
from .rgd import GDConfig, run_rgd
from .spurious import (
    haar_orthonormal,
    make_ground_truth,
    perturb_near,
    sample_spurious_tuple,
    spurious_point,
)

SCENARIOS = (
    "example_1_1",
    "escape_s_r1",
    "escape_s_r2",
    "global_fixed",
    "global_varying",
    "flow_dlra",
    "flow_rescaled",
)

_GD_SCENARIO_COLUMNS = ("step", "dist", "sigma_r", "grad_norm")
_FLOW_SCENARIO_COLUMNS = ("t", "dist", "sigma_r", "grad_norm")


def default_eigenvalues(r: int) -> tuple[float, ...]:
    """Default target spectrum r, r-1, ..., 1: distinct and well conditioned."""
    return tuple(float(r - i) for i in range(r))


@dataclass(frozen=True)
class ExperimentConfig:
    """Declarative description of one experiment.

    ``epsilon`` scales the perturbation radius relative to the Frobenius
    norm of the spurious point in the escape scenarios.  ``eigenvalues``
    defaults to the decreasing integers r..1.  All fields round-trip
    through JSON.
    """

    scenario: str
    n: int = 100
    r: int = 5
    eigenvalues: tuple[float, ...] | None = None
    alpha: float = 0.2
    mode: str = "fixed"
    epsilon: float = 1e-2
    repeats: int = 1
    max_iters: int = 5000
    master_seed: int = 0
    tol_dist: float = 1e-6
    dt: float = 1e-2
    t_end: float = 5.0
    out_dir: str | None = None
    workers: int = 1

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}; choose from {SCENARIOS}")
        if self.scenario == "example_1_1":
            # The closed-form setting is pinned to its 3-by-3 geometry.
            object.__setattr__(self, "n", 3)
            object.__setattr__(self, "r", 2)
            object.__setattr__(self, "eigenvalues", (2.0, 1.0))
            object.__setattr__(self, "mode", "fixed")
        if self.repeats < 1:
            raise ValueError("repeats must be at least 1")
        if self.scenario.startswith("escape") and self.epsilon <= 0:
            raise ValueError("escape scenarios require a positive epsilon")
        if self.scenario == "escape_s_r2" and self.r < 2:
            raise ValueError("rank-deficit-two escape requires r >= 2")
        eig = self.eigenvalues
        eig = default_eigenvalues(self.r) if eig is None else tuple(float(v) for v in eig)
        object.__setattr__(self, "eigenvalues", eig)
        object.__setattr__(self, "mode", str(self.mode))

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        data = json.loads(text)
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        if "eigenvalues" in data and data["eigenvalues"] is not None:
            data["eigenvalues"] = tuple(data["eigenvalues"])
        return cls(**data)


@dataclass
class RunResult:
    seed: int
    status: str
    records: np.ndarray
    columns: tuple[str, ...]
    terminal: dict


@dataclass
class SummaryReport:
    """Pointwise median/min/max over repeats for each recorded series."""

    config: ExperimentConfig
    columns: tuple[str, ...]
    seeds: list[int]
    statuses: list[str]
    status_counts: dict
    stats: dict            # series name -> {"median": [...], "min": [...], "max": [...]}
    n_steps: int
    terminals: list[dict]
    runs: list[RunResult] = field(repr=False, default_factory=list)


def _shared_ground_truth(cfg: ExperimentConfig) -> GroundTruth:
    # One target per experiment; all repeats share it.
    if cfg.scenario == "example_1_1":
        U = np.eye(3)[:, :2]
        return GroundTruth(U, np.array([2.0, 1.0]))
    return make_ground_truth(cfg.n, cfg.r, cfg.eigenvalues, seed=cfg.master_seed)


def _gd_config(cfg: ExperimentConfig, mode: str, alpha: float) -> GDConfig:
    return GDConfig(alpha=alpha, mode=mode, max_iters=cfg.max_iters, tol_dist=cfg.tol_dist)


def _random_point(gt: GroundTruth, rng: np.random.Generator) -> FactoredPoint:
    """Generic random full-rank point: Haar columns, spectrum near the target's."""
    U = haar_orthonormal(rng, gt.n, gt.r)
    lam = np.sort(rng.uniform(0.5 * gt.d[-1], 1.5 * gt.d[0], gt.r))[::-1]
    return FactoredPoint(U, np.diag(lam))


def _run_gd(init: FactoredPoint, gt: GroundTruth, gd: GDConfig, seed: int,
            extra_ref: np.ndarray | None = None) -> RunResult:
    run = run_rgd(init, gt, gd)
    records, columns = run.records, _GD_SCENARIO_COLUMNS
    if extra_ref is not None:
        # Distance of each logged iterate to a reference matrix is not
        # reconstructible from the standard series; recompute by replay.
        dists = _replay_distances(init, gt, gd, len(run.records), extra_ref)
        records = np.column_stack([records, dists]) if len(records) else records.reshape(0, 5)
        columns = columns + ("dist_limit",)
    terminal = {
        "status": run.status,
        "iters": run.iters,
        "dist": run.terminal_dist,
        "sigma_r": run.terminal_sigma_r,
        "grad_norm": run.terminal_grad_norm,
    }
    return RunResult(seed, run.status, records, columns, terminal)


def _replay_distances(init, gt, gd, count, ref):
    from .rgd import rgd_step

    out, pt = [], init
    for _ in range(count):
        out.append(frob(pt.dense() - ref))
        pt = rgd_step(pt, gt, gd).point
    return np.array(out)


def run_single(cfg: ExperimentConfig, seed: int) -> RunResult:
    """Execute one run of the configured scenario with the given seed."""
    gt = _shared_ground_truth(cfg)
    rng = np.random.default_rng(seed)

    if cfg.scenario == "example_1_1":
        # Exact two-eigenvalue setting: start on the invariant set that
        # captures the top eigenpair but replaces the second one.
        init = FactoredPoint(np.eye(3)[:, [0, 2]], np.diag([2.0, 1.0]))
        limit = np.diag([2.0, 0.0, 0.0])
        return _run_gd(init, gt, _gd_config(cfg, "fixed", cfg.alpha), seed, extra_ref=limit)

    if cfg.scenario in ("escape_s_r1", "escape_s_r2"):
        deficit = 1 if cfg.scenario == "escape_s_r1" else 2
        mask = [True] * (cfg.r - deficit) + [False] * deficit
        sp = spurious_point(gt, mask)
        tup = sample_spurious_tuple(sp, gt, seed=int(rng.integers(2**63)))
        radius = cfg.epsilon * frob(sp.dense())
        init = perturb_near(tup, radius, seed=int(rng.integers(2**63)))
        return _run_gd(init, gt, _gd_config(cfg, cfg.mode, cfg.alpha), seed)

    if cfg.scenario in ("global_fixed", "global_varying"):
        mode = "fixed" if cfg.scenario == "global_fixed" else "varying"
        init = _random_point(gt, rng)
        return _run_gd(init, gt, _gd_config(cfg, mode, cfg.alpha), seed)

    if cfg.scenario in ("flow_dlra", "flow_rescaled"):
        system = "dlra" if cfg.scenario == "flow_dlra" else "rescaled"
        init = _random_point(gt, rng)
        res = integrate(system, init, gt, cfg.t_end, StepControls(dt=cfg.dt))
        last = res.records[-1]
        terminal = {"status": res.status, "t": float(last[0]), "dist": float(last[1]),
                    "sigma_r": float(last[2]), "grad_norm": float(last[3])}
        return RunResult(seed, res.status, res.records, _FLOW_SCENARIO_COLUMNS, terminal)

    raise ValueError(f"unknown scenario {cfg.scenario!r}")


def _run_single_packed(args) -> RunResult:
    text, seed = args
    return run_single(ExperimentConfig.from_json(text), seed)


def run_experiment(cfg: ExperimentConfig) -> SummaryReport:
    """Run all repeats, aggregate pointwise statistics, and emit files.

    Per-run CSVs and the summary pair are written when ``out_dir`` is set.
    Results are deterministic in ``master_seed`` and independent of
    ``workers``.
    """
    seeds = [cfg.master_seed + i for i in range(cfg.repeats)]
    if cfg.workers > 1:
        args = [(cfg.to_json(), s) for s in seeds]
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            runs = list(pool.map(_run_single_packed, args))
    else:
        runs = [run_single(cfg, s) for s in seeds]
    runs.sort(key=lambda r: r.seed)

    columns = runs[0].columns
    n_steps = max((len(r.records) for r in runs), default=0)
    stats = {}
    for j, name in enumerate(columns[1:], start=1):
        med, lo, hi = [], [], []
        for k in range(n_steps):
            vals = np.array([r.records[k, j] for r in runs if len(r.records) > k])
            med.append(float(np.median(vals)))
            lo.append(float(vals.min()))
            hi.append(float(vals.max()))
        stats[name] = {"median": med, "min": lo, "max": hi}

    statuses = [r.status for r in runs]
    counts: dict[str, int] = {}
    for s in statuses:
        counts[s] = counts.get(s, 0) + 1
    report = SummaryReport(
        config=cfg,
        columns=columns,
        seeds=seeds,
        statuses=statuses,
        status_counts=counts,
        stats=stats,
        n_steps=n_steps,
        terminals=[r.terminal for r in runs],
        runs=runs,
    )
    if cfg.out_dir is not None:
        emit_summary(report, cfg.out_dir)
    return report


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _write_csv(path: Path, header: list[str], rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def emit_summary(report: SummaryReport, out_dir) -> list[Path]:
    """Write per-run CSVs, the pointwise summary CSV, and a JSON sidecar.

    The sidecar holds the full configuration (round-trippable through the
    config parser), per-run seeds, statuses, terminal metrics, and package
    versions.  An empty trajectory yields a header-only CSV.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for i, run in enumerate(report.runs):
        p = out / f"run_{i:03d}.csv"
        _write_csv(p, list(run.columns), run.records)
        written.append(p)

    header = ["step"]
    for name in report.columns[1:]:
        header += [f"{name}_median", f"{name}_min", f"{name}_max"]
    rows = []
    for k in range(report.n_steps):
        row = [float(k)]
        for name in report.columns[1:]:
            s = report.stats[name]
            row += [s["median"][k], s["min"][k], s["max"][k]]
        rows.append(row)
    summary_csv = out / "summary.csv"
    _write_csv(summary_csv, header, rows)
    written.append(summary_csv)

    sidecar = {
        "config": json.loads(report.config.to_json()),
        "seeds": report.seeds,
        "statuses": report.statuses,
        "status_counts": report.status_counts,
        "terminals": report.terminals,
        "versions": {"spsdflow": __version__, "numpy": np.__version__},
    }
    summary_json = out / "summary.json"
    summary_json.write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n",
                            encoding="utf-8", newline="\n")
    written.append(summary_json)
    return written
