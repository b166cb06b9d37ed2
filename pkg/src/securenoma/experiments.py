"""Monte Carlo sweeps over network parameters, summaries, CSV/SVG/JSON export."""
from __future__ import annotations

import csv
import io
import json
import logging
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import SCHEME_NOTES, eigen_tdma, solve_scheme, tdma_rank_one, verify_solution
from .config import Scenario
from .extraction import RandomizationFailure, extract_beamformers
from .model import generate_channels
from .sca import Scheme, TdmaSolution, scheme_power

log = logging.getLogger(__name__)

SWEEPS = ("Ks", "gamma_P", "iterations")

PRESETS = {
    "fig2a": {"sweep": "Ks", "values": [1, 2, 3, 4],
              "schemes": [Scheme.NOMA_JAMMING, Scheme.NOMA_NOJAM, Scheme.OMA_TDMA]},
    "fig2b": {"sweep": "iterations", "values": None,
              "schemes": [Scheme.NOMA_JAMMING, Scheme.NOMA_NOJAM, Scheme.OMA_TDMA]},
    "fig2c": {"sweep": "gamma_P", "values": [0.5, 1.0, 1.5, 2.0, 2.5],
              "schemes": [Scheme.NOMA_JAMMING, Scheme.NOMA_NOJAM]},
}

# Version 1 of the per-run CSV schema; column order is part of the contract.
CSV_COLUMNS = (
    "experiment", "sweep", "value", "trial", "seed", "scheme", "status", "sca_status",
    "objective_w", "extracted_w", "extraction", "verified", "iterations", "restarts",
    "max_rank_ratio", "margin_C1", "margin_C2", "margin_C3", "margin_C4", "margin_C5", "trace_w",
)
SUMMARY_COLUMNS = (
    "sweep", "value", "scheme", "trials", "converged", "feasibility_rate", "paired",
    "mean_w", "median_w", "ci_low_w", "ci_high_w",
)


@dataclass
class ExperimentConfig:
    scenario: Scenario = field(default_factory=Scenario)
    sweep: str = "Ks"
    values: list = field(default_factory=lambda: [1, 2, 3, 4])
    trials: int = 100
    schemes: list = field(default_factory=lambda: list(Scheme))
    master_seed: int = 0
    out_dir: str = "results"
    name: str = "custom"
    extract: bool = True
    workers: int = 1
    config_path: str | None = None

    def __post_init__(self):
        if self.sweep not in SWEEPS:
            raise ValueError(f"sweep must be one of {SWEEPS}")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        self.schemes = [Scheme(s) for s in self.schemes]
        if not self.schemes:
            raise ValueError("at least one scheme is required")
        if self.sweep == "iterations" and not self.values:
            self.values = [self.scenario.topology.Ks]
        if not self.values or any(b <= a for a, b in zip(self.values, self.values[1:])):
            raise ValueError("sweep values must be nonempty and strictly increasing")

    def scenario_at(self, value) -> Scenario:
        if self.sweep == "gamma_P":
            return self.scenario.with_gamma_P(value)
        return self.scenario.with_Ks(int(value))

    def to_dict(self) -> dict:
        return {"name": self.name, "sweep": self.sweep, "values": list(self.values),
                "trials": self.trials, "schemes": [s.value for s in self.schemes],
                "master_seed": self.master_seed, "out_dir": str(self.out_dir),
                "extract": self.extract, "config_path": self.config_path,
                "scenario": self.scenario.to_dict()}


@dataclass
class RunRecord:
    scheme: str
    sweep: str
    value: float
    trial: int
    seed: int
    status: str                        # converged | infeasible | failed
    objective: float | None            # watts, present iff converged
    iterations: int
    rank_ratios: dict = field(default_factory=dict)
    margins: dict = field(default_factory=dict)
    wall_time: float = 0.0
    sca_status: str = ""
    restarts: int = 0
    extracted: float | None = None
    extraction: str = ""
    verified: bool | None = None
    trace: list = field(default_factory=list)
    experiment: str = "custom"
    notes: list = field(default_factory=list)


def trial_seed(master_seed: int, point: int, trial: int) -> int:
    """Channel seed shared by every scheme at one (point, trial)."""
    return int(np.random.SeedSequence([int(master_seed), int(point), int(trial)]).generate_state(1)[0])


def _family_minima(report) -> dict:
    out = {}
    for c in report.checks:
        fam = c.constraint[:2]
        out[fam] = min(out.get(fam, np.inf), c.margin)
    return out


def run_single(scenario: Scenario, scheme: Scheme, seed: int, extract: bool = True) -> dict:
    """Solve one instance with one scheme; failures become records, never exceptions."""
    t0 = time.perf_counter()
    out = {"status": "failed", "objective": None, "iterations": 0, "rank_ratios": {}, "margins": {},
           "sca_status": "", "restarts": 0, "extracted": None, "extraction": "", "verified": None,
           "trace": [], "notes": []}
    try:
        channels = generate_channels(seed, scenario.topology, scenario.variances, scenario.noise_w)
        reqs, eh = scenario.requirements(), scenario.eh()
        res = solve_scheme(scheme, channels, reqs, eh, scenario.settings, seed)
        out.update(sca_status=res.status, iterations=res.iterations, restarts=res.restarts,
                   trace=list(res.objective_trace), notes=list(res.notes))
        if res.status == "converged":
            out["status"] = "converged"
            out["objective"] = res.objective
        elif res.status == "infeasible":
            out["status"] = "infeasible"
        if res.solution is not None:
            final = res.solution
            if extract:
                final, method = _extract(res.solution, channels, reqs, eh, scenario, seed)
                out["extraction"] = method
                if method != "relaxed":
                    out["extracted"] = scheme_power(final)
            report = verify_solution(channels, final, reqs, eh)
            out["verified"] = report.feasible
            out["margins"] = _family_minima(report)
            out["rank_ratios"] = dict(verify_solution(channels, res.solution, reqs, eh).rank_ratios)
    except Exception as exc:  # a crashed run is recorded, the sweep continues
        log.exception("run failed")
        out["notes"].append(f"error: {exc!r}")
        out["status"] = "failed"
        out["objective"] = None
    out["wall_time"] = time.perf_counter() - t0
    return out


def _extract(sol, channels, reqs, eh, scenario: Scenario, seed):
    s = scenario.settings
    if isinstance(sol, TdmaSolution):
        if tdma_rank_one(sol, s.rank_tolerance):
            return eigen_tdma(sol), "eigen"
        return sol, "relaxed"
    try:
        bf = extract_beamformers(sol, channels, reqs, eh, s.rank_tolerance, s.randomization_trials, seed)
    except RandomizationFailure:
        return sol, "relaxed"
    return bf.covariances(), bf.method


def _job(args):
    scenario, scheme, seed, extract = args
    return run_single(scenario, scheme, seed, extract)


def run_sweep(config: ExperimentConfig, progress=None) -> list[RunRecord]:
    """Every (point, trial, scheme); all schemes at one (point, trial) share one channel draw."""
    jobs, keys = [], []
    for p, value in enumerate(config.values):
        scen = config.scenario_at(value)
        for trial in range(config.trials):
            seed = trial_seed(config.master_seed, p, trial)
            for scheme in config.schemes:
                jobs.append((scen, scheme, seed, config.extract))
                keys.append((p, value, trial, seed, scheme))
    if config.workers > 1:
        with ProcessPoolExecutor(config.workers) as pool:
            results = list(pool.map(_job, jobs))
    else:
        results = []
        for n, job in enumerate(jobs):
            results.append(_job(job))
            if progress:
                progress(n + 1, len(jobs))
    order = {s: n for n, s in enumerate(config.schemes)}
    records = []
    for (p, value, trial, seed, scheme), res in sorted(zip(keys, results),
                                                       key=lambda kv: (kv[0][0], kv[0][2], order[kv[0][4]])):
        records.append(RunRecord(scheme=scheme.value, sweep=config.sweep, value=value, trial=trial,
                                 seed=seed, experiment=config.name, **res))
    return records


# ---------------------------------------------------------------------------
# summaries


def bootstrap_ci(x, resamples: int = 1000, level: float = 0.95, seed: int = 0):
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        return float("nan"), float("nan")
    rng = np.random.default_rng(seed)
    means = x[rng.integers(0, x.size, size=(resamples, x.size))].mean(axis=1)
    lo, hi = np.quantile(means, [(1 - level) / 2, (1 + level) / 2])
    return float(lo), float(hi)


def paired_objectives(records, value=None, schemes=None) -> dict[str, np.ndarray]:
    """Objectives of the trials where every listed scheme converged, aligned by trial."""
    recs = [r for r in records if value is None or r.value == value]
    schemes = schemes or sorted({r.scheme for r in recs})
    schemes = [Scheme(s).value for s in schemes]
    by = {}
    for r in recs:
        by.setdefault((r.value, r.trial), {})[r.scheme] = r
    keys = sorted(k for k, d in by.items()
                  if all(s in d and d[s].status == "converged" for s in schemes))
    return {s: np.array([by[k][s].objective for k in keys]) for s in schemes}


def summarize(records: list[RunRecord]) -> list[dict]:
    """Per (point, scheme): counts, feasibility rate, and statistics over paired converged runs."""
    if not records:
        return []
    schemes = list(dict.fromkeys(r.scheme for r in records))
    values = list(dict.fromkeys(r.value for r in records))
    rows = []
    for v in values:
        at = [r for r in records if r.value == v]
        paired = paired_objectives(at, v, [s for s in schemes if any(r.scheme == s for r in at)])
        for s in schemes:
            mine = [r for r in at if r.scheme == s]
            if not mine:
                continue
            conv = sum(r.status == "converged" for r in mine)
            x = paired.get(s, np.empty(0))
            lo, hi = bootstrap_ci(x)
            rows.append({
                "sweep": mine[0].sweep, "value": v, "scheme": s, "trials": len(mine), "converged": conv,
                "feasibility_rate": conv / len(mine), "paired": int(x.size),
                "mean_w": float(x.mean()) if x.size else float("nan"),
                "median_w": float(np.median(x)) if x.size else float("nan"),
                "ci_low_w": lo, "ci_high_w": hi,
            })
    return rows


def trace_summary(records: list[RunRecord]) -> dict[str, dict[str, np.ndarray]]:
    """Median and interquartile band of objective traces per scheme.

    Shorter traces are held at their final value so every iteration index
    averages over the same runs.
    """
    out = {}
    for s in dict.fromkeys(r.scheme for r in records):
        traces = [r.trace for r in records if r.scheme == s and r.status == "converged" and r.trace]
        if not traces:
            continue
        n = max(len(t) for t in traces)
        T = np.array([list(t) + [t[-1]] * (n - len(t)) for t in traces])
        q25, med, q75 = np.quantile(T, [0.25, 0.5, 0.75], axis=0)
        out[s] = {"iteration": np.arange(1, n + 1), "median": med, "q25": q25, "q75": q75}
    return out


# ---------------------------------------------------------------------------
# export


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return "" if np.isnan(x) else repr(x)
    return str(x)


def record_row(r: RunRecord) -> list[str]:
    m = r.margins
    return [_fmt(v) for v in (
        r.experiment, r.sweep, r.value, r.trial, r.seed, r.scheme, r.status, r.sca_status,
        r.objective, r.extracted, r.extraction, r.verified, r.iterations, r.restarts,
        max(r.rank_ratios.values()) if r.rank_ratios else None,
        m.get("C1"), m.get("C2"), m.get("C3"), m.get("C4"), m.get("C5"),
    )] + [";".join(repr(float(x)) for x in r.trace)]


def records_csv(records: list[RunRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in records:
        w.writerow(record_row(r))
    return buf.getvalue()


def summary_csv(summary: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_COLUMNS)
    for row in summary:
        w.writerow([_fmt(row[c]) for c in SUMMARY_COLUMNS])
    return buf.getvalue()


def _svg_settings():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "securenoma"
    plt.rcParams["svg.fonttype"] = "none"
    return plt


def plot_sweep(summary: list[dict], path, xlabel: str):
    """Mean minimum power (mW) per scheme; each point is an SVG group with id pt-<scheme>-<value>."""
    plt = _svg_settings()
    fig, ax = plt.subplots(figsize=(4.5, 3.5))
    for s in dict.fromkeys(r["scheme"] for r in summary):
        rows = [r for r in summary if r["scheme"] == s]
        x = np.array([r["value"] for r in rows], dtype=float)
        y = np.array([r["mean_w"] for r in rows]) * 1e3
        lo = np.array([r["ci_low_w"] for r in rows]) * 1e3
        hi = np.array([r["ci_high_w"] for r in rows]) * 1e3
        (line,) = ax.plot(x, y, "-", label=s)
        ax.fill_between(x, lo, hi, color=line.get_color(), alpha=0.15, linewidth=0)
        for xi, yi in zip(x, y):
            pt = ax.plot([xi], [yi], "o", color=line.get_color(), markersize=4)[0]
            pt.set_gid(f"pt-{s}-{_fmt(float(xi))}")
    ax.set_xlabel(xlabel)
    ax.set_ylabel("minimum transmit power (mW)")
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def plot_traces(traces: dict, path):
    plt = _svg_settings()
    fig, ax = plt.subplots(figsize=(4.5, 3.5))
    for s, d in traces.items():
        (line,) = ax.plot(d["iteration"], d["median"] * 1e3, "-o", markersize=3, label=s)
        ax.fill_between(d["iteration"], d["q25"] * 1e3, d["q75"] * 1e3, color=line.get_color(),
                        alpha=0.15, linewidth=0)
        for i, yi in zip(d["iteration"], d["median"]):
            ax.plot([i], [yi * 1e3], ".", color=line.get_color())[0].set_gid(f"pt-{s}-{int(i)}")
    ax.set_xlabel("iteration")
    ax.set_ylabel("minimum transmit power (mW)")
    ax.grid(alpha=0.3)
    if traces:
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def software_versions() -> dict:
    import cvxpy
    import scipy

    out = {"securenoma": __version__, "python": platform.python_version(), "numpy": np.__version__,
           "scipy": scipy.__version__, "cvxpy": cvxpy.__version__}
    try:
        import clarabel

        out["clarabel"] = getattr(clarabel, "__version__", "unknown")
    except ImportError:
        pass
    return out


def export(records: list[RunRecord], summary: list[dict], config: ExperimentConfig, out_dir=None) -> dict:
    """Write records.csv, summary.csv, timings.csv, metadata.json and an SVG plot; return the paths."""
    out = Path(out_dir or config.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    paths = {"records": out / "records.csv", "summary": out / "summary.csv",
             "timings": out / "timings.csv", "metadata": out / "metadata.json",
             "plot": out / f"{config.name}.svg"}
    paths["records"].write_text(records_csv(records))
    paths["summary"].write_text(summary_csv(summary))
    # wall time varies run to run, so it stays out of the deterministic records file
    paths["timings"].write_text("value,trial,scheme,wall_time_s\n" + "".join(
        f"{_fmt(r.value)},{r.trial},{r.scheme},{r.wall_time:.3f}\n" for r in records))
    if config.sweep == "iterations":
        plot_traces(trace_summary(records), paths["plot"])
    else:
        label = {"Ks": "number of secondary EHRs", "gamma_P": "PU secrecy-rate target (bits/s/Hz)"}
        plot_sweep(summary, paths["plot"], label[config.sweep])
    meta = {
        "config": config.to_dict(),
        "seeds": sorted({(r.value, r.trial, r.seed) for r in records}),
        "software": software_versions(),
        "schemes": {s.value: SCHEME_NOTES[s] for s in config.schemes},
        "csv_columns": list(CSV_COLUMNS),
        "csv_schema_version": 1,
        "counts": {st: sum(r.status == st for r in records) for st in ("converged", "infeasible", "failed")},
        "notes": [
            "objective_w is the converged relaxed objective; extracted_w is the power after "
            "rank-one extraction (eigenvector or Gaussian randomization)",
            "summary statistics use only trials where every scheme at that point converged",
        ],
    }
    paths["metadata"].write_text(json.dumps(meta, indent=2, default=_json_default) + "\n")
    return paths


def _json_default(x):
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, np.ndarray):
        return x.tolist()
    return str(x)


def records_to_dicts(records) -> list[dict]:
    return [asdict(r) for r in records]
