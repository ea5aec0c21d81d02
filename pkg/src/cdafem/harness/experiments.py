"""
Experiment runner: builds meshes and spaces from a config, runs every
sweep combination and writes CSV artifacts plus a JSON manifest.

Output layout (``out_dir``)::

    series_<tag>.csv   one error series per timed run
    rates.csv          RateTable over the swept resolution (n or dt)
    mu_report.csv      pairwise relative differences between mu values
    decay.csv          decay fits per run
    projections.csv    (projection problems) n, h, mu, l2, h1 per run
    manifest.json      written last; marks a completed experiment
"""
from __future__ import annotations

import itertools
import json
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from ..drivers.base import RunConfig, TrajectoryTruth
from ..drivers.dns import dns_run
from ..drivers.nse import nse_cda_run
from ..drivers.problems import curl_bump, heat_manufactured, poisson_bump
from ..drivers.projections import cda_poisson_projection, cda_stokes_projection
from ..drivers.scalar import heat_cda_run, transport_cda_run
from ..drivers.stokes import channel_bc, steady_stokes_solve
from ..fem import build_space
from ..mesh import barycentric_refine, identify_periodic_x, shear_channel_mesh, uniform_rect_mesh
from ..observation import build_coarse_grid, build_observation
from .config import ExperimentConfig, resolve_config
from .norms import analytic_error
from .series import NoDecayError, RateTable, convergence_rates, decay_analysis


@dataclass
class ExperimentResult:
    out_dir: str
    files: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    series: dict = field(default_factory=dict)  # tag -> ErrorSeries
    tables: dict = field(default_factory=dict)  # name -> RateTable


def _num(x) -> str:
    if math.isinf(x):
        return "inf"
    return f"{x:g}"


def run_tag(cfg: RunConfig, keys) -> str:
    """File-name tag from the swept keys, e.g. ``n64_mu1e+08``."""
    parts = []
    for k in keys:
        v = getattr(cfg, k)
        parts.append(f"{k}{v}" if k == "n" else f"{k}{_num(v)}")
    return "_".join(parts) or "run"


def unit_square_space(cfg: RunConfig, components: int = 1, degree: int | None = None):
    m = uniform_rect_mesh(cfg.n, cfg.n)
    if cfg.barycentric:
        m = barycentric_refine(m)
    return build_space(m, cfg.degree if degree is None else degree, components)


def observation_for(space, cfg: RunConfig, grid=None):
    """Observation operator for one run; ``mu = inf`` always means direct."""
    mode = "direct" if math.isinf(cfg.mu) else (cfg.mode if cfg.mode != "direct" else None)
    return build_observation(space, cfg.H, mu=cfg.mu, mode=mode, allow_unaligned=cfg.allow_unaligned,
                             grid=grid)


def pairwise_report(series_by_mu: dict, skip: int = 0) -> list:
    """Rows ``(mu_a, mu_b, final_rel_diff, max_rel_diff)``.

    Relative differences are taken against the larger of the two errors;
    ``max_rel_diff`` runs over records after the first ``skip`` steps.
    """
    rows = []
    for (ma, sa), (mb, sb) in itertools.combinations(series_by_mu.items(), 2):
        ea, eb = np.asarray(sa.l2), np.asarray(sb.l2)
        k = min(len(ea), len(eb))
        ea, eb = ea[skip + 1:k], eb[skip + 1:k]
        scale = np.maximum(np.maximum(ea, eb), np.finfo(float).tiny)
        final = abs(sa.final_l2 - sb.final_l2) / max(sa.final_l2, sb.final_l2)
        rows.append((ma, mb, final, float(np.max(np.abs(ea - eb) / scale)) if len(ea) else math.nan))
    return rows


class _Writer:
    def __init__(self, out_dir, result: ExperimentResult):
        self.out_dir = out_dir
        self.result = result

    def path(self, name):
        p = os.path.join(self.out_dir, name)
        self.result.files.append(name)
        return p

    def csv(self, name, header, rows):
        with open(self.path(name), "w") as fh:
            fh.write(",".join(header) + "\n")
            for row in rows:
                fh.write(",".join(repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)
                                  for v in row) + "\n")

    def series(self, tag, s):
        s.to_csv(self.path(f"series_{tag}.csv"))
        self.result.series[tag] = s

    def table(self, name, table: RateTable):
        table.to_csv(self.path(name))
        self.result.tables[name] = table


def _swept(exp: ExperimentConfig):
    return [k for k in ("n", "dt", "H", "mu") if len(exp.sweep[k]) > 1]


def _decay_rows(series: dict):
    rows = []
    for tag, s in series.items():
        try:
            fit = decay_analysis(s)
            rows.append((tag, fit.slope, fit.plateau, fit.onset_step))
        except (NoDecayError, ValueError):
            rows.append((tag, math.nan, math.nan, -1))
    return rows


def _mu_report(w: _Writer, exp, runs, series, skip=0):
    """Pairwise report over runs that differ only in mu."""
    others = [k for k in ("n", "dt", "H") if len(exp.sweep[k]) > 1]
    groups = {}
    for cfg, tag in runs:
        groups.setdefault(tuple(getattr(cfg, k) for k in others), {})[cfg.mu] = series[tag]
    rows = []
    for key, by_mu in groups.items():
        for r in pairwise_report(by_mu, skip=skip):
            rows.append(key + r)
    w.csv("mu_report.csv", [*others, "mu_a", "mu_b", "final_rel_diff", "max_rel_diff"], rows)
    return max((r[-2] for r in rows), default=math.nan)


def _rates(w: _Writer, exp, runs, finals):
    """Rate table over the single swept resolution, if any."""
    for key, res in (("n", lambda c: 1.0 / c.n), ("dt", lambda c: c.dt)):
        if len(exp.sweep[key]) > 1 and len(_swept(exp)) == 1:
            rows = sorted(((res(cfg), finals[tag]) for cfg, tag in runs), reverse=True)
            table = convergence_rates(rows)
            w.table("rates.csv", table)
            return table
    return None


def _heat(exp: ExperimentConfig, w: _Writer, log):
    keys = _swept(exp)
    runs, finals = [], {}
    truth = heat_manufactured(exp.base.kappa)
    spaces = {}
    for cfg in exp.runs():
        tag = run_tag(cfg, keys)
        if cfg.n not in spaces:
            spaces[cfg.n] = unit_square_space(cfg)
        obs = observation_for(spaces[cfg.n], cfg)
        s = heat_cda_run(cfg, obs, truth)
        s.meta.pop("final_state", None)
        log(f"{tag}: final L2 {s.final_l2:.4e} ({s.meta['wall_clock']:.1f} s)")
        w.series(tag, s)
        runs.append((cfg, tag))
        finals[tag] = s.final_l2
    summary = {"final_l2": finals}
    table = _rates(w, exp, runs, finals)
    if table is not None:
        summary["rates"] = list(table.rates)
    if len(exp.sweep["mu"]) > 1:
        summary["mu_max_final_rel_diff"] = _mu_report(w, exp, runs, w.result.series)
    rows = _decay_rows({tag: w.result.series[tag] for _, tag in runs})
    w.csv("decay.csv", ["run", "slope", "plateau", "onset_step"], rows)
    summary["decay"] = {r[0]: {"slope": r[1], "plateau": r[2], "onset_step": r[3]} for r in rows}
    return summary


def projection_errors(problem: str, cfg: RunConfig):
    """``(l2, h1)`` velocity/scalar errors of one nudged projection run."""
    if problem == "poisson_proj":
        space = unit_square_space(cfg)
        field_ = poisson_bump()
        obs = observation_for(space, cfg) if cfg.mu > 0 else None
        u = cda_poisson_projection(field_, space, obs, kappa=cfg.kappa)
    else:
        space = unit_square_space(cfg, components=2)
        pspace = build_space(space.mesh, cfg.degree - 1)
        field_ = curl_bump()
        obs = observation_for(space, cfg) if cfg.mu > 0 else None
        u, _ = cda_stokes_projection(field_, space, pspace, obs, nu=cfg.nu)
    return analytic_error(u, field_, space)


def _projections(exp: ExperimentConfig, w: _Writer, log):
    rows = []
    for cfg in exp.runs():
        if math.isinf(cfg.mu):
            raise ValueError("cda.mu: projection sweeps take finite mu")
        l2, h1 = projection_errors(exp.problem, cfg)
        log(f"n={cfg.n} mu={_num(cfg.mu)}: L2 {l2:.4e} H1 {h1:.4e}")
        rows.append((cfg.n, 1.0 / cfg.n, cfg.mu, l2, h1))
    w.csv("projections.csv", ["n", "h", "mu", "l2_error", "h1_error"], rows)
    summary = {"rates": {}, "spread": {}}
    for mu in exp.sweep["mu"]:
        sel = sorted(((h, l2, h1) for _, h, m, l2, h1 in rows if m == mu), reverse=True)
        if len(sel) > 1:
            t2 = convergence_rates([(h, l2) for h, l2, _ in sel])
            t1 = convergence_rates([(h, h1) for h, _, h1 in sel])
            w.table(f"rates_mu{_num(mu)}.csv", t2)
            summary["rates"][_num(mu)] = {"l2": list(t2.rates[1:]), "h1": list(t1.rates[1:])}
    spread_rows = []
    for n in exp.sweep["n"]:
        errs = [l2 for nn, _, _, l2, _ in rows if nn == n]
        spread_rows.append((n, min(errs), max(errs), max(errs) / min(errs)))
        summary["spread"][str(n)] = max(errs) / min(errs)
    w.csv("spread.csv", ["n", "min_l2", "max_l2", "ratio"], spread_rows)
    return summary


def _transport(exp: ExperimentConfig, w: _Writer, log):
    base = exp.base
    nx, ny = int(exp.mesh.get("nx", 146)), int(exp.mesh.get("ny", 10))
    mesh = shear_channel_mesh(nx, ny)
    vspace = build_space(mesh, 2, 2)
    pspace = build_space(mesh, 1)
    space = vspace.scalar()
    velocity, _ = steady_stokes_solve(vspace, pspace, base.nu, channel_bc(float(exp.physics.get("inflow", 3.0))))
    log(f"Stokes velocity: {vspace.n_dofs + pspace.n_dofs} Taylor-Hood DOFs, max |u| {np.abs(velocity).max():.3f}")
    summary = {}
    for H in exp.sweep["H"]:
        grid = build_coarse_grid(mesh, H, allow_unaligned=base.allow_unaligned)
        dns_cfg = RunConfig("transport", dt=base.dt, T=base.T, kappa=base.kappa, mu=0.0)
        traj, dns_series = dns_run(dns_cfg, w.path(f"dns_H{_num(H)}.snap"), space, velocity=(vspace, velocity))
        log(f"DNS done: {traj.steps} steps")
        truth = TrajectoryTruth(traj)
        by_mu, runs = {}, []
        for cfg in exp.runs():
            if cfg.H != H:
                continue
            tag = run_tag(cfg, _swept(exp) or ["mu"])
            s = transport_cda_run(cfg, observation_for(space, cfg, grid), (vspace, velocity), truth)
            s.meta.pop("final_state", None)
            e = np.asarray(s.l2)
            drop = float(e.max() / e[-1])
            log(f"{tag}: peak {e.max():.3e}, final {e[-1]:.3e}, drop x{drop:.3g}")
            w.series(tag, s)
            by_mu[cfg.mu] = s
            runs.append((cfg, tag))
            summary.setdefault("peak_to_final", {})[tag] = drop
        rows = pairwise_report(by_mu, skip=10)
        w.csv(f"mu_report_H{_num(H)}.csv" if len(exp.sweep["H"]) > 1 else "mu_report.csv",
              ["mu_a", "mu_b", "final_rel_diff", "max_rel_diff"], rows)
        summary.setdefault("mu_report", []).extend([list(r) for r in rows])
    return summary


def _nse(exp: ExperimentConfig, w: _Writer, log):
    base = exp.base
    mesh = identify_periodic_x(uniform_rect_mesh(base.n, base.n))
    vspace = build_space(mesh, 2, 2)
    pspace = build_space(mesh, 1)
    dns_cfg = RunConfig("nse", dt=base.dt, T=base.T, nu=base.nu, mu=0.0)
    started = time.perf_counter()
    traj, _ = dns_run(dns_cfg, w.path("dns.snap"), vspace, pspace=pspace)
    log(f"DNS done: {traj.steps} steps in {time.perf_counter() - started:.0f} s")
    truth = TrajectoryTruth(traj)
    summary = {"final_l2": {}, "early_to_final": {}}
    for cfg in exp.runs():
        tag = run_tag(cfg, _swept(exp) or ["H"])
        s = nse_cda_run(cfg, observation_for(vspace, cfg), truth, pspace)
        s.meta.pop("final_state", None)
        early = s.l2[s.at_time(0.1)]
        log(f"{tag}: L2 at t=0.1 {early:.3e}, final {s.final_l2:.3e}")
        w.series(tag, s)
        summary["final_l2"][tag] = s.final_l2
        summary["early_to_final"][tag] = early / s.final_l2
    return summary


HANDLERS = {"heat": _heat, "poisson_proj": _projections, "stokes_proj": _projections,
            "transport": _transport, "nse": _nse}


def _jsonable(x):
    if isinstance(x, float) and not math.isfinite(x):
        return repr(x)
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.generic):
        return _jsonable(x.item())
    return x


def run_experiment(config, out_dir=None, log=None) -> ExperimentResult:
    """Run a config (path, preset name or parsed ``ExperimentConfig``).

    Raises
    ------
    ConfigError
        For invalid configs, naming the offending key.
    ValueError
        For problem kinds without an experiment runner.
    """
    exp = config if isinstance(config, ExperimentConfig) else resolve_config(config)
    handler = HANDLERS.get(exp.problem)
    if handler is None:
        raise ValueError(f"experiment.problem: no experiment runner for {exp.problem!r}")
    out_dir = os.fspath(out_dir if out_dir is not None else os.path.join(exp.output, exp.name))
    os.makedirs(out_dir, exist_ok=True)
    result = ExperimentResult(out_dir=out_dir)
    log = log or (lambda msg: None)
    started = time.perf_counter()
    result.summary = handler(exp, _Writer(out_dir, result), log)
    manifest = {
        "name": exp.name,
        "problem": exp.problem,
        "config": exp.raw,
        "files": result.files,
        "summary": result.summary,
        "wall_clock": time.perf_counter() - started,
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(_jsonable(manifest), fh, indent=2)
    return result


def _from_json(x):
    if isinstance(x, str) and x in ("inf", "-inf", "nan"):
        return float(x)
    if isinstance(x, dict):
        return {k: _from_json(v) for k, v in x.items()}
    if isinstance(x, list):
        return [_from_json(v) for v in x]
    return x


def read_manifest(out_dir) -> dict:
    """Load ``manifest.json``, turning the ``"inf"``/``"nan"`` strings back into floats."""
    with open(os.path.join(os.fspath(out_dir), "manifest.json")) as fh:
        return _from_json(json.load(fh))
