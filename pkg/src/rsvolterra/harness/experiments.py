"""Experiment drivers.  Each writes CSV tables into the run directory and
returns a JSON-ready summary that ``run_experiment`` stores in the manifest."""

from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import replace as dc_replace
from functools import partial
from pathlib import Path

import numpy as np
from scipy import stats

from .. import __version__
from ..diagnostics import (TailFitError, burst_stats, empirical_ccdf, growth_summary,
                           hill_estimator, phase_diagram, tail_exponent_regression,
                           write_bursts_csv, write_ccdf_csv, write_phase_csv)
from ..hawkes import (HawkesConfig, convergence_study, empirical_mean_intensity,
                      simulate_hawkes, solve_macro_volterra, time_rescaled_intervals)
from ..kernels import KernelSpec, fit_soe, kernel_mass, truncated_mass
from ..montecarlo import substream_rng, substream_seed
from ..network import (OperatorSet, build_dissipation, build_excitation, build_graph,
                       laplacian_spectrum)
from ..regime import GeneratorMatrix, frozen_path, sample_path
from ..volterra import (SystemConfig, frozen_growth_rate_root, integrate, simulate_paths)
from .config import RunConfig

__all__ = ["EXPERIMENTS", "run_experiment", "replay", "build_system", "build_hawkes",
           "path_seeds"]

GRAPH_STREAM = 1 << 40
U0_STREAM = GRAPH_STREAM + 1
EXCITE_STREAM = GRAPH_STREAM + 2
HAWKES_STREAM = GRAPH_STREAM + 3
MANIFEST = "manifest.json"


def path_seeds(seed: int, count: int) -> list:
    return [substream_seed(seed, p) for p in range(count)]


def _init(cfg: RunConfig):
    """``stationary`` draws the first regime from pi; ``S``/``U`` or an index fixes it."""
    if cfg.init == "stationary":
        return None
    if cfg.init in ("S", "U"):
        return "SU".index(cfg.init)
    return int(cfg.init)


def _soe(cfg: RunConfig, alpha: float, theta: float):
    return fit_soe(KernelSpec.tempered(alpha, theta), cfg.K, cfg.t_min, cfg.t_max, cfg.soe_tol)


def _mass(cfg: RunConfig, alpha: float, theta: float) -> float:
    spec = KernelSpec.tempered(alpha, theta)
    return truncated_mass(spec, cfg.T) if spec.infinite_mass else kernel_mass(spec)


def build_network(cfg: RunConfig, kind=None, n=None):
    kind = kind or cfg.graph
    n = n or cfg.n
    g = build_graph(kind, n, substream_rng(cfg.seed, GRAPH_STREAM), p=cfg.er_p, k=cfg.sw_k,
                    p_rewire=cfg.sw_p)
    return g, laplacian_spectrum(g)


def build_system(cfg: RunConfig, *, kind=None, n=None, kappa=None, excitation=None,
                 kernels=None):
    """Baseline two-regime system.

    Excitations are scaled with the baseline kernel masses; passing other
    ``kernels`` keeps the same matrices, so the effective gains change.
    """
    g, spec = build_network(cfg, kind, n)
    n = spec.n
    kappa = cfg.kappa if kappa is None else kappa
    mode = excitation or cfg.excitation
    base = ((cfg.alpha_s, cfg.theta_s), (cfg.alpha_u, cfg.theta_u))
    G0 = [_mass(cfg, a, t) for a, t in base]
    rng = substream_rng(cfg.seed, EXCITE_STREAM)
    A = tuple(build_excitation(spec, r, G, mode, rng) for r, G in
              zip((cfg.rho_s, cfg.rho_u), G0))
    if kernels is None:
        soes = tuple(_soe(cfg, a, t) for a, t in base)
        masses = tuple(G0)
    else:
        soes = tuple(_soe(cfg, a, t) for a, t in kernels)
        masses = tuple(_mass(cfg, a, t) for a, t in kernels)
    rho = tuple(float(np.linalg.norm(a, 2) * G) for a, G in zip(A, masses))
    ops = OperatorSet(build_dissipation(cfg.beta, kappa, spec), A,
                      (np.zeros((2, n)), np.zeros((2, n))), rho, masses)
    u0 = substream_rng(cfg.seed, U0_STREAM).standard_normal((2, n))
    u0 /= np.linalg.norm(u0)
    sys = SystemConfig(ops, soes, u0, dt=cfg.dt, T=cfg.T, eta=cfg.eta)
    return sys, spec, g


def unstable_rate(sys: SystemConfig, spec, z: int = 1) -> float:
    """Largest frozen modal growth rate of regime ``z``.

    Exact when the excitation is diagonal in the Laplacian eigenbasis; NaN
    otherwise.
    """
    M = spec.eigenvectors.T @ sys.operators.A[z] @ spec.eigenvectors
    gains = np.diag(M)
    if np.max(np.abs(M - np.diag(gains))) > 1e-9 * np.max(np.abs(gains)):
        return math.nan
    diss = sys.operators.dissipation
    return max(frozen_growth_rate_root(a, diss.beta, r - diss.beta, sys.kernels[z])
               for a, r in zip(gains, diss.modal_rates) if a > 0)


def _burst_reduce(i, seed, path, traj, spectrum=None, n_bands=4):
    return burst_stats(traj, spectrum, n_bands, 0, seed)


def _bursts(sys, Q, seeds, init, spectrum, n_bands, workers):
    red = partial(_burst_reduce, spectrum=spectrum, n_bands=n_bands)
    recs = simulate_paths(sys, Q, seeds, init, red, workers)
    return [dc_replace(r, path_id=i) for i, r in enumerate(recs)]


def _tail_fits(cfg: RunConfig, recs) -> dict:
    B = np.array([r.B for r in recs])
    cens = np.array([r.censored for r in recs])
    out = {}
    try:
        k = min(cfg.hill_k, int((~cens).sum()) - 1)
        h = hill_estimator(B[~cens], k)
        out.update(hill_exponent=h.exponent, hill_stderr=h.stderr, hill_k=k)
    except (TailFitError, ValueError) as e:
        out.update(hill_exponent=math.nan, hill_error=str(e))
    try:
        f = tail_exponent_regression(empirical_ccdf(B, cens), cfg.q_lo, cfg.q_hi)
        out.update(ccdf_exponent=f.exponent, ccdf_stderr=f.stderr, ccdf_r2=f.r2,
                   ccdf_points=f.n_points)
    except TailFitError as e:
        out.update(ccdf_exponent=math.nan, ccdf_error=str(e))
    return out


def _burst_summary(cfg: RunConfig, recs) -> dict:
    B = np.array([r.B for r in recs])
    cens = np.array([r.censored for r in recs])
    g = growth_summary(recs)
    return {"n_paths": len(recs), "P_burst": float(np.mean((B > cfg.b_rel) | cens)),
            "median_gamma_T": g.median, "frac_gamma_pos": g.frac_positive,
            "censor_frac": float(cens.mean()), "mean_ipr": float(np.nanmean([r.ipr for r in recs])),
            **_tail_fits(cfg, recs)}


def _write(out: Path, name: str, writer) -> None:
    with open(out / name, "w", newline="", encoding="utf-8") as fh:
        writer(fh)


def exp1(cfg: RunConfig, out: Path, workers: int) -> dict:
    """Two-regime bursts, CCDF and one representative path."""
    sys, spec, _ = build_system(cfg)
    Q = GeneratorMatrix.two_state(cfg.q_su, cfg.q_us)
    seeds = path_seeds(cfg.seed, cfg.burst_paths)
    recs = _bursts(sys, Q, seeds, _init(cfg), spec, cfg.n_bands, workers)
    _write(out, "bursts.csv", lambda fh: write_bursts_csv(recs, fh))
    ccdf = empirical_ccdf([r.B for r in recs], [r.censored for r in recs])
    _write(out, "ccdf.csv", lambda fh: write_ccdf_csv(ccdf, fh))
    path = sample_path(Q, cfg.T, np.random.default_rng(seeds[0]), _init(cfg))
    traj = integrate(sys.replace(snapshot_stride=max(1, int(round(1.0 / cfg.dt)))), path)
    _write(out, "trajectory.csv", traj.to_csv)
    _write(out, "regime_path.csv", path.to_csv)
    _write(out, "snapshots.csv", traj.snapshots_to_csv)
    gam_u = unstable_rate(sys, spec)
    summ = _burst_summary(cfg, recs)
    summ.update(gamma_U_frozen=gam_u, theory_exponent=cfg.q_us / gam_u if gam_u > 0 else math.nan)
    return summ


def exp2(cfg: RunConfig, out: Path, workers: int) -> dict:
    """(alpha, theta) sweep with excitation matrices held fixed."""
    Q = GeneratorMatrix.two_state(cfg.q_su, cfg.q_us)
    seeds = path_seeds(cfg.seed, cfg.n_paths)
    rows, per_path = [], []
    for alpha in cfg.sweep_alpha:
        for theta in cfg.sweep_theta:
            sys, spec, _ = build_system(cfg, kernels=((alpha, theta), (alpha, theta)))
            recs = _bursts(sys, Q, seeds, _init(cfg), spec, cfg.n_bands, workers)
            s = _burst_summary(cfg, recs)
            term = np.array([math.exp(r.gamma_T * cfg.T) for r in recs])
            rows.append([alpha, theta, sys.operators.masses[0], sys.operators.rho[0],
                         sys.operators.rho[1], sys.kernels[0].rel_error, float(np.mean(term)),
                         s["median_gamma_T"], s["frac_gamma_pos"], s["P_burst"],
                         s["censor_frac"], s["hill_exponent"]])
            per_path += [[alpha, theta, r.path_id, r.gamma_T, r.B, int(r.censored)] for r in recs]

    def sweep(fh):
        fh.write("alpha,theta,G,rho_S,rho_U,soe_error,mean_terminal,med_gamma_T,frac_pos,"
                 "P_burst,censor_frac,hill_exponent\n")
        for r in rows:
            fh.write(",".join(repr(float(v)) for v in r) + "\n")

    def gam(fh):
        fh.write("alpha,theta,path_id,gamma_T,B,censored\n")
        for r in per_path:
            fh.write(f"{r[0]!r},{r[1]!r},{r[2]},{float(r[3])!r},{float(r[4])!r},{r[5]}\n")

    _write(out, "memory_sweep.csv", sweep)
    _write(out, "gamma.csv", gam)
    return {"cells": len(rows), "P_burst": {f"{r[0]}/{r[1]}": r[9] for r in rows}}


def exp3(cfg: RunConfig, out: Path, workers: int) -> dict:
    """Switching-rate phase diagram."""
    sys, _, _ = build_system(cfg)
    grid = [(a, b) for a in cfg.phase_q_su for b in cfg.phase_q_us]
    cells = phase_diagram(sys, grid, cfg.phase_paths, cfg.seed, cfg.b_rel, cfg.theta_ann,
                          _init(cfg), workers)
    _write(out, "phase.csv", lambda fh: write_phase_csv(cells, fh))
    witness = [[c.q_su, c.q_us] for c in cells if c.annealed and c.p_burst >= 0.05]
    inversions = {}
    for a in cfg.phase_q_su:
        row = sorted((c for c in cells if c.q_su == a), key=lambda c: c.q_us)
        inversions[str(a)] = int(sum(y.p_burst > x.p_burst for x, y in zip(row, row[1:])))
    return {"cells": len(cells), "witness_cells": witness, "inversions": inversions}


def _alignment(spec, rec) -> tuple:
    if rec.z_star is None:
        return math.nan, -1
    proj = (spec.eigenvectors.T @ rec.z_star[1]) ** 2
    tot = proj.sum()
    if tot == 0:
        return math.nan, -1
    return float(proj.max() / tot), int(np.argmax(proj))


def exp4(cfg: RunConfig, out: Path, workers: int) -> dict:
    """Commuting against noncommuting excitation on the same graph."""
    Q = GeneratorMatrix.two_state(cfg.q_su, cfg.q_us)
    seeds = path_seeds(cfg.seed, cfg.n_paths)
    summary, rows = {}, []
    for mode in ("commuting", "noncommuting"):
        sys, spec, _ = build_system(cfg, kappa=cfg.kappa_network, excitation=mode)
        recs = _bursts(sys, Q, seeds, _init(cfg), spec, cfg.n_bands, workers)
        _write(out, f"bursts_{mode}.csv", lambda fh: write_bursts_csv(recs, fh))
        al = [_alignment(spec, r) for r in recs]
        rows += [[mode, r.path_id, a, m] for r, (a, m) in zip(recs, al)]
        s = _burst_summary(cfg, recs)
        s["mean_alignment"] = float(np.nanmean([a for a, _ in al]))
        s["distinct_dominant_modes"] = len({m for _, m in al if m >= 0})
        summary[mode] = s

    def modes(fh):
        fh.write("excitation,path_id,alignment,dominant_mode\n")
        for r in rows:
            fh.write(f"{r[0]},{r[1]},{r[2]!r},{r[3]}\n")

    _write(out, "modes.csv", modes)
    return summary


def exp5(cfg: RunConfig, out: Path, workers: int) -> dict:
    """Topology and size sweep: IPR and Laplacian band statistics."""
    Q = GeneratorMatrix.two_state(cfg.q_su, cfg.q_us)
    seeds = path_seeds(cfg.seed, cfg.n_paths)
    rows, summary = [], {}
    for kind in cfg.topo_graphs:
        means = []
        for n in cfg.topo_sizes:
            sys, spec, _ = build_system(cfg, kind=kind, n=n, kappa=cfg.kappa_network)
            recs = _bursts(sys, Q, seeds, _init(cfg), spec, cfg.n_bands, workers)
            for r in recs:
                dom = int(np.argmax(r.band_fractions)) if np.all(np.isfinite(r.band_fractions)) else -1
                rows.append([kind, n, r.path_id, r.B, r.gamma_T, r.ipr, dom,
                             *r.band_fractions])
            dom = [row[6] for row in rows if row[0] == kind and row[1] == n]
            means.append(float(np.nanmean([r.ipr for r in recs])))
            summary[f"{kind}/{n}"] = {"mean_ipr": means[-1],
                                      "band_counts": np.bincount(np.array(dom)[np.array(dom) >= 0],
                                                                 minlength=cfg.n_bands).tolist()}
        if len(cfg.topo_sizes) > 1:
            fit = stats.linregress(np.log(cfg.topo_sizes), np.log(means))
            summary[f"{kind}/ipr_size_slope"] = float(fit.slope)

    def topo(fh):
        fh.write("graph,n,path_id,B,gamma_T,ipr,dominant_band,"
                 + ",".join(f"band_{i}" for i in range(cfg.n_bands)) + "\n")
        for r in rows:
            fh.write(f"{r[0]},{r[1]},{r[2]}," + ",".join(repr(float(v)) for v in r[3:6])
                     + f",{r[6]}," + ",".join(repr(float(v)) for v in r[7:]) + "\n")

    _write(out, "topology.csv", topo)
    return summary


def build_hawkes(cfg: RunConfig, N: int = 1) -> tuple:
    """Two-regime subcritical Hawkes network with unit-mass exponential kernels."""
    n = cfg.hk_n
    rng = substream_rng(cfg.seed, HAWKES_STREAM)
    base = rng.uniform(0.5, 1.5, (n, n))
    base /= max(abs(np.linalg.eigvals(base)))
    soe = fit_soe(KernelSpec.exponential_sum([cfg.hk_rate], [cfg.hk_rate]))
    hc = HawkesConfig(n, (np.full(n, cfg.hk_mu_s), np.full(n, cfg.hk_mu_u)),
                      (cfg.hk_branch_s * base, cfg.hk_branch_u * base), (soe, soe), N=N,
                      T=cfg.hk_T, dt=cfg.hk_dt)
    return hc, GeneratorMatrix.two_state(cfg.hk_q_su, cfg.hk_q_us)


def exp6(cfg: RunConfig, out: Path, workers: int) -> dict:
    """Micro-macro convergence, annealed and quenched."""
    hc, Q = build_hawkes(cfg)
    res = {m: convergence_study(hc, Q, cfg.hk_N_list, cfg.hk_envs, cfg.seed, m, _init(cfg),
                                workers=workers) for m in ("annealed", "quenched")}

    def err(fh):
        fh.write("mode,N,env_id,err\n")
        for m, r in res.items():
            for e, row in enumerate(r.per_env):
                for N, v in zip(r.N_list, row):
                    fh.write(f"{m},{N},{e},{float(v)!r}\n")

    _write(out, "err.csv", err)
    path = sample_path(Q, hc.T, substream_rng(substream_seed(cfg.seed, 0), 0), _init(cfg))
    big = hc.replace(N=max(cfg.hk_N_list))
    lbar = empirical_mean_intensity(simulate_hawkes(big, path, cfg.seed, workers), hc, path)
    macro = solve_macro_volterra(hc, path)
    stride = max(1, int(round(0.1 / hc.dt)))

    def inten(fh):
        cols = [f"lbar_{i}" for i in range(hc.n)] + [f"lam_{i}" for i in range(hc.n)]
        fh.write("t,regime," + ",".join(cols) + "\n")
        for k in range(0, lbar.times.size, stride):
            vals = np.concatenate([lbar.values[k], macro.values[k]])
            fh.write(f"{float(lbar.times[k])!r},{int(lbar.regimes[k])},"
                     + ",".join(repr(float(v)) for v in vals) + "\n")

    _write(out, "intensity.csv", inten)
    return {m: {"slope": r.slope, "slope_stderr": r.slope_stderr,
                "mean_err": r.mean_err.tolist(), "N": list(r.N_list)} for m, r in res.items()}


def kernel_fit(cfg: RunConfig, out: Path, workers: int) -> dict:
    """SOE fits of both regime kernels with pointwise errors on the window."""
    summary, fits = {}, []
    for z, (a, th) in enumerate(((cfg.alpha_s, cfg.theta_s), (cfg.alpha_u, cfg.theta_u))):
        spec = KernelSpec.tempered(a, th)
        soe = _soe(cfg, a, th)
        fits.append((z, spec, soe))
        summary[f"regime_{z}"] = {"alpha": a, "theta": th, "K": soe.K,
                                  "rel_error": soe.rel_error, "mass_soe": soe.mass,
                                  "mass_exact": kernel_mass(spec)}
    t = np.geomspace(cfg.t_min, cfg.t_max, 200)

    def nodes(fh):
        fh.write("regime,index,rate,weight\n")
        for z, _, soe in fits:
            for i, (r, w) in enumerate(zip(soe.nodes, soe.weights)):
                fh.write(f"{z},{i},{float(r)!r},{float(w)!r}\n")

    def errs(fh):
        from ..kernels import eval_kernel
        fh.write("regime,t,g,g_soe,rel_err\n")
        for z, spec, soe in fits:
            g = eval_kernel(spec, t)
            gs = soe(t)
            for ti, a, b in zip(t, g, gs):
                fh.write(f"{z},{float(ti)!r},{float(a)!r},{float(b)!r},{float(abs(b - a) / a)!r}\n")

    _write(out, "soe.csv", nodes)
    _write(out, "kernel_error.csv", errs)
    return summary


def simulate(cfg: RunConfig, out: Path, workers: int) -> dict:
    """One baseline path with full history, memory energy and snapshots."""
    sys, spec, g = build_system(cfg)
    Q = GeneratorMatrix.two_state(cfg.q_su, cfg.q_us)
    seed = path_seeds(cfg.seed, 1)[0]
    path = sample_path(Q, cfg.T, np.random.default_rng(seed), _init(cfg))
    traj = integrate(sys.replace(track_lyapunov=True,
                                 snapshot_stride=max(1, int(round(1.0 / cfg.dt)))), path)
    _write(out, "trajectory.csv", lambda fh: traj.to_csv(fh, eta=cfg.eta))
    _write(out, "regime_path.csv", path.to_csv)
    _write(out, "snapshots.csv", traj.snapshots_to_csv)
    _write(out, "graph.csv", g.to_csv)
    _write(out, "spectrum.csv", spec.to_csv)
    rec = burst_stats(traj, spec, cfg.n_bands, 0, seed)
    return {"B": rec.B, "t_star": rec.t_star, "gamma_T": rec.gamma_T, "ipr": rec.ipr,
            "censored": rec.censored, "jumps": int(path.jump_times.size)}


def hawkes_validate(cfg: RunConfig, out: Path, workers: int) -> dict:
    """Stationary one-node check: mu = 1, branching 0.5, event rate 2."""
    soe = fit_soe(KernelSpec.exponential_sum([1.0], [1.0]))
    hc = HawkesConfig(1, (np.ones(1),), (np.full((1, 1), 0.5),), (soe,), N=8, T=2000.0)
    path = frozen_path(0, hc.T)
    log = simulate_hawkes(hc, path, cfg.seed, workers)
    _write(out, "events.csv", log.to_csv)
    rate = log.total() / (hc.N * hc.T)
    ks = stats.kstest(time_rescaled_intervals(log, hc, path, 0), "expon")
    return {"rate": rate, "expected_rate": 2.0, "rel_error": abs(rate - 2.0) / 2.0,
            "ks_stat": float(ks.statistic), "ks_pvalue": float(ks.pvalue)}


EXPERIMENTS = {
    "exp1": exp1, "exp2": exp2, "exp3": exp3, "phase": exp3, "exp4": exp4, "exp5": exp5,
    "exp6": exp6, "kernel-fit": kernel_fit, "simulate": simulate,
    "hawkes-validate": hawkes_validate,
}


def _sha256(p: Path) -> str:
    return hashlib.sha256(p.read_bytes()).hexdigest()


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def run_experiment(exp_id: str, cfg: RunConfig, out=None) -> Path:
    """Run one driver into ``out`` (default ``cfg.out``) and write the manifest."""
    if exp_id not in EXPERIMENTS:
        raise KeyError(f"unknown experiment {exp_id!r}; choose from {sorted(EXPERIMENTS)}")
    out = Path(out or cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    summary = EXPERIMENTS[exp_id](cfg, out, max(1, cfg.threads))
    elapsed = time.perf_counter() - start
    with open(out / "config.ini", "w", encoding="utf-8") as fh:
        cfg.to_ini(fh)
    files = {p.name: _sha256(p) for p in sorted(out.iterdir())
             if p.is_file() and p.name not in (MANIFEST, "config.ini", "report.csv")}
    n_seeds = {"exp1": cfg.burst_paths, "exp3": cfg.phase_paths, "phase": cfg.phase_paths}
    manifest = {
        "experiment": exp_id,
        "artifact_version": __version__,
        "master_seed": cfg.seed,
        "config": cfg.to_dict(),
        "config_hash": cfg.digest(),
        "path_seeds": path_seeds(cfg.seed, n_seeds.get(exp_id, cfg.n_paths)),
        "timings": {exp_id: elapsed},
        "summary": _clean(summary),
        "files": files,
    }
    with open(out / MANIFEST, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return out


def replay(manifest_path, out) -> tuple:
    """Re-run a manifest into ``out``; returns ``(ok, mismatched_files)``."""
    with open(manifest_path, encoding="utf-8") as fh:
        man = json.load(fh)
    cfg = RunConfig.from_dict(man["config"])
    run_experiment(man["experiment"], cfg, out)
    with open(Path(out) / MANIFEST, encoding="utf-8") as fh:
        new = json.load(fh)
    bad = sorted(k for k in set(man["files"]) | set(new["files"])
                 if man["files"].get(k) != new["files"].get(k))
    return not bad, bad
