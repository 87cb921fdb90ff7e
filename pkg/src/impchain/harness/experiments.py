"""Experiment runners.

Each experiment is a set of independent realization tasks (one per system
size and realization index, covering the whole V grid so the bulk is built
once).  Tasks run inline or in a process pool; results are always reduced
in realization-index order, so aggregates do not depend on the worker count.
"""
from __future__ import annotations

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from fractions import Fraction
from pathlib import Path

import numpy as np

from ..basis import default_sector
from ..errors import ValidationError
from ..models import add_impurities, build_bulk, center_site, folding_plan, weak_link_chain
from ..pauli import PauliOperator, to_dense
from ..probes import fidelity_susceptibility, folded_r, probe_operator, r_statistic, unfolded_r, write_probe_csv
from ..spectral import (SpectralAccumulator, conserved_fraction, fit_tail, jump_scaling, linear_edges,
                        log_edges, loglog_slope, sector_spectral_function)
from .aggregate import Partial, aggregate, mean_partial
from .cache import open_cache
from .config import ExperimentConfig
from .manifest import ResultManifest, code_version
from .seeds import disorder_seed, jitter_seed

log = logging.getLogger(__name__)


def vtag(V: float) -> str:
    return f"{V:.6g}"


# model construction --------------------------------------------------------------------


def impurity_sites(cfg: ExperimentConfig, L: int) -> list:
    imp = cfg.geometry.get("impurities", "center")
    if imp == "center":
        return [center_site(L)]
    if imp in (None, "none"):
        return []
    sites = [int(s) for s in imp]
    for s in sites:
        if not 0 <= s < L:
            raise ValidationError(f"impurity site {s} outside chain of length {L}")
    return sites


def block_count(cfg: ExperimentConfig, L: int) -> int:
    bl = int(cfg.geometry["block_len"])
    if L % bl:
        raise ValidationError(f"effective length {L} is not a multiple of block_len {bl}")
    return L // bl


def build_sample(cfg: ExperimentConfig, L: int, r: int, V: float):
    """Hamiltonian of realization ``r`` at impurity potential ``V``."""
    if "block_len" in cfg.geometry:
        return weak_link_chain(block_count(cfg, L), int(cfg.geometry["block_len"]), V, cfg.delta, cfg.W,
                               seed=disorder_seed(cfg.seed, r), jitter=cfg.jitter,
                               jitter_seed=jitter_seed(cfg.seed, r))
    bulk = build_bulk(L, cfg.delta, cfg.W, disorder_seed(cfg.seed, r))
    return add_impurities(bulk, impurity_sites(cfg, L), V, jitter=cfg.jitter, seed=jitter_seed(cfg.seed, r))


def resolve_sectors(cfg: ExperimentConfig, L: int):
    """List of initial-state sectors, or None for all."""
    s = cfg.sector
    if s == "all":
        return None
    if s in (None, "default"):
        return [default_sector(L)]
    return [Fraction(s).limit_denominator(2)]


def edges_from(bins: dict, default: dict) -> np.ndarray:
    b = {**default, **bins}
    if b["kind"] == "log":
        return log_edges(b["min"], b["max"], b.get("per_decade", 12))
    if b["kind"] == "linear":
        return linear_edges(b["min"], b["max"], b["width"])
    raise ValidationError(f"unknown bin kind {b['kind']!r}")


# realization tasks ---------------------------------------------------------------------


def _task_rstat(cfg, L, r, cache):
    sector = resolve_sectors(cfg, L)
    sector = sector[0] if sector else None
    deg = cfg.params.get("degenerate", "drop")
    out = {}
    for V in cfg.V:
        spec = build_sample(cfg, L, r, V)
        es = cache.get_or_compute(spec, sector, want_vectors=False)
        res = {"r_full": r_statistic(es.values, cfg.window, degenerate=deg)}
        if spec.impurity_sites and V != 0:
            plan = folding_plan(spec, sector).solve()
            res["r_folded"] = folded_r(plan, cfg.window, degenerate=deg)
            res["r_unfolded"] = unfolded_r(plan, cfg.window, degenerate=deg)
        for name, st in res.items():
            if name == "r_unfolded":
                out[(V, name)] = Partial(r, "rstat", {name: st.mean}, {name: 1.0})
            else:
                out[(V, name)] = Partial(r, "rstat", {name: float(st.ratios.sum())}, {name: float(len(st.ratios))})
    return out


def _probe_matrix(cfg, L, basis):
    site = int(cfg.probe.get("site", 2))
    return to_dense(probe_operator(L, site, cfg.probe.get("axis", "Z")), basis)


def _task_chi(cfg, L, r, cache):
    sector = resolve_sectors(cfg, L)
    sector = sector[0] if sector else None
    out = {}
    Vs = cfg.V if 0.0 in cfg.V else (0.0,) + cfg.V
    for V in Vs:
        es = cache.get_or_compute(build_sample(cfg, L, r, V), sector, want_vectors=True)
        res = fidelity_susceptibility(es, _probe_matrix(cfg, L, es.basis), cfg.window)
        out[V] = res.chi
    return out


def _operator(cfg, L, spec):
    site = cfg.probe.get("site", "impurity")
    if site == "impurity":
        site = spec.impurity_sites[0] if spec.impurity_sites else center_site(L)
    return PauliOperator.spin(L, int(site), cfg.probe.get("axis", "Z")), int(site)


def _task_spectral(cfg, L, r, cache, edges, defaults):
    p = {**defaults, **cfg.params}
    sectors = resolve_sectors(cfg, L)
    solver = lambda spec, s: cache.get_or_compute(spec, s, want_vectors=True)  # noqa: E731
    out = {}
    for V in cfg.V:
        spec = build_sample(cfg, L, r, V)
        O, site = _operator(cfg, L, spec)
        acc = SpectralAccumulator(edges, fold=p["fold"], operator=f"S{cfg.probe.get('axis', 'Z')}_{site}")
        given = {}
        Z = None
        if cfg.kind == "specfun" and sectors:
            es = solver(spec, sectors[0])
            given[sectors[0]] = es
            Z = conserved_fraction(es, to_dense(O, es.basis), cfg.window)
        sector_spectral_function(spec, O, edges, sectors=sectors, window=cfg.window, fold=p["fold"],
                                 order=p["order"], switch=p["switch"], sample=r, accumulator=acc,
                                 eigs=given, solver=solver)
        out[V] = (acc, Z)
    return out


SPECFUN_DEFAULTS = {"fold": True, "order": 0, "switch": 2.0}
JUMP_DEFAULTS = {"fold": True, "order": 6, "switch": 2.0}
SPECFUN_BINS = {"kind": "log", "min": 0.01, "max": 20.0, "per_decade": 12}
JUMP_BINS = {"kind": "linear", "min": 0.0, "max": 14.0, "width": 0.25}


def _task_liom(cfg, L, r, cache):
    from ..liom import build_ladder, liom_hamiltonian, residual_curve, variational_charge

    p = {"eps": 0.1, "N_max": 4, "site": 0, "variational": True, **cfg.params}
    N_max = int(p["N_max"])
    bulk, h_int = liom_hamiltonian(L, cfg.delta, cfg.W, disorder_seed(cfg.seed, r), int(p["site"]))
    ladder = build_ladder(bulk, h_int, int(p.get("K", 2 * N_max + 1)), site=int(p["site"]))
    out = {"ladder": np.array(ladder.norms)}
    for V in cfg.V:
        curve, n_star, _ = residual_curve(ladder, V, p["eps"], N_max)
        row = {"gamma_pert": np.array([g for _, g in curve]), "N_star": n_star}
        if p["variational"]:
            row["gamma_var"] = np.array([variational_charge(ladder, N, p["eps"], V).residual
                                         for N in range(N_max + 1)])
        out[V] = row
    return out


def _run_task(args):
    kind, cfg_dict, L, r, cache_root = args
    cfg = ExperimentConfig(**cfg_dict)
    cache = open_cache(cache_root)
    t = time.perf_counter()
    if kind == "rstat":
        res = _task_rstat(cfg, L, r, cache)
    elif kind == "chi":
        res = _task_chi(cfg, L, r, cache)
    elif kind == "specfun":
        res = _task_spectral(cfg, L, r, cache, edges_from(cfg.bins, SPECFUN_BINS), SPECFUN_DEFAULTS)
    elif kind == "jump":
        res = _task_spectral(cfg, L, r, cache, edges_from(cfg.bins, JUMP_BINS), JUMP_DEFAULTS)
    else:
        res = _task_liom(cfg, L, r, cache)
    log.info("%s L=%d realization %d done in %.1fs", kind, L, r, time.perf_counter() - t)
    stats = {"hits": cache.hits, "misses": cache.misses, "computed": cache.computed}
    return (L, r), res, stats


def run_tasks(cfg: ExperimentConfig, cache_root=None, workers: int = 1) -> dict:
    """``{(L, r): result}`` for every size and realization, plus summed cache counters."""
    tasks = [(cfg.kind, cfg.to_dict(), L, r, str(cache_root) if cache_root else None)
             for L in cfg.L for r in range(cfg.n_realizations(L))]
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_task, tasks))
    else:
        results = [_run_task(t) for t in tasks]
    stats = {"hits": 0, "misses": 0, "computed": 0}
    for _, _, s in results:
        for k in stats:
            stats[k] += s[k]
    return {key: res for key, res, _ in sorted(results, key=lambda t: t[0])}, stats


# reductions ----------------------------------------------------------------------------


def _row(cfg, L, V, sector, probe, value, err=float("nan")):
    return {"L": L, "V": "" if V is None else float(V), "seed": cfg.seed, "sector": sector,
            "probe": probe, "value": float(value), "stderr": float(err)}


def _sector_label(cfg, L):
    s = resolve_sectors(cfg, L)
    return "all" if s is None else str(s[0])


def reduce_rstat(cfg, results, out_dir):
    rows = []
    for L in cfg.L:
        n = cfg.n_realizations(L)
        for V in cfg.V:
            for name in ("r_full", "r_folded", "r_unfolded"):
                parts = [results[(L, r)].get((V, name)) for r in range(n)]
                if parts[0] is None:
                    continue
                agg = aggregate(parts, "rstat")
                rows.append(_row(cfg, L, V, _sector_label(cfg, L), name, agg.values[name], agg.stderr[name]))
    path = Path(out_dir) / "rstat.csv"
    write_probe_csv(path, rows, [f"window={cfg.window}", "r_full/r_folded pool all ratios; r_unfolded averages block means"])
    return [path], rows


def reduce_chi(cfg, results, out_dir):
    rows = []
    for L in cfg.L:
        n = cfg.n_realizations(L)
        ref = [results[(L, r)][0.0] for r in range(n)]
        for V in sorted(results[(L, 0)]):
            chi = [results[(L, r)][V] for r in range(n)]
            typ = aggregate([mean_partial(r, "chi", {"chi": chi[r]}, log=True) for r in range(n)])
            rows.append(_row(cfg, L, V, _sector_label(cfg, L), "chi_typ", typ.values["chi"], typ.stderr["chi"]))
            # log chi(V) - log chi(0) per state: same eigenstate count in both
            parts = []
            for r in range(n):
                a, b = np.log(chi[r][chi[r] > 0]), np.log(ref[r][ref[r] > 0])
                parts.append(Partial(r, "chi", {"s": a.mean() - b.mean()}, {"s": 1.0}, {"s": "exp"}))
            sc = aggregate(parts)
            rows.append(_row(cfg, L, V, _sector_label(cfg, L), "chi_scaled", sc.values["s"], sc.stderr["s"]))
    path = Path(out_dir) / "chi.csv"
    write_probe_csv(path, rows, [f"window={cfg.window}", f"probe={cfg.probe or {'site': 2, 'axis': 'Z'}}",
                                 "chi_scaled = exp(mean log chi(V) - mean log chi(0)), per realization then pooled"])
    return [path], rows


def _merged_hist(cfg, results, L, V):
    acc = None
    for r in range(cfg.n_realizations(L)):
        a = results[(L, r)][V][0]
        acc = a if acc is None else acc.merge(a)
    return acc.histogram({"L": L, "V": V, "seed": cfg.seed, "realizations": cfg.n_realizations(L)})


def reduce_specfun(cfg, results, out_dir):
    files, rows, hists = [], [], {}
    p = cfg.params
    for L in cfg.L:
        n = cfg.n_realizations(L)
        for V in cfg.V:
            h = _merged_hist(cfg, results, L, V)
            hists[(L, V)] = h
            path = Path(out_dir) / f"specfun_L{L}_V{vtag(V)}.csv"
            h.to_csv(path)
            files += [path, Path(str(path) + ".json")]
            Z = [results[(L, r)][V][1] for r in range(n)]
            if Z[0] is not None:
                agg = aggregate([Partial(r, "Z", {"z": 1 - Z[r]}, {"z": 1.0}) for r in range(n)])
                rows.append(_row(cfg, L, V, _sector_label(cfg, L), "one_minus_Z", agg.values["z"], agg.stderr["z"]))
            if "slope_window" in p:
                rows.append(_row(cfg, L, V, _sector_label(cfg, L), "loglog_slope",
                                 loglog_slope(h, tuple(p["slope_window"]), p.get("use", "mean"))))
            if p.get("tail_fit"):
                tw = p.get("tail_window")
                fit = fit_tail(h, tuple(tw) if tw else None, "exp-wlogw", p.get("use", "mean"))
                rows.append(_row(cfg, L, V, _sector_label(cfg, L), "tail_tau", fit.tau))
    path = Path(out_dir) / "specfun_summary.csv"
    write_probe_csv(path, rows, [f"window={cfg.window}"])
    return files + [path], rows


def reduce_jump(cfg, results, out_dir):
    files, rows = [], []
    p = cfg.params
    for L in cfg.L:
        hists = {}
        for V in cfg.V:
            h = _merged_hist(cfg, results, L, V)
            hists[V] = h
            path = Path(out_dir) / f"jump_L{L}_V{vtag(V)}.csv"
            h.to_csv(path)
            files += [path, Path(str(path) + ".json")]
        for wj in p.get("omega_jumps", [3.5, 7.0]):
            for mode in p.get("modes", ["reference", "local"]):
                js = jump_scaling(hists, wj, mode=mode, width=p.get("width", 1.0),
                                  fit_V_min=p.get("fit_V_min", 2.0), use=p.get("use", "mean"))
                for V, d in zip(js.V, js.drops):
                    rows.append(_row(cfg, L, V, _sector_label(cfg, L), f"drop_w{wj:g}_{mode}", d))
                rows.append(_row(cfg, L, None, _sector_label(cfg, L), f"exponent_w{wj:g}_{mode}", js.exponent))
    path = Path(out_dir) / "jump.csv"
    write_probe_csv(path, rows, [f"fit_V_min={p.get('fit_V_min', 2.0)}"])
    return files + [path], rows


def reduce_liom(cfg, results, out_dir):
    rows = []
    for L in cfg.L:
        n = cfg.n_realizations(L)
        lad = [results[(L, r)]["ladder"] for r in range(n)]
        for k in range(len(lad[0])):
            agg = aggregate([mean_partial(r, "liom", {"x": [lad[r][k]]}, log=True) for r in range(n)])
            rows.append(_row(cfg, L, None, "all", f"R_norm2_k{k}", agg.values["x"], agg.stderr["x"]))
        for V in cfg.V:
            per = [results[(L, r)][V] for r in range(n)]
            for name in ("gamma_pert", "gamma_var"):
                if name not in per[0]:
                    continue
                for N in range(len(per[0][name])):
                    agg = aggregate([mean_partial(r, "liom", {"x": [per[r][name][N]]}, log=True) for r in range(n)])
                    rows.append(_row(cfg, L, V, "all", f"{name}_N{N}", agg.values["x"], agg.stderr["x"]))
            agg = aggregate([Partial(r, "liom", {"x": float(per[r]["N_star"])}, {"x": 1.0}) for r in range(n)])
            rows.append(_row(cfg, L, V, "all", "N_star", agg.values["x"], agg.stderr["x"]))
    path = Path(out_dir) / "liom.csv"
    write_probe_csv(path, rows, [f"eps={cfg.params.get('eps', 0.1)}", "geometric means over realizations"])
    return [path], rows


REDUCERS = {"rstat": reduce_rstat, "chi": reduce_chi, "specfun": reduce_specfun,
            "jump": reduce_jump, "liom": reduce_liom}


def run_experiment(cfg: ExperimentConfig, out_dir, cache_root=None, workers: int = 1) -> ResultManifest:
    """Run all realizations, write aggregates and ``manifest.json`` to ``out_dir``."""
    if workers < 1:
        raise ValidationError("workers must be >= 1")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    t = time.perf_counter()
    results, stats = run_tasks(cfg, cache_root, workers)
    files, _ = REDUCERS[cfg.kind](cfg, results, out_dir)
    m = ResultManifest(cfg.kind, cfg.to_dict(), cfg.config_hash(), code_version(),
                       wall_clock_s=round(time.perf_counter() - t, 3), workers=workers, cache=stats)
    for f in files:
        m.add_file(out_dir, f)
    m.write(out_dir)
    return m
