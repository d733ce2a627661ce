"""Experiment orchestration: one runner per experiment kind.

Each runner writes CSV/JSON artifacts into an output directory and returns
a summary dict; :func:`run` adds the manifest (configuration hash, library
versions, wall times).
"""

import json
import os
import platform
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .config import RunConfig, rng
from .diffuse import Grid, ModelParams, SimState, diagnostics_row, energy, level_set_radius
from .diffuse import run as run_steps
from .diffuse import save_snapshot, suggest_dt, write_diagnostics
from .expansion import build_cA0, g0_field, odd_moment, solve_c2, surface_parabolic_solve
from .geometry import Interface, TubularMap
from .profile import (equipartition_residual, eta_profile, expansion_constants, optimal_profile,
                      profile_residual, surface_tension, surface_tension_equipartition)
from .rates import fit_rate
from .sharp import FrontState, area_rate, evolve, gage_hamilton_rate, hausdorff, write_history
from .spectral import LinearizedOperator, fiber_decompose, min_eigenvalue, write_sweep


def _interface(cfg, n=None):
    g = cfg["geometry"]
    n = n or g["nodes"]
    if g["shape"] == "circle":
        return Interface.circle(g["radius"], n, g["center"])
    a, b = g["axes"]
    return Interface.ellipse(a, b, n, g["center"])


def _box(cfg):
    g = cfg["geometry"]
    if cfg["grid"]["box"] is not None:
        return cfg["grid"]["box"]
    extent = g["radius"] if g["shape"] == "circle" else max(g["axes"])
    return 2.0 * (extent + cfg.delta()) + 0.2 * extent


def _grid(cfg, eps):
    box = _box(cfg)
    n = int(np.ceil(box * cfg["grid"]["resolution"] / eps))
    n += n % 2
    c = cfg["geometry"]["center"]
    return Grid(n, n, box, box, c[0] - box / 2, c[1] - box / 2, cfg["grid"]["periodic"])


def _json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=float)


def _plot(path, x, ys, xlabel, ylabel, logx=False, logy=False):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 3.5))
    for label, y in ys.items():
        ax.plot(x, y, "o-" if len(x) < 20 else "-", label=label)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if logx:
        ax.set_xscale("log")
    if logy:
        ax.set_yscale("log")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


# ----------------------------------------------------------------------------
# runners
# ----------------------------------------------------------------------------

def run_profile(cfg, out):
    p = optimal_profile()
    p.to_csv(out / "theta0.csv")
    m = cfg["model"]
    nu = ModelParams(eps=1.0, dt=1.0, grid=Grid.centered_box(8, 1.0), nu_plus=m["nu_plus"],
                     nu_minus=m["nu_minus"])
    consts = expansion_constants(p, eta_profile(p.rho), lambda c: nu.viscosity(c)[0])
    summary = dict(sigma=surface_tension(p), sigma_equipartition=surface_tension_equipartition(p),
                   sigma_exact=2.0 / 3.0,
                   profile_residual=float(np.max(np.abs(profile_residual(p)))),
                   equipartition_residual=float(np.max(np.abs(equipartition_residual(p)))),
                   theta0_error=float(np.max(np.abs(p.values - np.tanh(p.rho / 2.0)))),
                   constants=consts.as_dict())
    _json(out / "constants.json", summary)
    if cfg["output"]["plots"]:
        _plot(out / "theta0.png", p.rho, {"theta0": p.values, "theta0'": p.derivs}, "rho", "value")
    return summary


ROUNDOFF_FLOOR = 1e-12


def _orders(errs, steps):
    with np.errstate(divide="ignore", invalid="ignore"):
        return [float(np.log(errs[k] / errs[k + 1]) / np.log(steps[k] / steps[k + 1]))
                for k in range(len(errs) - 1)]


def run_mcf(cfg, out):
    g = cfg["geometry"]
    itf = _interface(cfg, cfg["time"]["nodes"])
    R0 = g["radius"]
    size = R0 if g["shape"] == "circle" else min(g["axes"])
    t_end = cfg["time"]["t_end"] or 0.3 * size**2
    dts = cfg["sweep"]["dt"] or (cfg["model"]["dt"] or t_end / 60.0,)
    v = np.asarray(cfg["model"]["velocity"], float)
    vel = None if not np.any(v) else (lambda x, t: np.broadcast_to(v, x.shape))
    runs = []
    finals = []
    for i, dt in enumerate(dts):
        hist = evolve(FrontState(itf), t_end, dt, v=vel)
        finals.append(hist[-1].interface)
        t = np.array([f.t for f in hist])
        rad = np.array([f.radius() for f in hist])
        area = np.array([f.interface.area() for f in hist])
        cols = [t, rad, area]
        header = "t,radius,area"
        if g["shape"] == "circle":
            cols.append(np.sqrt(np.maximum(R0**2 - 2 * t, 0.0)))
            header += ",radius_exact"
        np.savetxt(out / f"radius_dt{i}.csv", np.column_stack(cols), delimiter=",", header=header,
                   comments="", fmt="%.17g")
        entry = dict(dt=dt, steps=len(hist) - 1, area_rate=float(np.mean(area_rate(hist))),
                     gage_hamilton=gage_hamilton_rate(hist[-1]))
        if g["shape"] == "circle":
            exact = np.sqrt(R0**2 - 2 * t_end)
            entry["rel_error"] = abs(rad[-1] - exact) / exact
        runs.append(entry)
        if i == len(dts) - 1:
            write_history(out / "history.csv", hist[:: max(1, (len(hist) - 1) // 50)])
    summary = dict(t_end=t_end, runs=runs)
    errs = [r.get("rel_error") for r in runs]
    if len(runs) > 1 and all(e is not None for e in errs):
        # the circle is integrated exactly up to round-off; orders of noise carry no information
        summary["roundoff_limited"] = bool(max(errs) <= ROUNDOFF_FLOOR)
        if not summary["roundoff_limited"]:
            summary["observed_orders"] = _orders(errs, dts)
    if len(runs) > 2 and not summary.get("roundoff_limited"):
        diffs = [hausdorff(finals[k], finals[k + 1]) for k in range(len(finals) - 1)]
        summary["self_convergence_orders"] = _orders(diffs, dts[:-1])
    _json(out / "mcf.json", summary)
    if cfg["output"]["plots"]:
        data = np.loadtxt(out / f"radius_dt{len(dts) - 1}.csv", delimiter=",", skiprows=1)
        ys = {"front": data[:, 1]}
        if data.shape[1] > 3:
            ys["exact"] = data[:, 3]
        _plot(out / "radius.png", data[:, 0], ys, "t", "radius")
    return summary


def _params(cfg, grid, eps, dt):
    m = cfg["model"]
    v = np.asarray(m["velocity"], float)
    vel = None if not np.any(v) else (lambda X, Y, t: (np.full_like(X, v[0]), np.full_like(X, v[1])))
    return ModelParams(eps=eps, dt=dt, grid=grid, nu_plus=m["nu_plus"], nu_minus=m["nu_minus"],
                       S=m["S"], capillary=m["capillary"], coupling=m["coupling"], scheme=m["scheme"],
                       velocity=vel)


def run_simulate(cfg, out):
    eps = cfg["model"]["eps"]
    grid = _grid(cfg, eps)
    tub = TubularMap(_interface(cfg), delta=cfg.delta())
    c = build_cA0(eps, tub, optimal_profile()).on_grid(*grid.coords())
    if cfg["model"]["noise"] > 0:
        c = c + cfg["model"]["noise"] * rng(cfg.seed).standard_normal(c.shape)
    state = SimState.at_rest(grid, c)
    probe = _params(cfg, grid, eps, 1.0)
    dt = cfg["model"]["dt"] or suggest_dt(probe, state)
    t_end = cfg["time"]["t_end"] or 100 * dt
    nsteps = max(1, int(round(t_end / dt)))
    params = _params(cfg, grid, eps, t_end / nsteps)
    rows = [diagnostics_row(state, params)]
    clamps = [0]

    def record(st):
        rows.append(diagnostics_row(st, params))
        clamps.append(st.info.get("nu_clamped", 0))

    state = run_steps(state, params, nsteps, callback=record, every=cfg["time"]["save_every"])
    write_diagnostics(out / "diagnostics.csv", rows)
    save_snapshot(out / "final.npz", state, params)
    E = np.array([r[3] for r in rows])
    summary = dict(steps=nsteps, dt=params.dt, grid=grid.as_dict(), final_energy=energy(state, params).as_dict(),
                   max_energy_increase=float(np.max(np.diff(E))) if E.size > 1 else 0.0,
                   nu_clamp_events=int(sum(clamps)))
    _json(out / "simulate.json", summary)
    if cfg["output"]["plots"]:
        arr = np.asarray(rows)
        _plot(out / "energy.png", arr[:, 0], {"total": arr[:, 3], "interfacial": arr[:, 2]}, "t", "energy")
    return summary


def converge_case(args):
    """One diffuse run of the convergence sweep (picklable for worker pools)."""
    cfg_dict, eps = args
    cfg = RunConfig(cfg_dict["run"]["kind"], cfg_dict)
    p = optimal_profile()
    R0 = cfg["geometry"]["radius"]
    t_end = cfg["time"]["t_end"] or 0.1 * R0**2
    grid = _grid(cfg, eps)
    tub = TubularMap(_interface(cfg), delta=cfg.delta())
    c = build_cA0(eps, tub, p).on_grid(*grid.coords())
    nsteps = int(np.ceil(t_end / (cfg["time"]["dt_factor"] * eps**2)))
    params = _params(cfg, grid, eps, t_end / nsteps)
    state = run_steps(SimState.at_rest(grid, c), params, nsteps)
    radius = level_set_radius(state, grid)
    exact = float(np.sqrt(R0**2 - 2 * t_end))
    # fiber decomposition of the normalized deviation from c_A on the MCF circle
    delta_t = min(cfg.delta(), 0.99 * exact / 3.0)
    tub_t = TubularMap(Interface.circle(exact, 256, cfg["geometry"]["center"]), delta=delta_t)
    cA = build_cA0(eps, tub_t, p).on_grid(*grid.coords())
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        fd = fiber_decompose(state.c - cA, tub_t, p, eps, grid=grid)
    return dict(eps=eps, n=grid.nx, steps=nsteps, radius=radius, exact=exact, error=abs(radius - exact),
                remainder_fraction=fd.remainder_fraction), state


def _pool_map(fn, items, threads):
    if threads and threads > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(fn, items))
    return [fn(i) for i in items]


def run_converge(cfg, out, threads=1):
    if cfg["geometry"]["shape"] != "circle":
        raise ValueError("the convergence study uses the shrinking circle")
    eps = sorted(cfg.eps_values(), reverse=True)
    results = _pool_map(converge_case, [(cfg.values, e) for e in eps], threads)
    rows = [r for r, _ in results]
    for (r, st), e in zip(results, eps):
        save_snapshot(out / f"final_eps{e:g}.npz", st)
    np.savetxt(out / "errors.csv", np.array([[r["eps"], r["n"], r["steps"], r["radius"], r["error"],
                                              r["remainder_fraction"]] for r in rows]),
               delimiter=",", header="eps,n,steps,radius,error,remainder_fraction", comments="", fmt="%.17g")
    rep = fit_rate([r["eps"] for r in rows], [r["error"] for r in rows], cfg["sweep"]["order_threshold"])
    summary = rep.as_dict()
    summary["remainder_fraction"] = [r["remainder_fraction"] for r in rows]
    _json(out / "rate_report.json", summary)
    if cfg["output"]["plots"]:
        _plot(out / "rate.png", rep.eps, {"error": rep.errors,
                                          "fit": np.exp(rep.intercept) * rep.eps**rep.order},
              "eps", "radius error", logx=True, logy=True)
    return summary


def spectrum_case(args):
    cfg_dict, eps = args
    cfg = RunConfig(cfg_dict["run"]["kind"], cfg_dict)
    grid = _grid(cfg, eps)
    tub = TubularMap(_interface(cfg), delta=cfg.delta())
    c = build_cA0(eps, tub, optimal_profile()).on_grid(*grid.coords())
    op = LinearizedOperator.from_field(grid, c, eps, stencil=cfg["grid"]["stencil"])
    res = min_eigenvalue(op)
    return [eps, res.value, res.iterations, res.residual]


def run_spectrum(cfg, out, threads=1):
    eps = sorted(cfg.eps_values(), reverse=True)
    rows = _pool_map(spectrum_case, [(cfg.values, e) for e in eps], threads)
    write_sweep(out / "spectrum.csv", rows)
    lam = np.array([r[1] for r in rows])
    summary = dict(eps=eps, lambda_min=lam.tolist(), lower_bound=float(lam.min()))
    if np.all(lam < 0):
        rep = fit_rate(eps, -lam)
        summary["exponent"] = rep.order
        summary["exponent_band"] = rep.band
    _json(out / "spectrum.json", summary)
    if cfg["output"]["plots"]:
        _plot(out / "spectrum.png", np.array(eps), {"lambda_min": lam}, "eps", "lambda_min", logx=True)
    return summary


def run_expansion(cfg, out):
    if cfg["geometry"]["shape"] != "circle":
        raise ValueError("the expansion diagnostics use a circle")
    R = cfg["geometry"]["radius"]
    itf = _interface(cfg)
    tub = TubularMap(itf, delta=cfg.delta())
    p = optimal_profile()
    g0 = g0_field(tub, None, 1.0 / R)
    s = itf.grid
    on = g0.on_gamma(s)
    d = np.array([-0.1 * R, 0.1 * R])
    x = tub.point(d, np.zeros(2))
    off = g0.off_gamma(x)
    exact_off = -1.0 / (R * (R - d))
    np.savetxt(out / "g0.csv", np.column_stack([s, on, np.full_like(s, -1.0 / R**2)]), delimiter=",",
               header="s,g0,g0_exact", comments="", fmt="%.17g")
    c2 = solve_c2(p, 0.0, float(np.mean(on)))
    k = 3
    dt = 1e-3
    h = surface_parabolic_solve(itf, np.cos(2 * np.pi * k * s), 0.05, dt)
    heat_err = float(np.max(np.abs(h.slice() - np.exp(-k**2 * 0.05 / R**2) * np.cos(2 * np.pi * k * s))))
    summary = dict(g0_on_gamma_rel_error=float(np.max(np.abs(on * R**2 + 1.0))),
                   g0_off_gamma_rel_error=float(np.max(np.abs(off / exact_off - 1.0))),
                   odd_moment=odd_moment(p), heat_mode_error=heat_err,
                   c2_far_field=[float(c2.W2.limit_minus), float(c2.W2.limit_plus)])
    _json(out / "expansion.json", summary)
    return summary


RUNNERS = {"profile": run_profile, "mcf": run_mcf, "simulate": run_simulate,
           "converge": run_converge, "spectrum": run_spectrum, "expansion": run_expansion}


def run(cfg, out, threads=1):
    """Execute the configured experiment and write ``manifest.json``."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    runner = RUNNERS[cfg.kind]
    if cfg.kind in ("converge", "spectrum"):
        summary = runner(cfg, out, threads=threads)
    else:
        summary = runner(cfg, out)
    wall = time.perf_counter() - t0
    manifest = dict(kind=cfg.kind, config=cfg.as_dict(), config_hash=cfg.hash(), seed=cfg.seed,
                    threads=threads, wall_time=wall,
                    versions=dict(nsaclab=__version__, numpy=np.__version__, scipy=scipy.__version__,
                                  python=platform.python_version()),
                    outputs=sorted(f.name for f in out.iterdir() if f.name != "manifest.json"),
                    summary=summary)
    with open(out / "config.ini", "w", encoding="utf-8") as fh:
        fh.write(cfg.source)
    _json(out / "manifest.json", manifest)
    return manifest


def default_threads():
    try:
        return max(1, int(os.environ.get("NSACLAB_THREADS", "1")))
    except ValueError:
        return 1
