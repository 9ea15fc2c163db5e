"""Command-line driver: ``zkls {spectrum,evans,simulate,bifurcate,replay}``.

Every subcommand accepts ``--config FILE`` (key=value lines, ``#`` comments);
explicit flags override config values. Outputs go to ``--out`` together with
``manifest.json``. Exit codes: 0 success, 2 precondition violation,
3 numerical failure.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from decimal import Decimal, InvalidOperation
from pathlib import Path

import numpy as np

from . import __version__
from . import bifurcation as bif
from . import diagnostics as dg
from . import evans as ev
from . import simulator as sim
from . import spectral as sp
from .runio import RunManifest, parse_config, write_csv, write_json

log = logging.getLogger("zkls")

EXIT_OK, EXIT_PRECONDITION, EXIT_NUMERICAL = 0, 2, 3


class ConfigError(ValueError):
    pass


def _floats(text: str):
    return [float(s) for s in str(text).split(",") if s.strip()]


def _bool(text) -> bool:
    s = str(text).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# name -> (converter, default, help). Defaults of None are derived at run time.
SCHEMAS = {
    "spectrum": {
        "c": (float, 1.0, "soliton speed"),
        "L": (str, "1.0", "torus scale (y-period 2 pi L), or 'critical'"),
        "n_max": (int, 3, "largest transverse mode"),
        "x_half_width": (float, None, "half-width X of the x-grid (default 40/sqrt(c))"),
        "n_x": (int, 512, "x collocation points"),
    },
    "evans": {
        "c": (float, 1.0, "soliton speed"),
        "a_values": (_floats, "0.2,0.4,0.6,0.8,1.0,1.2", "comma-separated a values"),
        "lambda_values": (_floats, "1e-8,0.01,0.1,0.5,1,5,50", "comma-separated lambda values (units of c)"),
        "matrix_check": (_bool, "true", "compare roots with the weighted matrix eigenvalue"),
        "n_x": (int, 512, "x points for the matrix check"),
    },
    "simulate": {
        "c": (float, 1.0, "soliton speed"),
        "L": (str, "0.5", "torus scale (y-period 2 pi L), or 'critical'"),
        "delta": (float, 1e-3, "perturbation size"),
        "perturbation": (str, "random", "'random' or 'unstable'"),
        "k0": (int, 1, "transverse index of the unstable mode"),
        "seed": (int, 0, "random seed"),
        "n_x": (int, 512, "x points"),
        "n_y": (int, None, "y points (default 16 for L <= 1, else 32)"),
        "x_half_width": (float, None, "half-width X (default 40/sqrt(c))"),
        "dt": (float, 0.005, "time step"),
        "t_end": (float, None, "final time (default 50/c)"),
        "record_every": (int, 20, "steps between ledger rows"),
        "diag_stride": (int, 10, "ledger rows between decompositions (0 disables diagnostics)"),
        "R": (float, 4.0, "monotonicity weight scale"),
        "x0": (float, 10.0, "monotonicity weight offset"),
        "beta": (float, 0.25, "monotonicity weight drift"),
        "eps_plus": (str, "auto", "virial weight; 'auto' fits it at the critical L"),
    },
    "bifurcate": {
        "c0": (float, 1.0, "base speed"),
        "amplitudes": (_floats, None, "branch node amplitudes (default 8 nodes up to 0.1 sqrt(c0))"),
        "quartic_amplitudes": (_floats, "0.02,0.04,0.06,0.08", "amplitudes for the action-gap fit"),
        "n_x": (int, 256, "x points"),
        "n_y": (int, 32, "y points"),
    },
}


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("ZKLS_THREADS", "1")))
    except ValueError:
        raise ConfigError("ZKLS_THREADS must be an integer")


def _resolve(sub: str, flags: dict, config_path) -> dict:
    schema = SCHEMAS[sub]
    raw = {}
    if config_path:
        cfg = parse_config(Path(config_path).read_text())
        unknown = sorted(set(cfg) - set(schema))
        if unknown:
            raise ConfigError(f"unknown config keys for {sub}: {', '.join(unknown)}")
        raw.update(cfg)
    raw.update({k: v for k, v in flags.items() if k in schema and v is not None})
    out = {}
    for key, (conv, default, _) in schema.items():
        val = raw.get(key, default)
        if val is None:
            out[key] = None
            continue
        try:
            out[key] = conv(val) if isinstance(val, str) else val
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {val!r} ({exc})")
    return out


def _parse_L(text: str, c: float):
    """(L, tolerance on 1/L^2 - 5c/4 implied by the digits given)."""
    if str(text).strip().lower() == "critical":
        return sp.critical_length(c), 1e-12
    try:
        dec = Decimal(str(text).strip())
    except InvalidOperation:
        raise ConfigError(f"L must be a number or 'critical', got {text!r}")
    L = float(dec)
    if not L > 0:
        raise ConfigError("L must be positive")
    exp = dec.as_tuple().exponent
    half_ulp = 0.5 * 10.0 ** exp if isinstance(exp, int) else 0.0
    return L, max(1e-12, 2.0 * half_ulp / L ** 3)


# ----------------------------------------------------------------------------
# subcommands

def _positive(name, value):
    if value is None or not value > 0:
        raise ConfigError(f"{name} must be positive, got {value}")
    return value


def cmd_spectrum(p: dict, out: Path) -> list:
    c = _positive("c", p["c"])
    L, tol = _parse_L(p["L"], c)
    X = p["x_half_width"] or 40.0 / np.sqrt(c)
    grid = sp.Grid1D(X, p["n_x"])
    grid.check_for(c)
    rows = []
    for n in range(p["n_max"] + 1):
        a = n * n / L ** 2
        low = [w.real for w, _ in sp.eigen_extremal(sp.build_lc(c, a, grid), 2)]
        mu = sp.max_real_eigenvalue(c, a, grid, weight=0.5 * np.sqrt(c))
        rows.append((n, n / L, a, low[0], low[1], mu.real, mu.imag))
    verdict = sp.classify_threshold(c, L, tol)
    f1 = write_csv(out / "spectrum.csv",
                   ("n", "k_y", "a", "lc_eig0", "lc_eig1", "dx_lc_max_re", "dx_lc_max_im"), rows)
    f2 = write_json(out / "verdict.json", {
        "c": c, "L": L, "l_critical": verdict.l_critical, "classification": verdict.classification,
        "witness_mode": verdict.witness_mode, "tolerance": tol,
        "unstable_modes": sp.unstable_modes(c, L) if verdict.classification == "unstable" else []})
    print(f"verdict: {verdict.classification}"
          + (f" (witness mode {verdict.witness_mode})" if verdict.witness_mode else ""))
    return [f1, f2]


def _evans_row(args):
    c, a, lam_values, matrix_check, n_x = args
    prob = ev.EvansProblem(c, a)
    d_vals = [ev.evans_real(prob, lam * c) for lam in lam_values]
    d0 = ev.evans_real(prob, ev.LAMBDA_ZERO)
    d50 = ev.evans_real(prob, 50.0 * c)
    root = lam_mat = float("nan")
    if 0 < a < 1.25 * c:
        try:
            root = ev.evans_root(prob)
        except ev.RootNotFoundError as exc:
            log.warning("a=%g: %s", a, exc)
        if matrix_check:
            grid = sp.Grid1D(40.0 / np.sqrt(c), n_x)
            lam_mat = sp.max_real_eigenvalue(c, a, grid, weight=0.5 * np.sqrt(c)).real
    return d_vals, (a, root, lam_mat, abs(root - lam_mat) / abs(lam_mat) if lam_mat == lam_mat else float("nan"),
                    d0, d50, abs(d50 - 1.0))


def cmd_evans(p: dict, out: Path) -> list:
    c = _positive("c", p["c"])
    jobs = [(c, a, p["lambda_values"], p["matrix_check"], p["n_x"]) for a in p["a_values"]]
    workers = _threads()
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            results = list(pool.map(_evans_row, jobs))
    else:
        results = [_evans_row(j) for j in jobs]
    surface = [(a, lam * c, d) for a, (dv, _) in zip(p["a_values"], results)
               for lam, d in zip(p["lambda_values"], dv)]
    roots = [r for _, r in results]
    f1 = write_csv(out / "evans_surface.csv", ("a", "lambda", "D"), surface)
    f2 = write_csv(out / "evans_roots.csv",
                   ("a", "lambda_evans", "lambda_matrix", "rel_diff", "D_at_0plus", "D_at_50c",
                    "abs_D50_minus_1"), roots)
    inside = [r for r in roots if 0 < r[0] < 1.25 * c]
    summary = {
        "c": c,
        "D_at_0plus_negative": all(r[4] < 0 for r in inside),
        "max_rel_diff": max((r[3] for r in inside if r[3] == r[3]), default=float("nan")),
        "max_abs_D50_minus_1": max(r[6] for r in roots),
        "D50_within_0.05": all(r[6] < 0.05 for r in roots),
    }
    f3 = write_json(out / "evans_summary.json", summary)
    for r in roots:
        print(f"a={r[0]:.4g} lambda={r[1]:.10g} D(0+)={r[4]:.4g} D(50c)={r[5]:.4g}")
    return [f1, f2, f3]


def _sim_grid(p, c, L) -> sp.Grid2D:
    X = p["x_half_width"] or 40.0 / np.sqrt(c)
    n_y = p["n_y"] or (16 if L <= 1.0 else 32)
    return sp.Grid2D(sp.Grid1D(X, p["n_x"]), n_y, L)


def cmd_simulate(p: dict, out: Path) -> list:
    c = _positive("c", p["c"])
    L_text = str(p["L"]).strip().lower()
    L, _ = _parse_L(p["L"], c)
    critical = L_text == "critical"
    grid = _sim_grid(p, c, L)
    t_end = p["t_end"] if p["t_end"] is not None else 50.0 / c
    diag = p["diag_stride"] > 0
    if p["perturbation"] not in ("random", "unstable"):
        raise ConfigError("perturbation must be 'random' or 'unstable'")
    k0 = p["k0"] if p["perturbation"] == "unstable" else None
    rep = sim.orbital_stability_experiment(
        c, L, p["delta"], seed=p["seed"], unstable_mode_k0=k0, grid=grid, dt=p["dt"], t_end=t_end,
        record_every=p["record_every"], stop_on_exceed=False, keep_fields=diag)
    st = rep.state
    col = sim.ledger_array(st)
    keys = ["t", "M", "E", "rho", "dist"] + [k for k in col if k.startswith("band")]
    files = [write_csv(out / "ledger.csv", keys, zip(*(col[k] for k in keys)))]
    summary = {
        "c": c, "L": L, "delta": p["delta"], "perturbation": p["perturbation"],
        "t_final": rep.t_final, "sup_orbit_distance": rep.sup_distance,
        "orbit_threshold": rep.threshold, "exceed_time": rep.exceed_time,
        "orbital_PASS": rep.passed, "mass_drift_per_time": rep.mass_drift_per_time,
        "mass_PASS": rep.mass_drift_per_time < 1e-10, "energy_drift": rep.energy_drift,
        "message": rep.message,
    }
    if k0 is not None:
        mu = st.meta["mu_max"]
        rate = sim.measure_growth_rate(st, k0)
        summary.update({"growth_rate": rate, "mu_matrix": mu})
        a = k0 * k0 / L ** 2
        lam = ev.evans_root(ev.EvansProblem(c, a))
        summary.update({"lambda_evans": lam, "growth_rel_err": abs(rate - lam) / lam,
                        "growth_PASS": abs(rate - lam) / lam < 0.05})
    if diag:
        files += _simulate_diagnostics(p, st, grid, c, critical, summary, out)
    files.append(write_json(out / "summary.json", summary))
    print(f"orbital {'PASS' if rep.passed else 'FAIL'}: sup dist {rep.sup_distance:.4e}"
          f" vs {rep.threshold:.1e}")
    if "growth_rate" in summary:
        print(f"growth rate {summary['growth_rate']:.8g} vs Evans {summary['lambda_evans']:.8g}"
              f" ({'PASS' if summary['growth_PASS'] else 'FAIL'})")
    return files


def _simulate_diagnostics(p, st, grid, c, critical, summary, out):
    traj = dg.trajectory_from_state(st, grid, c)
    bi = bif.branch_interp(c) if critical else None
    weight = dg.WeightProfile(p["R"], p["x0"], p["beta"])
    weight.check(c)
    i_ser = dg.monotonicity_I(traj, weight)
    i_back = dg.monotonicity_I(traj, weight, backward=True)
    j_ser = dg.monotonicity_J(traj, weight)
    if p["eps_plus"] == "auto":
        k4 = dg.branch_coercivity(bi).k2 if bi is not None else 0.5
        eps = dg.epsilon_plus(c, k4)
    else:
        eps = float(p["eps_plus"])
    stride = p["diag_stride"]
    times, states = dg.decompose_trajectory(traj, bi, stride, keep_going=True)
    if len(states) < len(range(0, len(traj.times), stride)):
        summary["diagnostics_stopped_at"] = float(traj.times[len(states) * stride])
    rows = []
    for n, ms in enumerate(states):
        k = n * stride
        vr = dg.virial_quantities(ms, grid, c, bi)
        rows.append((times[n], ms.rho, ms.c_mod, ms.a_vec[0], ms.a_vec[1], ms.eta_h1,
                     i_ser.values[k], i_back.values[k], j_ser.values[k], vr.weighted_phi,
                     vr.x_moment, vr.q_moment, vr.param_product, vr.functional(eps)))
    f = write_csv(out / "diagnostics.csv",
                  ("t", "rho", "c_mod", "a1", "a2", "eta_h1", "I", "I_minus", "J", "virial_phi",
                   "virial_xv2", "virial_qv2", "param_product", "virial_functional"), rows)
    summary.update({"I_violation": i_ser.violation, "I_minus_violation": i_back.violation,
                    "J_violation": j_ser.violation, "eps_plus": eps,
                    "weight": {"R": weight.R, "x0": weight.x0, "beta": weight.beta}})
    if len(states) >= 3:
        rr = dg.modulation_rates(states, times, c)
        summary.update({"K0": rr.K0, "rates_PASS": rr.passed})
    return [f]


def cmd_bifurcate(p: dict, out: Path) -> list:
    c0 = _positive("c0", p["c0"])
    grid = bif.default_branch_grid(c0, p["n_x"], p["n_y"])
    amps = p["amplitudes"] or list(bif.default_nodes(c0))
    pts = [bif.solve_branch(c0, a, grid) for a in amps]
    q = bif.line_soliton(c0, grid)
    rows = [(0.0, c0, bif.norm_sq(q, grid), float(np.max(np.abs(bif.stationary_residual(q, c0, grid)))), 0)]
    rows += [(pt.amplitude, pt.c_of_a, pt.mass, pt.residual_norm, pt.iterations) for pt in pts]
    f1 = write_csv(out / "branch.csv", ("a", "c_of_a", "mass", "residual", "iterations"), rows)
    est = bif.compute_c2_constant(c0, pts, strict=False)
    k_theory = bif.quartic_constant(c0, est.formula, grid)
    bi = bif.BranchInterp(c0, pts)
    k_fit, k6 = bif.fit_quartic(c0, p["quartic_amplitudes"], bi)
    summary = {
        "c0": c0, "L": grid.L, "c_curvature": est.c_curvature, "C2_formula": est.formula,
        "C2_mass_fit": est.mass_fit, "C2_rel_diff": est.rel_diff,
        "quartic_theory": k_theory, "quartic_fit": k_fit, "sextic_fit": k6,
        "quartic_rel_diff": abs(k_fit - k_theory) / abs(k_theory),
        "max_residual": max(pt.residual_norm for pt in pts),
        "c_curvature_positive": est.c_curvature > 0, "C2_positive": est.formula > 0,
    }
    f2 = write_json(out / "bifurcation_summary.json", summary)
    print(f"c'' = {est.c_curvature:.8g}, C2 = {est.formula:.8g} (mass fit {est.mass_fit:.8g})")
    return [f1, f2]


COMMANDS = {"spectrum": cmd_spectrum, "evans": cmd_evans, "simulate": cmd_simulate,
            "bifurcate": cmd_bifurcate}


# ----------------------------------------------------------------------------
# entry point

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="zkls", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"zkls {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    subs = ap.add_subparsers(dest="command", required=True)
    for name, schema in SCHEMAS.items():
        sp_ = subs.add_parser(name, help=f"run the {name} experiment")
        sp_.add_argument("--config", help="key=value config file")
        sp_.add_argument("--out", default=f"zkls_{name}", help="output directory")
        for key, (_, default, text) in schema.items():
            shown = "derived" if default is None else default
            sp_.add_argument("--" + key.replace("_", "-"), dest=key, default=None,
                             help=f"{text} [default: {shown}]")
    rp = subs.add_parser("replay", help="re-run a recorded manifest")
    rp.add_argument("manifest", help="path to manifest.json")
    rp.add_argument("--out", default=None, help="output directory (default: the recorded one)")
    return ap


def run_command(sub: str, params: dict, out: Path, seed: int = 0) -> RunManifest:
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    files = COMMANDS[sub](params, out)
    man = RunManifest(subcommand=sub, params=params, seed=seed,
                      outputs=[str(Path(f).name) for f in files],
                      wall_clock=time.perf_counter() - t0)
    man.params = dict(params, out=str(out))
    man.write(out / "manifest.json")
    return man


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "replay":
            man = RunManifest.read(args.manifest)
            params = {k: v for k, v in man.params.items() if k != "out"}
            out = Path(args.out or man.params.get("out", "."))
            flags = {k: (",".join(map(repr, v)) if isinstance(v, list) else v)
                     for k, v in params.items()}
            params = _resolve(man.subcommand, flags, None)
            run_command(man.subcommand, params, out, man.seed)
            return EXIT_OK
        flags = vars(args)
        params = _resolve(args.command, flags, args.config)
        run_command(args.command, params, Path(args.out), int(params.get("seed") or 0))
        return EXIT_OK
    except (ConfigError, ValueError, FileNotFoundError, sim.NoUnstableModeError) as exc:
        print(f"zkls: precondition violated: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    except (RuntimeError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"zkls: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
