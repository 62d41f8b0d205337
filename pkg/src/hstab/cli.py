"""Command-line driver: ``hstab {identities,scaling,sharp-example,coercivity,fit}``.

Configuration comes from an optional ``key = value`` file (``--config``)
overridden by ``--key value`` flags.  Every run writes the resolved
configuration, a JSON report and, for sweeps, a CSV table into ``--out``.

Exit codes: 0 all checks pass, 1 a scientific check failed, 2 usage or I/O
error, 3 numerical non-convergence.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from ._validation import BubbleCollisionError, CalibrationError, ConvergenceError, GridFormatError, HstabError
from .bubbles import BubbleConfig, calibrate_c0, exact_constants, mode_residual, pde_residual, sample_points
from .fitter import deficit, fit_bubbles, regime_function
from .grid import GridFn, build_grid, load_gridfn, sample
from .group import Gauge, compose, dilate, dist, hnorm, inverse
from .interactions import (
    ScalingReport,
    dilation_identity_ratio,
    f_lp_norm,
    fit_slope,
    pair_integral,
    pairing_lower_bound,
    zmode_limit,
    zmode_ratio,
)
from .solver import coercivity_estimate, dminus1_norm, solve_rho

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3
CSV_HEADER = ["quantity", "eps", "value", "err_estimate", "slope", "predicted", "verdict"]

DEFAULT_EPS = {
    "scaling": {1: (1e-1, 5e-2, 2e-2, 1e-2, 5e-3, 2e-3, 1e-3), 2: (1e-1, 5e-2, 2e-2, 1e-2, 5e-3, 2e-3), 3: (2e-2, 1e-2, 5e-3, 2e-3, 1e-3, 5e-4)},
    "sharp-example": (1e-1, 5e-2, 2e-2, 1e-2, 5e-3, 2e-3, 1e-3),
    "coercivity": (1e-1, 5e-2, 2e-2),
}


class UsageError(HstabError):
    pass


@dataclass
class RunConfig:
    """Resolved parameters of one run."""

    command: str = "identities"
    n: int = 0
    eps: tuple = ()
    resolution: int = 256
    box_factor: float = 4.0
    box_margin: float = 20.0
    seed: int = 0
    points: int = 200
    c0_scale: float = 1.0
    budget: float = 600.0
    refine: bool = False
    input: str = ""
    m: int = 1
    init: str = ""
    tol: float = 0.0
    max_iter: int = 100
    deficit: str = "grid"
    out: str = "hstab-out"
    threads: int = field(default=1, metadata={"env": "HSTAB_THREADS"})

    def resolve(self) -> "RunConfig":
        if self.n == 0:
            self.n = 1 if self.command in ("identities", "scaling") else 2
        if self.n not in (1, 2, 3) and self.command != "fit":
            raise UsageError("n must be 1, 2 or 3")
        if not self.eps and self.command in DEFAULT_EPS:
            d = DEFAULT_EPS[self.command]
            self.eps = d[self.n] if isinstance(d, dict) else d
        self.eps = tuple(float(e) for e in self.eps)
        if any(not 0 < e < 1 for e in self.eps):
            raise UsageError("eps values must lie in (0, 1)")
        if self.resolution < 16:
            raise UsageError("resolution must be at least 16")
        self.threads = max(1, int(self.threads))
        return self

    def as_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(repr(x) for x in v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    def as_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["eps"] = list(self.eps)
        return d


def _convert(name: str, raw: str):
    fields = {f.name: f for f in dataclasses.fields(RunConfig)}
    if name not in fields:
        raise UsageError(f"unknown configuration key {name!r}")
    default = fields[name].default
    raw = raw.strip()
    try:
        if name == "eps":
            return tuple(float(x) for x in raw.replace(";", ",").split(",") if x.strip())
        if isinstance(default, bool):
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw
    except ValueError:
        raise UsageError(f"bad value for {name}: {raw!r}") from None


def parse_config_text(text: str) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for k, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"config line {k}: expected key = value")
        key, val = line.split("=", 1)
        key = key.strip().replace("-", "_")
        out[key] = _convert(key, val)
    return out


def build_config(command: str, config_path: str | None, overrides: list, out: str | None) -> RunConfig:
    values = {}
    env = os.environ.get("HSTAB_THREADS")
    if env:
        values["threads"] = _convert("threads", env)
    if config_path:
        try:
            values.update(parse_config_text(Path(config_path).read_text()))
        except OSError as exc:
            raise UsageError(f"cannot read config: {exc}") from None
    it = iter(overrides)
    for tok in it:
        if not tok.startswith("--"):
            raise UsageError(f"unexpected argument {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, val = key.split("=", 1)
        else:
            try:
                val = next(it)
            except StopIteration:
                raise UsageError(f"missing value for {tok}") from None
        key = key.replace("-", "_")
        values[key] = _convert(key, val)
    values.pop("command", None)
    if out is not None:
        values["out"] = out
    return RunConfig(command=command, **values).resolve()


# -- helpers ----------------------------------------------------------------------


def _check(name, value, threshold, passed, **extra) -> dict:
    d = {"name": name, "value": float(value), "threshold": float(threshold), "passed": bool(passed)}
    d.update(extra)
    return d


def _sweep(cfg: RunConfig, func, eps_list):
    """Evaluate ``func(eps)`` over the sweep; points not started before the
    budget runs out are dropped.  Returns ``(eps_done, results, skipped)``."""
    start = time.monotonic()
    done, results, skipped = [], [], []
    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            futs = [(e, pool.submit(func, e)) for e in eps_list]
            for e, fu in futs:
                results.append(fu.result())
                done.append(e)
        return done, results, skipped
    for e in eps_list:
        if time.monotonic() - start > cfg.budget:
            skipped.append(e)
            continue
        results.append(func(e))
        done.append(e)
    return done, results, skipped


def separated_pair(cfg: RunConfig, eps: float):
    """Two unit bubbles at ``t = 0`` and ``t = -1/eps`` with a grid around them."""
    c = exact_constants(cfg.n)
    s = 1.0 / eps
    R = cfg.box_factor * math.sqrt(s) + cfg.box_margin
    L = R * R
    grid = build_grid(cfg.n, R, -s - L, L, cfg.resolution, centers=[(0.0, 0.0), (0.0, -s)])
    return BubbleConfig.on_axis(c, [1.0, 1.0], [0.0, -s]), grid


def _report(quantity, eps, values, errors=None, **kw) -> ScalingReport:
    return fit_slope(eps, values, errors, quantity=quantity, **kw)


# -- subcommands --------------------------------------------------------------------


def cmd_identities(cfg: RunConfig) -> dict:
    """Calibration, group axioms, the bubble equation and the mode equations."""
    n = cfg.n
    checks = []
    rng = np.random.default_rng(cfg.seed)
    a, b, c = (rng.normal(size=(cfg.points, 2 * n + 1)) for _ in range(3))
    assoc = np.abs(compose(compose(a, b), c) - compose(a, compose(b, c))).max()
    checks.append(_check("group_associativity", assoc, 1e-12, assoc <= 1e-12))
    inv = np.abs(compose(a, inverse(a))).max()
    checks.append(_check("group_inverse", inv, 1e-12, inv <= 1e-12))
    mu = np.exp(rng.normal(size=(cfg.points, 1)))
    hom = np.abs(dilate(mu[:, 0], compose(a, b)) - compose(dilate(mu[:, 0], a), dilate(mu[:, 0], b))).max()
    checks.append(_check("dilation_homomorphism", hom, 1e-10, hom <= 1e-10 * max(1.0, np.abs(a).max())))
    nh = np.abs(hnorm(dilate(mu[:, 0], a)) - mu[:, 0] * hnorm(a)).max()
    checks.append(_check("norm_homogeneity", nh, 1e-10, nh <= 1e-10 * max(1.0, hnorm(a).max())))
    tri = float((dist(a, c) - dist(a, b) - dist(b, c)).max())
    checks.append(_check("distance_triangle", tri, 1e-12, tri <= 1e-12))
    try:
        const = calibrate_c0(n)
        cal = abs(const.c0 / exact_constants(n).c0 - 1.0)
        checks.append(_check("calibration_c0", cal, 1e-8, cal <= 1e-8, c0=const.c0))
    except CalibrationError as exc:
        checks.append(_check("calibration_c0", float("inf"), 1e-8, False, error=str(exc)))
        const = exact_constants(n)
    const = const.with_c0(const.c0 * cfg.c0_scale)
    pts = sample_points(n, cfg.points, seed=cfg.seed + 1)
    g = Gauge.identity(n)
    res = float(pde_residual(const, g, pts).max())
    checks.append(_check("bubble_equation_residual", res, 1e-5, res <= 1e-5))
    lam = math.exp(rng.normal())
    gg = Gauge(lam, np.r_[rng.normal(size=2 * n), rng.normal()])
    res_g = float(pde_residual(const, gg, pts).max())
    checks.append(_check("gauged_bubble_equation_residual", res_g, 1e-5, res_g <= 1e-5))
    ratio = dilation_identity_ratio(n, const)
    target = -const.dim.Q / const.dim.p
    rel = abs(ratio / target - 1.0)
    checks.append(_check("dilation_identity_ratio", ratio, 1e-3, rel <= 1e-3, predicted=target, relative_error=rel))
    for k in range(1, 2 * n + 3):
        r = float(mode_residual(const, k, g, pts).max())
        checks.append(_check(f"mode_equation_residual_{k}", r, 1e-5, r <= 1e-5))
    return {"checks": checks, "reports": []}


def cmd_scaling(cfg: RunConfig) -> dict:
    """Slope studies of the interaction integrals and the dual norm of ``f``."""
    n = cfg.n
    eps = list(cfg.eps)
    Q, p = 2 * n + 2, (2 * n + 4) / (2 * n)
    const = exact_constants(n)
    reports, checks, skipped = [], [], {}

    # pair integral: concentric bubbles with scale ratio eps
    done, vals, sk = _sweep(cfg, lambda e: pair_integral(p, 1.0, e, 0.0, n, const, full_output=True), eps)
    skipped["pair_integral"] = sk
    reports.append(_report("pair_integral", done, [v for v, _ in vals], [d for _, d in vals], predicted=n, tolerance=0.05 * n, claim="int U^p (gU) ~ eps^n for concentric bubbles"))

    # constant of the projected interaction
    done, vals, sk = _sweep(cfg, lambda e: zmode_ratio(e, 0.0, n, const), eps)
    limit = zmode_limit(n)
    e_min = min(done)
    r_min = vals[done.index(e_min)]
    checks.append(_check("zmode_ratio", r_min, 0.1, abs(r_min / limit - 1) <= 0.1, eps=e_min, predicted=limit))
    zrep = {"quantity": "zmode_ratio", "eps": done, "values": vals, "predicted": limit}

    # dual norm of f on the grid
    def fnorm(e):
        config, grid = separated_pair(cfg, e)
        return dminus1_norm(grid, sample(grid, config.f_rt), check=False)

    done, vals, sk = _sweep(cfg, fnorm, eps)
    skipped["f_dminus1"] = sk
    if n == 1:
        reports.append(_report("f_dminus1", done, vals, predicted=1.0, tolerance=0.05, kind="at_least", claim="||f||_D-1 <~ eps"))
    elif n == 2:
        reports.append(_report("f_dminus1", done, vals, predicted=2.0, tolerance=2.0, kind="band", band_log_power=0.5, claim="||f||_D-1 ~ eps^2 |log eps|^(1/2)"))
    else:
        reports.append(_report("f_dminus1", done, vals, predicted=(Q + 2) / 4, tolerance=0.2, claim="||f||_D-1 <~ eps^((Q+2)/4)"))
        done, vals, sk = _sweep(cfg, lambda e: pairing_lower_bound(separated_pair(cfg, e)[0]), eps)
        skipped["pairing_lower_bound"] = sk
        reports.append(_report("pairing_lower_bound", done, vals, predicted=(Q + 2) / 4, tolerance=0.2, claim="||f||_D-1 >~ eps^((Q+2)/4)"))
        done, vals, sk = _sweep(cfg, lambda e: f_lp_norm(separated_pair(cfg, e)[0]), eps)
        skipped["f_lp_norm"] = sk
        reports.append(_report("f_lp_norm", done, vals, predicted=Q / 2, tolerance=0.1, kind="at_least", claim="int |f|^(2Q/(Q+2)) <~ eps^(Q/2)"))
    return {"checks": checks, "reports": reports, "zmode_ratio": zrep, "skipped": skipped}


def _sharp_point(cfg: RunConfig, e: float) -> dict:
    config, grid = separated_pair(cfg, e)
    try:
        res = solve_rho(config, grid)
    except ConvergenceError as exc:
        return {"eps": e, "error": str(exc)}
    u = GridFn(grid, res.problem.sigma + res.rho.flat, "u")
    init = [(g.lam, g.xi[-1]) for g in config.gauges]
    fit = fit_bubbles(u, config.m, init)
    gamma = deficit(u, fit.config)
    return {
        "eps": e,
        "rho_d1": res.d1_norm,
        "distance": fit.distance,
        "deficit": gamma,
        "quotient": fit.distance / gamma,
        "regime_quotient": fit.distance / regime_function(gamma, cfg.n),
        "fitted_eps": fit.eps,
        "eps_power_over_deficit": fit.eps**cfg.n / gamma,
        "contraction": res.contraction,
        "fit_iterations": fit.iterations,
        "grid": grid.describe(),
    }


def cmd_sharp_example(cfg: RunConfig) -> dict:
    """Two bubbles at ``t = 0`` and ``t = -1/eps`` corrected by the remainder."""
    n = cfg.n
    Q = 2 * n + 2
    done, rows, sk = _sweep(cfg, lambda e: _sharp_point(cfg, e), list(cfg.eps))
    failed = [r for r in rows if "error" in r]
    rows = [r for r in rows if "error" not in r]
    eps = [r["eps"] for r in rows]
    reports, checks = [], []
    reports.append(_report("deficit", eps, [r["deficit"] for r in rows], predicted=(Q - 2) / 2, tolerance=0.1, kind="at_least", claim="deficit <~ eps^((Q-2)/2)"))
    reports.append(_report("rho_d1", eps, [r["rho_d1"] for r in rows], predicted=2.0 if n == 2 else (Q + 2) / 4, tolerance=0.1, kind="at_most", claim="||rho|| >~ eps^2 |log eps|^(1/2)"))
    order = np.argsort(eps)[::-1]
    q = np.array([rows[i]["quotient"] for i in order])
    checks.append(_check("quotient_monotone", float(np.min(np.diff(q))) if q.size > 1 else 0.0, 0.0, bool(np.all(np.diff(q) > 0)), values=[float(x) for x in q]))
    ratio = np.array([r["eps_power_over_deficit"] for r in rows])
    band = float(ratio.max() / ratio.min())
    checks.append(_check("eps_power_over_deficit_bounded", band, 2.0, band <= 2.0, values=[float(x) for x in ratio]))
    return {"checks": checks, "reports": reports, "rows": rows, "failed_points": failed, "skipped": {"sharp": sk}}


def cmd_coercivity(cfg: RunConfig) -> dict:
    """Smallest eigenvalue of the projected linearized operator over a sweep."""
    n = cfg.n
    c = exact_constants(n)
    R0 = cfg.box_factor * 10 + cfg.box_margin
    g0 = build_grid(n, R0, -R0 * R0, R0 * R0, cfg.resolution)
    single = BubbleConfig.on_axis(c, [1.0], [0.0])
    base = coercivity_estimate(single, g0, seed=cfg.seed)
    checks = []
    extra = {"baseline": base}
    if cfg.refine:
        g1 = build_grid(n, R0, -R0 * R0, R0 * R0, 2 * cfg.resolution)
        fine = coercivity_estimate(single, g1, seed=cfg.seed)
        rel = abs(fine / base - 1)
        checks.append(_check("baseline_refinement", rel, 0.1, rel <= 0.1, refined=fine))

    def point(e):
        config, grid = separated_pair(cfg, e)
        mu = coercivity_estimate(config, grid, seed=cfg.seed)
        mu0 = coercivity_estimate(config, grid, projected=False, seed=cfg.seed)
        return {"eps": e, "projected": mu, "unprojected": mu0}

    done, rows, sk = _sweep(cfg, point, list(cfg.eps))
    mus = np.array([r["projected"] for r in rows])
    checks.append(_check("uniform_lower_bound", float(mus.min()), 0.5 * base, mus.min() >= 0.5 * base))
    worst = max(r["unprojected"] / r["projected"] for r in rows)
    checks.append(_check("projection_gap", worst, 0.1, worst <= 0.1))
    extra.update(rows=rows, skipped={"coercivity": sk})
    return {"checks": checks, "reports": [], **extra}


def _parse_init(text: str, m: int):
    items = [s for s in text.replace(";", ",").split(",") if s.strip()]
    if len(items) != m:
        raise UsageError(f"init must list {m} entries lam:t, got {len(items)}")
    out = []
    for s in items:
        try:
            lam, tc = (float(x) for x in s.split(":"))
        except ValueError:
            raise UsageError(f"bad init entry {s!r}; expected lam:t") from None
        out.append((lam, tc))
    return out


def cmd_fit(cfg: RunConfig) -> dict:
    """Fit bubbles to a grid function stored in an HGF1 file."""
    if not cfg.input:
        raise UsageError("fit needs --input PATH")
    try:
        u = load_gridfn(cfg.input)
    except OSError as exc:
        raise UsageError(f"cannot read {cfg.input}: {exc}") from None
    if cfg.m == 0:
        gamma = deficit(u)
        return {"checks": [], "reports": [], "deficit": gamma, "grid": u.grid.describe()}
    init = _parse_init(cfg.init, cfg.m)
    try:
        fit = fit_bubbles(u, cfg.m, init, tol=cfg.tol or None, max_iter=cfg.max_iter)
    except BubbleCollisionError as exc:
        out = {"checks": [_check("weak_interaction", exc.result.eps if exc.result else float("nan"), 0.5, False)], "reports": []}
        if exc.result is not None:
            out["fit"] = exc.result.to_dict()
        return out
    fit.deficit = deficit(u, fit.config if cfg.deficit == "background" else None)
    return {"checks": [_check("orthogonality", float(np.abs(fit.residuals).max()), fit.tolerance, True)], "reports": [], "fit": fit.to_dict(), "grid": u.grid.describe()}


COMMANDS = {
    "identities": cmd_identities,
    "scaling": cmd_scaling,
    "sharp-example": cmd_sharp_example,
    "coercivity": cmd_coercivity,
    "fit": cmd_fit,
}


# -- output ---------------------------------------------------------------------------


def _jsonable(x):
    if isinstance(x, ScalingReport):
        return x.to_dict()
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return [_jsonable(v) for v in x.tolist()]
    if isinstance(x, float) and not math.isfinite(x):
        return repr(x)
    return x


def csv_text(reports, rows=()) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for rep in reports:
        for row in rep.csv_rows():
            w.writerow(row)
    for row in rows:
        w.writerow(row)
    return buf.getvalue()


def write_outputs(cfg: RunConfig, result: dict) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    name = cfg.command.replace("-", "_")
    (out / f"{name}.config").write_text(cfg.as_text())
    payload = {"version": __version__, "command": cfg.command, "config": cfg.as_dict(), "passed": all_passed(result)}
    payload.update(result)
    (out / f"{name}.json").write_text(json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n")
    if result.get("reports") or cfg.command in ("scaling", "sharp-example", "coercivity"):
        (out / f"{name}.csv").write_text(csv_text(result.get("reports", []), _extra_rows(cfg, result)))
    return out


def _extra_rows(cfg, result):
    rows = []
    z = result.get("zmode_ratio")
    if z:
        for e, v in zip(z["eps"], z["values"]):
            ok = abs(v / z["predicted"] - 1) <= 0.1
            rows.append(["zmode_ratio", repr(float(e)), repr(float(v)), "0.0", "nan", repr(float(z["predicted"])), "pass" if ok else "fail"])
    for r in result.get("rows", []) if cfg.command == "sharp-example" else []:
        for key in ("quotient", "regime_quotient", "eps_power_over_deficit"):
            rows.append([key, repr(float(r["eps"])), repr(float(r[key])), "0.0", "nan", "nan", "n/a"])
    for r in result.get("rows", []) if cfg.command == "coercivity" else []:
        for key in ("projected", "unprojected"):
            rows.append([f"mu_min_{key}", repr(float(r["eps"])), repr(float(r[key])), "0.0", "nan", "nan", "n/a"])
    return rows


def all_passed(result: dict) -> bool:
    ok = all(c["passed"] for c in result.get("checks", []))
    ok &= all(r.passed is not False for r in result.get("reports", []))
    ok &= not result.get("failed_points")
    return bool(ok)


def _summary(result: dict, stream) -> None:
    for c in result.get("checks", []):
        print(f"{'PASS' if c['passed'] else 'FAIL'}  {c['name']}: {c['value']:.6g} (threshold {c['threshold']:.3g})", file=stream)
    for r in result.get("reports", []):
        print(f"{r.verdict.upper():4s}  {r.quantity}: slope {r.slope:.4f} (predicted {r.predicted:g}, {r.kind}, tol {r.tolerance:g})", file=stream)
    if "deficit" in result and not result.get("fit"):
        print(f"deficit {result['deficit']:.10g}", file=stream)
    if result.get("fit"):
        f = result["fit"]
        print(f"fit: lams {f['lams']} centers {f['centers_t']} distance {f['distance']:.6g} deficit {f['deficit']}", file=stream)


def make_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hstab", description="Bubble interaction and stability experiments on the Heisenberg group.")
    ap.add_argument("--version", action="version", version=f"hstab {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name, help=COMMANDS[name].__doc__.splitlines()[0])
        sp.add_argument("--config", help="key = value configuration file")
        sp.add_argument("--out", help="output directory")
    return ap


def main(argv=None, stream=None) -> int:
    stream = stream or sys.stdout
    ap = make_parser()
    try:
        args, rest = ap.parse_known_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        cfg = build_config(args.command, args.config, rest, args.out)
        result = COMMANDS[cfg.command](cfg)
        write_outputs(cfg, result)
    except (UsageError, GridFormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConvergenceError as exc:
        print(f"non-convergence: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    _summary(result, stream)
    return EXIT_OK if all_passed(result) else EXIT_FAIL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
