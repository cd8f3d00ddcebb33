"""Command-line experiment runner: ``otlab run``, ``otlab plot`` and ``otlab selftest``."""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import io
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable

import numpy as np

from otlab.errors import OtlabError

EXPERIMENTS = ("contract", "rigidity", "stability", "tau", "density", "gaussian", "twopoint")


class ConfigError(Exception):
    """Malformed or unknown configuration (exit status 2)."""


class InvariantFailure(Exception):
    """A named invariant check failed inside a run (exit status 1)."""

    def __init__(self, check: str, detail: str = ""):
        super().__init__(f"{check}: {detail}" if detail else check)
        self.check = check


# ---------------------------------------------------------------------------
# configuration


class Config:
    """Flat ``key = value`` options from the ``[experiment]`` and ``[params]`` sections."""

    def __init__(self, path: str):
        self.path = Path(path)
        raw = self.path.read_bytes()
        self.sha256 = hashlib.sha256(raw).hexdigest()
        cp = configparser.ConfigParser(interpolation=None)
        try:
            cp.read_string(raw.decode("utf-8"), source=str(path))
        except (configparser.Error, UnicodeDecodeError) as exc:
            raise ConfigError(f"malformed config: {str(exc).splitlines()[0]}") from exc
        if not cp.has_section("experiment"):
            raise ConfigError("missing [experiment] section")
        exp = cp["experiment"]
        self.name = exp.get("name", "").strip()
        if self.name not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.name!r} (expected one of {', '.join(EXPERIMENTS)})")
        try:
            self.seed = int(exp.get("seed", "0"))
        except ValueError as exc:
            raise ConfigError("seed must be an integer") from exc
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        out = exp.get("output", "out")
        self.output = (self.path.parent / out) if not os.path.isabs(out) else Path(out)
        self.params = dict(cp["params"]) if cp.has_section("params") else {}
        self.tolerances = {k: float(v) for k, v in cp["tolerances"].items()} if cp.has_section("tolerances") else {}

    def get(self, key: str, default=None, cast: Callable = str):
        if key not in self.params:
            if default is None:
                raise ConfigError(f"missing parameter {key!r}")
            return default
        try:
            return cast(self.params[key])
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {self.params[key]!r}") from exc

    def floats(self, key: str, default=None) -> list[float]:
        if key not in self.params:
            if default is None:
                raise ConfigError(f"missing parameter {key!r}")
            return list(default)
        try:
            vals = [float(v) for v in self.params[key].replace(",", " ").split()]
        except ValueError as exc:
            raise ConfigError(f"bad list for {key!r}: {self.params[key]!r}") from exc
        if not vals:
            raise ConfigError(f"sweep list {key!r} is empty")
        return vals

    def tol(self, key: str, default: float) -> float:
        return self.tolerances.get(key, default)


def threads() -> int:
    try:
        return max(1, int(os.environ.get("OTLAB_THREADS", "1")))
    except ValueError:
        return 1


def pmap(fn, items) -> list:
    """Order-preserving map, parallel up to OTLAB_THREADS workers."""
    items = list(items)
    n = threads()
    if n == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as ex:
        return list(ex.map(fn, items))


def write_csv(path: Path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    path.write_text(buf.getvalue())


def _r(v) -> str:
    return v if isinstance(v, str) else repr(float(v))


# ---------------------------------------------------------------------------
# measure sources


def _pair_from_config(cfg: Config, rng_seed: int):
    from otlab.contraction import near_translate_pair, smooth_density
    from otlab.measures import GridMeasure, GridSpec, load_grid, uniform_box

    gen = cfg.get("generator", "translate")
    if gen == "file":
        return load_grid(cfg.get("lam_file")), load_grid(cfg.get("mu_file"))
    cells = cfg.get("cells", 24, int)
    spec = GridSpec.box([0.0, 0.0], [1.0, 1.0], 1.0 / cells)
    rng = np.random.Generator(np.random.Philox(rng_seed))
    if gen == "translate":
        lam = smooth_density(spec, rng)
        shift = [int(v) for v in cfg.get("shift_cells", "2 1").replace(",", " ").split()]
        return lam, GridMeasure(spec, np.roll(lam.weights, shift, axis=(0, 1)))
    if gen == "near-translate":
        shift = [int(v) for v in cfg.get("shift_cells", "2 1").replace(",", " ").split()]
        return near_translate_pair(spec, shift, cfg.get("magnitude", 0.01, float), rng_seed)
    if gen == "random":
        a = rng.uniform(0.1, 1.0, spec.shape)
        b = rng.uniform(0.1, 1.0, spec.shape)
        return GridMeasure(spec, a / a.sum()), GridMeasure(spec, b / b.sum())
    if gen == "disjoint1d":
        h = cfg.get("h", 0.01, float)
        spec1 = GridSpec.box([0.0], [3.0], h)
        return uniform_box(spec1, 0.0, 1.0), uniform_box(spec1, 2.0, 3.0)
    raise ConfigError(f"unknown generator {gen!r}")


# ---------------------------------------------------------------------------
# experiments; each returns a list of (file name, header, rows)


def exp_contract(cfg: Config, rigidity: bool = False):
    from otlab.contraction import contraction_report, delta_eps
    from otlab.measures import Kernel
    from otlab.ot_core import CostConvention

    p = cfg.get("p", 2.0, float)
    conv = CostConvention(p, cfg.get("scale", "paper"))
    profile = cfg.get("kernel", "uniform-ball")
    lam, mu = _pair_from_config(cfg, cfg.seed)
    eps_list = cfg.floats("eps", [0.1])

    def one(eps):
        k = Kernel(profile, eps)
        return contraction_report(lam, mu, k, conv) if rigidity else delta_eps(lam, mu, k, conv)

    reps = pmap(one, eps_list)
    n = lam.n
    rows = []
    for rep in reps:
        if rep.delta < -rep.error_bar - 1e-12:
            raise InvariantFailure("contraction", f"delta {rep.delta!r} below -gap {rep.error_bar!r}")
        if rigidity and cfg.get("generator", "translate") == "translate" and p > 1 and rep.residual > cfg.tol("residual", 1e-6):
            raise InvariantFailure("rigidity-residual", f"residual {rep.residual!r} on an exact translate")
        rows.append(rep.csv_row(n))
    return [(f"{cfg.name}.csv", reps[0].csv_header(n), rows)]


def exp_stability(cfg: Config):
    from otlab.measures import GridMeasure, GridSpec, uniform_box
    from otlab.stability import (
        certify,
        grad_l1_distance,
        kantorovich_gap,
        optimality_pair,
        thm1_family_check,
    )

    out = []
    rows = []
    lhs, rhs = [], []
    for i, eps in enumerate(cfg.floats("eps", [0.05, 0.1, 0.2])):
        lam, mu, psi, phi = optimality_pair(eps, eps / cfg.get("h_ratio", 100.0, float))
        a = certify(phi, lam.spec)
        L = grad_l1_distance(psi, phi, lam)
        R = kantorovich_gap(psi, phi, lam, mu)
        if R < -cfg.tol("gap", 1e-8):
            raise InvariantFailure("feasible-gap", f"gap {R!r} at eps {eps!r}")
        lhs.append(L)
        rhs.append(R)
        rows.append([str(i), _r(eps), _r(L), _r(R), _r(a), "ok"])
    header = ["trial", "eps", "lhs", "rhs", "audit", "audit_flag"]
    if len(rows) > 1:
        from otlab.stability import fit_slope

        s, _ = fit_slope(np.array(rhs), np.array(lhs))
        rows.append(["summary", "", "", "", "", f"slope={s!r}"])
    out.append(("stability_remark.csv", header, rows))
    trials = cfg.get("trials", 0, int)
    if trials > 0:
        cells = cfg.get("cells", 40, int)
        spec = GridSpec.box([0.0, 0.0], [1.0, 1.0], 1.0 / cells)
        lam = uniform_box(spec, [0.05, 0.05], [0.45, 0.95])
        rng = np.random.Generator(np.random.Philox(cfg.seed))
        w = np.zeros(spec.shape)
        for idx in spec.index_of(rng.uniform([0.6, 0.1], [0.95, 0.9], size=(5, 2))):
            w[tuple(idx)] += rng.uniform(0.5, 1.0)
        mu = GridMeasure(spec, w / w.sum())
        alpha = cfg.get("alpha", 3.5, float)
        rep = thm1_family_check(lam, mu, cfg.seed, trials, alpha, validate=cfg.get("validate", trials, int))
        if np.any(rep.rhs < -cfg.tol("gap", 1e-8)):
            raise InvariantFailure("feasible-gap", "negative Kantorovich gap in the random family")
        if rep.validation_ok is False:
            raise InvariantFailure("thm1-validation", f"held-out family exceeds calibrated constant ({rep.validation_worst!r})")
        trows = [[str(cfg.seed), str(i), _r(L), _r(R), _r(a), "ok" if a <= 1 + 10 * spec.h else "fail"]
                 for i, (L, R, a) in enumerate(zip(rep.lhs, rep.rhs, rep.audits))]
        trows.append(["summary", "", _r(rep.slope), _r(rep.constant), "", f"alpha={alpha!r}"])
        out.append(("stability_thm1.csv", ["seed", "trial", "lhs", "rhs", "audit", "audit_flag"], trows))
    return out


def _domain(name: str, h: float):
    from otlab.measures import GridMeasure, GridSpec, uniform_box
    from otlab.two_point import star_mask

    if name == "interval":
        return uniform_box(GridSpec.box([0.0], [1.0], h), 0.0, 1.0)
    if name == "square":
        return uniform_box(GridSpec.box([0.0, 0.0], [1.0, 1.0], h), [0.0, 0.0], [1.0, 1.0])
    if name == "star":
        spec = GridSpec.box([0.0, 0.0], [1.0, 1.0], h)
        m = star_mask(spec).astype(float)
        return GridMeasure(spec, m / m.sum())
    raise ConfigError(f"unknown domain {name!r}")


def exp_tau(cfg: Config):
    from otlab.two_point import tau_sup

    dom = cfg.get("domain", "interval")
    p = cfg.get("p", 2.0, float)
    eta = cfg.get("eta", 0.1, float)
    ratio = cfg.get("h_ratio", 4.0, float)

    def one(r):
        lam = _domain(dom, r / ratio)
        best, per, M0 = tau_sup(lam, r, p, eta, seed=cfg.seed)
        return r, per, M0

    rows = []
    for r, per, M0 in pmap(one, cfg.floats("r", [0.1, 0.05, 0.025])):
        for aid, t in enumerate(per):
            rows.append([_r(r), _r(t.tau), _r(M0), str(t.nodes), str(t.pairs_used), _r(t.kappa_geo), str(aid)])
    return [("tau.csv", ["r", "tau", "M0", "nodes", "pairs_used", "kappa_geo", "anchor_id"], rows)]


def exp_density(cfg: Config):
    from otlab.measures import GridSpec, uniform_box
    from otlab.transport_density import renyi, renyi_bound, sigma_for, support_inclusion

    alpha = cfg.get("alpha", 1.25, float)
    count = cfg.get("instances", 5, int)
    h = cfg.get("h", 0.01, float)
    rng = np.random.Generator(np.random.Philox(cfg.seed))
    rows = []
    for i in range(count):
        a = rng.uniform(0.0, 0.5)
        b = a + rng.uniform(0.3, 1.0)
        c = b + rng.uniform(0.1, 0.5)
        d = c + rng.uniform(0.3, 1.0)
        spec = GridSpec.box([0.0], [3.0], h)
        lam, mu = uniform_box(spec, a, b), uniform_box(spec, c, d)
        td = sigma_for(lam, mu)
        D = renyi(lam, td, alpha)
        dens = lam.density()[lam.support_mask()]
        B = renyi_bound(lam, alpha, R=3.0, m=float(dens.min()), M=float(dens.max())).value
        inc = support_inclusion(lam, td)
        if not D <= B:
            raise InvariantFailure("renyi-bound", f"instance {i}: D = {D!r} exceeds bound {B!r}")
        if inc > 0:
            raise InvariantFailure("support-inclusion", f"instance {i}: {inc!r} of lam outside supp sigma")
        rows.append([str(i), _r(td.mass), _r(td.sol.cost), _r(D), _r(B), _r(inc)])
    return [("density.csv", ["instance", "sigma_mass", "w1", "renyi", "bound", "inclusion"], rows)]


def exp_gaussian(cfg: Config):
    from otlab.gaussian import StabGaussReport, stabgauss_experiment

    h = cfg.get("h", 5e-3, float)
    R = cfg.get("radius", 8.0, float)
    grid = [(k, e) for k in cfg.floats("kappa", [0.5, 2.0]) for e in cfg.floats("eps", [0.01, 0.04])]
    reps = pmap(lambda ke: stabgauss_experiment(ke[0], ke[1], R, h), grid)
    tol = cfg.tol("delta_rel", 0.01)
    for r in reps:
        if abs(r.delta_numeric - r.delta_closed) > tol * abs(r.delta_closed):
            raise InvariantFailure("gaussian-delta", f"kappa={r.kappa}, eps={r.eps}: {r.delta_numeric!r} vs {r.delta_closed!r}")
    return [("gaussian.csv", list(StabGaussReport.csv_columns), [r.csv_row() for r in reps])]


def exp_twopoint(cfg: Config):
    from otlab.measures import GridSpec, Kernel, uniform_box
    from otlab.two_point import build_grid_graph, m0, tau, two_point_check

    cells = cfg.get("cells", 40, int)
    eps = cfg.get("eps", 0.1, float)
    r = cfg.get("r", eps, float)
    eta = cfg.get("eta", 0.25, float)
    p = cfg.get("p", 2.0, float)
    count = cfg.get("instances", 5, int)
    spec = GridSpec.box([0.0, 0.0], [1.0, 1.0], 1.0 / cells)
    lam = uniform_box(spec, [0.0, 0.0], [1.0, 1.0])
    k = Kernel(cfg.get("kernel", "uniform-ball"), eps)
    g = build_grid_graph(lam, r, eta)
    hyp = (m0(g), tau(g, p).tau)
    rows = []
    for i in range(count):
        f = random_smooth_field(spec, cfg.seed + i)
        res = two_point_check(lam, f, f, k, r, p, eta, hyp=hyp)
        rows.append([str(cfg.seed + i), _r(res.lhs), _r(res.lam_eps), _r(res.bound), _r(res.ratio)])
    return [("twopoint.csv", ["seed", "lhs", "lambda_eps", "bound", "ratio"], rows)]


def random_smooth_field(spec, seed: int, modes: int = 3, dim: int | None = None):
    """Random low-frequency trigonometric vector field, defined on all of R^n."""
    rng = np.random.Generator(np.random.Philox(seed))
    d = dim or spec.n
    K = rng.integers(0, modes + 1, size=(modes, spec.n))
    A = rng.normal(size=(modes, d)) / (1 + np.arange(modes))[:, None]
    ph = rng.uniform(0, 2 * np.pi, size=modes)

    def f(x):
        return np.cos(x @ K.T * 2 * np.pi + ph) @ A

    return f


RUNNERS = {
    "contract": exp_contract,
    "rigidity": lambda c: exp_contract(c, rigidity=True),
    "stability": exp_stability,
    "tau": exp_tau,
    "density": exp_density,
    "gaussian": exp_gaussian,
    "twopoint": exp_twopoint,
}


def run(config_path: str) -> int:
    cfg = Config(config_path)
    tables = RUNNERS[cfg.name](cfg)
    cfg.output.mkdir(parents=True, exist_ok=True)
    manifest = [f"config {cfg.path.name} sha256={cfg.sha256}", f"experiment {cfg.name} seed={cfg.seed}"]
    for name, header, rows in tables:
        path = cfg.output / name
        write_csv(path, header, rows)
        manifest.append(f"artifact {name} sha256={hashlib.sha256(path.read_bytes()).hexdigest()}")
    (cfg.output / "MANIFEST").write_text("\n".join(manifest) + "\n")
    return 0


# ---------------------------------------------------------------------------
# plotting


def plot(csv_path: str, x: str, ys: list[str], out: str | None = None, log: bool = False) -> int:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    with open(csv_path, newline="") as fh:
        reader = csv.DictReader(fh)
        cols = reader.fieldnames or []
        data = list(reader)
    missing = [c for c in [x, *ys] if c not in cols]
    if missing:
        raise ConfigError(f"missing column(s): {', '.join(missing)}")
    matplotlib.rcParams["svg.hashsalt"] = "otlab"
    fig, ax = plt.subplots(figsize=(5, 3.5))
    if not data:
        print(f"otlab: warning: {csv_path} has no rows; writing empty axes", file=sys.stderr)

    def num(v):
        try:
            return float(v)
        except ValueError:
            return math.nan

    xs = np.array([num(r[x]) for r in data], dtype=float)
    for col in ys:
        yv = np.array([num(r[col]) for r in data], dtype=float)
        ok = np.isfinite(xs) & np.isfinite(yv)
        if log:
            ok &= (xs > 0) & (yv > 0)
        label = col
        if log and ok.sum() >= 2:
            s = np.polyfit(np.log(xs[ok]), np.log(yv[ok]), 1)[0]
            label = f"{col} (slope {s:.3f})"
        ax.plot(xs[ok], yv[ok], marker="o", label=label)
    if log and data:
        ax.set_xscale("log")
        ax.set_yscale("log")
    ax.set_xlabel(x)
    ax.set_ylabel(", ".join(ys))
    if data:
        ax.legend()
    fig.tight_layout()
    out = out or str(Path(csv_path).with_suffix(".svg"))
    fig.savefig(out, format="svg", metadata={"Date": None})
    plt.close(fig)
    return 0


# ---------------------------------------------------------------------------
# self test


def selftest() -> int:
    """Quick invariant suite: one check per module."""
    from otlab.contraction import delta_eps
    from otlab.gaussian import delta_eps_gaussian_closed_form
    from otlab.measures import GridSpec, Kernel, convolve, uniform_box
    from otlab.ot_core import CostConvention, solve_discrete, wp_1d
    from otlab.stability import grad_l1_distance, kantorovich_gap, optimality_pair
    from otlab.transport_density import sigma_for, stab_sigma_check
    from otlab.two_point import build_grid_graph, m0

    def c_mass():
        spec = GridSpec.box([0.0], [1.0], 0.01)
        m = convolve(uniform_box(spec, 0.2, 0.4), Kernel("tent", 0.05))
        return abs(m.mass - 1) < 1e-9

    def c_duality():
        spec = GridSpec.box([0.0], [2.0], 0.01)
        a, b = uniform_box(spec, 0, 1), uniform_box(spec, 1, 2)
        s = solve_discrete(a, b, CostConvention(2.0))
        return abs(s.cost - wp_1d(a, b, CostConvention(2.0))) < 1e-10 and abs(s.gap) < 1e-9

    def c_contraction():
        spec = GridSpec.box([0.0, 0.0], [1.0, 1.0], 1 / 16)
        rng = np.random.Generator(np.random.Philox(0))
        from otlab.measures import GridMeasure

        a, b = rng.uniform(size=(2, 16, 16))
        r = delta_eps(GridMeasure(spec, a / a.sum()), GridMeasure(spec, b / b.sum()), Kernel("uniform-ball", 0.125), CostConvention(2.0))
        return r.delta >= -r.error_bar - 1e-12

    def c_remark():
        lam, mu, psi, phi = optimality_pair(0.1)
        return abs(grad_l1_distance(psi, phi, lam) - 0.2) < 4e-3 and abs(kantorovich_gap(psi, phi, lam, mu) - 0.01) < 2e-4

    def c_sigma():
        lam, mu, psi, phi = optimality_pair(0.1, 0.002)
        r = stab_sigma_check(sigma_for(lam, mu), lam, mu, phi, psi=psi)
        return r.slack >= -1e-6 and abs(r.lhs - 0.02) < 2e-4

    def c_graph():
        spec = GridSpec.box([0.0, 0.0], [1.0, 1.0], 0.025)
        g = build_grid_graph(uniform_box(spec, [0, 0], [1, 1]), 0.1, 0.25)
        return g.connected and 1 <= m0(g) < 2

    def c_gauss():
        r = delta_eps_gaussian_closed_form(2.0, 0.04)
        return abs(r.f - 0.16387) < 1e-5

    checks = [
        ("measures/mass", c_mass),
        ("ot_core/duality", c_duality),
        ("contraction/nonnegative-deficit", c_contraction),
        ("stability/remark-closed-forms", c_remark),
        ("transport_density/sigma-stability", c_sigma),
        ("two_point/graph", c_graph),
        ("gaussian/closed-form", c_gauss),
    ]
    failed = []
    for name, fn in checks:
        try:
            ok = bool(fn())
        except OtlabError as exc:
            ok = False
            name = f"{name} ({exc})"
        print(f"{'PASS' if ok else 'FAIL'} {name}")
        if not ok:
            failed.append(name)
    return 1 if failed else 0


# ---------------------------------------------------------------------------
# entry point


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def main(argv: list[str] | None = None) -> int:
    ap = _Parser(prog="otlab", description="Wasserstein contraction laboratory")
    sub = ap.add_subparsers(dest="cmd")
    r = sub.add_parser("run", help="run an experiment config")
    r.add_argument("config")
    pl = sub.add_parser("plot", help="plot CSV columns to SVG")
    pl.add_argument("csv")
    pl.add_argument("--x", required=True)
    pl.add_argument("--y", required=True, action="append", help="column; repeat or comma-separate to overlay")
    pl.add_argument("--log", action="store_true")
    pl.add_argument("--out")
    sub.add_parser("selftest", help="run the quick invariant suite")
    try:
        args = ap.parse_args(argv)
        if args.cmd == "run":
            return run(args.config)
        if args.cmd == "plot":
            ys = [c for y in args.y for c in y.split(",") if c]
            return plot(args.csv, args.x, ys, args.out, args.log)
        if args.cmd == "selftest":
            return selftest()
        ap.print_usage(sys.stderr)
        return 2
    except ConfigError as exc:
        print(f"otlab: error: {exc}", file=sys.stderr)
        return 2
    except InvariantFailure as exc:
        print(f"otlab: invariant failed: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"otlab: I/O error: {exc}", file=sys.stderr)
        return 3
    except OtlabError as exc:
        print(f"otlab: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
