"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 a run did not converge (all
CSVs are still written).
"""

import argparse
import os
import sys
from dataclasses import dataclass, fields

import numpy as np

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DNC = 3

EXPERIMENTS = ("retraction-convergence", "oscillator", "advdiff", "fisher-kpp", "rank-discovery", "selftest")

# CLI scheme name -> run variant
SCHEME_NAMES = {
    "so-dork": "so_dork",
    "gd-dork": "gd_dork",
    "prk": "projected_rk",
    "projector-splitting": "projector_splitting",
    "classic-exact-inverse": "so_dork_exact_inverse",
    "full-rank": "full_rank",
}
ROBUST_MODES = ("none", "pseudoinverse", "span_only")
RANK_MODES = ("fixed", "adaptive", "all")


class ConfigError(ValueError):
    pass


def _tuple_of(kind):
    def parse(text):
        parts = [p.strip() for p in str(text).split(",") if p.strip()]
        if not parts:
            raise ValueError("empty list")
        return tuple(kind(p) for p in parts)

    parse.__name__ = f"list[{kind.__name__}]"
    return parse


def _bool(text):
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass
class RunConfig:
    """Flat run configuration. ``None`` means "use the experiment default"."""

    experiment: str = None
    schemes: tuple = None
    order: tuple = None
    rank: tuple = None
    rank_mode: str = None
    theta_star: float = None
    sigma_star: float = None
    r_inc: int = None
    r_max: int = None
    n_iters: tuple = None
    n_max: int = None
    delta_star: float = None
    eps_l_star: float = None
    robust_mode: str = None
    rel_cut: float = None
    dt: float = None
    dt_grid: tuple = None
    t_final: float = None
    nt: tuple = None
    grid: int = None
    n_time: int = None
    mc: int = None
    nu: float = None
    cfl_limit: float = None
    record_every: int = None
    seed: int = 0
    output_dir: str = "results"
    timing: bool = False

    def validate(self):
        if self.experiment is not None and self.experiment not in EXPERIMENTS:
            raise ConfigError(f"experiment must be one of {EXPERIMENTS}")
        if self.schemes is not None:
            bad = [s for s in self.schemes if s not in SCHEME_NAMES]
            if bad:
                raise ConfigError(f"unknown scheme(s) {bad}; choose from {sorted(SCHEME_NAMES)}")
        if self.order is not None and any(o not in (1, 2, 3, 4) for o in self.order):
            raise ConfigError("order must be in 1..4")
        if self.rank_mode is not None and self.rank_mode not in RANK_MODES:
            raise ConfigError(f"rank_mode must be one of {RANK_MODES}")
        if self.robust_mode is not None and self.robust_mode not in ROBUST_MODES:
            raise ConfigError(f"robust_mode must be one of {ROBUST_MODES}")
        for name in ("rank", "n_iters", "nt"):
            val = getattr(self, name)
            if val is not None and any(v < 1 for v in val):
                raise ConfigError(f"{name} entries must be >= 1")
        for name in ("r_inc", "r_max", "n_max", "grid", "mc", "record_every"):
            val = getattr(self, name)
            if val is not None and val < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.n_time is not None and self.n_time < 2:
            raise ConfigError("n_time must be >= 2")
        for name in ("dt", "t_final", "delta_star", "eps_l_star", "rel_cut", "cfl_limit"):
            val = getattr(self, name)
            if val is not None and not val > 0:
                raise ConfigError(f"{name} must be positive")
        if self.theta_star is not None and not 0 <= self.theta_star <= np.pi / 2:
            raise ConfigError("theta_star must lie in [0, pi/2] radians")
        if self.sigma_star is not None and not 0 <= self.sigma_star <= 1:
            raise ConfigError("sigma_star must lie in [0, 1]")
        if self.nu is not None and self.nu < 0:
            raise ConfigError("nu must be non-negative")
        if self.dt_grid is not None and any(a <= b for a, b in zip(self.dt_grid, self.dt_grid[1:])):
            raise ConfigError("dt_grid must be strictly decreasing")
        return self


_PARSERS = {
    "experiment": str, "schemes": _tuple_of(str), "order": _tuple_of(int), "rank": _tuple_of(int),
    "rank_mode": str, "theta_star": float, "sigma_star": float, "r_inc": int, "r_max": int,
    "n_iters": _tuple_of(int), "n_max": int, "delta_star": float, "eps_l_star": float, "robust_mode": str,
    "rel_cut": float, "dt": float, "dt_grid": _tuple_of(float), "t_final": float, "nt": _tuple_of(int),
    "grid": int, "n_time": int, "mc": int, "nu": float, "cfl_limit": float, "record_every": int, "seed": int,
    "output_dir": str, "timing": _bool,
}
_DEFAULTS = RunConfig()


def _format_value(val):
    if isinstance(val, tuple):
        return ",".join(_format_value(v) for v in val)
    if isinstance(val, bool):
        return "true" if val else "false"
    if isinstance(val, float):
        return repr(val)
    return str(val)


def parse_config_text(text, source="<config>"):
    """Parse ``key = value`` lines into a dict of typed values."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, val = (p.strip() for p in line.split("=", 1))
        if key not in _PARSERS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        try:
            out[key] = _PARSERS[key](val)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key}: {exc}") from None
    return out


def load_config(path, overrides=None):
    """Read a config file; ``overrides`` (already typed) win over file values."""
    with open(path, encoding="utf-8") as fh:
        values = parse_config_text(fh.read(), source=str(path))
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return RunConfig(**values).validate()


def dump_config(cfg):
    """Canonical text: one line per key differing from the defaults, in field order."""
    lines = []
    for f in fields(RunConfig):
        val = getattr(cfg, f.name)
        if val != getattr(_DEFAULTS, f.name):
            lines.append(f"{f.name} = {_format_value(val)}")
    return "".join(line + "\n" for line in lines)


def describe_config(cfg):
    """Single-line record of every field, used in CSV headers; unset fields read ``default``."""
    parts = [f"{f.name}={'default' if getattr(cfg, f.name) is None else _format_value(getattr(cfg, f.name))}"
             for f in fields(RunConfig)]
    return "config: " + " ".join(parts)


def _opt(cfg, name, default):
    val = getattr(cfg, name)
    return default if val is None else val


def _variants(cfg, default, allowed):
    if cfg.schemes is None:
        return default
    out = tuple(SCHEME_NAMES[s] for s in cfg.schemes)
    bad = [s for s, v in zip(cfg.schemes, out) if v not in allowed]
    if bad:
        raise ConfigError(f"scheme(s) {bad} not available for {cfg.experiment}")
    return out


def _policy(cfg, defaults):
    from .rank_adapt import RankPolicy

    return RankPolicy(
        theta_star=_opt(cfg, "theta_star", defaults.theta_star),
        sigma_star=_opt(cfg, "sigma_star", defaults.sigma_star),
        r_inc=_opt(cfg, "r_inc", defaults.r_inc),
        r_max=_opt(cfg, "r_max", defaults.r_max),
        seed=cfg.seed,
    )


def run_experiment(cfg):
    """Dispatch to the experiment driver; returns ``(result, table rows)``."""
    from . import experiments as ex
    from .descent import DescentConfig
    from .rank_adapt import RankPolicy

    name = cfg.experiment
    if name == "retraction-convergence":
        res = ex.run_retraction_convergence(
            seed=cfg.seed, dt_grid=_opt(cfg, "dt_grid", ex.retraction_convergence.DEFAULT_DT_GRID),
            descent_iters=_opt(cfg, "n_iters", (2, 3)))
        return res, res.summary
    if name == "oscillator":
        from .experiments import oscillator as osc

        targeted = cfg.nt is not None
        schemes = _variants(cfg, osc.ORDER2_SCHEMES,
                            ("so_dork", "gd_dork", "projected_rk", "projector_splitting", "full_rank",
                             "so_dork_exact_inverse"))
        res = ex.run_oscillator(
            seed=cfg.seed, nts=_opt(cfg, "nt", osc.TABLE_NTS), schemes=schemes,
            orders=_opt(cfg, "order", (2,) if targeted else (1, 2, 3, 4)),
            sweep_nts=() if targeted else osc.SWEEP_NTS, t_final=_opt(cfg, "t_final", 10.0),
            robust_mode=_opt(cfg, "robust_mode", "pseudoinverse"), rel_cut=_opt(cfg, "rel_cut", 1e-9),
            check_reference=not targeted, timing=cfg.timing)
        rows = res.summary if targeted else ex.table3(res)
        return res, rows
    if name == "advdiff":
        from .experiments import advdiff as ad

        mode = _opt(cfg, "rank_mode", "fixed")
        if mode == "all":
            raise ConfigError("advdiff rank_mode must be 'fixed' or 'adaptive'")
        allowed = ad.SCHEMES + ("so_dork_exact_inverse",)
        policy = _policy(cfg, RankPolicy(theta_star=0.1, sigma_star=2e-3, r_inc=1, r_max=20)) \
            if mode == "adaptive" else None
        res = ex.run_advdiff(
            seed=cfg.seed, ranks=_opt(cfg, "rank", (5,)), schemes=_variants(cfg, ad.SCHEMES, allowed),
            policy=policy, n=_opt(cfg, "grid", 128), nu=_opt(cfg, "nu", 1e-3), dt=_opt(cfg, "dt", 2e-3),
            t_final=_opt(cfg, "t_final", 1.0), cfl_limit=_opt(cfg, "cfl_limit", 1.5),
            robust_mode=_opt(cfg, "robust_mode", "pseudoinverse"), rel_cut=_opt(cfg, "rel_cut", 1e-9),
            timing=cfg.timing)
        return res, res.summary if mode == "adaptive" else ex.table4(res)
    if name == "fisher-kpp":
        from .experiments import fisher_kpp as fk

        mode = _opt(cfg, "rank_mode", "all")
        modes = {"fixed": ("fixed_rank", "exact_projection", "best_approximation"),
                 "adaptive": ("adaptive", "best_approximation"), "all": fk.MODES}[mode]
        if cfg.schemes is not None:
            raise ConfigError("fisher-kpp runs are selected with rank_mode, not schemes")
        ranks = _opt(cfg, "rank", (15,))
        if len(ranks) != 1:
            raise ConfigError("fisher-kpp takes a single rank")
        res = ex.run_fisher_kpp(
            seed=cfg.seed, nx=_opt(cfg, "grid", 200), n_time=_opt(cfg, "n_time", 2001), n_mc=_opt(cfg, "mc", 100),
            t_final=_opt(cfg, "t_final", 12.5), rank=ranks[0], iters=_opt(cfg, "n_iters", (1, 2)),
            robust_mode=_opt(cfg, "robust_mode", "span_only"), rel_cut=_opt(cfg, "rel_cut", 1e-9),
            policy=_policy(cfg, fk.DEFAULT_POLICY),
            descent=DescentConfig(n_max=_opt(cfg, "n_max", 8), delta_star=_opt(cfg, "delta_star", 1e-16)),
            record_every=_opt(cfg, "record_every", 10), modes=modes)
        return res, res.summary
    if name == "rank-discovery":
        res = ex.run_rank_discovery(
            seed=cfg.seed, dt=_opt(cfg, "dt", 0.1), r_inc=_opt(cfg, "r_inc", 25), r_max=_opt(cfg, "r_max", 200),
            eps_l_star=_opt(cfg, "eps_l_star", 1e-6), n_max=_opt(cfg, "n_max", 16))
        return res, res.summary
    raise ConfigError(f"unknown experiment {name!r}")


def write_outputs(cfg, res):
    """One CSV per report plus ``summary.csv``; returns the written paths."""
    os.makedirs(cfg.output_dir, exist_ok=True)
    header = f"{describe_config(cfg)}\nseed: {cfg.seed}"
    paths = []
    for key in sorted(res.reports):
        rep = res.reports[key]
        path = os.path.join(cfg.output_dir, f"{cfg.experiment}__{key}.csv")
        with open(path, "w", encoding="utf-8", newline="") as fh:
            rep.to_csv(fh, header_comment=f"{header}\nrun: {key}", timing=cfg.timing)
        paths.append(path)
    path = os.path.join(cfg.output_dir, f"{cfg.experiment}__summary.csv")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(res.summary_csv(header_comment=header))
    paths.append(path)
    return paths


def selftest(seed=0, out=sys.stdout):
    """Quick invariant checks on small random instances; returns the number of failures."""
    from .descent import DescentConfig, descend_auto
    from .manifold import AffineTarget, ErrorReport, LowRankState, manifold_project
    from .matcore import orth
    from .retraction import RetractionConfig, retract

    rng = np.random.default_rng(seed)
    failures = 0

    def check(name, ok):
        nonlocal failures
        failures += not ok
        print(f"{'ok  ' if ok else 'FAIL'} {name}", file=out)

    for trial in range(20):
        m, n, r = 20, 15, 3
        x = LowRankState(orth(rng.standard_normal((m, r))).q, rng.standard_normal((n, r)))
        d = rng.standard_normal((m, n))
        d /= np.linalg.norm(d)
        dt = 10 ** rng.uniform(-3, -1)
        tgt = AffineTarget(x, d, dt)
        chi = np.linalg.norm(tgt.chi())
        for mode in ROBUST_MODES:
            for order in (1, 2, 3, 4) if mode == "none" else (1,):
                y = retract(x, tgt, RetractionConfig(order=order, robust_mode=mode))
                if y.norm() > chi * (1 + 1e-12) or y.orthonormality_defect() > 1e-10:
                    check(f"stability/orthonormality ({mode}, order {order}, trial {trial})", False)
    check("retractions never exceed the target norm and keep orthonormal modes", failures == 0)

    x = LowRankState(orth(rng.standard_normal((20, 3))).q, rng.standard_normal((15, 3)) * 3)
    goal = manifold_project(rng.standard_normal((20, 3)) @ rng.standard_normal((3, 15)) * 0.05
                            + x.reconstruct(), 3)
    tgt = AffineTarget(x, (goal.reconstruct() - x.reconstruct()) / 0.25, 0.25)
    y, _ = descend_auto(x, tgt, DescentConfig(n_max=30))
    err = np.linalg.norm(y.reconstruct() - goal.reconstruct()) / goal.norm()
    check(f"descent recovers an on-manifold target ({err:.1e})", err < 1e-10)

    rep = ErrorReport()
    rep.add(0.0, 3, eps_l=0.5, eps_pr=1e-3)
    rep.add(0.1, 4, eps_l=0.25)
    text = rep.to_csv()
    check("CSV round trip", ErrorReport.from_csv(text).to_csv() == text)
    return failures


def build_parser():
    p = argparse.ArgumentParser(prog="lowrank-dork", description="Dynamical low-rank integrators and experiments.")
    p.add_argument("experiment", choices=EXPERIMENTS)
    p.add_argument("--config", help="key = value file; flags override its values")
    p.add_argument("--dump-config", action="store_true", help="print the resolved config and exit")
    p.add_argument("--scheme", dest="schemes", help=f"comma list of {', '.join(SCHEME_NAMES)}")
    for f in fields(RunConfig):
        if f.name in ("experiment", "schemes"):
            continue
        p.add_argument("--" + f.name.replace("_", "-"), dest=f.name, default=None, metavar=f.name.upper())
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    raw = {k: v for k, v in vars(args).items() if k in _PARSERS and v is not None}
    try:
        overrides = {k: _PARSERS[k](v) for k, v in raw.items()}
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    overrides["experiment"] = args.experiment
    try:
        if args.config:
            cfg = load_config(args.config, overrides)
        else:
            cfg = RunConfig(**overrides).validate()
    except (ConfigError, OSError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.dump_config:
        sys.stdout.write(dump_config(cfg))
        return EXIT_OK
    if cfg.experiment == "selftest":
        return 1 if selftest(cfg.seed) else EXIT_OK

    from .experiments import LeapfrogUnstable, format_table

    try:
        res, rows = run_experiment(cfg)
    except LeapfrogUnstable as exc:
        print(f"unstable: {exc}", file=sys.stderr)
        return EXIT_DNC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    paths = write_outputs(cfg, res)
    print(format_table(rows))
    for key, msg in res.failures.items():
        print(f"DNC {key}: {msg}")
    print(f"wrote {len(paths)} files to {cfg.output_dir}")
    return EXIT_DNC if res.status != "ok" else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
