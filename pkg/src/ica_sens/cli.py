"""Command-line entry point.

``ica-sens <command> --seed N --out DIR [flags]`` runs one batch
command and writes its artifacts plus a manifest into DIR.  A JSON
config file can supply any value (keys match the resolved-config keys
stored in manifests); explicit flags override the file.  ``--threads``
falls back to the ICA_SENS_THREADS environment variable and then to
the machine's core count.

Exit codes: 0 success, 2 invalid input or config, 3 numeric failure,
4 I/O failure.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import __version__
from .errors import IcaSensError, ValidationError
from .experiments import (
    LogNormalStudyConfig,
    cmd_lognormal_study,
    cmd_rerun,
    cmd_sensitivity,
    cmd_t_curves,
    cmd_vine_grid,
    cmd_zeta_curve,
    default_threads,
)
from .rng import RngSeed
from .sensitivity import FAMILIES, SensitivityConfig, ThetaScheme
from .vine import SCHEMES


def _float_list(text: str):
    items = [part.strip() for part in text.split(",")]
    try:
        return [float(part) for part in items if part]
    except ValueError as e:
        raise ValidationError(f"expected comma-separated numbers, got {text!r}") from e


def _str_list(text: str):
    return [part.strip() for part in text.split(",") if part.strip()]


def _load_config(path) -> dict:
    if not path:
        return {}
    try:
        with open(path, encoding="utf-8") as f:
            cfg = json.load(f)
    except OSError as e:
        raise ValidationError(f"cannot read config file {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ValidationError(f"config file {path} is not valid JSON: {e}") from e
    if not isinstance(cfg, dict):
        raise ValidationError(f"config file {path} must hold a JSON object")
    return cfg


def _pick(flag_value, filecfg: dict, key: str, default):
    if flag_value is not None:
        return flag_value
    if key in filecfg and filecfg[key] is not None:
        return filecfg[key]
    return default


def _columns(args, filecfg):
    if args.columns is not None:
        try:
            cols = json.loads(args.columns)
        except json.JSONDecodeError as e:
            raise ValidationError(f"--columns must be a JSON object: {e}") from e
        if not isinstance(cols, dict):
            raise ValidationError("--columns must be a JSON object")
        return cols
    return filecfg.get("columns")


def _common(args, filecfg):
    seed = RngSeed(args.seed, args.stream)
    threads = int(_pick(args.threads, filecfg, "threads", 0) or default_threads())
    figures = bool(_pick(False if args.no_figures else None, filecfg, "figures", True))
    return seed, threads, figures


def _add_common(sub, *, needs_data=False):
    sub.add_argument("--seed", type=int, required=True, help="root seed (required for the manifest)")
    sub.add_argument("--stream", type=int, default=0, help="stream index under the root seed")
    sub.add_argument("--out", required=True, help="output directory")
    sub.add_argument("--config", help="JSON config file; flags override its values")
    sub.add_argument("--threads", type=int, help="worker count (default: ICA_SENS_THREADS or all cores)")
    sub.add_argument("--no-figures", action="store_true", help="skip PNG rendering")
    if needs_data:
        sub.add_argument("--data", help="trial CSV path")
        sub.add_argument(
            "--columns",
            help='JSON mapping for the trial CSV, e.g. {"treat":"arm","true":"y","surrogate":"s"}',
        )


def _require_data(args, filecfg):
    data = _pick(args.data, filecfg, "data", None)
    if not data:
        raise ValidationError("a trial CSV is required: pass --data or put \"data\" in the config file")
    return data


# --------------------------------------------------------------------------
# per-command handlers


def _handle_zeta_curve(args):
    filecfg = _load_config(args.config)
    seed, threads, figures = _common(args, filecfg)
    if args.nu_list is not None:
        grid = _float_list(args.nu_list)
    elif args.nu_min is not None or args.nu_max is not None or args.nu_points is not None:
        lo = args.nu_min if args.nu_min is not None else 3.0
        hi = args.nu_max if args.nu_max is not None else 1000.0
        points = args.nu_points if args.nu_points is not None else 200
        if not 0 < lo <= hi or points < 1:
            raise ValidationError("df range needs 0 < min <= max and at least one point")
        space = np.geomspace if args.nu_spacing == "log" else np.linspace
        grid = list(space(lo, hi, points))
    elif "nu_grid" in filecfg:
        grid = [float(v) for v in filecfg["nu_grid"]]
    else:
        grid = list(np.geomspace(3.0, 1000.0, 200))
    return cmd_zeta_curve(grid, args.out, seed, threads=threads, figures=figures)


def _handle_t_curves(args):
    filecfg = _load_config(args.config)
    seed, threads, figures = _common(args, filecfg)
    nu_list = _float_list(args.nu_list) if args.nu_list else _pick(None, filecfg, "nu_list", [3.0, 4.0, 5.0, 7.0])
    if args.points is not None:
        rho_sq = list(np.linspace(0.0, 1.0, args.points))
    else:
        rho_sq = _pick(None, filecfg, "rho_sq_grid", list(np.linspace(0.0, 1.0, 101)))
    return cmd_t_curves(nu_list, rho_sq, args.out, seed, threads=threads, figures=figures)


def _handle_lognormal_study(args):
    filecfg = _load_config(args.config)
    seed, threads, figures = _common(args, filecfg)
    base = LogNormalStudyConfig()
    cfg = LogNormalStudyConfig(
        n_settings=int(_pick(args.settings, filecfg, "n_settings", base.n_settings)),
        m_outcomes=int(_pick(args.m_outcomes, filecfg, "m_outcomes", base.m_outcomes)),
        k_neighbors=int(_pick(args.k, filecfg, "k_neighbors", base.k_neighbors)),
        mu_mean=float(_pick(args.mu_mean, filecfg, "mu_mean", base.mu_mean)),
        mu_sd=float(_pick(args.mu_sd, filecfg, "mu_sd", base.mu_sd)),
        wishart_scale=float(_pick(args.wishart_scale, filecfg, "wishart_scale", base.wishart_scale)),
        wishart_df=float(_pick(args.wishart_df, filecfg, "wishart_df", base.wishart_df)),
    )
    return cmd_lognormal_study(cfg, args.out, seed, threads=threads, figures=figures)


def _scheme_from_args(args, filecfg) -> ThetaScheme:
    spec = dict(filecfg.get("scheme") or {})
    if args.scheme == "unrestricted":
        spec = {"kind": "uniform", "lo": -1.0, "hi": 1.0}
    elif args.scheme == "positive":
        spec = {"kind": "uniform", "lo": 0.1, "hi": 0.9}
    elif args.scheme == "fixed":
        spec["kind"] = "fixed"
    if args.theta_lo is not None:
        spec["lo"] = args.theta_lo
    if args.theta_hi is not None:
        spec["hi"] = args.theta_hi
    if args.fixed_theta is not None:
        values = _float_list(args.fixed_theta)
        if len(values) != 4:
            raise ValidationError("--fixed-theta needs exactly four comma-separated values")
        spec["kind"] = "fixed"
        spec["values"] = values
    values = spec.get("values")
    return ThetaScheme(
        kind=spec.get("kind", "uniform"),
        lo=float(spec.get("lo", -1.0)),
        hi=float(spec.get("hi", 1.0)),
        values=tuple(values) if values is not None else None,
    )


def _handle_sensitivity(args):
    filecfg = _load_config(args.config)
    seed, threads, figures = _common(args, filecfg)
    data = _require_data(args, filecfg)
    analytic = args.analytic
    if analytic is None:
        analytic = bool(filecfg.get("analytic", True))
    families = _str_list(args.vine_families) if args.vine_families else _pick(
        None, filecfg, "vine_families", ["gaussian"] * 4
    )
    if len(families) != 4:
        raise ValidationError("--vine-families needs exactly four comma-separated names")
    cfg = SensitivityConfig(
        n_replicates=int(_pick(args.replicates, filecfg, "n_replicates", 1000)),
        m_outcomes=int(_pick(args.m_outcomes, filecfg, "m_outcomes", 2000)),
        k_neighbors=int(_pick(args.k, filecfg, "k_neighbors", 10)),
        max_rejections=int(_pick(args.max_rejections, filecfg, "max_rejections", 100_000)),
        scheme=_scheme_from_args(args, filecfg),
        family=str(_pick(args.family, filecfg, "family", "normal")),
        analytic=analytic,
        nu=float(_pick(args.nu, filecfg, "nu", 5.0)),
        vine_families=tuple(families),
        threads=threads,
    )
    return cmd_sensitivity(data, cfg, args.out, seed, columns=_columns(args, filecfg), figures=figures)


def _handle_vine_grid(args):
    filecfg = _load_config(args.config)
    seed, threads, figures = _common(args, filecfg)
    data = _require_data(args, filecfg)
    return cmd_vine_grid(
        data,
        str(_pick(args.scheme, filecfg, "scheme", "unrestricted")),
        int(_pick(args.n_rho, filecfg, "n_rho", 200)),
        int(_pick(args.m_outcomes, filecfg, "m_outcomes", 2000)),
        args.out,
        seed,
        k_neighbors=int(_pick(args.k, filecfg, "k_neighbors", 10)),
        rho_lo=float(_pick(args.rho_lo, filecfg, "rho_lo", 0.1)),
        rho_hi=float(_pick(args.rho_hi, filecfg, "rho_hi", 0.9)),
        threads=threads,
        columns=_columns(args, filecfg),
        figures=figures,
    )


def _handle_rerun(args):
    return cmd_rerun(args.manifest, args.out, threads=args.threads, check=not args.no_check)


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ica-sens",
        description="Surrogate-agreement sensitivity analysis: batch commands with manifests.",
    )
    parser.add_argument("--version", action="version", version=f"ica-sens {__version__}")
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("zeta-curve", help="tail-weight correction over a df grid")
    _add_common(p)
    p.add_argument("--nu-list", help="explicit comma-separated df values")
    p.add_argument("--nu-min", type=float, help="range start (default 3)")
    p.add_argument("--nu-max", type=float, help="range end (default 1000)")
    p.add_argument("--nu-points", type=int, help="range size (default 200)")
    p.add_argument("--nu-spacing", choices=("log", "linear"), default="log")
    p.set_defaults(func=_handle_zeta_curve)

    p = subs.add_parser("t-curves", help="t-pair vs normal-pair agreement curves")
    _add_common(p)
    p.add_argument("--nu-list", help="comma-separated df values (default 3,4,5,7)")
    p.add_argument("--points", type=int, help="squared-correlation grid size (default 101)")
    p.set_defaults(func=_handle_t_curves)

    p = subs.add_parser("lognormal-study", help="misspecification study with log-normal outcomes")
    _add_common(p)
    p.add_argument("--settings", type=int, help="number of prior draws (default 200)")
    p.add_argument("--m-outcomes", type=int, help="outcome vectors per setting (default 2000)")
    p.add_argument("--k", type=int, help="nearest-neighbor count (default 10)")
    p.add_argument("--mu-mean", type=float, help="log-scale mean prior center (default 0)")
    p.add_argument("--mu-sd", type=float, help="log-scale mean prior sd (default 0.5)")
    p.add_argument("--wishart-scale", type=float, help="expected log-scale variance (default 0.5)")
    p.add_argument("--wishart-df", type=float, help="Wishart degrees of freedom (default 6)")
    p.set_defaults(func=_handle_lognormal_study)

    p = subs.add_parser("sensitivity", help="sensitivity analysis on a trial CSV")
    _add_common(p, needs_data=True)
    p.add_argument("--family", choices=FAMILIES, help="outcome model (default normal)")
    p.add_argument("--replicates", type=int, help="accepted replicates (default 1000)")
    p.add_argument("--m-outcomes", type=int, help="outcome vectors per replicate (default 2000)")
    p.add_argument("--k", type=int, help="nearest-neighbor count (default 10)")
    p.add_argument("--nu", type=float, help="degrees of freedom for the t family (default 5)")
    group = p.add_mutually_exclusive_group()
    group.add_argument(
        "--analytic", dest="analytic", action="store_const", const=True, default=None,
        help="closed-form index where the family allows it (default)",
    )
    group.add_argument(
        "--simulate", dest="analytic", action="store_const", const=False,
        help="always estimate the index from simulated outcomes",
    )
    p.add_argument(
        "--scheme", choices=("unrestricted", "positive", "fixed"),
        help="prior on the unidentified correlations (default unrestricted)",
    )
    p.add_argument("--theta-lo", type=float, help="uniform prior lower bound")
    p.add_argument("--theta-hi", type=float, help="uniform prior upper bound")
    p.add_argument("--fixed-theta", help="four comma-separated values for a fixed completion")
    p.add_argument("--max-rejections", type=int, help="rejection budget (default 100000)")
    p.add_argument("--vine-families", help="four copula families for the dvine family")
    p.set_defaults(func=_handle_sensitivity)

    p = subs.add_parser("vine-grid", help="paired copula-vs-normal agreement grid")
    _add_common(p, needs_data=True)
    p.add_argument("--scheme", choices=SCHEMES, help="Spearman sampling scheme (default unrestricted)")
    p.add_argument("--n-rho", type=int, help="Spearman draws (default 200)")
    p.add_argument("--m-outcomes", type=int, help="outcome vectors per cell (default 2000)")
    p.add_argument("--k", type=int, help="nearest-neighbor count (default 10)")
    p.add_argument("--rho-lo", type=float, help="restricted-scheme lower bound (default 0.1)")
    p.add_argument("--rho-hi", type=float, help="restricted-scheme upper bound (default 0.9)")
    p.set_defaults(func=_handle_vine_grid)

    p = subs.add_parser("rerun", help="re-execute a recorded run and verify its digests")
    p.add_argument("--manifest", required=True, help="path to a manifest.json")
    p.add_argument("--out", required=True, help="directory for the reproduced outputs")
    p.add_argument("--threads", type=int, help="override the recorded worker count")
    p.add_argument("--no-check", action="store_true", help="skip the digest comparison")
    p.set_defaults(func=_handle_rerun)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        result = args.func(args)
    except IcaSensError as e:
        print(f"ica-sens: error: {e}", file=sys.stderr)
        return e.exit_code
    for name in sorted(result.files):
        print(f"wrote {result.files[name]}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
