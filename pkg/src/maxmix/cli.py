"""
Command-line interface: ``maxmix simulate | fit | test | power | analyze``.

Settings come from (lowest to highest precedence) built-in defaults, a flat
``key = value`` file given by ``--config``, and explicit flags.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path

from .hypothesis_tests import boundary_test, lr_test, z_test
from .inference import (CensoringConfig, LikelihoodError, PairwiseLikelihood, fit_constrained,
                        fit_mm, refit_if_not_nested)
from .margins import fit_gev_per_site, to_unit_frechet, write_gev_params
from .models import MODELS, MixtureParams, get_model
from .simulation import (child_seed, fmt, read_data_matrix, read_kv, read_sites, sample_sites_uniform,
                         simulate_model, write_data_matrix, write_kv, write_sites)
from .study import StudyConfig, _parse_floats, run_power_study, write_rows
from .uncertainty import clic, estimate_godambe_mc, submatrix_a, write_godambe

logger = logging.getLogger("maxmix")

DEFAULTS = {
    "model": "M1", "a": 0.5, "phi_x": 0.10, "r_x": 0.25, "phi_y": 0.75, "r_y": 1.2,
    "K": 25, "N": 500, "side": 2.0, "seed": 1, "M": 300, "p": 0.9, "scheme": "two",
    "delta": math.inf, "u": 0.97,
}
TEST_COLUMNS = ["kind", "a0", "statistic", "lambda", "p_value",
                "reject_0.01", "reject_0.05", "reject_0.1", "M", "seed", "variance_scaling"]


class CliError(Exception):
    pass


def _settings(args, keys) -> dict:
    cfg = {}
    if getattr(args, "config", None):
        cfg = read_kv(args.config)
    out = {}
    for k in keys:
        flag = getattr(args, k, None)
        if flag is not None:
            out[k] = flag
        elif k in cfg:
            out[k] = cfg[k]
        elif k in DEFAULTS:
            out[k] = DEFAULTS[k]
    for k, v in list(out.items()):
        default = DEFAULTS.get(k)
        if isinstance(default, bool) or v is None:
            continue
        if isinstance(default, int) and isinstance(v, str):
            out[k] = int(v)
        elif isinstance(default, float) and isinstance(v, str):
            out[k] = float(v)
    return out


def _params(s: dict, model: str) -> MixtureParams:
    spec = get_model(model)
    return MixtureParams(**{n: float(s[n]) for n in spec.param_names})


def _censoring(s: dict) -> CensoringConfig:
    return CensoringConfig(p=float(s["p"]), scheme=s["scheme"], delta=float(s["delta"]))


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load(args):
    data = read_data_matrix(args.data)
    sites = read_sites(args.sites)
    if data.site_ids != sites.ids:
        raise CliError("data columns do not match the site file")
    return data, sites


def _frechet(data, args, out: Path):
    if data.scale == "frechet":
        return data
    if not args.gev_transform:
        raise CliError(f"data are on the {data.scale!r} scale; pass --gev-transform to fit "
                       "GEV margins and transform to unit Fréchet")
    gev = fit_gev_per_site(data)
    write_gev_params(out / "gev.csv", gev)
    if len(gev) != data.shape[1]:
        raise CliError("GEV fitting failed for some sites; see the log")
    return to_unit_frechet(data, gev)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    s = _settings(args, ["model", "a", "phi_x", "r_x", "phi_y", "r_y", "K", "N", "side", "seed"])
    out = _out(args)
    sites = sample_sites_uniform(s["K"], s["side"], child_seed(s["seed"], 0))
    data = simulate_model(s["model"], _params(s, s["model"]), sites, s["N"], child_seed(s["seed"], 1))
    data.meta = {"model": s["model"], **_params(s, s["model"]).as_dict(), "seed": s["seed"]}
    write_sites(out / "sites.csv", sites)
    write_data_matrix(out / "data.csv", data)
    return 0


def _fit_and_godambe(data, sites, model, s):
    lik = PairwiseLikelihood(data.values, sites, model, _censoring(s))
    fit = fit_mm(lik, sites, model)
    est = estimate_godambe_mc(fit, sites, s["M"], child_seed(s["seed"], 2), data=lik)
    return lik, fit, est


def cmd_fit(args) -> int:
    s = _settings(args, ["model", "seed", "M", "p", "scheme", "delta"])
    out = _out(args)
    data, sites = _load(args)
    data = _frechet(data, args, out)
    lik, fit, est = _fit_and_godambe(data, sites, s["model"], s)
    summary = fit.as_row()
    summary["clic"] = clic(fit.logpl, est.H, est.J)
    for n, se in zip(est.names, est.se):
        summary[f"se_{n}"] = float(se)
    summary["M"] = est.M
    summary["seed"] = s["seed"]
    write_kv(out / "fit.txt", summary)
    write_rows(out / "fit.csv", [summary], list(summary))
    write_godambe(str(out / "godambe"), est, fit.logpl)
    return 0


def cmd_test(args) -> int:
    s = _settings(args, ["model", "seed", "M", "p", "scheme", "delta"])
    out = _out(args)
    if not get_model(s["model"]).is_mixture:
        raise CliError(f"{s['model']} has no mixing coefficient to test")
    data, sites = _load(args)
    data = _frechet(data, args, out)
    grid = _parse_floats(args.a0) if args.a0 else None
    if not grid:
        raise CliError("give at least one a0 value with --a0")
    grid = [boundary_test(v) for v in grid]
    lik = PairwiseLikelihood(data.values, sites, s["model"], _censoring(s))
    fit = fit_mm(lik, sites, s["model"])
    constrained = [fit_constrained(lik, sites, s["model"], a0=a0, start=fit.params) for a0 in grid]
    fit = refit_if_not_nested(lik, sites, fit, constrained)
    est = estimate_godambe_mc(fit, sites, s["M"], child_seed(s["seed"], 2), data=lik)
    G_aa, H_aa = submatrix_a(est)
    var_a = est.var_natural("a")
    prov = {"M": est.M, "seed": s["seed"], "variance_scaling": "Ginv/N"}
    rows = []
    for a0, con in zip(grid, constrained):
        rows.append(z_test(fit.params.a, a0, var_a, **prov).as_row())
        rows.append(lr_test(fit.logpl, min(con.logpl, fit.logpl), H_aa, G_aa, a0=a0, **prov).as_row())
    write_rows(out / "tests.csv", rows, TEST_COLUMNS)
    write_kv(out / "test.txt", {"model": s["model"], "a_hat": fit.params.a,
                                "se_a": math.sqrt(var_a), "logpl": fit.logpl,
                                "lambda": G_aa / H_aa, **prov})
    return 0


def cmd_power(args) -> int:
    cfg = read_kv(args.config) if args.config else {}
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.workers is not None:
        cfg["workers"] = args.workers
    for key in ("J", "M", "K", "N"):
        v = getattr(args, key, None)
        if v is not None:
            cfg[key] = v
    if args.a0 is not None:
        cfg["a0_grid"] = args.a0
    study = StudyConfig.from_dict(cfg)
    rows = run_power_study(study, args.out, study.workers)
    for r in rows:
        logger.info("a0=%s alpha=%s %s rate=%s", fmt(r["a0"]), fmt(r["alpha"]), r["statistic"],
                    fmt(r["rate"]))
    return 0


def _station_list(value: str) -> list:
    p = Path(value)
    if p.exists():
        return [line.strip() for line in p.read_text().splitlines() if line.strip()]
    return [v.strip() for v in value.split(",") if v.strip()]


def cmd_analyze(args) -> int:
    from .analysis import run_analysis

    s = _settings(args, ["seed", "M", "p", "scheme", "delta", "u"])
    res = run_analysis(args.series, args.stations, _station_list(args.group_a),
                       _station_list(args.group_b), args.out, M=s["M"], seed=s["seed"],
                       u=float(s["u"]), config=_censoring(s))
    logger.info("selected %s; tested %s", res.selected, res.tested_model)
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _common(p):
    p.add_argument("--config", help="flat key = value settings file")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int, help="worker processes (default: all cores)")
    p.add_argument("--out", required=True, help="output directory")


def _censoring_flags(p):
    p.add_argument("--p", type=float, help="per-site threshold quantile (default 0.9)")
    p.add_argument("--scheme", choices=["two", "four"])
    p.add_argument("--delta", type=float, help="pair distance cutoff")
    p.add_argument("--M", type=int, help="Monte-Carlo draws for the Godambe information")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="maxmix", description=__doc__.strip().splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate a data set on random sites")
    _common(p)
    p.add_argument("--model", choices=sorted(MODELS))
    for name in ("a", "phi_x", "r_x", "phi_y", "r_y", "side"):
        p.add_argument(f"--{name}", type=float)
    p.add_argument("--K", type=int)
    p.add_argument("--N", type=int)
    p.set_defaults(func=cmd_simulate)

    for name, func, hlp in (("fit", cmd_fit, "fit a model by censored pairwise likelihood"),
                            ("test", cmd_test, "Z and LR tests of a = a0")):
        p = sub.add_parser(name, help=hlp)
        _common(p)
        _censoring_flags(p)
        p.add_argument("--data", required=True)
        p.add_argument("--sites", required=True)
        p.add_argument("--model", choices=sorted(MODELS))
        p.add_argument("--gev-transform", action="store_true",
                       help="fit GEV margins and transform raw data to unit Fréchet")
        if name == "test":
            p.add_argument("--a0", required=True, help="value or comma-separated grid")
        p.set_defaults(func=func)

    p = sub.add_parser("power", help="replicate-parallel power study")
    _common(p)
    p.add_argument("--J", type=int)
    p.add_argument("--M", type=int)
    p.add_argument("--K", type=int)
    p.add_argument("--N", type=int)
    p.add_argument("--a0", help="comma-separated a0 grid")
    p.set_defaults(func=cmd_power)

    p = sub.add_parser("analyze", help="station-data pipeline")
    _common(p)
    _censoring_flags(p)
    p.add_argument("--series", required=True, help="long CSV: date, station, value")
    p.add_argument("--stations", required=True, help="CSV: station, lon, lat, altitude")
    p.add_argument("--group-a", required=True, help="comma-separated ids or a file of ids")
    p.add_argument("--group-b", required=True, help="comma-separated ids or a file of ids")
    p.add_argument("--u", type=float, help="diagnostic threshold (default 0.97)")
    p.set_defaults(func=cmd_analyze)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CliError, LikelihoodError, FloatingPointError) as exc:
        print(f"maxmix {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
