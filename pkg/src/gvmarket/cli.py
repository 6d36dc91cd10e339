"""Command-line front end.

Every subcommand reads a JSON config (``--config``), writes its report to
``--out`` and prints a one-line summary.  Exit codes: 0 success, 2 usage or
input error, 3 incomplete market, 4 numerical failure.
"""
import argparse
import csv
import io
import json
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import completeness, pricing
from .errors import GVMarketError, IncompletenessError, NumericalError
from .kernels import flow_kernel, kernel_from_dict
from .market import MarketSpec, risk_neutral_seasonality, year_fraction
from .portfolio import CRRAPolicy, budget_mc, expected_utility, expected_utility_mc, replicate
from .simulation import SeedSpec, TimeGrid, forward_paths, mc_estimate, sample_increments, spot_paths

EXIT_OK, EXIT_USAGE, EXIT_INCOMPLETE, EXIT_NUMERICAL = 0, 2, 3, 4


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    """Parsed config file plus command-line overrides."""

    market: MarketSpec = None
    blocks: dict = field(default_factory=dict)
    output_dir: Path = Path(".")
    emit_plots: bool = False
    seed: int = None
    threads: int = 1

    def block(self, name):
        return dict(self.blocks.get(name) or {})

    def require_market(self):
        if self.market is None:
            raise UsageError("this command needs a config with a 'market' block")
        return self.market

    def require_seed(self):
        if self.seed is None:
            raise UsageError("stochastic commands need --seed or a 'seed' entry in the config")
        return self.seed


def _read_json(path):
    p = Path(path)
    if p.is_file():
        return json.loads(p.read_text()), p.parent
    name = p.name if p.suffix == ".json" else p.name + ".json"
    packaged = resources.files("gvmarket") / "data" / name
    if packaged.is_file():
        return json.loads(packaged.read_text()), None
    raise UsageError(f"config file not found: {path}")


def load_config(args):
    raw, base = ({}, None) if args.config is None else _read_json(args.config)
    market = raw.get("market")
    if isinstance(market, str):
        target = Path(market) if base is None or Path(market).is_absolute() else base / market
        market = _read_json(target)[0]
        market = market.get("market", market)
    seed = args.seed if args.seed is not None else raw.get("seed")
    if seed is not None and not 0 <= int(seed) < 2 ** 64:
        raise UsageError("seed must be an unsigned 64-bit integer")
    blocks = {k: v for k, v in raw.items() if k not in ("market", "seed")}
    return RunConfig(
        market=None if market is None else MarketSpec.from_dict(market),
        blocks=blocks, output_dir=Path(args.out), emit_plots=args.plots,
        seed=None if seed is None else int(seed), threads=args.threads)


# output helpers --------------------------------------------------------------------

def dumps(obj):
    """Canonical JSON used for every artifact."""
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _write(cfg, name, text):
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    path = cfg.output_dir / name
    path.write_text(text)
    return path


def _csv(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in r])
    return buf.getvalue()


def _plot(cfg, name, draw):
    if not cfg.emit_plots:
        return None
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    plt.rcParams["svg.hashsalt"] = "gvmarket"
    fig, ax = plt.subplots(figsize=(7, 4))
    draw(ax)
    fig.tight_layout()
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    path = cfg.output_dir / name
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def _pick(args, block, name, default=None):
    value = getattr(args, name, None)
    if value is None:
        value = block.get(name, default)
    return value


# subcommands ------------------------------------------------------------------------

def cmd_simulate(args, cfg):
    market = cfg.require_market()
    blk = cfg.block("simulate")
    paths = int(_pick(args, blk, "paths", 1000))
    steps = int(_pick(args, blk, "steps", 256))
    if paths < 1 or steps < 1:
        raise UsageError("--paths and --steps must be positive")
    measure = _pick(args, blk, "measure", "Q")
    maturity = _pick(args, blk, "maturity")
    horizon = float(_pick(args, blk, "horizon", maturity if maturity is not None else market.horizon))
    seed = cfg.require_seed()
    ens = sample_increments(TimeGrid.uniform(steps, horizon), paths, market.n, SeedSpec(seed), cfg.threads)
    if maturity is None:
        what, values = "spot", spot_paths(market, ens, measure)
    else:
        what, values = "forward", forward_paths(market, float(maturity), ens, measure)
    times = ens.grid.points
    means = values.mean(axis=0)
    errs = values.std(axis=0, ddof=1) / np.sqrt(paths) if paths > 1 else np.zeros_like(means)
    report = {"what": what, "measure": measure, "maturity": maturity, "n_paths": paths,
              "seed": seed, "times": times.tolist(), "mean": means.tolist(), "std_err": errs.tolist(),
              "terminal": mc_estimate(values[:, -1], seed).to_dict()}
    _write(cfg, "simulate.json", dumps(report))
    _write(cfg, "simulate.csv", _csv(["t", "mean", "std_err"], zip(times, means, errs)))

    def draw(ax):
        ax.plot(times, values[: min(20, paths)].T, lw=0.6, alpha=0.6)
        ax.plot(times, means, color="k", lw=1.5, label="mean")
        ax.set_xlabel("t")
        ax.set_ylabel("forward" if what == "forward" else "spot")
        ax.legend()
    _plot(cfg, "simulate.svg", draw)
    return f"simulate: {paths} {what} paths under {measure}, terminal mean {means[-1]:.6g}"


def cmd_completeness(args, cfg):
    market = cfg.require_market()
    points = int(_pick(args, cfg.block("completeness"), "points", completeness.DEFAULT_POINTS))
    if points < 2:
        raise UsageError("--points must be at least 2")
    report = completeness.scan(market, n_points=points)
    _write(cfg, "completeness.json", dumps(report.to_dict()))
    _write(cfg, "completeness.csv", report.to_csv())

    def draw(ax):
        vals = report.determinant if report.determinant is not None else report.min_singular_value
        ax.plot(report.grid, vals)
        ax.axhline(0.0, color="k", lw=0.5)
        for d in report.degenerate_times:
            ax.axvline(d, color="r", ls="--", lw=0.8)
        ax.set_xlabel("t")
        ax.set_ylabel("det" if report.determinant is not None else "min singular value")
    _plot(cfg, "completeness.svg", draw)
    summary = (f"completeness: {report.verdict}, {report.zero_crossings} sign change(s), "
               f"{len(report.degenerate_times)} degenerate time(s)")
    if not report.is_complete:
        raise _Incomplete(summary)
    return summary


class _Incomplete(Exception):
    pass


def cmd_price(args, cfg):
    market = cfg.require_market()
    blk = cfg.block("option")
    kind = args.kind or blk.get("kind", "call")
    strike, T, Tj = (_pick(args, blk, k) for k in ("strike", "T", "Tj"))
    if None in (strike, T, Tj):
        raise UsageError("price needs --strike, --T and --Tj (or an 'option' block)")
    t = float(_pick(args, blk, "t", 0.0))
    option = pricing.VanillaOption(kind, float(strike), float(T), float(Tj))
    F = _pick(args, blk, "F")
    if F is None:
        if t != 0:
            raise UsageError("--F is required when t > 0")
        F = risk_neutral_seasonality(market, option.Tj)
    F = float(F)
    rate = _pick(args, blk, "rate")
    curve = None if rate is None else pricing.DiscountCurve.flat(float(rate))
    sigma = pricing.bachelier_vol(market, t, option.T, option.Tj)
    price = pricing.option_price(market, option, t, F, curve)
    report = {"kind": kind, "strike": option.strike, "T": option.T, "Tj": option.Tj, "t": t,
              "F": F, "price": price, "hedge_delta": pricing.hedge_delta(market, option, t, F),
              "sigma": sigma, "d": (F - option.strike) / sigma if sigma > 0 else None,
              "discount_factor": 1.0 if curve is None else curve.factor(t, option.T)}
    _write(cfg, "price.json", dumps(report))
    return f"price: {kind} K={option.strike:g} T={option.T:g} Tj={option.Tj:g} -> {price:.10g}"


def cmd_price_ro(args, cfg):
    market = cfg.require_market()
    blk = cfg.block("reliability_option")
    strike = _pick(args, blk, "strike")
    window = blk.get("window", [None, None])
    lo = args.T1 if args.T1 is not None else window[0]
    hi = args.T2 if args.T2 is not None else window[1]
    if None in (strike, lo, hi):
        raise UsageError("price-ro needs --strike, --T1 and --T2 (or a 'reliability_option' block)")
    res = pricing.reliability_option_price(market, pricing.ReliabilityOptionSpec(float(strike), (lo, hi)))
    report = {"strike": float(strike), "price": res.price, "window": list(res.window),
              "quadrature_panels": res.quadrature_panels}
    _write(cfg, "price_ro.json", dumps(report))
    return f"price-ro: window [{lo:g}, {hi:g}] K={float(strike):g} -> {res.price:.10g}"


def cmd_portfolio(args, cfg):
    market = cfg.require_market()
    blk = cfg.block("policy")
    gamma = float(_pick(args, blk, "gamma", 0.5))
    x0 = float(_pick(args, blk, "x0", 1.0))
    T = float(_pick(args, blk, "T", market.maturities[0]))
    paths = int(_pick(args, blk, "paths", 4096))
    steps = int(_pick(args, blk, "steps", 256))
    if paths < 2 or steps < 1:
        raise UsageError("--paths must be >= 2 and --steps >= 1")
    seed = cfg.require_seed()
    policy = CRRAPolicy.for_market(market, gamma, x0, T)
    ens = sample_increments(TimeGrid.uniform(steps, T), paths, market.n, SeedSpec(seed), cfg.threads)
    err, path = replicate(policy, market, ens, return_path=True)
    report = {"gamma": gamma, "x0": x0, "T": T, "n_paths": paths, "steps": steps, "seed": seed,
              "lambda_star": policy.lambda_star, "H0": policy.H0,
              "expected_utility_closed_form": expected_utility(policy),
              "expected_utility_mc": expected_utility_mc(policy, ens).to_dict(),
              "budget_mc": budget_mc(policy, ens).to_dict(), "replication_error": err}
    _write(cfg, "portfolio.json", dumps(report))
    header = ["t", "mean_wealth"] + [f"mean_delta_{j + 1}" for j in range(market.m)]
    # no rebalancing happens at the horizon, so the last row has no holdings
    rows = [[t, x, *d] for t, x, d in zip(path.times, path.mean_wealth, path.mean_delta)]
    rows.append([path.times[-1], path.mean_wealth[-1]] + [""] * market.m)
    _write(cfg, "portfolio.csv", _csv(header, rows))

    def draw(ax):
        ax.plot(path.times, path.mean_wealth, label="E[X*_t]")
        ax.set_xlabel("t")
        ax.legend()
    _plot(cfg, "portfolio.svg", draw)
    return (f"portfolio: gamma={gamma:g} E[u] closed form {report['expected_utility_closed_form']:.6g}, "
            f"replication error {err:.3g}")


def _contracts(cfg):
    cal = cfg.block("calendar")
    if not cal:
        return []
    origin = cal["origin"]
    return [(c["name"], year_fraction(c["start"], origin), year_fraction(c["end"], origin))
            for c in cal["contracts"]]


def cmd_tracking_error(args, cfg):
    market = cfg.require_market()
    if args.Tj is not None or args.Tk is not None:
        if args.Tj is None or args.Tk is None:
            raise UsageError("give both --Tj and --Tk")
        contracts = [("custom", args.Tj, args.Tk)]
    else:
        contracts = _contracts(cfg)
        if not contracts:
            raise UsageError("tracking-error needs --Tj/--Tk or a 'calendar' block")
    t = args.t if args.t is not None else min(c[1] for c in contracts)
    rows = []
    for name, Tj, Tk in contracts:
        T_tilde = args.T_tilde if args.T_tilde is not None else 0.5 * (Tj + Tk)
        rows.append({"name": name, "Tj": Tj, "Tk": Tk, "T_tilde": T_tilde,
                     "flow_vol": [float(flow_kernel(k, t, Tj, Tk)) for k in market.factors],
                     "tracking_error": pricing.tracking_error(market, t, T_tilde, Tj, Tk)})
    _write(cfg, "tracking_error.json", dumps({"t": t, "contracts": rows}))
    worst = max(rows, key=lambda r: r["tracking_error"])
    return f"tracking-error: {len(rows)} contract(s) at t={t:.6g}, largest {worst['name']} {worst['tracking_error']:.4g}"


def cmd_kernel_eval(args, cfg):
    if args.kernel is not None:
        kernels = [kernel_from_dict(json.loads(args.kernel))]
    else:
        kernels = list(cfg.require_market().factors)
    t, s = np.broadcast_arrays(np.asarray(args.t, float), np.asarray(args.s, float))
    values = [np.atleast_1d(k(t, s)).tolist() for k in kernels]
    report = {"kernels": [k.to_dict() for k in kernels], "t": t.tolist(), "s": s.tolist(),
              "values": values}
    _write(cfg, "kernel_eval.json", dumps(report))
    return f"kernel-eval: {len(kernels)} kernel(s) at {t.size} point(s)"


# parser ---------------------------------------------------------------------------

def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}")
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be positive, got {v}")
    return v


def _u64(text):
    v = int(text)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file, or the name of a bundled config")
    common.add_argument("--out", default=".", help="output directory (default: .)")
    common.add_argument("--seed", type=_u64, help="master seed; overrides the config")
    common.add_argument("--threads", type=_positive_int, default=1)
    common.add_argument("--plots", action="store_true", help="also write SVG plots")

    parser = argparse.ArgumentParser(prog="gvmarket",
                                     description="Gaussian Volterra electricity market toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="simulate spot or forward paths")
    p.add_argument("--paths", type=_positive_int)
    p.add_argument("--steps", type=_positive_int)
    p.add_argument("--horizon", type=float)
    p.add_argument("--measure", choices=["P", "Q"])
    p.add_argument("--maturity", type=float, help="simulate F(., maturity) instead of the spot")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("completeness", parents=[common], help="scan the kernel matrix for rank loss")
    p.add_argument("--points", type=_positive_int)
    p.set_defaults(func=cmd_completeness)

    p = sub.add_parser("price", parents=[common], help="price a call or put on a forward")
    kind = p.add_mutually_exclusive_group()
    kind.add_argument("--call", dest="kind", action="store_const", const="call")
    kind.add_argument("--put", dest="kind", action="store_const", const="put")
    p.add_argument("--strike", type=float)
    p.add_argument("--T", type=float, help="option expiry")
    p.add_argument("--Tj", type=float, help="forward maturity")
    p.add_argument("--t", type=float, help="valuation time (default 0)")
    p.add_argument("--F", type=float, help="forward quote at t (default F(0, Tj))")
    p.add_argument("--rate", type=float, help="flat short rate for discounting")
    p.set_defaults(func=cmd_price)

    p = sub.add_parser("price-ro", parents=[common], help="price a reliability option")
    p.add_argument("--strike", type=float)
    p.add_argument("--T1", type=float)
    p.add_argument("--T2", type=float)
    p.set_defaults(func=cmd_price_ro)

    p = sub.add_parser("portfolio", parents=[common], help="CRRA optimal portfolio report")
    p.add_argument("--gamma", type=float)
    p.add_argument("--x0", type=float)
    p.add_argument("--T", type=float)
    p.add_argument("--paths", type=_positive_int)
    p.add_argument("--steps", type=_positive_int)
    p.set_defaults(func=cmd_portfolio)

    p = sub.add_parser("tracking-error", parents=[common],
                       help="flow forward vs instantaneous forward tracking error")
    p.add_argument("--t", type=float)
    p.add_argument("--Tj", type=float)
    p.add_argument("--Tk", type=float)
    p.add_argument("--T-tilde", dest="T_tilde", type=float)
    p.set_defaults(func=cmd_tracking_error)

    p = sub.add_parser("kernel-eval", parents=[common], help="evaluate kernels at (t, s) pairs")
    p.add_argument("--t", type=float, nargs="+", required=True)
    p.add_argument("--s", type=float, nargs="+", required=True)
    p.add_argument("--kernel", help="kernel JSON object, instead of the config factors")
    p.set_defaults(func=cmd_kernel_eval)
    return parser


def run(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    try:
        cfg = load_config(args)
        print(args.func(args, cfg))
        return EXIT_OK
    except _Incomplete as exc:
        print(str(exc))
        return EXIT_INCOMPLETE
    except UsageError as exc:
        print(f"gvmarket {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except IncompletenessError as exc:
        print(f"gvmarket {args.command}: incomplete market: {exc}", file=sys.stderr)
        return EXIT_INCOMPLETE
    except (NumericalError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"gvmarket {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (GVMarketError, ValueError, KeyError, TypeError, json.JSONDecodeError) as exc:
        print(f"gvmarket {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def main():
    sys.exit(run())
