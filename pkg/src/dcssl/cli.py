"""Command-line interface: simulate / fit / mc.

Configuration precedence is CLI flags > config file (--config, JSON) >
defaults; every output embeds the resolved configuration and the
package version.  All randomness derives from --seed.
"""

import argparse
import csv
import json
import sys

from . import __version__
from .augment import SslConfig, run_ssl, supervised_estimate
from .data import load_cohort, save_cohort
from .errors import DcsslError
from .simulate import SimConfig, gen_cohort, run_mc

SIM_KEYS = (
    "n",
    "n_mult",
    "r",
    "r_star",
    "seed",
    "reps",
    "beta_true",
    "gamma_true",
    "copula_rho",
    "z_corr",
    "cens_lo",
    "cens_hi",
    "time_scale",
    "z_binary",
)


def _add_common(parser):
    parser.add_argument("--config", help="JSON file with defaults for any flag")
    parser.add_argument("--output", required=True, help="output file path")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--r", type=float, dest="r")
    parser.add_argument("--tol", type=float)
    parser.add_argument("--max-iter", type=int, dest="max_iter")


def _add_sim(parser):
    parser.add_argument("--n", type=int)
    parser.add_argument("--n-mult", type=int, dest="n_mult")
    parser.add_argument("--r-star", type=float, dest="r_star")
    parser.add_argument("--reps", type=int)


def _add_model_flags(parser):
    parser.add_argument(
        "--model4", action=argparse.BooleanOptionalAction, default=None,
        help="enable/disable the transformation working model (SSL1)",
    )
    parser.add_argument(
        "--model5", action=argparse.BooleanOptionalAction, default=None,
        help="enable/disable the composite working model (SSL2)",
    )
    parser.add_argument("--h", choices=("log", "identity"))


def build_parser():
    parser = argparse.ArgumentParser(
        prog="dcssl",
        description="Semi-supervised risk-effect estimation for doubly "
        "censored event times",
    )
    parser.add_argument("--version", action="version", version=f"dcssl {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="write a simulated cohort CSV")
    _add_common(p_sim)
    _add_sim(p_sim)

    p_fit = sub.add_parser("fit", help="estimate risk effects from a cohort CSV")
    _add_common(p_fit)
    _add_model_flags(p_fit)
    p_fit.add_argument("--input", required=True, help="cohort CSV path")

    p_mc = sub.add_parser("mc", help="run the Monte Carlo study for one cell")
    _add_common(p_mc)
    _add_sim(p_mc)
    _add_model_flags(p_mc)
    p_mc.add_argument("--threads", type=int)

    return parser


def _resolve(args, defaults):
    """defaults < config file < explicit CLI flags."""
    resolved = dict(defaults)
    config_path = getattr(args, "config", None)
    if config_path:
        with open(config_path) as fh:
            file_cfg = json.load(fh)
        unknown = set(file_cfg) - set(defaults)
        if unknown:
            raise DcsslError(f"unknown config keys: {sorted(unknown)}")
        resolved.update(file_cfg)
    for key in defaults:
        value = getattr(args, key, None)
        if value is not None:
            resolved[key] = value
    for key in ("beta_true", "gamma_true", "z_binary"):
        if key in resolved and isinstance(resolved[key], list):
            resolved[key] = tuple(resolved[key])
    return resolved


_SIM_DEFAULTS = {
    "n": 200,
    "n_mult": 5,
    "r": 0.0,
    "r_star": 0.0,
    "seed": 0,
    "reps": 1,
    "beta_true": (0.5, -0.3),
    "gamma_true": (0.5, -0.3),
    "copula_rho": 0.85,
    "z_corr": 0.3,
    "cens_lo": 0.20,
    "cens_hi": 0.80,
    "time_scale": 2.0,
    "z_binary": (),
}

_FIT_DEFAULTS = {
    "r": 0.0,
    "model4": True,
    "model5": True,
    "h": "log",
    "tol": 1e-6,
    "max_iter": 20000,
    "seed": 0,
}


def _sim_config(resolved, reps=None):
    kwargs = {k: resolved[k] for k in SIM_KEYS if k in resolved}
    if reps is not None:
        kwargs["reps"] = reps
    return SimConfig(**kwargs)


def _config_comment(resolved):
    return f"# dcssl {__version__} config={json.dumps(resolved, sort_keys=True)}"


def cmd_simulate(args):
    resolved = _resolve(args, _SIM_DEFAULTS)
    cfg = _sim_config(resolved, reps=1)
    cohort = gen_cohort(cfg, rep_index=0)
    save_cohort(cohort, args.output, header_comment=_config_comment(resolved))
    meta = cohort.meta
    print(
        f"wrote {len(cohort)} subjects to {args.output}\n"
        f"event time: {meta['frac_left']:.1%} left / "
        f"{meta['frac_exact']:.1%} exact / {meta['frac_right']:.1%} right censored\n"
        f"surrogate:  {meta['frac_left_star']:.1%} left / "
        f"{meta['frac_right_star']:.1%} right censored\n"
        f"windows resampled: {meta['resampled_windows']}"
    )
    return 0


def cmd_fit(args):
    resolved = _resolve(args, _FIT_DEFAULTS)
    cohort = load_cohort(args.input)
    labeled, unlabeled = cohort.split()
    if len(labeled) == 0:
        raise DcsslError("input has no labeled records")
    ssl_cfg = SslConfig(
        r=resolved["r"],
        use_model4=resolved["model4"],
        use_model5=resolved["model5"],
        h=resolved["h"],
        tol=resolved["tol"],
        max_iter=resolved["max_iter"],
    )
    results = {}
    if len(unlabeled) == 0:
        est = supervised_estimate(labeled, ssl_cfg)
        results[est.method] = {"available": True, **est.to_dict()}
        for name in ("SSL1", "SSL2", "SSL3"):
            results[name] = {
                "available": False,
                "reason": "no unlabeled records: augmentation impossible",
            }
    else:
        for est in run_ssl(labeled, unlabeled, ssl_cfg):
            results[est.method] = {"available": True, **est.to_dict()}
        wanted = {"SSL1": resolved["model4"], "SSL2": resolved["model5"]}
        wanted["SSL3"] = resolved["model4"] and resolved["model5"]
        for name, on in wanted.items():
            if not on:
                results[name] = {"available": False, "reason": "disabled by flags"}
    payload = {
        "artifact": {"name": "dcssl", "version": __version__},
        "config": resolved,
        "n": len(labeled),
        "n_unlabeled": len(unlabeled),
        "results": results,
    }
    with open(args.output, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    for name, block in results.items():
        if block.get("available"):
            print(f"{name}: beta={block['beta']} se={block['se']}")
        else:
            print(f"{name}: unavailable ({block['reason']})")
    return 0


def _reps_json_path(output):
    if output.endswith(".csv"):
        return output[: -len(".csv")] + "_reps.json"
    return output + "_reps.json"


def cmd_mc(args):
    defaults = dict(_SIM_DEFAULTS)
    defaults.update(
        {"threads": 1, "model4": True, "model5": True, "h": "log",
         "tol": 1e-6, "max_iter": 20000}
    )
    resolved = _resolve(args, defaults)
    cfg = _sim_config(resolved)
    ssl_cfg = SslConfig(
        r=resolved["r"],
        use_model4=resolved["model4"],
        use_model5=resolved["model5"],
        h=resolved["h"],
        tol=resolved["tol"],
        max_iter=resolved["max_iter"],
    )
    summary = run_mc(cfg, threads=resolved["threads"], ssl_config=ssl_cfg)

    with open(args.output, "w", newline="") as fh:
        fh.write(_config_comment(resolved) + "\n")
        writer = csv.DictWriter(
            fh, fieldnames=["Method", "coefficient", "Bias", "SE", "ESE", "CP", "RE"]
        )
        writer.writeheader()
        for row in summary.table_rows():
            writer.writerow({k: _fmt_cell(v) for k, v in row.items()})

    reps_path = _reps_json_path(args.output)
    with open(reps_path, "w") as fh:
        json.dump(
            {
                "artifact": {"name": "dcssl", "version": __version__},
                "config": resolved,
                "reps_used": summary.reps_used,
                "failures": summary.failures,
                "replications": summary.replications,
            },
            fh,
            indent=2,
            sort_keys=True,
        )
        fh.write("\n")

    print(f"wrote {args.output} and {reps_path} ({summary.reps_used} replications)")
    for row in summary.table_rows():
        print(
            f"{row['Method']:>5} {row['coefficient']}: "
            f"bias={row['Bias']:+.4f} se={row['SE']:.4f} ese={row['ESE']:.4f} "
            f"cp={row['CP']:.3f} re={row['RE']:.4f}"
        )
    return 0


def _fmt_cell(value):
    if isinstance(value, float):
        return "%.17g" % value
    return value


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {"simulate": cmd_simulate, "fit": cmd_fit, "mc": cmd_mc}
    try:
        return handlers[args.command](args)
    except DcsslError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
