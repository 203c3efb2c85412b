"""Command line entry point: ``mfshare run|oracles|rd-snapshot|report``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .errors import MfshareError, ParameterError


def _cmd_run(args) -> int:
    from .runner import load_config, run

    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.workers is not None:
        cfg.workers = args.workers
    if args.out is not None:
        cfg.out = args.out
    cfg.__post_init__()
    summary = run(cfg)
    for method, m in summary["methods"].items():
        print(f"{method:8s} mean={m['mean']:.6g} std={m['std']:.4g} ok={m['n_ok']} failed={m['n_failed']}")
    print(f"outputs written to {cfg.out}")
    return 1 if any(m["n_ok"] == 0 for m in summary["methods"].values()) else 0


def _cmd_oracles(args) -> int:
    from .benchmarks.theoretical import q_hf, q_lf, theoretical_oracles
    from .distributions import sample
    from .estimators import pearson

    if args.which != "theoretical":
        raise ParameterError(f"no oracle bundle named {args.which!r}")
    o = theoretical_oracles()
    seed = 0 if args.seed is None else args.seed
    X = sample(o.law, args.n, seed).values
    y = q_hf(X)
    out = {
        "C_hf": o.C_hf.tolist(),
        "C_lf": o.C_lf.tolist(),
        "W_hf": o.W_hf[:, 0].tolist(),
        "W_lf": o.W_lf[:, 0].tolist(),
        "latent_hf": o.latent_hf.to_dict(),
        "latent_lf": o.latent_lf.to_dict(),
        "rho_reference": {"rho": o.rho, "rho_as": o.rho_as, "rho_ae": o.rho_ae},
        "rho_sampled": {"n": args.n, "seed": seed, "rho": pearson(y, q_lf(X)),
                        "rho_as": pearson(y, o.q_lf_as(X)), "rho_ae": pearson(y, o.q_lf_ae(X))},
    }
    text = json.dumps(out, indent=2, sort_keys=True) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def _parse_params(items) -> dict[str, float]:
    params = {}
    for item in items:
        key, sep, val = item.partition("=")
        if not sep:
            raise ParameterError(f"expected key=value, got {item!r}")
        params[key.strip()] = float(val)
    return params


def _cmd_rd_snapshot(args) -> int:
    from .benchmarks.reaction_diffusion import DEFAULT_IC_SEED, RDConfig, rd_qoi, rd_snapshot, snapshot_csv

    p = _parse_params(args.params)
    unknown = set(p) - {"du", "dv", "k", "dbar"}
    if unknown:
        raise ParameterError(f"unknown snapshot parameters {sorted(unknown)}")
    ic_seed = DEFAULT_IC_SEED if args.seed is None else args.seed
    k = p.get("k", 1e-3)
    if args.grid == "hf":
        cfg = RDConfig.hf(du=p.get("du", 1e-3), dv=p.get("dv", 5e-3), k=k, ic_seed=ic_seed)
    else:
        dbar = p.get("dbar", 0.5 * (p.get("du", 1e-3) + p.get("dv", 5e-3)))
        cfg = RDConfig.lf(dbar, k=k, ic_seed=ic_seed)
    u, v = rd_snapshot(cfg)
    text = snapshot_csv(u, v)
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        print(f"qoi={rd_qoi(u, v):.10g} written to {args.out}")
    else:
        sys.stdout.write(text)
    return 0


def _cmd_report(args) -> int:
    from .runner import regenerate_report

    summary = regenerate_report(args.run_dir)
    for method, m in summary["methods"].items():
        print(f"{method:8s} mean={m['mean']:.6g} std={m['std']:.4g} ok={m['n_ok']} failed={m['n_failed']}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mfshare", description="Multifidelity Monte Carlo with shared subspaces")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a repetition study from a JSON config")
    p.add_argument("config")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("oracles", help="print closed-form oracle values")
    p.add_argument("which", choices=["theoretical"])
    p.add_argument("--n", type=int, default=10**6, help="sample size for the sampled correlations")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_oracles)

    p = sub.add_parser("rd-snapshot", help="final-time reaction-diffusion fields as CSV")
    p.add_argument("params", nargs="*", help="du=.. dv=.. k=.. (or dbar=.. on the LF grid)")
    p.add_argument("--grid", choices=["hf", "lf"], default="hf")
    p.add_argument("--seed", type=int, help="initial-condition seed")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_rd_snapshot)

    p = sub.add_parser("report", help="regenerate density files of a finished run")
    p.add_argument("run_dir")
    p.set_defaults(func=_cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return int(args.func(args))
    except (MfshareError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
