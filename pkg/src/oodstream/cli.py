"""Command-line interface: run streams, synthesize data, verify gradients.

Exit codes: 0 on success, 1 when a run or check fails (with an error JSON on
stderr), 2 for bad usage (argparse's convention).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import dataio, engine, metrics, synth
from .core import ConfigError, StreamError
from .learner import gradient_check


def _config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--alpha", type=float, default=None, help="purification loss weight")
    parser.add_argument("--beta", type=float, default=None, help="calibration fusion coefficient")
    parser.add_argument("--tau", type=float, default=None, help="softmax temperature")
    parser.add_argument("--bank-k", type=int, default=None, help="bank capacity")
    parser.add_argument("--batch", type=int, default=None, help="adaptation batch size")
    parser.add_argument("--lr", type=float, default=None, help="optimizer learning rate")
    parser.add_argument("--grid", type=int, default=None, help="threshold grid segments")
    parser.add_argument("--early-stop", type=int, default=None,
                        help="freeze adaptation after this many samples")
    parser.add_argument("--window", type=int, default=None,
                        help="threshold over only the last N scores")
    parser.add_argument("--seed", type=int, default=None, help="run seed")
    parser.add_argument("--base", choices=["mcm", "maxlogit"], default=None,
                        help="base scoring rule")
    parser.add_argument("--loss", choices=["omb", "ce"], default=None,
                        help="pseudo-label loss variant")
    parser.add_argument("--bank-strategy", choices=["priority", "fifo", "rand", "sa"],
                        default=None)
    parser.add_argument("--calibration", choices=["fusion", "maxsim", "expsum", "idr"],
                        default=None)


def _flags_to_config(args: argparse.Namespace) -> dict:
    mapping = {
        "alpha": "alpha", "beta": "beta", "tau": "tau", "bank_k": "bank_capacity",
        "batch": "batch_size", "lr": "learning_rate", "grid": "threshold_grid",
        "early_stop": "early_stop_after", "window": "score_window", "seed": "seed",
        "base": "base_scorer", "loss": "loss", "bank_strategy": "bank_strategy",
        "calibration": "calibration",
    }
    out = {}
    for flag, key in mapping.items():
        value = getattr(args, flag, None)
        if value is not None:
            out[key] = value
    return out


def _cmd_run(args: argparse.Namespace) -> int:
    manifest = dataio.Manifest.load(args.manifest)
    config = engine.resolve_config(_flags_to_config(args), manifest)
    report = engine.run_stream(args.manifest, config,
                               include_outcomes=not args.no_outcomes,
                               include_bank=not args.no_bank)
    if args.out:
        report.save(args.out)
    summary = {
        "dataset": report.dataset_name,
        "n_scored": report.n_scored,
        "flush_count": report.flush_count,
        "flags": report.flags,
        "metrics_final": report.metrics_final,
        "metrics_base": report.metrics_base,
    }
    print(json.dumps(summary, indent=2))
    return 0


def _cmd_synth(args: argparse.Namespace) -> int:
    spec = synth.SynthSpec(
        dim=args.dim,
        num_id_classes=args.classes,
        num_ood_clusters=args.ood_clusters,
        concentration=args.concentration,
        id_fraction=args.id_fraction,
        stream_length=args.length,
        seed=args.seed,
        ood_concentration=args.ood_concentration,
        ood_center_spread=args.ood_center_spread,
        ood_id_affinity=args.ood_id_affinity,
        max_id_cosine=args.ceiling,
    )
    path = synth.write_dataset(spec, args.out_dir)
    print(json.dumps({"manifest": str(path)}))
    return 0


def _cmd_gradcheck(args: argparse.Namespace) -> int:
    result = gradient_check(dim=args.dim, num_classes=args.classes,
                            batch_size=args.batch, alpha=args.alpha,
                            seed=args.seed, step=args.step)
    doc = {
        "max_rel_err": result.max_rel_err,
        "max_abs_err": result.max_abs_err,
        "grad_scale": result.grad_scale,
        "tolerance": args.tolerance,
        "passed": result.max_rel_err < args.tolerance,
    }
    print(json.dumps(doc, indent=2))
    return 0 if doc["passed"] else 1


def _cmd_eval(args: argparse.Namespace) -> int:
    scores = np.asarray([float(line) for line in
                         Path(args.scores).read_text().split()], dtype=np.float64)
    labels = dataio.read_labels(args.labels)
    doc = metrics.evaluate(scores, labels)
    doc["bimodality"] = metrics.density_report(scores, labels, bins=args.bins).bimodality
    print(json.dumps(doc, indent=2))
    return 0


def _cmd_dump_bank(args: argparse.Namespace) -> int:
    report = engine.StreamReport.load(args.report)
    if not report.bank or report.bank.get("features") is None:
        raise ConfigError(f"{args.report}: report carries no bank entries")
    block = report.bank
    dim = block["dim"]
    feats = np.asarray(block["features"], dtype=np.float64).reshape(-1, dim)
    sidecar = args.sidecar or str(Path(args.out).with_suffix(".json"))
    dataio.write_embeddings(args.out, feats)
    Path(sidecar).write_text(json.dumps({
        "strategy": block["strategy"],
        "capacity": block["capacity"],
        "priorities": block["priorities"],
        "insert_seqs": block["insert_seqs"],
    }, indent=2) + "\n")
    print(json.dumps({"features": str(args.out), "sidecar": sidecar,
                      "entries": int(feats.shape[0])}))
    return 0


_ABLATE_AXES = {
    "bank-strategy": ("bank_strategy", ["priority", "fifo", "rand", "sa"]),
    "loss": ("loss", ["omb", "ce"]),
    "calibration": ("calibration", ["fusion", "maxsim", "expsum", "idr"]),
    "alpha": ("alpha", [0.0, 0.5]),
}


def _cmd_ablate(args: argparse.Namespace) -> int:
    key, values = _ABLATE_AXES[args.axis]
    manifest = dataio.Manifest.load(args.manifest)
    rows = []
    for value in values:
        flags = _flags_to_config(args)
        flags[key] = value
        config = engine.resolve_config(flags, manifest)
        report = engine.run_stream(args.manifest, config,
                                   include_outcomes=False, include_bank=False)
        rows.append({key: value,
                     "metrics_final": report.metrics_final,
                     "metrics_base": report.metrics_base,
                     "flush_count": report.flush_count})
    doc = {"axis": args.axis, "rows": rows}
    if args.out:
        Path(args.out).write_text(json.dumps(doc, indent=2) + "\n")
    print(json.dumps(doc, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="oodstream",
                                     description="Streaming OOD detection over embeddings")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one stream from a manifest")
    p_run.add_argument("--manifest", required=True)
    p_run.add_argument("--out", default=None, help="write the full report JSON here")
    p_run.add_argument("--no-outcomes", action="store_true",
                       help="omit per-sample outcomes from the report")
    p_run.add_argument("--no-bank", action="store_true",
                       help="omit bank entries from the report")
    _config_flags(p_run)
    p_run.set_defaults(func=_cmd_run)

    p_synth = sub.add_parser("synth", help="write a synthetic dataset")
    p_synth.add_argument("--out-dir", required=True)
    p_synth.add_argument("--dim", type=int, default=64)
    p_synth.add_argument("--classes", type=int, default=10)
    p_synth.add_argument("--ood-clusters", type=int, default=5)
    p_synth.add_argument("--length", type=int, default=10000)
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--id-fraction", type=float, default=0.5)
    p_synth.add_argument("--concentration", type=float, default=0.3)
    p_synth.add_argument("--ood-concentration", type=float, default=None)
    p_synth.add_argument("--ood-center-spread", type=float, default=None)
    p_synth.add_argument("--ood-id-affinity", type=float, default=None,
                         help="draw OOD centers this close (cosine) to an ID feature")
    p_synth.add_argument("--ceiling", type=float, default=0.3)
    p_synth.set_defaults(func=_cmd_synth)

    p_grad = sub.add_parser("gradcheck", help="verify the analytic gradient")
    p_grad.add_argument("--dim", type=int, default=16)
    p_grad.add_argument("--classes", type=int, default=4)
    p_grad.add_argument("--batch", type=int, default=32)
    p_grad.add_argument("--alpha", type=float, default=0.5)
    p_grad.add_argument("--seed", type=int, default=0)
    p_grad.add_argument("--step", type=float, default=1e-5)
    p_grad.add_argument("--tolerance", type=float, default=1e-4)
    p_grad.set_defaults(func=_cmd_gradcheck)

    p_eval = sub.add_parser("eval", help="metrics for a score/label file pair")
    p_eval.add_argument("--scores", required=True)
    p_eval.add_argument("--labels", required=True)
    p_eval.add_argument("--bins", type=int, default=50)
    p_eval.set_defaults(func=_cmd_eval)

    p_dump = sub.add_parser("dump-bank", help="extract bank entries from a report")
    p_dump.add_argument("--report", required=True)
    p_dump.add_argument("--out", required=True)
    p_dump.add_argument("--sidecar", default=None)
    p_dump.set_defaults(func=_cmd_dump_bank)

    p_abl = sub.add_parser("ablate", help="compare config values along one axis")
    p_abl.add_argument("--manifest", required=True)
    p_abl.add_argument("--axis", choices=sorted(_ABLATE_AXES), required=True)
    p_abl.add_argument("--out", default=None)
    _config_flags(p_abl)
    p_abl.set_defaults(func=_cmd_ablate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (StreamError, OSError, ValueError) as exc:
        error = {"error": type(exc).__name__, "message": str(exc)}
        print(json.dumps(error), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
