"""Command line interface.

Subcommands: gen-data, train, eval, grad-check, ablate, report.

Exit codes: 0 success, 1 verification failure, 2 configuration error,
3 I/O or data-format error.  Thread count resolves flag > LIFEREID_THREADS
environment variable > config file.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import re
import sys

from . import __version__
from .config import ABLATIONS, RunConfig, apply_ablation
from .encoder import load_checkpoint
from .errors import (
    CheckpointError,
    HeaderMismatch,
    InvalidConfig,
    LifereidError,
    MalformedRow,
)
from .evaluation import GallerySnapshot, cross_test, evaluate_domain, write_metrics_csv
from .gradcheck import DEFAULT_TOLERANCE, LOSS_NAMES, run_gradient_checks
from .pipeline import run_sequence
from .synth import default_domain_specs, read_dataset, write_dataset


def _load_config(args) -> RunConfig:
    cfg = RunConfig.from_json(args.config) if getattr(args, "config", None) else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg.master_seed = args.seed
    if getattr(args, "n_mem", None) is not None:
        cfg.n_mem = args.n_mem
    if getattr(args, "lambda_cam", None) is not None:
        cfg.weights = dataclasses.replace(cfg.weights, lambda_cam=args.lambda_cam)
    if getattr(args, "order", None) is not None:
        try:
            cfg.order = tuple(int(tok) for tok in args.order.split(","))
        except ValueError as exc:
            raise InvalidConfig("order must be comma-separated integers") from exc
    if getattr(args, "ablation", None) is not None:
        cfg = apply_ablation(cfg, args.ablation)
    env = os.environ.get("LIFEREID_THREADS")
    if env is not None:
        try:
            cfg.threads = int(env)
        except ValueError as exc:
            raise InvalidConfig("LIFEREID_THREADS must be an integer") from exc
    if getattr(args, "threads", None) is not None:
        cfg.threads = args.threads
    if cfg.threads < 1:
        raise InvalidConfig("threads must be at least 1")
    return cfg


def _specs_from_config(cfg: RunConfig):
    d = cfg.data
    return default_domain_specs(
        cfg.master_seed,
        n_seen=d.n_seen,
        n_unseen=d.n_unseen,
        n_train_identities=d.n_train_identities,
        n_test_identities=d.n_test_identities,
        n_cameras=d.n_cameras,
        samples_per_id_per_camera=d.samples_per_id_per_camera,
        d_in=d.d_in,
        noise_sigma=d.noise_sigma,
        camera_offset_norm=d.camera_offset_norm,
        bias_scale=d.bias_scale,
        transform_condition=d.transform_condition,
        ambient_noise_sigma=d.ambient_noise_sigma,
    )


def cmd_gen_data(args) -> int:
    cfg = _load_config(args)
    manifest = write_dataset(args.out, _specs_from_config(cfg), cfg.master_seed)
    print("wrote %d domains to %s" % (len(manifest["domains"]), args.out))
    return 0


def _print_metrics(rows) -> None:
    for r in rows:
        print(
            "step %d  domain %d  %-6s %-5s mAP %6.2f  rank1 %6.2f"
            % (r["step"], r["domain_id"], r["kind"], r["mode"], r["mAP"], r["rank1"])
        )


def cmd_train(args) -> int:
    cfg = _load_config(args)
    _, domains, seen = read_dataset(args.data)
    result = run_sequence(cfg, domains, seen, out_dir=args.out)
    last = result.metrics[-1]["step"] if result.metrics else 0
    _print_metrics([r for r in result.metrics if r["step"] == last])
    if not args.no_plots:
        from .reporting import render_run_figures

        for path in render_run_figures(args.out, result.metrics):
            print("figure %s" % path)
    print("run dir %s" % args.out)
    return 0


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    params_m, _, extra = load_checkpoint(args.checkpoint)
    _, domains, seen = read_dataset(args.data)
    step = int(extra.get("step", 0))
    snapshots = {}
    if args.snapshots:
        pat = re.compile(r"step_(\d+)_domain_(\d+)\.bin$")
        for name in sorted(os.listdir(args.snapshots)):
            m = pat.match(name)
            if m:
                s, d = int(m.group(1)), int(m.group(2))
                if d not in snapshots or s < snapshots[d][0]:
                    snapshots[d] = (s, os.path.join(args.snapshots, name))
    rows = []
    for d in sorted(domains):
        kind = "seen" if d in seen else "unseen"
        mAP, r1 = evaluate_domain(params_m, domains[d], cfg.threads)
        rows.append(
            {"step": step, "domain_id": d, "kind": kind, "mode": "self", "mAP": mAP, "rank1": r1}
        )
        if args.snapshots:
            if d in snapshots:
                snap = GallerySnapshot.load(snapshots[d][1])
                cm, cr = cross_test(params_m, domains[d], snap, cfg.threads)
                rows.append(
                    {
                        "step": step,
                        "domain_id": d,
                        "kind": kind,
                        "mode": "cross",
                        "mAP": cm,
                        "rank1": cr,
                    }
                )
            elif kind == "seen":
                print("warning: no snapshot for domain %d, skipping cross-test" % d, file=sys.stderr)
    write_metrics_csv(args.out, rows)
    _print_metrics(rows)
    return 0


def cmd_grad_check(args) -> int:
    cfg = _load_config(args)
    worst = run_gradient_checks(
        cfg.master_seed, args.trials, corrupt=args.self_test_corrupt
    )
    failed = False
    for name in LOSS_NAMES:
        ok = worst[name] <= DEFAULT_TOLERANCE
        failed = failed or not ok
        print("%-8s max rel err %.3e  %s" % (name, worst[name], "PASS" if ok else "FAIL"))
    return 1 if failed else 0


def cmd_ablate(args) -> int:
    base = _load_config(args)
    _, domains, seen = read_dataset(args.data)
    os.makedirs(args.out, exist_ok=True)
    summary = []
    for name in ABLATIONS:
        cfg = apply_ablation(base, name)
        run_dir = os.path.join(args.out, name.replace("-", "_"))
        result = run_sequence(cfg, domains, seen, out_dir=run_dir)
        last = max(r["step"] for r in result.metrics)
        finals = [
            r
            for r in result.metrics
            if r["step"] == last and r["kind"] == "seen" and r["mode"] == "self"
        ]
        order = list(cfg.order) if cfg.order is not None else list(seen)
        first = next(r for r in finals if r["domain_id"] == order[0])
        summary.append(
            {
                "ablation": name,
                "seen_avg_mAP": sum(r["mAP"] for r in finals) / len(finals),
                "first_domain_mAP": first["mAP"],
            }
        )
        print(
            "%-9s seen avg mAP %6.2f  first domain mAP %6.2f"
            % (name, summary[-1]["seen_avg_mAP"], summary[-1]["first_domain_mAP"])
        )
    with open(os.path.join(args.out, "summary.csv"), "w") as fh:
        fh.write("ablation,seen_avg_mAP,first_domain_mAP\n")
        for row in summary:
            fh.write(
                "%s,%.10g,%.10g\n"
                % (row["ablation"], row["seen_avg_mAP"], row["first_domain_mAP"])
            )
    from .reporting import render_ablation_figure

    print("figure %s" % render_ablation_figure(args.out, summary))
    return 0


def cmd_report(args) -> int:
    from .evaluation import read_metrics_csv
    from .reporting import render_run_figures

    rows = read_metrics_csv(os.path.join(args.run, "metrics.csv"))
    for path in render_run_figures(args.run, rows):
        print("figure %s" % path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lifereid", description=__doc__)
    p.add_argument("--version", action="version", version="lifereid %s" % __version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True, seed=True, threads=True):
        if config:
            sp.add_argument("--config", help="JSON config file; omitted keys keep defaults")
        if seed:
            sp.add_argument("--seed", type=int, help="master seed override")
        if threads:
            sp.add_argument("--threads", type=int, help="worker threads for evaluation")

    sp = sub.add_parser("gen-data", help="generate the synthetic domain suite")
    common(sp, threads=False)
    sp.add_argument("--out", required=True, help="dataset directory to create")
    sp.set_defaults(func=cmd_gen_data)

    sp = sub.add_parser("train", help="run the sequential adaptation pipeline")
    common(sp)
    sp.add_argument("--data", required=True, help="dataset directory from gen-data")
    sp.add_argument("--out", required=True, help="run directory to create")
    sp.add_argument("--order", help="training order of seen domains, e.g. 2,0,1")
    sp.add_argument("--ablation", choices=ABLATIONS, help="loss subset to train with")
    sp.add_argument("--lambda-cam", type=float, dest="lambda_cam", help="camera loss weight")
    sp.add_argument("--n-mem", type=int, dest="n_mem", help="buffer capacity")
    sp.add_argument("--no-plots", action="store_true", help="skip figure rendering")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a saved momentum encoder")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--snapshots", help="gallery_feats directory for cross-tests")
    sp.add_argument("--out", required=True, help="metrics CSV to write")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("grad-check", help="verify loss gradients against finite differences")
    common(sp, threads=False)
    sp.add_argument("--trials", type=int, default=100)
    sp.add_argument("--self-test-corrupt", action="store_true", help=argparse.SUPPRESS)
    sp.set_defaults(func=cmd_grad_check)

    sp = sub.add_parser("ablate", help="train every loss-ablation configuration")
    common(sp)
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True, help="directory for the ablation runs")
    sp.set_defaults(func=cmd_ablate)

    sp = sub.add_parser("report", help="render figures for an existing run directory")
    common(sp, config=False, seed=False, threads=False)
    sp.add_argument("--run", required=True, help="run directory containing metrics.csv")
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InvalidConfig as exc:
        print("config error: %s" % exc, file=sys.stderr)
        return 2
    except (OSError, MalformedRow, HeaderMismatch, CheckpointError) as exc:
        print("i/o error: %s" % exc, file=sys.stderr)
        return 3
    except LifereidError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
