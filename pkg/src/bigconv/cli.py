"""Command-line entry point: synth, train, eval, verify, bench.

Exit codes: 0 success, 1 validation/usage error, 2 check failure.  The
BIGC_THREADS env var (default 1, for determinism) caps BLAS worker threads
and must take effect before numpy loads, so heavy imports happen inside the
subcommand handlers.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_CHECK_FAILED = 2


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise CliError(message)


def _pin_threads():
    threads = os.environ.get("BIGC_THREADS", "1")
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS"):
        os.environ.setdefault(var, threads)


def _build_parser() -> _Parser:
    parser = _Parser(prog="bigconv",
                     description="Boundary-aware input-dependent graph convolution toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic scene dataset")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--count", type=int, default=64)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--difficulty", choices=("easy", "textured"), default="easy")
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train on a dataset manifest")
    p.add_argument("--data", required=True, help="manifest.json path")
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="JSON config file (flags override it)")
    p.add_argument("--variant", help="variant tag or comma list for an ablation sweep")
    p.add_argument("--iterations", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--grm-connection", choices=("residual", "gru"))
    p.add_argument("--grm-layers", type=int)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--config", help="JSON config file matching the checkpoint")

    p = sub.add_parser("verify", help="run oracle equivalence, gradient and self checks")
    p.add_argument("--all", action="store_true")
    p.add_argument("--equivalence", action="store_true")
    p.add_argument("--grad", action="store_true")
    p.add_argument("--self-test", action="store_true")
    p.add_argument("--seeds", type=int, default=10, help="seeds per (variant, size) cell")
    p.add_argument("--out", help="optional directory for the text report")

    p = sub.add_parser("bench", help="factored vs dense Laplacian scaling benchmark")
    p.add_argument("--sizes", default="256,1024,4096")
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--channels", type=int, default=8)
    p.add_argument("--out", help="optional path for the CSV report")

    return parser


# ---------------------------------------------------------------------------
# config plumbing
# ---------------------------------------------------------------------------

_FLAG_KEYS = ("iterations", "batch_size", "seed", "alpha", "learning_rate",
              "grm_connection", "grm_layers")


def _resolve_config(args):
    from .pipeline import ConfigError, PipelineConfig

    known = {f.name for f in dataclasses.fields(PipelineConfig)}
    values = {}
    if getattr(args, "config", None):
        loaded = json.loads(Path(args.config).read_text())
        if not isinstance(loaded, dict):
            raise CliError("config file must hold a JSON object")
        unknown = sorted(set(loaded) - known)
        if unknown:
            raise CliError(f"unknown config keys: {', '.join(unknown)}")
        values.update(loaded)
    for key in _FLAG_KEYS:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    try:
        return PipelineConfig(**values).validate()
    except ConfigError as exc:
        raise CliError(str(exc)) from exc


def _echo_config(out_dir: Path, cfg) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.json").write_text(
        json.dumps(dataclasses.asdict(cfg), indent=2, default=list) + "\n")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _cmd_synth(args) -> int:
    from .data import generate_dataset

    manifest = generate_dataset(args.out, seed=args.seed, count=args.count,
                                size=args.size, difficulty=args.difficulty)
    print(f"wrote {args.count} scenes and {manifest}")
    return EXIT_OK


def _train_one(cfg, manifest, out_dir: Path) -> None:
    from .checkpoint import save_checkpoint
    from .data import load_samples
    from .pipeline import init_model, train

    samples = load_samples(manifest, split="train")
    if not samples:
        raise CliError(f"{manifest}: no training samples")
    state = init_model(cfg)
    rows: list = []
    train(state, samples, log_rows=rows)
    _echo_config(out_dir, cfg)
    with open(out_dir / "loss_log.csv", "w") as fh:
        fh.write("iteration,total,L_R,L_B\n")
        for it, total, l_r, l_b in rows:
            fh.write(f"{it},{total:.12g},{l_r:.12g},{l_b:.12g}\n")
    save_checkpoint(out_dir / "checkpoint.bigc", state)
    print(f"trained {cfg.iterations} iterations (variant={cfg.variant}) -> {out_dir}")


def _cmd_train(args) -> int:
    cfg = _resolve_config(args)
    out = Path(args.out)
    variants = [v.strip() for v in args.variant.split(",")] if args.variant else [cfg.variant]
    if len(variants) == 1:
        cfg = dataclasses.replace(cfg, variant=variants[0]).validate()
        _train_one(cfg, args.data, out)
    else:
        # ablation sweep: same seed and budget per variant, sibling directories
        for variant in variants:
            vcfg = dataclasses.replace(cfg, variant=variant).validate()
            _train_one(vcfg, args.data, out / variant)
    return EXIT_OK


def _cmd_eval(args) -> int:
    from .checkpoint import CheckpointError, load_checkpoint
    from .data import load_samples
    from .pipeline import evaluate, init_model

    cfg = _resolve_config(args)
    state = init_model(cfg)
    try:
        load_checkpoint(args.checkpoint, state)
    except CheckpointError as exc:
        raise CliError(str(exc)) from exc
    samples = load_samples(args.data, split=args.split)
    if not samples:
        raise CliError(f"{args.data}: no samples in split {args.split!r}")
    report = evaluate(state, samples)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _echo_config(out, cfg)
    (out / "metrics.json").write_text(json.dumps(report, indent=2) + "\n")
    print(f"split={args.split} mean region dice {report['mean_region_dice']:.4f} "
          f"-> {out / 'metrics.json'}")
    return EXIT_OK


def _cmd_verify(args) -> int:
    import numpy as np

    from . import graph, oracle
    from .engine import Tensor

    run_all = args.all or not (args.equivalence or args.grad or args.self_test)
    lines = []
    failed = False

    if run_all or args.equivalence:
        reports = oracle.run_equivalence_suite(seeds=range(args.seeds))
        worst = max(max(r.errors.values()) for r in reports)
        bad = [r for r in reports if not r.passed]
        failed |= bool(bad)
        lines.append(f"equivalence: {len(reports)} instances, worst rel err {worst:.3e}, "
                     f"{len(bad)} failures")
        lines.extend(str(r) for r in bad[:10])

    if run_all or args.grad:
        rng = np.random.default_rng(0)
        r, b, p, _ = oracle.random_instance(rng, 16, 4, "boundary")
        params = [t for _, t in p.named_tensors()]
        r_t = Tensor(r)
        params.append(r_t)

        def layer_sum():
            emb = graph.VertexEmbeddings(r_t, 4, 4)
            bnd = graph.BoundaryMap(Tensor(b))
            out = graph.bigconv_layer(emb, bnd, p, "boundary")
            from . import engine as en
            return en.tsum(out.map)

        report = oracle.grad_check(layer_sum, params)
        failed |= not report.passed
        lines.append(f"gradients: {report}")

    if run_all or args.self_test:
        rng = np.random.default_rng(1)
        r, b, p, z = oracle.random_instance(rng, 16, 4, "boundary")
        clean = oracle.equivalence_check(r, b, p, "boundary", z)
        broken = oracle.equivalence_check(r, b, p, "boundary", z, perturb=1e-3)
        ok = clean.passed and not broken.passed
        failed |= not ok
        lines.append(f"checker self-test: clean={'pass' if clean.passed else 'FAIL'}, "
                     f"injected 1e-3 detected={'yes' if not broken.passed else 'NO'}")

    text = "\n".join(lines) + "\n"
    print(text, end="")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "verify_report.txt").write_text(text)
    return EXIT_CHECK_FAILED if failed else EXIT_OK


def _cmd_bench(args) -> int:
    from .oracle import scaling_bench

    sizes = tuple(int(s) for s in args.sizes.split(","))
    report = scaling_bench(sizes=sizes, repeats=args.repeats, channels=args.channels)
    print(report)
    csv_text = report.to_csv()
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(csv_text)
        print(f"wrote {args.out}")
    else:
        print(csv_text, end="")
    return EXIT_OK


_COMMANDS = {
    "synth": _cmd_synth,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "verify": _cmd_verify,
    "bench": _cmd_bench,
}


def main(argv=None) -> int:
    _pin_threads()
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
