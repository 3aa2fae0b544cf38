"""``rescom`` command line: simulate, grad-check, train, eval, profile-gradients, gen-data.

Exit codes: 0 success, 1 check or validation failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from . import __version__, _rng
from .config import ConfigError, load_config
from .contrastive import gradient_profile_csv, mean_gradient_norm_profile
from .data import (DatasetError, default_group_thresholds, load_csv_dataset, make_balanced_test,
                   make_longtailed_synthetic, make_synthetic_from_profile, write_csv_dataset)
from .gradcheck import run_suite
from .imbalance import (LongTailProfile, contrastive_imbalance_factor, expected_pairs_csv,
                        simulate_pair_frequencies)
from .model import CheckpointError, SiameseNetwork, load_checkpoint, save_checkpoint
from .queue import POLICIES, ClassQueueBank
from .trainer import evaluate, train, warmup_bank

log = logging.getLogger("rescom")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _profile_from_args(args):
    if args.counts:
        try:
            counts = [int(c) for c in args.counts.split(",")]
            return LongTailProfile(tuple(counts))
        except ValueError as exc:
            raise UsageError(f"invalid --counts: {exc}") from exc
    if args.k is None or args.imbalance is None or args.nmax is None:
        raise UsageError("give either --counts or all of --k, --if and --nmax")
    try:
        return LongTailProfile.exponential(args.k, args.imbalance, args.nmax)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _emit(text, path):
    if path:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def cmd_simulate(args):
    profile = _profile_from_args(args)
    if profile.n_classes < 2:
        raise UsageError("simulation needs at least two classes")
    if not 1 <= args.batch <= profile.total:
        raise UsageError(f"--batch must lie in [1, N={profile.total}]")
    mat = simulate_pair_frequencies(profile, args.batch, args.queue, args.epochs, args.seed,
                                    args.queue_size)
    expected = expected_pairs_csv(profile, args.queue_size, mat.diagonal_per_epoch()
                                  if args.queue == "original" else None)
    if args.out:
        _emit(mat.to_csv(), args.out)
        root, ext = os.path.splitext(args.out)
        _emit(expected, f"{root}.expected{ext or '.csv'}")
    else:
        sys.stdout.write(mat.to_csv())
        sys.stdout.write("\n")
        sys.stdout.write(expected)
    print(f"gamma: {contrastive_imbalance_factor(profile):.6f}")
    print(f"gamma_simulated: {mat.empirical_gamma():.6f}")
    return EXIT_OK


def cmd_grad_check(args):
    summaries = run_suite(args.instances, args.network_instances, args.seed, args.tolerance)
    ok = True
    for s in summaries:
        status = "ok" if s.passed else "FAIL"
        print(f"{s.name}: max_relative_error={s.max_error:.3e} tolerance={s.tolerance:.1e} "
              f"instances={len(s.errors)} {status}")
        if not s.passed:
            ok = False
            print(f"  failing instance: seed={args.seed} index={s.worst_instance}")
    return EXIT_OK if ok else EXIT_FAIL


def _datasets(run):
    ds, seed = run.data, run.train.seed
    if ds.source == "csv":
        if not ds.path:
            raise ConfigError("data.path is required for csv data")
        tr = load_csv_dataset(ds.path)
        te = load_csv_dataset(ds.test_path, tr.n_classes) if ds.test_path else None
        return tr, te
    if ds.counts:
        tr = make_synthetic_from_profile(ds.counts, ds.dim, ds.separation, seed)
    else:
        tr = make_longtailed_synthetic(ds.n_classes, ds.dim, ds.imbalance_factor, ds.n_max,
                                       ds.separation, seed)
    te = None
    if ds.test_per_class > 0:
        te = make_balanced_test(tr.n_classes, ds.dim, ds.test_per_class, ds.separation, seed)
    return tr, te


def _thresholds(run, profile):
    hi, lo = run.data.group_hi, run.data.group_lo
    if hi is None or lo is None:
        d_hi, d_lo = default_group_thresholds(max(profile.counts))
        hi = d_hi if hi is None else hi
        lo = d_lo if lo is None else lo
    return (hi, lo)


def _load_run(args):
    return load_config(args.config, args.set or ())


def cmd_train(args):
    run = _load_run(args)
    train_set, test_set = _datasets(run)
    run.train.thresholds = _thresholds(run, train_set.profile)
    os.makedirs(args.out, exist_ok=True)

    def progress(row):
        log.info("epoch %d lr %.4g loss %.4f", row["epoch"], row["lr"], row["total_loss"])

    result = train(run.train, train_set, test_set, callback=progress)
    ckpt = os.path.join(args.out, "checkpoint.rscm")
    metrics = os.path.join(args.out, "metrics.csv")
    manifest = os.path.join(args.out, "manifest.ini")
    tensors = result.network.state_dict()
    tensors["meta.class_counts"] = np.asarray(result.profile.counts, dtype=np.float32)
    tensors["meta.group_thresholds"] = np.asarray(run.train.thresholds, dtype=np.float32)
    save_checkpoint(ckpt, tensors)
    _emit(result.metrics_csv(), metrics)
    with open(manifest, "w", encoding="utf-8") as fh:
        fh.write(run.to_ini())
        fh.write("[manifest]\n")
        fh.write(f"seed = {run.train.seed}\n")
        fh.write(f"tool_version = {__version__}\n")
        fh.write("checkpoint = checkpoint.rscm\nmetrics = metrics.csv\n")
    last = result.log[-1]
    if "top1_all" in last:
        print(f"top1_all: {last['top1_all']:.6f}")
    print(f"wrote {ckpt}, {metrics}, {manifest}")
    return EXIT_OK


def _load_model(path):
    tensors = load_checkpoint(path)
    counts = tensors.get("meta.class_counts")
    if counts is None:
        raise CheckpointError(f"{path}: missing meta.class_counts")
    profile = LongTailProfile(tuple(int(c) for c in counts))
    thr = tensors.get("meta.group_thresholds")
    thresholds = tuple(float(t) for t in thr) if thr is not None else None
    return SiameseNetwork.from_state_dict(tensors), profile, thresholds


def cmd_eval(args):
    net, profile, thresholds = _load_model(args.checkpoint)
    if args.data:
        test = load_csv_dataset(args.data, net.n_classes)
    else:
        run = _load_run(args)
        _, test = _datasets(run)
        if test is None:
            raise UsageError("no test data: pass --data or configure a test set")
    report = evaluate(net, test, profile, thresholds)
    _emit(report.to_text(), args.out)
    if args.out:
        sys.stdout.write(report.to_text())
    return EXIT_OK


def cmd_profile_gradients(args):
    net, profile, _ = _load_model(args.checkpoint)
    run = _load_run(args)
    if args.data:
        train_set = load_csv_dataset(args.data, net.n_classes)
    else:
        train_set, _ = _datasets(run)
    cfg = run.train
    bank = ClassQueueBank(net.n_classes, net.embed_dim, cfg.queue_size, "balanced")
    warmup_bank(net, bank, train_set, cfg, _rng.stream(cfg.seed, "warmup"))
    rng = _rng.stream(cfg.seed, "test")
    idx = rng.permutation(len(train_set))[: args.queries]
    queries = net.embed(train_set.features[idx])
    rows = mean_gradient_norm_profile(queries, train_set.labels[idx], bank, cfg.contrastive, profile)
    _emit(gradient_profile_csv(rows), args.out)
    return EXIT_OK


def cmd_gen_data(args):
    ds = make_longtailed_synthetic(args.k, args.dim, args.imbalance, args.nmax, args.separation,
                                   args.seed)
    write_csv_dataset(ds, args.out)
    print(f"wrote {args.out} ({len(ds)} rows, counts {','.join(map(str, ds.profile.counts))})")
    if args.test_out:
        te = make_balanced_test(args.k, args.dim, args.test_per_class, args.separation, args.seed)
        write_csv_dataset(te, args.test_out)
        print(f"wrote {args.test_out} ({len(te)} rows)")
    return EXIT_OK


def _add_config_args(p):
    p.add_argument("--config", help="INI-style config file ([section] key = value)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config key (section.key=value or key=value); repeatable")


def build_parser():
    parser = argparse.ArgumentParser(prog="rescom", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"rescom {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="Monte-Carlo pair-frequency simulation")
    p.add_argument("--counts", help="comma-separated class counts (overrides --k/--if/--nmax)")
    p.add_argument("--k", type=int, help="number of classes")
    p.add_argument("--if", dest="imbalance", type=float, help="imbalance factor N_max/N_min")
    p.add_argument("--nmax", type=int, help="largest class count")
    p.add_argument("--batch", type=int, default=128, help="batch size (default 128)")
    p.add_argument("--epochs", type=int, default=200, help="counted epochs (default 200)")
    p.add_argument("--queue", choices=POLICIES, default="original", help="queue policy")
    p.add_argument("--queue-size", type=int, default=1024, help="total queue size (default 1024)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="pair-frequency CSV path; expected pairs go to <out>.expected.csv")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("grad-check", help="randomized finite-difference gradient checks")
    p.add_argument("--instances", type=int, default=200, help="instances per loss (default 200)")
    p.add_argument("--network-instances", type=int, default=20,
                   help="end-to-end network instances (default 20)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tolerance", type=float, default=None,
                   help="override every tolerance (defaults: 1e-4 losses, 1e-3 network)")
    p.set_defaults(func=cmd_grad_check)

    p = sub.add_parser("train", help="train a model and write checkpoint, metrics and manifest")
    _add_config_args(p)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    _add_config_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", help="test CSV (default: the configured synthetic test set)")
    p.add_argument("--out", help="write the report here as well as stdout")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("profile-gradients", help="per-key gradient norms against a warm balanced queue")
    _add_config_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", help="training CSV used to fill the queue (default: configured data)")
    p.add_argument("--queries", type=int, default=200, help="number of averaged queries")
    p.add_argument("--out", help="CSV path (default stdout)")
    p.set_defaults(func=cmd_profile_gradients)

    p = sub.add_parser("gen-data", help="write a synthetic long-tailed dataset as CSV")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--if", dest="imbalance", type=float, default=100.0)
    p.add_argument("--nmax", type=int, default=500)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--separation", type=float, default=3.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--test-out", help="also write a balanced test set here")
    p.add_argument("--test-per-class", type=int, default=100)
    p.set_defaults(func=cmd_gen_data)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"rescom {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, DatasetError, CheckpointError, ValueError, RuntimeError) as exc:
        print(f"rescom {args.command}: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
