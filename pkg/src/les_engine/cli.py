"""Command-line front end.

Exit codes: 0 ok, 1 check failed, 2 ingestion error, 3 stats/table error,
4 bad target, 5 params error.
"""

import argparse
import csv
import io
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import cdan, diagnostics, injector
from ._io import atomic_write, dumps, fmt
from .au import NEUTRAL, au_position, load_catalog_file, parse_au_csv, write_au_csv
from .errors import (
    BadTarget,
    CatalogFileNotFound,
    LesError,
    SchemaMismatch,
    StatsIncomplete,
)
from .space import decompose, reconstruct
from .stats import DatasetStats, FeatureTable, build_feature_table, fit_stats, outlier_matrix
from .synthetic import make_corpus, write_corpus

logger = logging.getLogger("les_engine")


def _seed(args, default=0):
    if getattr(args, "seed", None) is not None:
        return args.seed
    env = os.environ.get("LES_SEED")
    return int(env) if env not in (None, "") else default


def _read(path, missing_exc):
    try:
        return Path(path).read_bytes()
    except FileNotFoundError:
        raise missing_exc(f"file not found: {path}") from None


def _load_stats(path):
    return DatasetStats.from_json(_read(path, StatsIncomplete))


def _load_table(path):
    return FeatureTable.from_json(_read(path, StatsIncomplete))


def _load_params(path):
    return cdan.load_params(_read(path, SchemaMismatch))


def _load_corpus(stats, manifest):
    """Reconstruct every labeled frame of a manifest; returns vectors and class labels."""
    vectors, labels = [], []
    for seq in load_catalog_file(manifest):
        emotion = seq.emotion or NEUTRAL
        W = reconstruct(seq.matrix(), stats, emotion)
        vectors.append(W)
        labels.extend([f"{emotion}_level_{seq.level or 1}"] * len(seq))
    if not vectors:
        raise StatsIncomplete("manifest lists no frames")
    return np.concatenate(vectors), labels


# -- commands -------------------------------------------------------------------------

def cmd_fit(args):
    catalog = load_catalog_file(args.manifest)
    stats = fit_stats(catalog, opt2_mode=args.opt2_mode)
    table = build_feature_table(catalog, stats)
    for w in stats.warnings:
        print(f"warning: {w}", file=sys.stderr)
    atomic_write(args.out_stats, stats.to_json())
    atomic_write(args.out_table, table.to_json())
    return 0


def _target(args):
    if args.prior_trace is not None:
        return None
    if args.emo is not None:
        if args.level is None:
            raise BadTarget("--emo requires --level")
        return injector.EmotionLevel(args.emo, args.level)
    if args.au is not None:
        if args.bias is None:
            raise BadTarget("--au requires --bias")
        try:
            pos = au_position(args.au)
        except ValueError as exc:
            raise BadTarget(str(exc)) from None
        return injector.AuBias(pos, args.bias)
    raise BadTarget("give --emo/--level, --au/--bias or --prior-trace")


def cmd_inject(args):
    target = _target(args)
    stats = _load_stats(args.stats)
    table = _load_table(args.table)
    try:
        raw = Path(args.input).read_bytes()
    except FileNotFoundError:
        raise CatalogFileNotFound(args.input) from None
    seq = parse_au_csv(raw, source=str(args.input))
    if args.source_emotion:
        seq.emotion = args.source_emotion
    if target is None:
        trace = _read(args.prior_trace, BadTarget).decode("utf-8")
        u_inj, v_target = injector.control_from_trace(trace)
        out, results = injector.apply_control(seq, stats, u_inj, v_target)
    else:
        out, results = injector.inject_sequence(seq, stats, table, target)
    if out.clamp_count:
        print(f"note: {out.clamp_count} output values clamped to [0, 5]", file=sys.stderr)
    atomic_write(args.out, write_au_csv(out))
    if args.trace:
        atomic_write(args.trace, injector.trace_to_jsonl(results))
    return 0


def cmd_diagnose_outliers(args):
    stats = _load_stats(args.stats)
    table = _load_table(args.table)
    om = outlier_matrix(table, z=args.z, n_override=args.n, stats=stats, confidence=args.confidence)
    atomic_write(args.out, om.to_csv())
    if args.summary:
        atomic_write(args.summary, dumps(om.summary(), indent=1) + "\n")
    s = om.summary()
    print(f"outliers: {s['outliers']}/{s['cells']} cells"
          + (f", threshold {s['threshold']:.4f}" if s["threshold"] is not None else ""))
    return 0


def cmd_diagnose_isolation(args):
    stats = _load_stats(args.stats)
    W, labels = _load_corpus(stats, args.manifest)
    _, V = decompose(W)
    rows = diagnostics.isolation_report(V, labels, n_pairs=args.pairs, seed=_seed(args))
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    cols = ["i", "j", "label_i", "label_j", "kind", "distance", "bound", "bound_ok"]
    writer.writerow(cols)
    for r in rows:
        writer.writerow([r["i"], r["j"], r["label_i"], r["label_j"], r["kind"],
                         fmt(r["distance"]), fmt(r["bound"]), str(r["bound_ok"]).lower()])
    atomic_write(args.out, out.getvalue())
    ok = sum(r["bound_ok"] for r in rows)
    print(f"isolation bound holds on {ok}/{len(rows)} pairs")
    return 0 if ok == len(rows) else 1


def cmd_diagnose_clustering(args):
    stats = _load_stats(args.stats)
    W, labels = _load_corpus(stats, args.manifest)
    U, V = decompose(W)
    points = U if args.space == "act" else V
    report = diagnostics.cluster(points, args.k, method=args.method, seed=_seed(args), labels=labels)
    atomic_write(args.out, dumps(report.to_dict(), indent=1) + "\n")
    print(f"{args.method} k={args.k}: silhouette {report.silhouette:.4f}")
    return 0


def cmd_cdan_init(args):
    config = cdan.CdanConfig(hidden=args.hidden, heads=args.heads,
                             activation=args.activation, combine_axis=args.combine_axis)
    params = cdan.init_params(_seed(args), config)
    atomic_write(args.out, cdan.save_params(params))
    return 0


def _vector(doc, key, length=None):
    if key not in doc:
        raise SchemaMismatch(f"input is missing {key!r}")
    return np.asarray(doc[key], dtype=np.float64)


def cmd_cdan_infer(args):
    params = _load_params(args.params)
    try:
        doc = json.loads(_read(args.input, SchemaMismatch))
    except json.JSONDecodeError as exc:
        raise SchemaMismatch(f"cannot parse inference input: {exc}") from None
    u, v, beta = _vector(doc, "u"), _vector(doc, "v"), _vector(doc, "beta")
    beta_prime = cdan.forward_level1(u, beta, params)
    beta_final = cdan.forward_level2(v, beta_prime, params)
    atomic_write(args.out, dumps({"beta_prime": beta_prime, "beta": beta_final}) + "\n")
    return 0


def cmd_cdan_gradcheck(args):
    params = _load_params(args.params)
    rng = np.random.default_rng(_seed(args))
    ds = cdan.linear_fixture(1, seed=int(rng.integers(2**31)))
    u, v, beta, target = ds[0]
    res = cdan.grad_check(params, u, v, beta, target, epsilon=args.epsilon, stage=args.stage,
                          n_samples=args.samples, seed=_seed(args))
    print(f"max_rel_err {res.max_rel_err:.3e} over {res.n_checked} entries "
          f"({res.n_kinks} skipped at ReLU kinks): {'pass' if res.passed else 'FAIL'}")
    return 0 if res.passed else 1


def cmd_cdan_train(args):
    params = _load_params(args.params)
    seed = _seed(args)
    if args.data:
        try:
            doc = json.loads(_read(args.data, SchemaMismatch))
        except json.JSONDecodeError as exc:
            raise SchemaMismatch(f"cannot parse training data: {exc}") from None
        dataset = {k: doc[k] for k in ("u", "v", "beta", "target")}
    else:
        dataset = cdan.linear_fixture(args.samples, seed=seed)
    trained, logs = cdan.train_toy(dataset, params, epochs=args.epochs, lr=args.lr, decay=args.decay,
                                   batch=args.batch, stage=args.stage, seed=seed)
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["stage", "epoch", "lr", "batch_loss_mean", "epoch_loss"])
    for log in logs:
        writer.writerow([log.stage, -1, "", "", fmt(log.initial_loss)])
        for e, (lr, bl, el) in enumerate(zip(log.lr, log.batch_loss_mean, log.epoch_loss)):
            writer.writerow([log.stage, e, fmt(lr), fmt(bl), fmt(el)])
    atomic_write(args.out, cdan.save_params(trained))
    atomic_write(args.loss_csv, out.getvalue())
    last = logs[-1]
    print(f"{last.stage}: mse {last.initial_loss:.6g} -> {last.epoch_loss[-1]:.6g}")
    return 0


def cmd_synth(args):
    catalog = make_corpus(seed=_seed(args), n_frames=args.frames, n_subjects=args.subjects)
    manifest = write_corpus(catalog, args.out_dir)
    print(manifest)
    return 0


# -- parser ------------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(prog="les", description="Linear emotion space engine for AU time series")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit dataset statistics and the feature table")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-stats", required=True)
    p.add_argument("--out-table", required=True)
    p.add_argument("--opt2-mode", choices=("literal", "centered"), default="literal")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("inject", help="inject an emotion level or an AU bias into an AU CSV")
    p.add_argument("--input", required=True)
    p.add_argument("--stats", required=True)
    p.add_argument("--table", required=True)
    p.add_argument("--emo")
    p.add_argument("--level", type=float)
    p.add_argument("--au", help="AU label, e.g. 12 or AU12")
    p.add_argument("--bias", type=float)
    p.add_argument("--prior-trace", help="reuse the control recorded in a previous trace")
    p.add_argument("--source-emotion", help="emotion of the input sequence (default neutral)")
    p.add_argument("--out", required=True)
    p.add_argument("--trace")
    p.set_defaults(func=cmd_inject)

    diag = sub.add_parser("diagnose", help="outlier, isolation and clustering reports")
    dsub = diag.add_subparsers(dest="report", required=True)
    p = dsub.add_parser("outliers")
    p.add_argument("--stats", required=True)
    p.add_argument("--table", required=True)
    p.add_argument("--z", type=float)
    p.add_argument("--confidence", type=float)
    p.add_argument("--n", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--summary")
    p.set_defaults(func=cmd_diagnose_outliers)
    p = dsub.add_parser("isolation")
    p.add_argument("--stats", required=True)
    p.add_argument("--table")
    p.add_argument("--manifest", required=True)
    p.add_argument("--pairs", type=int, default=2000)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_diagnose_isolation)
    p = dsub.add_parser("clustering")
    p.add_argument("--stats", required=True)
    p.add_argument("--table")
    p.add_argument("--manifest", required=True)
    p.add_argument("--k", type=int, default=8)
    p.add_argument("--method", choices=("kmeans", "gmm"), default="kmeans")
    p.add_argument("--space", choices=("act", "iso"), default="act")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_diagnose_clustering)

    net = sub.add_parser("cdan", help="cross-dimension attention net utilities")
    nsub = net.add_subparsers(dest="action", required=True)
    p = nsub.add_parser("init")
    p.add_argument("--seed", type=int)
    p.add_argument("--hidden", type=int, default=128)
    p.add_argument("--heads", type=int, default=1)
    p.add_argument("--activation", choices=cdan.ACTIVATIONS, default="relu")
    p.add_argument("--combine-axis", choices=cdan.COMBINE_AXES, default="embedding")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_cdan_init)
    p = nsub.add_parser("infer")
    p.add_argument("--params", required=True)
    p.add_argument("--input", required=True, help='JSON object with "u", "v" and "beta"')
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_cdan_infer)
    p = nsub.add_parser("gradcheck")
    p.add_argument("--params", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--epsilon", type=float, default=3e-4)
    p.add_argument("--samples", type=int, default=200)
    p.add_argument("--stage", choices=cdan.STAGES, default="serial")
    p.set_defaults(func=cmd_cdan_gradcheck)
    p = nsub.add_parser("train-toy")
    p.add_argument("--params", required=True)
    p.add_argument("--data", help='JSON object with "u", "v", "beta", "target" arrays (default: linear fixture)')
    p.add_argument("--samples", type=int, default=200)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--decay", type=float, default=0.86)
    p.add_argument("--batch", type=int, default=10)
    p.add_argument("--stage", choices=("coarse", "fine", "two-step"), default="two-step")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--loss-csv", required=True)
    p.set_defaults(func=cmd_cdan_train)

    p = sub.add_parser("synth", help="write a seeded synthetic 8-emotion corpus")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--frames", type=int, default=20)
    p.add_argument("--subjects", type=int, default=3)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except LesError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
