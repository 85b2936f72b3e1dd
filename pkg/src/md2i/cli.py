"""Command-line entry point: ``md2i {synth,train,impute,eval,gradcheck}``.

Every command writes plain files under ``--out``. Options can also come from
an INI file given with ``--config``: keys in a section named after the
command (or in ``[common]``) override the defaults, and flags given on the
command line override the file. Exit codes are 0 on success, 1 for usage or
configuration errors, 2 for data errors and 3 when verification fails.
"""
import argparse
import configparser
import csv
import json
import os
import sys

import numpy as np

from . import evaluation as ev
from .checkpoint import load_checkpoint, save_checkpoint
from .data import (MissingSpec, apply_missing, load_digit_base, load_tabular, save_tabular,
                   synth_blob_domains, synth_linear_tabular, synth_rotated_digits, synth_school_like)
from .errors import ConfigError, DimensionError, FormatError, Md2iError, ParameterError, ParseError
from .gradcheck import LOSSES, TOLERANCE, run_gradcheck
from .imputer import Generator
from .nn import SgdConfig
from .trainer import HyperParams, impute_dataset, train_md2i

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_VERIFY = 0, 1, 2, 3
COMMANDS = ("synth", "train", "impute", "eval", "gradcheck")
METHODS = ("md2i-s", "md2i-u", "B1", "B2", "B1-DI", "B2-DI")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _csv_list(cast):
    def parse(text):
        try:
            return [cast(x) for x in str(text).split(",") if x.strip() != ""]
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad list {text!r}") from None
    return parse


# ---------------------------------------------------------------------------
# parser


def _common(p):
    p.add_argument("--config", metavar="PATH", help="INI file with per-command sections")
    p.add_argument("--seed", type=int, default=0, help="run seed (default: %(default)s)")
    p.add_argument("--out", metavar="DIR", default="out", help="output directory (default: %(default)s)")


def _hyper(p):
    hp, sgd = HyperParams(), SgdConfig()
    g = p.add_argument_group("training hyperparameters")
    g.add_argument("--mode", choices=("supervised", "unsupervised"), default=hp.mode,
                   help="train the multi-task head too (default: %(default)s)")
    for name, text in (("lambda0", "weight of L_M"), ("lambda1", "weight of L_D"),
                       ("lambda2", "weight of L_C"), ("lambda3", "weight of L_mmd"),
                       ("sigma", "RBF kernel width"), ("rho0", "L1 penalty on W"),
                       ("rho_l2", "squared Frobenius penalty on W"),
                       ("convergence_tol", "relative improvement counted as progress")):
        g.add_argument("--" + name.replace("_", "-"), dest=name, type=float, default=getattr(hp, name),
                       help=f"{text} (default: %(default)s)")
    g.add_argument("--learning-rate", dest="learning_rate", type=float, default=sgd.learning_rate,
                   help="SGD step size (default: %(default)s)")
    g.add_argument("--momentum", type=float, default=sgd.momentum, help="SGD momentum (default: %(default)s)")
    g.add_argument("--batch-size", dest="batch_size", type=int, default=sgd.batch_size,
                   help="minibatch rows (default: %(default)s)")
    g.add_argument("--max-epochs", dest="max_epochs", type=int, default=hp.max_epochs,
                   help="epoch cap (default: %(default)s)")
    g.add_argument("--patience", type=int, default=hp.patience,
                   help="epochs without windowed improvement before stopping (default: %(default)s)")
    g.add_argument("--d-e", dest="d_e", type=int, default=None,
                   help="encoding width (default: floor(d / ln d), at least 2)")


def _missing(p):
    spec = MissingSpec("mcar_uniform")
    g = p.add_argument_group("missingness")
    g.add_argument("--missing", choices=("none", "mcar_uniform", "mcar_patch", "mar_rule"), default="none",
                   help="corruption applied to the generated data (default: %(default)s)")
    g.add_argument("--rate", type=float, default=spec.rate, help="MCAR entry rate (default: %(default)s)")
    g.add_argument("--patch", type=int, default=spec.side, help="MCAR square patch side (default: %(default)s)")
    g.add_argument("--threshold", type=float, default=spec.threshold,
                   help="MAR rule threshold t (default: %(default)s)")


def build_parser():
    parser = _Parser(prog="md2i", description=__doc__.splitlines()[0],
                     formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate domain files")
    _common(p)
    p.add_argument("--kind", choices=("digits", "tabular", "blobs", "school"), default="tabular",
                   help="dataset family (default: %(default)s)")
    p.add_argument("--angles", type=_csv_list(float), default=[0, 15, 30, 45, 60, 75],
                   help="rotation angles in degrees, one domain each (default: 0,15,30,45,60,75)")
    p.add_argument("--per-class", dest="per_class", type=int, default=100,
                   help="digit images per class (default: %(default)s)")
    p.add_argument("--base", metavar="PATH",
                   help="labelled base-image file for digits (default: the built-in 8x8 digits, upscaled)")
    p.add_argument("--n", type=int, default=500, help="rows for tabular/blobs (default: %(default)s)")
    p.add_argument("--d", type=int, default=8, help="columns for tabular/blobs (default: %(default)s)")
    p.add_argument("--domains", type=int, default=2, help="blob domains (default: %(default)s)")
    p.add_argument("--tasks", type=int, default=20, help="regression tasks for school (default: %(default)s)")
    _missing(p)

    p = sub.add_parser("train", help="train the imputer/encoder and write a checkpoint")
    _common(p)
    p.add_argument("--data", type=_csv_list(str), required=True, metavar="CSV[,CSV...]",
                   help="one file per domain")
    p.add_argument("--task-per-domain", dest="task_per_domain", action="store_true",
                   help="give each domain its own head task (default for regression targets)")
    _hyper(p)

    p = sub.add_parser("impute", help="fill missing entries with a trained generator")
    _common(p)
    p.add_argument("--checkpoint", required=True, metavar="PATH")
    p.add_argument("--data", required=True, metavar="CSV")
    p.add_argument("--truth", metavar="CSV",
                   help="complete dataset for the RMSE report (default: the input's own values when a mask file exists)")

    p = sub.add_parser("eval", help="run an evaluation protocol")
    _common(p)
    p.add_argument("--protocol", choices=("dg", "mtl"), default="dg", help="(default: %(default)s)")
    p.add_argument("--data", type=_csv_list(str), required=True, metavar="CSV[,CSV...]")
    p.add_argument("--methods", type=_csv_list(str), default=["md2i-s"],
                   help=f"comma list from {', '.join(METHODS)} (default: md2i-s)")
    p.add_argument("--repeats", type=int, default=1, help="(default: %(default)s)")
    p.add_argument("--held-out", dest="held_out", type=_csv_list(int), default=None,
                   help="domain indices to hold out (default: all)")
    p.add_argument("--split", type=float, default=0.5, help="train fraction per task (default: %(default)s)")
    p.add_argument("--downstream-epochs", dest="downstream_epochs", type=int, default=ev.DOWNSTREAM_EPOCHS,
                   help="epochs for downstream networks (default: %(default)s)")
    _hyper(p)

    p = sub.add_parser("gradcheck", help="compare analytic and finite-difference gradients")
    _common(p)
    p.add_argument("--tolerance", type=float, default=TOLERANCE, help="(default: %(default)s)")
    p.add_argument("--corrupt", choices=LOSSES, default=None,
                   help="scale one analytic gradient by 1.01 to exercise the failure path")
    return parser


# ---------------------------------------------------------------------------
# config files


def _subparser(parser, command):
    for action in parser._subparsers._group_actions:
        return action.choices[command]


def _apply_config(parser, argv):
    """Re-parse ``argv`` with defaults taken from the ``--config`` file."""
    args = parser.parse_args(argv)
    if not args.config:
        return args
    cp = configparser.ConfigParser(interpolation=None)
    try:
        with open(args.config) as fh:
            cp.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {args.config}: {exc.strerror}") from None
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    unknown = set(cp.sections()) - set(COMMANDS) - {"common"}
    if unknown:
        raise ConfigError(f"unknown config section(s): {', '.join(sorted(unknown))}")
    sp = _subparser(parser, args.command)
    actions = {a.dest: a for a in sp._actions if a.dest not in ("help", "config")}
    values = {}
    for section in ("common", args.command):
        if not cp.has_section(section):
            continue
        for key, raw in cp.items(section):
            dest = key.replace("-", "_")
            if dest not in actions:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
            act = actions[dest]
            try:
                if act.const is True and act.nargs == 0:
                    values[dest] = cp.getboolean(section, key)
                else:
                    values[dest] = act.type(raw) if act.type else raw
            except (ValueError, argparse.ArgumentTypeError) as exc:
                raise ConfigError(f"bad value for {key!r}: {exc}") from None
            if act.choices is not None and values[dest] not in act.choices:
                raise ConfigError(f"{key} must be one of {', '.join(map(str, act.choices))}")
    sp.set_defaults(**values)
    return parser.parse_args(argv)


def _hp(args):
    sgd = SgdConfig(args.learning_rate, args.momentum, args.batch_size)
    return HyperParams(lambda0=args.lambda0, lambda1=args.lambda1, lambda2=args.lambda2, lambda3=args.lambda3,
                       sigma=args.sigma, sgd=sgd, rho0=args.rho0, rho_l2=args.rho_l2,
                       max_epochs=args.max_epochs, patience=args.patience,
                       convergence_tol=args.convergence_tol, mode=args.mode, seed=args.seed, d_e=args.d_e)


# ---------------------------------------------------------------------------
# helpers


def _load_domains(paths):
    if not paths:
        raise ConfigError("no data files given")
    missing = [p for p in paths if not os.path.exists(p)]
    if missing:
        raise FileNotFoundError(missing[0])
    first = [load_tabular(p, domain_id=i) for i, p in enumerate(paths)]
    if len({ds.d for ds in first}) != 1:
        raise ConfigError("domain files disagree on the number of feature columns")
    if any(ds.y_kind == "class" for ds in first):
        k = max(ds.Y.shape[1] for ds in first if ds.y_kind == "class")
        return [load_tabular(p, n_classes=k, domain_id=i) for i, p in enumerate(paths)]
    return first


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _write_series(path, xs, ys):
    _write_rows(path, ("x", "y"), [(repr(x) if isinstance(x, float) else x, repr(float(y))) for x, y in zip(xs, ys)])


def _loss_curve(report):
    """Per-epoch total loss summed over domains."""
    totals = {}
    for rec in report.records:
        totals[rec["epoch"]] = totals.get(rec["epoch"], 0.0) + rec["total"]
    epochs = sorted(totals)
    return epochs, [totals[e] for e in epochs]


def _write_manifest(path, entries):
    with open(path, "w") as fh:
        for key in sorted(entries):
            fh.write(f"{key}={entries[key]}\n")


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args):
    rng_seed = args.seed
    if args.kind == "digits":
        if args.base:
            if not os.path.exists(args.base):
                raise FileNotFoundError(args.base)
            base = load_tabular(args.base)
            if base.y_kind != "class":
                raise ParseError("base file needs a class label column")
        else:
            base = load_digit_base(args.per_class, seed=rng_seed)
        domains = synth_rotated_digits(base, args.angles)
    elif args.kind == "tabular":
        domains = [synth_linear_tabular(args.n, args.d, seed=rng_seed)]
    elif args.kind == "blobs":
        domains = synth_blob_domains(args.n, args.d, seed=rng_seed, n_domains=args.domains)
    else:
        domains = synth_school_like(n_tasks=args.tasks, seed=rng_seed)
    if args.missing != "none":
        domains = [apply_missing(ds, MissingSpec(args.missing, side=args.patch, rate=args.rate,
                                                 threshold=args.threshold, seed=rng_seed * 1000 + i))
                   for i, ds in enumerate(domains)]
    paths = []
    for i, ds in enumerate(domains):
        path = os.path.join(args.out, f"domain_{i}.csv")
        save_tabular(ds, path)
        paths.append(path)
    for p in paths:
        print(p)
    return EXIT_OK


def cmd_train(args):
    hp = _hp(args)
    domains = _load_domains(args.data)
    if hp.supervised and any(ds.Y is None for ds in domains):
        raise ConfigError("supervised training needs a label column in every domain file")
    per_domain = args.task_per_domain or any(ds.y_kind == "regression" for ds in domains)
    tasks = list(range(len(domains))) if per_domain else [0] * len(domains)
    G, D, head, report = train_md2i(domains, hp, tasks if hp.supervised else None)
    arrays = {**G.named_params(), **D.named_params()}
    meta = {"d": G.d, "d_e": G.d_e, "mode": hp.mode, "seed": hp.seed, "domains": len(domains)}
    if hp.supervised:
        arrays["head.W"] = head.W
        meta["tasks"] = [[t.offset, t.width, t.kind, t.n_classes] for t in head.tasks]
        meta["task_of_domain"] = tasks
    save_checkpoint(os.path.join(args.out, "checkpoint.bin"), arrays, meta)
    report.write_csv(os.path.join(args.out, "report.csv"))
    _write_series(os.path.join(args.out, "plot_loss.csv"), *_loss_curve(report))
    manifest = {f"hp.{k}": v for k, v in hp.as_flat_dict().items()}
    manifest.update({f"data.{i}": p for i, p in enumerate(args.data)})
    manifest.update({"epochs": report.epochs, "stopped_early": report.stopped_early, "d": G.d, "d_e": G.d_e})
    _write_manifest(os.path.join(args.out, "manifest.txt"), manifest)
    print(f"trained {report.epochs} epochs on {len(domains)} domain(s); checkpoint in {args.out}")
    return EXIT_OK


def load_generator(path):
    arrays, meta = load_checkpoint(path)
    try:
        G = Generator.build(int(meta["d"]), np.random.default_rng(0), int(meta["d_e"]))
        G.load_named(arrays)
    except (KeyError, ValueError) as exc:
        raise FormatError(f"{path}: incomplete generator parameters ({exc})") from None
    return G, meta


def cmd_impute(args):
    for p in (args.checkpoint, args.data):
        if not os.path.exists(p):
            raise FileNotFoundError(p)
    G, _ = load_generator(args.checkpoint)
    ds = load_tabular(args.data)
    done = impute_dataset(G, ds, args.seed)
    save_tabular(done, os.path.join(args.out, "imputed.csv"))
    missing = ds.M == 0
    truth = None
    if args.truth:
        truth = load_tabular(args.truth).X
        if truth.shape != ds.X.shape:
            raise DimensionError("truth file shape differs from the input")
    elif os.path.exists(args.data + ".mask"):
        truth = ds.X
    n_missing = int(missing.sum())
    err = ev.rmse(done.X[missing], truth[missing]) if truth is not None and n_missing else float("nan")
    _write_rows(os.path.join(args.out, "impute_report.csv"), ("missing_entries", "rmse"),
                [(n_missing, repr(err))])
    print(f"imputed {n_missing} entries; rmse={err!r}")
    return EXIT_OK


def cmd_eval(args):
    hp = _hp(args)
    domains = _load_domains(args.data)
    unknown = [m for m in args.methods if m not in METHODS]
    if unknown:
        raise ConfigError(f"unknown method(s): {', '.join(unknown)}")
    if args.protocol == "dg" and any(ds.y_kind != "class" for ds in domains):
        raise ConfigError("the dg protocol needs class labels in every domain")
    if args.protocol == "mtl" and any(ds.y_kind != "regression" for ds in domains):
        raise ConfigError("the mtl protocol needs regression targets in every domain")
    plots = os.path.join(args.out, "plots")
    os.makedirs(plots, exist_ok=True)

    def save_curve(method, run, where, report):
        _write_series(os.path.join(plots, f"loss_{method}_run{run}_{where}.csv"), *_loss_curve(report))

    results = []
    for m in args.methods:
        if m.startswith("B"):
            res = ev.run_baseline(m, domains, hp, args.repeats, protocol=args.protocol, held_out=args.held_out,
                                  downstream_epochs=args.downstream_epochs, split=args.split)
        elif args.protocol == "dg":
            res = ev.run_dg_protocol(domains, hp, args.repeats, method=m, held_out=args.held_out,
                                     downstream_epochs=args.downstream_epochs, callback=save_curve)
        else:
            res = ev.run_mtl_protocol(domains, hp, args.repeats, split=args.split, method=m,
                                      downstream_epochs=args.downstream_epochs, callback=save_curve)
        results.append(res)
        by_where = {}
        for row in res.rows:
            by_where.setdefault(row["held_out_or_fold"], []).append(row["value"])
        keys = list(by_where)
        _write_series(os.path.join(plots, f"metric_{m}.csv"),
                      [k if args.protocol == "dg" else i for i, k in enumerate(keys)],
                      [np.mean(by_where[k]) for k in keys])
        print(f"{res.protocol}: {res.metric_name} mean={res.mean:.4f} std={res.std:.4f} over {res.n_runs} runs")
    path = os.path.join(args.out, "results.csv")
    for i, res in enumerate(results):
        res.write_csv(path, append=i > 0)
    ev.write_summary(results, os.path.join(args.out, "summary.csv"))
    return EXIT_OK


def cmd_gradcheck(args):
    results = run_gradcheck(args.seed, args.tolerance, corrupt=args.corrupt)
    lines = [(r.loss, repr(r.max_rel_error), "pass" if r.passed else "FAIL") for r in results]
    _write_rows(os.path.join(args.out, "gradcheck.csv"), ("loss", "max_rel_error", "status"), lines)
    for loss, err, status in lines:
        print(f"{loss:6s} max_rel_error={float(err):.3e} {status}")
    return EXIT_OK if all(r.passed for r in results) else EXIT_VERIFY


_HANDLERS = {"synth": cmd_synth, "train": cmd_train, "impute": cmd_impute, "eval": cmd_eval,
             "gradcheck": cmd_gradcheck}


def main(argv=None):
    parser = build_parser()
    try:
        args = _apply_config(parser, sys.argv[1:] if argv is None else argv)
        os.makedirs(args.out, exist_ok=True)
        return _HANDLERS[args.command](args)
    except UsageError as exc:
        print(f"md2i: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, ParameterError) as exc:
        print(f"md2i: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"md2i: data error: no such file {exc.filename or exc.args[0]}", file=sys.stderr)
        return EXIT_DATA
    except (ParseError, FormatError, DimensionError, Md2iError) as exc:
        print(f"md2i: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except json.JSONDecodeError as exc:
        print(f"md2i: data error: corrupt checkpoint manifest ({exc})", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
