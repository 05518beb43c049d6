"""Command-line driver: ``extract``, ``eval``, ``decompose`` and ``sweep``.

Every run writes ``manifest.json`` in its output directory, also when it
fails (with the failing stage and message). Exit codes: 0 success,
1 numeric failure, 2 invalid input, 3 I/O or file-format error.
"""

import argparse
import csv
import dataclasses
import json
import os
import sys
import time

import numpy as np
import scipy.sparse as sp

from . import backend, data_io
from .attention import TrainConfig, predict, train, write_alpha_csv, write_loss_csv
from .classifier import svm_predict, svm_train
from .convnet import NETS, NetConfig
from .errors import FormatError, InvalidArgument, NumericFailure
from .filter_bank import AMALGAMATED, MINUTIAE
from .lomoi import LomoiConfig, lomoi, write_diagnostics_csv
from .pipeline import FeatureExtractor, combine, feature_layout

EXIT_OK, EXIT_NUMERIC, EXIT_INVALID, EXIT_IO = 0, 1, 2, 3
ATTN_DIMS = (10, 50, 100, 150, 200, 400)

NET_KEYS = {f.name for f in dataclasses.fields(NetConfig)}
TRAIN_KEYS = {f.name for f in dataclasses.fields(TrainConfig)} - {"seed"}
RUN_DEFAULTS = {
    "n_train": None,
    "n_test": None,
    "reg": 1e-4,
    "svm_solver": "dcd",
    "svm_epochs": 10,
    "svm_batch": 128,
    "standardize": False,
    "attn_dim": 50,
    "synth_classes": 2,
}


def parse_value(text):
    """``none``, booleans, ints, floats, comma tuples; anything else stays a string."""
    text = text.strip()
    low = text.lower()
    if low in ("none", "null", ""):
        return None
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    if "," in text:
        return tuple(parse_value(t) for t in text.split(",") if t.strip())
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def read_config(path):
    """Flat ``key = value`` file; ``#`` starts a comment."""
    out = {}
    if not path:
        return out
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise InvalidArgument(f"{path}:{lineno}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in NET_KEYS | TRAIN_KEYS | set(RUN_DEFAULTS):
                raise InvalidArgument(f"{path}:{lineno}: unknown key {key!r}")
            out[key] = parse_value(value)
    return out


def config_values(args):
    """Config file values with ``--set key=value`` overrides applied on top."""
    values = read_config(getattr(args, "config", None))
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise InvalidArgument(f"--set expects key=value, got {item!r}")
        key, value = (t.strip() for t in item.split("=", 1))
        if key not in NET_KEYS | TRAIN_KEYS | set(RUN_DEFAULTS):
            raise InvalidArgument(f"--set: unknown key {key!r}")
        values[key] = parse_value(value)
    return values


@dataclasses.dataclass
class RunConfig:
    net: NetConfig
    train: TrainConfig
    run: dict

    def snapshot(self):
        return {
            "net": dataclasses.asdict(self.net),
            "train": dataclasses.asdict(self.train),
            "run": dict(self.run),
        }


def build_config(values, seed):
    net_kw = {k: v for k, v in values.items() if k in NET_KEYS}
    for key in ("block", "ranks1", "ranks2", "spp_levels"):
        if key in net_kw and net_kw[key] is not None and not isinstance(net_kw[key], tuple):
            net_kw[key] = (net_kw[key],) * (2 if key == "block" else 1)
    train_kw = {k: v for k, v in values.items() if k in TRAIN_KEYS}
    run = dict(RUN_DEFAULTS)
    run.update({k: v for k, v in values.items() if k in RUN_DEFAULTS})
    try:
        return RunConfig(NetConfig(**net_kw), TrainConfig(seed=seed, **train_kw), run)
    except TypeError as exc:
        raise InvalidArgument(str(exc)) from exc


class Run:
    """Tracks stage, timings, artifacts and metrics; writes the manifest."""

    def __init__(self, out, command, argv):
        self.out = out
        os.makedirs(out, exist_ok=True)
        self.manifest = {
            "command": command,
            "argv": list(argv),
            "backend": backend.NAME,
            "status": "running",
            "stage": "setup",
            "config": None,
            "datasets": {},
            "timings": {},
            "artifacts": [],
            "metrics": [],
        }
        self._t = time.perf_counter()

    def stage(self, name):
        now = time.perf_counter()
        prev = self.manifest["stage"]
        self.manifest["timings"][prev] = self.manifest["timings"].get(prev, 0.0) + now - self._t
        self._t = now
        self.manifest["stage"] = name

    def path(self, *parts):
        p = os.path.join(self.out, *parts)
        os.makedirs(os.path.dirname(p), exist_ok=True)
        self.manifest["artifacts"].append(os.path.relpath(p, self.out))
        return p

    def metric(self, **row):
        self.manifest["metrics"].append(row)

    def finish(self, status, error=None):
        self.stage(self.manifest["stage"])
        self.manifest["status"] = status
        if error is not None:
            self.manifest["error"] = f"{type(error).__name__}: {error}"
        with open(os.path.join(self.out, "manifest.json"), "w") as fh:
            json.dump(self.manifest, fh, indent=2, sort_keys=True, default=_jsonable)


def _jsonable(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return str(obj)


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _load(args, cfg_values, run):
    run.stage("load")
    train, test = data_io.load_dataset(
        args.dataset,
        args.data_dir,
        cfg_values.get("n_train"),
        cfg_values.get("n_test"),
        seed=args.seed,
        synth_classes=cfg_values.get("synth_classes") or 2,
    )
    for split in (train, test):
        run.manifest["datasets"][split.split] = {
            "name": split.name,
            "count": len(split),
            "sha256": split.checksum,
            "warnings": split.warnings[:20],
        }
    return train, test


def extract(args, run, train=None, test=None, out_dir="features", keep=False):
    """Fit banks on the training split and write per-view containers.

    With ``keep`` the encoded features are also returned for evaluation.
    """
    values = config_values(args)
    cfg = build_config(values, args.seed)
    if train is None:
        train, test = _load(args, values, run)
    cfg.net = cfg.net.updated(channels=train.images.shape[1])
    run.manifest["config"] = cfg.snapshot()
    net = args.net
    run.stage("fit")
    fx = FeatureExtractor(cfg.net, net).fit(train.images)
    run.stage("encode")
    layout, total = feature_layout(cfg.net, net, train.images.shape[2:])
    bins, filters, blocks = layout
    print(f"blocks per response B = {blocks}")
    print(f"feature dims ({net}) = {len(NETS[net])} x {blocks} x {filters} x {bins} = {total}")
    run.manifest["feature_dims"] = {"total": total, "blocks": blocks, "layout": list(layout)}
    raw_train = fx.transform_raw(train.images)
    fx.fit_reduction(raw_train)
    feats = {"train": fx.reduce(raw_train)}
    del raw_train
    # each split is written before the next is encoded to bound peak memory
    for split, data in (("train", train), ("test", test)):
        if split not in feats:
            run.stage("encode")
            feats[split] = fx.transform(test.images)
        run.stage("write")
        for view, x in feats[split].items():
            path = run.path(out_dir, f"{split}_{view}.hnf")
            if sp.issparse(x):
                data_io.write_sparse_features(path, x, data.labels, layout, view)
            else:
                data_io.write_features(path, x, data.labels, (x.shape[1], filters, 0), "reduced")
        if not keep:
            feats[split] = None
    for view in fx.views:
        for layer in (1, 2):
            bank = fx.banks.banks[view][layer - 1]
            data_io.save_bank(run.path("banks", f"{view}_layer{layer}.hnf"), bank)

    diag = fx.diagnostics()
    rows = [(1, i, v) for i, v in enumerate(diag.layer1_spectrum)]
    rows += [(2, i, v) for i, v in enumerate(diag.layer2_spectrum)]
    _write_csv(run.path("diagnostics", "eigen_spectrum.csv"), ["layer", "index", "eigenvalue"], rows)
    if MINUTIAE in fx.views:
        for layer in (1, 2):
            result = fx.banks.banks[MINUTIAE][layer - 1].decomposition
            write_diagnostics_csv(result, run.path("diagnostics", f"core_norm_layer{layer}.csv"))
    run.manifest["diagnostics"] = {
        "layer2_leading_eigenvalue": diag.leading_eigenvalue,
        "layer2_core_norm": diag.core_norm,
        "patch_counts": list(diag.patch_counts),
    }
    return cfg, feats, train.labels, test.labels


def _error_pct(pred, labels):
    return float(100.0 * np.mean(pred != labels))


def _fit_svm(cfg, x_train, y_train, n_classes=None):
    r = cfg.run
    return svm_train(x_train, y_train, reg=r["reg"], epochs=r["svm_epochs"], seed=cfg.train.seed,
                     batch_size=r["svm_batch"], standardize=r["standardize"], solver=r["svm_solver"],
                     n_classes=n_classes)


def _report_svm(run, net, model, x_test, y_train, y_test):
    err = _error_pct(svm_predict(model, x_test), y_test)
    data_io.save_linear_model(run.path("models", f"svm_{net}.hnf"), model)
    run.metric(variant=net, classifier="svm", n_train=len(y_train), n_test=len(y_test), error_pct=err)
    print(f"{net} + svm: test error {err:.3f}%")
    return err


def _svm(cfg, x_train, y_train, x_test, y_test):
    model = _fit_svm(cfg, x_train, y_train, n_classes=int(max(y_train.max(), y_test.max())) + 1)
    return model, _error_pct(svm_predict(model, x_test), y_test)


def _read_split(directory, split):
    feats, labels = {}, None
    for view in (AMALGAMATED, MINUTIAE):
        path = os.path.join(directory, f"{split}_{view}.hnf")
        if os.path.exists(path):
            c = data_io.read_features(path)
            if c.labels is None:
                raise InvalidArgument(f"{path} has no labels")
            if labels is not None and not np.array_equal(labels, c.labels):
                raise InvalidArgument(f"label mismatch between views in {directory}")
            feats[view], labels = c.values, c.labels
    if not feats:
        raise FileNotFoundError(f"no {split} feature containers in {directory}")
    return feats, labels


def _net_of(views):
    return "hybrid" if len(views) == 2 else ("pcanet" if AMALGAMATED in views else "tfnet")


def _check_splits(train, test):
    """``train``/``test`` map view to column count."""
    if set(train) != set(test):
        raise InvalidArgument("train and test containers cover different views")
    for view in train:
        if train[view] != test[view]:
            raise InvalidArgument(f"train/test dimension mismatch for view {view}")


def _dims(views):
    return {v: x.shape[1] for v, x in views.items()}


def _read_features_dir(directory):
    train, y_train = _read_split(directory, "train")
    test, y_test = _read_split(directory, "test")
    _check_splits(_dims(train), _dims(test))
    return _net_of(train), {"train": train, "test": test}, y_train, y_test


def _attn_dims(arg, default):
    if arg is None:
        return [default]
    if arg == "grid":
        return list(ATTN_DIMS)
    return [int(t) for t in str(arg).split(",")]


def evaluate(args, run):
    values = config_values(args)
    if args.features and args.classifier == "svm":
        # train and test features are never resident together
        cfg = build_config(values, args.seed)
        run.manifest["config"] = cfg.snapshot()
        run.stage("read")
        train_views, y_train = _read_split(args.features, "train")
        net, train_dims = _net_of(train_views), _dims(train_views)
        present = {v for v in (AMALGAMATED, MINUTIAE) if os.path.exists(os.path.join(args.features, f"test_{v}.hnf"))}
        if present != set(train_views):
            raise InvalidArgument("train and test containers cover different views")
        x_train = combine(train_views, net)
        del train_views
        run.stage("train")
        model = _fit_svm(cfg, x_train, y_train)
        del x_train
        run.stage("read")
        test_views, y_test = _read_split(args.features, "test")
        _check_splits(train_dims, _dims(test_views))
        _report_svm(run, net, model, combine(test_views, net), y_train, y_test)
        _write_metrics(run)
        return
    if args.features:
        cfg = build_config(values, args.seed)
        run.manifest["config"] = cfg.snapshot()
        run.stage("read")
        net, feats, y_train, y_test = _read_features_dir(args.features)
    else:
        if not args.dataset:
            raise InvalidArgument("eval needs --features or --dataset")
        cfg, feats, y_train, y_test = extract(args, run, keep=True)
        net = args.net
    run.stage("train")
    if args.classifier == "svm":
        model = _fit_svm(cfg, combine(feats["train"], net), y_train)
        _report_svm(run, net, model, combine(feats["test"], net), y_train, y_test)
    else:
        if net != "hybrid":
            raise InvalidArgument("attention fusion needs both views (net = hybrid)")
        pca_tr, tf_tr = feats["train"][AMALGAMATED], feats["train"][MINUTIAE]
        pca_te, tf_te = feats["test"][AMALGAMATED], feats["test"][MINUTIAE]
        sweep_rows = []
        dims = _attn_dims(args.attn_dim, cfg.run["attn_dim"])
        for d in dims:
            result = train(pca_tr, tf_tr, y_train, d=d, cfg=cfg.train,
                           n_classes=int(max(y_train.max(), y_test.max())) + 1)
            pred, alphas = predict(result.model, pca_te, tf_te)
            err = _error_pct(pred, y_test)
            tag = f"d{d}"
            write_loss_csv(result, run.path("diagnostics", f"loss_{tag}.csv"))
            write_alpha_csv(alphas, y_test, pred, run.path("diagnostics", f"alpha_{tag}.csv"))
            data_io.save_attention_model(run.path("models", f"attn_{tag}.hnf"), result.model)
            run.metric(variant="attn-hybrid", classifier="attn", attn_dim=d, n_train=len(y_train),
                       n_test=len(y_test), error_pct=err, epochs=result.epochs)
            sweep_rows.append((d, err, result.epochs))
            print(f"attn-hybrid (d={d}): test error {err:.3f}%")
        if len(dims) > 1:
            _write_csv(run.path("diagnostics", "attn_dim_sweep.csv"), ["attn_dim", "error_pct", "epochs"], sweep_rows)
    _write_metrics(run)


def _write_metrics(run):
    _write_csv(run.path("metrics.csv"), ["variant", "classifier", "n_train", "n_test", "error_pct"],
               [(m["variant"], m["classifier"], m["n_train"], m["n_test"], m["error_pct"])
                for m in run.manifest["metrics"]])


def decompose(args, run):
    run.stage("read")
    x = np.load(args.tensor, allow_pickle=False)
    if not args.ranks:
        raise InvalidArgument("decompose needs --ranks")
    ranks = tuple(int(r) for r in args.ranks.split(","))
    cfg = LomoiConfig(ranks, excluded_mode=args.excluded_mode, tolerance=args.tolerance,
                      max_iter=args.max_iter)
    run.manifest["config"] = {"ranks": ranks, "excluded_mode": args.excluded_mode,
                              "tolerance": args.tolerance, "max_iter": args.max_iter, "shape": x.shape}
    run.stage("decompose")
    result = lomoi(x, cfg)
    run.stage("write")
    write_diagnostics_csv(result, run.path("core_norm.csv"))
    np.savez(run.path("factors.npz"), core=result.core,
             **{f"factor{k}": f for k, f in zip(result.modes, result.factors)})
    run.metric(loss=result.loss, core_norm=result.core_norm_history[-1], sweeps=result.sweeps)
    print(f"loss {result.loss:.6e} after {result.sweeps} sweeps; core norm {result.core_norm_history[-1]:.6e}")


def sweep(args, run):
    """Training-size study: refit filters and classifier per fraction."""
    values = config_values(args)
    cfg = build_config(values, args.seed)
    train_all, test = _load(args, values, run)
    cfg.net = cfg.net.updated(channels=train_all.images.shape[1])
    run.manifest["config"] = cfg.snapshot()
    fracs = [float(f) for f in (args.train_frac or "0.1,0.25,0.5,1.0").split(",")]
    if any(not 0 < f <= 1 for f in fracs):
        raise InvalidArgument("train fractions must lie in (0, 1]")
    nets = args.net.split(",") if args.net != "all" else list(NETS)
    rows = []
    for frac in fracs:
        n = max(2, int(round(frac * len(train_all))))
        sub = train_all.subset(np.arange(n))
        for net in nets:
            run.stage(f"frac{frac}:{net}")
            fx = FeatureExtractor(cfg.net, net)
            x_tr = combine(fx.fit_transform(sub.images), net)
            x_te = combine(fx.transform(test.images), net)
            _, err = _svm(cfg, x_tr, sub.labels, x_te, test.labels)
            rows.append((net, frac, n, err, 100.0 - err))
            run.metric(variant=net, classifier="svm", train_frac=frac, n_train=n, error_pct=err)
            print(f"frac {frac:.2f} ({n} images) {net}: error {err:.3f}%")
    _write_csv(run.path("sweep.csv"), ["net", "train_frac", "n_train", "error_pct", "accuracy_pct"], rows)


def build_parser():
    p = argparse.ArgumentParser(prog="hybridnet", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp_):
        sp_.add_argument("--out", required=True, help="output directory")
        sp_.add_argument("--seed", type=int, default=0)
        sp_.add_argument("--config", help="key = value configuration file")
        sp_.add_argument("--set", action="append", metavar="KEY=VALUE",
                         help="override one configuration key (repeatable)")

    def data(sp_):
        sp_.add_argument("--dataset", choices=data_io.DATASETS)
        sp_.add_argument("--data-dir", help="directory holding the dataset files")

    e = sub.add_parser("extract", help="learn filters and write feature containers")
    common(e)
    data(e)
    e.add_argument("--net", choices=sorted(NETS), default="hybrid")

    v = sub.add_parser("eval", help="train a classifier and report test error")
    common(v)
    data(v)
    v.add_argument("--net", choices=sorted(NETS), default="hybrid")
    v.add_argument("--features", help="directory written by 'extract' (features/)")
    v.add_argument("--classifier", choices=("svm", "attn"), default="svm")
    v.add_argument("--attn-dim", help="context dimension, comma list, or 'grid'")

    d = sub.add_parser("decompose", help="LoMOI on a tensor stored as .npy")
    common(d)
    d.add_argument("--tensor", required=True)
    d.add_argument("--ranks", required=True, help="comma-separated ranks of the factored modes")
    d.add_argument("--excluded-mode", type=int, default=None)
    d.add_argument("--tolerance", type=float, default=None)
    d.add_argument("--max-iter", type=int, default=50)

    s = sub.add_parser("sweep", help="error versus training-set size")
    common(s)
    data(s)
    s.add_argument("--net", default="all", help="comma list of nets, or 'all'")
    s.add_argument("--train-frac", help="comma list of fractions in (0, 1]")
    return p


COMMANDS = {"extract": extract, "eval": evaluate, "decompose": decompose, "sweep": sweep}


def main(argv=None):
    argv = sys.argv[1:] if argv is None else argv
    args = build_parser().parse_args(argv)
    if args.command in ("extract", "sweep") and not args.dataset:
        print("error: --dataset is required", file=sys.stderr)
        return EXIT_INVALID
    run = Run(args.out, args.command, argv)
    try:
        COMMANDS[args.command](args, run)
    except (NumericFailure, FormatError, OSError, ValueError) as exc:
        if isinstance(exc, NumericFailure):
            code = EXIT_NUMERIC
        elif isinstance(exc, (FormatError, OSError)):
            code = EXIT_IO
        else:
            code = EXIT_INVALID
        print(f"error in stage {run.manifest['stage']!r}: {exc}", file=sys.stderr)
        run.finish("failed", exc)
        return code
    run.finish("ok")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
