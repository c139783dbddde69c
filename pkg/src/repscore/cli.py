"""``repscore`` command-line entry point.

Subcommands: ``metrics``, ``curves``, ``train``, ``compare``, ``saliency``
and ``replay``.  Each writes a JSON run manifest before any output, prints a
one-line JSON summary on stdout and human diagnostics on stderr.

Exit codes: 0 success, 2 input/parse error, 3 invariant violation,
4 evaluation impossible, 5 numerical failure.
"""

from __future__ import annotations

import argparse
import copy
import json
import os
import sys
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from . import __version__
from .errors import InputError, InvalidConfig, InvariantError, MissingCorrectness, RepscoreError
from .evaluation import (
    benchmark_to_csv,
    class_profiles,
    curves_svg,
    exact_sparsity,
    metric_benchmark,
    oriented_scores,
    pr_curve,
    profiles_to_matrices,
    roc_curve,
    sorted_feature_profile,
)
from .losses import LossConfig
from .metrics import DEFAULT_ETA, METRIC_NAMES, QualityReport, batch_quality_report
from .network import encode, load_params, save_params
from .repstore import (
    LabelSet,
    RepresentationMatrix,
    ensure_dir,
    file_digest,
    load_labels,
    load_matrix,
    save_labels,
    save_matrix,
)
from .saliency import dominant_feature_index, saliency_map
from .trainer import (
    AugmentConfig,
    TrainOptions,
    ab_compare,
    generate_dataset,
    stratified_split,
    train_encoder,
)

DEFAULT_SEED = 7

DEFAULT_CONFIG = {
    "dataset": {
        "k_classes": 8,
        "n_per_class": 64,
        "r": 64,
        "noise": 0.1,
        "blend": 2.0,
        "n_bumps": 3,
        "clutter_bumps": 6,
        "augment": {"noise_sigma": 0.1, "mask_fraction": 0.25, "scale_range": [0.8, 1.2]},
    },
    "train": {
        "lr": 0.05,
        "momentum": 0.9,
        "steps": 2000,
        "batch_size": 32,
        "hidden": [128],
        "rep_dim": 32,
        "proj_dim": 16,
        "column_scale": None,
    },
    "loss": LossConfig(lambda1=0.1, lambda2=0.1).to_dict(),
    "eval": {"test_fraction": 0.2, "eps_zero": 0.0},
    "pretrain_steps": 0,
}


# the baseline arm of `compare` is unregularized unless its config says otherwise
BASELINE_CONFIG = {**DEFAULT_CONFIG, "loss": LossConfig().to_dict()}


class CliError(RepscoreError):
    def __init__(self, message, exit_code):
        super().__init__(message)
        self.exit_code = exit_code


def _merge(base, override, path=""):
    out = copy.deepcopy(base)
    for key, value in override.items():
        if key not in base and key != "seed":
            raise InvalidConfig(f"unknown config key {path + key!r}")
        if isinstance(value, dict) and isinstance(base.get(key), dict) and key != "loss":
            out[key] = _merge(base[key], value, path + key + ".")
        elif key == "loss":
            out[key] = {**base[key], **value}
        else:
            out[key] = value
    return out


def load_run_config(path, defaults=DEFAULT_CONFIG):
    if path is None:
        return copy.deepcopy(defaults)
    try:
        with open(path) as fh:
            user = json.load(fh)
    except OSError as exc:
        raise CliError(f"cannot read config {path}: {exc}", 2) from exc
    except json.JSONDecodeError as exc:
        raise CliError(f"config {path} is not valid JSON: {exc}", 2) from exc
    if not isinstance(user, dict):
        raise InvalidConfig("config must be a JSON object")
    return _merge(defaults, user)


def _resolve_seed(args, config):
    if args.seed is not None:
        return args.seed
    return int(config.get("seed", DEFAULT_SEED))


def build_dataset(config, seed):
    d = dict(config["dataset"])
    aug = d.pop("augment")
    try:
        augment = AugmentConfig(aug["noise_sigma"], aug["mask_fraction"], tuple(aug["scale_range"]))
        return generate_dataset(seed=seed, augment=augment, **d)
    except (TypeError, KeyError) as exc:
        raise InvalidConfig(f"bad dataset config: {exc}") from exc


def build_options(config, seed):
    t = dict(config["train"])
    t["hidden"] = tuple(t["hidden"])
    return TrainOptions.from_dict({**t, "seed": seed})


class Manifest:
    """Run manifest; written before any output and rewritten as outputs appear."""

    def __init__(self, path, command, argv, config, seed, inputs=()):
        self.path = Path(path)
        self.data = {
            "command": command,
            "argv": list(argv),
            "config": config,
            "seed": seed,
            "inputs": {str(p): file_digest(p) for p in inputs if Path(p).is_file()},
            "version": __version__,
            "threads": os.environ.get("REPSCORE_THREADS"),
            "outputs": [],
        }
        self.write()

    def add(self, *paths):
        self.data["outputs"] += [str(p) for p in paths]
        self.write()

    def write(self):
        ensure_dir(self.path.parent)
        with open(self.path, "w") as fh:
            json.dump(self.data, fh, indent=2, sort_keys=True)
            fh.write("\n")


def _info(msg):
    print(msg, file=sys.stderr)


def _summary(payload):
    print(json.dumps(payload, sort_keys=True))


# -- commands ---------------------------------------------------------------

def cmd_metrics(args, argv):
    out = Path(args.out)
    manifest = Manifest(out.with_name(out.name + ".manifest.json"), "metrics", argv,
                        {"eta": args.eta, "format": args.format}, None, [args.reps])
    m = load_matrix(args.reps, args.format)
    report = batch_quality_report(m, args.eta)
    report.to_csv(out)
    manifest.add(out)
    n_flagged = int((~report.valid).sum())
    _info(f"wrote {len(report)} rows ({n_flagged} flagged) to {out}")
    _summary({"command": "metrics", "rows": len(report), "flagged": n_flagged, "out": str(out)})
    return 0


def _read_report(path):
    try:
        return QualityReport.from_csv(path)
    except OSError as exc:
        raise CliError(f"cannot read report {path}: {exc}", 2) from exc


def cmd_curves(args, argv):
    out = ensure_dir(args.out)
    manifest = Manifest(out / "manifest.json", "curves", argv, {"metric": args.metric}, None,
                        [args.report, args.labels])
    report = _read_report(args.report)
    labels = load_labels(args.labels)
    if labels.n_samples != len(report):
        raise CliError(f"{labels.n_samples} labels for {len(report)} report rows", 2)
    if labels.correctness is None:
        raise MissingCorrectness("labels file needs a predicted_label column")
    correct = labels.correctness
    names = METRIC_NAMES if args.metric == "all" else (args.metric,)
    keep = report.valid
    rows = metric_benchmark(report, correct, names)
    roc, pr = {}, {}
    for name in names:
        s = oriented_scores(report, name)[keep]
        roc[name] = roc_curve(s, correct[keep])
        pr[name] = pr_curve(s, correct[keep])
        roc[name].to_csv(out / f"roc_{name}.csv")
        pr[name].to_csv(out / f"pr_{name}.csv")
        manifest.add(out / f"roc_{name}.csv", out / f"pr_{name}.csv")
    curves_svg(roc, out / "roc.svg", title="ROC")
    curves_svg(pr, out / "pr.svg", title="Precision-Recall")
    benchmark_to_csv(rows, out / "benchmark.csv")
    auc = {r.metric: {"auroc": r.auroc, "auprc": r.auprc, "orientation": r.orientation} for r in rows}
    payload = {"metrics": auc, "n_samples": rows[0].n_samples, "prevalence": rows[0].prevalence,
               "excluded_flagged_rows": int((~keep).sum())}
    with open(out / "auc.json", "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    manifest.add(out / "roc.svg", out / "pr.svg", out / "benchmark.csv", out / "auc.json")
    _summary({"command": "curves", **{k: v["auroc"] for k, v in auc.items()}, "out": str(out)})
    return 0


def cmd_train(args, argv):
    config = load_run_config(args.config)
    seed = _resolve_seed(args, config)
    if not args.regularized:
        config["loss"] = {**config["loss"], "lambda1": 0.0, "lambda2": 0.0}
    cfg = LossConfig.from_dict(config["loss"])
    opt = build_options(config, seed)
    out = ensure_dir(args.out)
    manifest = Manifest(out / "manifest.json", "train", argv, config, seed,
                        [args.config] if args.config else [])
    dataset = build_dataset(config, seed)
    save_matrix(RepresentationMatrix(dataset.samples), out / "dataset.repb")
    save_labels(LabelSet(dataset.class_labels), out / "labels.csv")
    cfg.to_json(out / "loss_config.json")
    manifest.add(out / "dataset.repb", out / "labels.csv", out / "loss_config.json")
    split = stratified_split(dataset.class_labels, config["eval"]["test_fraction"], seed=seed)
    params, history = train_encoder(dataset.subset(split[0]), cfg, opt)
    save_params(params, out / "params")
    history.to_csv(out / "history.csv")
    H, _ = encode(params, dataset.samples)
    save_matrix(RepresentationMatrix(H), out / "representations.repb")
    manifest.add(out / "params", out / "history.csv", out / "representations.repb")
    c = history.column("contrastive")
    _info(f"trained {opt.steps} steps; contrastive {c[0] if c.size else float('nan'):.4f} -> "
          f"{c[-1] if c.size else float('nan'):.4f}")
    _summary({"command": "train", "steps": opt.steps, "regularized": cfg.regularized,
              "initial_contrastive": float(c[0]) if c.size else None,
              "final_contrastive": float(c[-1]) if c.size else None, "out": str(out)})
    return 0


def _write_arm(arm, directory, eps_zero, class_labels):
    directory = ensure_dir(directory)
    written = []
    save_params(arm.params, directory / "params")
    arm.history.to_csv(directory / "history.csv")
    arm.report.to_csv(directory / "quality_report.csv")
    save_matrix(RepresentationMatrix(arm.H), directory / "representations.repb")
    sp = exact_sparsity(arm.H, eps_zero)
    np.savetxt(directory / "sparsity.csv", sp, fmt="%.17g", header="exact_sparsity", comments="")
    written += ["params", "history.csv", "quality_report.csv", "representations.repb", "sparsity.csv"]
    # held-out rows with probe predictions, ready for `repscore curves`
    test = arm.test_idx
    arm.report.subset(test).to_csv(directory / "test_quality_report.csv")
    save_labels(LabelSet(class_labels[test], predicted_labels=arm.predictions[test],
                         sample_ids=arm.report.sample_ids[test]),
                directory / "test_labels.csv")
    written += ["test_quality_report.csv", "test_labels.csv"]
    profiles = arm.profiles
    for which in ("correct", "incorrect"):
        mat = profiles_to_matrices(profiles, which)
        np.savetxt(directory / f"class_profiles_{which}.csv", mat, delimiter=",", fmt="%.17g")
        written.append(f"class_profiles_{which}.csv")
    sorted_mat, ids, acc = sorted_feature_profile(profiles)
    np.savetxt(directory / "sorted_feature_profile.csv", sorted_mat, delimiter=",", fmt="%.17g")
    with open(directory / "class_order.csv", "w") as fh:
        fh.write("class_id,accuracy\n")
        for k, a in zip(ids, acc):
            fh.write(f"{k},{a!r}\n")
    written += ["sorted_feature_profile.csv", "class_order.csv"]
    q = arm.report.q_score[arm.test_idx]
    valid = np.isfinite(q)
    c = arm.correctness[valid]
    if c.any() and not c.all():
        roc_curve(q[valid], c).to_csv(directory / "roc_q_score.csv")
        pr_curve(q[valid], c).to_csv(directory / "pr_q_score.csv")
        written += ["roc_q_score.csv", "pr_q_score.csv"]
    return [directory / w for w in written]


def cmd_compare(args, argv):
    base_config = load_run_config(args.config_base, BASELINE_CONFIG)
    reg_config = load_run_config(args.config_reg)
    seed = _resolve_seed(args, base_config)
    cfg_base = LossConfig.from_dict(base_config["loss"])
    cfg_reg = LossConfig.from_dict(reg_config["loss"])
    opt = build_options(base_config, seed)
    pretrain = args.pretrain_steps if args.pretrain_steps is not None else int(base_config["pretrain_steps"])
    out = ensure_dir(args.out)
    manifest = Manifest(out / "manifest.json", "compare", argv,
                        {"base": base_config, "reg": reg_config, "pretrain_steps": pretrain}, seed,
                        [p for p in (args.config_base, args.config_reg) if p])
    dataset = build_dataset(base_config, seed)
    comparison = ab_compare(dataset, cfg_base, cfg_reg, opt, pretrain_steps=pretrain,
                            test_fraction=base_config["eval"]["test_fraction"])
    eps_zero = base_config["eval"]["eps_zero"]
    for arm in (comparison.base, comparison.reg):
        manifest.add(*_write_arm(arm, out / arm.name, eps_zero, dataset.class_labels))
    summary = comparison.summary()
    summary["note"] = ("AUROC/AUPRC of the Q-Score are reported for both arms; "
                       "a drop under regularization is expected, not asserted")
    with open(out / "comparison.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    manifest.add(out / "comparison.json")
    b, r = comparison.base, comparison.reg
    _info(f"accuracy {b.accuracy:.3f} -> {r.accuracy:.3f}; sparsity {b.mean_sparsity:.3f} -> "
          f"{r.mean_sparsity:.3f}; Q-Score AUPRC {b.q_auprc:.3f} -> {r.q_auprc:.3f}")
    _summary({"command": "compare", "baseline_accuracy": b.accuracy, "regularized_accuracy": r.accuracy,
              "baseline_auprc": b.q_auprc, "regularized_auprc": r.q_auprc,
              "baseline_sparsity": b.mean_sparsity, "regularized_sparsity": r.mean_sparsity,
              "out": str(out)})
    return 0


def cmd_saliency(args, argv):
    out = ensure_dir(args.out)
    inputs = [args.dataset, Path(args.params) / "params.json"] + ([args.labels] if args.labels else [])
    manifest = Manifest(out / "manifest.json", "saliency", argv,
                        {"sample": args.sample, "feature": args.feature, "dominant": args.dominant}, None,
                        inputs)
    params = load_params(args.params)
    data = load_matrix(args.dataset)
    if data.n_features != params.input_dim:
        raise InvariantError(f"dataset has {data.n_features} inputs, encoder expects {params.input_dim}")
    samples = args.sample
    for s in samples:
        if not (0 <= s < data.n_samples):
            raise InvariantError(f"sample {s} out of range for {data.n_samples} samples")
    results = []
    for s in samples:
        if args.dominant:
            if not args.labels:
                raise CliError("--dominant needs --labels", 2)
            labels = load_labels(args.labels)
            labels.check_aligned(data)
            H, _ = encode(params, data.data)
            if labels.correctness is None:
                labels = LabelSet(labels.class_labels, predicted_labels=labels.class_labels,
                                  sample_ids=labels.sample_ids)
            profiles = class_profiles(RepresentationMatrix(H), labels)
            cls = labels.class_labels[s]
            profile = next(p for p in profiles if p.class_id == cls)
            k = dominant_feature_index(profile)
        else:
            k = args.feature
        smap = saliency_map(params, data.data[s], k, sample_id=s)
        paths = smap.save(out)
        manifest.add(*paths)
        results.append({"sample": s, "feature": k, "files": [str(p) for p in paths]})
    _summary({"command": "saliency", "maps": results})
    return 0


def cmd_replay(args, argv):
    try:
        with open(args.manifest) as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot read manifest {args.manifest}: {exc}", 2) from exc
    return main(data["argv"])


def build_parser():
    parser = argparse.ArgumentParser(prog="repscore", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"repscore {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("metrics", help="per-sample quality metrics of a representation matrix")
    p.add_argument("reps", help="representation matrix (.csv or .repb)")
    p.add_argument("--eta", type=float, default=DEFAULT_ETA, help="soft-sparsity threshold")
    p.add_argument("--format", choices=("csv", "repb"), default=None, help="input format (default: suffix)")
    p.add_argument("--out", required=True, help="quality report CSV to write")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("curves", help="ROC / PR curves and AUCs of report metrics against correctness")
    p.add_argument("report", help="quality report CSV from `repscore metrics`")
    p.add_argument("labels", help="labels CSV with sample_id,class_label,predicted_label")
    p.add_argument("--metric", choices=("all",) + METRIC_NAMES, default="all")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_curves)

    p = sub.add_parser("train", help="train the toy contrastive encoder")
    p.add_argument("--config", help="JSON run config (defaults to the built-in toy config)")
    p.add_argument("--regularized", default=True, action=argparse.BooleanOptionalAction,
                   help="apply the Q-Score and column regularizers (default on)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("compare", help="baseline vs regularized training from one initialisation")
    p.add_argument("--config-base", help="JSON run config of the baseline arm (default loss: lambda1=lambda2=0)")
    p.add_argument("--config-reg", help="JSON run config of the regularized arm (default loss: lambda1=lambda2=0.1)")
    p.add_argument("--pretrain-steps", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("saliency", help="input-gradient heatmaps of representation features")
    p.add_argument("--params", required=True, help="params directory written by `repscore train`")
    p.add_argument("--dataset", required=True, help="input matrix (.repb or .csv)")
    p.add_argument("--sample", type=int, nargs="+", required=True, help="row index(es) in the dataset")
    which = p.add_mutually_exclusive_group(required=True)
    which.add_argument("--feature", type=int, help="representation feature to differentiate")
    which.add_argument("--dominant", action="store_true",
                       help="use the sample class's dominant feature (needs --labels)")
    p.add_argument("--labels", help="labels CSV for --dominant")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_saliency)

    p = sub.add_parser("replay", help="re-run the command recorded in a manifest")
    p.add_argument("manifest")
    p.set_defaults(func=cmd_replay)
    return parser


def _thread_limit():
    n = os.environ.get("REPSCORE_THREADS")
    if not n:
        return nullcontext()
    from threadpoolctl import threadpool_limits

    try:
        return threadpool_limits(limits=max(1, int(n)))
    except ValueError:
        _info(f"ignoring non-integer REPSCORE_THREADS={n!r}")
        return nullcontext()


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    try:
        with _thread_limit():
            return args.func(args, argv)
    except RepscoreError as exc:
        _info(f"error: {exc}")
        if getattr(exc, "step", None) is not None:
            _info(f"step: {exc.step}")
        return exc.exit_code
    except (OSError, json.JSONDecodeError) as exc:
        _info(f"error: {exc}")
        return InputError.exit_code


if __name__ == "__main__":
    sys.exit(main())
