"""Command-line entry point.

Subcommands cover the whole workflow: `gen-data` writes a synthetic corpus,
`train --phase micro` fits the content disentangler per fold, `train --phase
full` fits the engagement stack on top of the frozen checkpoints, `eval`
scores the test folds, `ablate` and `sweep` drive the comparison modes, and
`gradcheck` verifies the autodiff core. Every command records a RunManifest
next to its artifacts and all file writes are atomic (write then rename).

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numeric fault.
"""

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import asdict, dataclass, field, fields

from .data import load_dataset, split_folds, write_dataset
from .errors import (
    ConfigurationError,
    ContractViolation,
    DataError,
    NumericFault,
)
from .gradcheck import layer_family_checks
from .metrics import MetricsReport, report_from_dict
from .params import load_checkpoint, save_checkpoint
from .pipeline import (
    MMHTModel,
    TrainConfig,
    VARIANTS,
    evaluate,
    phase1_kind,
    run_ablation,
    sensitivity_sweep,
    train_full,
    train_micro,
)
from .synth import SyntheticConfig, generate_synthetic

log = logging.getLogger("mmht")

GRADCHECK_TOL = 1e-4

# CLI sweep names follow the experiment's vocabulary; the right-hand side
# names the TrainConfig field actually swept.
SWEEP_NAMES = {"alpha1": "alpha1", "engagements": "max_users", "history": "max_hist"}

_PY_TYPES = {"int": int, "float": float, "str": str}


def _field_types(cls):
    out = {}
    for f in fields(cls):
        out[f.name] = _PY_TYPES.get(f.type, f.type) if isinstance(f.type, str) else f.type
    return out


TRAIN_KEYS = _field_types(TrainConfig)
SYNTH_KEYS = _field_types(SyntheticConfig)
PATH_KEYS = {"data_news": str, "data_engagements": str, "out": str}
EXTRA_KEYS = {"sweep": str, "verbosity": int}
KNOWN_KEYS = {**TRAIN_KEYS, **SYNTH_KEYS, **PATH_KEYS, **EXTRA_KEYS}


@dataclass
class CliConfig:
    """Fully resolved run configuration: file values overlaid by flags."""

    train: TrainConfig
    synth: SyntheticConfig
    data_news: str = ""
    data_engagements: str = ""
    out: str = "."
    sweep: str = ""
    verbosity: int = 0

    def as_flat_dict(self):
        flat = dict(asdict(self.train))
        flat.update(asdict(self.synth))
        flat.update(
            data_news=self.data_news,
            data_engagements=self.data_engagements,
            out=self.out,
            sweep=self.sweep,
            verbosity=self.verbosity,
        )
        return flat


def parse_config_file(path):
    """Flat `key = value` lines; `#` comments; unknown keys rejected."""
    values = {}
    try:
        with open(path, encoding="utf-8") as handle:
            lines = handle.read().splitlines()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config file {path}: {exc}") from exc
    for line_no, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key or not value:
            raise ConfigurationError(f"{path} line {line_no}: expected 'key = value'")
        if key not in KNOWN_KEYS:
            raise ConfigurationError(f"{path} line {line_no}: unknown key {key!r}")
        if key in values:
            raise ConfigurationError(f"{path} line {line_no}: duplicate key {key!r}")
        caster = KNOWN_KEYS[key]
        try:
            values[key] = caster(value)
        except ValueError as exc:
            raise ConfigurationError(
                f"{path} line {line_no}: {key} expects {caster.__name__}, got {value!r}"
            ) from exc
    return values


def resolve_config(args):
    """Merge config file and flags into a validated CliConfig."""
    values = parse_config_file(args.config) if args.config else {}
    for flag in ("out", "variant", "sweep", "data_news", "data_engagements"):
        flag_value = getattr(args, flag, None)
        if flag_value is not None:
            values[flag] = flag_value
    if getattr(args, "seed", None) is not None:
        values["seed"] = args.seed
    train = TrainConfig(**{k: v for k, v in values.items() if k in TRAIN_KEYS})
    train.validate()
    synth = SyntheticConfig(**{k: v for k, v in values.items() if k in SYNTH_KEYS})
    synth.validate()
    cfg = CliConfig(
        train=train,
        synth=synth,
        data_news=values.get("data_news", ""),
        data_engagements=values.get("data_engagements", ""),
        out=values.get("out", "."),
        sweep=values.get("sweep", ""),
        verbosity=values.get("verbosity", 0),
    )
    os.makedirs(cfg.out, exist_ok=True)
    logging.basicConfig(
        level={0: logging.WARNING, 1: logging.INFO}.get(cfg.verbosity, logging.DEBUG),
        format="%(levelname)s %(name)s: %(message)s",
    )
    return cfg


def fold_threads(config):
    """Fold parallelism: MMHT_THREADS caps it, fold count bounds it."""
    raw = os.environ.get("MMHT_THREADS", "1")
    try:
        requested = int(raw)
    except ValueError as exc:
        raise ConfigurationError(f"MMHT_THREADS must be an integer, got {raw!r}") from exc
    return max(1, min(requested, config.folds))


def _atomic_write(path, text):
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as handle:
        handle.write(text)
    os.replace(tmp, path)


def _sha256(path):
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


@dataclass
class RunManifest:
    """Record of one command run: enough to reproduce it bit for bit."""

    command: str
    config: dict
    input_hashes: dict = field(default_factory=dict)
    started: str = ""
    finished: str = ""
    durations: dict = field(default_factory=dict)
    artifacts: list = field(default_factory=list)

    def write(self, out_dir):
        path = os.path.join(out_dir, f"manifest_{self.command}.json")
        _atomic_write(path, json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")
        return path


class _Stages:
    """Context-manager factory timing named stages into a manifest."""

    def __init__(self, manifest):
        self.manifest = manifest

    def __call__(self, name):
        return _StageTimer(self.manifest, name)


class _StageTimer:
    def __init__(self, manifest, name):
        self.manifest, self.name = manifest, name

    def __enter__(self):
        self.t0 = time.perf_counter()

    def __exit__(self, *exc):
        self.manifest.durations[self.name] = round(time.perf_counter() - self.t0, 3)
        return False


def _iso_now():
    return time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime())


def _start_manifest(command, cfg, args):
    manifest = RunManifest(command=command, config=cfg.as_flat_dict(), started=_iso_now())
    if args.config:
        manifest.input_hashes[args.config] = _sha256(args.config)
    return manifest


def _require_data(cfg, manifest):
    if not cfg.data_news or not cfg.data_engagements:
        raise ConfigurationError("this command needs --data-news and --data-engagements")
    for path in (cfg.data_news, cfg.data_engagements):
        if not os.path.exists(path):
            raise DataError(f"dataset file not found: {path}")
        manifest.input_hashes[path] = _sha256(path)
    return load_dataset(cfg.data_news, cfg.data_engagements)


def _micro_ckpt_path(cfg, fold):
    kind = phase1_kind(cfg.train.variant)
    return os.path.join(cfg.out, f"micro_{kind}_f{fold}.ckpt")


def _full_ckpt_path(cfg, fold):
    return os.path.join(cfg.out, f"full_{cfg.train.variant}_f{fold}.ckpt")


def _load_micro(cfg, fold):
    path = _micro_ckpt_path(cfg, fold)
    if not os.path.exists(path):
        raise DataError(f"missing phase-1 checkpoint: {path}")
    store, meta = load_checkpoint(path)
    for key in ("d_model", "d_c"):
        if meta.get(key) != getattr(cfg.train, key):
            raise DataError(
                f"{path}: checkpoint {key}={meta.get(key)} does not match config "
                f"{key}={getattr(cfg.train, key)}"
            )
    return store.frozen(), meta


def _write_report(report, cfg, name):
    json_path = os.path.join(cfg.out, f"{name}.json")
    text_path = os.path.join(cfg.out, f"{name}.txt")
    _atomic_write(json_path, report.to_json() + "\n")
    _atomic_write(text_path, report.render_table() + "\n")
    return [json_path, text_path]


# -- subcommands ---------------------------------------------------------------


def cmd_gen_data(args):
    cfg = resolve_config(args)
    manifest = _start_manifest("gen-data", cfg, args)
    stage = _Stages(manifest)
    with stage("generate"):
        dataset = generate_synthetic(cfg.synth)
    news_path = os.path.join(cfg.out, "news.jsonl")
    eng_path = os.path.join(cfg.out, "engagements.jsonl")
    with stage("write"):
        write_dataset(dataset, news_path, eng_path)
    manifest.artifacts += [news_path, eng_path]
    manifest.finished = _iso_now()
    manifest.write(cfg.out)
    log.info("wrote %d news items, %d users", len(dataset.news), len(dataset.users))
    print(f"gen-data: {len(dataset.news)} news items -> {news_path}")
    return 0


def cmd_train(args):
    cfg = resolve_config(args)
    manifest = _start_manifest(f"train-{args.phase}", cfg, args)
    stage = _Stages(manifest)
    dataset = _require_data(cfg, manifest)
    splits = split_folds(dataset, k=cfg.train.folds, seed=cfg.train.seed)
    for split in splits:
        fold = split.fold_index
        if args.phase == "micro":
            with stage(f"micro_f{fold}"):
                result = train_micro(dataset, split.train, cfg.train, fold=fold)
            path = _micro_ckpt_path(cfg, fold)
            meta = {
                "kind": phase1_kind(cfg.train.variant),
                "fold": fold,
                "d_model": cfg.train.d_model,
                "d_c": cfg.train.d_c,
                "seed": cfg.train.seed,
                "trace": [round(v, 6) for v in result.trace],
            }
            save_checkpoint(path, result.params, meta)
        else:
            frozen, micro_meta = _load_micro(cfg, fold)
            with stage(f"full_f{fold}"):
                model = train_full(dataset, split, frozen, cfg.train,
                                   micro_trace=micro_meta.get("trace"))
            path = _full_ckpt_path(cfg, fold)
            meta = {
                "variant": cfg.train.variant,
                "fold": fold,
                "d_model": cfg.train.d_model,
                "d_c": cfg.train.d_c,
                "seed": cfg.train.seed,
                "trace": [round(v, 6) for v in model.trace],
            }
            save_checkpoint(path, model.trainable, meta)
        manifest.artifacts.append(path)
        log.info("fold %d: wrote %s", fold, path)
    manifest.finished = _iso_now()
    manifest.write(cfg.out)
    print(f"train --phase {args.phase}: {len(splits)} checkpoints in {cfg.out}")
    return 0


def cmd_eval(args):
    cfg = resolve_config(args)
    manifest = _start_manifest("eval", cfg, args)
    stage = _Stages(manifest)
    dataset = _require_data(cfg, manifest)
    splits = split_folds(dataset, k=cfg.train.folds, seed=cfg.train.seed)
    report = MetricsReport(label=cfg.train.variant)
    for split in splits:
        fold = split.fold_index
        frozen, _ = _load_micro(cfg, fold)
        full_path = _full_ckpt_path(cfg, fold)
        if not os.path.exists(full_path):
            raise DataError(f"missing phase-2 checkpoint: {full_path}")
        trainable, _ = load_checkpoint(full_path)
        model = MMHTModel(micro=frozen, trainable=trainable, config=cfg.train)
        with stage(f"eval_f{fold}"):
            for row in evaluate(model, dataset, split):
                report.add_row(row)
    manifest.artifacts += _write_report(report, cfg, f"report_{cfg.train.variant}")
    manifest.finished = _iso_now()
    manifest.write(cfg.out)
    print(report.render_table())
    return 0


def cmd_ablate(args):
    cfg = resolve_config(args)
    manifest = _start_manifest("ablate", cfg, args)
    stage = _Stages(manifest)
    dataset = _require_data(cfg, manifest)
    variants = [cfg.train.variant] if args.variant else list(VARIANTS)
    micro_cache = {}
    if args.variant:
        # Reuse phase-1 checkpoints for a single-variant run; they are the
        # expensive stage and are shared across several variants.
        splits = split_folds(dataset, k=cfg.train.folds, seed=cfg.train.seed)
        for split in splits:
            frozen, meta = _load_micro(cfg, split.fold_index)
            key = (phase1_kind(cfg.train.variant), split.fold_index,
                   cfg.train.alpha1, cfg.train.seed)
            micro_cache[key] = (frozen, meta.get("trace") or [])
    with stage("ablate"):
        reports = run_ablation(dataset, cfg.train, variants=variants,
                               micro_cache=micro_cache, threads=fold_threads(cfg.train))
    if args.variant and cfg.train.variant != "full":
        base_path = os.path.join(cfg.out, "report_full.json")
        if os.path.exists(base_path):
            with open(base_path, encoding="utf-8") as handle:
                base = report_from_dict(json.load(handle))
            reports[cfg.train.variant].compare_against(base)
    for variant, report in reports.items():
        manifest.artifacts += _write_report(report, cfg, f"report_{variant}")
        print(report.render_table())
    manifest.finished = _iso_now()
    manifest.write(cfg.out)
    return 0


def cmd_sweep(args):
    cfg = resolve_config(args)
    sweep_name = args.sweep or cfg.sweep
    if sweep_name not in SWEEP_NAMES:
        raise ConfigurationError(
            f"--sweep must be one of {sorted(SWEEP_NAMES)}, got {sweep_name!r}")
    manifest = _start_manifest(f"sweep-{sweep_name}", cfg, args)
    stage = _Stages(manifest)
    dataset = _require_data(cfg, manifest)
    with stage("sweep"):
        reports = sensitivity_sweep(dataset, cfg.train, SWEEP_NAMES[sweep_name],
                                    threads=fold_threads(cfg.train))
    doc = {str(value): report.to_dict() for value, report in reports.items()}
    json_path = os.path.join(cfg.out, f"sweep_{sweep_name}.json")
    _atomic_write(json_path, json.dumps(doc, indent=2, sort_keys=True) + "\n")
    manifest.artifacts.append(json_path)
    lines = [f"{'value':>10s}  {'mean F1':>8s}"]
    for value, report in reports.items():
        lines.append(f"{value!s:>10s}  {report.mean('overall', 'f1'):8.4f}")
    summary = "\n".join(lines)
    text_path = os.path.join(cfg.out, f"sweep_{sweep_name}.txt")
    _atomic_write(text_path, summary + "\n")
    manifest.artifacts.append(text_path)
    manifest.finished = _iso_now()
    manifest.write(cfg.out)
    print(summary)
    return 0


def cmd_gradcheck(args):
    cfg = resolve_config(args)
    manifest = _start_manifest("gradcheck", cfg, args)
    stage = _Stages(manifest)
    with stage("gradcheck"):
        checks = layer_family_checks(seed=cfg.train.seed)
    worst = max(checks.values())
    for family, err in checks.items():
        flag = "ok" if err < GRADCHECK_TOL else "FAIL"
        print(f"{family:12s} max rel err {err:.3e}  {flag}")
    manifest.finished = _iso_now()
    manifest.write(cfg.out)
    if worst >= GRADCHECK_TOL:
        raise NumericFault(f"gradient check failed: max relative error {worst:.3e}")
    return 0


# -- dispatch -------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(
        prog="mmht",
        description="Cross-domain fake news detection: data, training, evaluation.",
    )
    sub = parser.add_subparsers(dest="command", metavar="subcommand")

    def common(p, data=False):
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--out", help="output directory (default '.')")
        p.add_argument("--seed", type=int, help="master seed for all randomness")
        p.add_argument("--variant", choices=sorted(VARIANTS), help="model variant")
        if data:
            p.add_argument("--data-news", dest="data_news", help="news JSONL file")
            p.add_argument("--data-engagements", dest="data_engagements",
                           help="engagements JSONL file")

    common(sub.add_parser("gen-data", help="write a synthetic corpus"))
    p_train = sub.add_parser("train", help="train one phase across folds")
    common(p_train, data=True)
    p_train.add_argument("--phase", choices=("micro", "full"), required=True)
    common(sub.add_parser("eval", help="score test folds from checkpoints"), data=True)
    p_abl = sub.add_parser("ablate", help="run ablation variants")
    common(p_abl, data=True)
    common(sub.add_parser("gradcheck", help="finite-difference gradient check"))
    p_sweep = sub.add_parser("sweep", help="sensitivity sweep")
    common(p_sweep, data=True)
    p_sweep.add_argument("--sweep", choices=sorted(SWEEP_NAMES),
                         help="which parameter to sweep")
    return parser


HANDLERS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "sweep": cmd_sweep,
    "gradcheck": cmd_gradcheck,
}


def run_cli(argv):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse prints its own usage text; normalize the exit code.
        return 0 if exc.code == 0 else 1
    if not args.command:
        parser.print_usage(sys.stderr)
        return 1
    try:
        return HANDLERS[args.command](args)
    except (ConfigurationError, ContractViolation) as exc:
        print(f"mmht {args.command}: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"mmht {args.command}: {exc}", file=sys.stderr)
        return 2
    except NumericFault as exc:
        print(f"mmht {args.command}: {exc}", file=sys.stderr)
        return 3


def main():
    sys.exit(run_cli(sys.argv[1:]))


if __name__ == "__main__":
    main()
