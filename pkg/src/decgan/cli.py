"""Command-line entry point: ``decgan {surrogate,augment,experiment,gradcheck}``.

Configuration precedence is flags > ``--config`` file (flat ``key=value``
lines, keys named like the long flags) > built-in defaults.  ``DECGAN_SEED``
supplies the default seed.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import os
import sys
import time
from pathlib import Path

from . import __version__
from .cgan import CganConfig
from .classifier import ClassifierConfig
from .dataset import SurrogateSpec, generate_surrogate, load_csv, write_csv
from .evaluation import (
    EvaluationError,
    emit_report,
    monte_carlo,
    optimal_frequency,
    proportion_test,
    undefined_test,
)
from .nn_core import gradcheck_suite
from .pipeline import MODES, PipelineConfig, prepare, real_split

VARIANTS = ("de-cgan", "cgan", "baseline")
GRADCHECK_TOL = 1e-4


class StageError(RuntimeError):
    def __init__(self, stage, exc):
        self.stage = stage
        super().__init__(f"stage {stage!r} failed: {exc}")


def _default_seed():
    raw = os.environ.get("DECGAN_SEED")
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise SystemExit(f"decgan: DECGAN_SEED must be an integer, got {raw!r}")


# argument types ---------------------------------------------------------------


def _bounded(lo, hi, lo_open=False, hi_open=False, kind=float):
    def parse(text):
        try:
            v = kind(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"not a valid {kind.__name__}: {text!r}")
        if (v < lo or (lo_open and v == lo)) or (hi is not None and (v > hi or (hi_open and v == hi))):
            lb = "(" if lo_open else "["
            rb = ")" if hi_open else "]"
            raise argparse.ArgumentTypeError(f"{v} outside {lb}{lo}, {'inf' if hi is None else hi}{rb}")
        return v
    return parse


positive_int = _bounded(1, None, kind=int)
nonneg_int = _bounded(0, None, kind=int)
positive_float = _bounded(0.0, None, lo_open=True)
nonneg_float = _bounded(0.0, None)
probability = _bounded(0.0, 1.0)
open_fraction = _bounded(0.0, 1.0, lo_open=True, hi_open=True)


def int_list(text):
    try:
        out = tuple(int(w) for w in text.split(",") if w.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not out or min(out) < 1:
        raise argparse.ArgumentTypeError("widths must be positive integers")
    return out


def alpha_list(text):
    try:
        out = [float(w) for w in text.split(",") if w.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")
    if not out or min(out) < 0:
        raise argparse.ArgumentTypeError("alphas must be non-negative")
    return out


def variant_list(text):
    out = [v.strip() for v in text.split(",") if v.strip()]
    bad = [v for v in out if v not in VARIANTS]
    if bad or not out:
        raise argparse.ArgumentTypeError(f"variants must be drawn from {','.join(VARIANTS)}")
    return out


def optimal_criterion(text):
    if text == "perfect":
        return text
    if text.startswith("threshold="):
        _bounded(0.0, 1.0, lo_open=True)(text.split("=", 1)[1])
        return text
    raise argparse.ArgumentTypeError("expected 'perfect' or 'threshold=<t>'")


def optimal_threshold(text):
    """None for the perfect-accuracy criterion, else the accuracy threshold."""
    return None if text == "perfect" else float(text.split("=", 1)[1])


# parser -------------------------------------------------------------------


def _add_common(p):
    p.add_argument("--seed", type=nonneg_int, default=_default_seed())
    p.add_argument("--config", type=Path, help="flat key=value file of flag defaults")


def _add_hyperparameters(p):
    d = ClassifierConfig()
    g = p.add_argument_group("classifier")
    g.add_argument("--clf-hidden-layers", type=nonneg_int, default=d.hidden_layers)
    g.add_argument("--clf-hidden-width", type=positive_int, default=d.hidden_width)
    g.add_argument("--clf-dropout", type=_bounded(0.0, 1.0, hi_open=True), default=d.dropout)
    g.add_argument("--clf-max-epochs", type=positive_int, default=d.max_epochs)
    g.add_argument("--clf-patience", type=positive_int, default=d.patience)
    g.add_argument("--clf-min-delta", type=nonneg_float, default=d.min_delta)
    g.add_argument("--clf-val-fraction", type=open_fraction, default=d.val_fraction)
    g.add_argument("--clf-batch-size", type=positive_int, default=d.batch_size)
    g.add_argument("--clf-lr", type=positive_float, default=d.learning_rate)
    c = CganConfig()
    g = p.add_argument_group("cgan")
    g.add_argument("--latent-dim", type=positive_int, default=c.latent_dim)
    g.add_argument("--gen-hidden", type=int_list, default=c.generator_hidden)
    g.add_argument("--disc-hidden", type=int_list, default=c.discriminator_hidden)
    g.add_argument("--slope", type=nonneg_float, default=c.slope)
    g.add_argument("--d-lr", type=positive_float, default=c.discriminator_lr)
    g.add_argument("--g-lr", type=positive_float, default=c.generator_lr)
    g.add_argument("--gan-batch-size", type=positive_int, default=c.batch_size)
    g.add_argument("--gan-epochs", type=positive_int, default=c.epochs)
    g = p.add_argument_group("pipeline")
    g.add_argument("--repeats", type=positive_int, default=1)
    g.add_argument("--tau", type=_bounded(0.0, 1.0, lo_open=True), default=1.0)
    g.add_argument("--mode", choices=MODES, default=MODES[0])
    g.add_argument("--test-fraction", type=open_fraction, default=0.2)
    g.add_argument("--fallback", action="store_true",
                   help="train the CGAN on the full training split if nothing is mislabelled")


def build_parser():
    parser = argparse.ArgumentParser(prog="decgan", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    s = sub.add_parser("surrogate", help="write a synthetic stand-in dataset")
    d = SurrogateSpec()
    s.add_argument("--count", type=positive_int, default=d.count)
    s.add_argument("--center", type=float, default=d.center)
    s.add_argument("--half-width", type=positive_float, default=d.half_width)
    s.add_argument("--p-flip", type=probability, default=d.p_flip)
    s.add_argument("--p-keep", type=_bounded(0.0, 1.0, lo_open=True), default=d.p_keep)
    s.add_argument("--out", type=Path, required=True)
    _add_common(s)

    a = sub.add_parser("augment", help="run the augmentation pipeline once")
    a.add_argument("--data", type=Path, required=True)
    a.add_argument("--alpha", type=nonneg_float, default=0.10)
    a.add_argument("--out-dir", type=Path, required=True)
    _add_hyperparameters(a)
    _add_common(a)

    e = sub.add_parser("experiment", help="Monte Carlo comparison of variants over an alpha sweep")
    e.add_argument("--data", type=Path, required=True)
    e.add_argument("--alphas", type=alpha_list, default=[0.05, 0.10, 0.15, 0.20])
    e.add_argument("--variants", type=variant_list, default=list(VARIANTS))
    e.add_argument("--runs", type=positive_int, default=200)
    e.add_argument("--optimal", type=optimal_criterion, default="perfect",
                   help="'perfect' (accuracy 1.0, default) or 'threshold=<t>'")
    e.add_argument("--jobs", type=positive_int, default=1)
    e.add_argument("--out-dir", type=Path, required=True)
    _add_hyperparameters(e)
    _add_common(e)

    g = sub.add_parser("gradcheck", help="finite-difference check of backprop on random networks")
    g.add_argument("--nets", type=positive_int, default=100)
    g.add_argument("--h", type=positive_float, default=1e-5)
    _add_common(g)
    return parser


def read_config_file(path) -> list[str]:
    """Translate ``key=value`` lines into flags to be placed before the real ones."""
    flags = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise SystemExit(f"decgan: {path}:{lineno}: expected key=value")
        key, value = (t.strip() for t in line.split("=", 1))
        flag = "--" + key.replace("_", "-")
        if value.lower() in ("true", "false"):
            if value.lower() == "true":
                flags.append(flag)
        else:
            flags += [flag, value]
    return flags


def _expand_config(argv):
    argv = list(argv)
    for i, tok in enumerate(argv):
        if tok == "--config" and i + 1 < len(argv):
            path = argv[i + 1]
        elif tok.startswith("--config="):
            path = tok.split("=", 1)[1]
        else:
            continue
        if not Path(path).is_file():
            raise SystemExit(f"decgan: config file not found: {path}")
        # argv[0] is the subcommand; later flags win in argparse
        return argv[:1] + read_config_file(path) + argv[1:]
    return argv


# config assembly -------------------------------------------------------------


def classifier_config(args) -> ClassifierConfig:
    return ClassifierConfig(
        hidden_layers=args.clf_hidden_layers, hidden_width=args.clf_hidden_width,
        dropout=args.clf_dropout, max_epochs=args.clf_max_epochs, patience=args.clf_patience,
        min_delta=args.clf_min_delta, val_fraction=args.clf_val_fraction,
        batch_size=args.clf_batch_size, learning_rate=args.clf_lr, seed=args.seed)


def cgan_config(args) -> CganConfig:
    return CganConfig(
        latent_dim=args.latent_dim, generator_hidden=args.gen_hidden,
        discriminator_hidden=args.disc_hidden, slope=args.slope, discriminator_lr=args.d_lr,
        generator_lr=args.g_lr, batch_size=args.gan_batch_size, epochs=args.gan_epochs,
        seed=args.seed)


def pipeline_config(args, alpha, cgan_source="mislabelled") -> PipelineConfig:
    return PipelineConfig(
        alpha=alpha, classifier=classifier_config(args), cgan=cgan_config(args),
        repeats=args.repeats, tau=args.tau, mode=args.mode, seed=args.seed,
        test_fraction=args.test_fraction, fallback=args.fallback, cgan_source=cgan_source)


def _jsonable(v):
    if isinstance(v, Path):
        return str(v)
    if isinstance(v, tuple):
        return list(v)
    return v


def _timestamp():
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    t = int(epoch) if epoch else time.time()
    return _dt.datetime.fromtimestamp(t, _dt.timezone.utc).isoformat()


def _digest(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(path, args, argv, inputs=()):
    resolved = {k: _jsonable(v) for k, v in sorted(vars(args).items()) if k != "config"}
    doc = {
        "command": args.command,
        "argv": list(argv),
        "replay": ["decgan", args.command] + _replay_flags(resolved),
        "config": resolved,
        "seed": args.seed,
        "inputs": {str(p): _digest(p) for p in inputs},
        "version": __version__,
        "timestamp": _timestamp(),
    }
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def _replay_flags(resolved):
    flags = []
    for k, v in resolved.items():
        if k == "command" or v is None:
            continue
        flag = "--" + k.replace("_", "-")
        if isinstance(v, bool):
            if v:
                flags.append(flag)
        elif isinstance(v, list):
            flags += [flag, ",".join(str(x) for x in v)]
        else:
            flags += [flag, str(v)]
    return flags


# commands ------------------------------------------------------------------


def _stage(name, fn, *a, **kw):
    try:
        return fn(*a, **kw)
    except (ValueError, RuntimeError, OSError) as exc:
        raise StageError(name, exc) from exc


def cmd_surrogate(args, argv):
    spec = SurrogateSpec(count=args.count, seed=args.seed, center=args.center,
                         half_width=args.half_width, p_flip=args.p_flip, p_keep=args.p_keep)
    data = generate_surrogate(spec)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    write_csv(data, args.out)
    write_manifest(args.out.with_name(args.out.name + ".manifest.json"), args, argv)
    return 0


def _load(path):
    if not path.is_file():
        raise FileNotFoundError(f"data file not found: {path}")
    return load_csv(path)


def cmd_augment(args, argv):
    data = _stage("load", _load, args.data)
    config = pipeline_config(args, args.alpha)
    prepared = _stage("pipeline", prepare, data, config)
    hybrid = _stage("sample", prepared.hybrid, args.alpha)
    out = args.out_dir
    out.mkdir(parents=True, exist_ok=True)
    write_csv(hybrid.data, out / "hybrid.csv", provenance=True)
    write_csv(prepared.test, out / "test.csv")
    (out / "lineage.json").write_text(json.dumps(hybrid.lineage, indent=1, sort_keys=True) + "\n",
                                      encoding="utf-8")
    for i, clf in enumerate(prepared.classifiers):
        clf.save(out / f"classifier_{i}.json")
        clf.write_history(out / f"classifier_{i}_history.csv")
    if prepared.cgan is not None:
        prepared.cgan.save(out / "cgan.json")
    write_manifest(out / "manifest.json", args, argv, inputs=[args.data])
    return 0


def _model_name(variant, alpha=None):
    if variant == "baseline":
        return "Baseline"
    label = "DE-CGAN" if variant == "de-cgan" else "CGAN"
    return f"{label} (alpha={alpha:.2f})"


def cmd_experiment(args, argv):
    data = _stage("load", _load, args.data)
    clf = classifier_config(args)
    reports = []
    lineages = {}
    baseline = None
    train, test = _stage("split", real_split, data, pipeline_config(args, 0.0))

    if "baseline" in args.variants:
        baseline = _stage("monte-carlo", monte_carlo, train, test, clf, args.runs, args.seed,
                          _model_name("baseline"), args.jobs)
        reports.append(baseline)
    for variant in ("de-cgan", "cgan"):
        if variant not in args.variants:
            continue
        source = "mislabelled" if variant == "de-cgan" else "full"
        config = pipeline_config(args, max(args.alphas), cgan_source=source)
        prepared = _stage(f"{variant} pipeline", prepare, data, config, args.alphas)
        for alpha in args.alphas:
            hybrid = _stage(f"{variant} sample", prepared.hybrid, alpha)
            name = _model_name(variant, alpha)
            lineages[name] = {k: v for k, v in hybrid.lineage.items()
                              if k not in ("train_rows", "test_rows")}
            reports.append(_stage("monte-carlo", monte_carlo, hybrid, prepared.test, clf,
                                  args.runs, args.seed, name, args.jobs))

    threshold = optimal_threshold(args.optimal)
    tests = []
    if baseline is not None:
        ref = optimal_frequency(baseline, threshold)
        for r in reports:
            if r is baseline:
                continue
            k = optimal_frequency(r, threshold)
            try:
                tests.append(proportion_test(k, ref, args.runs, model=r.model))
            except EvaluationError:
                tests.append(undefined_test(r.model, k, ref, args.runs))
    _stage("report", emit_report, reports, tests, args.out_dir, threshold,
           extra={"lineage": lineages})
    write_manifest(args.out_dir / "manifest.json", args, argv, inputs=[args.data])
    return 0


def cmd_gradcheck(args, argv):
    start = time.perf_counter()
    errors = gradcheck_suite(args.nets, args.seed, args.h)
    worst = max(errors)
    print(f"max relative error {worst:.3e} over {args.nets} networks "
          f"({time.perf_counter() - start:.1f} s)")
    return 0 if worst < GRADCHECK_TOL else 1


COMMANDS = {"surrogate": cmd_surrogate, "augment": cmd_augment,
            "experiment": cmd_experiment, "gradcheck": cmd_gradcheck}


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(_expand_config(argv))
    try:
        return COMMANDS[args.command](args, argv)
    except StageError as exc:
        print(f"decgan {args.command}: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print(f"decgan {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
