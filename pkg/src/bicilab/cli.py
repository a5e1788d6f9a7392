"""Command-line front end: ``bicilab {encode,synth,train,eval,report}``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .ace import AceError, ace_analyse, write_egf
from .corpus import load_mono_16k, speech_shaped_noise, synthetic_speech
from .dsp import SampleBuffer, SignalError, write_wav
from .experiment import (
    SYNTHETIC,
    UNPROCESSED,
    ConfigError,
    EvalJob,
    ExperimentConfig,
    SourcePool,
    eval_jobs,
    evaluate_scene,
    load_config,
    scene_spec,
    split_train_val,
    training_examples,
)
from .metrics import MetricError, electrode_average, quartile_summary, write_plot_tsv, write_report_csv
from .model import ModelConfigError
from .model.training import TrainingDiverged, fit, load_model, save_model, write_history
from .runtime import NonFiniteError
from .runtime.dwt import WeightFileError
from .scene import SceneError, build_scene, scene_rngs

log = logging.getLogger("bicilab")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3
LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _seed(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="experiment config file (key = value, with sections)")
    common.add_argument("--seed", type=_seed, help="override the config seed")
    common.add_argument("--jobs", type=_positive, default=1, help="worker processes for scene-level work")
    common.add_argument("--out", type=Path, help="output directory")

    p = _Parser(prog="bicilab", description="Bilateral CI electrodogram coding and Deep ACE experiments")
    sub = p.add_subparsers(dest="verb", required=True, parser_class=_Parser)

    enc = sub.add_parser("encode", parents=[common], help="ACE-encode a WAV file to EGF")
    enc.add_argument("input", type=Path)
    enc.add_argument("output", type=Path)
    enc.add_argument("--side", choices=("left", "right", "mono"), default="mono")

    syn = sub.add_parser("synth", parents=[common], help="render scenes listed in a manifest")
    syn.add_argument("manifest", type=Path)

    tr = sub.add_parser("train", parents=[common], help="train a Deep ACE model")
    tr.add_argument("--resume", action="store_true", help="start from <out>/checkpoint if present")

    ev = sub.add_parser("eval", parents=[common], help="metric sweep over the SNR x azimuth grid")
    ev.add_argument("--weights", type=Path, nargs="*", default=[], help="trained models (path without suffix)")

    rep = sub.add_parser("report", parents=[common], help="summarise a metrics CSV")
    rep.add_argument("metrics", type=Path, nargs="?", help="metrics CSV (default <out>/metrics.csv)")
    return p


def _configure_logging() -> None:
    name = os.environ.get("BICILAB_LOG", "warn").strip().lower()
    level = LOG_LEVELS.get(name)
    logging.basicConfig(level=level or logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if level is None:
        log.warning("unknown BICILAB_LOG value %r; using warn", name)


def _out_dir(args, cfg: ExperimentConfig) -> Path:
    out = args.out or cfg.out
    out.mkdir(parents=True, exist_ok=True)
    return out


# -- encode -----------------------------------------------------------------------

def cmd_encode(args, cfg: ExperimentConfig) -> int:
    buf = load_mono_16k(args.input)
    res = ace_analyse(buf, cfg.pmap, cfg.lgf, cfg.table(), args.side)
    args.output.parent.mkdir(parents=True, exist_ok=True)
    write_egf(args.output, res.electrodogram)
    amps = res.electrodogram.amplitudes
    active = (amps > 0).sum(axis=1)
    print(f"frames={amps.shape[1]} electrodes={amps.shape[0]} csr={cfg.pmap.csr:g}")
    print("active frames per electrode: " + " ".join(f"{k + 1}:{int(n)}" for k, n in enumerate(active)))
    return EXIT_OK


# -- synth ------------------------------------------------------------------------

def parse_manifest(path: Path) -> list[tuple[int, list[str]]]:
    """Scene lines: ``name target noise target_az noise_az snr_db``; ``#`` starts a comment."""
    if not path.is_file():
        raise ConfigError(f"manifest {path} not found")
    lines = []
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        text = raw.split("#", 1)[0].strip()
        if not text:
            continue
        fields = text.split()
        if len(fields) != 6:
            raise ConfigError(f"{path}:{lineno}: expected 6 fields (name target noise target_az noise_az snr_db)")
        lines.append((lineno, fields))
    if not lines:
        raise ConfigError(f"manifest {path} lists no scenes")
    return lines


def _source(token: str, rng: np.random.Generator, seconds: float, kind: str) -> SampleBuffer:
    if token == SYNTHETIC:
        return synthetic_speech(rng, seconds) if kind == "target" else speech_shaped_noise(rng, seconds)
    return load_mono_16k(token)


def cmd_synth(args, cfg: ExperimentConfig) -> int:
    entries = parse_manifest(args.manifest)
    out = _out_dir(args, cfg)
    rngs = scene_rngs(cfg.seed, len(entries))
    written = 0
    for (lineno, (name, tgt, nse, t_az, n_az, snr)), rng in zip(entries, rngs):
        try:
            target = _source(tgt, rng, cfg.seconds, "target")
            noise = _source(nse, rng, cfg.seconds, "noise")
            spec = scene_spec(cfg, target, noise, float(t_az), float(n_az), float(snr))
            pair, (egl, egr) = build_scene(spec, cfg.pmap, cfg.lgf, cfg.table())
        except (SignalError, SceneError, AceError, ValueError) as exc:
            log.error("%s line %d (%s): %s", args.manifest, lineno, name, exc)
            continue
        write_wav(out / f"{name}.wav", pair.noisy)
        write_wav(out / f"{name}.clean.wav", pair.clean)
        write_egf(out / f"{name}.left.egf", egl)
        write_egf(out / f"{name}.right.egf", egr)
        written += 1
        log.info("wrote scene %s", name)
    print(f"scenes written: {written}/{len(entries)}")
    return EXIT_OK if written else EXIT_DATA


# -- train ------------------------------------------------------------------------

def cmd_train(args, cfg: ExperimentConfig) -> int:
    cfg.check_model(cfg.model)
    out = _out_dir(args, cfg)
    pool = SourcePool.from_config(cfg)
    train, val = split_train_val(training_examples(cfg, pool), cfg.val_fraction)
    init = None
    ckpt = out / "checkpoint"
    if args.resume and ckpt.with_suffix(".dwt").exists():
        init, ck_cfg, ck_variant = load_model(ckpt)
        if ck_cfg != cfg.model or ck_variant != cfg.variant:
            raise ConfigError(f"checkpoint {ckpt} was trained with a different model or variant")
        log.info("resuming from %s", ckpt)

    history = []

    def on_epoch(record, best):
        history.append(record)
        save_model(ckpt, best, cfg.model, cfg.variant)
        write_history(out / "history.csv", history)

    try:
        res = fit(train, val, cfg.model, cfg.variant, cfg.train, init=init, on_epoch=on_epoch)
    except TrainingDiverged as exc:
        save_model(ckpt, exc.params, cfg.model, cfg.variant)
        write_history(out / "history.csv", exc.history)
        raise
    save_model(out / "model", res.params, cfg.model, cfg.variant)
    write_history(out / "history.csv", res.history)
    best = res.history[res.best_epoch - 1] if res.best_epoch else res.history[-1]
    print(f"epochs={len(res.history)} steps={res.steps} best_epoch={res.best_epoch} "
          f"best_val_loss={best.val_loss:.6g} events={','.join(res.events) or 'none'}")
    return EXIT_OK


# -- eval -------------------------------------------------------------------------

_WORKER: dict = {}


def _init_worker(cfg, models, pool):
    _WORKER.update(cfg=cfg, models=models, pool=pool)


def _run_job(item):
    job, rng = item
    return evaluate_scene(_WORKER["cfg"], _WORKER["models"], job, rng, _WORKER["pool"])


def run_sweep(cfg: ExperimentConfig, models: dict, jobs: list[EvalJob], workers: int = 1):
    """Evaluate every job; results come back in job order whatever the worker count."""
    pool = SourcePool.from_config(cfg)
    items = list(zip(jobs, scene_rngs(cfg.seed, len(jobs))))
    if workers <= 1:
        _init_worker(cfg, models, pool)
        yield from map(_run_job, items)
        return
    with ProcessPoolExecutor(workers, initializer=_init_worker, initargs=(cfg, models, pool)) as ex:
        yield from ex.map(_run_job, items, chunksize=max(1, len(items) // (4 * workers)))


def cmd_eval(args, cfg: ExperimentConfig) -> int:
    models = {}
    for w in args.weights:
        params, mcfg, variant = load_model(w)
        cfg.check_model(mcfg)
        if variant in models:
            raise ConfigError(f"two weight files for the {variant} variant")
        models[variant] = (params, mcfg)
    out = _out_dir(args, cfg)
    reports = []
    snri_by_snr = defaultdict(lambda: defaultdict(list))
    lcc_by_az = defaultdict(lambda: defaultdict(list))
    eic_by_az = defaultdict(lambda: defaultdict(list))
    for scene_reports in run_sweep(cfg, models, eval_jobs(cfg), args.jobs):
        for rep in scene_reports:
            reports.append(rep)
            v, az = rep.variant, rep.noise_azimuth
            for side in ("left", "right"):
                snri_by_snr[v][rep.snr_db].append(rep.snri[side].db)
                lcc = electrode_average(rep.lcc[side])
                if lcc is not None:
                    lcc_by_az[v][az].append(lcc)
            eic = electrode_average(rep.eic)
            if eic is not None:
                eic_by_az[v][az].append(eic)
    write_report_csv(out / "metrics.csv", reports)
    plots = out / "plots"
    plots.mkdir(exist_ok=True)
    for variant in [UNPROCESSED, *models]:
        write_plot_tsv(plots / f"snri_vs_snr.{variant}.tsv", snri_by_snr[variant])
        write_plot_tsv(plots / f"lcc_vs_azimuth.{variant}.tsv", lcc_by_az[variant])
        write_plot_tsv(plots / f"eic_vs_azimuth.{variant}.tsv", eic_by_az[variant])
    print(f"scenes={len(reports) // (1 + len(models))} variants={','.join([UNPROCESSED, *models])} out={out}")
    return EXIT_OK


# -- report -----------------------------------------------------------------------

def cmd_report(args, cfg: ExperimentConfig) -> int:
    path = args.metrics or (args.out or cfg.out) / "metrics.csv"
    if not path.is_file():
        raise ConfigError(f"metrics file {path} not found")
    columns = ("snri_db", "lcc_mean", "eic_mean")
    values = defaultdict(lambda: defaultdict(list))
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            for c in columns:
                if row.get(c, "NA") != "NA":
                    values[row["variant"]][c].append(float(row[c]))
    if not values:
        raise MetricError(f"{path} holds no metric rows")
    lines = ["variant\tmetric\tmean\tq1\tq3"]
    for variant in sorted(values):
        for c in columns:
            m, q1, q3 = quartile_summary(values[variant][c])
            lines.append(f"{variant}\t{c}\t{m:.6g}\t{q1:.6g}\t{q3:.6g}")
    text = "\n".join(lines) + "\n"
    (path.parent / "summary.tsv").write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


COMMANDS = {"encode": cmd_encode, "synth": cmd_synth, "train": cmd_train, "eval": cmd_eval, "report": cmd_report}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    _configure_logging()
    try:
        cfg = load_config(args.config, seed=args.seed, out=args.out)
        return COMMANDS[args.verb](args, cfg)
    except (ConfigError, ModelConfigError) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except (TrainingDiverged, NonFiniteError, FloatingPointError) as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERICAL
    except (SignalError, AceError, SceneError, WeightFileError, MetricError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
