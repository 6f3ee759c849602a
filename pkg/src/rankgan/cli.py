"""Command-line experiment runner.

    rankgan run CONFIG [CONFIG ...] [--seed N] [--out DIR] [--jobs N]
    rankgan fig2 CONFIG
    rankgan complete CONFIG --stage I --mask KIND
    rankgan verify-checkpoint PATH

Exit codes: 0 ok, 2 bad config or arguments, 3 numeric blow-up, 4 I/O error.
Failures print one JSON error record on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import checkpoint, config as config_mod, plotting
from .completion import CompletionError
from .data import load_dataset, make_dataset
from .experiments import (
    COMPLETION_COLUMNS,
    FIG2_COLUMNS,
    METRIC_COLUMNS,
    completion_rows,
    evaluate_stage,
    fig2_scores,
)
from .nn import ConfigError
from .reporting import CsvLog, RunDir, write_csv
from .stagewise import HISTORY_COLUMNS, Net, StageState, TrainingError, run_pipeline

log = logging.getLogger("rankgan")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO, EXIT_OTHER = 0, 2, 3, 4, 1
LOG_LEVELS = {"quiet": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}

MARGIN_COLUMNS = ("stage", "m_high", "m_low")
COUNTER_COLUMNS = (
    "stage", "epochs", "critic_steps", "gen_steps", "margin_computations",
    "stop_reason", "g_prev_digest", "d_prev_digest", "frozen_unchanged",
)
VAE_COLUMNS = ("epoch", "val_mse")


def _load_net(path) -> Net:
    params, spec = checkpoint.load_model(path)
    return Net(params.freeze(), spec)


# -- experiment bodies ------------------------------------------------------

def _metric_rows(stage: int, reports) -> list[tuple]:
    return [(stage, r.name, r.value, r.n_a, r.n_b, r.seed) for r in reports]


def _stage_figures(rd: RunDir, cfg, states, encoder, dataset) -> None:
    from .experiments import encode_sample

    test = dataset.test
    rng = np.random.default_rng(cfg.subseed("train") + 1)
    z = encode_sample(encoder, test, rng.normal(size=(len(test), cfg.latent_dim)))
    generated = {f"stage {s.index}": s.G.predict(z) for s in states}
    if test.shape[1] == 2:
        plotting.samples_2d(test, generated, rd.figures / "samples.png")
    elif cfg.dataset == "toy-faces":
        plotting.image_grid({"data": test, **generated}, rd.figures / "samples.png")


def run_pipeline_job(cfg, out) -> dict:
    rd = RunDir(out).prepare(cfg)
    dataset = make_dataset(cfg.dataset, cfg.n_samples, cfg.subseed("data"))
    rd.save_dataset(dataset)
    logs: dict[int, CsvLog] = {}
    margins_log = CsvLog(rd / "margins.csv", MARGIN_COLUMNS)
    counters_log = CsvLog(rd / "counters.csv", COUNTER_COLUMNS)
    history, margins = [], {}

    def stage_log(stage: int) -> CsvLog:
        if stage not in logs:
            logs[stage] = CsvLog(rd.history(stage), HISTORY_COLUMNS)
        return logs[stage]

    def on_epoch(row):
        stage_log(row.stage).write(row.as_tuple())
        history.append(row)

    def on_stage(state: StageState, encoder: Net):
        if state.index == 1:
            rd.save_model(rd / "encoder.ckpt", encoder.params, encoder.spec)
        stage_log(state.index).close()
        rd.save_model(rd.model(state.index, "G"), state.G.params, state.G.spec)
        rd.save_model(rd.model(state.index, "D"), state.D.params, state.D.spec)
        g_dig = d_dig = ""
        unchanged = True
        if state.margins is not None:
            margins_log.write((state.index, state.margins.m_high, state.margins.m_low))
            margins[state.index] = state.margins
            g_dig, d_dig = state.frozen_digests["G_prev"], state.frozen_digests["D_prev"]
            unchanged = (state.G_prev.params.digest(), state.D_prev.params.digest()) == (g_dig, d_dig)
        counters_log.write((
            state.index, state.epoch, state.critic_steps, state.gen_steps,
            state.margin_computations, state.stop_reason, g_dig, d_dig, unchanged,
        ))
        log.info("stage %d done (%s, %d epochs)", state.index, state.stop_reason, state.epoch)

    try:
        result = run_pipeline(cfg, on_epoch=on_epoch, on_stage=on_stage, dataset=dataset)
    except BaseException:
        for lg in (*logs.values(), margins_log, counters_log):
            lg.abandon()
        raise
    margins_log.close()
    counters_log.close()
    write_csv(rd / "vae_history.csv", VAE_COLUMNS, result.vae_history)

    rows = []
    for state in result.states:
        rows += _metric_rows(state.index, evaluate_stage(state, result.encoder, dataset, cfg))
    write_csv(rd / "metrics.csv", METRIC_COLUMNS, rows)

    if cfg.kind == "completion":
        images = dataset.test[: cfg.completion.n_images]
        for state in result.states:
            _completion_job(rd, cfg, state.index, cfg.completion.mask, state.G, state.D,
                            result.encoder, images)

    if cfg.figures:
        plotting.stage_scores(history, rd.figures / "scores.png", margins)
        _stage_figures(rd, cfg, result.states, result.encoder, dataset)
    return {"output": str(rd.root), "stages": len(result.states)}


def _completion_job(rd: RunDir, cfg, stage: int, mask: str, G: Net, D: Net, encoder, images) -> list[tuple]:
    rows, completed = completion_rows(stage, G, D, encoder, images, mask, cfg)
    write_csv(rd.completion(stage, mask), COMPLETION_COLUMNS, rows)
    if cfg.figures:
        from .data import apply_mask, make_mask

        corrupted = apply_mask(images, make_mask(mask), fill=0.0)
        plotting.image_grid(
            {"original": images, "masked": corrupted, "completed": completed},
            rd.figures / f"completion_stage_{stage}_{mask}.png",
        )
    return rows


def complete_job(cfg, out, stage: int, mask: str) -> dict:
    rd = RunDir(out)
    if not rd.config.exists():
        raise FileNotFoundError(f"{rd.root}: no finished run here (config.resolved missing)")
    dataset = load_dataset(rd / "dataset.ckpt")
    if dataset.kind != "toy-faces":
        raise ConfigError(f"completion needs a toy-faces run, found {dataset.kind!r}")
    G, D = _load_net(rd.model(stage, "G")), _load_net(rd.model(stage, "D"))
    encoder = _load_net(rd / "encoder.ckpt") if (rd / "encoder.ckpt").exists() else None
    images = dataset.test[: cfg.completion.n_images]
    rows = _completion_job(rd, cfg, stage, mask, G, D, encoder, images)
    return {"output": str(rd.completion(stage, mask)),
            "mean_psnr": float(np.mean([r[3] for r in rows]))}


def metrics_job(cfg, out) -> dict:
    """Recompute metrics.csv from the checkpoints of an earlier run."""
    rd = RunDir(out)
    dataset = load_dataset(rd / "dataset.ckpt")
    encoder = _load_net(rd / "encoder.ckpt")
    rows = []
    stage = 1
    while rd.model(stage, "G").exists():
        state = StageState(stage, _load_net(rd.model(stage, "G")), _load_net(rd.model(stage, "D")))
        rows += _metric_rows(stage, evaluate_stage(state, encoder, dataset, cfg))
        stage += 1
    if stage == 1:
        raise FileNotFoundError(f"{rd.root}: no stage checkpoints found")
    write_csv(rd / "metrics.csv", METRIC_COLUMNS, rows)
    return {"output": str(rd / "metrics.csv"), "stages": stage - 1}


def fig2_job(cfg, out) -> dict:
    rd = RunDir(out).prepare(cfg)
    rows = fig2_scores(cfg)
    write_csv(rd / "fig2_scores.csv", FIG2_COLUMNS, rows)
    if cfg.figures:
        plotting.fig2_curves(rows, rd.figures / "fig2_scores.png")
    return {"output": str(rd / "fig2_scores.csv"), "rows": len(rows)}


def verify_job(path) -> dict:
    if not checkpoint.verify_roundtrip(path):
        raise checkpoint.CheckpointError(f"{path}: re-encoding does not reproduce the file")
    kind, header, records = checkpoint.decode(Path(path).read_bytes(), str(path))
    return {"path": str(path), "kind": kind, "records": len(records)}


def run_job(cfg, out) -> dict:
    if cfg.kind == "fig2-scores":
        return fig2_job(cfg, out)
    if cfg.kind == "metrics-only":
        return metrics_job(cfg, out)
    return run_pipeline_job(cfg, out)


# -- error handling ----------------------------------------------------------

def _error_record(exc: BaseException, source: str | None) -> tuple[int, dict]:
    rec = {"status": "error", "message": str(exc), "type": type(exc).__name__}
    if source:
        rec["config"] = source
    if isinstance(exc, ConfigError):
        code, rec["kind"] = EXIT_CONFIG, "config"
    elif isinstance(exc, TrainingError):
        code, rec["kind"] = EXIT_NUMERIC, "numeric"
        rec.update(stage=exc.stage, epoch=exc.epoch, step=exc.step, component=exc.component)
    elif isinstance(exc, CompletionError):
        code, rec["kind"] = EXIT_NUMERIC, "numeric"
        rec["iteration"] = exc.iteration
    elif isinstance(exc, FloatingPointError):
        code, rec["kind"] = EXIT_NUMERIC, "numeric"
    elif isinstance(exc, OSError):
        code, rec["kind"] = EXIT_IO, "io"
    else:
        code, rec["kind"] = EXIT_OTHER, "internal"
    return code, rec


def _guarded(fn, *args, source=None) -> tuple[int, dict]:
    try:
        return EXIT_OK, {"status": "ok", **fn(*args)}
    except Exception as exc:  # every failure becomes one error record
        log.debug("failure", exc_info=True)
        return _error_record(exc, source)


def _job_entry(args) -> tuple[int, dict]:
    cfg, out, source, level = args
    _setup_logging(level)
    return _guarded(run_job, cfg, out, source=source)


def _emit(code: int, rec: dict) -> None:
    stream = sys.stdout if code == EXIT_OK else sys.stderr
    print(json.dumps(rec, sort_keys=True), file=stream, flush=True)


# -- argument handling -------------------------------------------------------

def _setup_logging(level: int) -> None:
    logging.basicConfig(level=level, format="%(asctime)s %(name)s %(levelname)s %(message)s",
                        stream=sys.stderr, force=True)


def _log_level() -> int:
    name = os.environ.get("RANKGAN_LOG", "info").lower()
    if name not in LOG_LEVELS:
        raise ConfigError(f"RANKGAN_LOG must be one of {sorted(LOG_LEVELS)}, got {name!r}")
    return LOG_LEVELS[name]


def _load_cfg(path, seed=None):
    cfg = config_mod.load(path)
    if seed is not None:
        d = cfg.to_dict()
        d["seed"] = seed
        cfg = config_mod.from_dict(d)
    return cfg


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rankgan", description="Stage-wise ranking GAN experiments.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--seed", type=int, default=None, help="override the config seed")
        sp.add_argument("--out", default=None, help="override the output directory")

    r = sub.add_parser("run", help="run one or more experiment configs")
    r.add_argument("configs", nargs="+")
    common(r)
    r.add_argument("--jobs", type=int, default=1, help="configs to run concurrently")

    f = sub.add_parser("fig2", help="critic score curves on the 1D Gaussian pair")
    f.add_argument("config")
    common(f)

    c = sub.add_parser("complete", help="complete test images with a trained stage")
    c.add_argument("config")
    c.add_argument("--stage", type=int, required=True)
    c.add_argument("--mask", required=True)
    common(c)

    v = sub.add_parser("verify-checkpoint", help="decode and re-encode a checkpoint")
    v.add_argument("path")
    return p


def _run_many(args, level: int) -> int:
    jobs = []
    for path in args.configs:
        cfg = _load_cfg(path, args.seed)
        if args.out is None:
            out = cfg.output_dir
        elif len(args.configs) == 1:
            out = args.out
        else:
            out = str(Path(args.out) / Path(path).stem)
        jobs.append((cfg, out, path, level))
    outs = [Path(j[1]).resolve() for j in jobs]
    if len(set(outs)) != len(outs):
        raise ConfigError("several configs share one output directory")
    if args.jobs < 1:
        raise ConfigError("--jobs must be >= 1")
    if args.jobs == 1 or len(jobs) == 1:
        results = [_guarded(run_job, cfg, out, source=src) for cfg, out, src, _ in jobs]
    else:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_job_entry, jobs))
    for code, rec in results:
        _emit(code, rec)
    return max(code for code, _ in results)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        level = _log_level()
        _setup_logging(level)
        if args.command == "run":
            return _run_many(args, level)
        if args.command == "verify-checkpoint":
            code, rec = _guarded(verify_job, args.path)
        else:
            cfg = _load_cfg(args.config, args.seed)
            out = args.out or cfg.output_dir
            if args.command == "fig2":
                code, rec = _guarded(fig2_job, cfg, out, source=args.config)
            else:
                from .data import MASK_KINDS

                if args.mask not in MASK_KINDS:
                    raise ConfigError(f"unknown mask kind {args.mask!r}; expected one of {MASK_KINDS}")
                if args.stage < 1:
                    raise ConfigError("--stage must be >= 1")
                code, rec = _guarded(complete_job, cfg, out, args.stage, args.mask, source=args.config)
    except ConfigError as exc:
        code, rec = _error_record(exc, getattr(args, "config", None))
    _emit(code, rec)
    return code


if __name__ == "__main__":
    sys.exit(main())
