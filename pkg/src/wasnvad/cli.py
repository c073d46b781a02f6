"""Command-line front end.

Each subcommand maps onto one pipeline stage (or the whole pipeline) over a
workspace directory, with direct file modes where a stage makes sense on a
single input. Exit codes: 0 success, 2 configuration problem, 3 stage
failure.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np

from . import acoustics
from ._util import named_rng
from .eigensolver import read_eigenvalues_csv
from .enumeration import enumerate_spectra
from .pipeline import (
    EXPERIMENTS,
    ConfigError,
    PipelineConfig,
    StageError,
    run_experiment,
    run_pipeline,
    stage_cluster,
    stage_eig,
    stage_enumerate,
    stage_score,
    stage_simulate,
    stage_unmix,
    stage_vad,
)
from .signals import read_energy_csv, write_energy_csv
from .unmixing import mnica_multi
from .vad import (
    batch_vad,
    read_decisions_csv,
    score,
    sequential_vad,
    write_decisions_csv,
    write_report_json,
)


def _build_config(obj, **overrides) -> PipelineConfig:
    payload = {}
    if obj.get("config"):
        path = Path(obj["config"])
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            with open(path) as fh:
                payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}")
        if not isinstance(payload, dict):
            raise ConfigError("config file must hold a JSON object")
    if obj.get("seed") is not None:
        payload["seed"] = obj["seed"]
    if obj.get("out") is not None:
        payload["out_dir"] = obj["out"]
    if obj.get("threads") is not None:
        payload["threads"] = obj["threads"]
    for key, value in overrides.items():
        if value is not None:
            payload[key] = value
    return PipelineConfig.from_dict(payload)


def _workspace(cfg: PipelineConfig) -> Path:
    ws = Path(cfg.out_dir)
    ws.mkdir(parents=True, exist_ok=True)
    return ws


def _guard(fn):
    try:
        fn()
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(2)
    except StageError as exc:
        click.echo(str(exc), err=True)
        sys.exit(3)
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        click.echo(f"error: {exc}", err=True)
        sys.exit(3)


def _echo_files(ws: Path, files) -> None:
    for f in files:
        click.echo(str(f) if isinstance(f, Path) else str(ws / f))


@click.group()
@click.option("--config", type=click.Path(), default=None, help="JSON config file.")
@click.option("--seed", type=int, default=None, help="Top-level random seed.")
@click.option("--out", type=click.Path(), default=None, help="Workspace directory.")
@click.option("--threads", type=int, default=None, help="Worker threads.")
@click.pass_context
def main(ctx, config, seed, out, threads):
    """Distributed multi-speaker voice activity detection over a WASN."""
    ctx.obj = {"config": config, "seed": seed, "out": out, "threads": threads}


@main.command()
@click.option("--scenario", default=None, help="fig1, a scenario JSON path, or blank.")
@click.pass_obj
def simulate(obj, scenario):
    """Synthesize the scene: microphone WAV, energy tracks, truth tracks."""

    def go():
        cfg = _build_config(obj, scenario=scenario)
        ws = _workspace(cfg)
        _echo_files(ws, stage_simulate(cfg, ws))

    _guard(go)


@main.command()
@click.option("--phi", type=int, default=None, help="Eigenpairs per bin.")
@click.option(
    "--solver", type=click.Choice(["distributed", "centralized"]), default=None
)
@click.option("--top-bins", "top_bins", type=int, default=None)
@click.pass_obj
def eig(obj, phi, solver, top_bins):
    """Per-bin eigendecomposition over the network, plus traffic ledger."""

    def go():
        cfg = _build_config(obj, phi=phi, solver=solver, top_bins=top_bins)
        ws = _workspace(cfg)
        _echo_files(ws, stage_eig(cfg, ws))

    _guard(go)


@main.command(name="enumerate")
@click.option("--eigs", type=click.Path(), default=None, help="Eigenvalue CSV.")
@click.option("--nw", type=int, default=None, help="Probing draws per fit.")
@click.option("--method", type=click.Choice(["lappo", "edc"]), default=None)
@click.option("--samples", type=int, default=None, help="Segment count (edc).")
@click.pass_obj
def enumerate_cmd(obj, eigs, nw, method, samples):
    """Estimate the source count from per-bin eigenvalue spectra."""

    def go():
        cfg = _build_config(obj, n_w=nw, enum_method=method)
        ws = _workspace(cfg)
        if eigs is None:
            _echo_files(ws, stage_enumerate(cfg, ws))
            return
        if cfg.enum_method == "edc" and samples is None:
            raise ConfigError("edc needs --samples (segment count)")
        lam = read_eigenvalues_csv(eigs)
        result = enumerate_spectra(
            lam,
            n_samples=samples,
            method=cfg.enum_method,
            n_w=cfg.n_w,
            seed=cfg.seed,
            cv_rule=cfg.cv_rule,
        )
        with open(ws / "enumeration.json", "w") as fh:
            json.dump(result, fh, indent=2, sort_keys=True)
            fh.write("\n")
        _echo_files(ws, ["enumeration.json"])

    _guard(go)


@main.command()
@click.option("--sigma", type=float, default=None, help="Affinity bandwidth.")
@click.pass_obj
def cluster(obj, sigma):
    """Group nodes into per-source clusters plus a dummy cluster."""

    def go():
        cfg = _build_config(obj, sigma_aff=sigma)
        ws = _workspace(cfg)
        _echo_files(ws, stage_cluster(cfg, ws))

    _guard(go)


@main.command()
@click.option(
    "--energies",
    type=click.Path(),
    multiple=True,
    help="Energy track CSVs (one per channel); omit for workspace mode.",
)
@click.option("--components", type=int, default=2, show_default=True)
@click.pass_obj
def unmix(obj, energies, components):
    """Separate per-source energy tracks from mixed channel energies."""

    def go():
        cfg = _build_config(obj)
        ws = _workspace(cfg)
        if not energies:
            _echo_files(ws, stage_unmix(cfg, ws))
            return
        if components < 1:
            raise ConfigError("components must be at least 1")
        tracks = [read_energy_csv(p) for p in energies]
        n = {t.values.size for t in tracks}
        if len(n) != 1:
            raise ConfigError("energy tracks must share one length")
        Y = np.vstack([t.values for t in tracks])
        results = mnica_multi(
            Y,
            components,
            max_iters=cfg.mnica_iters,
            tol=cfg.mnica_tol,
            seed=named_rng(cfg.seed, "unmix-cli"),
        )
        files = []
        for j, res in enumerate(results, start=1):
            res.estimate.label = f"component{j}"
            name = f"unmixed_component{j}.csv"
            write_energy_csv(res.estimate, ws / name)
            files.append(name)
        _echo_files(ws, files)

    _guard(go)


@main.command()
@click.option("--energy", type=click.Path(), default=None, help="Energy track CSV.")
@click.option("--mode", type=click.Choice(["batch", "seq"]), default=None)
@click.option("--window", default=None, help="Sequential data window: growing|fixedN.")
@click.option(
    "--method", type=click.Choice(["kmeans", "kmedians", "kmedoids"]), default=None
)
@click.option("--correct/--no-correct", "correction", default=None)
@click.pass_obj
def vad(obj, energy, mode, window, method, correction):
    """Two-class voice activity decisions on unmixed energy tracks."""

    def go():
        cfg = _build_config(
            obj,
            vad_mode=mode,
            window_mode=window,
            vad_method=method,
            vad_correction=correction,
        )
        ws = _workspace(cfg)
        if energy is None:
            _echo_files(ws, stage_vad(cfg, ws))
            return
        track = read_energy_csv(energy)
        rng = named_rng(cfg.seed, "vad-cli")
        if cfg.vad_mode == "seq":
            decided = sequential_vad(
                track.values,
                window=cfg.vad_window,
                window_mode=cfg.window_mode,
                method=cfg.vad_method,
                seed=rng,
                correction=cfg.vad_correction,
            )
        else:
            decided = batch_vad(
                track,
                window=cfg.vad_window,
                method=cfg.vad_method,
                correction=cfg.vad_correction,
                seed=rng,
            )
        write_decisions_csv(decided, ws / "decisions.csv")
        _echo_files(ws, ["decisions.csv"])

    _guard(go)


@main.command(name="score")
@click.option("--decisions", type=click.Path(), default=None, help="Decisions CSV.")
@click.option("--truth", type=click.Path(), default=None, help="Clean track CSV.")
@click.pass_obj
def score_cmd(obj, decisions, truth):
    """Detection metrics against ground-truth activity."""

    def go():
        cfg = _build_config(obj)
        ws = _workspace(cfg)
        if decisions is None and truth is None:
            _echo_files(ws, stage_score(cfg, ws))
            return
        if decisions is None or truth is None:
            raise ConfigError("--decisions and --truth go together")
        decided = read_decisions_csv(decisions)
        activity = acoustics.activity_from_track(read_energy_csv(truth))
        lo = decided.start_segment - 1
        ref = activity[lo : lo + decided.final.size]
        report = score(decided, ref)
        write_report_json(report, ws / "report.json")
        _echo_files(ws, ["report.json"])

    _guard(go)


@main.command(name="pipeline")
@click.pass_obj
def pipeline_cmd(obj):
    """Run every stage in order and write the run manifest."""

    def go():
        cfg = _build_config(obj)
        manifest = run_pipeline(cfg)
        for stage, seconds in manifest.timings.items():
            click.echo(f"{stage}: {seconds:.2f}s", err=True)
        click.echo(str(Path(cfg.out_dir) / "manifest.json"))

    _guard(go)


@main.command(name="experiment")
@click.option("--name", type=click.Choice(sorted(EXPERIMENTS)), required=True)
@click.option("--trials", type=int, default=None)
@click.pass_obj
def experiment_cmd(obj, name, trials):
    """Reproduce one of the validation experiments at desk scale."""

    def go():
        cfg = _build_config(obj, trials=trials)
        files = run_experiment(name, cfg)
        _echo_files(Path(cfg.out_dir), files)

    _guard(go)


if __name__ == "__main__":
    main()
