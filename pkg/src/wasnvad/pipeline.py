"""Staged end-to-end runs over a workspace directory.

Every stage reads its inputs from files written by the previous stage, so
the CLI can run them one at a time or all at once; run_pipeline adds
timing, a manifest with content hashes, and stage-level error reporting.
All randomness derives from the single configured seed through named
sub-streams.
"""

from __future__ import annotations

import json
import time
import warnings
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import acoustics
from ._util import config_hash, float_repr, named_rng, parallel_map, sha256_file
from .eigensolver import (
    EigenSet,
    centralized_evd,
    distributed_top_phi,
    read_eigenvalues_csv,
    read_eigenvectors_csv,
    sample_covariance,
    write_eigenvalues_csv,
    write_eigenvectors_csv,
)
from .enumeration import enumerate_spectra
from .lonas import (
    build_indicator,
    emis,
    lonas_cluster,
    read_assignment_json,
    write_assignment_json,
)
from .network import TrafficLedger, build_graph, build_tree, graph_to_dot
from .signals import (
    EnergyTrack,
    read_energy_csv,
    read_wav,
    segment_energy,
    source_energy_oracle,
    stack_stfts,
    stft_analyze,
    write_energy_csv,
    write_wav,
)
from .unmixing import mnica_multi, mnica_two, pearson
from .vad import (
    batch_vad,
    read_decisions_csv,
    score,
    sequential_vad,
    write_decisions_csv,
    write_report_json,
)


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


class StageError(RuntimeError):
    """A pipeline stage failed; carries the stage name and the cause."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


_VAD_METHODS = ("kmeans", "kmedians", "kmedoids")


@dataclass
class PipelineConfig:
    """Everything a run needs; JSON-serializable for hashing."""

    scenario: object = "fig1"  # "fig1", a JSON path, or a payload dict
    out_dir: str = "run"
    seed: int = 0
    frame_len: int = 1024
    frame_shift: int = 512
    phi: int = 8
    top_bins: int = 16
    radio_range: float = 6.0
    solver: str = "distributed"  # or "centralized"
    evd_iters: int = 200
    evd_tol: float = 1e-8
    enum_method: str = "lappo"  # or "edc"
    n_w: int = 1000
    cv_rule: str = "1se"
    sigma_aff: float | None = None
    mnica_iters: int = 500
    mnica_tol: float = 1e-6
    vad_window: int = 10
    vad_method: str = "kmeans"
    vad_correction: bool = True
    vad_mode: str = "batch"  # or "seq"
    window_mode: str = "growing"  # or "fixed:<n>"
    trials: int = 20
    threads: int = 1

    def validate(self):
        if not isinstance(self.scenario, (str, dict)):
            raise ConfigError("scenario must be a name, a JSON path, or a dict")
        if self.frame_len < 2 or self.frame_shift < 1:
            raise ConfigError("frame_len/frame_shift must be positive")
        if self.frame_shift > self.frame_len:
            raise ConfigError("frame_shift cannot exceed frame_len")
        if self.phi < 1:
            raise ConfigError("phi must be at least 1")
        if self.top_bins < 1:
            raise ConfigError("top_bins must be at least 1")
        if self.radio_range <= 0:
            raise ConfigError("radio_range must be positive")
        if self.solver not in ("distributed", "centralized"):
            raise ConfigError(f"unknown solver: {self.solver}")
        if self.enum_method not in ("lappo", "edc"):
            raise ConfigError(f"unknown enumeration method: {self.enum_method}")
        if self.vad_method not in _VAD_METHODS:
            raise ConfigError(f"unknown vad method: {self.vad_method}")
        if self.vad_mode not in ("batch", "seq"):
            raise ConfigError(f"unknown vad mode: {self.vad_mode}")
        if self.vad_window < 2:
            raise ConfigError("vad window must be at least 2")
        if self.trials < 1 or self.threads < 1:
            raise ConfigError("trials and threads must be at least 1")

    def to_dict(self) -> dict:
        return asdict(self)

    def hash_payload(self) -> dict:
        """Config identity: everything that can change the outputs."""
        payload = asdict(self)
        payload.pop("out_dir")  # where results land, not what they are
        payload.pop("threads")  # parallelism never changes results
        return payload

    @classmethod
    def from_dict(cls, payload: dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        extra = set(payload) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        cfg = cls(**payload)
        cfg.validate()
        return cfg


@dataclass
class RunManifest:
    """Run identity plus an index of every produced file."""

    config_hash: str
    seed: int
    timings: dict = field(default_factory=dict)  # stage -> seconds
    files: dict = field(default_factory=dict)  # relative path -> sha256

    def to_json(self, path) -> None:
        payload = {
            "config_hash": self.config_hash,
            "seed": self.seed,
            "timings": self.timings,
            "files": self.files,
        }
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def from_json(cls, path) -> "RunManifest":
        with open(path) as fh:
            payload = json.load(fh)
        return cls(
            payload["config_hash"],
            payload["seed"],
            payload["timings"],
            payload["files"],
        )


def _as_config(config) -> PipelineConfig:
    if isinstance(config, PipelineConfig):
        config.validate()
        return config
    if isinstance(config, dict):
        return PipelineConfig.from_dict(config)
    raise ConfigError("config must be a PipelineConfig or a dict")


def resolve_scenario(cfg: PipelineConfig):
    """Turn the configured scenario reference into a Scenario object."""
    sc = cfg.scenario
    if isinstance(sc, str):
        if sc == "fig1":
            return acoustics.fig1_scenario()
        path = Path(sc)
        if path.suffix == ".json":
            if not path.exists():
                raise ConfigError(f"scenario file not found: {sc}")
            return acoustics.scenario_from_json(path)
        raise ConfigError(f"unknown scenario reference: {sc}")
    if isinstance(sc, dict):
        if "builder" in sc:
            params = {k: v for k, v in sc.items() if k != "builder"}
            name = sc["builder"]
            try:
                if name == "clustered":
                    scenario, _ = acoustics.clustered_scene(**params)
                    return scenario
                if name == "enumeration":
                    return acoustics.enumeration_scene(**params)
            except TypeError as exc:
                raise ConfigError(f"bad parameters for builder '{name}': {exc}")
            raise ConfigError(f"unknown scenario builder: {name}")
        try:
            return acoustics.scenario_from_payload(sc)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad scenario payload: {exc}")
    raise ConfigError("scenario must be a name, a JSON path, or a dict")


def _write_json(path, payload) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _read_json(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def _require(ws: Path, name: str) -> Path:
    path = ws / name
    if not path.exists():
        raise FileNotFoundError(f"missing workspace file: {name} (run earlier stages)")
    return path


# --- stages ---


def stage_simulate(cfg: PipelineConfig, ws: Path) -> list:
    scenario = resolve_scenario(cfg)
    sim = acoustics.simulate_scenario(
        scenario, seed=cfg.seed, frame_len=cfg.frame_len, frame_shift=cfg.frame_shift
    )
    n_seg = sim.source_tracks[0].values.size
    if cfg.vad_window >= n_seg:
        raise ConfigError(
            f"vad window {cfg.vad_window} needs more than {n_seg} segments"
        )
    files = []

    write_wav(ws / "mics.wav", sim.mic_signals)
    files.append("mics.wav")

    _write_json(
        ws / "channels.json",
        {
            "channel_nodes": sim.channel_nodes,
            "positions": [list(map(float, n.position)) for n in scenario.nodes],
            "radio_range": cfg.radio_range,
            "frame_len": cfg.frame_len,
            "frame_shift": cfg.frame_shift,
            "sample_rate": scenario.sample_rate,
            "n_segments": n_seg,
        },
    )
    files.append("channels.json")

    for c, sig in enumerate(sim.mic_signals, start=1):
        tensor = stft_analyze(sig, cfg.frame_len, cfg.frame_shift)
        track = segment_energy(tensor, 0)
        track.label = f"ch{c}"
        name = f"energy_ch{c:03d}.csv"
        write_energy_csv(track, ws / name)
        files.append(name)

    for q, track in enumerate(sim.source_tracks, start=1):
        name = f"truth_source{q}.csv"
        write_energy_csv(track, ws / name)
        files.append(name)

    with open(ws / "mixing.csv", "w", newline="") as fh:
        fh.write("channel,source,value\n")
        H = sim.mixing.values
        for c in range(H.shape[0]):
            for q in range(H.shape[1]):
                fh.write(f"{c + 1},{q + 1},{float_repr(H[c, q])}\n")
    files.append("mixing.csv")

    try:
        acoustics.scenario_to_json(scenario, ws / "scenario.json")
        files.append("scenario.json")
    except ValueError:
        pass  # in-memory waveforms have no JSON form
    return files


def _select_bins(energy_per_bin: np.ndarray, top_bins: int) -> list:
    """Indices of the top-energy STFT bins, DC excluded, ascending."""
    F = energy_per_bin.size
    if F == 1:
        return [0]
    order = np.argsort(-energy_per_bin[1:], kind="stable") + 1
    return sorted(int(b) for b in order[: min(top_bins, F - 1)])


def stage_eig(cfg: PipelineConfig, ws: Path) -> list:
    channels = _read_json(_require(ws, "channels.json"))
    signals = read_wav(_require(ws, "mics.wav"))
    frame_len = channels["frame_len"]
    frame_shift = channels["frame_shift"]
    channel_nodes = channels["channel_nodes"]

    # pass 1: accumulate per-bin energy to pick the working bins
    per_bin = None
    for sig in signals:
        tensor = stft_analyze(sig, frame_len, frame_shift)
        e = np.sum(np.abs(tensor.values[0]) ** 2, axis=0)
        per_bin = e if per_bin is None else per_bin + e
    bins = _select_bins(per_bin, cfg.top_bins)

    # pass 2: per-node blocks restricted to those bins
    node_ids = sorted(set(channel_nodes))
    blocks = []
    for node in node_ids:
        sigs = [s for s, n in zip(signals, channel_nodes) if n == node]
        tensor = stack_stfts([stft_analyze(s, frame_len, frame_shift) for s in sigs])
        blocks.append(tensor.values[:, :, bins])

    graph = build_graph(channels["positions"], channels["radio_range"])
    tree = build_tree(graph)

    cov = sample_covariance(np.concatenate(blocks, axis=0))
    full = centralized_evd(cov)

    if cfg.solver == "distributed":
        eigs, ledger = distributed_top_phi(
            blocks,
            tree,
            cfg.phi,
            max_iters=cfg.evd_iters,
            tol=cfg.evd_tol,
            seed=cfg.seed,
        )
    else:
        eigs = EigenSet(
            full.eigenvalues[:, : cfg.phi],
            full.vectors[:, :, : cfg.phi],
            phi=cfg.phi,
        )
        ledger = TrafficLedger()

    files = []
    write_eigenvalues_csv(eigs, ws / "eigenvalues.csv")
    files.append("eigenvalues.csv")
    write_eigenvectors_csv(eigs, ws / "eigenvectors.csv")
    files.append("eigenvectors.csv")
    write_eigenvalues_csv(full, ws / "eigenvalues_full.csv")
    files.append("eigenvalues_full.csv")
    ledger.to_csv(ws / "traffic.csv")
    files.append("traffic.csv")
    with open(ws / "topology.dot", "w") as fh:
        fh.write(graph_to_dot(graph, tree))
    files.append("topology.dot")
    _write_json(
        ws / "bins.json",
        {"selected_bins": bins, "n_bins_total": int(per_bin.size)},
    )
    files.append("bins.json")
    return files


def stage_enumerate(cfg: PipelineConfig, ws: Path) -> list:
    lam = read_eigenvalues_csv(_require(ws, "eigenvalues_full.csv"))
    channels = _read_json(_require(ws, "channels.json"))
    result = enumerate_spectra(
        lam,
        n_samples=channels["n_segments"],
        method=cfg.enum_method,
        n_w=cfg.n_w,
        seed=cfg.seed,
        cv_rule=cfg.cv_rule,
    )
    _write_json(ws / "enumeration.json", result)
    return ["enumeration.json"]


def stage_cluster(cfg: PipelineConfig, ws: Path) -> list:
    lam = read_eigenvalues_csv(_require(ws, "eigenvalues.csv"))
    vectors = read_eigenvectors_csv(_require(ws, "eigenvectors.csv"))
    channels = _read_json(_require(ws, "channels.json"))
    q_hat = int(_read_json(_require(ws, "enumeration.json"))["q_hat"])
    if q_hat > cfg.phi:
        warnings.warn(
            f"estimated source count {q_hat} exceeds phi={cfg.phi}; clamping"
        )
        q_hat = cfg.phi
    eigs = EigenSet(lam, vectors, phi=cfg.phi)
    ind = build_indicator(eigs, q_hat)
    assign = lonas_cluster(
        ind, q_hat, sigma_aff=cfg.sigma_aff, channel_nodes=channels["channel_nodes"]
    )
    write_assignment_json(assign, ws / "clusters.json")
    return ["clusters.json"]


def _load_energy_matrix(ws: Path, n_channels: int) -> np.ndarray:
    rows = []
    for c in range(1, n_channels + 1):
        track = read_energy_csv(_require(ws, f"energy_ch{c:03d}.csv"))
        rows.append(track.values)
    return np.vstack(rows)


def stage_unmix(cfg: PipelineConfig, ws: Path) -> list:
    channels = _read_json(_require(ws, "channels.json"))
    channel_nodes = channels["channel_nodes"]
    assign = read_assignment_json(_require(ws, "clusters.json"))
    energies = _load_energy_matrix(ws, len(channel_nodes))

    def unmix_one(q):
        members = set(assign.sources[q])
        idx = [c for c, node in enumerate(channel_nodes) if node in members]
        res = mnica_two(
            energies[idx],
            max_iters=cfg.mnica_iters,
            tol=cfg.mnica_tol,
            seed=named_rng(cfg.seed, "unmix", q),
        )
        return q, res

    files = []
    results = parallel_map(unmix_one, sorted(assign.sources), threads=cfg.threads)
    for q, res in results:
        res.estimate.label = f"source{q}"
        name = f"unmixed_source{q}.csv"
        write_energy_csv(res.estimate, ws / name)
        files.append(name)
        res.residual.label = f"source{q}-residual"
        name = f"residual_source{q}.csv"
        write_energy_csv(res.residual, ws / name)
        files.append(name)
    return files


def stage_vad(cfg: PipelineConfig, ws: Path) -> list:
    assign = read_assignment_json(_require(ws, "clusters.json"))
    files = []
    for q in sorted(assign.sources):
        track = read_energy_csv(_require(ws, f"unmixed_source{q}.csv"))
        rng = named_rng(cfg.seed, "vad", q)
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
        name = f"decisions_source{q}.csv"
        write_decisions_csv(decided, ws / name)
        files.append(name)
    return files


def _match_to_truth(estimates: list, truths: list) -> dict:
    """Hungarian match of estimated tracks to truth tracks on |pearson|."""
    r = np.zeros((len(estimates), len(truths)))
    for i, est in enumerate(estimates):
        for j, ref in enumerate(truths):
            try:
                r[i, j] = abs(pearson(est, ref))
            except ValueError:
                r[i, j] = 0.0
    ri, ci = linear_sum_assignment(-r)
    return {int(i): (int(j), float(r[i, j])) for i, j in zip(ri, ci)}


def stage_score(cfg: PipelineConfig, ws: Path) -> list:
    assign = read_assignment_json(_require(ws, "clusters.json"))
    est_ids = sorted(assign.sources)
    est_tracks = [
        read_energy_csv(_require(ws, f"unmixed_source{q}.csv")) for q in est_ids
    ]
    truth_tracks = []
    q = 1
    while (ws / f"truth_source{q}.csv").exists():
        truth_tracks.append(read_energy_csv(ws / f"truth_source{q}.csv"))
        q += 1
    if not truth_tracks:
        raise FileNotFoundError("no truth_source*.csv in workspace")

    match = _match_to_truth(
        [t.values for t in est_tracks], [t.values for t in truth_tracks]
    )
    files = []
    summary = []
    for i, q in enumerate(est_ids):
        if i not in match:
            warnings.warn(f"estimated source {q} has no truth partner; skipped")
            continue
        j, r = match[i]
        decided = read_decisions_csv(_require(ws, f"decisions_source{q}.csv"))
        activity = acoustics.activity_from_track(truth_tracks[j])
        lo = decided.start_segment - 1
        truth = activity[lo : lo + decided.final.size]
        report = score(decided, truth)
        name = f"report_source{q}.json"
        write_report_json(report, ws / name)
        files.append(name)
        summary.append((q, j + 1, r, report))

    with open(ws / "summary.csv", "w", newline="") as fh:
        fh.write("source,truth_source,pearson,CD,MD,FA,EER,Cllr_min\n")
        for q, tq, r, rep in summary:
            cells = [str(q), str(tq), float_repr(r)]
            cells += [float_repr(v) for v in (rep.cd, rep.md, rep.fa)]
            cells += ["" if v != v else float_repr(v) for v in (rep.eer, rep.cllr_min)]
            fh.write(",".join(cells) + "\n")
    files.append("summary.csv")
    return files


STAGES = (
    ("simulate", stage_simulate),
    ("eig", stage_eig),
    ("enumerate", stage_enumerate),
    ("cluster", stage_cluster),
    ("unmix", stage_unmix),
    ("vad", stage_vad),
    ("score", stage_score),
)


def run_pipeline(config) -> RunManifest:
    """Run every stage in order, hashing all outputs into a manifest.

    Raises ConfigError for configuration problems and StageError when a
    stage fails; the manifest (including per-stage timings) is written to
    manifest.json in the output directory.
    """
    cfg = _as_config(config)
    ws = Path(cfg.out_dir)
    ws.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(config_hash(cfg.hash_payload()), cfg.seed)
    for name, fn in STAGES:
        start = time.perf_counter()
        try:
            produced = fn(cfg, ws)
        except ConfigError:
            raise
        except Exception as exc:
            raise StageError(name, exc) from exc
        manifest.timings[name] = time.perf_counter() - start
        for rel in produced:
            manifest.files[rel] = sha256_file(ws / rel)
    manifest.to_json(ws / "manifest.json")
    return manifest


# --- experiments ---


def _write_xy_csv(path, rows, header=("x", "y", "stderr")) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(float_repr(float(v)) for v in row) + "\n")


def _stream_seed(seed: int, *names) -> int:
    """Deterministic child seed for helpers that take an integer seed."""
    return int(named_rng(seed, *names).integers(2**31))


def full_spectra(sim, top_bins: int = 16):
    """Per-bin full eigenvalue spectra over the top-energy bins."""
    stack = stack_stfts(
        [stft_analyze(s, sim.frame_len, sim.frame_shift) for s in sim.mic_signals]
    )
    per_bin = np.sum(np.abs(stack.values) ** 2, axis=(0, 1))
    bins = _select_bins(per_bin, top_bins)
    cov = sample_covariance(stack.values[:, :, bins])
    eigs = centralized_evd(cov)
    return eigs.eigenvalues, stack.n_segments, bins


def enumeration_trial(
    seed: int,
    snr_db: float,
    n_sources: int = 4,
    methods=("lappo", "edc"),
    top_bins: int = 16,
    n_w: int = 1000,
    duration: float = 10.0,
    frame_len: int = 2048,
    frame_shift: int = 1024,
):
    """One source-count estimate per method on a fresh random scene."""
    scene = acoustics.enumeration_scene(
        n_sources, seed=seed, duration=duration, snr_db=snr_db
    )
    sim = acoustics.simulate_scenario(
        scene, seed=seed, frame_len=frame_len, frame_shift=frame_shift
    )
    spectra, n_seg, _ = full_spectra(sim, top_bins)
    out = {}
    for method in methods:
        res = enumerate_spectra(
            spectra, n_samples=n_seg, method=method, n_w=n_w, seed=seed
        )
        out[method] = res["q_hat"]
    return out


def _experiment_lappo_snr_sweep(cfg: PipelineConfig, ws: Path) -> list:
    snrs = (-10.0, -5.0, 0.0, 5.0, 10.0, 15.0)
    methods = ("lappo", "edc")
    rows = {m: [] for m in methods}
    for snr in snrs:
        seeds = [_stream_seed(cfg.seed, "lappo-sweep", snr, t) for t in range(cfg.trials)]
        counts = parallel_map(
            lambda s: enumeration_trial(s, snr, methods=methods),
            seeds,
            threads=cfg.threads,
        )
        for m in methods:
            err = np.array([abs(c[m] - 4.0) for c in counts])
            rows[m].append((snr, err.mean(), err.std(ddof=1) / np.sqrt(err.size)))
    files = []
    for m in methods:
        path = ws / f"lappo_snr_sweep_{m}.csv"
        _write_xy_csv(path, rows[m])
        files.append(path)
    return files


def smd_trial(seed: int, n_samples: int, snr_db: float) -> float:
    """Node misclassification on one synthetic mixing draw."""
    scen = acoustics.generate_smd_scenario(
        seed=seed, n_samples=n_samples, snr_db=snr_db
    )
    Y = scen.observation_matrix()
    cov = sample_covariance(Y[:, :, None])
    eigs = centralized_evd(cov, phi=len(scen.truth.sources))
    ind = build_indicator(eigs, len(scen.truth.sources))
    assign = lonas_cluster(ind, len(scen.truth.sources))
    return emis(assign, scen.truth)


def _experiment_smd_emis_sweep(cfg: PipelineConfig, ws: Path) -> list:
    sample_grid = (25, 50, 100, 200, 400)
    snr_db = 6.0
    rows = []
    for n in sample_grid:
        seeds = [_stream_seed(cfg.seed, "smd-sweep", n, t) for t in range(cfg.trials)]
        vals = np.array(
            parallel_map(
                lambda s: smd_trial(s, n, snr_db), seeds, threads=cfg.threads
            )
        )
        rows.append((n, vals.mean(), vals.std(ddof=1) / np.sqrt(vals.size)))
    path = ws / "smd_emis_sweep.csv"
    _write_xy_csv(path, rows)
    return [path]


def _estimated_assignment(sim, q: int, phi: int, top_bins: int = 16):
    """Cluster channels of a simulation from scratch (indicator + ncut)."""
    stack = stack_stfts(
        [stft_analyze(s, sim.frame_len, sim.frame_shift) for s in sim.mic_signals]
    )
    per_bin = np.sum(np.abs(stack.values) ** 2, axis=(0, 1))
    bins = _select_bins(per_bin, top_bins)
    cov = sample_covariance(stack.values[:, :, bins])
    eigs = centralized_evd(cov, phi=phi)
    ind = build_indicator(eigs, q)
    return lonas_cluster(ind, q, channel_nodes=sim.channel_nodes)


def _energy_matrix(sim) -> np.ndarray:
    rows = []
    for sig in sim.mic_signals:
        tensor = stft_analyze(sig, sim.frame_len, sim.frame_shift)
        rows.append(segment_energy(tensor, 0).values)
    return np.vstack(rows)


def unmix_compare_trial(seed: int, n_sources: int = 6, n_nodes: int = 20):
    """Per-true-source Pearson for cluster-local vs whole-network unmixing."""
    scenario, _ = acoustics.clustered_scene(n_sources, n_nodes, seed=seed)
    sim = acoustics.simulate_scenario(scenario, seed=seed)
    energies = _energy_matrix(sim)
    truth_vals = [t.values for t in sim.source_tracks]

    assign = _estimated_assignment(sim, n_sources, phi=n_sources)
    local_tracks = []
    for q in sorted(assign.sources):
        members = set(assign.sources[q])
        idx = [c for c, node in enumerate(sim.channel_nodes) if node in members]
        res = mnica_two(energies[idx], seed=named_rng(seed, "local", q))
        local_tracks.append(res.estimate.values)

    central = mnica_multi(energies, n_sources, seed=named_rng(seed, "central"))
    central_tracks = [r.estimate.values for r in central]

    out = {}
    for name, tracks in (("local", local_tracks), ("central", central_tracks)):
        match = _match_to_truth(tracks, truth_vals)
        per_source = np.zeros(n_sources)
        for i, (j, r) in match.items():
            per_source[j] = r
        out[name] = per_source
    return out["local"], out["central"]


def _experiment_unmix_table(cfg: PipelineConfig, ws: Path) -> list:
    n_scenes = min(cfg.trials, 10)
    seeds = [_stream_seed(cfg.seed, "unmix-table", t) for t in range(n_scenes)]
    pairs = parallel_map(unmix_compare_trial, seeds, threads=cfg.threads)
    local = np.vstack([p[0] for p in pairs])
    central = np.vstack([p[1] for p in pairs])
    files = []
    for name, mat in (("lonas", local), ("central", central)):
        rows = [
            (q + 1, mat[:, q].mean(), mat[:, q].std(ddof=1) / np.sqrt(mat.shape[0]))
            for q in range(mat.shape[1])
        ]
        path = ws / f"unmix_table_{name}.csv"
        _write_xy_csv(path, rows, header=("x", "y", "stderr"))
        files.append(path)
    return files


def vad_table_trial(
    seed: int,
    n_sources: int = 7,
    n_nodes: int = 20,
    method: str = "kmeans",
    window: int = 10,
    burst_sources=(2, 5),
    duration: float = 24.0,
):
    """Detection reports per true source, without and with correction.

    Returns a list of (truth_source, report_plain, report_corrected)."""
    scenario, _ = acoustics.clustered_scene(
        n_sources, n_nodes, seed=seed, duration=duration, burst_sources=burst_sources
    )
    sim = acoustics.simulate_scenario(scenario, seed=seed)
    energies = _energy_matrix(sim)
    assign = _estimated_assignment(sim, n_sources, phi=n_sources)

    est_tracks = {}
    for q in sorted(assign.sources):
        members = set(assign.sources[q])
        idx = [c for c, node in enumerate(sim.channel_nodes) if node in members]
        res = mnica_two(energies[idx], seed=named_rng(seed, "vad-table", q))
        est_tracks[q] = res.estimate.values

    truth_vals = [t.values for t in sim.source_tracks]
    est_ids = sorted(est_tracks)
    match = _match_to_truth([est_tracks[q] for q in est_ids], truth_vals)

    out = []
    for i, q in enumerate(est_ids):
        if i not in match:
            continue
        j, _ = match[i]
        track = EnergyTrack(est_tracks[q])
        plain = batch_vad(
            track, window=window, method=method, correction=False,
            seed=named_rng(seed, "vad-plain", q),
        )
        fixed = batch_vad(
            track, window=window, method=method, correction=True,
            seed=named_rng(seed, "vad-fixed", q),
        )
        truth = sim.activity[j][window : window + plain.final.size].astype(int)
        out.append((j + 1, score(plain, truth), score(fixed, truth)))
    out.sort(key=lambda row: row[0])
    return out


def _experiment_vad_tables(cfg: PipelineConfig, ws: Path) -> list:
    files = []
    for method in _VAD_METHODS:
        rows = vad_table_trial(
            _stream_seed(cfg.seed, "vad-tables"), method=method, window=cfg.vad_window
        )
        path = ws / f"vad_tables_{method}.csv"
        with open(path, "w", newline="") as fh:
            fh.write("source,variant,CD,MD,FA,EER,Cllr_min\n")
            for q, plain, fixed in rows:
                for variant, rep in (("dmvad", plain), ("dmvad_plus", fixed)):
                    cells = [str(q), variant]
                    cells += [
                        float_repr(v) for v in (rep.cd, rep.md, rep.fa)
                    ]
                    cells += [
                        "" if v != v else float_repr(v)
                        for v in (rep.eer, rep.cllr_min)
                    ]
                    fh.write(",".join(cells) + "\n")
        files.append(path)
    return files


def seq_agreement_curve(
    values,
    window: int = 10,
    method: str = "kmeans",
    window_mode: str = "growing",
    seed=0,
):
    """Cumulative agreement of sequential against batch decisions.

    Returns (segments, cumulative agreement in [0, 1]) over the overlap of
    the two decision tracks."""
    values = np.asarray(values, dtype=np.float64)
    batch = batch_vad(EnergyTrack(values), window=window, method=method, seed=seed)
    seq = sequential_vad(
        values, window=window, window_mode=window_mode, method=method, seed=seed
    )
    offset = seq.start_segment - batch.start_segment
    ref = batch.final[offset : offset + seq.final.size]
    agree = (seq.final[: ref.size] == ref).astype(float)
    cum = np.cumsum(agree) / np.arange(1, agree.size + 1)
    segments = np.arange(seq.start_segment, seq.start_segment + agree.size)
    return segments, cum


def _experiment_seq_convergence(cfg: PipelineConfig, ws: Path) -> list:
    n_streams = min(cfg.trials, 8)
    curves = []
    n_min = None
    for t in range(n_streams):
        sig = acoustics.speech_surrogate(
            90.0, seed=_stream_seed(cfg.seed, "seq-conv", t)
        )
        track = source_energy_oracle(sig, cfg.frame_len, cfg.frame_shift)
        segs, cum = seq_agreement_curve(
            track.values,
            window=cfg.vad_window,
            method=cfg.vad_method,
            window_mode=cfg.window_mode,
            seed=named_rng(cfg.seed, "seq-conv-vad", t),
        )
        curves.append(cum)
        n_min = cum.size if n_min is None else min(n_min, cum.size)
    mat = np.vstack([c[:n_min] for c in curves])
    rows = [
        (
            i + 1,
            mat[:, i].mean(),
            mat[:, i].std(ddof=1) / np.sqrt(mat.shape[0]) if mat.shape[0] > 1 else 0.0,
        )
        for i in range(n_min)
    ]
    path = ws / "seq_convergence.csv"
    _write_xy_csv(path, rows)
    return [path]


EXPERIMENTS = {
    "lappo_snr_sweep": _experiment_lappo_snr_sweep,
    "smd_emis_sweep": _experiment_smd_emis_sweep,
    "unmix_table": _experiment_unmix_table,
    "vad_tables": _experiment_vad_tables,
    "seq_convergence": _experiment_seq_convergence,
}


def run_experiment(name: str, config) -> list:
    """Run a named validation experiment; returns the written CSV paths."""
    cfg = _as_config(config)
    if name not in EXPERIMENTS:
        raise ConfigError(
            f"unknown experiment '{name}'; choose from {sorted(EXPERIMENTS)}"
        )
    ws = Path(cfg.out_dir)
    ws.mkdir(parents=True, exist_ok=True)
    try:
        return EXPERIMENTS[name](cfg, ws)
    except ConfigError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc
