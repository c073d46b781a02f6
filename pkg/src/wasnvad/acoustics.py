"""Multi-source acoustic scene synthesis with ground truth.

Propagation is a simplified free-field model: inverse-square direct path at
an integer-sample delay plus, when reflection > 0, an exponentially decaying
diffuse tail matched to a target T60. Ground-truth energies and activity come
from the clean source waveforms, so scoring never depends on the model.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

import numpy as np
from scipy.signal import fftconvolve, lfilter

from ._util import named_rng
from .lonas import ClusterAssignment
from .signals import EnergyTrack, TimeSignal, read_wav, source_energy_oracle

SPEED_OF_SOUND = 343.0

_MIN_DISTANCE = 0.1


@dataclass
class NodeGeometry:
    """Uniform linear microphone array at a node."""

    position: tuple
    mic_count: int = 1
    array_spacing: float = 0.015
    orientation: float = 0.0

    def __post_init__(self):
        self.position = tuple(float(c) for c in self.position)
        if self.mic_count < 1:
            raise ValueError("mic_count must be at least 1")
        if self.array_spacing <= 0:
            raise ValueError("array_spacing must be positive")

    def mic_positions(self) -> np.ndarray:
        """(M_k, 3) mic coordinates, array centered on the node position."""
        p = np.asarray(self.position, dtype=float)
        if p.size == 2:
            p = np.append(p, 0.0)
        out = np.tile(p, (self.mic_count, 1))
        offs = (np.arange(self.mic_count) - (self.mic_count - 1) / 2.0) * self.array_spacing
        out[:, 0] += offs * np.cos(self.orientation)
        out[:, 1] += offs * np.sin(self.orientation)
        return out


@dataclass
class SourceSpec:
    """A source with one or more emitters playing the same waveform.

    waveform is either a TimeSignal or a descriptor dict such as
    {"kind": "surrogate", "duration": 10.0, "seed": 3, "burstiness": 0.0}
    resolved at simulation time (descriptors keep scenario configs JSON-able).
    """

    positions: list
    waveform: object
    activity_truth: np.ndarray | None = None

    def __post_init__(self):
        if isinstance(self.positions[0], (int, float)):
            self.positions = [self.positions]
        self.positions = [tuple(float(c) for c in p) for p in self.positions]


@dataclass
class NoiseSpec:
    """Sensor noise: white Gaussian or synthetic babble.

    When snr_db is set, variance is derived from the mean clean microphone
    power at simulation time and the variance field is ignored.
    """

    kind: str = "white_gaussian"
    variance: float = 0.0
    snr_db: float | None = None

    def __post_init__(self):
        if self.kind not in ("white_gaussian", "synthetic_babble"):
            raise ValueError(f"unknown noise kind: {self.kind}")
        if self.variance < 0:
            raise ValueError("variance must be non-negative")


@dataclass
class MixingMatrix:
    """Non-negative per-channel direct-path power gains, column per source."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError("mixing matrix must be 2-D")
        if self.values.size and self.values.min() < 0:
            raise ValueError("mixing entries must be non-negative")


@dataclass
class Scenario:
    room_dims: tuple
    reflection: float
    nodes: list
    sources: list
    sample_rate: int = 16000
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    t60: float = 0.3
    rir_dir: str | None = None

    def __post_init__(self):
        self.room_dims = tuple(float(d) for d in self.room_dims)
        if len(self.room_dims) != 3 or min(self.room_dims) <= 0:
            raise ValueError("room_dims must be three positive extents")
        refl = np.atleast_1d(np.asarray(self.reflection, dtype=float))
        if refl.min() < 0 or refl.max() >= 1:
            raise ValueError("reflection coefficients must lie in [0, 1)")
        self.reflection = float(refl.mean()) if refl.size > 1 else float(refl[0])
        if len(self.sources) >= len(self.nodes):
            raise ValueError("source count must stay below node count")
        for node in self.nodes:
            self._check_inside(node.position, "node")
        for src in self.sources:
            for p in src.positions:
                self._check_inside(p, "source")

    def _check_inside(self, pos, what):
        p = tuple(pos) + (0.0,) * (3 - len(pos))
        for c, d in zip(p, self.room_dims):
            if c < 0 or c > d:
                raise ValueError(f"{what} position {pos} outside room {self.room_dims}")

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_sources(self) -> int:
        return len(self.sources)

    @property
    def n_channels(self) -> int:
        return sum(n.mic_count for n in self.nodes)


@dataclass
class SimulationResult:
    mic_signals: list  # TimeSignal per channel, node-major order
    channel_nodes: list  # owning 1-based node id per channel
    source_tracks: list  # clean EnergyTrack per source
    activity: list  # boolean per-segment truth per source
    mixing: MixingMatrix
    frame_len: int
    frame_shift: int


def _as_rng(seed, *names):
    if isinstance(seed, np.random.Generator):
        return seed
    return named_rng(seed, *names)


def speech_surrogate(
    duration: float,
    sample_rate: int = 16000,
    seed=0,
    pause_ratio: float = 0.4,
    burstiness: float = 0.0,
) -> TimeSignal:
    """Amplitude-modulated lowpass noise with alternating talk/pause spurts.

    Active-region RMS is normalized to 1. burstiness in [0, 1] skews the
    level modulation heavy-tailed, producing faint talk spurts.
    """
    if not 0 < pause_ratio < 1:
        raise ValueError("pause_ratio must lie in (0, 1)")
    rng = _as_rng(seed, "surrogate")
    n = int(round(duration * sample_rate))
    if n < 1:
        raise ValueError("duration too short")

    # talk/pause spurt lengths; defaults average to the requested pause share
    pscale = (pause_ratio / (1.0 - pause_ratio)) / (1.5 / 2.25)
    gate = np.zeros(n, dtype=bool)
    t = 0
    active = bool(rng.integers(0, 2))
    while t < n:
        if active:
            dur = rng.uniform(1.0, 3.5)
        else:
            dur = rng.uniform(0.6, 2.4) * pscale
        seg = max(int(round(dur * sample_rate)), 1)
        if active:
            gate[t : t + seg] = True
        t += seg
        active = not active

    # slow level modulation, piecewise-linear between 10 ms control points
    hop = max(int(round(0.01 * sample_rate)), 1)
    n_hop = n // hop + 2
    raw = np.abs(rng.standard_normal(n_hop))
    env = np.convolve(raw, np.ones(9) / 9.0, mode="same")
    env = 0.35 + env / env.max()
    if burstiness > 0:
        env = env ** (1.0 + 3.0 * burstiness)
    env_t = np.interp(np.arange(n) / hop, np.arange(n_hop), env)

    carrier = lfilter([0.05], [1.0, -0.95], rng.standard_normal(n))
    x = np.where(gate, env_t * carrier, 0.0)
    act = x[gate]
    if act.size:
        x = x / max(np.sqrt(np.mean(act**2)), 1e-300)
    return TimeSignal(x, sample_rate)


def synth_babble(
    duration: float,
    n_voices: int,
    seed=0,
    sample_rate: int = 16000,
    variance: float = 1.0,
) -> TimeSignal:
    """Sum of independently gated lowpass noise streams at a target power."""
    if n_voices < 1:
        raise ValueError("n_voices must be at least 1")
    rng = _as_rng(seed, "babble")
    n = int(round(duration * sample_rate))
    acc = np.zeros(n)
    for _ in range(n_voices):
        acc += speech_surrogate(duration, sample_rate, seed=rng).samples
    power = np.mean(acc**2)
    if power > 0:
        acc *= np.sqrt(variance / power)
    return TimeSignal(acc, sample_rate)


def activity_from_track(track, rel_threshold: float = 0.01) -> np.ndarray:
    """Active = segment energy above rel_threshold of the track maximum."""
    vals = track.values if isinstance(track, EnergyTrack) else np.asarray(track, float)
    peak = vals.max() if vals.size else 0.0
    if peak <= 0:
        return np.zeros(vals.shape, dtype=bool)
    return vals > rel_threshold * peak


def _direct_gain(d: float) -> float:
    return 1.0 / (np.sqrt(4.0 * np.pi) * max(d, _MIN_DISTANCE))


def _impulse_response(d, fs, reflection, t60, rng) -> np.ndarray:
    delay = int(round(d / SPEED_OF_SOUND * fs))
    g = _direct_gain(d)
    if reflection <= 0:
        h = np.zeros(delay + 1)
        h[delay] = g
        return h
    # diffuse tail: noise under an exponential envelope, total energy set by
    # the reflection coefficient, decay rate set by T60
    tail_len = int(np.ceil(t60 * fs))
    tau = t60 / (3.0 * np.log(10.0))
    t = np.arange(1, tail_len + 1) / fs
    tail = rng.standard_normal(tail_len) * np.exp(-t / tau)
    target = g * g * reflection**2 / (1.0 - reflection**2)
    ssq = np.sum(tail**2)
    if ssq > 0:
        tail *= np.sqrt(target / ssq)
    h = np.zeros(delay + 1 + tail_len)
    h[delay] = g
    h[delay + 1 :] = tail
    return h


def _resolve_waveform(spec: SourceSpec, q: int, fs: int, seed: int) -> np.ndarray:
    wf = spec.waveform
    if isinstance(wf, TimeSignal):
        if wf.sample_rate != fs:
            raise ValueError("source waveform sample rate differs from scenario")
        return wf.samples
    if isinstance(wf, dict):
        kind = wf.get("kind", "surrogate")
        if kind == "surrogate":
            sig = speech_surrogate(
                wf["duration"],
                fs,
                seed=named_rng(seed, "source", q, wf.get("seed", 0)),
                pause_ratio=wf.get("pause_ratio", 0.4),
                burstiness=wf.get("burstiness", 0.0),
            )
            return sig.samples
        if kind == "babble":
            sig = synth_babble(
                wf["duration"],
                wf.get("n_voices", 8),
                seed=named_rng(seed, "source", q, wf.get("seed", 0)),
                sample_rate=fs,
                variance=wf.get("variance", 1.0),
            )
            return sig.samples
        if kind == "wav":
            chans = read_wav(wf["path"])
            return chans[wf.get("channel", 0)].samples
        raise ValueError(f"unknown waveform kind: {kind}")
    raise TypeError("waveform must be a TimeSignal or a descriptor dict")


def _imported_rirs(scenario: Scenario, k: int, q: int) -> list[np.ndarray] | None:
    if scenario.rir_dir is None:
        return None
    import os

    path = os.path.join(scenario.rir_dir, f"rir_node{k}_src{q}.wav")
    if not os.path.exists(path):
        raise FileNotFoundError(f"missing imported impulse response: {path}")
    chans = read_wav(path)
    return [c.samples for c in chans]


def simulate_scenario(
    scenario: Scenario,
    seed: int = 0,
    frame_len: int = 2048,
    frame_shift: int = 1024,
) -> SimulationResult:
    """Render per-microphone signals plus ground truth for one scenario.

    Deterministic given (scenario, seed); RNG streams are split per node,
    mic, and source so parallel rendering would agree with serial.
    """
    fs = scenario.sample_rate
    waves = [
        _resolve_waveform(src, q + 1, fs, seed)
        for q, src in enumerate(scenario.sources)
    ]
    n = len(waves[0])
    if any(len(w) != n for w in waves):
        raise ValueError("all source waveforms must share one length")

    mic_pos = []
    channel_nodes = []
    for k, node in enumerate(scenario.nodes, start=1):
        for p in node.mic_positions():
            mic_pos.append(p)
            channel_nodes.append(k)
    n_ch = len(mic_pos)
    Q = scenario.n_sources

    clean = np.zeros((n_ch, n))
    H = np.zeros((n_ch, Q))
    ch = 0
    for k, node in enumerate(scenario.nodes, start=1):
        for i in range(node.mic_count):
            pos = mic_pos[ch]
            for q, src in enumerate(scenario.sources):
                imported = _imported_rirs(scenario, k, q + 1)
                if imported is not None:
                    h = imported[i]
                    H[ch, q] = np.sum(h**2)
                else:
                    h = np.zeros(1)
                    for e, epos in enumerate(src.positions):
                        ep = np.asarray(epos + (0.0,) * (3 - len(epos)))
                        d = float(np.linalg.norm(pos - ep))
                        rng = named_rng(seed, "rir", k, i, q, e)
                        he = _impulse_response(
                            d, fs, scenario.reflection, scenario.t60, rng
                        )
                        if len(he) > len(h):
                            he[: len(h)] += h
                            h = he
                        else:
                            h[: len(he)] += he
                        H[ch, q] += _direct_gain(d) ** 2
                clean[ch] += fftconvolve(waves[q], h)[:n]
            ch += 1

    noise = scenario.noise
    if noise.snr_db is not None:
        var = float(np.mean(clean**2)) / 10.0 ** (noise.snr_db / 10.0)
    else:
        var = noise.variance
    mic_signals = []
    ch = 0
    for k, node in enumerate(scenario.nodes, start=1):
        for i in range(node.mic_count):
            x = clean[ch]
            if var > 0:
                rng = named_rng(seed, "noise", k, i)
                if noise.kind == "white_gaussian":
                    x = x + rng.standard_normal(n) * np.sqrt(var)
                else:
                    x = x + synth_babble(
                        n / fs, 8, seed=rng, sample_rate=fs, variance=var
                    ).samples[:n]
            mic_signals.append(TimeSignal(x, fs))
            ch += 1

    source_tracks = []
    activity = []
    for q, w in enumerate(waves):
        track = source_energy_oracle(TimeSignal(w, fs), frame_len, frame_shift)
        track.label = f"source{q + 1}"
        source_tracks.append(track)
        activity.append(activity_from_track(track))

    return SimulationResult(
        mic_signals,
        channel_nodes,
        source_tracks,
        activity,
        MixingMatrix(H),
        frame_len,
        frame_shift,
    )


# --- energy-domain synthetic benchmark (no acoustics, fixed truth) ---

_SMD_OBSERVED = {1: (4, 5, 6, 7), 2: (8, 9, 10), 3: (1, 3)}
_SMD_DUMMY = (2, 11, 12)
_SMD_VARIANCES = (5e-4, 1e-3, 1e-3)


@dataclass
class SmdScenario:
    tracks: list  # EnergyTrack per node, 12 nodes
    truth: ClusterAssignment
    transfer: np.ndarray  # (12, 3) power transfer matrix
    source_tracks: list  # EnergyTrack per source

    def observation_matrix(self) -> np.ndarray:
        return np.vstack([t.values for t in self.tracks])


def generate_smd_scenario(
    seed: int = 0,
    n_samples: int = 200,
    snr_db: float | None = 18.0,
    variances=_SMD_VARIANCES,
) -> SmdScenario:
    """Three-source/twelve-node energy benchmark with known memberships.

    Each source reaches a fixed node subset through gains ~ N(1, variance_q);
    source energies are chi-square(1); additive chi-square noise is scaled to
    the requested SNR over the observed nodes.
    """
    rng = named_rng(seed, "smd")
    H = np.zeros((12, 3))
    for q, nodes in _SMD_OBSERVED.items():
        idx = np.asarray(nodes) - 1
        H[idx, q - 1] = 1.0 + rng.standard_normal(len(idx)) * np.sqrt(variances[q - 1])
    S = rng.chisquare(1, size=(3, n_samples))
    clean = H @ S
    observed = np.asarray(sorted({n for ns in _SMD_OBSERVED.values() for n in ns})) - 1
    if snr_db is None:
        nv = 0.0
    else:
        nv = float(np.var(clean[observed])) / 10.0 ** (snr_db / 10.0)
    Y = clean + rng.chisquare(1, size=(12, n_samples)) * np.sqrt(nv / 2.0)
    tracks = [EnergyTrack(Y[k], label=f"node{k + 1}") for k in range(12)]
    source_tracks = [EnergyTrack(S[q], label=f"source{q + 1}") for q in range(3)]
    truth = ClusterAssignment(
        {q: list(ns) for q, ns in _SMD_OBSERVED.items()}, list(_SMD_DUMMY)
    )
    return SmdScenario(tracks, truth, H, source_tracks)


# --- bundled demonstration layout (hand-placed, approximate) ---

_FIG1_NODES = {
    1: (0.8, 0.8), 2: (1.8, 7.6), 3: (3.2, 3.0), 4: (7.0, 6.0),
    5: (16.8, 8.6), 6: (18.3, 7.6), 7: (8.8, 0.8), 8: (13.2, 1.5),
    9: (4.9, 4.1), 10: (18.9, 3.8), 11: (14.9, 2.6), 12: (5.3, 8.4),
    13: (3.4, 4.3), 14: (14.5, 1.1), 15: (17.2, 7.1), 16: (4.6, 2.7),
    17: (12.0, 6.5), 18: (10.4, 1.7), 19: (11.8, 9.0), 20: (19.3, 0.7),
}

# source 1 is a two-emitter public-address pair playing one waveform
_FIG1_SOURCES = [
    [(2.0, 8.5, 2.5), (5.0, 9.2, 2.5)],
    [(17.5, 8.0, 1.5)],
    [(9.5, 1.2, 1.5)],
    [(14.0, 2.0, 1.5)],
    [(4.0, 3.5, 1.5)],
    [(18.5, 4.5, 1.5)],
]

_FIG1_CLUSTERS = {
    1: [2, 12], 2: [5, 6, 15], 3: [7, 18], 4: [8, 11, 14], 5: [3, 9, 13, 16], 6: [10],
}
_FIG1_DUMMY = [1, 4, 17, 19, 20]

FIG1_RADIO_RANGE = 6.0


def fig1_truth() -> ClusterAssignment:
    return ClusterAssignment(dict(_FIG1_CLUSTERS), list(_FIG1_DUMMY))


def fig1_scenario(duration: float = 60.0, reflection: float = 0.3) -> Scenario:
    """Twenty-node six-source room layout bundled for demonstrations."""
    nodes = [
        NodeGeometry(_FIG1_NODES[k] + (1.5,), mic_count=1) for k in sorted(_FIG1_NODES)
    ]
    sources = [
        SourceSpec(
            positions,
            {"kind": "surrogate", "duration": duration, "seed": 100 + q},
        )
        for q, positions in enumerate(_FIG1_SOURCES)
    ]
    return Scenario(
        room_dims=(20.0, 10.0, 3.0),
        reflection=reflection,
        nodes=nodes,
        sources=sources,
        sample_rate=16000,
        noise=NoiseSpec("white_gaussian", variance=1e-4),
    )


# --- randomized scene factories for benchmarks ---


def _sample_separated(rng, count, bounds, min_sep, max_tries=4000):
    (x0, x1), (y0, y1) = bounds
    pts = []
    for _ in range(max_tries):
        p = (rng.uniform(x0, x1), rng.uniform(y0, y1))
        if all(np.hypot(p[0] - q[0], p[1] - q[1]) >= min_sep for q in pts):
            pts.append(p)
            if len(pts) == count:
                return pts
    raise RuntimeError("could not place points with requested separation")


def clustered_scene(
    n_sources: int,
    n_nodes: int,
    seed: int = 0,
    duration: float = 12.0,
    mics_per_node: int = 1,
    noise_var: float = 0.01,
    room=(20.0, 10.0, 3.0),
    nodes_per_source: int = 2,
    burst_sources=(),
    source_sep: float = 3.0,
    scatter_margin: float = 2.5,
):
    """Random anechoic scene with a tight node cluster around each source.

    Remaining nodes are scattered away from every source. Returns the
    Scenario plus the geometric ground-truth ClusterAssignment; sources
    listed in burst_sources (1-based) get heavy-tailed level modulation.
    """
    rng = named_rng(seed, "scene")
    margin = 1.2
    bounds = ((margin, room[0] - margin), (margin, room[1] - margin))
    src_pts = _sample_separated(rng, n_sources, bounds, source_sep)

    node_pos = []
    clusters = {}
    nid = 1
    for q, sp in enumerate(src_pts, start=1):
        members = []
        for _ in range(nodes_per_source):
            for _ in range(2000):
                r = rng.uniform(0.6, 1.5)
                ang = rng.uniform(0, 2 * np.pi)
                p = (sp[0] + r * np.cos(ang), sp[1] + r * np.sin(ang))
                inside = (
                    margin / 2 <= p[0] <= room[0] - margin / 2
                    and margin / 2 <= p[1] <= room[1] - margin / 2
                )
                clear = all(
                    np.hypot(p[0] - op[0], p[1] - op[1]) >= 2.0
                    for j, op in enumerate(src_pts)
                    if j != q - 1
                )
                if inside and clear:
                    node_pos.append(p)
                    members.append(nid)
                    nid += 1
                    break
            else:
                raise RuntimeError("could not place a cluster node")
        clusters[q] = members
    scattered = []
    while nid <= n_nodes:
        for _ in range(4000):
            p = (rng.uniform(*bounds[0]), rng.uniform(*bounds[1]))
            if all(
                np.hypot(p[0] - sp[0], p[1] - sp[1]) >= scatter_margin
                for sp in src_pts
            ):
                node_pos.append(p)
                scattered.append(nid)
                nid += 1
                break
        else:
            raise RuntimeError("could not place a scattered node")

    nodes = [NodeGeometry(p + (1.5,), mic_count=mics_per_node) for p in node_pos]
    sources = [
        SourceSpec(
            [sp + (1.5,)],
            {
                "kind": "surrogate",
                "duration": duration,
                "seed": q,
                "burstiness": 0.7 if q in burst_sources else 0.0,
            },
        )
        for q, sp in enumerate(src_pts, start=1)
    ]
    scenario = Scenario(
        room_dims=room,
        reflection=0.0,
        nodes=nodes,
        sources=sources,
        sample_rate=16000,
        noise=NoiseSpec("white_gaussian", variance=noise_var),
    )
    return scenario, ClusterAssignment(clusters, scattered)


def enumeration_scene(
    n_sources: int,
    seed: int = 0,
    duration: float = 10.0,
    snr_db: float = 10.0,
    n_nodes: int = 20,
    mics_per_node: int = 3,
    room=(20.0, 10.0, 6.0),
):
    """Random room scene for source-count estimation benchmarks.

    Nodes are spread uniformly; noise variance follows the requested SNR
    against the mean clean microphone power.
    """
    rng = named_rng(seed, "enum-scene")
    margin = 1.0
    bounds = ((margin, room[0] - margin), (margin, room[1] - margin))
    src_pts = _sample_separated(rng, n_sources, bounds, 2.0)
    node_pts = [
        (rng.uniform(*bounds[0]), rng.uniform(*bounds[1])) for _ in range(n_nodes)
    ]
    nodes = [NodeGeometry(p + (1.5,), mic_count=mics_per_node) for p in node_pts]
    sources = [
        SourceSpec([sp + (1.5,)], {"kind": "surrogate", "duration": duration, "seed": q})
        for q, sp in enumerate(src_pts, start=1)
    ]
    return Scenario(
        room_dims=room,
        reflection=0.0,
        nodes=nodes,
        sources=sources,
        sample_rate=16000,
        noise=NoiseSpec("white_gaussian", snr_db=snr_db),
    )


# --- scenario JSON round trip ---


def scenario_to_json(scenario: Scenario, path) -> None:
    for src in scenario.sources:
        if not isinstance(src.waveform, dict):
            raise ValueError("only descriptor waveforms serialize to JSON")
    payload = {
        "room_dims": list(scenario.room_dims),
        "reflection": scenario.reflection,
        "sample_rate": scenario.sample_rate,
        "t60": scenario.t60,
        "rir_dir": scenario.rir_dir,
        "noise": asdict(scenario.noise),
        "nodes": [
            {
                "position": list(n.position),
                "mic_count": n.mic_count,
                "array_spacing": n.array_spacing,
                "orientation": n.orientation,
            }
            for n in scenario.nodes
        ],
        "sources": [
            {"positions": [list(p) for p in s.positions], "waveform": s.waveform}
            for s in scenario.sources
        ],
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def scenario_from_json(path) -> Scenario:
    with open(path) as fh:
        payload = json.load(fh)
    return scenario_from_payload(payload)


def scenario_from_payload(payload: dict) -> Scenario:
    nodes = [NodeGeometry(**n) for n in payload["nodes"]]
    sources = [SourceSpec(s["positions"], s["waveform"]) for s in payload["sources"]]
    return Scenario(
        room_dims=payload["room_dims"],
        reflection=payload["reflection"],
        nodes=nodes,
        sources=sources,
        sample_rate=payload.get("sample_rate", 16000),
        noise=NoiseSpec(**payload.get("noise", {})),
        t60=payload.get("t60", 0.3),
        rir_dir=payload.get("rir_dir"),
    )
