"""Scene synthesis: propagation model, babble, and the energy benchmark."""

import numpy as np
import pytest

from wasnvad._util import named_rng
from wasnvad.acoustics import (
    SPEED_OF_SOUND,
    NodeGeometry,
    NoiseSpec,
    Scenario,
    SourceSpec,
    fig1_scenario,
    fig1_truth,
    generate_smd_scenario,
    scenario_from_json,
    scenario_to_json,
    simulate_scenario,
    speech_surrogate,
    synth_babble,
)
from wasnvad.signals import TimeSignal, segment_energy, stft_analyze
from wasnvad.unmixing import pearson

FS = 16000


def _white_signal(seed, duration=4.0):
    rng = np.random.default_rng(seed)
    w = rng.standard_normal(int(duration * FS))
    return TimeSignal(w / np.sqrt(np.mean(w**2)), FS)


def _free_field(nodes, sources, noise=None):
    return Scenario(
        room_dims=(8.0, 6.0, 3.0),
        reflection=0.0,
        nodes=nodes,
        sources=sources,
        noise=noise or NoiseSpec("white_gaussian", variance=0.0),
    )


def _mic_track(result, channel):
    tensor = stft_analyze(result.mic_signals[channel], result.frame_len, result.frame_shift)
    return segment_energy(tensor, 0).values


def test_inverse_square_law():
    # unit-power emitter, mics at 4 m and 2 m, free field
    scen = _free_field(
        [NodeGeometry((5.0, 1.0, 1.5)), NodeGeometry((3.0, 1.0, 1.5))],
        [SourceSpec([(1.0, 1.0, 1.5)], _white_signal(11))],
    )
    res = simulate_scenario(scen, seed=0)
    p_far = np.mean(res.mic_signals[0].samples ** 2)
    assert np.isclose(p_far, 1.0 / (4 * np.pi * 4.0**2), rtol=0.02)


def test_two_mic_power_ratio():
    scen = _free_field(
        [NodeGeometry((5.0, 1.0, 1.5)), NodeGeometry((3.0, 1.0, 1.5))],
        [SourceSpec([(1.0, 1.0, 1.5)], _white_signal(11))],
    )
    res = simulate_scenario(scen, seed=0)
    p1 = np.mean(res.mic_signals[0].samples ** 2)  # d1 = 4
    p2 = np.mean(res.mic_signals[1].samples ** 2)  # d2 = 2
    assert np.isclose(p1 / p2, (2.0 / 4.0) ** 2, rtol=0.02)


def test_mixing_matrix_direct_path_gains():
    scen = _free_field(
        [NodeGeometry((5.0, 1.0, 1.5)), NodeGeometry((3.0, 1.0, 1.5))],
        [SourceSpec([(1.0, 1.0, 1.5)], _white_signal(11))],
    )
    res = simulate_scenario(scen, seed=0)
    expect = 1.0 / (4 * np.pi * np.array([[4.0], [2.0]]) ** 2)
    np.testing.assert_allclose(res.mixing.values, expect, rtol=1e-12)


def test_mixing_columns_follow_source_order():
    near = SourceSpec([(4.5, 2.0, 1.5)], _white_signal(1))
    far = SourceSpec([(1.0, 5.0, 1.5)], _white_signal(2))
    scen = _free_field(
        [
            NodeGeometry((5.0, 2.0, 1.5)),
            NodeGeometry((2.0, 4.0, 1.5)),
            NodeGeometry((6.0, 5.0, 1.5)),
        ],
        [near, far],
    )
    res = simulate_scenario(scen, seed=0)
    npos = [np.array(n.position) for n in scen.nodes]
    for q, src in enumerate(scen.sources):
        spos = np.array(src.positions[0])
        d = np.array([np.linalg.norm(p - spos) for p in npos])
        np.testing.assert_allclose(res.mixing.values[:, q], 1.0 / (4 * np.pi * d**2))


def test_single_source_track_proportional():
    # zero noise, one source: every mic energy track matches the source
    # track exactly once the propagation delay (< 1 segment) is removed
    scen = _free_field(
        [NodeGeometry((4.0, 2.0, 1.5)), NodeGeometry((2.5, 4.0, 1.5))],
        [SourceSpec([(1.0, 1.0, 1.5)], {"kind": "surrogate", "duration": 6.0, "seed": 2})],
    )
    res = simulate_scenario(scen, seed=1)
    src = res.source_tracks[0].values
    spos = np.array([1.0, 1.0, 1.5])
    for ch, node in enumerate(scen.nodes):
        raw = _mic_track(res, ch)
        n = min(len(raw), len(src))
        assert pearson(raw[:n], src[:n]) > 0.99

        d = np.linalg.norm(np.array(node.position) - spos)
        delay = int(round(d / SPEED_OF_SOUND * FS))
        shifted = TimeSignal(res.mic_signals[ch].samples[delay:], FS)
        mic = segment_energy(
            stft_analyze(shifted, res.frame_len, res.frame_shift), 0
        ).values
        n = min(len(mic), len(src))
        assert pearson(mic[:n], src[:n]) > 1 - 1e-9
        active = src[:n] > 1e-6 * src.max()
        ratio = mic[:n][active] / src[:n][active]
        np.testing.assert_allclose(ratio, ratio[0], rtol=1e-9)


def test_zeroed_waveform_contributes_nothing():
    nodes = [
        NodeGeometry((5.0, 2.0, 1.5)),
        NodeGeometry((2.0, 4.0, 1.5)),
        NodeGeometry((6.0, 5.0, 1.5)),
    ]
    live = SourceSpec([(1.0, 1.0, 1.5)], _white_signal(4))
    silent = SourceSpec([(7.0, 5.0, 1.5)], TimeSignal(np.zeros(4 * FS), FS))

    both = Scenario((8.0, 6.0, 3.0), 0.3, nodes, [live, silent])
    solo = Scenario((8.0, 6.0, 3.0), 0.3, nodes, [live])
    res_both = simulate_scenario(both, seed=7)
    res_solo = simulate_scenario(solo, seed=7)
    for a, b in zip(res_both.mic_signals, res_solo.mic_signals):
        np.testing.assert_array_equal(a.samples, b.samples)
    assert np.all(res_both.activity[1] == False)  # noqa: E712


def test_simulation_determinism():
    scen, _ = _scene_pair()
    r1 = simulate_scenario(scen, seed=3)
    r2 = simulate_scenario(scen, seed=3)
    for a, b in zip(r1.mic_signals, r2.mic_signals):
        np.testing.assert_array_equal(a.samples, b.samples)
    np.testing.assert_array_equal(r1.mixing.values, r2.mixing.values)


def _scene_pair():
    scen = Scenario(
        room_dims=(8.0, 6.0, 3.0),
        reflection=0.2,
        nodes=[
            NodeGeometry((5.0, 2.0, 1.5), mic_count=2),
            NodeGeometry((2.0, 4.0, 1.5)),
        ],
        sources=[SourceSpec([(1.0, 1.0, 1.5)], {"kind": "surrogate", "duration": 2.0, "seed": 5})],
        noise=NoiseSpec("white_gaussian", variance=1e-4),
    )
    return scen, None


def test_source_outside_room_rejected():
    with pytest.raises(ValueError, match="outside room"):
        Scenario(
            room_dims=(4.0, 4.0, 3.0),
            reflection=0.0,
            nodes=[NodeGeometry((1.0, 1.0, 1.5)), NodeGeometry((2.0, 1.0, 1.5))],
            sources=[SourceSpec([(5.0, 1.0, 1.5)], _white_signal(0))],
        )


def test_too_many_sources_rejected():
    nodes = [NodeGeometry((1.0, 1.0, 1.5)), NodeGeometry((2.0, 2.0, 1.5))]
    srcs = [
        SourceSpec([(0.5, 0.5, 1.5)], _white_signal(0)),
        SourceSpec([(3.0, 3.0, 1.5)], _white_signal(1)),
    ]
    with pytest.raises(ValueError, match="below node count"):
        Scenario((4.0, 4.0, 3.0), 0.0, nodes, srcs)


def test_babble_single_voice_is_one_gated_stream():
    # n_voices=1 collapses to one surrogate stream rescaled to the target
    # power; the pause gating survives as exact zeros
    b = synth_babble(4.0, 1, seed=5, variance=1.0)
    surr = speech_surrogate(4.0, seed=named_rng(5, "babble")).samples
    np.testing.assert_allclose(b.samples, surr * np.sqrt(1.0 / np.mean(surr**2)))
    assert np.mean(b.samples == 0.0) > 0.1


def test_babble_rejects_zero_voices():
    with pytest.raises(ValueError, match="at least 1"):
        synth_babble(1.0, 0)


def test_babble_long_run_power():
    for var in (2.5, 0.3):
        b = synth_babble(20.0, 8, seed=3, variance=var)
        assert abs(np.mean(b.samples**2) - var) <= 0.03 * var


def test_babble_burstier_than_white_noise():
    b = synth_babble(30.0, 6, seed=7, variance=1.0).samples
    wn = np.random.default_rng(0).standard_normal(len(b))
    wn *= np.sqrt(np.mean(b**2) / np.mean(wn**2))

    def energy_spread(x):
        track = segment_energy(stft_analyze(TimeSignal(x, FS), 2048, 1024), 0).values
        return np.var(track) / np.mean(track) ** 2

    assert energy_spread(b) > 10 * energy_spread(wn)


def test_smd_truth_membership():
    smd = generate_smd_scenario(seed=0)
    assert smd.truth.sources[3] == [1, 3]
    assert smd.truth.dummy == [2, 11, 12]
    assert smd.truth.sources[1] == [4, 5, 6, 7]
    assert smd.truth.sources[2] == [8, 9, 10]


def test_smd_zero_variance_transfer():
    smd = generate_smd_scenario(seed=4, variances=(0.0, 0.0, 0.0))
    H = smd.transfer
    assert np.count_nonzero(H) == 9
    assert np.all(H[H != 0] == 1.0)


def test_smd_determinism():
    a = generate_smd_scenario(seed=12)
    b = generate_smd_scenario(seed=12)
    np.testing.assert_array_equal(a.observation_matrix(), b.observation_matrix())
    np.testing.assert_array_equal(a.transfer, b.transfer)


def test_fig1_layout_geometry():
    scen = fig1_scenario(duration=1.0)
    truth = fig1_truth()
    assert scen.n_sources < scen.n_nodes
    assert sum(len(s.positions) for s in scen.sources) == 7
    labeled = {n for members in truth.sources.values() for n in members}
    assert sorted(labeled | set(truth.dummy)) == list(range(1, 21))
    npos = np.array([n.position for n in scen.nodes])
    for src in scen.sources:
        dmin = min(
            np.linalg.norm(npos - np.array(p), axis=1).min() for p in src.positions
        )
        assert dmin <= 3.0


def test_scenario_json_round_trip(tmp_path):
    scen = Scenario(
        room_dims=(8.0, 6.0, 3.0),
        reflection=0.25,
        nodes=[
            NodeGeometry((5.0, 2.0, 1.5), mic_count=2, array_spacing=0.02),
            NodeGeometry((2.0, 4.0, 1.5)),
        ],
        sources=[SourceSpec([(1.0, 1.0, 1.5)], {"kind": "surrogate", "duration": 2.0, "seed": 5})],
        noise=NoiseSpec("white_gaussian", variance=1e-4),
        t60=0.25,
    )
    path = tmp_path / "scene.json"
    scenario_to_json(scen, path)
    back = scenario_from_json(path)
    assert back.room_dims == scen.room_dims
    assert back.reflection == scen.reflection
    assert back.t60 == scen.t60
    assert [n.position for n in back.nodes] == [n.position for n in scen.nodes]
    assert back.nodes[0].mic_count == 2
    assert [s.positions for s in back.sources] == [s.positions for s in scen.sources]
    assert back.noise == scen.noise
    r1 = simulate_scenario(scen, seed=9)
    r2 = simulate_scenario(back, seed=9)
    for a, b in zip(r1.mic_signals, r2.mic_signals):
        np.testing.assert_array_equal(a.samples, b.samples)


def test_raw_waveform_does_not_serialize():
    scen = _free_field(
        [NodeGeometry((5.0, 2.0, 1.5)), NodeGeometry((2.0, 4.0, 1.5))],
        [SourceSpec([(1.0, 1.0, 1.5)], _white_signal(0, duration=0.5))],
    )
    with pytest.raises(ValueError, match="descriptor"):
        scenario_to_json(scen, "/tmp/never-written.json")
