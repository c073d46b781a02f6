"""Per-source voice activity detection on unmixed energy tracks.

Three trailing-window features per segment feed an unsupervised two-class
partitional clustering (K-means, K-medians, or K-medoids); the class with
the smaller mean energy is the pause class. A robust correction step may
flip pause decisions whose mean energy sits closer to the active class
scale. Batch and sequential (streaming) modes share the same primitives.
"""
from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass

import numpy as np

from ._util import float_repr, named_rng
from .signals import EnergyTrack


@dataclass
class FeatureSeries:
    """Per-segment [short-term mean, short-term deviation, forward energy
    difference], for segments W+1..N (1-based)."""

    values: np.ndarray
    window: int

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[1] != 3:
            raise ValueError("features must be (n, 3)")

    @property
    def start_segment(self) -> int:
        return self.window + 1

    def __len__(self) -> int:
        return self.values.shape[0]


@dataclass
class Centroids:
    """Two labeled class centers; row 0 = pause, row 1 = active."""

    values: np.ndarray
    method: str = "kmeans"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (2, 3):
            raise ValueError("need exactly two 3-D centroids")
        if self.values[0, 0] > self.values[1, 0]:
            raise ValueError("pause centroid must have the smaller mean energy")


@dataclass
class VadTrack:
    """Binary decisions per segment, starting at start_segment (1-based)."""

    decisions: np.ndarray
    start_segment: int
    scores: np.ndarray | None = None
    corrected: np.ndarray | None = None

    def __post_init__(self):
        self.decisions = np.asarray(self.decisions, dtype=np.int8)
        if not np.isin(self.decisions, (0, 1)).all():
            raise ValueError("decisions must be binary")
        if self.scores is not None:
            self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.corrected is not None:
            self.corrected = np.asarray(self.corrected, dtype=np.int8)

    @property
    def final(self) -> np.ndarray:
        return self.corrected if self.corrected is not None else self.decisions


@dataclass
class DetectionReport:
    cd: float
    md: float
    fa: float
    eer: float
    cllr_min: float


def extract_features(track, window: int = 10) -> FeatureSeries:
    """Trailing-window statistics per segment.

    v1/v2 use the window of the last `window` values ending at the segment;
    v3 is the forward difference, zero on the final segment.
    """
    s = track.values if isinstance(track, EnergyTrack) else np.asarray(track, float)
    if window < 2:
        raise ValueError("window must be at least 2")
    N = s.size
    if N <= window:
        raise ValueError(f"track length {N} requires more than window={window} segments")
    sw = np.lib.stride_tricks.sliding_window_view(s, window)[1:]  # rows end at W..N-1
    v1 = sw.mean(axis=1)
    v2 = np.sqrt(np.mean((sw - v1[:, None]) ** 2, axis=1))
    v3 = np.zeros(N - window)
    v3[:-1] = s[window:-1] - s[window + 1 :]
    return FeatureSeries(np.column_stack([v1, v2, v3]), window)


def _check_points(X):
    if len(X) < 2 or len(np.unique(X, axis=0)) < 2:
        raise ValueError("clustering needs at least two distinct points")


def _order_pair(C: np.ndarray) -> np.ndarray:
    return C[::-1] if C[0, 0] > C[1, 0] else C


def _seed_pair(X, rng, metric="sq"):
    """First center random, second the farthest point from it."""
    i0 = int(rng.integers(len(X)))
    diff = X - X[i0]
    d = np.abs(diff).sum(axis=1) if metric == "l1" else (diff**2).sum(axis=1)
    i1 = int(np.argmax(d))
    return np.vstack([X[i0], X[i1]]).astype(float)


def _kmeans_iterate(X, C, iters=100):
    for _ in range(iters):
        d = ((X[:, None, :] - C[None]) ** 2).sum(axis=2)
        lab = d.argmin(axis=1)
        newC = np.array(
            [X[lab == j].mean(axis=0) if np.any(lab == j) else C[j] for j in range(2)]
        )
        if np.allclose(newC, C):
            break
        C = newC
    return C


def _kmedians_iterate(X, C, iters=100):
    for _ in range(iters):
        d = np.abs(X[:, None, :] - C[None]).sum(axis=2)
        lab = d.argmin(axis=1)
        newC = np.array(
            [np.median(X[lab == j], axis=0) if np.any(lab == j) else C[j] for j in range(2)]
        )
        if np.allclose(newC, C):
            break
        C = newC
    return C


def _kmedians_exhaustive(X):
    """Exact 1-norm 2-clustering by enumerating every proper bipartition."""
    n = len(X)
    best = None
    for mask_bits in range(2 ** (n - 1)):
        mask = np.zeros(n, dtype=bool)
        mask[0] = True  # fix point 0's side to skip mirrored partitions
        for i in range(1, n):
            mask[i] = bool((mask_bits >> (i - 1)) & 1)
        if mask.all():
            continue
        ca = np.median(X[mask], axis=0)
        cb = np.median(X[~mask], axis=0)
        cost = np.abs(X[mask] - ca).sum() + np.abs(X[~mask] - cb).sum()
        if best is None or cost < best[0]:
            best = (cost, ca, cb)
    return np.vstack([best[1], best[2]])


def _kmedoids_iterate(X, med_idx, iters=100):
    """Voronoi iteration; medoids stay dataset members (Euclidean cost)."""
    D = np.sqrt(((X[:, None, :] - X[None]) ** 2).sum(axis=2))
    med_idx = list(med_idx)
    for _ in range(iters):
        lab = np.argmin(D[:, med_idx], axis=1)
        new_idx = []
        for j in range(2):
            members = np.nonzero(lab == j)[0]
            if members.size == 0:
                new_idx.append(med_idx[j])
                continue
            costs = D[np.ix_(members, members)].sum(axis=0)
            new_idx.append(int(members[np.argmin(costs)]))
        if new_idx == med_idx:
            break
        med_idx = new_idx
    return med_idx


def cluster2(features, method: str = "kmeans", seed=0) -> Centroids:
    """Two-class partitional clustering of the feature rows.

    The pause class is the centroid with the smaller mean-energy coordinate.
    K-medians is solved exactly for up to 16 points, iteratively beyond
    that; K-medoids centroids are always dataset members.
    """
    X = features.values if isinstance(features, FeatureSeries) else np.asarray(features, float)
    _check_points(X)
    rng = seed if isinstance(seed, np.random.Generator) else named_rng(seed, "cluster2")
    if method == "kmeans":
        C = _kmeans_iterate(X, _seed_pair(X, rng))
    elif method == "kmedians":
        if len(X) <= 16:
            C = _kmedians_exhaustive(X)
        else:
            C = _kmedians_iterate(X, _seed_pair(X, rng, metric="l1"))
    elif method == "kmedoids":
        i0 = int(rng.integers(len(X)))
        d = np.sqrt(((X - X[i0]) ** 2).sum(axis=1))
        idx = _kmedoids_iterate(X, [i0, int(np.argmax(d))])
        C = X[idx].astype(float)
    else:
        raise ValueError(f"unknown clustering method: {method}")
    return Centroids(_order_pair(C), method)


def decide(features, centroids: Centroids) -> VadTrack:
    """Nearest-centroid decision; ties go to active (strict t1 < t2 rule).

    The per-segment score t2 - t1 is negative for speech-like segments.
    """
    fs = features if isinstance(features, FeatureSeries) else FeatureSeries(features, 2)
    V = fs.values
    C = centroids.values
    t1 = ((V - C[0]) ** 2).sum(axis=1)
    t2 = ((V - C[1]) ** 2).sum(axis=1)
    dec = (~(t1 < t2)).astype(np.int8)
    return VadTrack(dec, fs.start_segment, scores=t2 - t1)


def mad(x) -> float:
    """Median absolute deviation around the median."""
    x = np.asarray(x, dtype=float)
    return float(np.median(np.abs(x - np.median(x))))


def correct(track: VadTrack, features) -> VadTrack:
    """Robust pause-rescue step: flips 0 -> 1 where the short-term mean sits
    closer to the active-class scale estimate. Never flips 1 -> 0."""
    fs = features if isinstance(features, FeatureSeries) else FeatureSeries(features, 2)
    v1 = fs.values[:, 0]
    dec = track.decisions
    if v1.size != dec.size:
        raise ValueError("features and track must cover the same segments")
    out = dec.copy()
    m0, m1 = dec == 0, dec == 1
    if not m0.any() or not m1.any():
        warnings.warn("one decision class is empty: correction skipped")
    else:
        s0, s1 = mad(v1[m0]), mad(v1[m1])
        d0 = np.abs(v1 - s0)
        d1 = np.abs(v1 - s1)
        out[(dec == 0) & (d0 > d1)] = 1
    return VadTrack(dec, track.start_segment, scores=track.scores, corrected=out)


def batch_vad(
    track,
    window: int = 10,
    method: str = "kmeans",
    correction: bool = False,
    seed=0,
) -> VadTrack:
    """Whole-track VAD: features, two-class clustering, decision, optional
    correction."""
    feats = extract_features(track, window)
    cents = cluster2(feats, method, seed)
    decided = decide(feats, cents)
    if correction:
        decided = correct(decided, feats)
    return decided


def _parse_window_mode(window_mode: str):
    if window_mode == "growing":
        return None
    if window_mode.startswith("fixed"):
        tail = window_mode.split(":", 1)[1] if ":" in window_mode else window_mode[5:]
        limit = int(tail) if tail else 400
        if limit < 3:
            raise ValueError("fixed window too short")
        return limit
    raise ValueError(f"unknown window_mode: {window_mode}")


def sequential_vad(
    stream,
    window: int = 10,
    window_mode: str = "growing",
    method: str = "kmeans",
    seed=0,
    correction: bool = False,
) -> VadTrack:
    """Streaming VAD over a segment stream.

    Centroids are initialized once, at the first step with two feature rows
    (so the first decision lands on segment window+2), then warm-started
    every following step on the growing or trailing fixed-size window. The
    newest segment's forward difference is unknown at emission time and is
    taken as zero, exactly as on the final segment in batch mode.
    """
    s = stream.values if isinstance(stream, EnergyTrack) else np.asarray(stream, float)
    N = s.size
    if N < window + 2:
        raise ValueError("stream must be at least window+2 segments long")
    limit = _parse_window_mode(window_mode)
    rng = seed if isinstance(seed, np.random.Generator) else named_rng(seed, "seq-vad")

    full = extract_features(s, window).values  # final forward differences
    decisions = []
    scores = []
    C = None
    for t in range(window + 1, N):  # 0-based head segment
        lo = 0 if limit is None else max(0, t + 1 - limit)
        # only feature rows whose trailing window fits inside the data window
        first_row = window if lo == 0 else max(window, lo + window - 1)
        rows = full[first_row - window : t + 1 - window].copy()
        rows[-1, 2] = 0.0  # head's forward difference not yet observable
        feats = FeatureSeries(rows, window)
        if C is None:
            if np.unique(rows, axis=0).shape[0] < 2:
                # nothing to separate yet (e.g. stream opens inside a pause)
                decisions.append(0)
                scores.append(0.0)
                continue
            C = cluster2(feats, method, rng).values
        else:
            X = rows
            if method == "kmeans":
                C = _kmeans_iterate(X, C)
            elif method == "kmedians":
                C = _kmedians_iterate(X, C)
            elif method == "kmedoids":
                snap = [int(np.argmin(((X - C[j]) ** 2).sum(axis=1))) for j in range(2)]
                C = X[_kmedoids_iterate(X, snap)].astype(float)
            else:
                raise ValueError(f"unknown clustering method: {method}")
        C = _order_pair(C)
        head = rows[-1]
        t1 = float(((head - C[0]) ** 2).sum())
        t2 = float(((head - C[1]) ** 2).sum())
        d = 0 if t1 < t2 else 1
        if correction and d == 0:
            v1 = rows[:, 0]
            hist = decisions + [d]
            k = min(len(hist), v1.size)  # align on the trailing k segments
            past = np.asarray(hist[-k:], dtype=np.int8)
            pad = v1[-k:]
            m0 = past == 0
            m1 = past == 1
            if m0.any() and m1.any():
                s0, s1 = mad(pad[m0]), mad(pad[m1])
                if abs(pad[-1] - s0) > abs(pad[-1] - s1):
                    d = 1
        decisions.append(d)
        scores.append(t2 - t1)
    return VadTrack(
        np.asarray(decisions, dtype=np.int8),
        window + 2,
        scores=np.asarray(scores),
    )


def _pav(y: np.ndarray) -> np.ndarray:
    """Non-decreasing least-squares fit (pool adjacent violators)."""
    vals: list[float] = []
    counts: list[int] = []
    for v in y:
        vals.append(float(v))
        counts.append(1)
        while len(vals) > 1 and vals[-2] >= vals[-1]:
            total = vals[-1] * counts[-1] + vals[-2] * counts[-2]
            cnt = counts[-1] + counts[-2]
            vals.pop()
            counts.pop()
            vals[-1] = total / cnt
            counts[-1] = cnt
    return np.repeat(vals, counts)


def eer(scores, truth) -> float:
    """Equal error rate; speech is predicted when the score is small."""
    scores = np.asarray(scores, dtype=float)
    truth = np.asarray(truth).astype(bool)
    tar = scores[truth]
    non = scores[~truth]
    if tar.size == 0 or non.size == 0:
        warnings.warn("EER undefined with a single-class truth")
        return float("nan")
    grid = np.unique(scores)
    far = np.searchsorted(np.sort(non), grid, side="right") / non.size
    miss = 1.0 - np.searchsorted(np.sort(tar), grid, side="right") / tar.size
    d = far - miss
    idx = int(np.argmax(d >= 0))
    if d[idx] < 0:  # never crosses: curves meet at the top threshold
        return float((far[-1] + miss[-1]) / 2)
    if idx == 0 or d[idx] == 0:
        return float((far[idx] + miss[idx]) / 2)
    w = -d[idx - 1] / (d[idx] - d[idx - 1])
    return float(far[idx - 1] + w * (far[idx] - far[idx - 1]))


def cllr_min(scores, truth) -> float:
    """Minimum log-likelihood-ratio cost (bits) after optimal monotone
    calibration of the scores."""
    scores = np.asarray(scores, dtype=float)
    truth = np.asarray(truth).astype(bool)
    n_tar = int(truth.sum())
    n_non = truth.size - n_tar
    if n_tar == 0 or n_non == 0:
        warnings.warn("Cllr undefined with a single-class truth")
        return float("nan")
    order = np.argsort(-scores, kind="stable")  # ascending speechiness
    p = _pav(truth[order].astype(float))
    prior = n_tar / truth.size
    with np.errstate(divide="ignore"):
        llr = np.log(p) - np.log(1.0 - p) - (np.log(prior) - np.log(1.0 - prior))
    tar_mask = truth[order]
    c_tar = np.logaddexp(0.0, -llr[tar_mask]).mean()
    c_non = np.logaddexp(0.0, llr[~tar_mask]).mean()
    return float((c_tar + c_non) / (2.0 * np.log(2.0)))


def score(track, truth, scores=None) -> DetectionReport:
    """Frame-level detection metrics against binary truth.

    CD/MD/FA are percentages of all frames and sum to 100 exactly; EER and
    Cllr_min come from the per-frame scores (decide's t2 - t1 by default).
    """
    if isinstance(track, VadTrack):
        dec = track.final
        if scores is None:
            scores = track.scores
    else:
        dec = np.asarray(track).astype(np.int8)
    truth = np.asarray(truth).astype(np.int8)
    if dec.shape != truth.shape:
        raise ValueError("decision and truth lengths differ")
    n = truth.size
    cd = float(np.sum(dec == truth)) / n * 100.0
    md = float(np.sum((dec == 0) & (truth == 1))) / n * 100.0
    fa = float(np.sum((dec == 1) & (truth == 0))) / n * 100.0
    if scores is None:
        warnings.warn("no scores available: EER and Cllr_min undefined")
        e = c = float("nan")
    else:
        e = eer(scores, truth)
        c = cllr_min(scores, truth)
    return DetectionReport(cd, md, fa, e, c)


def write_decisions_csv(track: VadTrack, path) -> None:
    sc = track.scores
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["segment", "decision", "score"])
        for i, d in enumerate(track.final):
            val = float(sc[i]) if sc is not None else 0.0
            writer.writerow([track.start_segment + i, int(d), float_repr(val)])


def read_decisions_csv(path) -> VadTrack:
    segs, decs, scs = [], [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["segment", "decision", "score"]:
            raise ValueError(f"unexpected decisions CSV header: {header}")
        for seg, dec, sc in reader:
            segs.append(int(seg))
            decs.append(int(dec))
            scs.append(float(sc))
    if not segs:
        raise ValueError("empty decisions file")
    return VadTrack(np.asarray(decs), segs[0], scores=np.asarray(scs))


def write_report_json(report: DetectionReport, path) -> None:
    def _num(x):
        return None if x != x else x

    payload = {
        "CD": report.cd,
        "MD": report.md,
        "FA": report.fa,
        "EER": _num(report.eer),
        "Cllr_min": _num(report.cllr_min),
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")
