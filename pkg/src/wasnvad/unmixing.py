"""Non-negative unmixing of energy tracks via multiplicative updates.

Factorizes a cluster's per-channel energy matrix as H S with a penalty that
discourages correlated activation rows; returns the dominant component as
the cluster's source-energy estimate.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .signals import EnergyTrack


@dataclass
class ClusterEnergies:
    """Non-negative channels x segments energy matrix for one cluster."""

    values: np.ndarray
    channel_nodes: list | None = None

    def __post_init__(self):
        self.values = np.atleast_2d(np.asarray(self.values, dtype=np.float64))
        if self.values.min() < 0:
            raise ValueError("energies must be non-negative")

    @property
    def n_channels(self) -> int:
        return self.values.shape[0]

    @property
    def n_segments(self) -> int:
        return self.values.shape[1]


@dataclass
class UnmixResult:
    """One unmixed component: normalized track, background, mixing column."""

    estimate: EnergyTrack
    residual: EnergyTrack
    mixing: np.ndarray
    converged: bool = True


def mnica(Y, q: int, gamma=None, max_iters: int = 500, tol: float = 1e-6, seed=0):
    """Multiplicative-update factorization Y ~ H S with q components.

    The data is scaled to unit mean internally so results are invariant to
    the overall energy scale; gamma weights the decorrelation penalty of
    that normalized problem (default 0.1 M/q). Components are ordered by
    explained energy, descending. Returns (H, S, objectives, converged);
    the objective is non-increasing.
    """
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim != 2:
        raise ValueError("Y must be channels x segments")
    M, N = Y.shape
    if q < 1:
        raise ValueError("need at least one component")
    if Y.max() <= 0:
        raise ValueError("all-zero energies cannot be unmixed")
    if gamma is None:
        gamma = 0.1 * M / q
    mu = float(np.mean(Y))
    Yn = Y / mu
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)

    # deterministic start: leading non-negative rank-1 structure for the
    # first component, flat randomly scaled rows for the rest
    U, sv, Vt = np.linalg.svd(Yn, full_matrices=False)
    h1 = np.abs(U[:, 0]) * np.sqrt(sv[0])
    s1 = np.abs(Vt[0]) * np.sqrt(sv[0])
    H = np.empty((M, q))
    S = np.empty((q, N))
    H[:, 0] = h1
    S[0] = s1
    for j in range(1, q):
        H[:, j] = np.mean(h1) * (0.5 + rng.random(M))
        S[j] = np.mean(s1) * (0.5 + 0.1 * rng.standard_normal())
    S = np.abs(S)

    H, S, objs, converged = _kernels.mnica_run(Yn, H, S, float(gamma), max_iters, tol)
    root = np.sqrt(mu)
    H, S = H * root, S * root
    explained = [float(np.sum(np.outer(H[:, j], S[j]) ** 2)) for j in range(q)]
    order = np.argsort(-np.asarray(explained), kind="stable")
    return H[:, order], S[order], objs, converged


def _component_results(H, S, converged, labels=None) -> list[UnmixResult]:
    q = S.shape[0]
    out = []
    for j in range(q):
        smax = float(S[j].max())
        if smax > 0:
            est = S[j] / smax
            h = H[:, j] * smax
        else:
            est = S[j].copy()
            h = H[:, j].copy()
        others = S.sum(axis=0) - S[j]
        label = labels[j] if labels else f"component{j + 1}"
        out.append(
            UnmixResult(
                EnergyTrack(est, label=label),
                EnergyTrack(np.maximum(others, 0.0), label=f"{label}-residual"),
                h,
                converged,
            )
        )
    return out


def mnica_two(energies, max_iters: int = 500, tol: float = 1e-6, seed=0) -> UnmixResult:
    """Two-component unmixing; returns the dominant component.

    The estimate is scale-normalized to max 1 with the mixing column scaled
    inversely; the residual carries the background component's activation.
    """
    ce = energies if isinstance(energies, ClusterEnergies) else ClusterEnergies(energies)
    if ce.n_channels < 1:
        raise ValueError("need at least one channel")
    if ce.n_segments < 10:
        raise ValueError("need at least 10 segments")
    H, S, _, converged = mnica(ce.values, 2, max_iters=max_iters, tol=tol, seed=seed)
    return _component_results(H, S, converged)[0]


def mnica_multi(
    energies, q: int, max_iters: int = 500, tol: float = 1e-6, seed=0
) -> list[UnmixResult]:
    """q-component unmixing of the full energy matrix, components ordered by
    explained energy."""
    ce = energies if isinstance(energies, ClusterEnergies) else ClusterEnergies(energies)
    if ce.n_channels < 1:
        raise ValueError("need at least one channel")
    if ce.n_segments < 10:
        raise ValueError("need at least 10 segments")
    H, S, _, converged = mnica(ce.values, q, max_iters=max_iters, tol=tol, seed=seed)
    return _component_results(H, S, converged)


def pearson(a, b) -> float:
    """Centered correlation of two equal-length tracks."""
    av = a.values if isinstance(a, EnergyTrack) else np.asarray(a, dtype=float)
    bv = b.values if isinstance(b, EnergyTrack) else np.asarray(b, dtype=float)
    if av.shape != bv.shape or av.ndim != 1:
        raise ValueError("tracks must share one length")
    if av.size < 2:
        raise ValueError("need at least two samples")
    ac = av - av.mean()
    bc = bv - bv.mean()
    denom = np.linalg.norm(ac) * np.linalg.norm(bc)
    if denom <= 0:
        raise ValueError("correlation undefined for constant input")
    return float(ac @ bc / denom)
