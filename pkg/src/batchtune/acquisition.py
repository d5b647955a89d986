"""UCB acquisition, Monte-Carlo maximisation and batch-proposal strategies."""

from __future__ import annotations

import math
import warnings
from collections.abc import Iterable
from dataclasses import dataclass, field

import numpy as np

from .domain import Configuration, SampleSet, SearchSpace, draw_samples
from .surrogate import GPState, hallucinate, posterior_many

DISTINCT_TOL = 1e-9
BETA_DELTA = 0.1
CLUSTER_KEEP_FRACTIONS = (0.2, 0.5, 1.0)
KMEANS_ITERATIONS = 10
RANDOM_RESAMPLE_ATTEMPTS = 100


class ExhaustedError(RuntimeError):
    """Every Monte-Carlo sample collides with an excluded point."""


@dataclass
class AcquisitionParams:
    beta: float
    mc_budget: int
    rng: np.random.Generator

    def __post_init__(self) -> None:
        if self.beta < 0:
            raise ValueError(f"beta must be >= 0, got {self.beta}")
        if self.mc_budget < 2:
            raise ValueError(f"mc_budget must be >= 2, got {self.mc_budget}")


@dataclass
class BatchProposal:
    configs: list[Configuration]
    encoded: list[np.ndarray]
    scores: list[float]
    # set when fewer distinct configurations than requested could be found
    incomplete: bool = False
    requested: int = field(default=0)

    def __post_init__(self) -> None:
        if not (len(self.configs) == len(self.encoded) == len(self.scores)):
            raise ValueError("configs, encoded and scores must have equal length")
        if not self.requested:
            self.requested = len(self.configs)

    def __len__(self) -> int:
        return len(self.configs)


def ucb_score(mean, variance, beta: float):
    """``mean + sqrt(beta * variance)``; works elementwise on arrays."""
    return mean + math.sqrt(beta) * np.sqrt(variance)


def beta_schedule(t: int, mc_budget: int, batch_size: int, delta: float = BETA_DELTA) -> float:
    """GP-UCB exploration weight, with the MC sample count as domain size.

    Grows logarithmically in the iteration index, the sample budget and the
    batch size.
    """
    if t < 1 or mc_budget < 2 or batch_size < 1:
        raise ValueError("need t >= 1, mc_budget >= 2, batch_size >= 1")
    return 2.0 * math.log(mc_budget * (t * batch_size) ** 2 * math.pi**2 / (6.0 * delta))


def _is_far(point: np.ndarray, others: Iterable[np.ndarray]) -> bool:
    return all(np.linalg.norm(point - o) > DISTINCT_TOL for o in others)


def _far_mask(enc: np.ndarray, exclude: list[np.ndarray]) -> np.ndarray:
    mask = np.ones(len(enc), dtype=bool)
    for e in exclude:
        mask &= np.linalg.norm(enc - e, axis=1) > DISTINCT_TOL
    return mask


def score_samples(g: GPState, samples: SampleSet, beta: float) -> np.ndarray:
    mean, var = posterior_many(g, samples.encoded)
    return ucb_score(mean, var, beta)


def _best_allowed(scores: np.ndarray, enc: np.ndarray, exclude: list[np.ndarray]) -> int:
    allowed = _far_mask(enc, exclude)
    if not allowed.any():
        raise ExhaustedError("all Monte-Carlo samples coincide with excluded points")
    masked = np.where(allowed, scores, -np.inf)
    # np.argmax returns the first maximiser, so ties go to sample order
    return int(np.argmax(masked))


def argmax_mc(
    g: GPState,
    space: SearchSpace,
    p: AcquisitionParams,
    exclude: Iterable[np.ndarray] = (),
) -> tuple[Configuration, np.ndarray, float]:
    """Best UCB configuration among ``p.mc_budget`` fresh random samples."""
    samples = draw_samples(space, p.mc_budget, p.rng)
    scores = score_samples(g, samples, p.beta)
    i = _best_allowed(scores, samples.encoded, list(exclude))
    return samples.config(i), samples.encoded[i].copy(), float(scores[i])


def propose_batch_hallucination(
    g: GPState, space: SearchSpace, k: int, p: AcquisitionParams
) -> BatchProposal:
    """Sequential greedy batch: after each pick the GP hallucinates an observation there."""
    if k < 1:
        raise ValueError(f"batch size must be >= 1, got {k}")
    configs, encoded, scores = [], [], []
    state = g
    for j in range(k):
        cfg, x, s = argmax_mc(state, space, p, exclude=encoded)
        configs.append(cfg)
        encoded.append(x)
        scores.append(s)
        if j < k - 1:
            state = hallucinate(state, x)
    return BatchProposal(configs, encoded, scores)


def _kmeans(points: np.ndarray, k: int, rng: np.random.Generator, iters: int = KMEANS_ITERATIONS) -> np.ndarray:
    """Lloyd's algorithm with k-means++ seeding; returns a label per point."""
    n = len(points)
    centers = np.empty((k, points.shape[1]))
    centers[0] = points[rng.integers(n)]
    d2 = np.sum((points - centers[0]) ** 2, axis=1)
    for c in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = rng.integers(n)
        else:
            idx = int(np.searchsorted(np.cumsum(d2), rng.uniform(0.0, total), side="right"))
            idx = min(idx, n - 1)
        centers[c] = points[idx]
        d2 = np.minimum(d2, np.sum((points - centers[c]) ** 2, axis=1))
    labels = np.zeros(n, dtype=int)
    for _ in range(iters):
        dist = np.sum((points[:, None, :] - centers[None, :, :]) ** 2, axis=2)
        labels = np.argmin(dist, axis=1)
        for c in range(k):
            members = points[labels == c]
            if len(members):
                centers[c] = members.mean(axis=0)
    return labels


def propose_batch_clustering(
    g: GPState, space: SearchSpace, k: int, p: AcquisitionParams
) -> BatchProposal:
    """One pick per spatial cluster of high-UCB samples.

    The top 20% of samples by UCB (widened to 50%, then all, if that leaves
    fewer than ``2k`` points) are clustered with k-means and the best member
    of each cluster is taken. Short batches are topped up with the
    best-scoring unused samples.
    """
    if k < 1:
        raise ValueError(f"batch size must be >= 1, got {k}")
    samples = draw_samples(space, p.mc_budget, p.rng)
    scores = score_samples(g, samples, p.beta)
    n = len(samples)
    order = np.argsort(-scores, kind="stable")
    for frac in CLUSTER_KEEP_FRACTIONS:
        n_keep = max(1, int(math.ceil(frac * n)))
        if n_keep >= 2 * k:
            break
    kept = order[:n_keep]
    enc = samples.encoded

    picked: list[int] = []
    picked_enc: list[np.ndarray] = []

    def take(i: int) -> bool:
        if _is_far(enc[i], picked_enc):
            picked.append(int(i))
            picked_enc.append(enc[i])
            return True
        return False

    if k == 1:
        take(kept[0])
    else:
        labels = _kmeans(enc[kept], min(k, len(kept)), p.rng)
        winners = []
        for c in np.unique(labels):
            members = kept[labels == c]
            # kept is score-sorted, so the first member is the cluster maximum
            winners.append(members)
        winners.sort(key=lambda m: (-scores[m[0]], m[0]))
        for members in winners:
            for i in members:
                if take(i):
                    break
            if len(picked) == k:
                break
    for pool in (kept, order):
        for i in pool:
            if len(picked) == k:
                break
            take(i)
    if len(picked) < k:
        raise ExhaustedError(f"only {len(picked)} distinct candidates for a batch of {k}")
    return BatchProposal(
        [samples.config(i) for i in picked],
        [enc[i].copy() for i in picked],
        [float(scores[i]) for i in picked],
    )


def propose_batch_random(space: SearchSpace, k: int, rng: np.random.Generator) -> BatchProposal:
    """``k`` distinct random configurations with zero scores.

    In spaces too small to hold ``k`` distinct points the batch comes back
    short with ``incomplete`` set instead of raising.
    """
    if k < 1:
        raise ValueError(f"batch size must be >= 1, got {k}")
    configs: list[Configuration] = []
    encoded: list[np.ndarray] = []
    incomplete = False
    for _ in range(k):
        for _attempt in range(RANDOM_RESAMPLE_ATTEMPTS):
            s = draw_samples(space, 1, rng)
            x = s.encoded[0]
            if _is_far(x, encoded):
                configs.append(s.config(0))
                encoded.append(x.copy())
                break
        else:
            incomplete = True
            break
    if incomplete:
        warnings.warn(
            f"random batch: found {len(configs)} distinct configurations of {k} requested",
            RuntimeWarning,
            stacklevel=2,
        )
    return BatchProposal(configs, encoded, [0.0] * len(configs), incomplete=incomplete, requested=k)
