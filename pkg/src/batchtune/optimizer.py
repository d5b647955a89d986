"""The tuning loop: initial random design, batch proposals, result bookkeeping."""

from __future__ import annotations

import logging
import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from typing import Any, Literal, Optional

import numpy as np

from .acquisition import (
    AcquisitionParams,
    BatchProposal,
    beta_schedule,
    propose_batch_clustering,
    propose_batch_hallucination,
    propose_batch_random,
)
from .domain import Configuration, SearchSpace, default_mc_budget, encode
from .scheduler import Scheduler
from .surrogate import fit_gp, select_kernel_params

log = logging.getLogger(__name__)

ALGORITHMS = ("hallucination", "clustering", "random")

_PROPOSERS = {
    "hallucination": propose_batch_hallucination,
    "clustering": propose_batch_clustering,
}


@dataclass(frozen=True)
class TunerConfig:
    algorithm: Literal["hallucination", "clustering", "random"] = "hallucination"
    batch_size: int = 1
    max_iterations: int = 20
    initial_random: Optional[int] = None  # None -> max(2, batch_size)
    mc_budget_override: Optional[int] = None
    seed: int = 0
    direction: Literal["maximize", "minimize"] = "maximize"

    def __post_init__(self) -> None:
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if self.direction not in ("maximize", "minimize"):
            raise ValueError(f"direction must be 'maximize' or 'minimize', got {self.direction!r}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be >= 0")
        if self.initial_random is None:
            object.__setattr__(self, "initial_random", max(2, self.batch_size))
        if self.initial_random < 1:
            raise ValueError("initial_random must be >= 1")
        if self.mc_budget_override is not None and self.mc_budget_override < 2:
            raise ValueError("mc_budget_override must be >= 2")


@dataclass(frozen=True)
class TrialRecord:
    config: Configuration
    value: float
    iteration: int
    slot: int  # position within the proposed batch


@dataclass(frozen=True)
class TrialHistory:
    """Append-only record of evaluated configurations.

    Operations return new histories; an instance is never mutated.
    """

    direction: str = "maximize"
    records: tuple[TrialRecord, ...] = ()
    dropped_nonfinite: int = 0

    def __len__(self) -> int:
        return len(self.records)

    def _better(self, a: float, b: float) -> bool:
        return a > b if self.direction == "maximize" else a < b

    @property
    def best_index(self) -> Optional[int]:
        best = None
        for i, r in enumerate(self.records):
            if best is None or self._better(r.value, self.records[best].value):
                best = i
        return best

    @property
    def best_config(self) -> Optional[Configuration]:
        i = self.best_index
        return None if i is None else self.records[i].config

    @property
    def best_value(self) -> Optional[float]:
        i = self.best_index
        return None if i is None else self.records[i].value

    @property
    def values(self) -> list[float]:
        return [r.value for r in self.records]


class StrayConfigurationError(ValueError):
    """A scheduler returned a configuration that was not in the proposed batch."""

    def __init__(self, config: Any):
        self.config = config
        super().__init__(f"returned configuration was not proposed (or returned twice): {config!r}")


def incorporate_results(
    h: TrialHistory,
    proposed: BatchProposal | Sequence[Configuration],
    returned: Iterable[tuple[Configuration, float]],
    iteration: int = 0,
) -> TrialHistory:
    """Record whatever subset of ``proposed`` came back, in any order.

    Accepted pairs are appended in proposal order so the history does not
    depend on completion order. Missing proposals are not recorded; pairs
    with a non-finite value are dropped and counted.
    """
    configs = proposed.configs if isinstance(proposed, BatchProposal) else list(proposed)
    matched: dict[int, float] = {}
    dropped = 0
    for cfg, value in returned:
        slot = next(
            (i for i, c in enumerate(configs) if i not in matched and c == cfg),
            None,
        )
        if slot is None:
            raise StrayConfigurationError(cfg)
        try:
            value = float(value)
        except (TypeError, ValueError):
            value = math.nan
        if not math.isfinite(value):
            dropped += 1
            # reserve the slot so a duplicate return is still caught
            matched[slot] = math.nan
            continue
        matched[slot] = value
    if dropped:
        log.warning("dropped %d non-finite objective value(s) in iteration %d", dropped, iteration)
    new = tuple(
        TrialRecord(dict(configs[s]), matched[s], iteration, s)
        for s in sorted(matched)
        if math.isfinite(matched[s])
    )
    return TrialHistory(h.direction, h.records + new, h.dropped_nonfinite + dropped)


def best_so_far_series(h: TrialHistory) -> list[float]:
    """Running extremum of recorded values, one entry per record."""
    if not h.records:
        raise ValueError("history is empty")
    pick = max if h.direction == "maximize" else min
    out, cur = [], None
    for r in h.records:
        cur = r.value if cur is None else pick(cur, r.value)
        out.append(cur)
    return out


def best_per_iteration(h: TrialHistory, iterations: int | None = None) -> list[tuple[int, int, float]]:
    """``(iteration, evaluations so far, best so far)`` for each iteration index.

    Iterations with no accepted results repeat the previous row; iterations
    before the first result are omitted.
    """
    if not h.records:
        return []
    last_iter = max(r.iteration for r in h.records) if iterations is None else iterations
    series = best_so_far_series(h)
    rows = []
    count = 0
    best = None
    for it in range(last_iter + 1):
        while count < len(h.records) and h.records[count].iteration <= it:
            best = series[count]
            count += 1
        if best is not None:
            rows.append((it, count, best))
    return rows


@dataclass
class TuneResult:
    best_config: Optional[Configuration]
    best_value: Optional[float]
    history: TrialHistory
    iterations_run: int
    evaluations_completed: int
    evaluations_dispatched: int = 0
    retries: int = 0
    diagnostics: dict[str, Any] = field(default_factory=dict)


class TuneAborted(RuntimeError):
    """Two consecutive dispatched batches returned no results."""

    def __init__(self, message: str, partial: TuneResult):
        self.partial = partial
        super().__init__(message)


def _observations(space: SearchSpace, h: TrialHistory, sign: float) -> tuple[np.ndarray, np.ndarray]:
    X = np.array([encode(space, r.config) for r in h.records]).reshape(len(h.records), space.encoded_dim)
    y = sign * np.array([r.value for r in h.records], dtype=float)
    return X, y


def tune(space: SearchSpace, cfg: TunerConfig, sched: Scheduler) -> TuneResult:
    """Run batch GP-UCB (or random search) against ``sched``.

    A batch that comes back empty is replaced once by a freshly proposed
    batch; the replacement uses up an iteration of the budget (or the single
    retry allowance once the budget is spent). A second consecutive empty
    batch raises :class:`TuneAborted` carrying the partial result.
    """
    rng = np.random.default_rng(cfg.seed)
    sign = 1.0 if cfg.direction == "maximize" else -1.0
    mc_budget = cfg.mc_budget_override or default_mc_budget(space)
    history = TrialHistory(cfg.direction)
    dispatched = 0
    retries = 0
    iterations_run = 0

    def result() -> TuneResult:
        diag = {"dropped_nonfinite": history.dropped_nonfinite, "mc_budget": mc_budget}
        stats = getattr(sched, "stats", None)
        if stats:
            diag["scheduler"] = dict(stats)
        return TuneResult(
            history.best_config, history.best_value, history, iterations_run,
            len(history), dispatched, retries, diag,
        )

    def propose(t: int, size: int) -> BatchProposal:
        if t == 0 or cfg.algorithm == "random" or not history.records:
            return propose_batch_random(space, size, rng)
        X, y = _observations(space, history, sign)
        state = fit_gp(X, y, select_kernel_params(X, y))
        p = AcquisitionParams(beta_schedule(t, mc_budget, size), mc_budget, rng)
        return _PROPOSERS[cfg.algorithm](state, space, size, p)

    def dispatch(batch: BatchProposal) -> list[tuple[Configuration, float]]:
        nonlocal dispatched
        dispatched += len(batch)
        if not len(batch):
            return []
        return list(sched.evaluate([dict(c) for c in batch.configs]))

    def run_batch(t: int, size: int) -> TrialHistory:
        batch = propose(t, size)
        return incorporate_results(history, batch, dispatch(batch), iteration=t)

    slots = cfg.max_iterations
    t = 0
    while True:
        updated = run_batch(t, cfg.initial_random if t == 0 else cfg.batch_size)
        if len(updated) == len(history):
            history = updated
            retries += 1
            slots = max(slots - 1, 0)
            log.warning("iteration %d: no results returned, retrying once", t)
            updated = run_batch(t, cfg.batch_size)
            if len(updated) == len(history):
                history = updated
                raise TuneAborted(f"iteration {t}: two consecutive empty batches", result())
        history = updated
        if t > 0:
            iterations_run += 1
        if slots == 0:
            break
        slots -= 1
        t += 1
    return result()
