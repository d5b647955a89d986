"""Branin-family benchmarks and the convergence-experiment runner."""

from __future__ import annotations

import csv
import io
import math
from collections import defaultdict
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import minimize_scalar

from .domain import Configuration, IntRange, SearchSpace, uniform
from .optimizer import TuneAborted, TunerConfig, best_per_iteration, tune
from .scheduler import SerialScheduler

BRANIN_A = 1.0
BRANIN_B = 5.1 / (4.0 * math.pi**2)
BRANIN_C = 5.0 / math.pi
BRANIN_R = 6.0
BRANIN_S = 10.0
BRANIN_T = 1.0 / (8.0 * math.pi)

BRANIN_MIN = 0.39788735772973816
BRANIN_MINIMIZERS = ((-math.pi, 12.275), (math.pi, 2.275), (9.42478, 2.475))

CSV_HEADER = ("algorithm", "seed", "iteration", "evaluations", "best_so_far")


def _check(name: str, v: float, lo: float, hi: float) -> None:
    if not (lo <= v <= hi):
        raise ValueError(f"{name}={v} outside [{lo}, {hi}]")


def branin(x1: float, x2: float) -> float:
    _check("x1", x1, -5.0, 10.0)
    _check("x2", x2, 0.0, 15.0)
    return (
        BRANIN_A * (x2 - BRANIN_B * x1**2 + BRANIN_C * x1 - BRANIN_R) ** 2
        + BRANIN_S * (1.0 - BRANIN_T) * math.cos(x1)
        + BRANIN_S
    )


def branin_mixed(x1: float, x2: int) -> float:
    """Branin with the second coordinate restricted to the integers 0..15."""
    if isinstance(x2, bool) or int(x2) != x2:
        raise ValueError(f"x2 must be an integer, got {x2!r}")
    _check("x2", x2, 0, 15)
    return branin(x1, int(x2))


def branin_mixed_optimum(grid_points: int = 200001) -> tuple[float, float, int]:
    """Brute-force minimum of :func:`branin_mixed` as ``(value, x1, x2)``.

    Each integer slice is scanned on a dense ``x1`` grid and the best grid
    cell is polished with a bounded scalar search.
    """
    x1 = np.linspace(-5.0, 10.0, grid_points)
    step = x1[1] - x1[0]
    best = (math.inf, 0.0, 0)
    for k in range(16):
        vals = (
            BRANIN_A * (k - BRANIN_B * x1**2 + BRANIN_C * x1 - BRANIN_R) ** 2
            + BRANIN_S * (1.0 - BRANIN_T) * np.cos(x1)
            + BRANIN_S
        )
        i = int(np.argmin(vals))
        lo, hi = max(x1[i] - step, -5.0), min(x1[i] + step, 10.0)
        res = minimize_scalar(lambda u: branin(u, k), bounds=(lo, hi), method="bounded",
                              options={"xatol": 1e-12})
        cand = (float(res.fun), float(res.x)) if res.fun < vals[i] else (float(vals[i]), float(x1[i]))
        if cand[0] < best[0]:
            best = (cand[0], cand[1], k)
    return best


def quadratic(x: float) -> float:
    return (x - 0.3) ** 2


@dataclass(frozen=True)
class BenchmarkSpec:
    name: str
    space: SearchSpace
    objective: Callable[[Configuration], float]
    known_optimum: Optional[float] = None


def get_benchmark(name: str) -> BenchmarkSpec:
    if name == "branin":
        return BenchmarkSpec(
            "branin",
            SearchSpace({"x1": uniform(-5, 15), "x2": uniform(0, 15)}),
            lambda c: branin(c["x1"], c["x2"]),
            BRANIN_MIN,
        )
    if name == "branin_mixed":
        return BenchmarkSpec(
            "branin_mixed",
            SearchSpace({"x1": uniform(-5, 15), "x2": IntRange(0, 16)}),
            lambda c: branin_mixed(c["x1"], c["x2"]),
            branin_mixed_optimum()[0],
        )
    if name == "quadratic":
        return BenchmarkSpec(
            "quadratic",
            SearchSpace({"x": uniform(0, 1)}),
            lambda c: quadratic(c["x"]),
            0.0,
        )
    raise ValueError(f"unknown benchmark {name!r}; expected branin, branin_mixed or quadratic")


@dataclass(frozen=True)
class ConvergenceRow:
    algorithm: str
    seed: int
    iteration: int
    evaluations: int
    best_so_far: float


@dataclass
class ConvergenceTable:
    rows: list[ConvergenceRow] = field(default_factory=list)
    incomplete: set[tuple[str, int]] = field(default_factory=set)

    def sorted_rows(self) -> list[ConvergenceRow]:
        return sorted(self.rows, key=lambda r: (r.algorithm, r.seed, r.iteration))

    def runs(self) -> dict[tuple[str, int], list[ConvergenceRow]]:
        out: dict[tuple[str, int], list[ConvergenceRow]] = defaultdict(list)
        for r in self.sorted_rows():
            out[(r.algorithm, r.seed)].append(r)
        return dict(out)

    def final_bests(self, algorithm: str) -> list[float]:
        return [rows[-1].best_so_far for (a, _), rows in sorted(self.runs().items()) if a == algorithm]

    def mean_series(self) -> dict[str, list[float]]:
        """Mean best-so-far over seeds at each iteration index, per algorithm."""
        by_iter: dict[str, dict[int, list[float]]] = defaultdict(lambda: defaultdict(list))
        for r in self.rows:
            by_iter[r.algorithm][r.iteration].append(r.best_so_far)
        return {
            algo: [float(np.mean(its[i])) for i in sorted(its)]
            for algo, its in sorted(by_iter.items())
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for r in self.sorted_rows():
            writer.writerow([r.algorithm, r.seed, r.iteration, r.evaluations, f"{r.best_so_far:.12g}"])
        return buf.getvalue()

    def write_csv(self, path: str) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(self.to_csv())

    @classmethod
    def from_csv(cls, text: str) -> "ConvergenceTable":
        reader = csv.DictReader(io.StringIO(text))
        rows = [
            ConvergenceRow(d["algorithm"], int(d["seed"]), int(d["iteration"]),
                           int(d["evaluations"]), float(d["best_so_far"]))
            for d in reader
        ]
        return cls(rows)


def run_convergence_experiment(
    bench: BenchmarkSpec,
    algorithms: Sequence[str],
    batch_size: int,
    iterations: int,
    repeats: int,
    base_seed: int = 0,
    initial_random: Optional[int] = None,
    mc_budget: Optional[int] = None,
) -> ConvergenceTable:
    """Minimise ``bench`` with each algorithm over ``repeats`` seeds.

    Emits one row per (algorithm, seed, iteration) where iteration 0 is the
    initial random design. An aborted run keeps the rows it produced and is
    listed in ``incomplete``.
    """
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    table = ConvergenceTable()
    for algo in algorithms:
        for r in range(repeats):
            seed = base_seed + r
            cfg = TunerConfig(
                algorithm=algo, batch_size=batch_size, max_iterations=iterations,
                initial_random=initial_random, mc_budget_override=mc_budget,
                seed=seed, direction="minimize",
            )
            try:
                res = tune(bench.space, cfg, SerialScheduler(bench.objective, timeout=None))
            except TuneAborted as exc:
                res = exc.partial
                table.incomplete.add((algo, seed))
            for it, evals, best in best_per_iteration(res.history):
                table.rows.append(ConvergenceRow(algo, seed, it, evals, float(best)))
    return table
