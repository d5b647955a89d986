"""Exit criteria. Each test records a single PASS/FAIL line in the summary."""

import json
import math
import sys
import time
import warnings

import numpy as np
import pytest
from scipy import stats

from batchtune.acquisition import (
    AcquisitionParams,
    propose_batch_clustering,
    propose_batch_hallucination,
    propose_batch_random,
    ucb_score,
)
from batchtune.bench import BRANIN_MIN, get_benchmark, run_convergence_experiment
from batchtune.cli import run_cli
from batchtune.domain import Categorical, Continuous, IntRange, SearchSpace, draw_samples, encode, uniform
from batchtune.optimizer import TuneAborted, TunerConfig, tune
from batchtune.scheduler import BatchObjectiveScheduler, WorkerProtocolScheduler, worker_protocol_evaluate
from batchtune.surrogate import (
    LENGTH_SCALE_GRID,
    KernelParams,
    fit_gp,
    hallucinate,
    log_marginal_likelihood,
    posterior_many,
    select_kernel_params,
)
from conftest import WORKERS, worker_cmd
from oracles import branin_grid_min, branin_mixed_bruteforce, gp_direct

pytestmark = pytest.mark.acceptance


def best_at(table, algorithm, iteration):
    return [r.best_so_far for r in table.sorted_rows() if r.algorithm == algorithm and r.iteration == iteration]


def test_c1_gp_matches_direct_inversion(report):
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(100):
        r = np.random.default_rng(1000 + seed)
        d = int(r.integers(1, 7))
        n = int(r.integers(1, 21))
        X = r.random((n, d))
        y = r.normal(size=n) * r.uniform(0.5, 5) + r.uniform(-3, 3)
        k = KernelParams(float(r.uniform(0.1, 1.0)), float(r.uniform(0.5, 2.0)), float(10 ** r.uniform(-3, -1)))
        Q = r.random((10, d))
        g = fit_gp(X, y, k)
        expected, lml = gp_direct(X, y, Q, k.length_scale, k.signal_variance, g.effective_noise)
        mean, var = posterior_many(g, Q)
        worst = max(
            worst,
            float(np.max(np.abs(mean - [e[0] for e in expected]))),
            float(np.max(np.abs(var - [e[1] for e in expected]))),
            abs(log_marginal_likelihood(g) - lml),
        )
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-8 and elapsed < 10
    report("C1 GP correctness", ok, f"max abs err {worst:.2e} (tol 1e-8), {elapsed:.2f}s (< 10s)")
    assert ok


def test_c2_hallucination_invariants(report):
    worst_mean, worst_var_increase = 0.0, -math.inf
    for seed in range(50):
        r = np.random.default_rng(2000 + seed)
        d = int(r.integers(1, 7))
        n = int(r.integers(0, 21))
        X = r.random((n, d))
        y = r.normal(size=n) * 10 ** r.uniform(-1, 2)
        g = fit_gp(X, y, select_kernel_params(X, y) if n >= 2 else KernelParams(float(r.choice(LENGTH_SCALE_GRID))))
        P = r.random((100, d))
        m0, v_prev = posterior_many(g, P)
        state = g
        for _ in range(int(r.integers(1, 6))):
            state = hallucinate(state, r.random(d))
            m, v = posterior_many(state, P)
            worst_mean = max(worst_mean, float(np.max(np.abs(m - m0))))
            worst_var_increase = max(worst_var_increase, float(np.max(v - v_prev)))
            v_prev = v
    ok = worst_mean < 1e-8 and worst_var_increase <= 1e-10
    report("C2 hallucination invariants", ok,
           f"max |d mean| {worst_mean:.2e} (tol 1e-8), max var increase {worst_var_increase:.2e} (tol 1e-10)")
    assert ok


def test_c3_branin_serial(report):
    grid_value, _, _ = branin_grid_min(2000)
    assert grid_value - BRANIN_MIN < 1e-3 and grid_value >= BRANIN_MIN
    t0 = time.perf_counter()
    table = run_convergence_experiment(get_benchmark("branin"), ["hallucination", "random"], 1, 45, 10,
                                       base_seed=0, initial_random=5)
    elapsed = time.perf_counter() - t0
    hall, rand = best_at(table, "hallucination", 45), best_at(table, "random", 45)
    assert all(r.evaluations == 50 for r in table.rows if r.iteration == 45)
    hits = sum(v <= 0.8 for v in hall)
    ok = np.mean(hall) < np.mean(rand) and hits >= 8 and elapsed < 120
    report("C3 Branin serial", ok,
           f"mean best@50 hallucination {np.mean(hall):.4f} vs random {np.mean(rand):.4f}; "
           f"{hits}/10 seeds <= 0.8 (need 8); {elapsed:.1f}s (< 120s)")
    assert ok


def test_c4_branin_parallel(report):
    table = run_convergence_experiment(get_benchmark("branin"), ["hallucination", "clustering", "random"],
                                       5, 20, 10, base_seed=0)
    rand = best_at(table, "random", 20)
    parts, ok = [], True
    for algo in ("hallucination", "clustering"):
        vals = best_at(table, algo, 20)
        p = stats.ttest_ind(vals, rand, equal_var=False).pvalue
        ok &= bool(np.mean(vals) < np.mean(rand) and p < 0.05)
        parts.append(f"{algo} {np.mean(vals):.4f} (Welch p={p:.1e})")
    report("C4 Branin batch 5", ok, "; ".join(parts) + f" vs random {np.mean(rand):.4f}")
    assert ok


def test_c5_mixed_variables(report):
    oracle_value, _, _ = branin_mixed_bruteforce()
    bench = get_benchmark("branin_mixed")
    assert abs(bench.known_optimum - oracle_value) < 1e-6
    table = run_convergence_experiment(bench, ["hallucination", "clustering"], 5, 19, 10,
                                       base_seed=0, initial_random=5)
    parts, ok = [], True
    for algo in ("hallucination", "clustering"):
        rows = [r for r in table.rows if r.algorithm == algo and r.iteration == 19]
        assert all(r.evaluations == 100 for r in rows)
        hits = sum(r.best_so_far - oracle_value <= 0.5 for r in rows)
        ok &= hits >= 7
        parts.append(f"{algo} {hits}/10")
    report("C5 mixed Branin", ok, f"seeds within 0.5 of {oracle_value:.6f} in 100 evals: " + ", ".join(parts)
           + " (need 7)")
    assert ok


def _random_space(r):
    kind = r.integers(3)
    n_params = 1 if kind == 0 else int(r.integers(1, 5))
    params = {}
    for i in range(n_params):
        pick = 2 if kind == 1 else int(r.integers(3))
        if pick == 0:
            params[f"p{i}"] = Continuous(str(r.choice(["uniform", "loguniform"])), float(r.uniform(-3, 3)),
                                         float(r.uniform(0.1, 4)))
        elif pick == 1:
            lo = int(r.integers(-5, 5))
            params[f"p{i}"] = IntRange(lo, lo + int(r.integers(1, 9)))
        else:
            params[f"p{i}"] = Categorical(tuple(f"c{j}" for j in range(int(r.integers(1, 5)))))
    return SearchSpace(params)


def _cardinality(space):
    total = 1
    for dom in space.values():
        if isinstance(dom, Continuous):
            return math.inf
        total *= (dom.hi - dom.lo) if isinstance(dom, IntRange) else len(dom.choices)
    return total


def test_c6_batch_validity(report):
    checked, failures = 0, []
    for seed in range(150):
        r = np.random.default_rng(6000 + seed)
        space = _random_space(r)
        k = int(min(r.integers(1, 6), _cardinality(space)))
        n_obs = int(r.integers(0, 8))
        X = draw_samples(space, n_obs, r).encoded if n_obs else np.zeros((0, space.encoded_dim))
        g = fit_gp(X, r.normal(size=n_obs), KernelParams(0.3))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            batches = [
                propose_batch_hallucination(g, space, k, AcquisitionParams(4.0, 300, np.random.default_rng(seed))),
                propose_batch_clustering(g, space, k, AcquisitionParams(4.0, 300, np.random.default_rng(seed))),
                propose_batch_random(space, k, np.random.default_rng(seed)),
            ]
        for b in batches:
            for c in b.configs:
                if not space.is_valid(c):
                    failures.append((seed, "invalid", c))
            enc = [encode(space, c) for c in b.configs]
            for i in range(len(enc)):
                for j in range(i):
                    if np.linalg.norm(enc[i] - enc[j]) <= 1e-9:
                        failures.append((seed, "duplicate"))
            checked += len(b)
        if len(batches[0]) != k or len(batches[1]) != k:
            failures.append((seed, "short batch"))
        # clustering with k=1 is the global argmax of the same seeded sample set
        one = propose_batch_clustering(g, space, 1, AcquisitionParams(4.0, 300, np.random.default_rng(seed)))
        samples = draw_samples(space, 300, np.random.default_rng(seed))
        scores = ucb_score(*posterior_many(g, samples.encoded), 4.0)
        if one.configs != [samples.config(int(np.argmax(scores)))]:
            failures.append((seed, "k=1 mismatch"))
    ok = not failures
    report("C6 batch validity", ok, f"150 random spaces, {checked} configurations checked, {len(failures)} failures")
    assert ok, failures[:5]


SPACE7 = SearchSpace({"x": uniform(-2, 4), "y": IntRange(0, 5), "k": ["a", "b", "c"]})


def f7(c):
    return (c["x"] - 0.5) ** 2 + 0.1 * (c["y"] - 2) ** 2 + (0.0 if c["k"] == "b" else 0.4)


class ShuffleDropScheduler:
    """Random subsets in random order; subset choice and order use separate streams."""

    def __init__(self, subset_seed, order_seed, drop_all_from=None):
        self.subset_rng = np.random.default_rng(subset_seed)
        self.order_rng = np.random.default_rng(order_seed)
        self.drop_all_from = drop_all_from
        self.calls = 0
        self.proposed = []

    def evaluate(self, batch):
        self.proposed.extend(json.dumps(c, sort_keys=True) for c in batch)
        self.calls += 1
        keep = self.subset_rng.random(len(batch)) < 0.6
        if self.drop_all_from is not None and self.calls >= self.drop_all_from:
            keep[:] = False
        idx = np.flatnonzero(keep)
        self.order_rng.shuffle(idx)
        return [(batch[i], f7(batch[i])) for i in idx]


def _final_posterior(res, probes):
    X = np.array([encode(SPACE7, r.config) for r in res.history.records])
    y = -np.array([r.value for r in res.history.records])
    return posterior_many(fit_gp(X, y, select_kernel_params(X, y)), probes)


def test_c7_fault_tolerance(report):
    problems = []
    max_post_diff = 0.0
    probes = draw_samples(SPACE7, 100, np.random.default_rng(0)).encoded
    for seed in range(8):
        runs = []
        for order_seed in (1, 2):
            sched = ShuffleDropScheduler(100 + seed, 1000 * order_seed + seed)
            cfg = TunerConfig("hallucination" if seed % 2 else "clustering", batch_size=4, max_iterations=6,
                              seed=seed, direction="minimize")
            res = tune(SPACE7, cfg, sched)
            for rec in res.history.records:
                if json.dumps(rec.config, sort_keys=True) not in sched.proposed or rec.value != f7(rec.config):
                    problems.append((seed, "corrupt record"))
            if res.best_value != min(r.value for r in res.history.records):
                problems.append((seed, "best"))
            if sched.calls * 4 > cfg.initial_random + cfg.max_iterations * 4 + 4:
                problems.append((seed, "budget"))
            runs.append(res)
        a, b = (_final_posterior(r, probes) for r in runs)
        max_post_diff = max(max_post_diff, float(np.max(np.abs(a[0] - b[0]))), float(np.max(np.abs(a[1] - b[1]))))
        if [r.config for r in runs[0].history.records] != [r.config for r in runs[1].history.records]:
            problems.append((seed, "order-dependent proposals"))

    # the serial objective skeleton returning a partial (evals, params) pair
    def objective_function(params_list):
        evals, params = [], []
        for par in params_list[::-1][1:]:
            evals.append(f7(par))
            params.append(par)
        return evals, params

    res = tune(SPACE7, TunerConfig("hallucination", batch_size=3, max_iterations=4, seed=3, direction="minimize"),
               BatchObjectiveScheduler(objective_function))
    if res.evaluations_completed != 2 + 4 * 2:
        problems.append(("listing", res.evaluations_completed))

    aborted_ok = False
    try:
        tune(SPACE7, TunerConfig("hallucination", batch_size=3, max_iterations=10, seed=0, direction="minimize"),
             ShuffleDropScheduler(5, 6, drop_all_from=3))
    except TuneAborted as exc:
        part = exc.partial
        aborted_ok = (part.evaluations_completed > 0 and part.best_config is not None
                      and part.best_value == f7(part.best_config))
    ok = not problems and max_post_diff < 1e-8 and aborted_ok
    report("C7 fault tolerance", ok,
           f"{len(problems)} history problems, permuted-order posterior diff {max_post_diff:.1e} (tol 1e-8), "
           f"abort with usable partial: {aborted_ok}")
    assert ok, problems[:5]


def test_c8_wire_protocol(report):
    space = SearchSpace({"x": uniform(-2, 4)})
    sched = WorkerProtocolScheduler(worker_cmd("quad_worker.py"), workers=3, timeout=60)
    res = tune(space, TunerConfig("hallucination", batch_size=3, max_iterations=12, initial_random=3, seed=0,
                                  direction="minimize"), sched)
    evals_to_hit = next((i + 1 for i, r in enumerate(res.history.records) if r.value <= 1e-2), None)
    matched = all(r.value == (r.config["x"] - 0.3) ** 2 for r in res.history.records)

    batch = [{"x": float(v)} for v in (0.5, -1.0, 2.0, 3.5)]
    rev = worker_protocol_evaluate(worker_cmd("reverse_worker.py"), batch, workers=1)
    rev_ok = [c["x"] for c, _ in rev] == [3.5, 2.0, -1.0, 0.5] and all(v == c["x"] ** 2 for c, v in rev)

    flaky = WorkerProtocolScheduler(worker_cmd("flaky_worker.py"), workers=3, timeout=60)
    fres = tune(space, TunerConfig("clustering", batch_size=6, max_iterations=3, seed=1, direction="minimize"), flaky)
    flaky_ok = (flaky.stats["failed"] > 0 and 0 < fres.evaluations_completed < 6 * 4
                and all(r.value == (r.config["x"] - 0.3) ** 2 for r in fres.history.records))

    ok = evals_to_hit is not None and evals_to_hit <= 40 and matched and rev_ok and flaky_ok
    report("C8 wire protocol", ok,
           f"best <= 1e-2 after {evals_to_hit} evaluations (limit 40, 3 workers); reversed worker matched: {rev_ok}; "
           f"failure-injecting worker partial results matched: {flaky_ok} ({flaky.stats['failed']} failures)")
    assert ok


def test_c9_cli_determinism(tmp_path, report):
    space = tmp_path / "space.json"
    space.write_text(json.dumps({"x": {"dist": "uniform", "loc": -2, "scale": 6},
                                 "k": {"choices": ["a", "b"]}}))
    outputs = []
    for i in range(2):
        csv_path, res_path = tmp_path / f"t{i}.csv", tmp_path / f"r{i}.json"
        assert run_cli(["bench", "--name", "branin_mixed", "--algo", "hallucination,clustering,random",
                        "--batch", "2", "--iters", "4", "--repeats", "2", "--seed", "7", "--out", str(csv_path)]) == 0
        assert run_cli(["tune", "--space", str(space), "--worker-cmd", f"{sys.executable} {WORKERS / 'quad_worker.py'}",
                        "--algo", "hallucination", "--batch", "3", "--workers", "3", "--iters", "4", "--seed", "1",
                        "--direction", "minimize", "--out", str(res_path)]) == 0
        outputs.append((csv_path.read_bytes(), res_path.read_bytes()))
    ok = outputs[0] == outputs[1]
    report("C9 determinism", ok, f"bench CSV identical: {outputs[0][0] == outputs[1][0]}, "
           f"tune result identical: {outputs[0][1] == outputs[1][1]}")
    assert ok
