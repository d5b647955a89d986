"""Schedulers evaluate a batch of configurations and return what finished.

Every scheduler may return any subset of the batch in any order; the tuner
matches results back to proposals by configuration. Failures and timeouts
are skipped and counted in ``stats`` rather than raised.

The subprocess scheduler speaks a line-delimited JSON protocol so the
objective can live in any language::

    -> {"id": 7, "params": {"x": 0.25, "kernel": "rbf"}}
    <- {"id": 7, "objective": 0.0625}
    <- {"id": 8, "error": "diverged"}
"""

from __future__ import annotations

import json
import logging
import math
import os
import queue
import shlex
import shutil
import subprocess
import sys
import threading
import time
from collections import Counter
from collections.abc import Callable, Sequence
from concurrent.futures import FIRST_COMPLETED, ThreadPoolExecutor, wait
from typing import IO, Any, Optional, Protocol

from .domain import Configuration

log = logging.getLogger(__name__)

DEFAULT_TIMEOUT = 600.0

Objective = Callable[[Configuration], float]
Results = list[tuple[Configuration, float]]


class Scheduler(Protocol):
    def evaluate(self, batch: Sequence[Configuration]) -> Results: ...


class WorkerStartError(RuntimeError):
    """The worker command could not be launched."""


def serial_evaluate(
    objective: Objective,
    batch: Sequence[Configuration],
    timeout: Optional[float] = None,
    stats: Optional[Counter] = None,
) -> Results:
    """Evaluate in order, skipping failures.

    Once ``timeout`` seconds have elapsed no further evaluation is started.
    """
    stats = stats if stats is not None else Counter()
    deadline = None if timeout is None else time.monotonic() + timeout
    out: Results = []
    for i, cfg in enumerate(batch):
        if deadline is not None and time.monotonic() >= deadline:
            stats["timed_out"] += len(batch) - i
            break
        try:
            value = float(objective(cfg))
        except Exception as exc:  # noqa: BLE001 - any objective failure is a missing result
            log.info("evaluation failed for %r: %s", cfg, exc)
            stats["failed"] += 1
            continue
        stats["evaluated"] += 1
        out.append((cfg, value))
    return out


def pool_evaluate(
    objective: Objective,
    batch: Sequence[Configuration],
    workers: int,
    timeout: Optional[float] = DEFAULT_TIMEOUT,
    stats: Optional[Counter] = None,
) -> Results:
    """Evaluate on a thread pool; results are returned in completion order.

    Evaluations still running at the timeout are abandoned. Threads cannot
    be killed, so an abandoned call keeps running in the background.
    """
    if workers < 1:
        raise ValueError("workers must be >= 1")
    stats = stats if stats is not None else Counter()
    deadline = None if timeout is None else time.monotonic() + timeout
    out: Results = []
    ex = ThreadPoolExecutor(max_workers=workers, thread_name_prefix="batchtune-eval")
    try:
        pending = {ex.submit(objective, cfg): cfg for cfg in batch}
        while pending:
            remaining = None if deadline is None else max(deadline - time.monotonic(), 0.0)
            done, _ = wait(pending, timeout=remaining, return_when=FIRST_COMPLETED)
            if not done:
                stats["timed_out"] += len(pending)
                break
            for fut in done:
                cfg = pending.pop(fut)
                try:
                    value = float(fut.result())
                except Exception as exc:  # noqa: BLE001
                    log.info("evaluation failed for %r: %s", cfg, exc)
                    stats["failed"] += 1
                    continue
                stats["evaluated"] += 1
                out.append((cfg, value))
    finally:
        ex.shutdown(wait=False, cancel_futures=True)
    return out


class SerialScheduler:
    def __init__(self, objective: Objective, timeout: Optional[float] = DEFAULT_TIMEOUT):
        self.objective = objective
        self.timeout = timeout
        self.stats: Counter = Counter()

    def evaluate(self, batch: Sequence[Configuration]) -> Results:
        return serial_evaluate(self.objective, batch, self.timeout, self.stats)


class ThreadPoolScheduler:
    def __init__(self, objective: Objective, workers: int = os.cpu_count() or 1,
                 timeout: Optional[float] = DEFAULT_TIMEOUT):
        if workers < 1:
            raise ValueError("workers must be >= 1")
        self.objective = objective
        self.workers = workers
        self.timeout = timeout
        self.stats: Counter = Counter()

    def evaluate(self, batch: Sequence[Configuration]) -> Results:
        return pool_evaluate(self.objective, batch, self.workers, self.timeout, self.stats)


class BatchObjectiveScheduler:
    """Adapter for objectives that take the whole batch themselves.

    The wrapped function receives the list of configurations and returns
    ``(evals, params)``: values and the configurations they belong to, which
    may be a reordered subset of the input when some evaluations were lost.
    """

    def __init__(self, batch_objective: Callable[[list[Configuration]], tuple[Sequence[float], Sequence[Configuration]]]):
        self.batch_objective = batch_objective
        self.stats: Counter = Counter()

    def evaluate(self, batch: Sequence[Configuration]) -> Results:
        evals, params = self.batch_objective([dict(c) for c in batch])
        if len(evals) != len(params):
            raise ValueError(f"objective returned {len(evals)} values for {len(params)} configurations")
        self.stats["evaluated"] += len(evals)
        self.stats["missing"] += len(batch) - len(evals)
        return list(zip(params, evals))


# ---------------------------------------------------------------------------
# External worker processes


def _split_cmd(worker_cmd: str | Sequence[str]) -> list[str]:
    argv = shlex.split(worker_cmd) if isinstance(worker_cmd, str) else list(worker_cmd)
    if not argv:
        raise WorkerStartError("empty worker command")
    return argv


def _check_executable(argv: list[str]) -> None:
    exe = argv[0]
    if os.sep in exe or (os.altsep and os.altsep in exe):
        ok = os.path.isfile(exe) and os.access(exe, os.X_OK)
    else:
        ok = shutil.which(exe) is not None
    if not ok:
        raise WorkerStartError(f"worker executable not found or not executable: {exe!r}")


class _Worker:
    def __init__(self, wid: int, argv: list[str], inbox: queue.Queue):
        try:
            self.proc = subprocess.Popen(
                argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                text=True, encoding="utf-8", bufsize=1,
            )
        except OSError as exc:
            raise WorkerStartError(f"cannot start worker {argv!r}: {exc}") from exc
        self.wid = wid
        self.pending: set[int] = set()
        self.alive = True
        self.reader = threading.Thread(target=self._pump, args=(inbox,), daemon=True)
        self.reader.start()

    def _pump(self, inbox: queue.Queue) -> None:
        assert self.proc.stdout is not None
        try:
            for line in self.proc.stdout:
                inbox.put((self.wid, line))
        except (OSError, ValueError):
            pass
        inbox.put((self.wid, None))

    def send(self, lines: list[str]) -> bool:
        assert self.proc.stdin is not None
        try:
            for line in lines:
                self.proc.stdin.write(line)
            self.proc.stdin.close()
        except (BrokenPipeError, OSError, ValueError):
            return False
        return True

    def kill(self) -> None:
        self.alive = False
        if self.proc.poll() is None:
            self.proc.kill()
        try:
            self.proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            pass
        for stream in (self.proc.stdin, self.proc.stdout):
            try:
                if stream is not None:
                    stream.close()
            except OSError:
                pass


def _parse_reply(line: str) -> tuple[int, Optional[float], Optional[str]]:
    msg = json.loads(line)
    if not isinstance(msg, dict):
        raise ValueError("message is not an object")
    mid = msg.get("id")
    if not isinstance(mid, int) or isinstance(mid, bool):
        raise ValueError("missing integer id")
    has_obj, has_err = "objective" in msg, "error" in msg
    if has_obj == has_err:
        raise ValueError("message needs exactly one of objective/error")
    if has_obj:
        v = msg["objective"]
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ValueError("objective is not a number")
        return mid, float(v), None
    if not isinstance(msg["error"], str):
        raise ValueError("error is not a string")
    return mid, None, msg["error"]


def worker_protocol_evaluate(
    worker_cmd: str | Sequence[str],
    batch: Sequence[Configuration],
    workers: int = 1,
    timeout: Optional[float] = DEFAULT_TIMEOUT,
    stats: Optional[Counter] = None,
    first_id: int = 0,
) -> Results:
    """Evaluate a batch on freshly spawned worker processes.

    Requests are dealt round-robin to ``min(workers, len(batch))`` processes,
    whose stdin is then closed so workers may buffer and reorder freely.
    Responses are matched by id. A worker that sends a malformed line is
    killed and its outstanding requests are dropped. All workers are killed
    when the batch completes or times out.
    """
    if workers < 1:
        raise ValueError("workers must be >= 1")
    stats = stats if stats is not None else Counter()
    if not batch:
        return []
    argv = _split_cmd(worker_cmd)
    deadline = None if timeout is None else time.monotonic() + timeout
    inbox: queue.Queue = queue.Queue()
    ids = {first_id + i: cfg for i, cfg in enumerate(batch)}
    pool: list[_Worker] = []
    try:
        for w in range(min(workers, len(batch))):
            pool.append(_Worker(w, argv, inbox))
        outgoing: list[list[str]] = [[] for _ in pool]
        for n, (rid, cfg) in enumerate(ids.items()):
            w = pool[n % len(pool)]
            w.pending.add(rid)
            outgoing[w.wid].append(json.dumps({"id": rid, "params": cfg}) + "\n")
        for w in pool:
            if not w.send(outgoing[w.wid]):
                log.warning("worker %d closed its input early", w.wid)

        results: dict[int, float] = {}
        open_streams = len(pool)
        while open_streams and any(w.pending for w in pool if w.alive):
            remaining = None if deadline is None else deadline - time.monotonic()
            if remaining is not None and remaining <= 0:
                break
            try:
                wid, line = inbox.get(timeout=remaining)
            except queue.Empty:
                break
            w = pool[wid]
            if line is None:
                open_streams -= 1
                if w.pending:
                    stats["lost"] += len(w.pending)
                    w.pending.clear()
                continue
            if not w.alive or not line.strip():
                continue
            try:
                rid, value, err = _parse_reply(line)
                if rid not in w.pending:
                    raise ValueError(f"unexpected id {rid}")
            except ValueError as exc:
                log.warning("discarding worker %d after malformed message %r: %s", wid, line[:200], exc)
                stats["malformed"] += 1
                stats["lost"] += len(w.pending)
                w.pending.clear()
                w.kill()
                continue
            w.pending.discard(rid)
            if err is not None or value is None or not math.isfinite(value):
                stats["failed"] += 1
                continue
            stats["evaluated"] += 1
            results[rid] = value
        outstanding = sum(len(w.pending) for w in pool)
        if outstanding:
            stats["timed_out"] += outstanding
    finally:
        for w in pool:
            w.kill()
    # completion order of ids is preserved
    return [(ids[rid], v) for rid, v in results.items()]


class WorkerProtocolScheduler:
    """Scheduler backed by external worker processes (see module docstring).

    Construction fails fast with :class:`WorkerStartError` when the worker
    executable cannot be found. Request ids increase across batches.
    """

    def __init__(self, worker_cmd: str | Sequence[str], workers: int = 1,
                 timeout: Optional[float] = DEFAULT_TIMEOUT):
        if workers < 1:
            raise ValueError("workers must be >= 1")
        self.argv = _split_cmd(worker_cmd)
        _check_executable(self.argv)
        self.workers = workers
        self.timeout = timeout
        self.stats: Counter = Counter()
        self._next_id = 0

    def evaluate(self, batch: Sequence[Configuration]) -> Results:
        first = self._next_id
        self._next_id += len(batch)
        return worker_protocol_evaluate(self.argv, batch, self.workers, self.timeout, self.stats, first)


def serve(objective: Objective, stdin: IO[str] = sys.stdin, stdout: IO[str] = sys.stdout) -> None:
    """Run ``objective`` as a protocol worker until end of input.

    Intended for ``if __name__ == "__main__": serve(my_objective)`` scripts.
    """
    for line in stdin:
        if not line.strip():
            continue
        msg = json.loads(line)
        try:
            reply: dict[str, Any] = {"id": msg["id"], "objective": float(objective(msg["params"]))}
        except Exception as exc:  # noqa: BLE001
            reply = {"id": msg["id"], "error": f"{type(exc).__name__}: {exc}"}
        stdout.write(json.dumps(reply) + "\n")
        stdout.flush()
