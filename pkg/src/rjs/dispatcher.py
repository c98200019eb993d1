"""Asynchronous call engine.

A fixed pool of worker threads consumes submitted tasks and posts
completion messages onto a single FIFO queue; callbacks are delivered
only by an explicit pump (`process_events` / `drain`) running on the
interpreter domain, the thread that created the engine. Workers execute
host bodies and constructor calls only; they never touch script values,
proxies or the property tree.

Pool size comes from the RJS_WORKERS environment variable (default 4;
invalid values fall back to 4 with a warning on the diagnostic stream).
"""

from __future__ import annotations

import os
import queue
import sys
import threading
import time
from dataclasses import dataclass, field
from typing import Any, Callable, TextIO

from .errors import DomainError, EngineStopped
from .heap import Heap
from .model import HostValue, MethodSignature, ref

DEFAULT_WORKERS = 4


def resolve_worker_count(explicit: int | None = None, diag: TextIO | None = None) -> int:
    if explicit is not None:
        return max(1, int(explicit))
    raw = os.environ.get("RJS_WORKERS")
    if raw is None:
        return DEFAULT_WORKERS
    try:
        n = int(raw)
        if n > 0:
            return n
    except ValueError:
        pass
    stream = diag if diag is not None else sys.stderr
    stream.write(f"warning: invalid RJS_WORKERS value {raw!r}; using {DEFAULT_WORKERS}\n")
    return DEFAULT_WORKERS


@dataclass
class CallTask:
    """One unit of asynchronous work.

    Either `construct_type` is set (worker constructs an instance with the
    resolved constructor signature, or default-initializes when it is None)
    or `signature` alone is set (worker executes the body against `target`,
    which is the canonical self address or None for static/free calls).
    """

    target: int | None = None
    signature: MethodSignature | None = None
    args: list[HostValue] = field(default_factory=list)
    construct_type: str | None = None
    call_id: int = 0  # stamped by submit
    submitted_at: float = 0.0


@dataclass
class Completion:
    call_id: int
    outcome: HostValue | None
    fault: Exception | None
    finished_at: float


class Dispatcher:
    """Worker pool plus the callback-association table and completion pump."""

    def __init__(
        self,
        heap: Heap,
        workers: int | None = None,
        converter: Callable[[HostValue], Any] | None = None,
        error_sink: Callable[[int, Exception], None] | None = None,
        diag: TextIO | None = None,
    ):
        self.heap = heap
        self._diag = diag if diag is not None else sys.stderr
        self.worker_count = resolve_worker_count(workers, self._diag)
        self._converter = converter if converter is not None else (lambda value: value)
        self._error_sink = error_sink if error_sink is not None else self._default_sink
        self._tasks: queue.SimpleQueue = queue.SimpleQueue()
        self._completions: queue.SimpleQueue = queue.SimpleQueue()
        self._pending: dict[int, Callable[[Any], Any]] = {}
        self._lock = threading.Lock()
        self._next_id = 1
        self._stopped = False
        self._home_thread = threading.get_ident()
        self._threads = [
            threading.Thread(target=self._worker_loop, name=f"rjs-worker-{i}", daemon=True)
            for i in range(self.worker_count)
        ]
        for t in self._threads:
            t.start()

    # -- submission ---------------------------------------------------------

    def submit(self, task: CallTask, callback: Callable[[Any], Any]) -> int:
        """Enqueue a task and register its callback; returns immediately."""
        with self._lock:
            if self._stopped:
                raise EngineStopped("dispatcher has been shut down")
            task.call_id = self._next_id
            self._next_id += 1
            self._pending[task.call_id] = callback
        task.submitted_at = time.monotonic()
        self._tasks.put(task)
        return task.call_id

    def pending_count(self) -> int:
        """Calls submitted but not yet delivered to their callbacks."""
        with self._lock:
            return len(self._pending)

    # -- worker side ----------------------------------------------------------

    def _worker_loop(self) -> None:
        while True:
            task = self._tasks.get()
            if task is None:  # shutdown sentinel
                return
            outcome: HostValue | None = None
            fault: Exception | None = None
            try:
                outcome = self._execute(task)
            except Exception as exc:  # faults travel to the error sink
                fault = exc
            self._completions.put(
                Completion(task.call_id, outcome, fault, time.monotonic())
            )

    def _execute(self, task: CallTask) -> HostValue:
        if task.construct_type is not None:
            address = self.heap.construct(task.construct_type, task.args, task.signature)
            return ref(address)
        assert task.signature is not None
        return self.heap.exec_body(task.target, task.signature, task.args)

    # -- interpreter-domain pump -----------------------------------------------

    def _check_domain(self, what: str) -> None:
        if threading.get_ident() != self._home_thread:
            raise DomainError(f"{what} must run on the interpreter domain")

    def process_events(self, max_events: int | None = None) -> int:
        """Deliver up to `max_events` completions in completion order.

        Successful outcomes are converted and handed to the registered
        callback; faults (and exceptions escaping the callback or the
        conversion) go to the error sink. The pump never raises for a
        misbehaving callback.
        """
        self._check_domain("process_events")
        delivered = 0
        while max_events is None or delivered < max_events:
            try:
                completion: Completion = self._completions.get_nowait()
            except queue.Empty:
                break
            with self._lock:
                callback = self._pending.pop(completion.call_id, None)
            if callback is None:  # pragma: no cover - exactly-once guard
                continue
            if completion.fault is not None:
                self._route_error(completion.call_id, completion.fault)
            else:
                try:
                    callback(self._converter(completion.outcome))
                except Exception as exc:
                    self._route_error(completion.call_id, exc)
            delivered += 1
        return delivered

    def drain(self, timeout_ms: float) -> bool:
        """Pump until no call is pending or the timeout elapses."""
        self._check_domain("drain")
        deadline = time.monotonic() + timeout_ms / 1000.0
        while True:
            self.process_events()
            if self.pending_count() == 0:
                return True
            if time.monotonic() >= deadline:
                return False
            time.sleep(0.001)

    def _route_error(self, call_id: int, exc: Exception) -> None:
        try:
            self._error_sink(call_id, exc)
        except Exception:  # pragma: no cover - sink must not kill the pump
            pass

    def _default_sink(self, call_id: int, exc: Exception) -> None:
        self._diag.write(f"async call #{call_id} failed: {type(exc).__name__}: {exc}\n")

    # -- lifecycle ----------------------------------------------------------------

    def shutdown(self) -> None:
        """Stop accepting work; workers finish queued tasks, completions stay
        deliverable through process_events."""
        with self._lock:
            if self._stopped:
                return
            self._stopped = True
        for _ in self._threads:
            self._tasks.put(None)
        for t in self._threads:
            t.join()

    @property
    def stopped(self) -> bool:
        return self._stopped
