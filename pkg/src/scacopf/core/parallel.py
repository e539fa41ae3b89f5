"""
Architecture manager / workers / writer pour la phase II.

Le manager garde l'état (tâches, solutions en attente) ; les workers sont sans état et tirent
les tâches d'une file ; le writer écrit en série et signale sa disponibilité. Tous les
échanges passent par des files de messages (queue.Queue), aucun état mutable partagé.

Protocole :
    worker  -> manager : ResultMessage (solution, statut, temps) ou crash
    writer  -> manager : WRITER_READY, ou échec d'écriture avec le lot concerné
    manager -> writer  : lot de toutes les solutions stockées, à chaque WRITER_READY ;
                         un lot en échec est renvoyé une fois puis déclaré non écrit
"""

import logging
import queue
import threading
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence

logger = logging.getLogger(__name__)

WRITER_READY = "writer-ready"
_STOP = object()


@dataclass(frozen=True)
class TaskMessage:
    """Tâche : une contingence à résoudre (le cas et la base sont des instantanés partagés)."""

    k: int
    contingency_id: str
    attempt: int = 0


@dataclass(frozen=True)
class ResultMessage:
    """Résultat d'une tâche : record de solution, statut, temps de calcul."""

    k: int
    contingency_id: str
    record: Any
    status: str
    wall_time: float = 0.0
    worker: int = -1


@dataclass(frozen=True)
class _WorkerCrash:
    task: TaskMessage
    worker: int
    error: str


@dataclass(frozen=True)
class _WriterFailure:
    batch: List[ResultMessage]
    error: str


@dataclass
class CompletionReport:
    """Bilan du manager : conservation des solutions et événements."""

    n_tasks: int = 0
    received: int = 0
    forwarded: int = 0
    defaults: int = 0
    requeued: List[str] = field(default_factory=list)
    fallbacks: List[str] = field(default_factory=list)
    timeouts: List[str] = field(default_factory=list)
    dispatch_order: List[str] = field(default_factory=list)
    write_errors: List[str] = field(default_factory=list)
    unwritten: List[str] = field(default_factory=list)
    stragglers: List[str] = field(default_factory=list)
    max_buffer: int = 0
    wall_time: float = 0.0

    @property
    def conserved(self) -> bool:
        return self.forwarded == self.received + self.defaults

    @property
    def complete(self) -> bool:
        """Toutes les solutions reçues ont été écrites."""
        return not self.unwritten


# ==============================================================================
# WORKER AND WRITER LOOPS
# ==============================================================================

def worker_loop(
    worker_id: int,
    tasks: "queue.Queue",
    outbox: "queue.Queue",
    solve: Callable[[TaskMessage], Any],
    status_of: Callable[[Any], str],
) -> None:
    """
    Tire des tâches jusqu'au signal d'arrêt. Une exception du solveur est un crash : le
    worker le signale au manager puis s'arrête.
    """
    while True:
        task = tasks.get()
        if task is _STOP:
            return
        t0 = time.perf_counter()
        try:
            record = solve(task)
        except Exception as e:
            outbox.put(_WorkerCrash(task, worker_id, f"{type(e).__name__}: {e}"))
            return
        outbox.put(ResultMessage(
            task.k, task.contingency_id, record, status_of(record),
            time.perf_counter() - t0, worker_id,
        ))


def writer_loop(
    inbox: "queue.Queue",
    outbox: "queue.Queue",
    write: Callable[[List[ResultMessage]], None],
) -> None:
    """
    Écrit chaque lot reçu puis signale WRITER_READY ; signale sa disponibilité au démarrage.
    Un lot en échec est rendu au manager, ce qui vaut aussi signal de disponibilité.
    """
    outbox.put(WRITER_READY)
    while True:
        batch = inbox.get()
        if batch is _STOP:
            return
        try:
            write(batch)
        except Exception as e:
            outbox.put(_WriterFailure(batch, f"{type(e).__name__}: {e}"))
            continue
        outbox.put(WRITER_READY)


# ==============================================================================
# MANAGER
# ==============================================================================

class Manager:
    """
    Boucle du manager.

    Chaque tâche reçoit exactement un résultat : solution, record de repli après un second
    crash, ou record de timeout à l'échéance.
    """

    MAX_RETRIES = 1
    MAX_WRITE_RETRIES = 1
    BUFFER_WARNING = 1000
    POLL_INTERVAL = 0.05
    JOIN_TIMEOUT = 5.0

    def __init__(
        self,
        solve: Callable[[TaskMessage], Any],
        fallback: Callable[[TaskMessage, str], Any],
        write: Callable[[List[ResultMessage]], None],
        workers: int = 1,
        deadline: Optional[float] = None,
        status_of: Callable[[Any], str] = lambda record: "ok",
    ):
        if workers < 1:
            raise ValueError(f"workers must be >= 1 (got {workers})")
        self.solve = solve
        self.fallback = fallback
        self.write = write
        self.workers = workers
        self.deadline = deadline
        self.status_of = status_of

        self._tasks: "queue.Queue" = queue.Queue()
        self._inbox: "queue.Queue" = queue.Queue()
        self._writer_inbox: "queue.Queue" = queue.Queue()
        self._threads: List[threading.Thread] = []
        self._next_worker = 0
        self._write_failures = 0

    def _spawn_worker(self) -> None:
        wid = self._next_worker
        self._next_worker += 1
        thread = threading.Thread(
            target=worker_loop,
            args=(wid, self._tasks, self._inbox, self.solve, self.status_of),
            name=f"scacopf-worker-{wid}",
            daemon=True,
        )
        thread.start()
        self._threads.append(thread)

    def run(self, tasks: Sequence[TaskMessage], defaults: Sequence[ResultMessage] = ()) -> CompletionReport:
        """
        Args:
            tasks: Tâches dans l'ordre de dispatch (contingences classées)
            defaults: Solutions par défaut transmises au writer avant toute autre

        Returns:
            CompletionReport
        """
        t0 = time.perf_counter()
        report = CompletionReport(n_tasks=len(tasks), defaults=len(defaults))
        pending: Dict[int, TaskMessage] = {t.k: t for t in tasks}
        buffer: List[ResultMessage] = list(defaults)
        writer_ready = False

        writer = threading.Thread(
            target=writer_loop, args=(self._writer_inbox, self._inbox, self.write),
            name="scacopf-writer", daemon=True,
        )
        writer.start()

        for task in tasks:
            self._tasks.put(task)
            report.dispatch_order.append(task.contingency_id)
            logger.info(f"Dispatching contingency {task.contingency_id} (k={task.k})")
        for _ in range(min(self.workers, len(tasks))):
            self._spawn_worker()

        warned = False
        while True:
            if writer_ready and buffer:
                self._writer_inbox.put(buffer)
                report.forwarded += len(buffer)
                buffer, writer_ready = [], False
            if not pending and not buffer and writer_ready:
                break

            if pending and self.deadline is not None and time.perf_counter() >= self.deadline:
                for k in sorted(pending):
                    task = pending.pop(k)
                    logger.warning(f"Contingency {task.contingency_id}: deadline reached, timeout record")
                    buffer.append(ResultMessage(
                        task.k, task.contingency_id, self.fallback(task, "timeout"), "timeout"
                    ))
                    report.timeouts.append(task.contingency_id)
                    report.received += 1
                continue

            try:
                message = self._inbox.get(timeout=self.POLL_INTERVAL)
            except queue.Empty:
                continue

            if isinstance(message, _WriterFailure):
                writer_ready = True
                self._handle_write_failure(message, buffer, report)
            elif message == WRITER_READY:
                writer_ready = True
                self._write_failures = 0
            elif isinstance(message, _WorkerCrash):
                self._handle_crash(message, pending, buffer, report)
            elif isinstance(message, ResultMessage) and message.k in pending:
                pending.pop(message.k)
                buffer.append(message)
                report.received += 1
            elif isinstance(message, ResultMessage):
                logger.debug(f"Late result for {message.contingency_id} ignored")

            report.max_buffer = max(report.max_buffer, len(buffer))
            if not warned and len(buffer) > self.BUFFER_WARNING:
                logger.warning(f"Manager buffer holds {len(buffer)} solutions (writer is slow)")
                warned = True

        # tâches non commencées (échéance) : retirées avant l'arrêt des workers
        while True:
            try:
                self._tasks.get_nowait()
            except queue.Empty:
                break
        for _ in self._threads:
            self._tasks.put(_STOP)
        self._writer_inbox.put(_STOP)
        writer.join()
        report.stragglers = self._join_workers()

        report.wall_time = time.perf_counter() - t0
        logger.info(
            f"Manager done: {report.received} results, {report.forwarded} forwarded, "
            f"{len(report.requeued)} re-queued, {len(report.fallbacks)} fallbacks, "
            f"{len(report.timeouts)} timeouts in {report.wall_time:.2f}s"
        )
        if report.unwritten:
            logger.error(f"Solutions never written: {', '.join(report.unwritten)}")
        return report

    def _join_workers(self) -> List[str]:
        """Attend les workers au plus JOIN_TIMEOUT secondes ; rend les noms de ceux encore actifs."""
        limit = time.perf_counter() + self.JOIN_TIMEOUT
        for thread in self._threads:
            thread.join(timeout=max(limit - time.perf_counter(), 0.0))
        alive = [t.name for t in self._threads if t.is_alive()]
        if alive:
            logger.warning(f"Workers still solving after shutdown: {', '.join(alive)}")
        return alive

    def _handle_write_failure(self, failure: _WriterFailure, buffer, report) -> None:
        report.forwarded -= len(failure.batch)
        report.write_errors.append(failure.error)
        logger.error(f"Writer failed on a batch of {len(failure.batch)} solutions: {failure.error}")
        if self._write_failures < self.MAX_WRITE_RETRIES:
            self._write_failures += 1
            buffer[:0] = failure.batch
            logger.warning(f"Re-sending {len(failure.batch)} solutions to the writer")
        else:
            self._write_failures = 0
            report.unwritten.extend(m.contingency_id for m in failure.batch)

    def _handle_crash(self, crash: _WorkerCrash, pending, buffer, report) -> None:
        task = crash.task
        logger.error(f"Worker {crash.worker} crashed on {task.contingency_id}: {crash.error}")
        if task.k not in pending:
            return
        if task.attempt < self.MAX_RETRIES:
            retry = TaskMessage(task.k, task.contingency_id, task.attempt + 1)
            pending[task.k] = retry
            self._tasks.put(retry)
            report.requeued.append(task.contingency_id)
            logger.warning(f"Contingency {task.contingency_id} re-queued (attempt {retry.attempt})")
        else:
            pending.pop(task.k)
            buffer.append(ResultMessage(
                task.k, task.contingency_id, self.fallback(task, "crashed"), "fallback", 0.0, crash.worker
            ))
            report.fallbacks.append(task.contingency_id)
            report.received += 1
        if pending:
            self._spawn_worker()


def manager_loop(
    tasks: Sequence[TaskMessage],
    solve: Callable[[TaskMessage], Any],
    fallback: Callable[[TaskMessage, str], Any],
    write: Callable[[List[ResultMessage]], None],
    workers: int = 1,
    deadline: Optional[float] = None,
    defaults: Sequence[ResultMessage] = (),
    status_of: Callable[[Any], str] = lambda record: "ok",
) -> CompletionReport:
    """
    Exécute le protocole manager / workers / writer jusqu'à résolution de toutes les tâches et
    vidage du writer.

    Args:
        tasks: Tâches, dans l'ordre de dispatch
        solve: Résolution d'une tâche (exécutée par les workers)
        fallback: Record de repli (tâche, raison) pour les crashs répétés et les timeouts
        write: Écriture d'un lot de résultats (exécutée par le writer, en série)
        workers: Nombre de workers
        deadline: Échéance absolue (time.perf_counter), None = illimitée
        defaults: Records par défaut transmis au writer en premier
        status_of: Statut d'un record de solution

    Returns:
        CompletionReport
    """
    return Manager(solve, fallback, write, workers, deadline, status_of).run(tasks, defaults)
