"""
Thread management utilities

This module provides a small worker pool for running independent tasks
(patch predictions, cutout predictions) on background threads while
returning their results in submission order.
"""
import threading
import logging
from queue import Queue, Empty

from tqdm import tqdm

from src.utils.logging_utils import progress_enabled

# Set up logging
logger = logging.getLogger(__name__)

# Default number of worker threads
MAX_WORKERS = 3


class WorkerPool:
    """
    Queue-backed pool of worker threads.

    Results are stored by task index, so the output order never depends on
    which thread finished first.
    """

    def __init__(self, max_workers=MAX_WORKERS):
        self.max_workers = max(1, int(max_workers))
        self.task_queue = Queue()
        self.workers = []
        self.should_stop = False
        self._results = {}
        self._errors = {}
        self._lock = threading.Lock()
        self._progress = None

    def add_task(self, index, func, *args, **kwargs):
        """
        Add a task to the queue.

        Args:
            index: Position of the task's result in the output list
            func: The function to call
            *args: Arguments to pass to the function
            **kwargs: Keyword arguments to pass to the function
        """
        self.task_queue.put((index, func, args, kwargs))

    def worker_thread(self):
        """
        Worker thread that processes tasks from the queue
        """
        logger.debug("Starting worker thread")

        while not self.should_stop:
            try:
                index, task, args, kwargs = self.task_queue.get(timeout=0.1)
            except Empty:
                continue

            try:
                result = task(*args, **kwargs)
                with self._lock:
                    self._results[index] = result
            except Exception as e:
                logger.error(f"Error in background task {getattr(task, '__name__', task)}: {str(e)}")
                with self._lock:
                    self._errors[index] = e
            finally:
                with self._lock:
                    if self._progress is not None:
                        self._progress.update(1)
                self.task_queue.task_done()

        logger.debug("Worker thread stopping")

    def ensure_workers(self):
        """
        Ensure that worker threads are running
        """
        self.workers = [w for w in self.workers if w.is_alive()]

        while len(self.workers) < self.max_workers:
            thread = threading.Thread(target=self.worker_thread, daemon=True)
            thread.start()
            self.workers.append(thread)
            logger.debug(f"Started new worker thread (total: {len(self.workers)})")

    def stop_workers(self):
        """
        Stop all worker threads
        """
        self.should_stop = True

        for worker in self.workers:
            if worker.is_alive():
                worker.join(timeout=2)

        self.workers = []
        self.should_stop = False

    def map(self, func, items, desc=None):
        """
        Apply func to every item and return the results in input order.

        Args:
            func: Callable taking one item
            items: Iterable of task inputs
            desc: Optional progress-bar label

        Returns:
            list: One result per item

        Raises:
            Exception: The first failing task's exception (by index)
        """
        items = list(items)
        self._results = {}
        self._errors = {}

        with tqdm(total=len(items), desc=desc, disable=not progress_enabled(), leave=False) as bar:
            if self.max_workers == 1 or len(items) <= 1:
                for index, item in enumerate(items):
                    self._results[index] = func(item)
                    bar.update(1)
            else:
                self._progress = bar
                try:
                    for index, item in enumerate(items):
                        self.add_task(index, func, item)
                    self.ensure_workers()
                    self.task_queue.join()
                finally:
                    self._progress = None
                    self.stop_workers()

        if self._errors:
            first = min(self._errors)
            raise self._errors[first]

        return [self._results[index] for index in range(len(items))]


def run_in_workers(func, items, max_workers=MAX_WORKERS, desc=None):
    """
    Convenience wrapper running func over items on a fresh WorkerPool.
    """
    return WorkerPool(max_workers).map(func, items, desc=desc)
