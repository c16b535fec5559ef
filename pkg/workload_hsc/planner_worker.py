import logging
import threading
import time
from queue import Empty, Full, Queue

from workload_hsc.nmpc_planner import plan

logger = logging.getLogger(__name__)


class PlannerWorker(object):
    """Runs `plan` on a daemon thread behind a single-slot job queue and result queue."""

    def __init__(self, track, params, config):
        self.track = track
        self.params = params
        self.config = config.resolved(params)

        self.input_q = Queue(maxsize=1)
        self.output_q = Queue(maxsize=1)
        self.busy = threading.Event()

        self.thread = threading.Thread(target=self.run, name="planner-worker", daemon=True)
        self.thread.start()

    def run(self):
        while True:
            operation, job = self.input_q.get()
            if operation == "plan":
                state, clock, warm = job
                start = time.time()
                try:
                    series = plan(state, self.track, self.params, self.config, start_time=clock, warm_start=warm)
                except Exception:
                    logger.exception(f"plan at t={clock:.2f}s failed")
                    series = None
                logger.debug(f"plan at t={clock:.2f}s took {time.time() - start:.03}s")
                if series is not None:
                    self.output_q.put(series)
                self.busy.clear()
            elif operation == "stop":
                return
            else:
                raise Exception("Not implemented")

    def submit(self, state, clock, warm_start=None):
        """Queue a plan; False when the previous one is still running or unread."""
        if self.busy.is_set() or self.output_q.full():
            return False
        self.busy.set()
        try:
            self.input_q.put_nowait(("plan", (state, clock, warm_start)))
        except Full:
            self.busy.clear()
            return False
        return True

    def poll(self):
        try:
            return self.output_q.get_nowait()
        except Empty:
            return None

    def wait(self, timeout=None):
        return self.output_q.get(timeout=timeout)

    def close(self):
        self.input_q.put(("stop", None))
        self.thread.join(timeout=5)
