"""
Timer utilities for the LTDL command line.
Prints the elapsed time of long phases (grouping, solving, trials).
"""

import threading
import time


class PhaseTimer:
    """Timer class for tracking execution phases."""

    def __init__(self, interval: float = 5.0, echo=print):
        self._lock = threading.Lock()
        self._phase = None
        self._start_ts = None
        self._stop_flag = threading.Event()
        self._thread = None
        self._interval = interval
        self._echo = echo
        self.durations: dict[str, float] = {}

    def start(self, phase_name: str):
        """Start timing a new phase, closing the current one."""
        with self._lock:
            if self._phase == phase_name and self._thread and self._thread.is_alive():
                return
            self._close_locked()
            self._phase = phase_name
            self._start_ts = time.monotonic()
            self._stop_flag = threading.Event()
            self._thread = threading.Thread(target=self._run_loop, args=(self._stop_flag,), daemon=True)
            self._thread.start()

    def _close_locked(self):
        """Record the running phase and stop its thread (lock held)."""
        if self._phase is not None and self._start_ts is not None:
            self.durations[self._phase] = time.monotonic() - self._start_ts
        self._stop_flag.set()
        t = self._thread
        if t:
            self._lock.release()
            try:
                t.join(timeout=0.5)
            finally:
                self._lock.acquire()
        self._thread = None
        self._phase = None

    def _run_loop(self, stop: threading.Event):
        # Waits first, so short phases print nothing
        while not stop.wait(self._interval):
            elapsed = int(time.monotonic() - (self._start_ts or time.monotonic()))
            hh, rem = divmod(elapsed, 3600)
            mm, ss = divmod(rem, 60)
            self._echo(f"[{format_phase_label(self._phase or 'unknown')}: {hh}:{mm:02d}:{ss:02d}]")

    def summarize_and_stop(self):
        """Print the finished phase and stop the timer."""
        with self._lock:
            phase = self._phase
            self._close_locked()
            if phase is not None:
                elapsed = int(self.durations[phase])
                self._echo(f"[Phase {phase}] finished in {elapsed // 60:02d}:{elapsed % 60:02d}")

    def stop(self):
        with self._lock:
            self._close_locked()


def format_phase_label(phase_key: str) -> str:
    """Format phase key into a readable label."""
    mapping = {
        'grouping': 'Grouping Phase',
        'solving': 'ADMM Solving Phase',
        'trials': 'Synthetic Trials Phase',
        'unknown': 'Unknown Phase',
    }
    return mapping.get(phase_key, phase_key.replace('_', ' ').title() + ' Phase')
