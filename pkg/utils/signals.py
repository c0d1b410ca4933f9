"""
Signal handling utilities for the LTDL command line.
The first Ctrl+C asks the running solver to stop after its current
iteration; a second one interrupts immediately.
"""

import signal
import threading

_stop_event = threading.Event()
_previous_handler = None


def stop_requested() -> bool:
    """True once an interrupt asked the solver to stop."""
    return _stop_event.is_set()


def reset():
    _stop_event.clear()


def _signal_handler(signum, frame):
    if _stop_event.is_set():
        restore_signal_handlers()
        raise KeyboardInterrupt
    print("\n[LTDL] Interrupt received, stopping after the current iteration (Ctrl+C again to abort).")
    _stop_event.set()


def setup_signal_handlers():
    """Install the SIGINT handler; only possible from the main thread."""
    global _previous_handler
    reset()
    if threading.current_thread() is not threading.main_thread():
        return
    _previous_handler = signal.signal(signal.SIGINT, _signal_handler)


def restore_signal_handlers():
    global _previous_handler
    if _previous_handler is not None and threading.current_thread() is threading.main_thread():
        signal.signal(signal.SIGINT, _previous_handler)
    _previous_handler = None
