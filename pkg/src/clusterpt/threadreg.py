"""Registry of principal threads.

Each long-lived component thread (render loop, socket reader, post-process,
sender...) registers itself under a role so deployments can be audited: a
cluster with w workers runs exactly 4 + 3w principals (client: main +
receiver; master: render loop + post-process + one reader per worker;
worker: render loop + sender).  The census is also the debugging tool for
"what is this process running right now".

The registry is process-global.  In-process deployments (tests) see every
component's threads at once; real deployments see their own process's share.
"""

from __future__ import annotations

import threading

__all__ = ["register_current", "census", "clear", "spawn_registered",
           "expected_principals"]

_lock = threading.Lock()
_registry: dict = {}  # thread -> (role, name)


def register_current(role: str, name: str) -> None:
    """Mark the calling thread as a principal."""
    with _lock:
        _registry[threading.current_thread()] = (role, name)


def census() -> list:
    """(role, name) for every registered thread still alive, sorted."""
    with _lock:
        dead = [t for t in _registry if not t.is_alive()]
        for t in dead:
            del _registry[t]
        return sorted(_registry.values())


def clear() -> None:
    with _lock:
        _registry.clear()


def spawn_registered(role: str, name: str, target, args: tuple = (),
                     daemon: bool = True) -> threading.Thread:
    """Start a thread that registers itself before running target."""

    def run() -> None:
        register_current(role, name)
        target(*args)

    t = threading.Thread(target=run, name=f"{role}:{name}", daemon=daemon)
    t.start()
    return t


def expected_principals(workers: int) -> int:
    """Principal thread count for a full deployment with `workers` workers."""
    return 4 + 3 * workers
