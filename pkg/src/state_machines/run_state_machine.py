"""Run lifecycle state machine using the python-statemachine framework."""

from enum import Enum
from typing import Optional

from loguru import logger
from statemachine import State, StateMachine


class RunStates(Enum):
    """Lifecycle states of one flow run."""
    CREATED = "created"
    INITIALIZED = "initialized"
    RUNNING = "running"
    COMPLETED = "completed"
    ABORTED = "aborted"


class RunStateMachine(StateMachine):
    """
    created -> initialized -> running -> completed, with abort reachable from
    every non-final state.

    run_flow drives the machine; the final state decides RunRecord.complete.
    """

    created = State("Created", initial=True)
    initialized = State("Initialized")
    running = State("Running")
    completed = State("Completed", final=True)
    aborted = State("Aborted", final=True)

    init_done = created.to(initialized)
    start_run = initialized.to(running)
    finish = running.to(completed)
    abort = created.to(aborted) | initialized.to(aborted) | running.to(aborted)

    def __init__(self, label: str = "run"):
        super().__init__()
        self.label = label
        self.abort_reason: Optional[str] = None
        self.state_history = [RunStates.CREATED.value]

    def _fire(self, event: str) -> str:
        previous = self.current_state
        self.send(event)
        self.state_history.append(self.current_state.id)
        logger.debug(f"{self.label}: {previous.id} → {self.current_state.id}")
        return self.current_state.id

    def mark_initialized(self) -> str:
        return self._fire("init_done")

    def mark_running(self) -> str:
        return self._fire("start_run")

    def mark_completed(self) -> str:
        return self._fire("finish")

    def mark_aborted(self, reason: str) -> str:
        """Abort unless already final (a second abort is a no-op)."""
        if self.is_final:
            logger.debug(f"{self.label}: ignoring abort in final state {self.current_state.id}")
            return self.current_state.id
        self.abort_reason = reason
        logger.warning(f"{self.label} aborted: {reason}")
        return self._fire("abort")

    @property
    def is_final(self) -> bool:
        return self.current_state in (self.completed, self.aborted)

    @property
    def is_complete(self) -> bool:
        return self.current_state == self.completed

    def __str__(self) -> str:
        return f"RunStateMachine({self.label}, {self.current_state.id})"
