"""cesched: a cooperative-task runtime with combine-and-exchange locks.

Exposes a work-stealing executor for generator-based tasks and task-aware
synchronization primitives whose unlock policy is selectable: classic inline
resumption, dispatch to the executor's ready queue, or combine-and-exchange
(suspend the unlocker, resume the next waiter on the spot).
"""

from .task import Continuation, TaskOutcome, TaskState, TaskStateError, UsageError, yield_now
from .runtime import (
    Executor,
    ExecutorConfig,
    ExecutorShutDown,
    RunReport,
    TaskHandle,
    resume_inline,
    schedule,
    switch_to,
)
from .sync import POLICIES, CondVar, ContractViolation, Mutex, RwMutex, Semaphore, SpinLock

__version__ = "0.1.0"

__all__ = [
    "Continuation",
    "TaskOutcome",
    "TaskState",
    "TaskStateError",
    "UsageError",
    "yield_now",
    "Executor",
    "ExecutorConfig",
    "ExecutorShutDown",
    "RunReport",
    "TaskHandle",
    "resume_inline",
    "schedule",
    "switch_to",
    "POLICIES",
    "CondVar",
    "ContractViolation",
    "Mutex",
    "RwMutex",
    "Semaphore",
    "SpinLock",
    "__version__",
]
