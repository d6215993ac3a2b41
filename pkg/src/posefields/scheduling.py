"""Multi-task epoch planning.

A batch mixes tasks by weight; an epoch ends once the limiting task (the
one with the smallest effective size n/quota) has supplied all the full
batches it can. Per-task shuffles are seeded by task name, so reordering
the task list only relabels the plan.
"""

import math
from dataclasses import dataclass

from .errors import SchedulingError
from .seeding import rng_for


@dataclass(frozen=True)
class TaskSpec:
    name: str
    size: int
    weight: float

    def __post_init__(self):
        if not self.name:
            raise SchedulingError("task name must be nonempty")
        if self.size < 1:
            raise SchedulingError(f"task {self.name}: size must be >= 1")
        if not (0.0 < self.weight <= 1.0):
            raise SchedulingError(f"task {self.name}: weight must be in (0, 1]")


@dataclass(frozen=True)
class EpochPlan:
    batch_size: int
    quotas: dict  # task name -> samples per batch
    limiting_task: str
    batches: tuple  # each batch: {task name: tuple of sample indices}

    @property
    def num_batches(self) -> int:
        return len(self.batches)

    def samples_used(self) -> dict:
        return {name: q * len(self.batches) for name, q in self.quotas.items()}

    def to_json_dict(self) -> dict:
        return {
            "batch_size": self.batch_size,
            "quotas": dict(sorted(self.quotas.items())),
            "limiting_task": self.limiting_task,
            "num_batches": len(self.batches),
            "batches": [
                {name: list(indices) for name, indices in sorted(batch.items())}
                for batch in self.batches
            ],
        }


def _check_tasks(tasks) -> None:
    if not tasks:
        raise SchedulingError("need at least one task")
    names = [t.name for t in tasks]
    if len(set(names)) != len(names):
        raise SchedulingError("task names must be unique")
    total = sum(t.weight for t in tasks)
    if abs(total - 1.0) > 1e-9:
        raise SchedulingError(f"weights must sum to 1, got {total}")


def batch_quotas(tasks, batch_size: int) -> dict:
    """Per-batch sample counts: round(weight * B) corrected by largest
    remainder so they sum exactly to B; a zero quota is an error."""
    _check_tasks(tasks)
    if batch_size < 1:
        raise SchedulingError(f"batch size must be >= 1, got {batch_size}")
    exact = [t.weight * batch_size for t in tasks]
    for t, x in zip(tasks, exact):
        if round(x) < 1:
            raise SchedulingError(
                f"task {t.name}: weight {t.weight} rounds to zero samples "
                f"per batch of {batch_size}")
    base = [math.floor(x) for x in exact]
    deficit = batch_size - sum(base)
    order = sorted(range(len(tasks)), key=lambda i: (-(exact[i] - base[i]), i))
    for i in order[:deficit]:
        base[i] += 1
    quotas = {t.name: q for t, q in zip(tasks, base)}
    for t in tasks:
        if quotas[t.name] == 0:
            raise SchedulingError(
                f"task {t.name}: per-batch quota is zero after rounding "
                f"(weight {t.weight}, batch size {batch_size})")
    return quotas


def plan_epoch(tasks, batch_size: int, rng_seed: int = 0) -> EpochPlan:
    """Build one epoch: floor(min n/quota) batches, every task's samples
    drawn without repetition from its own seeded shuffle."""
    quotas = batch_quotas(tasks, batch_size)
    num_batches = min(t.size // quotas[t.name] for t in tasks)
    limiting = min((t.size // quotas[t.name], i, t.name) for i, t in enumerate(tasks))[2]

    shuffles = {
        t.name: rng_for(rng_seed, "epoch-shuffle", t.name).permutation(t.size)
        for t in tasks
    }
    batches = []
    for b in range(num_batches):
        batch = {}
        for t in tasks:
            q = quotas[t.name]
            batch[t.name] = tuple(int(i) for i in shuffles[t.name][b * q:(b + 1) * q])
        batches.append(batch)
    return EpochPlan(
        batch_size=batch_size,
        quotas=quotas,
        limiting_task=limiting,
        batches=tuple(batches),
    )


def effective_epoch_samples(tasks, batch_size: int) -> dict:
    """Per-task samples consumed in one epoch: batches * per-batch quota."""
    quotas = batch_quotas(tasks, batch_size)
    num_batches = min(t.size // quotas[t.name] for t in tasks)
    return {t.name: num_batches * quotas[t.name] for t in tasks}
