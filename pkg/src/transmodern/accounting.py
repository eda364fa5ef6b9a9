"""
Process-wide accounting of attention-score allocations.

Attention kernels report how many score elements they materialize; tests and the long-context command read
the totals back to check that local attention grows linearly with the sequence length.
"""

import contextlib
import typing
from collections import Counter
from dataclasses import dataclass, field

import numpy as np


class SingletonMeta(type):
    """
    Every instance of a singleton shares the same object underneath.

    Source: https://stackoverflow.com/questions/6760685/creating-a-singleton-in-python
    """

    _instances: dict[type, typing.Any] = {}

    def __call__(cls, *args: typing.Any, **kwargs: typing.Any) -> typing.Any:
        """
        When a class is instantiated (e.g. `AllocationMeter()`), __call__ is called. This overrides the default.
        """
        if cls not in cls._instances:
            cls._instances[cls] = super().__call__(*args, **kwargs)

        return cls._instances[cls]


@dataclass
class AllocationRecord:
    """
    Element counts recorded while a `measure()` block was active.
    """

    totals: Counter[str] = field(default_factory=Counter)
    peaks: dict[str, int] = field(default_factory=dict)
    calls: Counter[str] = field(default_factory=Counter)

    def add(self, category: str, elements: int) -> None:
        """
        Account one allocation.
        """
        self.totals[category] += elements
        self.calls[category] += 1
        self.peaks[category] = max(self.peaks.get(category, 0), elements)


class AllocationMeter(metaclass=SingletonMeta):
    """
    Records attention-score allocations for every active measurement.
    """

    def __init__(self) -> None:
        """
        Start without any active measurement.
        """
        self._active: list[AllocationRecord] = []

    def record(self, category: str, elements: int) -> None:
        """
        Called by the attention kernels; a no-op unless something is measuring.
        """
        for record in self._active:
            record.add(category, elements)

    @contextlib.contextmanager
    def measure(self) -> typing.Iterator[AllocationRecord]:
        """
        Collect the allocations of the enclosed block.

        Example:
            with AllocationMeter().measure() as record:
                forward(model, ids)
            record.totals["local_scores"]
        """
        record = AllocationRecord()
        self._active.append(record)
        try:
            yield record
        finally:
            self._active.remove(record)


def linearity_factor(lengths: typing.Sequence[int], allocations: typing.Sequence[float]) -> float:
    """
    How far allocations stray from a line through the origin fitted over the lengths.

    1.0 means exactly proportional; quadratic growth over {256, ..., 2048} gives a factor around 7.
    """
    x = np.asarray(lengths, dtype=np.float64)
    y = np.asarray(allocations, dtype=np.float64)
    slope = float(x @ y / (x @ x))
    fitted = slope * x
    ratios = np.maximum(y / fitted, fitted / y)
    return float(ratios.max())
