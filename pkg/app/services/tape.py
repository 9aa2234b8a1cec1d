"""
Minimal reverse-mode tape for the fixed computation graphs in this package.

Both graphs are chains: the coefficient network (layers -> guard -> physics ->
loss) and the MPC rollout (step after step over the horizon). Each recorded
entry maps the gradient of its output to the gradient of its input and may
deposit gradients for leaf arrays (weights, controls) on the tape.
"""

from typing import Callable, Dict, List

import numpy as np

Backward = Callable[[np.ndarray, "Tape"], np.ndarray]


class Tape:
    """Records backward closures during a forward pass and replays them in reverse."""

    def __init__(self):
        self._entries: List[Backward] = []
        self.grads: Dict[str, np.ndarray] = {}

    def __len__(self) -> int:
        return len(self._entries)

    def record(self, backward: Backward) -> None:
        self._entries.append(backward)

    def accumulate(self, name: str, grad: np.ndarray) -> None:
        """Add a leaf gradient, summing contributions recorded at several steps."""
        if name in self.grads:
            self.grads[name] = self.grads[name] + grad
        else:
            self.grads[name] = np.array(grad, dtype=float)

    def backward(self, seed: np.ndarray) -> np.ndarray:
        """
        Propagate ``seed`` (gradient of the scalar objective w.r.t. the last
        recorded output) through every entry.

        Returns:
            Gradient w.r.t. the first recorded input.
        """
        grad = seed
        for entry in reversed(self._entries):
            grad = entry(grad, self)
        return grad
