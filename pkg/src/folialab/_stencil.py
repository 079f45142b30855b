"""Central finite-difference stencils on periodic grids."""

from __future__ import annotations

import numpy as np

# weights for offsets -r..r
_D1 = {
    2: [-1 / 2, 0.0, 1 / 2],
    4: [1 / 12, -2 / 3, 0.0, 2 / 3, -1 / 12],
    6: [-1 / 60, 3 / 20, -3 / 4, 0.0, 3 / 4, -3 / 20, 1 / 60],
}
_D2 = {
    2: [1.0, -2.0, 1.0],
    4: [-1 / 12, 4 / 3, -5 / 2, 4 / 3, -1 / 12],
    6: [1 / 90, -3 / 20, 3 / 2, -49 / 18, 3 / 2, -3 / 20, 1 / 90],
}

ORDERS = tuple(sorted(_D1))


class Stencil:
    """Periodic central differences of a fixed even order.

    Arrays are node-major: the first ``len(spacing)`` axes are grid axes,
    trailing axes carry components. ``grad`` and ``hessian`` insert the
    derivative index (or indices) right after the grid axes.
    """

    def __init__(self, order: int, spacing):
        if order not in _D1:
            raise ValueError(f"stencil order must be one of {ORDERS}, got {order}")
        self.order = order
        self.radius = order // 2
        self.spacing = tuple(float(h) for h in spacing)
        self.q = len(self.spacing)
        self._w1 = np.array(_D1[order])
        self._w2 = np.array(_D2[order])

    def _apply(self, f, weights, axis):
        r = self.radius
        out = np.zeros_like(f, dtype=float)
        for j, w in zip(range(-r, r + 1), weights):
            if w != 0.0:
                out += w * np.roll(f, -j, axis=axis)
        return out

    def d1(self, f, axis: int):
        return self._apply(f, self._w1, axis) / self.spacing[axis]

    def d2(self, f, axis: int):
        return self._apply(f, self._w2, axis) / self.spacing[axis] ** 2

    def grad(self, f):
        return np.stack([self.d1(f, a) for a in range(self.q)], axis=self.q)

    def hessian(self, f):
        """Second partials; compact stencil on the diagonal, d1∘d1 off it."""
        q = self.q
        first = [self.d1(f, a) for a in range(q)]
        rows = []
        for a in range(q):
            row = []
            for b in range(q):
                row.append(self.d2(f, a) if a == b else self.d1(first[b], a))
            rows.append(np.stack(row, axis=q))
        return np.stack(rows, axis=q)

    def symbol_d1(self, theta):
        """Fourier symbol of h·d1 (imaginary part) at angle ``theta``."""
        r = self.radius
        return sum(w * np.sin(j * theta) for j, w in zip(range(-r, r + 1), self._w1))

    def symbol_d2(self, theta):
        """Fourier symbol of h²·d2 at angle ``theta`` (non-positive)."""
        r = self.radius
        return sum(w * np.cos(j * theta) for j, w in zip(range(-r, r + 1), self._w2))

    @property
    def d2_spectral_radius(self) -> float:
        """max |symbol_d2| over the Nyquist band, i.e. the value at theta = pi."""
        return float(abs(self.symbol_d2(np.pi)))

    def __repr__(self):
        return f"Stencil(order={self.order}, spacing={self.spacing})"
