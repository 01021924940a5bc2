"""Fused propagation kernels.

One propagation step is a sparse-times-dense product followed by a clamp
(hard) or an anchored blend (soft) and the Frobenius residual against the
previous iterate. Fusing the three into one pass over the output matters at
scale: the matrices run to hundreds of MB, so every extra pass is real time.

When numba is unavailable the same steps run as scipy/numpy expressions.
Both paths accumulate each output entry in identical index order, so the
propagation results agree bit for bit; only the residual scalar may differ
in the last ulp (different summation tree), which is diagnostic-only.
Kernels are single-threaded by design: determinism is part of the contract
and the step is memory-bound anyway.
"""

from __future__ import annotations

import numpy as np

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False


if HAVE_NUMBA:

    @numba.njit(cache=True, fastmath=False)
    def _hard_step_jit(indptr, indices, data, current, mask, x0, out):
        n, m = current.shape
        total = 0.0
        for i in range(n):
            row = out[i]
            for c in range(m):
                row[c] = 0.0
            for p in range(indptr[i], indptr[i + 1]):
                w = data[p]
                source = current[indices[p]]
                for c in range(m):
                    row[c] += w * source[c]
            mask_row = mask[i]
            x0_row = x0[i]
            current_row = current[i]
            for c in range(m):
                if mask_row[c]:
                    row[c] = x0_row[c]
                d = row[c] - current_row[c]
                total += d * d
        return np.sqrt(total)

    @numba.njit(cache=True, fastmath=False)
    def _soft_step_jit(indptr, indices, data, current, anchored, alpha, out):
        n, m = current.shape
        total = 0.0
        for i in range(n):
            row = out[i]
            for c in range(m):
                row[c] = 0.0
            for p in range(indptr[i], indptr[i + 1]):
                w = data[p]
                source = current[indices[p]]
                for c in range(m):
                    row[c] += w * source[c]
            anchored_row = anchored[i]
            current_row = current[i]
            for c in range(m):
                scaled = alpha * row[c]
                row[c] = scaled + anchored_row[c]
                d = row[c] - current_row[c]
                total += d * d
        return np.sqrt(total)

    def hard_step(adjacency, current, mask, x0, out) -> float:
        return float(
            _hard_step_jit(
                adjacency.indptr, adjacency.indices, adjacency.data,
                current, mask, x0, out,
            )
        )

    def soft_step(adjacency, current, anchored, alpha, out) -> float:
        return float(
            _soft_step_jit(
                adjacency.indptr, adjacency.indices, adjacency.data,
                current, anchored, alpha, out,
            )
        )

else:  # pragma: no cover - exercised only without numba

    def hard_step(adjacency, current, mask, x0, out) -> float:
        product = adjacency @ current
        product[mask] = x0[mask]
        out[:] = product
        return float(np.linalg.norm(out - current))

    def soft_step(adjacency, current, anchored, alpha, out) -> float:
        out[:] = alpha * (adjacency @ current)
        out += anchored
        return float(np.linalg.norm(out - current))
