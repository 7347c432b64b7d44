"""Coil-weight fitting.

The fit finds a complex weight vector x so that the magnitude of the
combined image A @ x matches the RSS target b, by minimizing

    F(x) = sum_i ( sqrt(s_i) - sqrt(b_i) )^2,   s_i = sqrt(|(A x)_i|^2 + eps)

over rows selected by a mask (b_i > threshold; all rows for the default
threshold 0 on data whose background noise keeps b positive). The square
roots weigh relative rather than absolute errors, which is what makes the
combination behave like a plausible single receiver instead of chasing the
bright pixels only.

eps = (1e-10 * max(b))^2 smooths |.| at the origin so F is differentiable
everywhere and the gradient never divides by zero; its effect on the
objective is far below every tolerance used here.

Gradient, derived once so the optimizers can share it: with
q_i = |z_i|^2 and z = A x,

    dF/dq_i = (1 - sqrt(b_i)/sqrt(s_i)) / (2 s_i)
    w_i     = dF/dq_i * z_i
    dF/dRe(x_c) = 2 Re( (A^H w)_c ),   dF/dIm(x_c) = 2 Im( (A^H w)_c )

The optimizers see the 2k real parameters (Re x_1, Im x_1, ...). The same
chain rule gives the residual Jacobian rows used by Levenberg-Marquardt:
row i of J is the real/imag interleave of conj(z_i) / (2 s_i^{3/2}) * A_i.
Everything is verified against central finite differences in the tests;
do not change one path without re-running them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import DimensionError, DomainError, IllConditionedError, StallError
from .io import FitManifest
from .recon import CoilImageStack, RssVolume

_CHUNK_ROWS = 1 << 16


def as_real(x: np.ndarray) -> np.ndarray:
    """Complex k-vector -> real 2k-vector (Re x1, Im x1, Re x2, ...)."""
    return np.ascontiguousarray(x, dtype=np.complex128).view(np.float64)


def as_complex(theta: np.ndarray) -> np.ndarray:
    """Inverse of :func:`as_real`."""
    return np.ascontiguousarray(theta, dtype=np.float64).view(np.complex128)


class Objective:
    """The masked magnitude-matching objective F and its derivatives.

    Parameters
    ----------
    matrix : (rows, k) complex array
        The flattened coil-image matrix A.
    b : (rows,) nonnegative array
        The RSS target.
    mask : (rows,) bool array, optional
        Rows to fit; defaults to all rows. Masked-out rows contribute
        exactly zero to the value, gradient, and normal system.
    epsilon : float, optional
        Smoothing floor under |A x|; defaults to (1e-10 * max(b))^2.
    """

    def __init__(self, matrix, b, mask=None, epsilon=None):
        A = np.asarray(matrix, dtype=np.complex128)
        b = np.asarray(b, dtype=np.float64).reshape(-1)
        if A.ndim != 2 or A.shape[0] != b.size:
            raise DimensionError(f"matrix {A.shape} does not match target of {b.size} rows")
        if b.size and b.min() < 0:
            raise DomainError("target b must be nonnegative")
        if mask is None:
            mask = np.ones(b.size, dtype=bool)
        else:
            mask = np.asarray(mask, dtype=bool).reshape(-1)
            if mask.size != b.size:
                raise DimensionError("mask length does not match target")
        if epsilon is None:
            scale = float(b.max()) if b.size else 0.0
            epsilon = (1e-10 * scale) ** 2 if scale > 0 else np.finfo(np.float64).tiny
        if not epsilon > 0:
            raise DomainError("epsilon must be positive")

        self.matrix = A
        self.b_sqrt = np.sqrt(b)
        self.mask = mask
        self.epsilon = float(epsilon)
        self._A = A if mask.all() else A[mask]
        self._bs = self.b_sqrt if mask.all() else self.b_sqrt[mask]

    @property
    def k(self) -> int:
        return self.matrix.shape[1]

    def _forward(self, x):
        z = self._A @ x
        s = np.sqrt(np.abs(z) ** 2 + self.epsilon)
        return z, s, np.sqrt(s)

    def value(self, x) -> float:
        _, _, sq = self._forward(np.asarray(x, dtype=np.complex128))
        return float(np.sum((sq - self._bs) ** 2))

    def residuals(self, x) -> np.ndarray:
        """Per-row residual sqrt(s_i) - sqrt(b_i) over masked rows."""
        _, _, sq = self._forward(np.asarray(x, dtype=np.complex128))
        return sq - self._bs

    def value_and_gradient(self, x) -> tuple[float, np.ndarray]:
        x = np.asarray(x, dtype=np.complex128)
        z, s, sq = self._forward(x)
        diff = sq - self._bs
        value = float(np.sum(diff**2))
        w = (1.0 - self._bs / sq) / (2.0 * s) * z
        g = self._A.conj().T @ w
        grad = np.empty(2 * self.k, dtype=np.float64)
        grad[0::2] = 2.0 * g.real
        grad[1::2] = 2.0 * g.imag
        return value, grad

    def gradient(self, x) -> np.ndarray:
        """Gradient with respect to the 2k real parameters."""
        return self.value_and_gradient(x)[1]

    def normal_system(self, x) -> tuple[np.ndarray, np.ndarray, float]:
        """Accumulate (J^T J, J^T r, value) for the residual vector.

        J is the (rows, 2k) Jacobian of the residuals with respect to the
        real parameters. It is never materialized whole: products are
        accumulated over fixed-size row chunks, so memory stays
        O(rows + k^2) and the summation order is deterministic.
        """
        x = np.asarray(x, dtype=np.complex128)
        p = 2 * self.k
        jtj = np.zeros((p, p), dtype=np.float64)
        jtr = np.zeros(p, dtype=np.float64)
        value = 0.0
        rows = self._A.shape[0]
        jc = None
        for lo in range(0, rows, _CHUNK_ROWS):
            hi = min(lo + _CHUNK_ROWS, rows)
            Ab = self._A[lo:hi]
            z = Ab @ x
            s = np.sqrt(np.abs(z) ** 2 + self.epsilon)
            sq = np.sqrt(s)
            r = sq - self._bs[lo:hi]
            value += float(r @ r)
            G = Ab * (np.conj(z) / (2.0 * s * sq))[:, None]
            if jc is None or jc.shape[0] != hi - lo:
                jc = np.empty((hi - lo, p), dtype=np.float64)
            jc[:, 0::2] = G.real
            jc[:, 1::2] = -G.imag
            jtj += jc.T @ jc
            jtr += jc.T @ r
        return jtj, jtr, value


class LinearObjective:
    """The plain least-squares surrogate |A x - b|_2^2.

    Shares the Objective interface so the optimizers can be exercised on
    a problem whose Gauss-Newton step is exact. Only used by tests and
    the initialization checks; the production fit always uses
    :class:`Objective`.
    """

    def __init__(self, matrix, b):
        self.matrix = np.asarray(matrix, dtype=np.complex128)
        self._b = np.asarray(b, dtype=np.float64).reshape(-1)
        if self.matrix.shape[0] != self._b.size:
            raise DimensionError("matrix/target size mismatch")

    @property
    def k(self) -> int:
        return self.matrix.shape[1]

    def value(self, x) -> float:
        z = self.matrix @ np.asarray(x, dtype=np.complex128) - self._b
        return float(np.sum(np.abs(z) ** 2))

    def value_and_gradient(self, x):
        x = np.asarray(x, dtype=np.complex128)
        z = self.matrix @ x - self._b
        g = self.matrix.conj().T @ z
        grad = np.empty(2 * self.k, dtype=np.float64)
        grad[0::2] = 2.0 * g.real
        grad[1::2] = 2.0 * g.imag
        return float(np.sum(np.abs(z) ** 2)), grad

    def gradient(self, x):
        return self.value_and_gradient(x)[1]

    def residuals(self, x) -> np.ndarray:
        z = self.matrix @ np.asarray(x, dtype=np.complex128) - self._b
        return np.concatenate([z.real, z.imag])

    def normal_system(self, x):
        A = self.matrix
        p = 2 * self.k
        jc = np.empty((2 * A.shape[0], p), dtype=np.float64)
        jc[: A.shape[0], 0::2] = A.real
        jc[: A.shape[0], 1::2] = -A.imag
        jc[A.shape[0] :, 0::2] = A.imag
        jc[A.shape[0] :, 1::2] = A.real
        r = self.residuals(x)
        return jc.T @ jc, jc.T @ r, float(r @ r)


def lls_init(A, b, cond_limit: float = 1e12) -> np.ndarray:
    """Linear least-squares starting point argmin |A x - b|_2^2.

    Solved through the k x k normal equations A^H A x = A^H b with a
    Hermitian positive-definite factorization. Raises
    :class:`IllConditionedError` when the Gram matrix's condition number
    exceeds ``cond_limit``.
    """
    A = np.asarray(A, dtype=np.complex128)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if A.ndim != 2 or A.shape[0] != b.size:
        raise DimensionError(f"matrix {A.shape} does not match target of {b.size} rows")
    gram = A.conj().T @ A
    eigvals = np.linalg.eigvalsh(gram)
    lo, hi = float(eigvals[0]), float(eigvals[-1])
    if lo <= 0 or hi / lo > cond_limit:
        cond = np.inf if lo <= 0 else hi / lo
        raise IllConditionedError(
            f"Gram matrix condition {cond:.3e} exceeds {cond_limit:.1e} "
            f"(eigenvalue range [{lo:.3e}, {hi:.3e}]); coil images are linearly dependent"
        )
    rhs = A.conj().T @ b
    factor = scipy.linalg.cho_factor(gram, lower=False)
    return scipy.linalg.cho_solve(factor, rhs)


def fit(
    stack: CoilImageStack,
    b: RssVolume,
    cfg=None,
    threshold: float = 0.0,
) -> FitManifest:
    """Fit coil weights for one volume and return the manifest.

    Builds the masked objective (rows with b > threshold), starts from
    the linear least-squares solution, and runs the optimizer selected by
    ``cfg.method``. Deterministic given identical inputs and config. A
    stalled line search is not an error at this level: the best iterate
    seen is still a valid, monotone fit.
    """
    from .optimizers import OptimizerConfig, run_gd, run_lbfgs, run_lm

    if cfg is None:
        cfg = OptimizerConfig()
    if stack.pixels.shape[0] != b.values.shape[0] or stack.pixels.shape[2:] != b.values.shape[1:]:
        raise DimensionError(
            f"stack {stack.pixels.shape} inconsistent with RSS {b.values.shape}"
        )
    A = stack.matrix
    bvec = b.vector
    objective = Objective(A, bvec, mask=bvec > threshold)
    x0 = lls_init(A, bvec)
    runners = {"gd": run_gd, "lm": run_lm, "lbfgs": run_lbfgs}
    try:
        x, trace = runners[cfg.method](objective, x0, cfg)
    except StallError as stall:
        x, trace = stall.x, stall.trace
    return FitManifest(
        volume_id=stack.volume_id,
        weights=x,
        method=cfg.method,
        iterations=trace.iterations,
        initial_objective=trace.objectives[0],
        final_objective=trace.objectives[-1],
        threshold=threshold,
        crop=(stack.rows, stack.cols),
    )
