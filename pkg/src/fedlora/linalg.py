"""Dense linear-algebra kernel and seeded random sampling.

Matrices are plain 2-D float64 C-contiguous numpy arrays throughout the
package (row-major, shape ``(rows, cols)``). Public operations validate
shapes and guarantee finite outputs.

The random generator is deliberately *not* numpy's: reproducing a run
requires only this file, so the full algorithm is spelled out below.

RNG algorithm (SplitMix64)
--------------------------
State is a single uint64 ``s``. Each draw advances the state by the
golden-ratio increment and finalizes it with the SplitMix64 mixer::

    s       <- (s + 0x9E3779B97F4A7C15) mod 2^64
    z       <- s
    z       <- (z XOR (z >> 30)) * 0xBF58476D1CE4E5B9 mod 2^64
    z       <- (z XOR (z >> 27)) * 0x94D049BB133111EB mod 2^64
    output  <- z XOR (z >> 31)

Derived quantities:

* ``uniform()``  = ``(output >> 11) * 2^-53``, uniform on [0, 1).
* ``gaussian()`` = Box-Muller on ``u1 = 1 - uniform()`` (so ``u1`` in
  (0, 1]) and ``u2 = uniform()``: ``sqrt(-2 ln u1) * cos(2 pi u2)`` with
  the companion ``sin`` variate cached for the next call.
* ``laplace(b)`` = inverse CDF ``-b * sign(u) * ln(1 - 2|u|)`` with
  ``u = uniform() - 0.5``.
* ``randint(n)`` = ``floor(uniform() * n)``.
* ``permutation(n)`` = Fisher-Yates driven by ``randint``.
* ``gamma(a)``   = Marsaglia-Tsang squeeze for ``a >= 1``; for ``a < 1``
  the boost ``G(a) = G(a+1) * U^(1/a)`` applied in log space.

Sub-streams are derived by folding integer path components into the seed
with the same mixer (see ``derive_seed``), so every client/round/purpose
gets an independent, reproducible stream.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericalError

Matrix = np.ndarray  # 2-D float64, C-contiguous

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def _mix64(z: int) -> int:
    z &= _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_seed(root: int, *path: int) -> int:
    """Fold integer path components into a root seed, one mixer pass each.

    ``derive_seed(s, a, b)`` and ``derive_seed(s, b, a)`` differ, as do
    paths of different lengths, so streams for (round, client, purpose)
    tuples never collide in practice.
    """
    s = root & _MASK64
    for i, p in enumerate(path):
        s = _mix64(s ^ _mix64((p + (i + 1) * _GOLDEN) & _MASK64))
    return s


# stream-purpose tags used when deriving sub-seeds; fixed integers so the
# derivation is reproducible from this file alone
STREAM_DATA = 1
STREAM_PARTITION = 2
STREAM_MODEL = 3
STREAM_TRAIN = 4
STREAM_PROBE = 5
STREAM_DP = 6
STREAM_BUDGETS = 7
STREAM_PARTICIPATION = 8
STREAM_SPLIT = 9


class Rng:
    """SplitMix64 generator; see the module docstring for the exact algorithm.

    One instance per logical stream; never share across concurrent users.
    """

    __slots__ = ("seed", "_state", "_gauss_cache")

    def __init__(self, seed: int):
        self.seed = seed & _MASK64
        self._state = self.seed
        self._gauss_cache: float | None = None

    def next_u64(self) -> int:
        self._state = (self._state + _GOLDEN) & _MASK64
        return _mix64(self._state)

    def uniform(self) -> float:
        return (self.next_u64() >> 11) * 2.0**-53

    def randint(self, n: int) -> int:
        """Uniform integer in [0, n)."""
        return int(self.uniform() * n)

    def gaussian(self) -> float:
        if self._gauss_cache is not None:
            z = self._gauss_cache
            self._gauss_cache = None
            return z
        u1 = 1.0 - self.uniform()  # (0, 1], keeps the log finite
        u2 = self.uniform()
        radius = math.sqrt(-2.0 * math.log(u1))
        theta = 2.0 * math.pi * u2
        self._gauss_cache = radius * math.sin(theta)
        return radius * math.cos(theta)

    def laplace(self, b: float) -> float:
        """Laplace(0, b) variate via the inverse CDF."""
        if b <= 0:
            raise ConfigError(f"laplace scale must be > 0, got {b}")
        u = self.uniform() - 0.5
        if u == 0.0:
            return 0.0
        return -b * math.copysign(1.0, u) * math.log(1.0 - 2.0 * abs(u))

    def permutation(self, n: int) -> np.ndarray:
        idx = np.arange(n, dtype=np.int64)
        for i in range(n - 1, 0, -1):
            j = self.randint(i + 1)
            idx[i], idx[j] = idx[j], idx[i]
        return idx

    def gamma(self, shape: float) -> float:
        """Gamma(shape, 1) variate (Marsaglia-Tsang)."""
        if shape <= 0:
            raise ConfigError(f"gamma shape must be > 0, got {shape}")
        if shape < 1.0:
            return math.exp(self.log_gamma(shape))
        d = shape - 1.0 / 3.0
        c = 1.0 / math.sqrt(9.0 * d)
        while True:
            x = self.gaussian()
            v = (1.0 + c * x) ** 3
            if v <= 0.0:
                continue
            u = 1.0 - self.uniform()  # (0, 1]
            if u < 1.0 - 0.0331 * x**4:
                return d * v
            if math.log(u) < 0.5 * x * x + d * (1.0 - v + math.log(v)):
                return d * v

    def log_gamma(self, shape: float) -> float:
        """log of a Gamma(shape, 1) variate; stable for tiny shapes where the
        variate itself underflows (shape 0.01 gives values near exp(-100/u))."""
        if shape >= 1.0:
            return math.log(self.gamma(shape))
        boost = self.gamma(shape + 1.0)
        u = 1.0 - self.uniform()  # (0, 1]
        return math.log(boost) + math.log(u) / shape

    def dirichlet(self, alpha: float, k: int) -> np.ndarray:
        """Symmetric Dirichlet(alpha * 1_k) draw, computed in log space so
        extreme concentrations (alpha ~ 0.01) do not underflow to 0/0."""
        logs = np.array([self.log_gamma(alpha) for _ in range(k)])
        logs -= logs.max()
        p = np.exp(logs)
        return p / p.sum()


def as_matrix(m: np.ndarray) -> Matrix:
    """Coerce to the canonical 2-D float64 C-contiguous layout."""
    a = np.ascontiguousarray(m, dtype=np.float64)
    if a.ndim != 2:
        raise ConfigError(f"expected a 2-D matrix, got ndim={a.ndim}")
    return a


def _check_finite(m: np.ndarray, what: str) -> np.ndarray:
    if not np.isfinite(m).all():
        raise NumericalError(f"{what} produced non-finite entries")
    return m


def matmul(a: Matrix, b: Matrix) -> Matrix:
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ConfigError(
            f"matmul dimension mismatch: {a.shape} x {b.shape}"
        )
    return _check_finite(a @ b, "matmul")


def frobenius_norm(m: Matrix) -> float:
    return float(np.sqrt(np.sum(np.asarray(m, dtype=np.float64) ** 2)))


def hadamard(a: Matrix, b: Matrix) -> Matrix:
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape != b.shape:
        raise ConfigError(
            f"hadamard dimension mismatch: {a.shape} vs {b.shape}"
        )
    return _check_finite(a * b, "hadamard")


def sample_gaussian(rng: Rng, rows: int, cols: int, std: float) -> Matrix:
    if std < 0:
        raise ConfigError(f"std must be >= 0, got {std}")
    out = np.empty((rows, cols))
    flat = out.ravel()
    for i in range(flat.size):
        flat[i] = std * rng.gaussian()
    return out


def sample_laplace(rng: Rng, b: float) -> float:
    return rng.laplace(b)


@dataclass
class SvdResult:
    """Top-k singular triplets: ``u`` (d1 x k, orthonormal columns),
    ``s`` (k, descending, >= 0), ``vt`` (k x d2, orthonormal rows)."""

    u: Matrix
    s: np.ndarray
    vt: Matrix


_JACOBI_MAX_SWEEPS = 60
_JACOBI_TOL = 1e-12


def svd_truncated(m: Matrix, k: int) -> SvdResult:
    """Truncated SVD via one-sided Jacobi rotations.

    Accurate for the small (<= 64x64) matrices that arise here; raises
    NumericalError instead of returning garbage if the sweep cap is hit
    (ill-conditioned inputs are a real failure mode of SVD-refactorizing
    aggregation, and must surface loudly).
    """
    m = as_matrix(m)
    rows, cols = m.shape
    if not 1 <= k <= min(rows, cols):
        raise ConfigError(f"k={k} out of range for shape {m.shape}")
    _check_finite(m, "svd input")

    transposed = rows < cols
    x = m.T.copy() if transposed else m.copy()
    u, s, vt = _jacobi_svd(x)
    if transposed:
        u, vt = vt.T.copy(), u.T.copy()
    return SvdResult(u=np.ascontiguousarray(u[:, :k]), s=s[:k].copy(),
                     vt=np.ascontiguousarray(vt[:k, :]))


def _jacobi_svd(x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    # x is tall (rows >= cols); returns full thin SVD with n = cols triplets.
    n = x.shape[1]
    v = np.eye(n)
    for _ in range(_JACOBI_MAX_SWEEPS):
        off = 0.0
        for p in range(n - 1):
            for q in range(p + 1, n):
                xp = x[:, p]
                xq = x[:, q]
                app = float(xp @ xp)
                aqq = float(xq @ xq)
                apq = float(xp @ xq)
                denom = math.sqrt(app * aqq)
                if denom == 0.0 or abs(apq) <= _JACOBI_TOL * denom:
                    continue
                off = max(off, abs(apq) / denom)
                tau = (aqq - app) / (2.0 * apq)
                t = math.copysign(1.0, tau) / (abs(tau) + math.sqrt(1.0 + tau * tau))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = t * c
                new_p = c * xp - s * xq
                new_q = s * xp + c * xq
                x[:, p] = new_p
                x[:, q] = new_q
                vp = v[:, p].copy()
                v[:, p] = c * vp - s * v[:, q]
                v[:, q] = s * vp + c * v[:, q]
        if off == 0.0:
            break
    else:
        raise NumericalError(
            f"jacobi SVD did not converge in {_JACOBI_MAX_SWEEPS} sweeps"
        )

    norms = np.sqrt(np.sum(x * x, axis=0))
    order = np.argsort(-norms, kind="stable")
    norms = norms[order]
    x = x[:, order]
    v = v[:, order]

    u = np.zeros_like(x)
    tiny = norms[0] * 1e-300 if norms[0] > 0 else 0.0
    for j in range(n):
        if norms[j] > tiny and norms[j] > 0.0:
            u[:, j] = x[:, j] / norms[j]
        else:
            norms[j] = 0.0
            u[:, j] = _fill_orthonormal(u, j)
    return u, norms, v.T.copy()


def _fill_orthonormal(u: np.ndarray, j: int) -> np.ndarray:
    # Replace a zero column with a unit vector orthogonal to columns < j.
    rows = u.shape[0]
    for basis in range(rows):
        cand = np.zeros(rows)
        cand[basis] = 1.0
        for i in range(j):
            cand -= (u[:, i] @ cand) * u[:, i]
        norm = np.linalg.norm(cand)
        if norm > 0.5:
            return cand / norm
    raise NumericalError("could not complete orthonormal basis")
