"""Dense linear algebra helpers: spectral radius, norms, determinants, initializers.

Everything is float64. Single matrices go through a hand-written Hessenberg +
Francis double-shift QR solver (``eigvals_qr``); batches of matrices use
LAPACK's ``geev`` through numpy, which runs the same algorithm family.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import DimensionError, NumericalError

__all__ = [
    "make_rng",
    "spawn_rngs",
    "as_matrix",
    "hessenberg",
    "eigvals_qr",
    "spectral_radius",
    "spectral_radii",
    "pad_square",
    "induced_norm",
    "frobenius_norm",
    "determinant",
    "exact_determinant",
    "exact_matmul",
    "random_psd",
    "InitScheme",
    "init_matrix",
    "init_vector",
]


# ---------------------------------------------------------------- randomness

def make_rng(seed: int | np.random.SeedSequence) -> np.random.Generator:
    """PCG64 generator; the same seed gives the same stream on every platform."""
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.PCG64(seed))
    if seed < 0:
        raise ValueError("seed must be non-negative")
    return np.random.Generator(np.random.PCG64(int(seed)))


def spawn_rngs(seed: int, count: int) -> list[np.random.Generator]:
    """Independent child streams derived from one root seed."""
    children = np.random.SeedSequence(int(seed)).spawn(count)
    return [make_rng(c) for c in children]


# ------------------------------------------------------------------ matrices

def as_matrix(m, square: bool = False) -> np.ndarray:
    a = np.asarray(m, dtype=np.float64)
    if a.ndim != 2:
        raise DimensionError(f"expected a 2-D matrix, got shape {a.shape}")
    if square and a.shape[0] != a.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NumericalError("matrix has non-finite entries")
    return a


def hessenberg(m) -> np.ndarray:
    """Upper Hessenberg form via Householder reflections (similarity transform)."""
    a = as_matrix(m, square=True).copy()
    n = a.shape[0]
    for k in range(n - 2):
        x = a[k + 1:, k]
        alpha = np.linalg.norm(x)
        if alpha == 0.0:
            continue
        v = x.copy()
        v[0] += math.copysign(alpha, x[0])
        v /= np.linalg.norm(v)
        a[k + 1:, k:] -= 2.0 * np.outer(v, v @ a[k + 1:, k:])
        a[:, k + 1:] -= 2.0 * np.outer(a[:, k + 1:] @ v, v)
        a[k + 2:, k] = 0.0
    return a


def eigvals_qr(m, max_iter: int | None = None) -> np.ndarray:
    """All eigenvalues of a real square matrix by shifted QR on the Hessenberg form.

    Francis double-shift iteration with the classic exceptional shifts at
    iterations 10 and 20 of a stalled block. Raises ``NumericalError`` once the
    total iteration count passes ``max_iter`` (default ``100 * n``).
    """
    h = hessenberg(m)
    n = h.shape[0]
    if n == 0:
        return np.zeros(0, dtype=complex)
    cap = 100 * n if max_iter is None else max_iter
    # 1-based copy keeps the index arithmetic readable
    a = np.zeros((n + 1, n + 1))
    a[1:, 1:] = h
    wr = np.zeros(n + 1)
    wi = np.zeros(n + 1)
    anorm = float(np.sum(np.abs(h)))
    nn = n
    t = 0.0
    total = 0
    x = y = z = w = p = q = r = 0.0
    while nn >= 1:
        its = 0
        while True:
            l = nn
            while l >= 2:
                s = abs(a[l - 1, l - 1]) + abs(a[l, l])
                if s == 0.0:
                    s = anorm
                if abs(a[l, l - 1]) + s == s:
                    a[l, l - 1] = 0.0
                    break
                l -= 1
            x = a[nn, nn]
            if l == nn:
                wr[nn] = x + t
                wi[nn] = 0.0
                nn -= 1
                break
            y = a[nn - 1, nn - 1]
            w = a[nn, nn - 1] * a[nn - 1, nn]
            if l == nn - 1:
                p = 0.5 * (y - x)
                q = p * p + w
                z = math.sqrt(abs(q))
                x += t
                if q >= 0.0:
                    z = p + math.copysign(z, p)
                    wr[nn - 1] = wr[nn] = x + z
                    if z != 0.0:
                        wr[nn] = x - w / z
                    wi[nn - 1] = wi[nn] = 0.0
                else:
                    wr[nn - 1] = wr[nn] = x + p
                    wi[nn - 1] = -z
                    wi[nn] = z
                nn -= 2
                break
            if total >= cap:
                raise NumericalError(
                    f"QR iteration did not converge after {total} iterations",
                    iterations=total,
                )
            if its in (10, 20):
                t += x
                for i in range(1, nn + 1):
                    a[i, i] -= x
                s = abs(a[nn, nn - 1]) + abs(a[nn - 1, nn - 2])
                y = x = 0.75 * s
                w = -0.4375 * s * s
            its += 1
            total += 1
            mm = nn - 2
            while mm >= l:
                z = a[mm, mm]
                r = x - z
                s = y - z
                p = (r * s - w) / a[mm + 1, mm] + a[mm, mm + 1]
                q = a[mm + 1, mm + 1] - z - r - s
                r = a[mm + 2, mm + 1]
                s = abs(p) + abs(q) + abs(r)
                p /= s
                q /= s
                r /= s
                if mm == l:
                    break
                u = abs(a[mm, mm - 1]) * (abs(q) + abs(r))
                v = abs(p) * (abs(a[mm - 1, mm - 1]) + abs(z) + abs(a[mm + 1, mm + 1]))
                if u + v == v:
                    break
                mm -= 1
            for i in range(mm + 2, nn + 1):
                a[i, i - 2] = 0.0
                if i != mm + 2:
                    a[i, i - 3] = 0.0
            for k in range(mm, nn):
                if k != mm:
                    p = a[k, k - 1]
                    q = a[k + 1, k - 1]
                    r = a[k + 2, k - 1] if k != nn - 1 else 0.0
                    x = abs(p) + abs(q) + abs(r)
                    if x != 0.0:
                        p /= x
                        q /= x
                        r /= x
                s = math.copysign(math.sqrt(p * p + q * q + r * r), p)
                if s == 0.0:
                    continue
                if k == mm:
                    if l != mm:
                        a[k, k - 1] = -a[k, k - 1]
                else:
                    a[k, k - 1] = -s * x
                p += s
                x = p / s
                y = q / s
                z = r / s
                q /= p
                r /= p
                for j in range(k, nn + 1):
                    p = a[k, j] + q * a[k + 1, j]
                    if k != nn - 1:
                        p += r * a[k + 2, j]
                        a[k + 2, j] -= p * z
                    a[k + 1, j] -= p * y
                    a[k, j] -= p * x
                mmin = min(nn, k + 3)
                for i in range(l, mmin + 1):
                    p = x * a[i, k] + y * a[i, k + 1]
                    if k != nn - 1:
                        p += z * a[i, k + 2]
                        a[i, k + 2] -= p * r
                    a[i, k + 1] -= p * q
                    a[i, k] -= p
    return wr[1:] + 1j * wi[1:]


def spectral_radius(m, method: str = "qr") -> float:
    """Largest eigenvalue modulus of a square matrix.

    ``method="qr"`` uses :func:`eigvals_qr`; ``method="lapack"`` defers to numpy.
    """
    a = as_matrix(m, square=True)
    if a.shape[0] == 0:
        return 0.0
    if method == "qr":
        ev = eigvals_qr(a)
    elif method == "lapack":
        try:
            ev = np.linalg.eigvals(a)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"eigenvalue solver failed: {exc}") from exc
    else:
        raise ValueError(f"unknown method {method!r}")
    return float(np.max(np.abs(ev)))


def pad_square(m: np.ndarray) -> np.ndarray:
    """Zero-pad the trailing two axes to a square; the radius is unchanged by padding."""
    rows, cols = m.shape[-2:]
    if rows == cols:
        return m
    s = max(rows, cols)
    out = np.zeros(m.shape[:-2] + (s, s), dtype=m.dtype)
    out[..., :rows, :cols] = m
    return out


def spectral_radii(stack: np.ndarray) -> np.ndarray:
    """Radii of a batch ``(..., r, c)`` of matrices; rectangular ones are zero-padded."""
    a = np.asarray(stack, dtype=np.float64)
    if a.ndim < 2:
        raise DimensionError("need at least a 2-D array")
    if not np.all(np.isfinite(a)):
        raise NumericalError("matrix batch has non-finite entries")
    try:
        ev = np.linalg.eigvals(pad_square(a))
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigenvalue solver failed: {exc}") from exc
    return np.max(np.abs(ev), axis=-1)


def induced_norm(m, p=2) -> float:
    a = as_matrix(m)
    if p == 1:
        return float(np.max(np.sum(np.abs(a), axis=0))) if a.size else 0.0
    if p == 2:
        return float(np.linalg.norm(a, 2)) if a.size else 0.0
    if p in (np.inf, "inf", math.inf):
        return float(np.max(np.sum(np.abs(a), axis=1))) if a.size else 0.0
    raise ValueError(f"unsupported induced norm p={p!r}; use 1, 2 or inf")


def frobenius_norm(m) -> float:
    a = as_matrix(m)
    return float(math.sqrt(float(np.sum(a * a))))


def determinant(m) -> float:
    """Determinant from an LU factorization with partial pivoting."""
    a = as_matrix(m, square=True).copy()
    n = a.shape[0]
    sign = 1.0
    for k in range(n):
        piv = k + int(np.argmax(np.abs(a[k:, k])))
        if a[piv, k] == 0.0:
            return 0.0
        if piv != k:
            a[[k, piv]] = a[[piv, k]]
            sign = -sign
        a[k + 1:, k] /= a[k, k]
        a[k + 1:, k + 1:] -= np.outer(a[k + 1:, k], a[k, k + 1:])
    return sign * float(np.prod(np.diag(a)))


def exact_determinant(rows) -> Fraction:
    """Same elimination in rational arithmetic; entries must be finite floats or Fractions."""
    a = [[Fraction(x) for x in r] for r in rows]
    n = len(a)
    if any(len(r) != n for r in a):
        raise DimensionError("matrix must be square")
    det = Fraction(1)
    for k in range(n):
        piv = max(range(k, n), key=lambda i: abs(a[i][k]))
        if a[piv][k] == 0:
            return Fraction(0)
        if piv != k:
            a[k], a[piv] = a[piv], a[k]
            det = -det
        det *= a[k][k]
        for i in range(k + 1, n):
            f = a[i][k] / a[k][k]
            if f:
                for j in range(k + 1, n):
                    a[i][j] -= f * a[k][j]
    return det


def exact_matmul(a, b) -> list[list[Fraction]]:
    fa = [[Fraction(x) for x in r] for r in a]
    fb = [[Fraction(x) for x in r] for r in b]
    return [[sum((x * fb[k][j] for k, x in enumerate(r)), Fraction(0)) for j in range(len(fb[0]))] for r in fa]


def random_psd(n: int, rng: np.random.Generator) -> np.ndarray:
    """``A^T A`` for a standard Gaussian ``A``; symmetrized to kill round-off."""
    if n < 1:
        raise DimensionError("n must be >= 1")
    a = rng.standard_normal((n, n))
    s = a.T @ a
    return 0.5 * (s + s.T)


# ------------------------------------------------------------ initializers

@dataclass(frozen=True)
class InitScheme:
    kind: str
    mean: float = 0.0
    std: float = 1.0

    KINDS = ("glorot_uniform", "he_normal", "orthogonal", "zeros",
             "truncated_gaussian", "centered_gaussian")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown init scheme {self.kind!r}")
        if self.kind == "truncated_gaussian" and self.mean <= 0 and self.std <= 0:
            raise ValueError("truncated gaussian needs a positive mean or std")

    @classmethod
    def glorot_uniform(cls):
        return cls("glorot_uniform")

    @classmethod
    def he_normal(cls):
        return cls("he_normal")

    @classmethod
    def orthogonal(cls):
        return cls("orthogonal")

    @classmethod
    def zeros(cls):
        return cls("zeros")

    @classmethod
    def truncated_gaussian(cls, mean: float, std: float | None = None):
        """Positive draws only; ``std`` defaults to ``3 * mean / 7``."""
        return cls("truncated_gaussian", mean, 3.0 * mean / 7.0 if std is None else std)

    @classmethod
    def centered_gaussian(cls, std: float):
        return cls("centered_gaussian", 0.0, std)


def init_matrix(scheme: InitScheme, rows: int, cols: int,
                rng: np.random.Generator) -> np.ndarray:
    if rows < 1 or cols < 1:
        raise DimensionError("rows and cols must be >= 1")
    k = scheme.kind
    if k == "glorot_uniform":
        lim = math.sqrt(6.0 / (rows + cols))
        return rng.uniform(-lim, lim, size=(rows, cols))
    if k == "he_normal":
        return rng.standard_normal((rows, cols)) * math.sqrt(2.0 / cols)
    if k == "orthogonal":
        if rows != cols:
            raise DimensionError(f"orthogonal init needs a square shape, got {rows}x{cols}")
        q, r = np.linalg.qr(rng.standard_normal((rows, cols)))
        d = np.sign(np.diag(r))
        d[d == 0] = 1.0
        return q * d
    if k == "zeros":
        return np.zeros((rows, cols))
    if k == "centered_gaussian":
        return rng.standard_normal((rows, cols)) * scheme.std
    # truncated gaussian: redraw the non-positive entries until none are left
    out = scheme.mean + scheme.std * rng.standard_normal(rows * cols)
    bad = out <= 0
    while np.any(bad):
        out[bad] = scheme.mean + scheme.std * rng.standard_normal(int(bad.sum()))
        bad = out <= 0
    return out.reshape(rows, cols)


def init_vector(scheme: InitScheme, n: int, rng: np.random.Generator) -> np.ndarray:
    """A length-``n`` vector, drawn as a ``1 x n`` matrix (Glorot limit sqrt(6/(1+n)))."""
    if scheme.kind == "orthogonal":
        raise DimensionError("orthogonal init is not defined for vectors")
    return init_matrix(scheme, 1, n, rng).ravel()
