"""Hot inner loops, each with a numba version and a pure-numpy fallback.

The public names (``jacobi_rotate``, ``xoshiro_fill``, ``pearson_swap``) are
bound at import time to the numba kernels unless ``STRUCTPRUNE_DISABLE_NUMBA``
is set or numba is missing. Both variants stay importable under ``*_numba`` /
``*_numpy`` so tests and the benchmark can compare them directly.
"""
import math

import numpy as np

from ._accel import USE_NUMBA, HAVE_NUMBA, njit

# Variance floor shared with linalg.pearson.
VAR_EPS = 1e-24

_MASK64 = (1 << 64) - 1


def round_robin_pairs(n):
    """Circle-method schedule: ``n'-1`` rounds of ``n'/2`` disjoint pairs.

    ``n' = n`` rounded up to even; pairs touching the padding index ``n`` are
    kept in the table and skipped by the kernels.
    """
    m = n + (n % 2)
    if m < 2:
        return np.zeros((0, 0, 2), dtype=np.int64)
    others = list(range(1, m))
    rounds = []
    for _ in range(m - 1):
        order = [0] + others
        rnd = []
        for k in range(m // 2):
            p, q = order[k], order[m - 1 - k]
            rnd.append((min(p, q), max(p, q)))
        rounds.append(rnd)
        others = others[-1:] + others[:-1]
    return np.asarray(rounds, dtype=np.int64)


# --------------------------------------------------------------------------
# Jacobi sweeps
# --------------------------------------------------------------------------


def _offdiag_numpy(a):
    off = a - np.diag(np.diag(a))
    return math.sqrt(float(np.sum(off * off)))


def jacobi_rotate_numpy(a, v, pairs, tol, max_sweeps):
    """Run cyclic Jacobi sweeps in place on ``a`` (symmetric) and ``v``.

    Each round of the schedule applies its disjoint rotations as one
    vectorized block. Returns ``(sweeps, residual)``; ``sweeps == -1`` means
    no convergence.
    """
    n = a.shape[0]
    off = _offdiag_numpy(a)
    for sweep in range(max_sweeps + 1):
        off = _offdiag_numpy(a)
        if off <= tol:
            return sweep, off
        if sweep == max_sweeps:
            break
        for r in range(pairs.shape[0]):
            pq = pairs[r]
            pq = pq[pq[:, 1] < n]
            P = pq[:, 0]
            Q = pq[:, 1]
            apq = a[P, Q]
            nz = apq != 0.0
            safe = np.where(nz, apq, 1.0)
            theta = (a[Q, Q] - a[P, P]) / (2.0 * safe)
            big = np.abs(theta) > 1e150
            t = np.where(big, 0.5 / np.where(big, theta, 1.0),
                         1.0 / (np.abs(theta) + np.sqrt(np.where(big, 0.0, theta * theta) + 1.0)))
            t = np.where(big, t, np.where(theta < 0.0, -t, t))
            t = np.where(nz, t, 0.0)
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c
            cc = c[:, None]
            ss = s[:, None]
            ap = a[P, :].copy()
            aq = a[Q, :].copy()
            a[P, :] = cc * ap - ss * aq
            a[Q, :] = ss * ap + cc * aq
            ap = a[:, P].copy()
            aq = a[:, Q].copy()
            a[:, P] = ap * c - aq * s
            a[:, Q] = ap * s + aq * c
            vp = v[:, P].copy()
            vq = v[:, Q].copy()
            v[:, P] = vp * c - vq * s
            v[:, Q] = vp * s + vq * c
    return -1, off


@njit(cache=True)
def _offdiag_nb(a):
    n = a.shape[0]
    acc = 0.0
    for i in range(n):
        for j in range(n):
            if i != j:
                acc += a[i, j] * a[i, j]
    return math.sqrt(acc)


@njit(cache=True)
def jacobi_rotate_numba(a, v, pairs, tol, max_sweeps):
    n = a.shape[0]
    npairs = pairs.shape[1]
    cs = np.empty(npairs)
    sn = np.empty(npairs)
    off = _offdiag_nb(a)
    for sweep in range(max_sweeps + 1):
        off = _offdiag_nb(a)
        if off <= tol:
            return sweep, off
        if sweep == max_sweeps:
            break
        for r in range(pairs.shape[0]):
            for k in range(npairs):
                p = pairs[r, k, 0]
                q = pairs[r, k, 1]
                cs[k] = 1.0
                sn[k] = 0.0
                if q >= n:
                    continue
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if abs(theta) > 1e150:
                    t = 0.5 / theta
                else:
                    t = 1.0 / (abs(theta) + math.sqrt(theta * theta + 1.0))
                    if theta < 0.0:
                        t = -t
                c = 1.0 / math.sqrt(t * t + 1.0)
                cs[k] = c
                sn[k] = t * c
            for k in range(npairs):
                p = pairs[r, k, 0]
                q = pairs[r, k, 1]
                if q >= n or sn[k] == 0.0:
                    continue
                c = cs[k]
                s = sn[k]
                for j in range(n):
                    x = a[p, j]
                    y = a[q, j]
                    a[p, j] = c * x - s * y
                    a[q, j] = s * x + c * y
            for k in range(npairs):
                p = pairs[r, k, 0]
                q = pairs[r, k, 1]
                if q >= n or sn[k] == 0.0:
                    continue
                c = cs[k]
                s = sn[k]
                for i in range(n):
                    x = a[i, p]
                    y = a[i, q]
                    a[i, p] = x * c - y * s
                    a[i, q] = x * s + y * c
                    x = v[i, p]
                    y = v[i, q]
                    v[i, p] = x * c - y * s
                    v[i, q] = x * s + y * c
    return -1, off


# --------------------------------------------------------------------------
# xoshiro256** stream
# --------------------------------------------------------------------------


def splitmix64_seed(seed):
    """Expand an integer seed into four xoshiro256** state words via splitmix64."""
    x = int(seed) & _MASK64
    out = []
    for _ in range(4):
        x = (x + 0x9E3779B97F4A7C15) & _MASK64
        z = x
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        out.append(z ^ (z >> 31))
    return np.array(out, dtype=np.uint64)


def xoshiro_fill_numpy(state, out):
    """Fill ``out`` (uint64) with successive xoshiro256** outputs; advances ``state``."""
    s0, s1, s2, s3 = (int(w) for w in state)
    for i in range(out.shape[0]):
        r = ((s1 * 5) & _MASK64)
        r = ((r << 7) | (r >> 57)) & _MASK64
        out[i] = (r * 9) & _MASK64
        t = (s1 << 17) & _MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = ((s3 << 45) | (s3 >> 19)) & _MASK64
    state[0], state[1], state[2], state[3] = s0, s1, s2, s3


@njit(cache=True)
def xoshiro_fill_numba(state, out):
    s0 = state[0]
    s1 = state[1]
    s2 = state[2]
    s3 = state[3]
    five = np.uint64(5)
    nine = np.uint64(9)
    for i in range(out.shape[0]):
        r = s1 * five
        r = (r << np.uint64(7)) | (r >> np.uint64(57))
        out[i] = r * nine
        t = s1 << np.uint64(17)
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = (s3 << np.uint64(45)) | (s3 >> np.uint64(19))
    state[0] = s0
    state[1] = s1
    state[2] = s2
    state[3] = s3


# --------------------------------------------------------------------------
# Pearson of a swapped head sum against the full output
# --------------------------------------------------------------------------


def _pearson_flat_numpy(x, y):
    xm = x - x.mean()
    ym = y - y.mean()
    sxx = float(np.dot(xm, xm))
    syy = float(np.dot(ym, ym))
    n = x.shape[0]
    if sxx / n < VAR_EPS or syy / n < VAR_EPS:
        return 0.0
    r = float(np.dot(xm, ym)) / math.sqrt(sxx * syy)
    return min(1.0, max(-1.0, r))


def pearson_swap_numpy(base, drop, add, full):
    """Pearson(base - drop + add, full) over flat vectors."""
    return _pearson_flat_numpy(base - drop + add, full)


@njit(cache=True)
def pearson_swap_numba(base, drop, add, full):
    n = base.shape[0]
    sx = 0.0
    sy = 0.0
    for k in range(n):
        sx += base[k] - drop[k] + add[k]
        sy += full[k]
    mx = sx / n
    my = sy / n
    sxx = 0.0
    syy = 0.0
    sxy = 0.0
    for k in range(n):
        dx = base[k] - drop[k] + add[k] - mx
        dy = full[k] - my
        sxx += dx * dx
        syy += dy * dy
        sxy += dx * dy
    if sxx / n < VAR_EPS or syy / n < VAR_EPS:
        return 0.0
    r = sxy / math.sqrt(sxx * syy)
    if r > 1.0:
        return 1.0
    if r < -1.0:
        return -1.0
    return r


if USE_NUMBA:
    jacobi_rotate = jacobi_rotate_numba
    xoshiro_fill = xoshiro_fill_numba
    pearson_swap = pearson_swap_numba
else:
    jacobi_rotate = jacobi_rotate_numpy
    xoshiro_fill = xoshiro_fill_numpy
    pearson_swap = pearson_swap_numpy

BACKEND = "numba" if USE_NUMBA else "numpy"
__all__ = [
    "BACKEND",
    "HAVE_NUMBA",
    "jacobi_rotate",
    "xoshiro_fill",
    "pearson_swap",
    "round_robin_pairs",
    "splitmix64_seed",
]
