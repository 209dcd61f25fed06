"""Counter-based normal streams: Philox4x32-10 words fed to a 256-layer ziggurat.

Stream for path p under seed s: Philox block b uses counter
(b lo, b hi, p lo, p hi) and key (s lo, s hi). Each block yields two 64-bit
draws; a ziggurat normal consumes one draw on its fast path (~99% of the time)
and a few more on rejection. The k-th normal of path p is therefore a pure
function of (s, p, k), independent of thread layout or the policy reading it.
"""

import math

import numpy as np
from numba import njit, uint64

__all__ = [
    "philox4x32",
    "new_stream",
    "next_normal",
    "zig_fast",
    "zig_slow",
    "draw",
    "normals",
    "split_seed",
    "ZIG_X",
    "ZIG_F",
]

_M0 = uint64(0xD2511F53)
_M1 = uint64(0xCD9E8D57)
_W0 = uint64(0x9E3779B9)
_W1 = uint64(0xBB67AE85)
_MASK = uint64(0xFFFFFFFF)
_S32 = uint64(32)
_INV53 = 1.0 / 9007199254740992.0


@njit(cache=True, nogil=True)
def philox4x32(c0, c1, c2, c3, k0, k1):
    """Ten Philox rounds; all arguments and results are 32-bit words held in uint64."""
    for _ in range(10):
        p0 = _M0 * c0
        p1 = _M1 * c2
        n0 = (p1 >> _S32) ^ c1 ^ k0
        n2 = (p0 >> _S32) ^ c3 ^ k1
        c0, c1, c2, c3 = n0, p1 & _MASK, n2, p0 & _MASK
        k0 = (k0 + _W0) & _MASK
        k1 = (k1 + _W1) & _MASK
    return c0, c1, c2, c3


def _ziggurat_tables(n=256, r=3.6541528853610088):
    f = lambda x: math.exp(-0.5 * x * x)
    tail = math.sqrt(math.pi / 2.0) * math.erfc(r / math.sqrt(2.0))
    v = r * f(r) + tail  # common layer area
    x = np.empty(n + 1)
    x[0] = v / f(r)
    x[1] = r
    for i in range(1, n - 1):
        x[i + 1] = math.sqrt(-2.0 * math.log(f(x[i]) + v / x[i]))
    x[n] = 0.0
    return x, np.exp(-0.5 * x * x)


ZIG_X, ZIG_F = _ziggurat_tables()
_R = ZIG_X[1]

# stream state layout: key0, key1, path, next block, words used, w0..w3
_K0, _K1, _PATH, _BLOCK, _USED = 0, 1, 2, 3, 4


@njit(cache=True, nogil=True)
def new_stream(k0, k1, path):
    # words are < 2^32, so int64 storage is exact and converts to float cheaply
    st = np.zeros(9, dtype=np.int64)
    st[_K0] = np.int64(k0)
    st[_K1] = np.int64(k1)
    st[_PATH] = np.int64(path)
    st[_USED] = 2
    return st


@njit(cache=True, nogil=True, _nrt=False)
def draw(st):
    """One 64-bit draw as (low word, high word)."""
    if st[_USED] >= 2:
        b = uint64(st[_BLOCK])
        p = uint64(st[_PATH])
        r0, r1, r2, r3 = philox4x32(b & _MASK, b >> _S32, p & _MASK, p >> _S32,
                                    uint64(st[_K0]), uint64(st[_K1]))
        st[5] = np.int64(r0)
        st[6] = np.int64(r1)
        st[7] = np.int64(r2)
        st[8] = np.int64(r3)
        st[_BLOCK] += 1
        st[_USED] = 0
    j = 5 + 2 * st[_USED]
    st[_USED] += 1
    return st[j], st[j + 1]


@njit(cache=True, nogil=True, _nrt=False)
def _uniform(st):
    """Uniform on (0, 1]."""
    a, b = draw(st)
    return 1.0 - ((a >> 5) * 67108864.0 + (b >> 6)) * _INV53


@njit(cache=True, nogil=True)
def zig_fast(a, b):
    """Ziggurat fast path for one draw; nan when the draw lands outside the core."""
    i = a & 0xFF
    # 53 bits: 21 from the top of a, 32 from b
    x = ((a >> 11) * 4294967296.0 + b) * _INV53 * ZIG_X[i]
    z = -x if (a >> 8) & 1 else x
    return z if x < ZIG_X[i + 1] else np.nan


@njit(cache=True, nogil=True, _nrt=False)
def zig_slow(st, a, b):
    """Tail and wedge rejection for a draw that failed the fast path."""
    while True:
        i = a & 0xFF
        neg = (a >> 8) & 1
        x = ((a >> 11) * 4294967296.0 + b) * _INV53 * ZIG_X[i]
        if x < ZIG_X[i + 1]:
            return -x if neg else x
        if i == 0:
            # tail beyond r
            while True:
                e1 = -np.log(_uniform(st)) / _R
                e2 = -np.log(_uniform(st))
                if 2.0 * e2 > e1 * e1:
                    x = _R + e1
                    return -x if neg else x
        y = ZIG_F[i] + _uniform(st) * (ZIG_F[i + 1] - ZIG_F[i])
        if y < np.exp(-0.5 * x * x):
            return -x if neg else x
        a, b = draw(st)


@njit(cache=True, nogil=True, _nrt=False)
def next_normal(st):
    """Next standard normal of the stream (convenience; hot loops inline the two halves)."""
    a, b = draw(st)
    z = zig_fast(a, b)
    if z != z:
        z = zig_slow(st, a, b)
    return z


def split_seed(seed):
    seed = int(seed)
    if not 0 <= seed < 2**64:
        raise ValueError("seed must be an unsigned 64-bit integer")
    return np.uint64(seed & 0xFFFFFFFF), np.uint64(seed >> 32)


@njit(cache=True, nogil=True)
def _fill(k0, k1, path, out):
    st = new_stream(k0, k1, path)
    for i in range(out.size):
        a, b = draw(st)
        z = zig_fast(a, b)
        if z != z:
            z = zig_slow(st, a, b)
        out[i] = z
    return out


def normals(seed, path, n):
    """First ``n`` normals of the stream for ``path``."""
    k0, k1 = split_seed(seed)
    return _fill(k0, k1, np.uint64(path), np.empty(int(n)))
