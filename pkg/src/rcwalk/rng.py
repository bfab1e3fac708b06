"""Counter-based random numbers (Philox4x32-10).

Every draw is a pure function of a 64-bit key and a 128-bit counter, so
values can be produced in any order, in bulk, and reproduced for a single
index without replaying a stream.  The implementation is vectorised over
numpy arrays of counters.
"""
import numpy as np

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint32(0x9E3779B9)
_W1 = np.uint32(0xBB67AE85)
_LO = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)

# fixed counter word used to separate draw purposes inside one stream
PURPOSE_ENV = 0x454E5600
PURPOSE_WALK = 0x57414C4B
PURPOSE_START = 0x53545254
PURPOSE_MISC = 0x4D495343


def philox4x32(c0, c1, c2, c3, k0, k1, rounds=10):
    """Philox4x32 bijection.

    ``c0..c3`` are uint32 arrays (broadcastable), ``k0, k1`` uint32 scalars
    or arrays.  Returns the four output words as uint32 arrays.
    """
    c0, c1, c2, c3 = (np.asarray(c, dtype=np.uint32) for c in (c0, c1, c2, c3))
    c0, c1, c2, c3 = np.broadcast_arrays(c0, c1, c2, c3)
    k0 = np.asarray(k0, dtype=np.uint32)
    k1 = np.asarray(k1, dtype=np.uint32)
    with np.errstate(over="ignore"):
        for r in range(rounds):
            if r:
                k0 = k0 + _W0
                k1 = k1 + _W1
            p0 = _M0 * c0.astype(np.uint64)
            p1 = _M1 * c2.astype(np.uint64)
            hi0 = (p0 >> _S32).astype(np.uint32)
            lo0 = (p0 & _LO).astype(np.uint32)
            hi1 = (p1 >> _S32).astype(np.uint32)
            lo1 = (p1 & _LO).astype(np.uint32)
            c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
    return c0, c1, c2, c3


def split_key(seed):
    """Split a 64-bit integer seed into the two Philox key words."""
    seed = int(seed) & 0xFFFFFFFFFFFFFFFF
    return np.uint32(seed & 0xFFFFFFFF), np.uint32(seed >> 32)


def _to_unit(hi, lo):
    # 53 random bits -> (0, 1]
    bits = (hi.astype(np.uint64) << np.uint64(21)) ^ (lo.astype(np.uint64) >> np.uint64(11))
    bits &= np.uint64((1 << 53) - 1)
    return (bits.astype(np.float64) + 1.0) * 2.0 ** -53


def uniforms(seed, index, stream=0, purpose=PURPOSE_MISC):
    """Two independent uniforms on (0, 1] per counter.

    ``index`` may be any non-negative integer array (< 2**64); ``stream`` a
    scalar or array broadcastable against it (< 2**32).  Returns an array of
    shape ``index.shape + (2,)``.
    """
    index = np.asarray(index, dtype=np.uint64)
    k0, k1 = split_key(seed)
    c0 = (index & _LO).astype(np.uint32)
    c1 = (index >> _S32).astype(np.uint32)
    c2 = np.asarray(stream, dtype=np.uint64).astype(np.uint32)
    c3 = np.uint32(purpose)
    w0, w1, w2, w3 = philox4x32(c0, c1, c2, c3, k0, k1)
    return np.stack([_to_unit(w0, w1), _to_unit(w2, w3)], axis=-1)


def replica_seed(seed, replica):
    """Derive an independent 64-bit seed for ``replica`` (split operation)."""
    k0, k1 = split_key(seed)
    r = int(replica)
    w = philox4x32(r & 0xFFFFFFFF, r >> 32, 0, PURPOSE_MISC, k0, k1)
    return (int(w[0]) << 32) | int(w[1])
