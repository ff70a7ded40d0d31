"""Deterministic scalar math and sampling primitives.

Everything here is a pure function of its inputs. Randomness comes from
counter-based streams keyed by (master_seed, stream_id): draw t of a stream
is a 64-bit avalanche hash of (master_seed, stream_id, t) mapped into (0, 1).
Identical keys replay bit-identically, distinct keys never share state, and
the scalar and vectorized paths compute the same bits.

Draw-column discipline used by the protocol engine (one stream per user per
trial): columns 0 and 1 feed the Box-Muller population sample, column 2 the
randomizer's keep/flip or noise draw, column 3 the four-way randomized
response's alternative choice.
"""

from __future__ import annotations

import math

import numpy as np

_MASK64 = (1 << 64) - 1
_MIX_A = 0xBF58476D1CE4E5B9
_MIX_B = 0x94D049BB133111EB
_HASH_IV = 0x9E3779B97F4A7C15

# Inverse erf saturates its argument here; keeps the inversion total when
# aggregation noise pushes the argument past +-1.
ERF_INV_CLAMP = 1.0 - 2.0 ** -40


def mix64(z: int) -> int:
    """SplitMix64 finalizer: a 64-bit avalanche permutation."""
    z &= _MASK64
    z = ((z ^ (z >> 30)) * _MIX_A) & _MASK64
    z = ((z ^ (z >> 27)) * _MIX_B) & _MASK64
    return z ^ (z >> 31)


def hash_u64(*parts: int) -> int:
    """Hash a fixed-arity tuple of integers into 64 bits by absorb-and-mix."""
    h = _HASH_IV
    for p in parts:
        h = mix64(h ^ (p & _MASK64))
    return h


def _mix64_array(z: np.ndarray) -> np.ndarray:
    z = z.astype(np.uint64, copy=True)
    z ^= z >> np.uint64(30)
    z *= np.uint64(_MIX_A)
    z ^= z >> np.uint64(27)
    z *= np.uint64(_MIX_B)
    z ^= z >> np.uint64(31)
    return z


def _unit_from_u64(h):
    # Top 53 bits, offset by half a ulp: strictly inside (0, 1).
    return ((h >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0 ** -53


def derive_stream_id(trial_index: int, user_index: int) -> int:
    """Stream id for one user in one trial (documented 64-bit mixing)."""
    return hash_u64(trial_index, user_index)


class RandomStream:
    """One deterministic uniform stream keyed by (master_seed, stream_id).

    Draw t is hash_u64(master_seed, stream_id, t) mapped into (0, 1); the
    instance just tracks the next counter value.
    """

    __slots__ = ("master_seed", "stream_id", "position")

    def __init__(self, master_seed: int, stream_id: int, position: int = 0):
        self.master_seed = master_seed
        self.stream_id = stream_id
        self.position = position

    def next_uniform(self) -> float:
        h = hash_u64(self.master_seed, self.stream_id, self.position)
        self.position += 1
        return float(((h >> 11) + 0.5) * 2.0 ** -53)

    def uniforms(self, count: int) -> np.ndarray:
        return np.array([self.next_uniform() for _ in range(count)])


def uniform_block(
    master_seed: int,
    trial_index: int,
    user_indices: np.ndarray,
    first: int,
    count: int,
) -> np.ndarray:
    """Uniform draws for many users at once.

    Returns a (len(user_indices), count) matrix whose row i, column t equals
    draw first+t of RandomStream(master_seed, derive_stream_id(trial_index,
    user_indices[i])), bit for bit.
    """
    idx = np.asarray(user_indices, dtype=np.uint64)
    # hash_u64(trial, user) = mix64(mix64(IV ^ trial) ^ user)
    sid = _mix64_array(np.uint64(hash_u64(trial_index)) ^ idx)
    h0 = np.uint64(mix64(_HASH_IV ^ (master_seed & _MASK64)))
    base = _mix64_array(h0 ^ sid)
    out = np.empty((idx.shape[0], count), dtype=np.float64)
    for t in range(count):
        out[:, t] = _unit_from_u64(_mix64_array(base ^ np.uint64(first + t)))
    return out


class TrialStreams:
    """Per-user stream factory for a single trial."""

    __slots__ = ("master_seed", "trial_index")

    def __init__(self, master_seed: int, trial_index: int):
        self.master_seed = master_seed
        self.trial_index = trial_index

    def stream(self, user_index: int) -> RandomStream:
        return RandomStream(self.master_seed, derive_stream_id(self.trial_index, user_index))

    def matrix(self, user_indices, first: int, count: int) -> np.ndarray:
        return uniform_block(self.master_seed, self.trial_index, user_indices, first, count)


def erf(x: float) -> float:
    """Gauss error function (odd, increasing, range (-1, 1))."""
    return math.erf(x)


# Rational approximation of the standard normal quantile (Acklam). Used only
# as the starting point for Newton refinement in erf_inv.
_ACK_A = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
          1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_ACK_B = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
          6.680131188771972e+01, -1.328068155288572e+01)
_ACK_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
          -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_ACK_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
          3.754408661907416e+00)


def _normal_quantile_approx(p: float) -> float:
    a, b, c, d = _ACK_A, _ACK_B, _ACK_C, _ACK_D
    if p < 0.02425:
        q = math.sqrt(-2.0 * math.log(p))
        return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) / \
               ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0)
    if p > 1.0 - 0.02425:
        q = math.sqrt(-2.0 * math.log(1.0 - p))
        return -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) / \
               ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0)
    q = p - 0.5
    r = q * q
    return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q / \
           (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0)


def erf_inv(y: float) -> float:
    """Inverse of erf, total on the reals.

    The argument saturates at +-(1 - 2^-40) before inversion, so values the
    aggregation noise pushes past +-1 map to the finite extremes instead of
    failing. Rational first guess, then two Newton steps on erf; roundtrip
    error is below 1e-13 for |y| <= 0.999.
    """
    if y != y:  # NaN propagates
        return y
    y = max(-ERF_INV_CLAMP, min(ERF_INV_CLAMP, y))
    # erf_inv(y) = Phi^-1((y+1)/2) / sqrt(2)
    x = _normal_quantile_approx(0.5 * (y + 1.0)) / math.sqrt(2.0)
    half_sqrt_pi = 0.8862269254527580
    for _ in range(2):
        x -= (math.erf(x) - y) * half_sqrt_pi * math.exp(x * x)
    return x


def gaussian_from_uniforms(u1, u2, mu: float, sigma: float):
    """Box-Muller (cosine branch); the fixed Gaussian sampler of this build."""
    radius = np.sqrt(-2.0 * np.log(u1))
    return mu + sigma * (radius * np.cos(2.0 * math.pi * u2))


def sample_gaussian(stream: RandomStream, mu: float, sigma: float) -> float:
    """One N(mu, sigma^2) draw; consumes exactly two uniforms."""
    if not sigma > 0.0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    u1 = stream.next_uniform()
    u2 = stream.next_uniform()
    return float(gaussian_from_uniforms(np.float64(u1), np.float64(u2), mu, sigma))


def laplace_from_uniform(u, scale: float):
    """Inverse-CDF Laplace: u = 0.5 maps to exactly 0."""
    centered = u - 0.5
    return -scale * np.sign(centered) * np.log1p(-2.0 * np.abs(centered))


def sample_laplace(stream: RandomStream, scale: float) -> float:
    """One Laplace(scale) draw; consumes exactly one uniform."""
    if not scale > 0.0:
        raise ValueError(f"scale must be positive, got {scale}")
    return float(laplace_from_uniform(np.float64(stream.next_uniform()), scale))


def floor_div_mod4(x: float, j: int) -> int:
    """Euclidean (always in {0,1,2,3}) value of floor(x / 2^j) mod 4."""
    return int(math.floor(x / (2.0 ** j)) % 4.0)


def floor_div_mod4_array(xs: np.ndarray, j: int) -> np.ndarray:
    return (np.floor(np.asarray(xs, dtype=np.float64) / (2.0 ** j)) % 4.0).astype(np.int64)
