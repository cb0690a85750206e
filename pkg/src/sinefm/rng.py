"""splitmix64 and xoshiro256** generators.

Everything that must be reproducible from a transmitted seed goes through
these two functions, so the bit patterns are pinned here rather than left to
numpy's generator of the day.
"""

MASK64 = (1 << 64) - 1

_GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(state):
    """Advance a splitmix64 state. Returns ``(new_state, output)``."""
    state = (state + _GOLDEN) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return state, z ^ (z >> 31)


def derive_seed(seed, stream):
    """Return output number ``stream`` (0-based) of splitmix64 seeded with ``seed``.

    Used to fan a single master seed out into independent sub-seeds
    (per-purpose streams, per-layer transform seeds).
    """
    if stream < 0:
        raise ValueError("stream index must be non-negative")
    state = seed & MASK64
    out = 0
    for _ in range(stream + 1):
        state, out = splitmix64(state)
    return out


def _rotl(x, k):
    return ((x << k) | (x >> (64 - k))) & MASK64


class Xoshiro256StarStar:
    """xoshiro256** 1.0 with splitmix64 seeding."""

    __slots__ = ("s",)

    def __init__(self, seed=None, state=None):
        if state is not None:
            if len(state) != 4 or not any(state):
                raise ValueError("state must be four words, not all zero")
            self.s = [int(v) & MASK64 for v in state]
            return
        sm = (seed or 0) & MASK64
        s = []
        for _ in range(4):
            sm, out = splitmix64(sm)
            s.append(out)
        self.s = s

    def next_u64(self):
        s = self.s
        result = (_rotl((s[1] * 5) & MASK64, 7) * 9) & MASK64
        t = (s[1] << 17) & MASK64
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = _rotl(s[3], 45)
        return result

    def uniform(self, low=0.0, high=1.0):
        """Float in ``[low, high)`` from the top 53 bits of one draw."""
        u = (self.next_u64() >> 11) * (1.0 / (1 << 53))
        return low + (high - low) * u

    def randint(self, low, high):
        """Integer uniform over the closed range ``[low, high]``."""
        if high < low:
            raise ValueError("empty integer range")
        span = high - low + 1
        u = (self.next_u64() >> 11) * (1.0 / (1 << 53))
        return low + min(int(u * span), span - 1)
