"""SplitMix64-based seed derivation.

Child seeds are a pure function of (master, path), so a batch can be produced
in any order or split across workers and still come out identical.
"""

MASK64 = (1 << 64) - 1


def splitmix64(value: int) -> int:
    z = (value + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_seed(master: int, *path: int) -> int:
    s = splitmix64(master & MASK64)
    for p in path:
        s = splitmix64(s ^ splitmix64(p & MASK64))
    return s
