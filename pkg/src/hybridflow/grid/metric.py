"""Deterministic stand-in for a trained model's fold metric.

Bit-exact definition (all arithmetic modulo 2**64)::

    mix(z):  z += 0x9E3779B97F4A7C15
             z  = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
             z  = (z ^ (z >> 27)) * 0x94D049BB133111EB
             z  =  z ^ (z >> 31)
    fnv1a(s): FNV-1a 64 over the UTF-8 bytes of s
              (offset 0xCBF29CE484222325, prime 0x100000001B3)

    h      = mix(mix(mix(seed) ^ fnv1a(variant_id)) ^ fold)
    metric = (h >> 11) / 2**53              # in [0, 1)

Negative seeds and folds are reduced modulo 2**64 first.  The module imports
nothing outside the standard library so stub tasks load it cheaply.
"""

MASK64 = (1 << 64) - 1


def mix64(z: int) -> int:
    z = (z + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def fnv1a64(text: str) -> int:
    h = 0xCBF29CE484222325
    for byte in text.encode("utf-8"):
        h = ((h ^ byte) * 0x100000001B3) & MASK64
    return h


def stub_metric(seed: int, variant_id: str, fold: int) -> float:
    h = mix64(mix64(mix64(seed & MASK64) ^ fnv1a64(variant_id)) ^ (fold & MASK64))
    return (h >> 11) / float(1 << 53)
