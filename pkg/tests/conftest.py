"""Shared test helpers."""

import numpy as np


def networks_bit_identical(a, b) -> bool:
    """True when two networks have identical structure and bit-equal arrays."""
    if a.depth != b.depth:
        return False
    for la, lb in zip(a.layers, b.layers):
        if la.spec != lb.spec:
            return False
        if not np.array_equal(la.weights, lb.weights):
            return False
        if (la.bias is None) != (lb.bias is None):
            return False
        if la.bias is not None and not np.array_equal(la.bias, lb.bias):
            return False
    return True
