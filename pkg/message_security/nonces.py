"""
Per-node nonce streams drawn from the scenario's seeded generator.
"""

import hashlib
from typing import Dict, Set

import numpy as np

from message_security.primitives import NONCE_BYTES, Nonce


def _node_key(node: str) -> int:
    return int.from_bytes(hashlib.sha256(node.encode("utf-8")).digest()[:8], "big")


class NonceSource:
    """128-bit nonces for one node; never repeats within a run."""

    def __init__(self, seed: int, node: str):
        self.node = node
        self._rng = np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, _node_key(node)])
        self._issued: Set[int] = set()

    def fresh(self) -> Nonce:
        while True:
            value = int.from_bytes(self._rng.bytes(NONCE_BYTES), "big")
            if value not in self._issued:
                self._issued.add(value)
                return Nonce(value)


class NoncePool:
    """One NonceSource per node, created on first use."""

    def __init__(self, seed: int):
        self.seed = seed
        self._sources: Dict[str, NonceSource] = {}

    def fresh_nonce(self, node: str) -> Nonce:
        source = self._sources.get(node)
        if source is None:
            source = self._sources[node] = NonceSource(self.seed, node)
        return source.fresh()
