"""
Authority directory

Each authority keeps a node -> authority table, rebuilt from registration
floods, together with the public key every node registered. The DB server
is the only holder of reputation values; the directory only routes.
"""

import logging
from typing import Dict, Iterable, List, Optional, Tuple

from message_security import PublicKeyId

from servnet_protocol.types import ServerId

logger = logging.getLogger("servnet.directory")

DirectoryEntry = Tuple[ServerId, ServerId, PublicKeyId]


class AuthorityDirectory:
    """Node-to-authority table held by one authority."""

    def __init__(self, owner: ServerId, entries: Iterable[DirectoryEntry] = ()):
        """
        Args:
            owner: Authority holding this copy
            entries: Initial (node, authority, public key) triples
        """
        self.owner = owner
        self._authority_of: Dict[ServerId, ServerId] = {}
        self._keys: Dict[ServerId, PublicKeyId] = {}
        self.load_entries(entries)

    def load_entries(self, entries: Iterable[DirectoryEntry]) -> None:
        for node, authority, public_key in entries:
            self._authority_of[node] = authority
            self._keys[node] = public_key

    def node_exists(self, node: ServerId) -> bool:
        return node in self._authority_of

    def add_node(self, node: ServerId, authority: ServerId, public_key: PublicKeyId) -> None:
        if node in self._authority_of:
            raise ValueError(f"Node {node} already exists")
        self._authority_of[node] = authority
        self._keys[node] = public_key
        logger.debug(f"{self.owner}: {node} -> {authority}")

    def remove_node(self, node: ServerId) -> None:
        if node not in self._authority_of:
            raise ValueError(f"Node {node} not found")
        del self._authority_of[node]
        del self._keys[node]
        logger.debug(f"{self.owner}: removed {node}")

    def reassign_subtree(self, old: ServerId, new: ServerId) -> List[ServerId]:
        """Point every node of old's subtree at new. Returns the moved nodes."""
        moved = sorted(n for n, a in self._authority_of.items() if a == old)
        for node in moved:
            self._authority_of[node] = new
        return moved

    def get_authority(self, node: ServerId) -> Optional[ServerId]:
        return self._authority_of.get(node)

    def get_public_key(self, node: ServerId) -> Optional[PublicKeyId]:
        return self._keys.get(node)

    def list_nodes(self) -> List[ServerId]:
        return sorted(self._authority_of)

    def subtree(self, authority: ServerId) -> List[ServerId]:
        return sorted(n for n, a in self._authority_of.items() if a == authority)

    def entries(self) -> Tuple[DirectoryEntry, ...]:
        return tuple((n, self._authority_of[n], self._keys[n]) for n in sorted(self._authority_of))

    def as_mapping(self) -> Dict[ServerId, ServerId]:
        return dict(sorted(self._authority_of.items()))

    def __len__(self) -> int:
        return len(self._authority_of)
