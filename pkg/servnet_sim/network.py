"""
Simulated network: per-link delays, FIFO per ordered link, interposers.

Nothing is lost unless an interposer drops it. Every transmission is kept
in `captured` so replay actions can pick old messages back up.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

from servnet_protocol import ProtocolMessage, ServerId

logger = logging.getLogger("servnet.network")

Link = Tuple[ServerId, ServerId]


@dataclass(frozen=True)
class Transmission:
    seq: int
    sent_tick: int
    src: ServerId
    dst: ServerId
    message: ProtocolMessage


class Interposer:
    """Something sitting on the wire. Subclasses live in servnet_sim.adversary."""

    name = "interposer"

    def active(self, tick: int) -> bool:
        return True

    def intercept(
        self, tick: int, src: ServerId, dst: ServerId, message: ProtocolMessage
    ) -> Optional[List[Tuple[ServerId, ServerId, ProtocolMessage]]]:
        """Replacement transmissions, or None to leave the message alone."""
        return None


class Network:
    def __init__(self, default_delay: int = 1, link_delays: Optional[Dict[Link, int]] = None):
        if default_delay < 1:
            raise ValueError(f"Link delay must be at least 1 tick, got {default_delay}")
        self.default_delay = default_delay
        self.link_delays = dict(link_delays or {})
        self.captured: List[Transmission] = []
        self.interposers: List[Interposer] = []
        self._last_delivery: Dict[Link, int] = {}

    def delay(self, src: ServerId, dst: ServerId) -> int:
        return self.link_delays.get((src, dst), self.default_delay)

    def interpose(self, interposer: Interposer) -> None:
        self.interposers.append(interposer)

    def route(
        self, tick: int, src: ServerId, dst: ServerId, message: ProtocolMessage
    ) -> Tuple[List[Tuple[ServerId, ServerId, ProtocolMessage]], List[str]]:
        """Apply interposers. Returns the transmissions to make and who touched them."""
        for interposer in self.interposers:
            if not interposer.active(tick):
                continue
            replaced = interposer.intercept(tick, src, dst, message)
            if replaced is not None:
                return replaced, [interposer.name]
        return [(src, dst, message)], []

    def schedule(self, tick: int, src: ServerId, dst: ServerId, message: ProtocolMessage) -> int:
        """Record a transmission and return its delivery tick (FIFO per link)."""
        self.captured.append(Transmission(len(self.captured), tick, src, dst, message))
        link = (src, dst)
        deliver_at = max(tick + self.delay(src, dst), self._last_delivery.get(link, 0))
        self._last_delivery[link] = deliver_at
        return deliver_at

    def find_captured(self, kind: str, src: ServerId, dst: ServerId, index: int = 0) -> Optional[Transmission]:
        matching = [t for t in self.captured if t.message.KIND == kind and t.src == src and t.dst == dst]
        return matching[index] if index < len(matching) else None
