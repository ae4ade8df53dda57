"""
Connection identifier constructions.

SERVER_ROUTED cids carry 48 routing bits (16-bit backend id, 32-bit nonce)
followed by a 16-bit authenticator keyed by the load balancer. HOTP_ROTATING
cids are the first 64 bits of HMAC-SHA-256(cid_key, counter).
"""

from typing import Optional

import numpy as np

from mcpsim.protocol.integrity import truncated_mac

AUTH_BITS = 16
ROUTING_BITS = 48
BACKEND_SHIFT = 48
BACKEND_MASK = 0xFFFF
HOTP_LOOKAHEAD = 8


def routed_cid_authenticator(lb_key: bytes, routing: int) -> int:
    mac = truncated_mac(lb_key, routing.to_bytes(ROUTING_BITS // 8, "big"), AUTH_BITS // 8)
    return int.from_bytes(mac, "big")


def issue_routed_cid(lb_key: bytes, backend_id: int, rng: np.random.Generator) -> int:
    nonce = int(rng.integers(0, 1 << 32))
    routing = ((backend_id & BACKEND_MASK) << 32) | nonce
    return (routing << AUTH_BITS) | routed_cid_authenticator(lb_key, routing)


def routed_cid_valid(lb_key: bytes, cid: int) -> bool:
    routing = cid >> AUTH_BITS
    return routed_cid_authenticator(lb_key, routing) == cid & ((1 << AUTH_BITS) - 1)


def routed_backend(cid: int) -> int:
    return (cid >> BACKEND_SHIFT) & BACKEND_MASK


def hotp_cid(cid_key: bytes, counter: int) -> int:
    return int.from_bytes(truncated_mac(cid_key, counter.to_bytes(8, "big"), 8), "big")


def reassociate_hotp(
    cid_key: bytes, counter: int, observed_cid: int, lookahead: int = HOTP_LOOKAHEAD
) -> Optional[int]:
    """Counter value in (counter, counter + lookahead] that produced observed_cid"""
    for candidate in range(counter + 1, counter + 1 + lookahead):
        if hotp_cid(cid_key, candidate) == observed_cid:
            return candidate
    return None
