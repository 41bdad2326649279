"""Private set intersection cardinality over a commutative cipher.

The client learns how many of its observed contact-event hashes appear
in a published infected set, and the server learns neither the client's
elements nor which ones matched. Both parties exponentiate in the
quadratic-residue subgroup of a fixed 2048-bit safe prime, where
encryption layers commute: x^(ab) = x^(ba) mod p.

Flow per query: the client hashes its set into the group, pads it to a
minimum size with throwaway random elements, shuffles, encrypts under a
fresh single-use key, and sends it. The server re-encrypts everything
under the batch key, shuffles again, and returns the result together
with a precomputed Bloom filter of the batch's encrypted infected set.
The client strips its own layer and counts filter hits. Because the
server shuffles, the client learns a count, not which elements matched.

A second, optional step refines the count into exposure-category blocks
(again padded to a common size, again under a fresh key). Clients whose
first count was zero send a decoy second step with a random partition
instead, so the server cannot tell contact from no-contact transcripts.
"""

from __future__ import annotations

import hashlib
import secrets
from dataclasses import dataclass
from typing import Optional, Sequence
import random

import gmpy2

from .bloom import DEFAULT_K, BloomFilter, ExactSet

# 2048-bit safe prime: the MODP group 14 modulus (RFC 3526). q = (p-1)/2
# is prime, so every nonzero exponent mod q is invertible and the
# squares form the order-q subgroup the protocol works in.
P_HEX = (
    "ffffffffffffffffc90fdaa22168c234c4c6628b80dc1cd129024e088a67cc74"
    "020bbea63b139b22514a08798e3404ddef9519b3cd3a431b302b0a6df25f1437"
    "4fe1356d6d51c245e485b576625e7ec6f44c42e9a637ed6b0bff5cb6f406b7ed"
    "ee386bfb5a899fa5ae9f24117c4b1fe649286651ece45b3dc2007cb8a163bf05"
    "98da48361c55d39a69163fa8fd24cf5f83655d23dca3ad961c62f356208552bb"
    "9ed529077096966d670c354e4abc9804f1746c08ca18217c32905e462e36ce3b"
    "e39e772c180e86039b2783a2ec07a28fb5c55df06f4c52c9de2bcbf695581718"
    "3995497cea956ae515d2261898fa051015728e5a8aacaa68ffffffffffffffff"
)
P = int(P_HEX, 16)
Q = (P - 1) // 2
_P = gmpy2.mpz(P)

ELEMENT_BYTES = 256
# 256-bit exponents instead of full-width ones: discrete log in this
# group still costs ~2^128 via the best short-exponent attacks, and a
# modexp drops from ~2.7 ms to ~0.3 ms, which dominates protocol cost.
EXPONENT_BITS = 256
MIN_QUERY = 100
REFINE_BLOCKS = 3


class ProtocolError(Exception):
    """State machine misuse or a malformed peer message."""


class QueryTooSmall(ProtocolError):
    """Client blob below the configured minimum query size."""


@dataclass(frozen=True)
class CommutativeKey:
    exponent: int

    def __post_init__(self) -> None:
        if not 1 <= self.exponent < Q:
            raise ValueError("exponent outside [1, q-1]")


def generate_key(rng: Optional[random.Random] = None) -> CommutativeKey:
    while True:
        e = secrets.randbits(EXPONENT_BITS) if rng is None else rng.getrandbits(EXPONENT_BITS)
        if e > 1:
            return CommutativeKey(e)


def hash_to_group(data: bytes) -> int:
    """Map bytes to the quadratic-residue subgroup by hashing and squaring.

    Degenerate values 0 and 1 are rehashed with a counter suffix; both
    parties apply the identical rule, so equal inputs agree.
    """
    suffix = b""
    counter = 0
    while True:
        x = int.from_bytes(hashlib.sha256(data + suffix).digest(), "big")
        element = (x * x) % P
        if element > 1:
            return element
        counter += 1
        suffix = counter.to_bytes(4, "big")


def commute_encrypt(key: CommutativeKey, element: int) -> int:
    return int(gmpy2.powmod(element, key.exponent, _P))


def strip_layer(key: CommutativeKey, element: int) -> int:
    """Inverse of commute_encrypt under the same key.

    Group elements have order q, so the inverse exponent mod q undoes
    the layer no matter how many other layers are stacked on top.
    """
    return int(gmpy2.powmod(element, pow(key.exponent, -1, Q), _P))


def element_to_bytes(element: int) -> bytes:
    """Fixed-width big-endian wire form, 256 bytes."""
    return element.to_bytes(ELEMENT_BYTES, "big")


def element_from_bytes(blob: bytes) -> int:
    if len(blob) != ELEMENT_BYTES:
        raise ProtocolError(f"group element must be {ELEMENT_BYTES} bytes, got {len(blob)}")
    element = int.from_bytes(blob, "big")
    if not 0 < element < P:
        raise ProtocolError("group element out of range")
    return element


def _random_padding_element(rng: Optional[random.Random]) -> int:
    # Fresh random strings hashed into the group; never stored, never
    # re-derivable, so they match nothing on either side.
    raw = secrets.token_bytes(32) if rng is None else rng.randbytes(32)
    return hash_to_group(raw)


class PsiClientSession:
    """One client query step: a fresh key, one send, one reply.

    Round 1 uses a single block (the padded observed set). Category
    refinement is a second session with its own fresh key and one block
    per category; reusing a session's key across steps would let the
    server link equal plaintexts between steps.
    """

    INIT = "INIT"
    SENT = "ROUND1_SENT"
    DONE = "DONE"

    def __init__(self, rng: Optional[random.Random] = None):
        self._rng = rng
        self.key = generate_key(rng)
        self.state = PsiClientSession.INIT
        self._block_sizes: list[int] = []
        self._real_counts: list[int] = []

    def _shuffle(self, items: list) -> None:
        if self._rng is None:
            for i in range(len(items) - 1, 0, -1):
                j = secrets.randbelow(i + 1)
                items[i], items[j] = items[j], items[i]
        else:
            self._rng.shuffle(items)

    def send_blocks(self, blocks: Sequence[Sequence[bytes]], pad_to: int) -> list[list[bytes]]:
        """Hash, pad, shuffle, and encrypt each block of ceTCNs.

        Every block is padded to exactly pad_to elements so the wire
        shape depends only on the configured sizes, not on how many real
        contacts fall in each block. Returns wire-encoded elements.
        """
        if self.state != PsiClientSession.INIT:
            raise ProtocolError("session key is single use; start a new session")
        out = []
        for block in blocks:
            if len(block) > pad_to:
                raise ProtocolError(f"block of {len(block)} exceeds pad size {pad_to}")
            elements = [hash_to_group(ce) for ce in block]
            while len(elements) < pad_to:
                elements.append(_random_padding_element(self._rng))
            self._shuffle(elements)
            out.append([element_to_bytes(commute_encrypt(self.key, e)) for e in elements])
            self._block_sizes.append(pad_to)
            self._real_counts.append(len(block))
        self.state = PsiClientSession.SENT
        return out

    def finish(self, reply_blocks: Sequence[Sequence[bytes]], infected_filter) -> list[int]:
        """Strip the session layer and count filter hits per block."""
        return [row[0] for row in self.finish_multi(reply_blocks, [infected_filter])]

    def finish_multi(self, reply_blocks: Sequence[Sequence[bytes]],
                     infected_filters: Sequence) -> list[list[int]]:
        """Like finish, but counts each block against several membership
        structures in one stripping pass (the modexp dominates, so
        checking extra filters is nearly free). Returns, per block, one
        count per filter."""
        if self.state != PsiClientSession.SENT:
            raise ProtocolError("finish called before send, or session already finished")
        if len(reply_blocks) != len(self._block_sizes):
            raise ProtocolError("reply block count mismatch")
        counts = []
        for reply, expected in zip(reply_blocks, self._block_sizes):
            if len(reply) != expected:
                raise ProtocolError(f"reply block of {len(reply)}, expected {expected}")
            row = [0] * len(infected_filters)
            for blob in reply:
                stripped = element_to_bytes(strip_layer(self.key, element_from_bytes(blob)))
                for idx, infected in enumerate(infected_filters):
                    if stripped in infected:
                        row[idx] += 1
            counts.append(row)
        self.state = PsiClientSession.DONE
        return counts


def client_round1(session: PsiClientSession, observed: Sequence[bytes],
                  min_query: int = MIN_QUERY) -> list[bytes]:
    """Round-1 blob: the observed set padded to at least min_query."""
    pad_to = max(min_query, len(observed))
    return session.send_blocks([observed], pad_to)[0]


def client_finish(session: PsiClientSession, reply: Sequence[bytes], infected_filter) -> int:
    """Total intersection cardinality from the round-1 echo."""
    return session.finish([reply], infected_filter)[0]


def refine_blocks(session: PsiClientSession, partitions: Sequence[Sequence[bytes]],
                  pad_to: int) -> list[list[bytes]]:
    """Second-step blocks, one per category partition, all padded alike."""
    if len(partitions) != REFINE_BLOCKS:
        raise ProtocolError(f"refinement uses exactly {REFINE_BLOCKS} blocks")
    return session.send_blocks(partitions, pad_to)


def decoy_second_query(session: PsiClientSession, observed: Sequence[bytes], pad_to: int,
                       rng: Optional[random.Random] = None) -> list[list[bytes]]:
    """Traffic-shaping stand-in for clients with nothing to refine.

    The observed elements are split across the blocks uniformly at
    random; with a fresh key and common padding the resulting wire
    messages are distributed identically to a real refinement.
    """
    items = list(observed)
    if rng is None:
        for i in range(len(items) - 1, 0, -1):
            j = secrets.randbelow(i + 1)
            items[i], items[j] = items[j], items[i]
        assign = [secrets.randbelow(REFINE_BLOCKS) for _ in items]
    else:
        rng.shuffle(items)
        assign = [rng.randrange(REFINE_BLOCKS) for _ in items]
    partitions: list[list[bytes]] = [[] for _ in range(REFINE_BLOCKS)]
    for ce, block_idx in zip(items, assign):
        partitions[block_idx].append(ce)
    return session.send_blocks(partitions, pad_to)


def server_respond(server_key: CommutativeKey, blocks: Sequence[Sequence[bytes]],
                   rng: Optional[random.Random] = None,
                   min_query: Optional[int] = None) -> list[list[bytes]]:
    """Re-encrypt every client element under the batch key and shuffle.

    The shuffle is what reduces the reply to a pure cardinality: without
    it the client could attribute each echoed element to the one it sent
    and read off per-element membership.
    """
    out = []
    for block in blocks:
        if min_query is not None and len(block) < min_query:
            raise QueryTooSmall(f"query of {len(block)} below minimum {min_query}")
        echoed = [element_to_bytes(commute_encrypt(server_key, element_from_bytes(b)))
                  for b in block]
        if rng is None:
            for i in range(len(echoed) - 1, 0, -1):
                j = secrets.randbelow(i + 1)
                echoed[i], echoed[j] = echoed[j], echoed[i]
        else:
            rng.shuffle(echoed)
        out.append(echoed)
    return out


def build_infected_filter(server_key: CommutativeKey, cetcns: Sequence[bytes],
                          k: int = DEFAULT_K) -> BloomFilter:
    """Precomputable per-batch filter over the encrypted infected set."""
    f = BloomFilter(len(cetcns), k=k)
    for ce in cetcns:
        f.add(element_to_bytes(commute_encrypt(server_key, hash_to_group(ce))))
    return f


def build_infected_exact(server_key: CommutativeKey, cetcns: Sequence[bytes]) -> ExactSet:
    """Exact-membership variant of the batch filter, for tests."""
    s = ExactSet()
    for ce in cetcns:
        s.add(element_to_bytes(commute_encrypt(server_key, hash_to_group(ce))))
    return s
