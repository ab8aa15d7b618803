"""LZ78 incremental parsing, code lengths, and a bit-fed decoder.

Code-length convention (uniquely decodable for a known length ``n``): the
``j``-th complete phrase costs ``ceil(log2 j)`` bits for its prefix index
(``0..j-1``, 0 being the empty phrase) plus ``ceil(log2 alpha)`` bits for its
last symbol. An incomplete final phrase repeats an earlier phrase and is sent as
that phrase's index alone, in ``ceil(log2(c + 1))`` bits.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator

import numpy as np

from .core import all_sequences, as_sequence, check_enum_cap


def clog2(v: int) -> int:
    """ceil(log2 v) for v >= 1."""
    return (int(v) - 1).bit_length()


class InvalidCodeword(ValueError):
    """The bit stream does not encode any sequence of the requested length."""


@dataclass
class LzParse:
    phrases: list[tuple[int, int]]
    tail: int | None
    alphabet_size: int
    lengths: list[int]

    @property
    def c(self) -> int:
        return len(self.phrases)

    def phrase_symbols(self, index: int) -> list[int]:
        out = []
        while index:
            prefix, sym = self.phrases[index - 1]
            out.append(sym)
            index = prefix
        return out[::-1]

    def phrase_strings(self) -> list[str]:
        return ["".join(map(str, self.phrase_symbols(j))) for j in range(1, self.c + 1)]

    def reconstruct(self) -> np.ndarray:
        out = []
        for j in range(1, self.c + 1):
            out.extend(self.phrase_symbols(j))
        if self.tail is not None:
            out.extend(self.phrase_symbols(self.tail))
        return np.asarray(out, dtype=np.int64)


def lz78_parse(xhat, alphabet_size: int | None = None) -> LzParse:
    x = as_sequence(xhat, alphabet_size)
    if x.size == 0:
        raise ValueError("cannot parse an empty sequence")
    alpha = int(x.max()) + 1 if alphabet_size is None else alphabet_size
    alpha = max(alpha, 2) if alphabet_size is None else alpha
    trie: dict[tuple[int, int], int] = {}
    phrases: list[tuple[int, int]] = []
    lengths: list[int] = []
    node = 0
    depth = 0
    for s in x.tolist():
        nxt = trie.get((node, s))
        if nxt is None:
            phrases.append((node, s))
            lengths.append(depth + 1)
            trie[(node, s)] = len(phrases)
            node, depth = 0, 0
        else:
            node, depth = nxt, depth + 1
    return LzParse(phrases, node if node else None, alpha, lengths)


def code_length_of(parse: LzParse) -> int:
    sym_bits = clog2(parse.alphabet_size)
    bits = sum(clog2(j) + sym_bits for j in range(1, parse.c + 1))
    if parse.tail is not None:
        bits += clog2(parse.c + 1)
    return bits


def lz_code_length(xhat, alphabet_size: int | None = None) -> int:
    return code_length_of(lz78_parse(xhat, alphabet_size))


def lz_encode(xhat, alphabet_size: int | None = None) -> list[int]:
    parse = lz78_parse(xhat, alphabet_size)
    sym_bits = clog2(parse.alphabet_size)
    bits: list[int] = []

    def put(value, width):
        bits.extend((value >> (width - 1 - i)) & 1 for i in range(width))

    for j, (prefix, sym) in enumerate(parse.phrases, start=1):
        put(prefix, clog2(j))
        put(sym, sym_bits)
    if parse.tail is not None:
        put(parse.tail, clog2(parse.c + 1))
    return bits


def _decode_once(get, n, alphabet_size, strict):
    sym_bits = clog2(alphabet_size)
    phrases: list[list[int]] = [[]]
    seen: set[tuple[int, int]] = set()
    out: list[int] = []
    truncated = False
    while len(out) < n:
        j = len(phrases)
        idx = get(clog2(j))
        if idx >= j:
            if strict:
                raise InvalidCodeword(f"prefix index {idx} with only {j} phrases")
            idx %= j
            truncated = True
        remaining = n - len(out)
        base = phrases[idx]
        if len(base) == remaining and idx > 0:
            out.extend(base)
            break
        if len(base) + 1 > remaining:
            if strict:
                raise InvalidCodeword("phrase overruns the requested length")
            out.extend(base[:remaining])
            truncated = True
            break
        sym = get(sym_bits)
        if sym >= alphabet_size:
            if strict:
                raise InvalidCodeword(f"symbol value {sym} out of range")
            sym %= alphabet_size
            truncated = True
        if (idx, sym) in seen:
            # a canonical parse never repeats a complete phrase
            if strict:
                raise InvalidCodeword("repeated phrase")
            truncated = True
        seen.add((idx, sym))
        phrase = base + [sym]
        phrases.append(phrase)
        out.extend(phrase)
    return np.asarray(out, dtype=np.int64), truncated


def lz_decode_stream(bits: Iterable[int], n: int, alphabet_size: int, on_invalid: str = "restart"):
    """Decode ``n`` symbols from a bit stream, consuming fields per the convention.

    Returns ``(symbols, truncated)``. A bit path that is not a codeword for
    length ``n`` (an index past the dictionary, a symbol value out of range, a
    repeated phrase, or a phrase overrunning ``n``) is handled per
    ``on_invalid``:

    * ``"restart"``: discard the partial output and decode afresh from the next
      bits. With fair bits the output then has law ``2^-LZ / sum 2^-LZ`` exactly.
    * ``"truncate"``: wrap the offending field modulo its range, cut the final
      phrase at ``n`` and return ``truncated=True``. Approximate.
    * ``"raise"``: raise :class:`InvalidCodeword`.
    """
    if on_invalid not in ("restart", "truncate", "raise"):
        raise ValueError(f"unknown on_invalid mode {on_invalid!r}")
    it = iter(bits)

    def get(width):
        v = 0
        for _ in range(width):
            v = (v << 1) | next(it)
        return v

    strict = on_invalid != "truncate"
    while True:
        try:
            return _decode_once(get, n, alphabet_size, strict)
        except InvalidCodeword:
            if on_invalid == "raise":
                raise


def random_bits(rng: np.random.Generator, chunk: int = 256) -> Iterator[int]:
    """Endless stream of fair bits from ``rng``."""
    while True:
        yield from rng.integers(0, 2, size=chunk).tolist()


def all_code_lengths(alpha: int, n: int, cap_bits: float = 24) -> np.ndarray:
    """LZ code length of every sequence in ``alpha^n``, lexicographic order.

    Depth-first over the sequence tree, carrying the parse state with undo, so
    the cost is proportional to the number of tree nodes.
    """
    check_enum_cap(alpha, n, cap_bits)
    sym_bits = clog2(alpha)
    out = np.empty(alpha**n, dtype=np.int64)
    trie: dict[tuple[int, int], int] = {}
    pos = 0

    def walk(depth, node, c, bits):
        nonlocal pos
        if depth == n:
            out[pos] = bits + (clog2(c + 1) if node else 0)
            pos += 1
            return
        for s in range(alpha):
            key = (node, s)
            child = trie.get(key)
            if child is None:
                trie[key] = c + 1
                walk(depth + 1, 0, c + 1, bits + clog2(c + 1) + sym_bits)
                del trie[key]
            else:
                walk(depth + 1, child, c, bits)

    walk(0, 0, 0, 0)
    return out


def lz_code_lengths_for(seqs: np.ndarray, alpha: int) -> np.ndarray:
    return np.array([lz_code_length(s, alpha) for s in np.atleast_2d(seqs)], dtype=np.int64)


def kraft_sum(alpha: int, n: int) -> float:
    return float(np.sum(np.exp2(-all_code_lengths(alpha, n).astype(float))))

