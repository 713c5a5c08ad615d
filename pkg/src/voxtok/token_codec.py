"""Embedding shape tokens in an extended text vocabulary.

Layout: ``[0, base)`` text ids, ``base`` = mesh-start sentinel,
``base + 1`` = mesh-end sentinel, ``[base + 2, base + 2 + 8192)`` shape ids.
A shape block is ``[start] + 1024 shape ids + [end]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import FramingError, MissingSentinel, OutOfShapeRange, WrongLength
from .latent_coder import CODEBOOK_SIZE, N_TOKENS, TokenSequence

BLOCK_LENGTH = N_TOKENS + 2


@dataclass(frozen=True)
class VocabMapping:
    base_vocab_size: int
    shape_vocab_size: int = CODEBOOK_SIZE

    def __post_init__(self):
        if self.base_vocab_size < 0:
            raise ValueError("base_vocab_size must be >= 0")

    @property
    def mesh_start_id(self):
        return self.base_vocab_size

    @property
    def mesh_end_id(self):
        return self.base_vocab_size + 1

    @property
    def shape_offset(self):
        return self.base_vocab_size + 2

    @property
    def total_size(self):
        return self.shape_offset + self.shape_vocab_size

    def is_shape_id(self, i):
        return self.shape_offset <= i < self.total_size


def to_extended(tokens, mapping):
    """Frame a token sequence as 1026 extended-vocabulary ids."""
    return [mapping.mesh_start_id, *(tokens.ids + mapping.shape_offset).tolist(), mapping.mesh_end_id]


def from_extended(ids, mapping):
    """Strip sentinels and offsets from one framed block.

    Raises
    ------
    MissingSentinel, WrongLength, OutOfShapeRange
        Each carries the offending ``position`` within ``ids``.
    """
    ids = list(ids)
    if not ids or ids[0] != mapping.mesh_start_id:
        raise MissingSentinel(0, "block does not begin with mesh-start")
    if len(ids) < 2 or ids[-1] != mapping.mesh_end_id:
        raise MissingSentinel(len(ids) - 1, "block does not end with mesh-end")
    if len(ids) != BLOCK_LENGTH:
        raise WrongLength(len(ids) - 1, f"expected {N_TOKENS} shape ids, got {len(ids) - 2}")
    inner = np.asarray(ids[1:-1], dtype=np.int64)
    bad = np.flatnonzero((inner < mapping.shape_offset) | (inner >= mapping.total_size))
    if len(bad):
        pos = int(bad[0]) + 1
        raise OutOfShapeRange(pos, f"id {ids[pos]} is not a shape id")
    return TokenSequence(inner - mapping.shape_offset, mapping.shape_vocab_size)


@dataclass(frozen=True)
class ScannedBlock:
    """One sentinel-delimited region of a mixed stream.

    ``span`` is the half-open index range in the stream. Exactly one of
    ``tokens`` and ``error`` is set; ``position`` locates the problem.
    """

    span: tuple
    tokens: TokenSequence = None
    error: str = None
    position: int = None

    @property
    def ok(self):
        return self.error is None


def scan_stream(ids, mapping):
    """Find every shape block in a mixed text/shape id stream.

    Malformed regions are returned as diagnostics instead of raising: a
    mesh-start inside an open block closes the outer block as malformed and
    opens a new one, an unmatched mesh-end is reported on its own, and an
    unterminated block is reported at the end of the stream.

    Returns
    -------
    list of ScannedBlock
        In stream order.
    """
    ids = np.asarray(list(ids), dtype=np.int64)
    marks = np.flatnonzero((ids == mapping.mesh_start_id) | (ids == mapping.mesh_end_id))
    out = []
    open_at = None
    for pos in marks.tolist():
        if ids[pos] == mapping.mesh_start_id:
            if open_at is not None:
                out.append(ScannedBlock((open_at, pos), error="nested mesh-start", position=pos))
            open_at = pos
            continue
        if open_at is None:
            out.append(ScannedBlock((pos, pos + 1), error="mesh-end without mesh-start", position=pos))
            continue
        try:
            tokens = from_extended(ids[open_at:pos + 1].tolist(), mapping)
        except FramingError as exc:
            out.append(ScannedBlock((open_at, pos + 1), error=str(exc), position=open_at + exc.position))
        else:
            out.append(ScannedBlock((open_at, pos + 1), tokens=tokens))
        open_at = None
    if open_at is not None:
        out.append(ScannedBlock((open_at, len(ids)), error="unterminated block", position=len(ids)))
    return out
