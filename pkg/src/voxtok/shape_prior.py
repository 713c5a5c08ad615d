"""Count-based n-gram prior over shape-token sequences and the sampling
filters (temperature, top-k, top-p) used to draw from it.

The model keeps one table: every distinct order-n gram (context padded with
begin-of-shape markers) with its count, sorted by the context read
backwards. Lower-order tables are marginals of it, and the longest seen
suffix of a query context is found by successive binary searches.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np

from .errors import EmptyTrainingSet, FormatError, UntrainedModel
from .latent_coder import CODEBOOK_SIZE, N_TOKENS, TokenSequence

VOCAB = CODEBOOK_SIZE
BOS = CODEBOOK_SIZE  # context-only marker, never emitted
DEFAULT_ORDER = 3
DEFAULT_DISCOUNT = 0.4

NGRAM_MAGIC = b"VOXNGRAM"
NGRAM_VERSION = 1
_NGRAM_HEADER = struct.Struct("<8sBxxxId")


@dataclass(frozen=True, eq=False)
class NgramModel:
    """Order-n count model.

    Attributes
    ----------
    order : int
    discount : float
        Stupid-backoff factor applied per backed-off order.
    rev_grams : ndarray, shape (m, order)
        Distinct n-grams with the context reversed: column j < order - 1 is
        the token j + 1 places before the predicted one, the last column is
        the predicted token. Rows are in lexicographic order.
    counts : ndarray, shape (m,)
    """

    order: int
    discount: float
    rev_grams: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        if self.order < 1:
            raise ValueError("order must be >= 1")
        if not 0 < self.discount < 1:
            raise ValueError("discount must be in (0, 1)")
        if len(self.counts) and self.counts.min() <= 0:
            raise ValueError("counts must be positive")

    @property
    def n_tokens(self):
        return int(self.counts.sum())

    def unigram_counts(self):
        return np.bincount(self.rev_grams[:, -1], weights=self.counts, minlength=VOCAB).astype(np.int64)

    def table(self, k):
        """Order-k counts as a dict ``context tuple -> {token: count}``.

        Contexts are written in forward order (oldest token first).
        """
        if not 1 <= k <= self.order:
            raise ValueError(f"order must be in [1, {self.order}]")
        ctx = self.rev_grams[:, :k - 1][:, ::-1]
        keys = np.hstack([ctx, self.rev_grams[:, -1:]])
        uniq, inv = np.unique(keys, axis=0, return_inverse=True)
        cnt = np.bincount(inv.ravel(), weights=self.counts).astype(np.int64)
        out = {}
        for row, c in zip(uniq.tolist(), cnt.tolist()):
            out.setdefault(tuple(row[:-1]), {})[row[-1]] = c
        return out

    def _context_rows(self, context):
        """Row range matching the longest seen suffix of ``context``."""
        lo, hi = 0, len(self.rev_grams)
        depth = 0
        rev = np.asarray(list(context)[::-1][:self.order - 1], dtype=np.int64)
        for j, tok in enumerate(rev.tolist()):
            if hi - lo == 1:
                # a single candidate row: compare the rest of the context at once
                diff = np.flatnonzero(self.rev_grams[lo, j:len(rev)] != rev[j:])
                depth = len(rev) if len(diff) == 0 else j + int(diff[0])
                break
            col = self.rev_grams[lo:hi, j]
            a = lo + int(np.searchsorted(col, tok, side="left"))
            b = lo + int(np.searchsorted(col, tok, side="right"))
            if a == b:
                break
            lo, hi, depth = a, b, j + 1
        return lo, hi, depth

    def scores(self, context):
        """Unnormalized backoff scores and the context length used.

        The longest suffix of ``context`` seen in training supplies relative
        continuation frequencies, scaled by ``discount`` once per order
        skipped. An empty context gives the unigram frequencies; a non-empty
        context with no seen suffix gets the add-one smoothed unigram.
        """
        usable = min(len(context), self.order - 1)
        lo, hi, depth = self._context_rows(context)
        if depth == 0 and usable > 0:
            s = (self.unigram_counts() + 1.0) / (self.n_tokens + VOCAB)
        else:
            c = np.bincount(self.rev_grams[lo:hi, -1], weights=self.counts[lo:hi], minlength=VOCAB)
            s = c / c.sum()
        return s * self.discount ** (usable - depth), depth


def _windows(ids, order):
    padded = np.concatenate([np.full(order - 1, BOS, dtype=np.int64), np.asarray(ids, dtype=np.int64)])
    w = np.lib.stride_tricks.sliding_window_view(padded, order)
    # reverse the context part: nearest token first, prediction last
    return np.hstack([w[:, :-1][:, ::-1], w[:, -1:]])


def fit_ngram(sequences, n=DEFAULT_ORDER, discount=DEFAULT_DISCOUNT):
    """Count every order-n gram of the begin-padded training sequences."""
    seqs = [s.ids if isinstance(s, TokenSequence) else np.asarray(s) for s in sequences]
    if not seqs:
        raise EmptyTrainingSet("no training sequences")
    rows = np.vstack([_windows(s, n) for s in seqs])
    uniq, counts = np.unique(rows, axis=0, return_counts=True)
    return NgramModel(n, discount, uniq, counts.astype(np.int64))


def next_distribution(model, context):
    """Probability vector over the 8192 shape ids given preceding tokens.

    ``context`` may start with :data:`BOS` markers.
    """
    if model is None or model.n_tokens == 0:
        raise UntrainedModel("n-gram model has no counts")
    s, _ = model.scores(context)
    return s / s.sum()


# --------------------------------------------------------------------------
# filters

def _renorm(p):
    return p / p.sum()


def apply_temperature(p, temperature):
    """Sharpen (T < 1) or flatten (T > 1); T = 0 gives argmax one-hot."""
    p = np.asarray(p, dtype=np.float64)
    if temperature < 0:
        raise ValueError("temperature must be >= 0")
    if temperature == 0:
        out = np.zeros_like(p)
        out[int(np.argmax(p))] = 1.0
        return out
    if temperature == 1:
        return p.copy()
    # shift before dividing so the maximum stays at 0 for tiny temperatures
    with np.errstate(divide="ignore", over="ignore"):
        logp = np.log(p)
        logits = (logp - logp.max()) / temperature
    return _renorm(np.exp(logits))


def apply_top_k(p, k):
    """Keep the k most probable ids (lowest id first on ties)."""
    p = np.asarray(p, dtype=np.float64)
    if k < 1:
        raise ValueError("k must be >= 1")
    if k >= len(p):
        return p.copy()
    keep = np.argsort(-p, kind="stable")[:k]
    out = np.zeros_like(p)
    out[keep] = p[keep]
    return _renorm(out)


def nucleus(p, top_p):
    """Ids of the smallest highest-probability prefix with mass >= top_p,
    in descending-probability order, and that prefix's mass."""
    support = np.flatnonzero(p > 0)
    order = support[np.argsort(-p[support], kind="stable")]
    cum = np.cumsum(p[order])
    n_keep = min(int(np.searchsorted(cum, top_p, side="left")) + 1, len(order))
    return order[:n_keep], float(cum[n_keep - 1])


def apply_top_p(p, top_p):
    p = np.asarray(p, dtype=np.float64)
    if not 0 < top_p <= 1:
        raise ValueError("top_p must be in (0, 1]")
    if top_p == 1:
        return p.copy()
    keep, _ = nucleus(p, top_p)
    out = np.zeros_like(p)
    out[keep] = p[keep]
    return _renorm(out)


@dataclass(frozen=True)
class SamplerConfig:
    top_k: int = VOCAB
    top_p: float = 0.7
    temperature: float = 0.7
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.top_k <= VOCAB:
            raise ValueError(f"top_k must be in [1, {VOCAB}]")
        if not 0 < self.top_p <= 1:
            raise ValueError("top_p must be in (0, 1]")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")


def filtered_distribution(model, context, config):
    """Next-token distribution after temperature, then top-k, then top-p."""
    p = next_distribution(model, context)
    p = apply_temperature(p, config.temperature)
    p = apply_top_k(p, config.top_k)
    return apply_top_p(p, config.top_p)


def sample_sequence(model, config=SamplerConfig(), on_step=None):
    """Draw 1024 shape tokens, one categorical draw per step.

    ``on_step(step, stages)``, if given, receives the distribution after
    each stage as a dict with keys ``model``, ``temperature``, ``top_k``
    and ``top_p``.
    """
    if model is None or model.n_tokens == 0:
        raise UntrainedModel("n-gram model has no counts")
    rng = np.random.default_rng(config.seed)
    context = [BOS] * (model.order - 1)
    out = np.empty(N_TOKENS, dtype=np.int64)
    for step in range(N_TOKENS):
        p0 = next_distribution(model, context)
        p1 = apply_temperature(p0, config.temperature)
        p2 = apply_top_k(p1, config.top_k)
        p3 = apply_top_p(p2, config.top_p)
        if on_step is not None:
            on_step(step, {"model": p0, "temperature": p1, "top_k": p2, "top_p": p3})
        cum = np.cumsum(p3)
        tok = min(int(np.searchsorted(cum, rng.random() * cum[-1], side="right")), VOCAB - 1)
        while p3[tok] == 0:  # guard against landing on a zero-width bin at the edge
            tok -= 1
        out[step] = tok
        if model.order > 1:
            context = context[1:] + [tok]
    return TokenSequence(out)


def greedy_sequence(model):
    """Argmax decoding, for reference."""
    context = [BOS] * (model.order - 1)
    out = np.empty(N_TOKENS, dtype=np.int64)
    for step in range(N_TOKENS):
        tok = int(np.argmax(next_distribution(model, context)))
        out[step] = tok
        if model.order > 1:
            context = context[1:] + [tok]
    return TokenSequence(out)


# --------------------------------------------------------------------------
# file format

def ngram_to_bytes(model):
    """Header, then for k = 1..order: entry count and sorted
    (context ids, token, count) records, context in forward order."""
    parts = [_NGRAM_HEADER.pack(NGRAM_MAGIC, NGRAM_VERSION, model.order, model.discount)]
    for k in range(1, model.order + 1):
        ctx = model.rev_grams[:, :k - 1][:, ::-1]
        keys = np.hstack([ctx, model.rev_grams[:, -1:]])
        uniq, inv = np.unique(keys, axis=0, return_inverse=True)
        cnt = np.bincount(inv.ravel(), weights=model.counts).astype(np.int64)
        rec = np.zeros(len(uniq), dtype=[("ids", "<u2", (k,)), ("count", "<u4")])
        rec["ids"] = uniq
        rec["count"] = cnt
        parts.append(struct.pack("<I", len(uniq)))
        parts.append(rec.tobytes())
    return b"".join(parts)


def ngram_from_bytes(data):
    if len(data) < _NGRAM_HEADER.size:
        raise FormatError("n-gram file truncated")
    magic, version, order, discount = _NGRAM_HEADER.unpack_from(data)
    if magic != NGRAM_MAGIC:
        raise FormatError(f"bad n-gram magic {magic!r}")
    if version != NGRAM_VERSION:
        raise FormatError(f"unsupported n-gram version {version}")
    off = _NGRAM_HEADER.size
    top = None
    for k in range(1, order + 1):
        (m,) = struct.unpack_from("<I", data, off)
        off += 4
        dt = np.dtype([("ids", "<u2", (k,)), ("count", "<u4")])
        if off + m * dt.itemsize > len(data):
            raise FormatError(f"n-gram file truncated in order {k}")
        top = np.frombuffer(data, dt, count=m, offset=off)
        off += m * dt.itemsize
    if off != len(data):
        raise FormatError("trailing bytes in n-gram file")
    ids = top["ids"].astype(np.int64).reshape(-1, order)
    rev = np.hstack([ids[:, :-1][:, ::-1], ids[:, -1:]])
    perm = np.lexsort(rev.T[::-1])
    model = NgramModel(order, discount, rev[perm], top["count"].astype(np.int64)[perm])
    if ngram_to_bytes(model) != data:
        raise FormatError("lower-order tables are inconsistent with the top-order table")
    return model


def save_ngram(model, path):
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(ngram_to_bytes(model))
    os.replace(tmp, path)


def load_ngram(path):
    with open(path, "rb") as fh:
        return ngram_from_bytes(fh.read())
