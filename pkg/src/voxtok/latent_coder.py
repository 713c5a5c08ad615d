"""Vector-quantized shape codec.

A 64^3 grid is cut into 4096 non-overlapping 4x4x4 patches (one per cell
of a 16^3 latent grid). A linear patch basis maps each 64-voxel patch to 8
channels, four consecutive latent cells are concatenated into one 32-dim
vector, and each of the resulting 1024 vectors is replaced by the index of
its nearest codebook entry. Decoding reverses every step and thresholds the
reconstructed patch values.

The linear basis stands in for a learned convolutional encoder/decoder; the
tensor shapes on the way from voxels to token ids are unchanged.
"""

from __future__ import annotations

import logging
import math
import os
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from . import quantize
from .errors import EmptyTrainingSet, FormatError, IdOutOfRange, UntrainedModel
from .voxelizer import RESOLUTION, VoxelGrid

log = logging.getLogger(__name__)

PATCH = 4
LATENT_RES = RESOLUTION // PATCH          # 16
N_LATENT = LATENT_RES ** 3                # 4096
PATCH_DIM = PATCH ** 3                    # 64
N_CHANNELS = 8
GROUP = 4
N_TOKENS = N_LATENT // GROUP              # 1024
TOKEN_DIM = N_CHANNELS * GROUP            # 32
CODEBOOK_SIZE = 8192
DEFAULT_THRESHOLD = 0.5

# grouping rule recorded in model files: 4 consecutive latent cells along x
GROUPING_X_RUN = 0

MODEL_MAGIC = b"VOXTOKMD"
MODEL_VERSION = 1
_MODEL_HEADER = struct.Struct("<8sBBxxdI")

TOKENS_MAGIC = b"VOXTOKSQ"
TOKENS_VERSION = 1
_TOKENS_HEADER = struct.Struct("<8sBI")


# --------------------------------------------------------------------------
# types

@dataclass(frozen=True, eq=False)
class TokenSequence:
    """Exactly 1024 shape-token ids in ``[0, vocab_size)``.

    ``vocab_size`` is 8192 except for codebook-size ablations.
    """

    ids: np.ndarray
    vocab_size: int = CODEBOOK_SIZE

    def __post_init__(self):
        raw = np.asarray(self.ids)
        if raw.shape != (N_TOKENS,):
            raise ValueError(f"token sequence must have {N_TOKENS} ids, got shape {raw.shape}")
        if raw.min() < 0 or raw.max() >= self.vocab_size:
            bad = int(np.flatnonzero((raw < 0) | (raw >= self.vocab_size))[0])
            raise IdOutOfRange(f"token {bad} has id {int(raw[bad])}, outside [0, {self.vocab_size})")
        ids = raw.astype(np.int64)
        ids.setflags(write=False)
        object.__setattr__(self, "ids", ids)

    def __len__(self):
        return N_TOKENS

    def __eq__(self, other):
        if not isinstance(other, TokenSequence):
            return NotImplemented
        return np.array_equal(self.ids, other.ids)

    def __hash__(self):
        return hash(self.ids.tobytes())

    def tolist(self):
        return self.ids.tolist()


@dataclass(frozen=True, eq=False)
class PatchBasis:
    """Mean patch plus 8 orthonormal 64-dim component rows."""

    mean: np.ndarray
    components: np.ndarray

    def __post_init__(self):
        mean = np.array(self.mean, dtype=np.float64).reshape(PATCH_DIM)
        comp = np.array(self.components, dtype=np.float64).reshape(N_CHANNELS, PATCH_DIM)
        mean.setflags(write=False)
        comp.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "components", comp)


@dataclass(frozen=True, eq=False)
class Codebook:
    """Codebook entries (k x 32) with per-entry usage over the training set.

    ``history`` carries the training objective trace and is not serialized.
    """

    entries: np.ndarray
    usage_counts: np.ndarray = None
    history: tuple = field(default=(), compare=False)

    def __post_init__(self):
        e = np.array(self.entries, dtype=np.float64)
        if e.ndim != 2 or e.shape[1] != TOKEN_DIM or len(e) == 0:
            raise ValueError(f"codebook entries must be (k, {TOKEN_DIM}), got {e.shape}")
        if not np.isfinite(e).all():
            raise ValueError("codebook has non-finite entries")
        u = np.zeros(len(e), np.int64) if self.usage_counts is None else np.array(self.usage_counts, np.int64)
        if u.shape != (len(e),) or (u < 0).any():
            raise ValueError("usage_counts must be k non-negative integers")
        e.setflags(write=False)
        u.setflags(write=False)
        object.__setattr__(self, "entries", e)
        object.__setattr__(self, "usage_counts", u)
        object.__setattr__(self, "history", tuple(self.history))

    @property
    def size(self):
        return len(self.entries)


@dataclass(frozen=True, eq=False)
class CoderModel:
    basis: PatchBasis
    codebook: Codebook = None
    threshold: float = DEFAULT_THRESHOLD
    version: int = MODEL_VERSION

    def __post_init__(self):
        if not 0 < self.threshold < 1:
            raise ValueError("threshold must be in (0, 1)")

    def _require_codebook(self):
        if self.codebook is None:
            raise UntrainedModel("model has no codebook; run fit_codebook_stage1 first")
        return self.codebook

    def to_bytes(self):
        cb = self._require_codebook()
        head = _MODEL_HEADER.pack(MODEL_MAGIC, self.version, GROUPING_X_RUN, self.threshold, cb.size)
        body = b"".join(a.astype("<f8").tobytes() for a in (self.basis.mean, self.basis.components, cb.entries))
        return head + body + cb.usage_counts.astype("<u8").tobytes()

    @classmethod
    def from_bytes(cls, data):
        if len(data) < _MODEL_HEADER.size:
            raise FormatError("model file truncated")
        magic, version, grouping, threshold, k = _MODEL_HEADER.unpack_from(data)
        if magic != MODEL_MAGIC:
            raise FormatError(f"bad model magic {magic!r}")
        if version != MODEL_VERSION:
            raise FormatError(f"unsupported model version {version}")
        if grouping != GROUPING_X_RUN:
            raise FormatError(f"unknown grouping rule {grouping}")
        n_f = PATCH_DIM + N_CHANNELS * PATCH_DIM + k * TOKEN_DIM
        if len(data) != _MODEL_HEADER.size + 8 * n_f + 8 * k:
            raise FormatError("model file has wrong size for its entry count")
        f = np.frombuffer(data, "<f8", count=n_f, offset=_MODEL_HEADER.size)
        usage = np.frombuffer(data, "<u8", count=k, offset=_MODEL_HEADER.size + 8 * n_f)
        mean, comp = f[:PATCH_DIM], f[PATCH_DIM:PATCH_DIM * (1 + N_CHANNELS)]
        entries = f[PATCH_DIM * (1 + N_CHANNELS):].reshape(k, TOKEN_DIM)
        return cls(PatchBasis(mean, comp), Codebook(entries, usage), threshold, version)


def save_model(model, path):
    _atomic_write(path, model.to_bytes())


def load_model(path):
    with open(path, "rb") as fh:
        return CoderModel.from_bytes(fh.read())


def tokens_to_bytes(tokens):
    return _TOKENS_HEADER.pack(TOKENS_MAGIC, TOKENS_VERSION, N_TOKENS) + tokens.ids.astype("<u2").tobytes()


def tokens_from_bytes(data, vocab_size=CODEBOOK_SIZE):
    if len(data) < _TOKENS_HEADER.size:
        raise FormatError("token file truncated")
    magic, version, count = _TOKENS_HEADER.unpack_from(data)
    if magic != TOKENS_MAGIC:
        raise FormatError(f"bad token magic {magic!r}")
    if version != TOKENS_VERSION:
        raise FormatError(f"unsupported token file version {version}")
    if count != N_TOKENS or len(data) != _TOKENS_HEADER.size + 2 * count:
        raise FormatError(f"token file must hold exactly {N_TOKENS} ids")
    return TokenSequence(np.frombuffer(data, "<u2", offset=_TOKENS_HEADER.size), vocab_size)


def save_tokens(tokens, path):
    _atomic_write(path, tokens_to_bytes(tokens))


def load_tokens(path, vocab_size=CODEBOOK_SIZE):
    with open(path, "rb") as fh:
        return tokens_from_bytes(fh.read(), vocab_size)


def _atomic_write(path, data):
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


# --------------------------------------------------------------------------
# patches and latents

def extract_patches(grid):
    """4096 binary patch vectors of length 64, shape (4096, 64), uint8.

    Patch rows follow the latent-cell x-fastest order; inside a patch the
    voxels are flattened x-fastest as well.
    """
    o = grid.occupancy.reshape(LATENT_RES, PATCH, LATENT_RES, PATCH, LATENT_RES, PATCH)
    # axes are (i, a, j, b, k, c) with x = 4i + a; put the slow axes first
    return np.ascontiguousarray(o.transpose(4, 2, 0, 5, 3, 1)).reshape(N_LATENT, PATCH_DIM).view(np.uint8)


def scatter_patches(patches):
    """Inverse of :func:`extract_patches` for boolean patch values."""
    p = np.asarray(patches, dtype=bool).reshape(LATENT_RES, LATENT_RES, LATENT_RES, PATCH, PATCH, PATCH)
    return VoxelGrid(p.transpose(2, 5, 1, 4, 0, 3).reshape((RESOLUTION,) * 3))


def group_channels(latent):
    """(4096, 8) latent -> (1024, 32): rows 4g..4g+3 concatenated."""
    return np.asarray(latent).reshape(N_TOKENS, TOKEN_DIM)


def ungroup_channels(grouped):
    return np.asarray(grouped).reshape(N_LATENT, N_CHANNELS)


def encode_latent(grid, basis):
    """Project every patch onto the basis: shape (4096, 8)."""
    return (extract_patches(grid) - basis.mean) @ basis.components.T


def decode_latent(latent, basis):
    """Real-valued patch reconstructions, shape (4096, 64)."""
    return basis.mean + np.asarray(latent) @ basis.components


def _fix_signs(components):
    """Flip rows so each row's largest-magnitude coordinate is positive."""
    idx = np.argmax(np.abs(components), axis=1)
    signs = np.sign(components[np.arange(len(components)), idx])
    signs[signs == 0] = 1.0
    return components * signs[:, None], signs


def fit_basis_from_patches(patches, weights=None):
    """Top-8 principal directions of a patch population.

    With fewer than 8 directions of variance the trailing rows are an
    orthonormal completion from the eigensolver.
    """
    p = np.asarray(patches, dtype=np.float64).reshape(-1, PATCH_DIM)
    if len(p) == 0:
        raise EmptyTrainingSet("no patches")
    w = np.ones(len(p)) if weights is None else np.asarray(weights, dtype=np.float64)
    total = w.sum()
    mean = (w @ p) / total
    centered = p - mean
    cov = (centered * w[:, None]).T @ centered / total
    evals, evecs = np.linalg.eigh(cov)
    comp = evecs[:, ::-1][:, :N_CHANNELS].T
    comp, _ = _fix_signs(comp)
    return PatchBasis(mean, comp)


def _grid_groups(grids):
    """Distinct 256-voxel groups (4 consecutive patches) and their counts."""
    grids = list(grids)
    if not grids:
        raise EmptyTrainingSet("no training grids")
    packed = np.concatenate([
        np.packbits(extract_patches(g).reshape(N_TOKENS, GROUP * PATCH_DIM), axis=1) for g in grids
    ])
    uniq, counts = np.unique(packed, axis=0, return_counts=True)
    groups = np.unpackbits(uniq, axis=1).reshape(-1, GROUP, PATCH_DIM)
    return groups, counts


def fit_basis(grids):
    """PCA patch basis over every patch of every training grid."""
    groups, counts = _grid_groups(grids)
    return fit_basis_from_patches(groups.reshape(-1, PATCH_DIM), np.repeat(counts, GROUP))


def training_vectors(grids, basis):
    """Distinct grouped latent vectors of the training grids with counts."""
    groups, counts = _grid_groups(grids)
    lat = (groups.reshape(-1, PATCH_DIM) - basis.mean) @ basis.components.T
    return lat.reshape(-1, TOKEN_DIM), counts


# --------------------------------------------------------------------------
# training

def fit_codebook_stage1(vectors, k=CODEBOOK_SIZE, seed=0, weights=None, init=None,
                        max_epochs=quantize.MAX_EPOCHS, tol=quantize.SHIFT_TOL, jitter=quantize.JITTER):
    """Codebook-only training with the basis held fixed.

    k-means++ seeding followed by Lloyd iterations on the grouped latent
    vectors; dead entries are moved onto the worst-quantized vector.

    Parameters
    ----------
    vectors : ndarray, shape (n, 32)
    k : int
    seed : int
    weights : ndarray, optional
        Multiplicity of each row of ``vectors``.
    init : Codebook, optional
        A smaller trained codebook whose entries become the first entries
        of this one (nested initialization).

    Returns
    -------
    Codebook
        ``history`` holds the quantization MSE (per vector component) after
        each assignment step.
    """
    vectors = np.asarray(vectors, dtype=np.float64)
    if vectors.size == 0:
        raise EmptyTrainingSet("no training vectors")
    init_entries = None if init is None else init.entries
    centers, labels, err, history, x, w = quantize.fit_kmeans(
        vectors.reshape(-1, TOKEN_DIM), k, seed=seed, weights=weights, init=init_entries,
        max_epochs=max_epochs, tol=tol, jitter=jitter)
    denom = w.sum() * TOKEN_DIM
    usage = np.bincount(labels, weights=w, minlength=k).round().astype(np.int64)
    mse = [h / denom for h in history]
    log.info("stage 1 (k=%d): %d epochs, quantization mse %.6g -> %.6g", k, len(mse) - 1, mse[0], mse[-1])
    return Codebook(centers, usage, tuple(mse))


def quantization_mse(vectors, codebook, weights=None):
    """Mean squared quantization error per vector component."""
    x = np.asarray(vectors, dtype=np.float64).reshape(-1, TOKEN_DIM)
    w = np.ones(len(x)) if weights is None else np.asarray(weights, dtype=np.float64)
    _, d = quantize.nearest(x, codebook.entries)
    return quantize.objective(d, w) / (w.sum() * TOKEN_DIM)


@dataclass
class Stage2Epoch:
    """Voxel-space MSE (pre-threshold) around each refinement sub-step."""

    start: float
    after_assign: float
    after_update: float
    after_basis: float


def _voxel_err(groups, mean, comp, codes):
    """Per-group squared reconstruction error summed over 256 voxels."""
    recon = mean + codes.reshape(-1, GROUP, N_CHANNELS) @ comp
    d = (groups - recon).reshape(len(groups), -1)
    return np.einsum("ij,ij->i", d, d)


def fit_joint_stage2(grids, model, epochs=5, refit_basis=True):
    """Alternating refinement of codebook and basis.

    Each epoch: (a) re-assign every grouped vector to its nearest entry,
    (b) move entries to the mean of their members, (c) least-squares re-fit
    of mean and components given the current codes, re-orthonormalized with
    the inverse transform folded into the codebook. Every sub-step is only
    kept where it does not increase the voxel-space error, so the per-epoch
    trace is non-increasing.

    Returns
    -------
    model : CoderModel
    history : list of Stage2Epoch
    """
    cb = model._require_codebook()
    if epochs <= 0:
        return model, []
    groups, counts = _grid_groups(grids)
    groups = groups.astype(np.float64)
    w = counts.astype(np.float64)
    denom = w.sum() * GROUP * PATCH_DIM
    k = cb.size
    mean = model.basis.mean.copy()
    comp = model.basis.components.copy()
    entries = cb.entries.copy()

    def project(mean, comp):
        return ((groups - mean) @ comp.T).reshape(-1, TOKEN_DIM)

    labels, _ = quantize.nearest(project(mean, comp), entries)
    err = _voxel_err(groups, mean, comp, entries[labels])
    history = []
    for epoch in range(epochs):
        start = quantize.objective(err, w) / denom

        # (a) assignment
        new_labels, _ = quantize.nearest(project(mean, comp), entries)
        new_err = _voxel_err(groups, mean, comp, entries[new_labels])
        take = new_err <= err
        labels = np.where(take, new_labels, labels)
        err = np.where(take, new_err, err)
        after_assign = quantize.objective(err, w) / denom

        # (b) centroid update, scored in voxel space per entry
        mass = np.bincount(labels, weights=w, minlength=k)
        sums = np.zeros_like(entries)
        np.add.at(sums, labels, w[:, None] * project(mean, comp))
        used = mass > 0
        cand = entries.copy()
        cand[used] = sums[used] / mass[used, None]
        cand_err = _voxel_err(groups, mean, comp, cand[labels])
        old_sse = np.bincount(labels, weights=w * err, minlength=k)
        new_sse = np.bincount(labels, weights=w * cand_err, minlength=k)
        accept = used & (new_sse < old_sse * (1 - quantize._GUARD_RTOL))
        entries[accept] = cand[accept]
        err = np.where(accept[labels], cand_err, err)
        after_update = quantize.objective(err, w) / denom

        # (c) basis re-fit
        if refit_basis:
            mean, comp, entries, err = _refit_basis(groups, w, labels, mean, comp, entries, err)
        after_basis = quantize.objective(err, w) / denom

        history.append(Stage2Epoch(start, after_assign, after_update, after_basis))
        log.info("stage 2 epoch %d: voxel mse %.6g -> %.6g (assign) -> %.6g (update) -> %.6g (basis)",
                 epoch, start, after_assign, after_update, after_basis)

    usage = np.bincount(labels, weights=w, minlength=k).round().astype(np.int64)
    new_model = replace(model, basis=PatchBasis(mean, comp),
                        codebook=Codebook(entries, usage, cb.history))
    return new_model, history


def _refit_basis(groups, w, labels, mean, comp, entries, err):
    codes = entries[labels].reshape(-1, N_CHANNELS)          # (n*4, 8)
    targets = groups.reshape(-1, PATCH_DIM)
    pw = np.repeat(w, GROUP)
    design = np.hstack([np.ones((len(codes), 1)), codes])
    gram = (design * pw[:, None]).T @ design
    rhs = (design * pw[:, None]).T @ targets
    sol = np.linalg.lstsq(gram, rhs, rcond=None)[0]
    new_mean, mixed = sol[0], sol[1:]                          # mixed: (8, 64)
    # mixed = r.T @ q.T with orthonormal q; codes pick up r.T
    q, r = np.linalg.qr(mixed.T)
    new_comp, signs = _fix_signs(q.T)
    transform = r.T * signs[None, :]
    new_entries = (entries.reshape(-1, N_CHANNELS) @ transform).reshape(entries.shape)
    new_err = _voxel_err(groups, new_mean, new_comp, new_entries[labels])
    if not quantize.objective(new_err, w) < quantize.objective(err, w):
        return mean, comp, entries, err
    return new_mean, new_comp, new_entries, new_err


def train_model(grids, k=CODEBOOK_SIZE, seed=0, epochs=5, threshold=DEFAULT_THRESHOLD, basis=None, init=None):
    """Basis fit, stage 1 and stage 2 in one call.

    Returns
    -------
    model : CoderModel
    stage2_history : list of Stage2Epoch
    """
    grids = list(grids)
    basis = basis or fit_basis(grids)
    x, counts = training_vectors(grids, basis)
    cb = fit_codebook_stage1(x, k, seed=seed, weights=counts, init=init)
    model = CoderModel(basis, cb, threshold)
    return fit_joint_stage2(grids, model, epochs)


# --------------------------------------------------------------------------
# inference

def encode(grid, model):
    """Voxel grid -> 1024 codebook ids (nearest entry, lowest index on ties)."""
    cb = model._require_codebook()
    vectors = group_channels(encode_latent(grid, model.basis))
    labels, _ = quantize.nearest(vectors, cb.entries)
    return TokenSequence(labels, max(cb.size, CODEBOOK_SIZE))


def decode(tokens, model, threshold=None):
    """1024 ids -> voxel grid via codebook lookup and the inverse basis map."""
    cb = model._require_codebook()
    ids = tokens.ids if isinstance(tokens, TokenSequence) else np.asarray(tokens)
    if ids.shape != (N_TOKENS,):
        raise ValueError(f"expected {N_TOKENS} ids, got shape {ids.shape}")
    if ids.min() < 0 or ids.max() >= cb.size:
        bad = int(np.flatnonzero((ids < 0) | (ids >= cb.size))[0])
        raise IdOutOfRange(f"token {bad} has id {int(ids[bad])}; codebook has {cb.size} entries")
    values = decode_values(ids, model)
    return scatter_patches(values > (model.threshold if threshold is None else threshold))


def decode_values(ids, model):
    """Pre-threshold patch reconstructions, shape (4096, 64)."""
    cb = model._require_codebook()
    return decode_latent(ungroup_channels(cb.entries[np.asarray(ids)]), model.basis)


def roundtrip(grid, model):
    return decode(encode(grid, model), model)


def reconstruction_mse(grids, model):
    """Voxel-space MSE of the quantized, pre-threshold reconstruction."""
    total, n = [], 0
    for g in grids:
        values = decode_values(encode(g, model).ids, model)
        total.append(float(((extract_patches(g) - values) ** 2).sum()))
        n += values.size
    return math.fsum(total) / n
