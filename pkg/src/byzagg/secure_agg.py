"""Simulated in-bucket secure aggregation over Z_Q.

Clients clip and quantize their update, add pairwise antisymmetric masks and
upload the result. The server only ever sees masked uploads and their sum,
which equals the sum of the quantized plain updates because the masks cancel.
Masks come from a trusted pairwise stream; no key agreement or dropout handling.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .core import RngState, as_param_vector, as_sample_matrix

DEFAULT_MODULUS = (1 << 61) - 1
DEFAULT_LEVELS = 1 << 16
# int64 must hold the sum of two residues
MAX_MODULUS = 1 << 62


class SecureAggError(ValueError):
    pass


@dataclass(frozen=True)
class SecureAggConfig:
    modulus: int = DEFAULT_MODULUS
    clip: float = 1.0
    levels: int = DEFAULT_LEVELS
    stochastic_rounding: bool = False

    def __post_init__(self):
        if not 2 <= self.modulus <= MAX_MODULUS:
            raise SecureAggError(f"modulus must lie in [2, 2^62], got {self.modulus}")
        if not self.clip > 0:
            raise SecureAggError("clip range must be positive")
        if self.levels < 2:
            raise SecureAggError("need at least two quantization levels")
        if self.levels >= self.modulus:
            raise SecureAggError("levels must be smaller than the modulus")

    @property
    def step(self) -> float:
        return 2.0 * self.clip / (self.levels - 1)

    def check_bucket(self, size: int) -> None:
        if self.levels * size >= self.modulus:
            raise SecureAggError(
                f"levels*size = {self.levels * size} >= modulus {self.modulus}; bucket sums would wrap"
            )


def adaptive_clip(sigma_g: float, eta_t: float, d: int) -> float:
    """Default clip range ``3 sigma eta_t sqrt(d)``."""
    return 3.0 * sigma_g * eta_t * math.sqrt(d)


@dataclass(frozen=True)
class MaskShare:
    i: int
    j: int
    mask: np.ndarray

    def __post_init__(self):
        if not self.i < self.j:
            raise ValueError("mask shares are stored with i < j")


@dataclass
class SecureAggTranscript:
    bucket_id: int
    members: tuple
    plain: np.ndarray  # test-only: quantized plain updates
    uploads: np.ndarray
    bucket_sum: np.ndarray

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["bucket", "client", "kind", "coord", "value"])
        for row, client in enumerate(self.members):
            for kind, table in (("plain", self.plain), ("upload", self.uploads)):
                for j, value in enumerate(table[row]):
                    writer.writerow([self.bucket_id, client, kind, j, int(value)])
        for j, value in enumerate(self.bucket_sum):
            writer.writerow([self.bucket_id, "", "sum", j, int(value)])
        return buf.getvalue()


def quantize(cfg: SecureAggConfig, v, rng: RngState | None = None) -> np.ndarray:
    v = as_param_vector(v)
    scaled = (np.clip(v, -cfg.clip, cfg.clip) + cfg.clip) / cfg.step
    if cfg.stochastic_rounding:
        if rng is None:
            raise SecureAggError("stochastic rounding needs an rng")
        base = np.floor(scaled)
        codes = base + (rng.uniform(v.shape[0]) < scaled - base)
    else:
        codes = np.rint(scaled)
    return np.clip(codes, 0, cfg.levels - 1).astype(np.int64)


def dequantize(cfg: SecureAggConfig, codes) -> np.ndarray:
    return np.asarray(codes, dtype=np.int64).astype(float) * cfg.step - cfg.clip


def gen_masks(members, d: int, modulus: int, rng: RngState) -> list[MaskShare]:
    """One uniform mask per unordered pair; client ``i`` adds it, client ``j`` subtracts it."""
    ids = sorted(int(i) for i in members)
    shares = []
    for a, i in enumerate(ids):
        for j in ids[a + 1 :]:
            mask = rng.derive("mask", i, j).generator().integers(0, modulus, size=d, dtype=np.int64)
            shares.append(MaskShare(i, j, mask))
    return shares


def mask_for(share: MaskShare, client: int, modulus: int) -> np.ndarray:
    """``u_{client, other}``; the partner gets the additive inverse."""
    if client == share.i:
        return share.mask
    if client == share.j:
        return (modulus - share.mask) % modulus
    raise ValueError(f"client {client} is not part of share ({share.i}, {share.j})")


def add_mod(a, b, modulus: int) -> np.ndarray:
    return (np.asarray(a, dtype=np.int64) + np.asarray(b, dtype=np.int64)) % modulus


def masked_upload(client: int, codes, shares, modulus: int) -> np.ndarray:
    out = np.asarray(codes, dtype=np.int64) % modulus
    for share in shares:
        if client in (share.i, share.j):
            out = add_mod(out, mask_for(share, client, modulus), modulus)
    return out


def field_sum(uploads, modulus: int) -> np.ndarray:
    uploads = np.atleast_2d(np.asarray(uploads, dtype=np.int64))
    total = np.zeros(uploads.shape[1], dtype=np.int64)
    for row in uploads:
        total = add_mod(total, row, modulus)
    return total


def bucket_sum_and_dequantize(cfg: SecureAggConfig, uploads, size: int) -> np.ndarray:
    """Server side: field sum of one bucket's uploads, mapped back to a real bucket mean."""
    cfg.check_bucket(size)
    return dequantize_sum(cfg, field_sum(uploads, cfg.modulus), size)


def dequantize_sum(cfg: SecureAggConfig, total, size: int) -> np.ndarray:
    cfg.check_bucket(size)
    return np.asarray(total, dtype=np.int64).astype(float) * cfg.step / size - cfg.clip


def client_uploads(cfg, members, updates, rng: RngState, bucket_id: int = 0):
    """Client side for one bucket: returns ``(plain codes, masked uploads)``."""
    updates = as_sample_matrix(updates)
    d = updates.shape[1]
    plain = np.stack([
        quantize(cfg, u, rng.derive("round", int(c)) if cfg.stochastic_rounding else None)
        for c, u in zip(members, updates)
    ])
    shares = gen_masks(members, d, cfg.modulus, rng.derive("masks", bucket_id))
    uploads = np.stack([masked_upload(int(c), g, shares, cfg.modulus) for c, g in zip(members, plain)])
    return plain, uploads


def secure_bucket_means(cfg: SecureAggConfig, updates, buckets, rng: RngState):
    """Run the protocol for every bucket; returns ``(bucket means, transcripts)``.

    The means are computed from the transcripts' ``bucket_sum`` fields alone.
    """
    x = as_sample_matrix(updates)
    transcripts = []
    for b, idx in enumerate(buckets):
        cfg.check_bucket(len(idx))
        plain, uploads = client_uploads(cfg, [int(i) for i in idx], x[idx], rng, b)
        total = field_sum(uploads, cfg.modulus)
        transcripts.append(SecureAggTranscript(b, tuple(int(i) for i in idx), plain, uploads, total))
    return server_bucket_means(cfg, transcripts), transcripts


def server_bucket_means(cfg: SecureAggConfig, transcripts) -> np.ndarray:
    return np.stack([dequantize_sum(cfg, t.bucket_sum, len(t.members)) for t in transcripts])
