"""Seeded synthetic MMV problems: Gaussian dictionaries, block-sparse
common-support signals and SNR-calibrated noise."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Tuple, Union

import numpy as np

from .model import ProblemInstance

NOISELESS = "noiseless"

# independent generator streams derived from one seed
_STREAM_PHI, _STREAM_SIGNAL, _STREAM_NOISE = 0, 1, 2
_MAX_REJECTIONS = 1000


@dataclass(frozen=True)
class GenSpec:
    m: int
    n: int
    l: int  # noqa: E741
    k: int
    num_blocks: int = 4
    snr_db: Union[float, str] = NOISELESS
    normalize_columns: bool = False
    seed: int = 0

    def __post_init__(self):
        if min(self.m, self.n, self.l, self.k, self.num_blocks) < 1:
            raise ValueError("m, n, l, k and num_blocks must all be >= 1")
        if self.k > self.n:
            raise ValueError(f"k={self.k} exceeds n={self.n}")
        if self.num_blocks > self.k:
            raise ValueError(f"num_blocks={self.num_blocks} exceeds k={self.k}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        if self.snr_db != NOISELESS:
            object.__setattr__(self, "snr_db", float(self.snr_db))

    @property
    def noiseless(self) -> bool:
        return self.snr_db == NOISELESS


def _rng(seed, stream):
    return np.random.default_rng(np.random.SeedSequence([int(seed), stream]))


def gen_sensing_matrix(spec: GenSpec) -> np.ndarray:
    """i.i.d. N(0, 1) ``m x n`` matrix, optionally with unit-norm columns."""
    phi = _rng(spec.seed, _STREAM_PHI).standard_normal((spec.m, spec.n))
    if spec.normalize_columns:
        phi /= np.linalg.norm(phi, axis=0, keepdims=True)
    return phi


def _random_composition(rng, total, parts):
    """Uniform draw among compositions of ``total`` into ``parts`` positive
    integers (stars and bars)."""
    cuts = np.sort(rng.choice(np.arange(1, total), size=parts - 1, replace=False))
    edges = np.concatenate([[0], cuts, [total]])
    return np.diff(edges).astype(int)


def _place_blocks(rng, n, lengths):
    starts_hi = n - lengths + 1
    for _ in range(_MAX_REJECTIONS):
        starts = rng.integers(0, starts_hi)
        order = np.argsort(starts, kind="stable")
        s, ln = starts[order], lengths[order]
        # each block must end at least one row before the next one starts
        if np.all(s[1:] >= s[:-1] + ln[:-1] + 1):
            return list(zip(s.tolist(), ln.tolist()))
    blocks, pos = [], 0
    for ln in lengths.tolist():
        blocks.append((pos, ln))
        pos += ln + 1
    return blocks


def gen_block_sparse_signal(spec: GenSpec) -> Tuple[np.ndarray, List[int], List[Tuple[int, int]]]:
    """Signal matrix with ``k`` nonzero rows split into ``num_blocks``
    separated runs.

    Returns
    -------
    x : ndarray, shape (n, l)
    support : list of int
        Sorted nonzero row indices, shared by every column.
    blocks : list of (start, length)
        Sorted by start; consecutive blocks are separated by at least one
        zero row.
    """
    k, nb, n = spec.k, spec.num_blocks, spec.n
    if k + nb - 1 > n:
        raise ValueError(
            f"cannot place {nb} separated blocks of total size {k} in {n} rows")
    rng = _rng(spec.seed, _STREAM_SIGNAL)
    lengths = (np.array([k]) if nb == 1 else _random_composition(rng, k, nb))
    blocks = _place_blocks(rng, n, lengths)
    support = [i for start, ln in blocks for i in range(start, start + ln)]
    x = np.zeros((n, spec.l))
    x[support] = rng.standard_normal((k, spec.l))
    return x, support, blocks


def add_noise(y_clean, snr_db, seed):
    """Add white Gaussian noise at ``snr_db`` relative to the mean power of
    ``y_clean``.

    ``sigma2 = ||y_clean||_F^2 / (M L 10^(snr_db/10))``.  Returns the noisy
    matrix and ``sigma2``; ``snr_db="noiseless"`` (or ``None``) is a no-op.
    """
    y_clean = np.asarray(y_clean, dtype=float)
    if snr_db is None or snr_db == NOISELESS:
        return y_clean.copy(), 0.0
    power = float(np.sum(y_clean ** 2))
    if power == 0.0:
        raise ValueError("cannot calibrate noise to an all-zero signal")
    sigma2 = power / (y_clean.size * 10.0 ** (float(snr_db) / 10.0))
    noise = _rng(seed, _STREAM_NOISE).standard_normal(y_clean.shape)
    return y_clean + np.sqrt(sigma2) * noise, sigma2


def gen_instance(spec: GenSpec):
    """Convenience wrapper: ``(ProblemInstance, support, blocks, sigma2)``."""
    phi = gen_sensing_matrix(spec)
    x, support, blocks = gen_block_sparse_signal(spec)
    y, sigma2 = add_noise(phi @ x, spec.snr_db, spec.seed)
    return ProblemInstance(phi=phi, y_mat=y, truth=x), support, blocks, sigma2
