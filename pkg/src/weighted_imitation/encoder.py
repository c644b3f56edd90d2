"""Task-themed feature encoder.

Stands in for a learned perception stack behind a small interface: each task
theme owns a seeded linear mix applied to the raw observation plus optional
additive Gaussian noise. Different themes therefore shift the distribution
the policy sees while the underlying task stays the same.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_THEME_SALT = 0x7E31
_MAX_CONDITION = 100.0


@dataclass
class Theme:
    """Seeded linear mix (d x d) and noise level defining a task's look."""

    seed: int
    mix: np.ndarray
    noise_scale: float


def make_theme(seed: int, dim: int, mix_strength: float = 0.5,
               jitter: float = 0.05, noise_scale: float = 0.0) -> Theme:
    """Deterministic theme for a seed.

    The mix blends the identity with a seeded random rotation,
    (1 - mix_strength) * I + mix_strength * O, plus dense jitter: strength 0
    leaves features untouched, strength 1 scrambles them completely, and
    intermediate values give tasks that share structure but disagree on how
    features are laid out. Redraws (deterministically) if the condition
    number ever reaches 100.
    """
    if dim < 2:
        raise ValueError(f"encoder dimension must be >= 2, got {dim}")
    if not 0.0 <= mix_strength <= 1.0:
        raise ValueError(f"mix_strength must be in [0, 1], got {mix_strength}")
    rng = np.random.default_rng(np.random.SeedSequence((_THEME_SALT, seed)))
    for _ in range(32):
        q, r = np.linalg.qr(rng.standard_normal((dim, dim)))
        q = q * np.sign(np.diag(r))  # unique orthogonal factor
        mix = (1.0 - mix_strength) * np.eye(dim) + mix_strength * q
        mix += jitter * rng.standard_normal((dim, dim)) / np.sqrt(dim)
        if np.linalg.cond(mix) < _MAX_CONDITION:
            return Theme(seed=seed, mix=mix, noise_scale=float(noise_scale))
    raise RuntimeError(f"could not draw a well-conditioned mix for seed {seed}")


def encode(theme: Theme, raw: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """State vector mix @ raw + noise_scale * eta, eta standard normal.

    Deterministic given the theme and the generator's stream position. The
    noise draw is consumed even at noise_scale 0 so stream positions do not
    depend on the noise setting.
    """
    raw = np.asarray(raw, dtype=np.float64)
    d = theme.mix.shape[0]
    if raw.shape != (d,):
        raise ValueError(f"raw observation length mismatch: expected {d}, got {raw.shape}")
    noise = rng.standard_normal(d)
    return theme.mix @ raw + theme.noise_scale * noise
