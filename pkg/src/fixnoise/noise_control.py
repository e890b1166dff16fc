"""Cross-domain control through the noise input.

``n = alpha * anchor + (1 - alpha) * rand``: ``alpha = 1`` is the anchored
(source-preserving) subspace, ``alpha = 0`` is an ordinary random draw.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .data import write_json, write_png
from .networks import Generator, NoiseField, sample_noise

DEFAULT_ALPHAS = (1.0, 0.75, 0.5, 0.25, 0.0)


def _check_alpha(alpha):
    if not 0.0 <= float(alpha) <= 1.0:
        raise ValueError(f'alpha must be in [0, 1], got {alpha}')


def interpolate_noise(anchor: NoiseField, rand: NoiseField, alpha: float) -> NoiseField:
    """Elementwise ``alpha * anchor + (1 - alpha) * rand``.

    An unbatched anchor broadcasts against a batched ``rand``. The endpoints
    return the inputs bit-exactly.
    """
    _check_alpha(alpha)
    if len(anchor) != len(rand):
        raise ValueError(f'noise fields have {len(anchor)} and {len(rand)} grids')
    maps = []
    for k, (a, r) in enumerate(zip(anchor.maps, rand.maps)):
        if a.shape[-2:] != r.shape[-2:] or (a.ndim == r.ndim == 3 and a.shape[0] != r.shape[0]):
            raise ValueError(f'grid {k}: shapes {tuple(a.shape)} and {tuple(r.shape)} are not compatible')
        maps.append(alpha * a + (1.0 - alpha) * r)
    return NoiseField(maps)


def _noise_of(anchor):
    if anchor is None:
        raise ValueError('checkpoint has no anchor point')
    return getattr(anchor, 'noise', anchor)


def rand_noise_for(G, z, rng_seed):
    batch = None if z.ndim == 1 else z.shape[0]
    return sample_noise(G.spec, rng_seed, batch=batch)


def generate_interp(tgt: Generator, z, anchor, alpha: float, rng_seed: int, psi=1.0):
    """Image from ``tgt`` at latent ``z`` under interpolated noise.

    The random endpoint is ``sample_noise(spec, rng_seed)`` (one grid per
    sample when ``z`` is batched).
    """
    n = interpolate_noise(_noise_of(anchor), rand_noise_for(tgt, z, rng_seed), alpha)
    with torch.no_grad():
        return tgt(z, n, psi=psi)['image']


def latents(spec, count, seed):
    gen = torch.Generator().manual_seed(int(seed))
    return torch.randn(count, spec.z_dim, generator=gen)


@dataclass(frozen=True)
class SweepSpec:
    alphas: tuple = DEFAULT_ALPHAS
    samples: int = 8
    seed: int = 0

    def __post_init__(self):
        alphas = tuple(float(a) for a in self.alphas)
        object.__setattr__(self, 'alphas', alphas)
        if not alphas:
            raise ValueError('alphas must not be empty')
        for a in alphas:
            _check_alpha(a)
        if list(alphas) != sorted(alphas, reverse=True):
            raise ValueError('alphas must be sorted in descending order')
        if self.samples < 1:
            raise ValueError('samples must be >= 1')


@dataclass
class Sweep:
    images: torch.Tensor          # [rows, 1 + len(alphas), 3, R, R]; column 0 is the source at the anchor
    alphas: tuple
    z_seed: int
    rand_seeds: list = field(default_factory=list)

    @property
    def shape(self):
        return tuple(self.images.shape[:2])


def sweep(tgt: Generator, src: Generator, spec: SweepSpec, anchor, psi=1.0) -> Sweep:
    """One row per latent: source at the anchor, then the target at each alpha.

    Columns of a row share one random noise draw, so they differ only in alpha.
    """
    anchor_noise = _noise_of(anchor)
    zs = latents(tgt.spec, spec.samples, spec.seed)
    rows, rand_seeds = [], []
    with torch.no_grad():
        for r in range(spec.samples):
            z = zs[r:r + 1]
            row_seed = spec.seed * 100_003 + r
            cols = [src(z, anchor_noise, psi=psi)['image'][0]]
            cols += [generate_interp(tgt, z, anchor_noise, a, row_seed, psi=psi)[0] for a in spec.alphas]
            rows.append(torch.stack(cols))
            rand_seeds.append(row_seed)
    return Sweep(torch.stack(rows), spec.alphas, spec.seed, rand_seeds)


def image_grid(images: torch.Tensor, pad=1):
    """``[rows, cols, 3, H, W]`` -> one ``[3, H', W']`` image with ``pad`` pixels of white between cells."""
    rows, cols, c, h, w = images.shape
    grid = torch.ones(c, rows * (h + pad) - pad, cols * (w + pad) - pad)
    for i in range(rows):
        for j in range(cols):
            grid[:, i * (h + pad):i * (h + pad) + h, j * (w + pad):j * (w + pad) + w] = images[i, j]
    return grid


def write_sweep(path, result: Sweep, extra=None):
    path = Path(path)
    write_png(path, image_grid(result.images))
    meta = {'alphas': list(result.alphas), 'z_seed': result.z_seed, 'rand_seeds': result.rand_seeds,
            'columns': ['source@anchor'] + [f'alpha={a:g}' for a in result.alphas], 'rows': result.shape[0]}
    meta.update(extra or {})
    write_json(path.with_suffix('.json'), meta)


def noise_std_map(G, z, k=100, rng_seed=0, batch=100):
    """Per-pixel population std over ``k`` noise draws, averaged over color channels."""
    if k < 2:
        raise ValueError('k must be >= 2')
    if z.ndim == 1:
        z = z[None]
    # Moments are taken around the first image so identical images give exactly 0.
    ref = total = total_sq = None
    with torch.no_grad():
        for start in range(0, k, batch):
            n = min(batch, k - start)
            noise = sample_noise(G.spec, rng_seed * 1_000_003 + start, batch=n)
            img = G(z.expand(n, -1), noise.to(z.dtype))['image'].double()
            if ref is None:
                ref = img[0].clone()
            d = img - ref
            s, sq = d.sum(0), d.square().sum(0)
            total = s if total is None else total + s
            total_sq = sq if total_sq is None else total_sq + sq
    mean = total / k
    var = (total_sq / k - mean.square()).clamp_min(0)
    return var.sqrt().mean(0)


def std_map_energy(std_map):
    """Mean squared value of a std map."""
    return float(torch.as_tensor(std_map).double().square().mean())


def write_std_map(path, std_map):
    import matplotlib
    matplotlib.use('Agg')
    import matplotlib.pyplot as plt

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = np.asarray(std_map, dtype=np.float64)
    np.save(path.with_suffix('.npy'), arr)
    plt.imsave(path, arr, cmap='viridis', vmin=0.0)
