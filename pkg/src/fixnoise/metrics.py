"""Evaluation metrics on a small frozen embedding network.

* ``fid``: Frechet distance between Gaussian fits of two embedding sets.
* ``kid``: unbiased MMD^2 with the cubic polynomial kernel.
* ``perceptual_distance``: LPIPS-style distance on unit-normalized feature
  maps of the embedder (a desk-scale stand-in for LPIPS).
* ``perceptual_smoothness``: ``1 / (1 + CV^2)`` of consecutive perceptual
  step sizes along a path (1 = perfectly uniform steps).

The embedder is trained once as a classifier on both toy domains and shipped
as ``assets/embedder.pt``; without the file a fixed seeded random network is
used instead. Either way its hash is recorded in every report.
"""

from __future__ import annotations

import hashlib
import io
import logging
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .noise_control import generate_interp, latents

log = logging.getLogger(__name__)

ASSET = Path(__file__).with_name('assets') / 'embedder.pt'
EMBED_DIM = 64


class FeatureEmbedder(nn.Module):
    """Four conv stages (32, 16, 8, 4 px); the embedding is the pooled last stage."""

    def __init__(self, widths=(16, 32, 64, EMBED_DIM), n_classes=4):
        super().__init__()
        chans = (3,) + tuple(widths)
        self.stages = nn.ModuleList(
            nn.Conv2d(chans[i], chans[i + 1], 3, stride=1 if i == 0 else 2, padding=1)
            for i in range(len(widths)))
        self.head = nn.Linear(widths[-1], n_classes)
        # Frozen standardization of the pooled embedding, fit once on training images.
        self.register_buffer('center', torch.zeros(widths[-1]))
        self.register_buffer('scale', torch.ones(widths[-1]))
        self.provenance = 'random'

    @property
    def dim(self):
        return self.stages[-1].out_channels

    def features(self, x):
        if x.ndim == 3:
            x = x[None]
        feats = []
        for stage in self.stages:
            x = F.leaky_relu(stage(x), 0.2)
            feats.append(x)
        return feats

    def pooled(self, x):
        return self.features(x)[-1].mean(dim=(2, 3))

    def forward(self, x):
        return (self.pooled(x) - self.center) / self.scale

    @torch.no_grad()
    def fit_standardization(self, images):
        f = torch.cat([self.pooled(images[i:i + 256]) for i in range(0, images.shape[0], 256)])
        self.center.copy_(f.mean(0))
        self.scale.copy_(f.std(0).clamp_min(1e-6))

    def digest(self):
        buf = io.BytesIO()
        for k, v in sorted(self.state_dict().items()):
            buf.write(k.encode())
            buf.write(v.detach().cpu().contiguous().numpy().tobytes())
        return hashlib.sha256(buf.getvalue()).hexdigest()[:16]


def random_embedder(seed=0, standardize=True):
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        net = FeatureEmbedder()
    net.requires_grad_(False).eval()
    if standardize:
        from .data import ToyDomainSpec, render_batch
        net.fit_standardization(torch.cat([render_batch(ToyDomainSpec.default(d, count=256)) for d in ('A', 'B')]))
    return net


def train_embedder(steps=600, batch=64, seed=0, count=2000):
    """Classify domain (A/B) and shape family (ring/polygon) on rendered images."""
    from .data import ToyDomainSpec, _geometry, render_batch

    specs = [ToyDomainSpec.default(d, count=count) for d in ('A', 'B')]
    images = torch.cat([render_batch(s) for s in specs])
    dom = torch.cat([torch.full((count,), i) for i in range(2)])
    fam = torch.tensor([int(_geometry(s, i)['family'] == 'polygons') for s in specs for i in range(count)])
    net = random_embedder(seed, standardize=False).requires_grad_(True).train()
    opt = torch.optim.Adam(net.parameters(), lr=2e-3)
    gen = torch.Generator().manual_seed(seed)
    for _ in range(steps):
        idx = torch.randint(0, images.shape[0], (batch,), generator=gen)
        x = images[idx] + 0.05 * torch.randn(images[idx].shape, generator=gen)
        logits = net.head(net.pooled(x))
        loss = F.cross_entropy(logits[:, :2], dom[idx]) + F.cross_entropy(logits[:, 2:], fam[idx])
        opt.zero_grad()
        loss.backward()
        opt.step()
    net.provenance = f'trained:domain+family:steps={steps}:seed={seed}'
    net.requires_grad_(False).eval()
    net.fit_standardization(images)
    return net


def save_embedder(net: FeatureEmbedder, path=ASSET):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save({'state': net.state_dict(), 'provenance': net.provenance}, path)


_cache = {}


def load_embedder(path=None) -> FeatureEmbedder:
    path = Path(path) if path is not None else ASSET
    key = str(path)
    if key not in _cache:
        if path.exists():
            blob = torch.load(path, map_location='cpu', weights_only=True)
            net = FeatureEmbedder()
            net.load_state_dict(blob['state'])
            net.provenance = blob['provenance']
            net.requires_grad_(False).eval()
        else:
            log.warning('embedder weights %s not found; using fixed random weights', path)
            net = random_embedder()
        _cache[key] = net
    return _cache[key]


@torch.no_grad()
def embed(images, net: FeatureEmbedder | None = None, batch=256):
    """Embedding vectors ``[N, De]`` as float64 numpy, in input order."""
    net = net or load_embedder()
    if images.ndim == 3:
        images = images[None]
    out = [net(images[i:i + batch].float()).double() for i in range(0, images.shape[0], batch)]
    return torch.cat(out).numpy()


# ----------------------------------------------------------------------------

def _check_sets(a, b):
    a, b = np.atleast_2d(np.asarray(a, dtype=np.float64)), np.atleast_2d(np.asarray(b, dtype=np.float64))
    if a.shape[0] < 2 or b.shape[0] < 2:
        raise ValueError('need at least 2 samples per set')
    if a.shape[1] != b.shape[1]:
        raise ValueError(f'feature dimensions differ: {a.shape[1]} vs {b.shape[1]}')
    return a, b


def _psd_sqrt(m):
    vals, vecs = np.linalg.eigh((m + m.T) / 2)
    clipped = -vals[vals < 0].sum()
    vals = np.clip(vals, 0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T, clipped


def fid(feats_a, feats_b):
    """``|mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2))`` with unbiased covariances.

    The trace of the cross term is computed as ``Tr((A^1/2 B A^1/2)^1/2)``, a
    symmetric PSD square root, with negative eigenvalues clipped to 0.
    """
    a, b = _check_sets(feats_a, feats_b)
    mu_a, mu_b = a.mean(0), b.mean(0)
    cov_a = np.atleast_2d(np.cov(a, rowvar=False, ddof=1))
    cov_b = np.atleast_2d(np.cov(b, rowvar=False, ddof=1))
    sqrt_a, c1 = _psd_sqrt(cov_a)
    cross = sqrt_a @ cov_b @ sqrt_a
    vals = np.linalg.eigvalsh((cross + cross.T) / 2)
    c2 = -vals[vals < 0].sum()
    if c1 + c2 > 1e-6:
        warnings.warn(f'fid: clipped {c1 + c2:.3g} of negative eigenvalue mass')
    tr_cross = np.sqrt(np.clip(vals, 0, None)).sum()
    diff = mu_a - mu_b
    return float(diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2 * tr_cross)


def polynomial_kernel(x, y):
    d = x.shape[1]
    return (x @ y.T / d + 1) ** 3


def kid(feats_a, feats_b):
    """Unbiased MMD^2 with ``k(x, y) = (x.y / d + 1)^3``."""
    a, b = _check_sets(feats_a, feats_b)
    m, n = a.shape[0], b.shape[0]
    k_aa, k_bb, k_ab = polynomial_kernel(a, a), polynomial_kernel(b, b), polynomial_kernel(a, b)
    term_a = (k_aa.sum() - np.trace(k_aa)) / (m * (m - 1))
    term_b = (k_bb.sum() - np.trace(k_bb)) / (n * (n - 1))
    return float(term_a + term_b - 2 * k_ab.mean())


def _normalize(f, eps=1e-10):
    return f / (f.square().sum(dim=1, keepdim=True).sqrt() + eps)


def perceptual_distance(img_a, img_b, net=None):
    """Mean over embedder stages of the mean squared difference of channel-normalized features.

    Batched inputs give one distance per pair; a single image pair gives a 0-d tensor.
    ``net`` is anything with ``features(x) -> list of [B, C, H, W]``.
    """
    if img_a.shape != img_b.shape:
        raise ValueError(f'image shapes differ: {tuple(img_a.shape)} vs {tuple(img_b.shape)}')
    single = img_a.ndim == 3
    net = net or load_embedder()
    fa, fb = net.features(img_a), net.features(img_b)
    per_layer = [(_normalize(x) - _normalize(y)).square().flatten(1).mean(1) for x, y in zip(fa, fb)]
    d = torch.stack(per_layer).mean(0)
    return d[0] if single else d


def smoothness_from_distances(d):
    d = np.asarray(d, dtype=np.float64)
    mean = d.mean()
    if mean == 0:
        return 1.0
    cv = d.std() / mean
    return float(1.0 / (1.0 + cv * cv))


def perceptual_smoothness(path_images, net=None):
    """``1 / (1 + CV^2)`` of the perceptual distances between consecutive path images."""
    if len(path_images) < 3:
        raise ValueError('need at least 3 images on the path')
    x = torch.stack(list(path_images)) if not isinstance(path_images, torch.Tensor) else path_images
    with torch.no_grad():
        d = perceptual_distance(x[:-1], x[1:], net)
    return smoothness_from_distances(d.double().numpy())


def path_smoothness(paths, net=None):
    """Mean PS over a batch of paths ``[N, steps, 3, H, W]``."""
    return float(np.mean([perceptual_smoothness(p, net) for p in paths]))


# ----------------------------------------------------------------------------

@torch.no_grad()
def lpips_to_source(src, tgt, anchor, alpha, n_samples, seed, batch=128, net=None):
    """Mean perceptual distance between ``G_s(z, anchor)`` and the alpha-interpolated target image."""
    anchor_noise = getattr(anchor, 'noise', anchor)
    zs = latents(src.spec, n_samples, seed)
    total = 0.0
    for start in range(0, n_samples, batch):
        z = zs[start:start + batch]
        x_src = src(z, anchor_noise)['image']
        x_tgt = generate_interp(tgt, z, anchor_noise, alpha, seed * 7919 + start)
        total += float(perceptual_distance(x_src, x_tgt, net).double().sum())
    return total / n_samples


@torch.no_grad()
def sample_images(G, n, seed, anchor=None, alpha=0.0, batch=256, psi=1.0):
    """``n`` images from ``G`` with latents from ``seed``; interpolated noise when an anchor is given."""
    from .networks import sample_noise

    zs = latents(G.spec, n, seed)
    out = []
    for start in range(0, n, batch):
        z = zs[start:start + batch]
        rseed = seed * 7919 + start
        if anchor is None:
            out.append(G(z, sample_noise(G.spec, rseed, batch=z.shape[0]), psi=psi)['image'])
        else:
            out.append(generate_interp(G, z, anchor, alpha, rseed, psi=psi))
    return torch.cat(out)


@dataclass
class MetricsReport:
    method: str
    level: str
    fid: float = float('nan')
    kid: float = float('nan')
    lpips_proxy: float = float('nan')
    ps: float = float('nan')
    n: int = 0
    seeds: dict = field(default_factory=dict)
    extractor: str = ''

    @property
    def kid_x1e3(self):
        return self.kid * 1e3

    def to_dict(self):
        d = asdict(self)
        d['kid_x1e3'] = self.kid_x1e3
        return d
