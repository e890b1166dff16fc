"""Evaluation protocols built from the metrics.

* ``evaluate_alphas``: one report per noise interpolation weight (distance to
  the source at the anchor, FID/KID to real target images).
* ``evaluate_generators``: one report per generator, for layer baselines.
* Smoothness of interpolation paths over alpha (FixNoise) or over cut
  indices (layer swap).
"""

from __future__ import annotations

import numpy as np
import torch

from .baselines import layer_swap
from .metrics import (MetricsReport, embed, fid, kid, load_embedder, lpips_to_source, perceptual_distance,
                      sample_images, smoothness_from_distances)
from .networks import Generator, sample_noise
from .noise_control import generate_interp, latents


def toy_fid(images, real, net=None):
    """FID between embedded generated and real images."""
    net = net or load_embedder()
    return fid(embed(images, net), embed(real, net))


def _distribution_metrics(images, real_feats, net):
    feats = embed(images, net)
    return fid(feats, real_feats), kid(feats, real_feats)


@torch.no_grad()
def interp_path_smoothness(tgt: Generator, anchor, n_paths=16, steps=11, seed=0, net=None):
    """Mean PS of paths from alpha=1 to alpha=0 at fixed latent and random noise."""
    anchor_noise = getattr(anchor, 'noise', anchor)
    alphas = np.linspace(1.0, 0.0, steps)
    zs = latents(tgt.spec, n_paths, seed)
    rseed = seed * 7919 + 17
    path = torch.stack([generate_interp(tgt, zs, anchor_noise, float(a), rseed) for a in alphas], 1)
    return _paths_ps(path, net)


@torch.no_grad()
def swap_path_smoothness(src: Generator, tgt: Generator, n_paths=16, seed=0, net=None):
    """Mean PS of paths over every cut index, from ``total_layers`` (source) down to 0 (target)."""
    spec = src.spec
    zs = latents(spec, n_paths, seed)
    noise = sample_noise(spec, seed * 7919 + 17, batch=n_paths)
    path = torch.stack([layer_swap(src, tgt, i)(zs, noise)['image']
                        for i in range(spec.total_layers, -1, -1)], 1)
    return _paths_ps(path, net)


def _paths_ps(path, net):
    steps = path.shape[1]
    d = perceptual_distance(path[:, :-1].flatten(0, 1), path[:, 1:].flatten(0, 1), net)
    d = d.reshape(path.shape[0], steps - 1).double().numpy()
    return float(np.mean([smoothness_from_distances(row) for row in d]))


def evaluate_alphas(src: Generator, tgt: Generator, anchor, real, alphas, n_samples=512, seed=0,
                    method='fixnoise', net=None, with_ps=True, n_real=None):
    """One :class:`MetricsReport` per alpha."""
    net = net or load_embedder()
    real = real[:n_real] if n_real else real
    real_feats = embed(real, net)
    ps = interp_path_smoothness(tgt, anchor, seed=seed, net=net) if with_ps else float('nan')
    reports = []
    for a in alphas:
        images = sample_images(tgt, n_samples, seed, anchor=getattr(anchor, 'noise', anchor), alpha=float(a))
        f, k = _distribution_metrics(images, real_feats, net)
        lp = lpips_to_source(src, tgt, anchor, float(a), n_samples, seed, net=net)
        reports.append(MetricsReport(method, f'{float(a):g}', f, k, lp, ps, n_samples,
                                     {'z_seed': seed, 'n_real': int(real.shape[0])}, net.digest()))
    return reports


@torch.no_grad()
def paired_distance(src: Generator, G: Generator, n_samples=512, seed=0, batch=128, net=None):
    """Mean perceptual distance between ``src`` and ``G`` at shared latents and random noise."""
    zs = latents(src.spec, n_samples, seed)
    total = 0.0
    for start in range(0, n_samples, batch):
        z = zs[start:start + batch]
        noise = sample_noise(src.spec, seed * 7919 + start, batch=z.shape[0])
        total += float(perceptual_distance(src(z, noise)['image'], G(z, noise)['image'], net).double().sum())
    return total / n_samples


def evaluate_generators(generators: dict, real, n_samples=512, seed=0, method='layer_swap', ps=float('nan'),
                        net=None, n_real=None, src: Generator | None = None):
    """One report per ``{level: generator}`` entry, with random noise.

    With ``src`` given, ``lpips_proxy`` is the paired distance to it.
    """
    net = net or load_embedder()
    real = real[:n_real] if n_real else real
    real_feats = embed(real, net)
    reports = []
    for level, G in generators.items():
        images = sample_images(G, n_samples, seed)
        f, k = _distribution_metrics(images, real_feats, net)
        lp = paired_distance(src, G, n_samples, seed, net=net) if src is not None else float('nan')
        reports.append(MetricsReport(method, str(level), f, k, lp, ps, n_samples,
                                     {'z_seed': seed, 'n_real': int(real.shape[0])}, net.digest()))
    return reports
