"""Generator and discriminator objectives.

``total = adv + lambda_fm * fm`` where ``adv`` is the non-saturating loss on
images drawn with random noise and ``fm`` matches source and target features
under a single fixed anchor noise.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F

from .networks import Discriminator, Generator, NoiseField

MATCH_SPACES = ('H', 'RGB', 'IMAGE')


def feature_matching_loss(feats_a, feats_b):
    """Mean over layers of the per-layer mean squared difference.

    Each layer is reduced by its element mean first, so layer size does not
    change the weight a layer gets.
    """
    if len(feats_a) != len(feats_b) or not len(feats_a):
        raise ValueError(f'feature stacks differ in length: {len(feats_a)} vs {len(feats_b)}')
    total = 0.0
    for l, (a, b) in enumerate(zip(feats_a, feats_b)):
        if a.shape != b.shape:
            raise ValueError(f'layer {l}: shape {tuple(a.shape)} vs {tuple(b.shape)}')
        total = total + (a - b).square().mean()
    return total / len(feats_a)


def _matched(out, space):
    if space == 'H':
        return out['feats']
    if space == 'RGB':
        return out['rgbs']
    if space == 'IMAGE':
        return [out['image']]
    raise ValueError(f'unknown match space {space!r}; expected one of {MATCH_SPACES}')


def fm_loss(src: Generator, tgt: Generator, z, noise_src: NoiseField, noise_tgt: NoiseField | None = None,
            space='H'):
    """Feature matching between ``src`` (held constant) and ``tgt``.

    With ``noise_tgt`` omitted both passes share ``noise_src``, which is the
    anchored form. Passing independent fields gives the unanchored variant.
    """
    if src.spec != tgt.spec:
        raise ValueError('source and target generators have different specs')
    noise_tgt = noise_src if noise_tgt is None else noise_tgt
    with torch.no_grad():
        ref = src(z, noise_src)
    out = tgt(z, noise_tgt)
    return feature_matching_loss(_matched(ref, space), _matched(out, space))


def fixnoise_fm_loss(src: Generator, tgt: Generator, z, anchor, space='H'):
    """Feature matching with both generators evaluated at the anchor noise."""
    noise = getattr(anchor, 'noise', anchor)
    return fm_loss(src, tgt, z, noise, space=space)


def generator_adv_loss(D: Discriminator, fake_image):
    """Non-saturating generator loss ``softplus(-D(x)) = -log sigmoid(D(x))``, batch mean."""
    return F.softplus(-D(fake_image)).mean()


def total_generator_loss(adv, fm, lambda_fm):
    return adv + lambda_fm * fm


def r1_penalty(D: Discriminator, real_image):
    """Per-sample ``||grad_x D(x)||^2``; the graph is kept for a backward pass."""
    with torch.enable_grad():
        x = real_image.detach().requires_grad_(True)
        scores = D(x)
        if not scores.requires_grad:
            return torch.zeros(x.shape[0], dtype=x.dtype), scores
        (grad,) = torch.autograd.grad(scores.sum(), x, create_graph=True, allow_unused=True)
    if grad is None:
        return torch.zeros(x.shape[0], dtype=x.dtype), scores
    return grad.square().flatten(1).sum(1), scores


def discriminator_loss(D: Discriminator, real_image, fake_image, r1_gamma=0.0):
    """``softplus(-D(real)) + softplus(D(fake)) + r1_gamma/2 * ||grad D(real)||^2``, batch means."""
    if r1_gamma > 0:
        penalty, s_real = r1_penalty(D, real_image)
        r1 = (r1_gamma / 2) * penalty.mean()
    else:
        s_real = D(real_image)
        r1 = 0.0
    s_fake = D(fake_image.detach())
    return F.softplus(-s_real).mean() + F.softplus(s_fake).mean() + r1
