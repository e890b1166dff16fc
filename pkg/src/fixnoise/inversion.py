"""Projection of images into the source generator's Z space, and translation through it.

Inversion minimizes ``w_pix * MSE + w_perc * perceptual_distance`` between
the target image and ``G_s(z, n_fixed, psi)`` over ``z`` with Adam. The noise
is held fixed (zero noise unless given). A batch of images is inverted
jointly; Adam is elementwise, so every image follows its own optimization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch

from .metrics import load_embedder, perceptual_distance
from .networks import Generator, NoiseField, zero_noise
from .noise_control import generate_interp
from .training import NumericalError


@dataclass(frozen=True)
class InversionConfig:
    steps: int = 400
    lr: float = 0.1
    lr_rampup: float = 0.05
    lr_rampdown: float = 0.25
    psi: float = 0.7
    w_pix: float = 1.0
    w_perc: float = 1.0
    restarts: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError('steps must be >= 0')
        if not 0.0 <= self.psi <= 1.0:
            raise ValueError('psi must be in [0, 1]')
        if self.restarts < 1:
            raise ValueError('restarts must be >= 1')
        if self.w_pix < 0 or self.w_perc < 0:
            raise ValueError('loss weights must be >= 0')

    def lr_at(self, step):
        """Cosine ramp-down over the last ``lr_rampdown`` of the run, linear ramp-up at the start."""
        t = step / max(self.steps, 1)
        ramp = min(1.0, (1.0 - t) / self.lr_rampdown)
        ramp = 0.5 - 0.5 * math.cos(ramp * math.pi)
        ramp *= min(1.0, t / self.lr_rampup) if self.lr_rampup > 0 else 1.0
        return self.lr * ramp


@dataclass
class InversionResult:
    z: torch.Tensor               # [B, Dz] best-so-far latents
    final_loss: torch.Tensor      # [B]
    initial_loss: torch.Tensor    # [B], loss of the first initialization
    trace: torch.Tensor           # [B, evaluations] best-so-far loss, nonincreasing
    pixel: torch.Tensor = field(default=None)       # [B] components of final_loss
    perceptual: torch.Tensor = field(default=None)


def inversion_loss(G, z, target, noise, cfg: InversionConfig, net=None):
    """Per-image loss ``[B]`` and its pixel / perceptual components."""
    image = G(z, noise, psi=cfg.psi)['image']
    pix = (image - target).square().flatten(1).mean(1)
    perc = perceptual_distance(image, target, net) if cfg.w_perc else torch.zeros_like(pix)
    return cfg.w_pix * pix + cfg.w_perc * perc, pix, perc


def invert_to_z(src: Generator, image, config: InversionConfig | None = None, noise: NoiseField | None = None,
                init_z=None, net=None) -> InversionResult:
    """Best-so-far latents for ``image`` (``[3, R, R]`` or ``[B, 3, R, R]``).

    The first restart starts from ``init_z`` when given, otherwise from a
    standard normal draw seeded by ``config.seed``; later restarts draw fresh
    latents. ``steps = 0`` returns the first initialization unchanged.
    """
    cfg = config or InversionConfig()
    spec = src.spec
    target = image[None] if image.ndim == 3 else image
    if tuple(target.shape[1:]) != (spec.image_channels, spec.resolution, spec.resolution):
        raise ValueError(f'image shape {tuple(image.shape)} does not match a '
                         f'{spec.resolution}x{spec.resolution} generator')
    target = target.detach().float()
    B = target.shape[0]
    noise = zero_noise(spec) if noise is None else noise
    net = net or load_embedder()
    src.requires_grad_(False)

    gen = torch.Generator().manual_seed(cfg.seed)
    restarts = 1 if cfg.steps == 0 else cfg.restarts
    best_z = best_loss = best_pix = best_perc = initial = None
    trace = []
    for r in range(restarts):
        draw = torch.randn(B, spec.z_dim, generator=gen)
        z0 = init_z.reshape(B, spec.z_dim).float() if (r == 0 and init_z is not None) else draw
        z = z0.clone().requires_grad_(True)
        opt = torch.optim.Adam([z], lr=cfg.lr, betas=(0.9, 0.999))
        for step in range(cfg.steps + 1):
            loss, pix, perc = inversion_loss(src, z, target, noise, cfg, net)
            if not torch.isfinite(loss).all():
                raise NumericalError(f'non-finite inversion loss at restart {r}, step {step}',
                                     {'restart': r, 'step': step, 'trace': torch.stack(trace, 1).tolist()
                                      if trace else []})
            with torch.no_grad():
                if best_loss is None:
                    best_z, best_loss = z.detach().clone(), loss.detach().clone()
                    best_pix, best_perc = pix.detach().clone(), perc.detach().clone()
                    initial = best_loss.clone()
                else:
                    better = loss < best_loss
                    best_z = torch.where(better[:, None], z.detach(), best_z)
                    best_loss = torch.where(better, loss, best_loss)
                    best_pix = torch.where(better, pix, best_pix)
                    best_perc = torch.where(better, perc, best_perc)
                trace.append(best_loss.clone())
            if step == cfg.steps:
                break
            for g in opt.param_groups:
                g['lr'] = cfg.lr_at(step)
            opt.zero_grad()
            loss.sum().backward()
            opt.step()
    if cfg.steps == 0 and init_z is not None:
        best_z = init_z.reshape(B, spec.z_dim).detach().clone()
    return InversionResult(best_z, best_loss, initial, torch.stack(trace, 1), best_pix, best_perc)


def translate(src: Generator, tgt: Generator, image, alphas, anchor, config: InversionConfig | None = None,
              rng_seed=0, noise: NoiseField | None = None, net=None):
    """Invert ``image`` once with ``src``, then render the latents with ``tgt`` at each alpha.

    Returns ``(outputs, inversion)`` where ``outputs`` maps alpha to an image
    batch. Rendering uses the inversion's truncation ``psi``.
    """
    cfg = config or InversionConfig()
    alphas = [float(a) for a in (alphas if hasattr(alphas, '__iter__') else [alphas])]
    if src.spec != tgt.spec:
        raise ValueError('source and target generators have different specs')
    inv = invert_to_z(src, image, cfg, noise=noise, net=net)
    outputs = {a: generate_interp(tgt, inv.z, anchor, a, rng_seed, psi=cfg.psi) for a in alphas}
    return outputs, inv
