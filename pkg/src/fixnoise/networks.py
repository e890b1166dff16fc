"""Miniature style-based generator and discriminator.

The generator follows the StyleGAN2 layout at toy scale: a mapping network
turns the latent code ``z`` into a style ``w``; the synthesis network starts
from a learned constant, runs modulated 3x3 convolutions, adds a single-channel
noise grid after every convolution (scaled by a learned per-site strength) and
sums per-resolution tRGB outputs through skip connections.

Every feature-convolution output is returned so losses can be matched in the
intermediate feature space. The tRGB outputs are returned separately.

Parameters are named ``{role}.{layer}.{name}`` so that checkpoints and layer
surgery can address them directly.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

__all__ = [
    'GeneratorSpec', 'NoiseField', 'Generator', 'Discriminator',
    'sample_noise', 'zero_noise', 'random_noise', 'map_latent', 'synthesize', 'discriminate',
]

_LRELU_GAIN = math.sqrt(2.0)


def _default_channels():
    return {4: 64, 8: 64, 16: 32, 32: 32}


@dataclass(frozen=True)
class GeneratorSpec:
    """Architecture description shared by a generator and its discriminator.

    The base resolution has one feature convolution, every higher resolution
    has two (the first one upsamples). With the defaults this gives 7 feature
    layers at resolutions 4, 8, 8, 16, 16, 32, 32.
    """

    z_dim: int = 64
    w_dim: int = 64
    mapping_layers: int = 2
    mapping_lr_mul: float = 0.01
    base_resolution: int = 4
    resolution: int = 32
    channels: dict = field(default_factory=_default_channels)
    image_channels: int = 3
    d_channels: dict = field(default_factory=_default_channels)
    w_avg_beta: float = 0.995

    def __post_init__(self):
        # Keys may arrive as strings after a JSON round trip.
        object.__setattr__(self, 'channels', {int(k): int(v) for k, v in self.channels.items()})
        object.__setattr__(self, 'd_channels', {int(k): int(v) for k, v in self.d_channels.items()})
        res, base = self.resolution, self.base_resolution
        if base < 1 or res < base or res & (res - 1) or base & (base - 1):
            raise ValueError(f'resolution {res} must be a power of 2 >= base {base}')
        for r in self.resolutions:
            if r not in self.channels or r not in self.d_channels:
                raise ValueError(f'missing channel width for resolution {r}')
        if self.z_dim < 1 or self.w_dim < 1 or self.mapping_layers < 1:
            raise ValueError('z_dim, w_dim and mapping_layers must be positive')

    @property
    def resolutions(self):
        out, r = [], self.base_resolution
        while r <= self.resolution:
            out.append(r)
            r *= 2
        return out

    @property
    def layer_resolutions(self):
        """Resolution of every feature convolution, in forward order."""
        res = [self.base_resolution]
        for r in self.resolutions[1:]:
            res += [r, r]
        return res

    @property
    def num_feature_layers(self):
        return len(self.layer_resolutions)

    @property
    def num_ws(self):
        # One style per feature conv plus one for the final tRGB.
        return self.num_feature_layers + 1

    @property
    def total_layers(self):
        """Number of swap/freeze units: the constant input plus every feature conv."""
        return self.num_feature_layers + 1

    @property
    def feature_shapes(self):
        return [(self.channels[r], r, r) for r in self.layer_resolutions]

    @property
    def noise_shapes(self):
        return [(r, r) for r in self.layer_resolutions]

    @property
    def torgb_layers(self):
        """Index of the feature conv each tRGB head reads from (last conv per resolution)."""
        out, k = [], 0
        for i, r in enumerate(self.resolutions):
            k += 1 if i == 0 else 2
            out.append(k - 1)
        return out

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class NoiseField:
    """Per-layer noise grids.

    ``maps[k]`` has shape ``(H, W)`` (shared by every sample of a batch) or
    ``(B, H, W)`` (one grid per sample).
    """

    maps: list
    seed: int | None = None

    def __len__(self):
        return len(self.maps)

    @property
    def batched(self):
        return self.maps[0].ndim == 3

    def check(self, spec: GeneratorSpec):
        if len(self.maps) != spec.num_feature_layers:
            raise ValueError(f'noise has {len(self.maps)} grids, spec needs {spec.num_feature_layers}')
        for k, (m, shape) in enumerate(zip(self.maps, spec.noise_shapes)):
            if tuple(m.shape[-2:]) != shape or m.ndim not in (2, 3):
                raise ValueError(f'noise grid {k} has shape {tuple(m.shape)}, expected {shape}')

    def to(self, *args, **kwargs):
        return NoiseField([m.to(*args, **kwargs) for m in self.maps], self.seed)

    def clone(self):
        return NoiseField([m.clone() for m in self.maps], self.seed)

    def equal(self, other):
        return len(self) == len(other) and all(torch.equal(a, b) for a, b in zip(self.maps, other.maps))


def sample_noise(spec: GeneratorSpec, rng_seed: int, batch: int | None = None,
                 dtype=torch.float32) -> NoiseField:
    """Draw i.i.d. standard normal grids; deterministic given ``rng_seed``."""
    gen = torch.Generator().manual_seed(int(rng_seed))
    lead = () if batch is None else (batch,)
    maps = [torch.randn(lead + shape, generator=gen, dtype=dtype) for shape in spec.noise_shapes]
    return NoiseField(maps, int(rng_seed))


def zero_noise(spec: GeneratorSpec, dtype=torch.float32) -> NoiseField:
    return NoiseField([torch.zeros(shape, dtype=dtype) for shape in spec.noise_shapes])


def random_noise(spec: GeneratorSpec, batch: int, generator: torch.Generator, dtype=torch.float32) -> NoiseField:
    """Per-sample noise drawn from an existing generator (training use)."""
    maps = [torch.randn((batch,) + shape, generator=generator, dtype=dtype) for shape in spec.noise_shapes]
    return NoiseField(maps)


# ----------------------------------------------------------------------------
# Layers. Weights are drawn from N(0, 1) and rescaled at runtime by 1/sqrt(fan_in)
# (constant-scale approximation of equalized learning rate).

class MappingLayer(nn.Module):

    def __init__(self, in_dim, out_dim, lr_mul=1.0, activate=True):
        super().__init__()
        self.weight = nn.Parameter(torch.randn(out_dim, in_dim) / lr_mul)
        self.bias = nn.Parameter(torch.zeros(out_dim))
        self.scale = lr_mul / math.sqrt(in_dim)
        self.lr_mul = lr_mul
        self.activate = activate

    def forward(self, x):
        x = F.linear(x, self.weight * self.scale, self.bias * self.lr_mul)
        if self.activate:
            x = F.leaky_relu(x, 0.2) * _LRELU_GAIN
        return x


class ModulatedConv(nn.Module):
    """Style-modulated convolution (feature conv when ``demodulate``, tRGB otherwise).

    Modulation is applied to the input activations instead of the weights,
    which is equivalent and keeps the batch in a single conv call.
    """

    def __init__(self, in_ch, out_ch, w_dim, kernel=3, demodulate=True, upsample=False):
        super().__init__()
        self.affine_weight = nn.Parameter(torch.randn(in_ch, w_dim))
        self.affine_bias = nn.Parameter(torch.ones(in_ch))
        self.weight = nn.Parameter(torch.randn(out_ch, in_ch, kernel, kernel))
        self.bias = nn.Parameter(torch.zeros(out_ch))
        self.affine_scale = 1.0 / math.sqrt(w_dim)
        self.weight_scale = 1.0 / math.sqrt(in_ch * kernel * kernel)
        self.demodulate = demodulate
        self.upsample = upsample
        self.padding = kernel // 2

    def styles(self, w):
        return F.linear(w, self.affine_weight * self.affine_scale, self.affine_bias)

    def forward(self, x, w):
        if self.upsample:
            x = F.interpolate(x, scale_factor=2, mode='bilinear', align_corners=False)
        s = self.styles(w)
        weight = self.weight * self.weight_scale
        x = F.conv2d(x * s[:, :, None, None], weight, padding=self.padding)
        if self.demodulate:
            wsq = weight.square().sum(dim=(2, 3))                # [out, in]
            d = torch.rsqrt(s.square() @ wsq.t() + 1e-8)         # [B, out]
            x = x * d[:, :, None, None]
        return x


class NoiseStrength(nn.Module):

    def __init__(self):
        super().__init__()
        self.strength = nn.Parameter(torch.zeros([]))

    def forward(self, x, noise):
        if noise.ndim == 2:
            noise = noise[None, None]
        else:
            noise = noise[:, None]
        return x + self.strength * noise.to(x.dtype)


class ConstantInput(nn.Module):

    def __init__(self, channels, size):
        super().__init__()
        self.value = nn.Parameter(torch.randn(channels, size, size))

    def forward(self, batch):
        return self.value[None].expand(batch, -1, -1, -1)


class Generator(nn.Module):
    """Style-based generator ``G(z, n)``.

    Submodule names give parameter keys of the form ``{role}.{layer}.{name}``
    with roles ``mapping``, ``const``, ``conv`` (feature convs), ``noise``
    (per-site strengths) and ``torgb``. The tracked mean style is the buffer
    ``w_avg``.
    """

    def __init__(self, spec: GeneratorSpec | None = None):
        super().__init__()
        spec = spec or GeneratorSpec()
        self.spec = spec
        dims = [spec.z_dim] + [spec.w_dim] * spec.mapping_layers
        self.mapping = nn.ModuleList(
            MappingLayer(dims[i], dims[i + 1], lr_mul=spec.mapping_lr_mul)
            for i in range(spec.mapping_layers))
        self.register_buffer('w_avg', torch.zeros(spec.w_dim))
        base = spec.base_resolution
        self.const = nn.ModuleList([ConstantInput(spec.channels[base], base)])
        convs, noise = [], []
        prev_res = base
        for res in spec.layer_resolutions:
            in_ch = spec.channels[prev_res]
            convs.append(ModulatedConv(in_ch, spec.channels[res], spec.w_dim, upsample=res != prev_res))
            noise.append(NoiseStrength())
            prev_res = res
        self.conv = nn.ModuleList(convs)
        self.noise = nn.ModuleList(noise)
        self.torgb = nn.ModuleList(
            ModulatedConv(spec.channels[r], spec.image_channels, spec.w_dim, kernel=1, demodulate=False)
            for r in spec.resolutions)
        self._torgb_at = {k: j for j, k in enumerate(spec.torgb_layers)}

    # -- mapping --------------------------------------------------------------

    def map(self, z, psi=1.0):
        if z.ndim == 1:
            z = z[None]
        if z.ndim != 2 or z.shape[1] != self.spec.z_dim:
            raise ValueError(f'latent code must have shape [B, {self.spec.z_dim}], got {tuple(z.shape)}')
        w = z * torch.rsqrt(z.square().mean(dim=1, keepdim=True) + 1e-8)
        for layer in self.mapping:
            w = layer(w)
        if psi != 1:
            w_avg = self.w_avg.to(w.dtype)
            w = w_avg + psi * (w - w_avg)
        return w

    def update_w_avg(self, w, beta=None):
        beta = self.spec.w_avg_beta if beta is None else beta
        with torch.no_grad():
            self.w_avg.copy_(w.detach().mean(dim=0).lerp(self.w_avg, beta))

    # -- synthesis ------------------------------------------------------------

    def synthesis(self, ws, noise: NoiseField, return_preact=False):
        """Run the synthesis network.

        Args:
            ws: styles, ``[B, w_dim]`` (broadcast to every layer) or ``[B, num_ws, w_dim]``.
            noise: a ``NoiseField`` matching the spec.

        Returns:
            dict with ``image`` in [-1, 1], ``feats`` (one tensor per feature conv,
            after noise, bias and activation), ``rgbs`` (one tRGB output per
            resolution) and, if requested, ``preact`` (feature conv outputs
            after noise injection, before bias and activation).
        """
        spec = self.spec
        noise.check(spec)
        if ws.ndim == 2:
            ws = ws[:, None].expand(-1, spec.num_ws, -1)
        batch = ws.shape[0]
        if noise.batched and noise.maps[0].shape[0] != batch:
            raise ValueError(f'noise batch {noise.maps[0].shape[0]} does not match latent batch {batch}')
        x = self.const[0](batch)
        feats, rgbs, preacts = [], [], []
        img = None
        for k, (conv, nz) in enumerate(zip(self.conv, self.noise)):
            x = conv(x, ws[:, k])
            x = nz(x, noise.maps[k])
            if return_preact:
                preacts.append(x)
            x = F.leaky_relu(x + conv.bias[None, :, None, None], 0.2) * _LRELU_GAIN
            feats.append(x)
            j = self._torgb_at.get(k)
            if j is not None:
                torgb = self.torgb[j]
                y = torgb(x, ws[:, k + 1]) + torgb.bias[None, :, None, None]
                rgbs.append(y)
                if img is not None:
                    img = F.interpolate(img, scale_factor=2, mode='bilinear', align_corners=False)
                    y = img + y
                img = y
        out = {'image': torch.tanh(img), 'feats': feats, 'rgbs': rgbs}
        if return_preact:
            out['preact'] = preacts
        return out

    def forward(self, z, noise: NoiseField, psi=1.0):
        return self.synthesis(self.map(z, psi), noise)


# ----------------------------------------------------------------------------

class DiscConv(nn.Module):

    def __init__(self, in_ch, out_ch, kernel=3, activate=True, down=False):
        super().__init__()
        self.weight = nn.Parameter(torch.randn(out_ch, in_ch, kernel, kernel))
        self.bias = nn.Parameter(torch.zeros(out_ch))
        self.scale = 1.0 / math.sqrt(in_ch * kernel * kernel)
        self.activate = activate
        self.down = down
        self.padding = kernel // 2

    def forward(self, x):
        x = F.conv2d(x, self.weight * self.scale, self.bias, padding=self.padding)
        if self.activate:
            x = F.leaky_relu(x, 0.2) * _LRELU_GAIN
        if self.down:
            x = F.avg_pool2d(x, 2)
        return x


class DiscLinear(nn.Module):

    def __init__(self, in_dim, out_dim, activate=True):
        super().__init__()
        self.weight = nn.Parameter(torch.randn(out_dim, in_dim))
        self.bias = nn.Parameter(torch.zeros(out_dim))
        self.scale = 1.0 / math.sqrt(in_dim)
        self.activate = activate

    def forward(self, x):
        x = F.linear(x, self.weight * self.scale, self.bias)
        if self.activate:
            x = F.leaky_relu(x, 0.2) * _LRELU_GAIN
        return x


class Discriminator(nn.Module):
    """Plain convolutional discriminator returning raw (pre-sigmoid) scores.

    Keys: ``fromrgb.0.*``, ``block.{k}.*`` (two convs per resolution, the second
    one downsampling), ``fc.0.*`` and the final ``out.0.*`` projection.
    """

    def __init__(self, spec: GeneratorSpec | None = None):
        super().__init__()
        spec = spec or GeneratorSpec()
        self.spec = spec
        ch = spec.d_channels
        res = list(reversed(spec.resolutions))   # high -> low
        self.fromrgb = nn.ModuleList([DiscConv(spec.image_channels, ch[res[0]], kernel=1)])
        blocks = []
        for hi, lo in zip(res[:-1], res[1:]):
            blocks.append(DiscConv(ch[hi], ch[hi]))
            blocks.append(DiscConv(ch[hi], ch[lo], down=True))
        blocks.append(DiscConv(ch[res[-1]], ch[res[-1]]))
        self.block = nn.ModuleList(blocks)
        base = spec.base_resolution
        self.fc = nn.ModuleList([DiscLinear(ch[base] * base * base, ch[base])])
        self.out = nn.ModuleList([DiscLinear(ch[base], 1, activate=False)])

    def forward(self, image):
        spec = self.spec
        expected = (spec.image_channels, spec.resolution, spec.resolution)
        if image.ndim == 3:
            image = image[None]
        if tuple(image.shape[1:]) != expected:
            raise ValueError(f'image must have shape [B, {expected}], got {tuple(image.shape)}')
        x = self.fromrgb[0](image)
        for b in self.block:
            x = b(x)
        x = self.fc[0](x.flatten(1))
        return self.out[0](x).squeeze(1)


# ----------------------------------------------------------------------------
# Functional surface.

def map_latent(G: Generator, z, psi=1.0):
    """``w = M(z)`` with truncation ``w_avg + psi * (w - w_avg)``."""
    return G.map(z, psi)


def synthesize(G: Generator, z, noise: NoiseField, psi=1.0):
    """Return ``(image, feats)`` for latent ``z`` under noise ``noise``."""
    out = G(z, noise, psi=psi)
    return out['image'], out['feats']


def discriminate(D: Discriminator, image):
    return D(image)
