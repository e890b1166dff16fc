"""Procedural two-domain toy datasets and image file IO.

Both domains draw the same geometry (one ring or polygon per image) and the
same palette (a flat shape on a blue gradient) from their seeds, and differ
only in texture:

* domain ``A`` (source-like): plain shapes and backgrounds.
* domain ``B`` (target-like): dotted shapes on a striped background.

So structure is shared and appearance is domain specific. A per-pixel color
map cannot turn one domain into the other; the generator has to change its
spatial features. Both backgrounds also carry an additive gray texture (pixel
grain plus a coarse random field) that is not a function of any per-image
parameter, the kind of detail a generator's noise inputs exist to model.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image
from skimage.filters import threshold_otsu
from skimage.transform import resize

DOMAINS = ('A', 'B')
SHAPE_FAMILIES = ('rings', 'polygons')
PALETTES = {'warm': (-0.05, 0.15), 'magenta': (0.8, 0.95)}
_SUPERSAMPLE = 4
_COARSE_GRID = 6


@dataclass(frozen=True)
class ToyDomainSpec:
    domain: str = 'A'
    shape_families: tuple = SHAPE_FAMILIES
    palette: str = 'warm'
    texture_amplitude: float = 0.0
    noise_amplitude: float = 0.0
    resolution: int = 32
    count: int = 2000
    seed: int = 0

    def __post_init__(self):
        if self.domain not in DOMAINS:
            raise ValueError(f'unknown domain {self.domain!r}')
        object.__setattr__(self, 'shape_families', tuple(self.shape_families))
        for f in self.shape_families:
            if f not in SHAPE_FAMILIES:
                raise ValueError(f'unknown shape family {f!r}')
        if self.palette not in PALETTES:
            raise ValueError(f'unknown palette {self.palette!r}')
        if self.count < 1:
            raise ValueError('count must be >= 1')

    @classmethod
    def default(cls, domain, **kw):
        if domain == 'A':
            base = dict(texture_amplitude=0.0, noise_amplitude=0.06, seed=0)
        else:
            base = dict(texture_amplitude=0.2, noise_amplitude=0.06, seed=1)
        base.update(kw)
        return cls(domain=domain, **base)


# ----------------------------------------------------------------------------
# Image codec: [-1, 1] floats <-> 8-bit. 0.0 maps to 128 (127.5 rounds half away from zero).

def to_uint8(x):
    x = np.asarray(x, dtype=np.float64)
    v = np.clip((x + 1.0) * 127.5, 0.0, 255.0)
    return np.floor(v + 0.5).astype(np.uint8)


def from_uint8(u):
    return np.asarray(u, dtype=np.float32) / 127.5 - 1.0


def _atomic_write(path: Path, write):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix='.tmp-', suffix=path.suffix)
    os.close(fd)
    try:
        write(tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_png(path, image):
    """Write a ``[3, H, W]`` (or ``[H, W, 3]``) image in [-1, 1] as 8-bit PNG."""
    if isinstance(image, torch.Tensor):
        image = image.detach().cpu().numpy()
    image = np.asarray(image)
    if image.ndim == 3 and image.shape[0] in (1, 3):
        image = image.transpose(1, 2, 0)
    arr = to_uint8(image)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    _atomic_write(path, lambda p: Image.fromarray(arr).save(p, format='PNG'))


def read_png(path):
    """Read a PNG into a ``[3, H, W]`` float32 tensor in [-1, 1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert('RGB'))
    return torch.from_numpy(from_uint8(arr).transpose(2, 0, 1).copy())


def write_json(path, obj):
    text = json.dumps(obj, indent=2, sort_keys=True, default=str)
    _atomic_write(path, lambda p: Path(p).write_text(text + '\n'))


# ----------------------------------------------------------------------------
# Rendering.

def _geometry(spec: ToyDomainSpec, index: int):
    rng = np.random.default_rng([spec.seed, index, 0])
    family = spec.shape_families[rng.integers(len(spec.shape_families))]
    geo = dict(
        family=family,
        cx=rng.uniform(0.32, 0.68), cy=rng.uniform(0.32, 0.68),
        radius=rng.uniform(0.17, 0.3),
        thickness=rng.uniform(0.35, 0.55),
        sides=int(rng.integers(3, 7)),
        rotation=rng.uniform(0, 2 * math.pi),
    )
    return geo


def _mask(geo, size):
    c = (np.arange(size) + 0.5) / size
    yy, xx = np.meshgrid(c, c, indexing='ij')
    dx, dy = xx - geo['cx'], yy - geo['cy']
    r = np.hypot(dx, dy)
    if geo['family'] == 'rings':
        inner = geo['radius'] * (1 - geo['thickness'])
        return (r <= geo['radius']) & (r >= inner)
    n = geo['sides']
    theta = np.arctan2(dy, dx) - geo['rotation']
    # Distance to polygon edge along direction theta for a regular n-gon.
    apothem = geo['radius'] * math.cos(math.pi / n)
    sector = np.mod(theta, 2 * math.pi / n) - math.pi / n
    return r * np.cos(sector) <= apothem


def _hsv(h, s, v):
    import colorsys
    return np.array(colorsys.hsv_to_rgb(h % 1.0, s, v))


def _texture(rng, resolution, size):
    """Unit-scale grayscale texture: pixel grain plus a smooth field on a coarse grid."""
    grain = np.kron(rng.normal(0, 1, size=(resolution, resolution)), np.ones((size // resolution,) * 2))
    coarse = resize(rng.normal(0, 1, size=(_COARSE_GRID, _COARSE_GRID)), (size, size), order=3, mode='reflect')
    return (grain + coarse)[..., None]


def _appearance(spec: ToyDomainSpec, index: int, size):
    rng = np.random.default_rng([spec.seed, index, 1])
    c = (np.arange(size) + 0.5) / size
    yy, xx = np.meshgrid(c, c, indexing='ij')
    bg_top = _hsv(rng.uniform(0.55, 0.75), 0.5, rng.uniform(0.45, 0.55))
    bg_bot = _hsv(rng.uniform(0.55, 0.75), 0.5, rng.uniform(0.35, 0.45))
    bg = bg_top[None, None] * (1 - yy[..., None]) + bg_bot[None, None] * yy[..., None]
    fg = _hsv(rng.uniform(*PALETTES[spec.palette]), rng.uniform(0.6, 0.9), rng.uniform(0.7, 0.8))
    fg = np.broadcast_to(fg, bg.shape).copy()
    angle = rng.uniform(0, math.pi)
    freq = rng.uniform(4, 6)
    phase = rng.uniform(0, 2 * math.pi)
    stripes = np.sin(2 * math.pi * freq * (xx * math.cos(angle) + yy * math.sin(angle)) + phase)
    dots = np.sin(2 * math.pi * 2 * freq * xx) * np.sin(2 * math.pi * 2 * freq * yy)
    # Gray and additive, so chroma is unchanged wherever nothing clips.
    bg = bg + spec.texture_amplitude * stripes[..., None] + spec.noise_amplitude * _texture(rng, spec.resolution, size)
    return bg, fg + spec.texture_amplitude * dots[..., None]


def render(spec: ToyDomainSpec, index: int):
    """Render image ``index`` of a domain as a ``[3, R, R]`` float32 array in [-1, 1]."""
    size = spec.resolution * _SUPERSAMPLE
    geo = _geometry(spec, index)
    mask = _mask(geo, size)[..., None]
    bg, fg = _appearance(spec, index, size)
    img = np.where(mask, fg, bg)
    img = img.reshape(spec.resolution, _SUPERSAMPLE, spec.resolution, _SUPERSAMPLE, 3).mean(axis=(1, 3))
    img = np.clip(img, 0, 1) * 2 - 1
    return img.transpose(2, 0, 1).astype(np.float32)


def binarize(image):
    """Foreground mask of a rendered image.

    Uses the red-minus-blue chroma, which the gray textures leave untouched
    and which is linear in edge coverage, with a per-image Otsu threshold.
    """
    image = np.asarray(image, dtype=np.float64)
    chroma = image[0] - image[2]
    return chroma > threshold_otsu(chroma)


def render_batch(spec: ToyDomainSpec, count=None, start=0):
    count = spec.count if count is None else count
    return torch.from_numpy(np.stack([render(spec, start + i) for i in range(count)]))


def make_dataset(spec: ToyDomainSpec, root):
    """Write ``root/<domain>/<index>.png`` plus ``manifest.json``; return the manifest."""
    out = Path(root) / spec.domain
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise OSError(f'cannot create dataset directory {out}: {e}') from e
    entries = []
    for i in range(spec.count):
        img = render(spec, i)
        name = f'{i:06d}.png'
        write_png(out / name, img)
        entries.append({'index': i, 'file': name, 'seed': [spec.seed, i]})
    manifest = {'spec': asdict(spec), 'images': entries}
    write_json(out / 'manifest.json', manifest)
    return manifest


def load_dataset(directory):
    """Load every image listed in a dataset manifest into a ``[N, 3, R, R]`` tensor."""
    directory = Path(directory)
    manifest = json.loads((directory / 'manifest.json').read_text())
    if not manifest['images']:
        raise ValueError(f'dataset {directory} is empty')
    return torch.stack([read_png(directory / e['file']) for e in manifest['images']])
