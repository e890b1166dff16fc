"""Checkpoint archives.

A checkpoint is one file::

    FIXNOISE-CKPT\\n
    {"format": "fixnoise-ckpt-1", "sha256": ..., "size": ...}\\n
    <torch.save payload>

The payload holds parameter tensors keyed ``{role}.{layer}.{name}`` for the
generator (``G``), its EMA copy (``G_ema``) and optionally the discriminator
(``D``), the tracked mean styles, the spec, the anchor point and free-form
metadata. The header checksum covers the whole payload.
"""

from __future__ import annotations

import copy
import hashlib
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import torch

from .anchor import AnchorPoint
from .data import _atomic_write
from .networks import Discriminator, Generator, GeneratorSpec, NoiseField

FORMAT_VERSION = 'fixnoise-ckpt-1'
MAGIC = b'FIXNOISE-CKPT\n'


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    G: Generator
    G_ema: Generator
    D: Discriminator | None = None
    anchor: AnchorPoint | None = None
    meta: dict = field(default_factory=dict)

    @property
    def spec(self) -> GeneratorSpec:
        return self.G.spec

    def copy(self):
        return copy.deepcopy(self)


def _params(module):
    return {k: v.detach().cpu().clone() for k, v in module.state_dict().items() if k != 'w_avg'}


def _load_params(module, params, w_avg=None):
    state = dict(params)
    if w_avg is not None:
        state['w_avg'] = w_avg
    module.load_state_dict(state, strict=True)


def to_bytes(ckpt: Checkpoint) -> bytes:
    payload = {
        'format': FORMAT_VERSION,
        'spec': ckpt.spec.to_dict(),
        'G': _params(ckpt.G),
        'G_ema': _params(ckpt.G_ema),
        'D': None if ckpt.D is None else _params(ckpt.D),
        'w_avg': {'G': ckpt.G.w_avg.detach().cpu().clone(),
                  'G_ema': ckpt.G_ema.w_avg.detach().cpu().clone()},
        'anchor': None if ckpt.anchor is None else {
            'seed': ckpt.anchor.seed,
            'created_at': ckpt.anchor.created_at,
            'maps': [m.detach().cpu().clone() for m in ckpt.anchor.noise.maps],
        },
        'meta': ckpt.meta,
    }
    buf = io.BytesIO()
    torch.save(payload, buf)
    body = buf.getvalue()
    header = json.dumps({'format': FORMAT_VERSION, 'sha256': hashlib.sha256(body).hexdigest(),
                         'size': len(body)}, sort_keys=True).encode()
    return MAGIC + header + b'\n' + body


def from_bytes(raw: bytes) -> Checkpoint:
    if not raw.startswith(MAGIC):
        raise CheckpointError('not a fixnoise checkpoint (bad magic)')
    rest = raw[len(MAGIC):]
    nl = rest.find(b'\n')
    try:
        header = json.loads(rest[:nl].decode())
    except (ValueError, UnicodeDecodeError) as e:
        raise CheckpointError(f'corrupt checkpoint header: {e}') from e
    if header.get('format') != FORMAT_VERSION:
        raise CheckpointError(f'unsupported checkpoint format {header.get("format")!r}, expected {FORMAT_VERSION!r}')
    body = rest[nl + 1:]
    if len(body) != header.get('size') or hashlib.sha256(body).hexdigest() != header.get('sha256'):
        raise CheckpointError('checkpoint checksum mismatch (file is corrupted)')
    payload = torch.load(io.BytesIO(body), map_location='cpu', weights_only=True)
    if payload.get('format') != FORMAT_VERSION:
        raise CheckpointError(f'unsupported payload format {payload.get("format")!r}')

    spec = GeneratorSpec.from_dict(payload['spec'])
    G, G_ema = Generator(spec), Generator(spec)
    _load_params(G, payload['G'], payload['w_avg']['G'])
    _load_params(G_ema, payload['G_ema'], payload['w_avg']['G_ema'])
    D = None
    if payload['D'] is not None:
        D = Discriminator(spec)
        _load_params(D, payload['D'])
    anchor = None
    if payload['anchor'] is not None:
        a = payload['anchor']
        anchor = AnchorPoint(NoiseField(list(a['maps']), a['seed']), a['seed'], a['created_at'])
    return Checkpoint(G, G_ema, D, anchor, payload['meta'])


def save_checkpoint(path, ckpt: Checkpoint):
    raw = to_bytes(ckpt)
    _atomic_write(Path(path), lambda p: Path(p).write_bytes(raw))
    return hashlib.sha256(raw).hexdigest()


def load_checkpoint(path) -> Checkpoint:
    return from_bytes(Path(path).read_bytes())


def file_hash(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
