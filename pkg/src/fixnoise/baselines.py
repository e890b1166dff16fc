"""Layer-based baselines sharing one cut index ``i``.

* ``layer_swap``: units below ``i`` from the source, the rest from the target.
* ``freeze_g_transfer``: plain fine-tuning with units below ``i`` frozen.
* ``ui2i_variant``: fine-tuning with the mapping network frozen, then a swap.

Cut indices follow :mod:`fixnoise.layers`.
"""

from __future__ import annotations

import copy
from pathlib import Path

import torch

from .checkpoint import Checkpoint, file_hash, load_checkpoint
from .layers import below_cut
from .networks import Generator
from .training import ConfigError, TrainConfig, make_transfer_trainer, train


def _layer_of(key):
    # The tracked mean style belongs with the mapping network.
    return 'mapping.w_avg' if key == 'w_avg' else key


def layer_swap(src: Generator, tgt: Generator, i: int) -> Generator:
    """Hybrid generator taking every unit with index ``< i`` from ``src`` and the rest from ``tgt``.

    The mapping network (and its mean style) comes from ``tgt`` unless
    ``i == total_layers``, where the result is a copy of ``src``.
    """
    if src.spec != tgt.spec:
        raise ValueError('source and target generators have different specs')
    spec = src.spec
    if not 0 <= i <= spec.total_layers:
        raise ValueError(f'layer index {i} outside [0, {spec.total_layers}]')
    s_state, t_state = src.state_dict(), tgt.state_dict()
    state = {k: (s_state[k] if below_cut(spec, _layer_of(k), i) else t_state[k]).detach().clone()
             for k in t_state}
    out = Generator(spec)
    out.load_state_dict(state, strict=True)
    return out.requires_grad_(False).eval()


def swap_checkpoints(src_ckpt: Checkpoint, tgt_ckpt: Checkpoint, i: int, parents=None) -> Checkpoint:
    """Derived checkpoint whose generators are swaps of the two EMA generators."""
    hybrid = layer_swap(src_ckpt.G_ema, tgt_ckpt.G_ema, i)
    meta = {'kind': 'layer_swap', 'i': i, 'parents': dict(parents or {})}
    return Checkpoint(hybrid, copy.deepcopy(hybrid), None, tgt_ckpt.anchor or src_ckpt.anchor, meta)


def _source(src_ckpt):
    if isinstance(src_ckpt, (str, Path)):
        return load_checkpoint(src_ckpt), {'source': file_hash(src_ckpt)}
    return src_ckpt, {}


def freeze_g_transfer(src_ckpt, i: int, config: TrainConfig, data: torch.Tensor, run_dir=None, **kw):
    """Plain fine-tuning (``lambda_fm = 0``) with generator units below ``i`` frozen.

    Returns ``(checkpoint, reports)``.
    """
    ckpt, parents = _source(src_ckpt)
    total = ckpt.spec.total_layers
    if not 0 <= i <= total:
        raise ConfigError('i', f'layer index {i} outside [0, {total}]')
    cfg = TrainConfig(**{**config.to_dict(), 'lambda_fm': 0.0, 'freeze_layers': i})
    trainer = make_transfer_trainer(ckpt, cfg)
    meta = {'kind': 'freeze_g', 'i': i, 'parents': parents}
    reports = train(trainer, data, run_dir=run_dir, meta=meta, **kw)
    return trainer.checkpoint(meta), reports


def ui2i_train(src_ckpt, config: TrainConfig, data: torch.Tensor, run_dir=None, **kw):
    """Plain fine-tuning with the mapping network frozen; returns ``(checkpoint, reports)``."""
    ckpt, parents = _source(src_ckpt)
    cfg = TrainConfig(**{**config.to_dict(), 'lambda_fm': 0.0, 'freeze_mapping': True})
    trainer = make_transfer_trainer(ckpt, cfg)
    meta = {'kind': 'ui2i', 'parents': parents}
    reports = train(trainer, data, run_dir=run_dir, meta=meta, **kw)
    return trainer.checkpoint(meta), reports


def ui2i_variant(src_ckpt, i: int, config: TrainConfig, data: torch.Tensor, run_dir=None, **kw) -> Generator:
    """Frozen-mapping fine-tuning followed by ``layer_swap`` against the source at ``i``."""
    ckpt, _ = _source(src_ckpt)
    if not 0 <= i <= ckpt.spec.total_layers:
        raise ConfigError('i', f'layer index {i} outside [0, {ckpt.spec.total_layers}]')
    trained, _ = ui2i_train(ckpt, config, data, run_dir=run_dir, **kw)
    return layer_swap(ckpt.G_ema, trained.G_ema, i)
