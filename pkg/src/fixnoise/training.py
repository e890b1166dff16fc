"""Source training and FixNoise transfer.

One step of :class:`Trainer` does, in this order:

1. Generator update. ``adv`` is the non-saturating loss of images made from
   fresh latents and fresh per-sample noise. ``fm`` compares the frozen source
   generator and the trainable target on the same latents, both evaluated at
   the anchor noise (or at independent random noise when ``fm_noise='random'``).
   The gradient of ``adv + lambda_fm * fm`` updates the target.
2. Optional path length regularization (every ``pl_interval`` steps).
3. Discriminator update with the logistic loss and lazy R1 every
   ``r1_interval`` steps (weighted by the interval).
4. EMA update of the generator copy used for evaluation.

All randomness in a step comes from ``Trainer.rng`` in exactly that order,
and minibatches of real images from ``Trainer.data_rng``, so two runs with the
same seeds produce the same loss trace.
"""

from __future__ import annotations

import copy
import csv
import logging
import math
from collections import deque
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import torch
import torch.nn.functional as F

from .anchor import AnchorPoint
from .checkpoint import Checkpoint, file_hash, load_checkpoint, save_checkpoint
from .layers import below_cut
from .losses import (MATCH_SPACES, discriminator_loss, fm_loss, generator_adv_loss,
                     r1_penalty, total_generator_loss)
from .networks import Discriminator, Generator, GeneratorSpec, NoiseField, random_noise

log = logging.getLogger(__name__)

FM_NOISE_MODES = ('anchor', 'random')


class ConfigError(ValueError):
    """Invalid configuration; ``key`` names the offending field."""

    def __init__(self, key, message):
        super().__init__(f'{key}: {message}')
        self.key = key


class NumericalError(RuntimeError):
    """A loss became non-finite. ``snapshot`` holds the state at failure."""

    def __init__(self, message, snapshot):
        super().__init__(message)
        self.snapshot = snapshot


@dataclass
class TrainConfig:
    lambda_fm: float = 0.05
    batch_size: int = 32
    total_images: int = 200_000
    g_lr: float = 2.5e-3
    d_lr: float = 2.5e-3
    beta1: float = 0.0
    beta2: float = 0.99
    r1_gamma: float = 1.0
    r1_interval: int = 16
    ema_decay: float = 0.995
    match_space: str = 'H'
    fm_noise: str = 'anchor'
    style_mixing_prob: float = 0.0
    path_length_weight: float = 0.0
    pl_interval: int = 4
    mirror: bool = False
    freeze_layers: int = 0
    freeze_mapping: bool = False
    seed: int = 0
    anchor_seed: int = 1234
    history: int = 10_000

    def validate(self):
        def check(name, ok, msg):
            if not ok:
                raise ConfigError(name, msg)
        check('lambda_fm', math.isfinite(self.lambda_fm) and self.lambda_fm >= 0, 'must be finite and >= 0')
        check('batch_size', self.batch_size >= 1, 'must be >= 1')
        check('total_images', self.total_images >= 0, 'must be >= 0')
        check('g_lr', self.g_lr >= 0, 'must be >= 0')
        check('d_lr', self.d_lr >= 0, 'must be >= 0')
        check('beta1', 0 <= self.beta1 < 1, 'must be in [0, 1)')
        check('beta2', 0 <= self.beta2 < 1, 'must be in [0, 1)')
        check('r1_gamma', self.r1_gamma >= 0, 'must be >= 0')
        check('r1_interval', self.r1_interval >= 1, 'must be >= 1')
        check('ema_decay', 0 < self.ema_decay < 1, 'must be in (0, 1)')
        check('match_space', self.match_space in MATCH_SPACES, f'must be one of {MATCH_SPACES}')
        check('fm_noise', self.fm_noise in FM_NOISE_MODES, f'must be one of {FM_NOISE_MODES}')
        check('style_mixing_prob', 0 <= self.style_mixing_prob <= 1, 'must be in [0, 1]')
        check('path_length_weight', self.path_length_weight >= 0, 'must be >= 0')
        check('pl_interval', self.pl_interval >= 1, 'must be >= 1')
        check('freeze_layers', self.freeze_layers >= 0, 'must be >= 0')
        return self

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        for k in d:
            if k not in known:
                raise ConfigError(k, 'unknown training option')
        return cls(**d).validate()

    def to_dict(self):
        return asdict(self)


@dataclass
class LossReport:
    step: int
    adv: float
    fm: float
    total: float
    d_loss: float
    r1: float = float('nan')
    n_layers: int = 0

    def as_row(self):
        return [self.step, self.adv, self.fm, self.total, self.d_loss]


LOSS_COLUMNS = ['step', 'adv', 'fm', 'total', 'd_loss']


def seeded(factory, seed):
    """Build modules under a private RNG state seeded with ``seed``."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return factory()


def new_models(spec: GeneratorSpec, seed: int):
    G = seeded(lambda: Generator(spec), seed)
    D = seeded(lambda: Discriminator(spec), seed + 1)
    return G, D


def _finite(x):
    return math.isfinite(float(x.detach()) if isinstance(x, torch.Tensor) else float(x))


@dataclass
class TrainState:
    step: int = 0
    images_seen: int = 0
    pl_mean: float = 0.0
    history: deque = field(default_factory=lambda: deque(maxlen=10_000))


class Trainer:
    """Owns a target generator, its EMA copy, a discriminator and both optimizers.

    With ``src=None`` the feature matching term is off (source training).
    Parameters are mutated only inside :meth:`step`.
    """

    def __init__(self, G: Generator, D: Discriminator, config: TrainConfig, src: Generator | None = None,
                 anchor: AnchorPoint | None = None, G_ema: Generator | None = None):
        config.validate()
        self.config = config
        self.G, self.D, self.src = G, D, src
        self.spec = G.spec
        if src is not None:
            if src.spec != G.spec:
                raise ConfigError('source', 'source and target generators have different specs')
            src.requires_grad_(False).eval()
            if config.fm_noise == 'anchor' and anchor is None:
                raise ConfigError('anchor_seed', 'anchored feature matching needs an anchor point')
        total = self.spec.total_layers
        if config.freeze_layers > total:
            raise ConfigError('freeze_layers', f'must be in [0, {total}]')
        self.anchor = anchor
        self.G_ema = copy.deepcopy(G) if G_ema is None else G_ema
        self.G_ema.requires_grad_(False).eval()

        self.frozen = set()
        for name, p in G.named_parameters():
            if below_cut(self.spec, name, config.freeze_layers) or (
                    config.freeze_mapping and name.startswith('mapping.')):
                p.requires_grad_(False)
                self.frozen.add(name)
        self.mapping_frozen = all(n in self.frozen for n, _ in G.named_parameters() if n.startswith('mapping.'))
        trainable = [p for n, p in G.named_parameters() if n not in self.frozen]
        betas = (config.beta1, config.beta2)
        self.G_opt = torch.optim.Adam(trainable, lr=config.g_lr, betas=betas, eps=1e-8) if trainable else None
        self.D_opt = torch.optim.Adam(D.parameters(), lr=config.d_lr, betas=betas, eps=1e-8)

        spaces = {'H': self.spec.num_feature_layers, 'RGB': len(self.spec.resolutions), 'IMAGE': 1}
        self.n_matched = spaces[config.match_space] if src is not None else 0
        self.rng = torch.Generator().manual_seed(config.seed)
        self.data_rng = torch.Generator().manual_seed(config.seed + 1)
        self.state = TrainState(history=deque(maxlen=config.history))

    # ------------------------------------------------------------------

    def _latents(self, batch):
        return torch.randn(batch, self.spec.z_dim, generator=self.rng)

    def _styles(self, z, mixing):
        G = self.G
        ws = G.map(z)
        if not self.mapping_frozen:
            G.update_w_avg(ws)
        ws = ws[:, None].expand(-1, self.spec.num_ws, -1)
        if mixing > 0:
            u = torch.rand([], generator=self.rng).item()
            z2 = self._latents(z.shape[0])
            cutoff = int(torch.randint(1, self.spec.num_ws, [], generator=self.rng))
            if u < mixing:
                ws = ws.clone()
                ws[:, cutoff:] = G.map(z2)[:, None]
        return ws

    def _fake(self, batch, mixing=0.0):
        z = self._latents(batch)
        ws = self._styles(z, mixing)
        noise = random_noise(self.spec, batch, self.rng)
        return z, self.G.synthesis(ws, noise)['image']

    def sample_real(self, data):
        idx = torch.randint(0, data.shape[0], (self.config.batch_size,), generator=self.data_rng)
        return data[idx]

    def _augment(self, images):
        if not self.config.mirror:
            return images
        flip = torch.rand(images.shape[0], generator=self.rng) < 0.5
        return torch.where(flip[:, None, None, None], images.flip(3), images)

    def fm_term(self, z):
        cfg = self.config
        if self.src is None:
            return None
        if cfg.fm_noise == 'anchor':
            return fm_loss(self.src, self.G, z, self.anchor.noise, space=cfg.match_space)
        n_s = random_noise(self.spec, z.shape[0], self.rng)
        n_t = random_noise(self.spec, z.shape[0], self.rng)
        return fm_loss(self.src, self.G, z, n_s, n_t, space=cfg.match_space)

    def _snapshot(self, **values):
        return {'step': self.state.step, 'images_seen': self.state.images_seen,
                'recent': [asdict(r) for r in list(self.state.history)[-10:]], **values}

    def step(self, real: torch.Tensor) -> LossReport:
        cfg, st = self.config, self.state
        G, D = self.G, self.D
        B = real.shape[0]
        G.train()
        D.requires_grad_(False)

        # Generator.
        z, fake = self._fake(B, cfg.style_mixing_prob)
        adv = generator_adv_loss(D, fake)
        if self.src is None:
            fm_val, g_loss = 0.0, adv
        elif cfg.lambda_fm > 0:
            fm = self.fm_term(z)
            fm_val = float(fm.detach())
            g_loss = total_generator_loss(adv, fm, cfg.lambda_fm)
        else:
            with torch.no_grad():
                fm_val = float(self.fm_term(z))
            g_loss = adv
        if not (_finite(g_loss) and _finite(fm_val)):
            raise NumericalError(f'non-finite generator loss at step {st.step}',
                                 self._snapshot(adv=float(adv.detach()), fm=fm_val))
        if self.G_opt is not None:
            self.G_opt.zero_grad(set_to_none=True)
            g_loss.backward()
            self.G_opt.step()

        if cfg.path_length_weight > 0 and self.G_opt is not None and st.step % cfg.pl_interval == 0:
            self._path_length_step(max(B // 2, 1))

        # Discriminator.
        D.requires_grad_(True)
        with torch.no_grad():
            _, fake = self._fake(B)
        real = self._augment(real)
        do_r1 = cfg.r1_gamma > 0 and st.step % cfg.r1_interval == 0
        gamma = cfg.r1_gamma * cfg.r1_interval if do_r1 else 0.0
        d_loss = discriminator_loss(D, real, fake, gamma)
        if not _finite(d_loss):
            raise NumericalError(f'non-finite discriminator loss at step {st.step}',
                                 self._snapshot(adv=float(adv.detach()), fm=fm_val, d_loss=float(d_loss.detach())))
        self.D_opt.zero_grad(set_to_none=True)
        d_loss.backward()
        self.D_opt.step()

        self.update_ema()
        adv_val = float(adv.detach())
        report = LossReport(
            step=st.step, adv=adv_val, fm=fm_val,
            total=total_generator_loss(adv_val, fm_val, cfg.lambda_fm) if self.src is not None else adv_val,
            d_loss=float(d_loss.detach()), n_layers=self.n_matched)
        st.step += 1
        st.images_seen += B
        st.history.append(report)
        return report

    def _path_length_step(self, batch):
        cfg, st = self.config, self.state
        z = self._latents(batch)
        ws = self.G.map(z)[:, None].expand(-1, self.spec.num_ws, -1).detach().requires_grad_(True)
        img = self.G.synthesis(ws, random_noise(self.spec, batch, self.rng))['image']
        res = self.spec.resolution
        pl_noise = torch.randn(img.shape, generator=self.rng) / res
        (grad,) = torch.autograd.grad((img * pl_noise).sum(), ws, create_graph=True)
        lengths = grad.square().sum(2).mean(1).sqrt()
        st.pl_mean = st.pl_mean + 0.01 * (float(lengths.mean().detach()) - st.pl_mean)
        penalty = (lengths - st.pl_mean).square().mean() * cfg.path_length_weight * cfg.pl_interval
        self.G_opt.zero_grad(set_to_none=True)
        penalty.backward()
        self.G_opt.step()

    @torch.no_grad()
    def update_ema(self):
        beta = self.config.ema_decay
        for p_ema, p in zip(self.G_ema.parameters(), self.G.parameters()):
            p_ema.copy_(p.detach().lerp(p_ema, beta))
        for b_ema, b in zip(self.G_ema.buffers(), self.G.buffers()):
            b_ema.copy_(b)

    # ------------------------------------------------------------------

    def checkpoint(self, meta=None) -> Checkpoint:
        meta = dict(meta or {})
        meta.update(step=self.state.step, images_seen=self.state.images_seen, config=self.config.to_dict())
        return Checkpoint(copy.deepcopy(self.G), copy.deepcopy(self.G_ema), copy.deepcopy(self.D),
                          self.anchor, meta)


def transfer_step(trainer: Trainer, real: torch.Tensor) -> LossReport:
    return trainer.step(real)


def train(trainer: Trainer, data: torch.Tensor, total_images=None, run_dir=None, snapshot_every=0,
          meta=None, log_every=100, progress=None) -> list:
    """Run ``trainer`` until ``total_images`` have been shown; return the loss reports.

    With ``run_dir`` set, writes ``loss.csv`` and, every ``snapshot_every``
    steps, ``snapshot-{step:06d}.ckpt``. A non-finite loss writes
    ``abort.json`` next to them before re-raising.
    """
    if data.shape[0] == 0:
        raise ConfigError('dataset', 'dataset is empty')
    cfg = trainer.config
    total_images = cfg.total_images if total_images is None else total_images
    steps = math.ceil(total_images / cfg.batch_size)
    reports = []
    writer = fh = None
    if run_dir is not None:
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        fh = open(run_dir / 'loss.csv', 'w', newline='')
        writer = csv.writer(fh)
        writer.writerow(LOSS_COLUMNS)
    try:
        for _ in range(steps):
            real = trainer.sample_real(data)
            try:
                rep = trainer.step(real)
            except NumericalError as e:
                if run_dir is not None:
                    from .data import write_json
                    write_json(run_dir / 'abort.json', {'error': str(e), 'snapshot': e.snapshot})
                raise
            reports.append(rep)
            if writer is not None:
                writer.writerow([rep.step, repr(rep.adv), repr(rep.fm), repr(rep.total), repr(rep.d_loss)])
            if log_every and rep.step % log_every == 0:
                log.info('step %d  adv %.4f  fm %.4f  d %.4f', rep.step, rep.adv, rep.fm, rep.d_loss)
            if progress is not None:
                progress(rep)
            if run_dir is not None and snapshot_every and trainer.state.step % snapshot_every == 0:
                save_checkpoint(run_dir / f'snapshot-{trainer.state.step:06d}.ckpt', trainer.checkpoint(meta))
    finally:
        if fh is not None:
            fh.close()
    return reports


# ----------------------------------------------------------------------------

def train_source(data: torch.Tensor, config: TrainConfig, spec: GeneratorSpec | None = None, run_dir=None,
                 **kw) -> Checkpoint:
    """Plain GAN training (no feature matching) from a seeded initialization."""
    config.validate()
    if data.shape[0] == 0:
        raise ConfigError('dataset', 'dataset is empty')
    spec = spec or GeneratorSpec()
    G, D = new_models(spec, config.seed)
    trainer = Trainer(G, D, config)
    train(trainer, data, run_dir=run_dir, **kw)
    return trainer.checkpoint({'kind': 'source'})


def init_transfer(src_ckpt, anchor_seed: int):
    """Target generator, discriminator and anchor for a transfer run.

    Both the target and the reference source are copies of the source EMA
    generator; the discriminator is a copy of the source discriminator.
    """
    if isinstance(src_ckpt, (str, Path)):
        src_ckpt = load_checkpoint(src_ckpt)
    if src_ckpt.D is None:
        raise ValueError('source checkpoint has no discriminator; cannot initialize transfer')
    tgt = copy.deepcopy(src_ckpt.G_ema).requires_grad_(True).train()
    D = copy.deepcopy(src_ckpt.D).requires_grad_(True)
    anchor = AnchorPoint.create(src_ckpt.spec, anchor_seed)
    return tgt, D, anchor


def make_transfer_trainer(src_ckpt: Checkpoint, config: TrainConfig):
    config.validate()
    tgt, D, anchor = init_transfer(src_ckpt, config.anchor_seed)
    src = copy.deepcopy(src_ckpt.G_ema)
    return Trainer(tgt, D, config, src=src, anchor=anchor)


def run_transfer(src_path, data: torch.Tensor, config: TrainConfig, run_dir=None, kind='fixnoise', **kw):
    """Full transfer run; returns ``(checkpoint, reports)``."""
    src_ckpt = load_checkpoint(src_path) if isinstance(src_path, (str, Path)) else src_path
    trainer = make_transfer_trainer(src_ckpt, config)
    meta = {'kind': kind, 'anchor_seed': config.anchor_seed}
    if isinstance(src_path, (str, Path)):
        meta['parent'] = file_hash(src_path)
    reports = train(trainer, data, run_dir=run_dir, meta=meta, **kw)
    return trainer.checkpoint(meta), reports
