"""Command line interface.

Every command writes into a fresh run directory under the output root
(``--out``, else ``$FIXNOISE_OUT``, else ``./runs``) together with
``run.json`` holding the resolved config, its hash and the seeds. Options
given on the command line override keys from the ``--config`` YAML file.

Exit codes: 0 ok, 2 invalid configuration, 3 numerical abort.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

import click
import yaml

from .training import ConfigError, NumericalError

EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
OUT_ENV = 'FIXNOISE_OUT'
REPORT_COLUMNS = ('method', 'α_or_i', 'fid', 'kid_x1e3', 'lpips_proxy', 'ps')

log = logging.getLogger('fixnoise')


# ----------------------------------------------------------------------------
# Experiment config.

SECTIONS = {
    'data': {'domain': 'B', 'count': 2000, 'seed': None, 'resolution': 32},
    'source': {},
    'transfer': {'kind': 'fixnoise', 'i': 0},
    'sweep': {'alphas': [1.0, 0.75, 0.5, 0.25, 0.0], 'samples': 8, 'seed': 0},
    'eval': {'alphas': [1.0, 0.75, 0.5, 0.25, 0.0], 'n_samples': 512, 'n_real': 2000, 'seed': 0,
             'levels': None, 'method': 'fixnoise'},
    'inversion': {},
}
TRANSFER_KINDS = ('fixnoise', 'plain', 'freeze_g', 'ui2i')


@dataclass
class ExperimentConfig:
    seed: int = 0
    out_dir: str | None = None
    data: dict = field(default_factory=dict)
    source: dict = field(default_factory=dict)
    transfer: dict = field(default_factory=dict)
    sweep: dict = field(default_factory=dict)
    eval: dict = field(default_factory=dict)
    inversion: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d):
        d = dict(d or {})
        known = {f.name for f in fields(cls)}
        for k in d:
            if k not in known:
                raise ConfigError(k, 'unknown config section')
        cfg = cls(**d)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path):
        if path is None:
            return cls.from_dict({})
        try:
            raw = yaml.safe_load(Path(path).read_text()) or {}
        except yaml.YAMLError as e:
            raise ConfigError('config', f'cannot parse {path}: {e}') from e
        if not isinstance(raw, dict):
            raise ConfigError('config', 'top level must be a mapping')
        return cls.from_dict(raw)

    def validate(self):
        from .inversion import InversionConfig
        from .training import TrainConfig

        if not isinstance(self.seed, int):
            raise ConfigError('seed', 'must be an integer')
        for name, defaults in SECTIONS.items():
            section = getattr(self, name)
            if not isinstance(section, dict):
                raise ConfigError(name, 'must be a mapping')
            train_keys = {f.name for f in fields(TrainConfig)}
            inv_keys = {f.name for f in fields(InversionConfig)}
            allowed = set(defaults) | (train_keys if name in ('source', 'transfer') else set()) \
                | (inv_keys if name == 'inversion' else set())
            for k in section:
                if k not in allowed:
                    raise ConfigError(f'{name}.{k}', 'unknown key')
        self.train_config('source')
        self.train_config('transfer')
        self.inversion_config()
        if self.transfer_opts()['kind'] not in TRANSFER_KINDS:
            raise ConfigError('transfer.kind', f'must be one of {TRANSFER_KINDS}')
        if self.data_opts()['domain'] not in ('A', 'B'):
            raise ConfigError('data.domain', "must be 'A' or 'B'")
        for section in ('sweep', 'eval'):
            alphas = self.section(section)['alphas']
            if any(not 0 <= float(a) <= 1 for a in alphas):
                raise ConfigError(f'{section}.alphas', 'values must be in [0, 1]')
        return self

    def section(self, name):
        return {**SECTIONS[name], **getattr(self, name)}

    def data_opts(self):
        return self.section('data')

    def transfer_opts(self):
        return self.section('transfer')

    def train_config(self, name):
        from .training import TrainConfig

        keys = {f.name for f in fields(TrainConfig)}
        opts = {k: v for k, v in self.section(name).items() if k in keys}
        opts.setdefault('seed', self.seed)
        try:
            return TrainConfig(**opts).validate()
        except ConfigError as e:
            raise ConfigError(f'{name}.{e.key}', str(e).split(': ', 1)[-1]) from e
        except TypeError as e:
            raise ConfigError(name, str(e)) from e

    def inversion_config(self):
        from .inversion import InversionConfig

        opts = dict(self.inversion)
        opts.setdefault('seed', self.seed)
        try:
            return InversionConfig(**opts)
        except ValueError as e:
            raise ConfigError('inversion', str(e)) from e

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def digest(self):
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True, default=str).encode()).hexdigest()


# ----------------------------------------------------------------------------
# Helpers.

def parse_floats(text, key='alphas'):
    if text is None:
        return None
    try:
        return [float(t) for t in str(text).split(',') if t.strip()]
    except ValueError as e:
        raise ConfigError(key, f'expected a comma-separated list of numbers, got {text!r}') from e


def parse_ints(text, key='levels'):
    if text is None:
        return None
    try:
        return [int(t) for t in str(text).split(',') if t.strip()]
    except ValueError as e:
        raise ConfigError(key, f'expected a comma-separated list of integers, got {text!r}') from e


def _override(cfg: ExperimentConfig, section, **values):
    sec = dict(getattr(cfg, section))
    sec.update({k: v for k, v in values.items() if v is not None})
    setattr(cfg, section, sec)


def _out_root(ctx, cfg):
    return Path(ctx.obj.get('out') or cfg.out_dir or os.environ.get(OUT_ENV) or 'runs')


def new_run_dir(root, command, cfg: ExperimentConfig, name=None):
    """A fresh directory ``root/<command>-<hash>[-n]`` (or ``root/<name>``); never reuses one."""
    root = Path(root)
    base = name or f'{command}-{cfg.digest()[:8]}'
    run = root / base
    n = 1
    while run.exists():
        if name:
            raise ConfigError('run_name', f'run directory {run} already exists')
        run = root / f'{base}-{n}'
        n += 1
    run.mkdir(parents=True)
    return run


def write_run_meta(run, command, cfg: ExperimentConfig, **extra):
    from .data import write_json
    write_json(run / 'run.json', {'command': command, 'config': cfg.to_dict(), 'config_hash': cfg.digest(),
                                  'seed': cfg.seed, **extra})


def write_report(run, report):
    from .data import write_json
    write_json(run / f'report-{report.method}-{report.level}.json', report.to_dict())


def _load_images(path):
    from .data import load_dataset, read_png
    import torch

    path = Path(path)
    if path.is_dir():
        if (path / 'manifest.json').exists():
            return load_dataset(path), None
        files = sorted(path.glob('*.png'))
        if not files:
            raise ConfigError('images', f'no PNG files in {path}')
        return torch.stack([read_png(f) for f in files]), files
    if not path.exists():
        raise ConfigError('images', f'{path} does not exist')
    return read_png(path)[None], [path]


def _load_data(path):
    from .data import load_dataset

    path = Path(path)
    if not (path / 'manifest.json').exists():
        raise ConfigError('data', f'{path} is not a dataset directory (no manifest.json)')
    return load_dataset(path)


def _ckpt(path, key='ckpt'):
    from .checkpoint import CheckpointError, load_checkpoint

    try:
        return load_checkpoint(path)
    except FileNotFoundError as e:
        raise ConfigError(key, f'{path} does not exist') from e
    except CheckpointError as e:
        raise ConfigError(key, str(e)) from e


def _context(ctx, command, **overrides):
    cfg = ctx.obj['config']
    for section, values in overrides.items():
        _override(cfg, section, **values)
    cfg.validate()
    return cfg


class Command(click.Command):
    """Maps config and numerical errors to the documented exit codes."""

    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except ConfigError as e:
            click.echo(f'config error: {e}', err=True)
            ctx.exit(EXIT_CONFIG)
        except NumericalError as e:
            click.echo(f'numerical abort: {e}', err=True)
            ctx.exit(EXIT_NUMERICAL)


@click.group()
@click.option('--config', 'config_path', type=click.Path(dir_okay=False), default=None,
              help='YAML experiment config.')
@click.option('--out', default=None, help=f'Output root (default ${OUT_ENV} or ./runs).')
@click.option('--run-name', default=None, help='Name of the run directory (must not exist).')
@click.option('-v', '--verbose', is_flag=True)
@click.pass_context
def main(ctx, config_path, out, run_name, verbose):
    """Controllable domain transfer with an anchored noise input."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format='%(message)s')
    ctx.ensure_object(dict)
    ctx.obj.update(out=out, run_name=run_name)
    try:
        ctx.obj['config'] = ExperimentConfig.load(config_path)
    except (ConfigError, FileNotFoundError) as e:
        click.echo(f'config error: {e}', err=True)
        ctx.exit(EXIT_CONFIG)


def _run(ctx, command, cfg, **meta):
    run = new_run_dir(_out_root(ctx, cfg), command, cfg, ctx.obj.get('run_name'))
    write_run_meta(run, command, cfg, **meta)
    return run


@main.command('make-data', cls=Command)
@click.option('--domain', type=click.Choice(['A', 'B']), default=None)
@click.option('--count', type=int, default=None)
@click.option('--seed', type=int, default=None)
@click.option('--dest', type=click.Path(file_okay=False), default=None,
              help='Dataset root (default: the run directory).')
@click.pass_context
def make_data(ctx, domain, count, seed, dest):
    """Render a toy domain dataset."""
    from .data import ToyDomainSpec, make_dataset

    cfg = _context(ctx, 'make-data', data=dict(domain=domain, count=count, seed=seed))
    opts = cfg.data_opts()
    kw = {'count': opts['count'], 'resolution': opts['resolution']}
    if opts['seed'] is not None:
        kw['seed'] = opts['seed']
    try:
        spec = ToyDomainSpec.default(opts['domain'], **kw)
    except ValueError as e:
        raise ConfigError('data', str(e)) from e
    run = _run(ctx, 'make-data', cfg)
    root = Path(dest) if dest else run
    make_dataset(spec, root)
    click.echo(str(root / spec.domain))


@main.command('train-source', cls=Command)
@click.option('--data', 'data_dir', type=click.Path(exists=True, file_okay=False), required=True)
@click.option('--total-images', type=int, default=None)
@click.option('--seed', type=int, default=None)
@click.option('--snapshot-every', type=int, default=1000)
@click.pass_context
def train_source_cmd(ctx, data_dir, total_images, seed, snapshot_every):
    """Train a source generator from scratch."""
    from .checkpoint import save_checkpoint
    from .training import train_source

    cfg = _context(ctx, 'train-source', source=dict(total_images=total_images, seed=seed))
    tc = cfg.train_config('source')
    data = _load_data(data_dir)
    run = _run(ctx, 'train-source', cfg, data=str(data_dir))
    ckpt = train_source(data, tc, run_dir=run, snapshot_every=snapshot_every)
    save_checkpoint(run / 'final.ckpt', ckpt)
    click.echo(str(run / 'final.ckpt'))


@main.command('transfer', cls=Command)
@click.option('--source', 'source_path', type=click.Path(exists=True, dir_okay=False), required=True)
@click.option('--data', 'data_dir', type=click.Path(exists=True, file_okay=False), required=True)
@click.option('--kind', type=click.Choice(TRANSFER_KINDS), default=None)
@click.option('--lambda', 'lambda_fm', type=float, default=None)
@click.option('--match-space', type=click.Choice(['H', 'RGB', 'IMAGE']), default=None)
@click.option('--fm-noise', type=click.Choice(['anchor', 'random']), default=None)
@click.option('--i', 'cut', type=int, default=None, help='Cut index for freeze_g.')
@click.option('--total-images', type=int, default=None)
@click.option('--anchor-seed', type=int, default=None)
@click.option('--seed', type=int, default=None)
@click.option('--snapshot-every', type=int, default=1000)
@click.pass_context
def transfer_cmd(ctx, source_path, data_dir, kind, lambda_fm, match_space, fm_noise, cut, total_images,
                 anchor_seed, seed, snapshot_every):
    """Fine-tune a source checkpoint on target data (FixNoise or a baseline)."""
    from .baselines import freeze_g_transfer, ui2i_train
    from .checkpoint import file_hash, save_checkpoint
    from .training import TrainConfig, run_transfer

    cfg = _context(ctx, 'transfer', transfer=dict(kind=kind, lambda_fm=lambda_fm, match_space=match_space,
                                                  fm_noise=fm_noise, i=cut, total_images=total_images,
                                                  anchor_seed=anchor_seed, seed=seed))
    opts = cfg.transfer_opts()
    tc = cfg.train_config('transfer')
    src = _ckpt(source_path, 'source')
    data = _load_data(data_dir)
    if not 0 <= opts['i'] <= src.spec.total_layers:
        raise ConfigError('transfer.i', f'must be in [0, {src.spec.total_layers}]')
    run = _run(ctx, 'transfer', cfg, source=str(source_path), source_hash=file_hash(source_path),
               anchor_seed=tc.anchor_seed, total_layers=src.spec.total_layers)
    kw = dict(run_dir=run, snapshot_every=snapshot_every)
    if opts['kind'] == 'fixnoise':
        ckpt, _ = run_transfer(source_path, data, tc, kind='fixnoise', **kw)
    elif opts['kind'] == 'plain':
        ckpt, _ = run_transfer(source_path, data, TrainConfig(**{**tc.to_dict(), 'lambda_fm': 0.0}),
                               kind='plain', **kw)
    elif opts['kind'] == 'freeze_g':
        ckpt, _ = freeze_g_transfer(source_path, opts['i'], tc, data, **kw)
    else:
        ckpt, _ = ui2i_train(source_path, tc, data, **kw)
    save_checkpoint(run / 'final.ckpt', ckpt)
    click.echo(str(run / 'final.ckpt'))


@main.command('sweep', cls=Command)
@click.option('--ckpt', 'ckpt_path', type=click.Path(exists=True, dir_okay=False), required=True)
@click.option('--source', 'source_path', type=click.Path(exists=True, dir_okay=False), required=True)
@click.option('--alphas', default=None, help='Comma-separated, descending, e.g. "1,0.5,0".')
@click.option('--samples', type=int, default=None)
@click.option('--seed', type=int, default=None)
@click.pass_context
def sweep_cmd(ctx, ckpt_path, source_path, alphas, samples, seed):
    """Image grid over noise interpolation weights."""
    from .noise_control import SweepSpec, sweep, write_sweep

    cfg = _context(ctx, 'sweep', sweep=dict(alphas=parse_floats(alphas), samples=samples, seed=seed))
    opts = cfg.section('sweep')
    try:
        spec = SweepSpec(tuple(opts['alphas']), opts['samples'], opts['seed'])
    except ValueError as e:
        raise ConfigError('sweep.alphas', str(e)) from e
    tgt, src = _ckpt(ckpt_path), _ckpt(source_path, 'source')
    if tgt.anchor is None:
        raise ConfigError('ckpt', 'checkpoint has no anchor point')
    run = _run(ctx, 'sweep', cfg, anchor_seed=tgt.anchor.seed)
    result = sweep(tgt.G_ema, src.G_ema, spec, tgt.anchor)
    write_sweep(run / 'sweep.png', result)
    click.echo(str(run / 'sweep.png'))


@main.command('evaluate', cls=Command)
@click.option('--ckpt', 'ckpt_path', type=click.Path(exists=True, dir_okay=False), required=True)
@click.option('--source', 'source_path', type=click.Path(exists=True, dir_okay=False), required=True)
@click.option('--data', 'data_dir', type=click.Path(exists=True, file_okay=False), required=True,
              help='Real target-domain dataset.')
@click.option('--method', type=click.Choice(['fixnoise', 'layer_swap', 'model']), default=None,
              help='fixnoise: one row per alpha; layer_swap: one row per cut index; model: one row.')
@click.option('--alphas', default=None)
@click.option('--levels', default=None, help='Cut indices for layer_swap (default: rescaled 15,12,9,6,3).')
@click.option('--label', default=None, help='Method name written to reports.')
@click.option('--n-samples', type=int, default=None)
@click.option('--seed', type=int, default=None)
@click.pass_context
def evaluate_cmd(ctx, ckpt_path, source_path, data_dir, method, alphas, levels, label, n_samples, seed):
    """FID, KID, perceptual distance to the source and smoothness; one report per level."""
    from .evaluation import evaluate_alphas, evaluate_generators, swap_path_smoothness
    from .baselines import layer_swap
    from .layers import paper_levels_to_toy
    from .metrics import load_embedder

    cfg = _context(ctx, 'evaluate', eval=dict(method=method, alphas=parse_floats(alphas),
                                              levels=parse_ints(levels), n_samples=n_samples, seed=seed))
    opts = cfg.section('eval')
    if opts['method'] not in ('fixnoise', 'layer_swap', 'model'):
        raise ConfigError('eval.method', "must be 'fixnoise', 'layer_swap' or 'model'")
    if opts['n_samples'] < 2:
        raise ConfigError('eval.n_samples', 'must be >= 2')
    tgt, src = _ckpt(ckpt_path), _ckpt(source_path, 'source')
    real = _load_data(data_dir)
    net = load_embedder()
    run = _run(ctx, 'evaluate', cfg, ckpt=str(ckpt_path), source=str(source_path), extractor=net.digest(),
               extractor_provenance=net.provenance)
    common = dict(n_samples=opts['n_samples'], seed=opts['seed'], net=net, n_real=opts['n_real'])
    if opts['method'] == 'fixnoise':
        if tgt.anchor is None:
            raise ConfigError('ckpt', 'checkpoint has no anchor point')
        reports = evaluate_alphas(src.G_ema, tgt.G_ema, tgt.anchor, real, opts['alphas'],
                                  method=label or 'fixnoise', **common)
    elif opts['method'] == 'layer_swap':
        total = src.spec.total_layers
        lv = opts['levels'] or paper_levels_to_toy(spec=src.spec)
        if any(not 0 <= i <= total for i in lv):
            raise ConfigError('eval.levels', f'cut indices must be in [0, {total}]')
        ps = swap_path_smoothness(src.G_ema, tgt.G_ema, seed=opts['seed'], net=net)
        gens = {i: layer_swap(src.G_ema, tgt.G_ema, i) for i in lv}
        reports = evaluate_generators(gens, real, method=label or 'layer_swap', ps=ps, src=src.G_ema, **common)
    else:
        level = tgt.meta.get('i', '-')
        reports = evaluate_generators({level: tgt.G_ema}, real, method=label or tgt.meta.get('kind', 'model'),
                                      src=src.G_ema, **common)
    for r in reports:
        write_report(run, r)
        click.echo(f'{r.method}\t{r.level}\tfid={r.fid:.4f}\tkid_x1e3={r.kid_x1e3:.4f}\t'
                   f'lpips={r.lpips_proxy:.4f}\tps={r.ps:.4f}')


@main.command('invert', cls=Command)
@click.option('--ckpt', 'ckpt_path', type=click.Path(exists=True, dir_okay=False), required=True)
@click.option('--images', type=click.Path(exists=True), required=True, help='PNG file or directory.')
@click.option('--steps', type=int, default=None)
@click.option('--seed', type=int, default=None)
@click.pass_context
def invert_cmd(ctx, ckpt_path, images, steps, seed):
    """Project images into Z of the source generator."""
    import numpy as np
    from .inversion import invert_to_z

    cfg = _context(ctx, 'invert', inversion=dict(steps=steps, seed=seed))
    icfg = cfg.inversion_config()
    src = _ckpt(ckpt_path)
    x, files = _load_images(images)
    run = _run(ctx, 'invert', cfg, ckpt=str(ckpt_path), images=str(images))
    res = invert_to_z(src.G_ema, x, icfg)
    np.save(run / 'z.npy', res.z.numpy())
    np.save(run / 'trace.npy', res.trace.numpy())
    from .data import write_json
    write_json(run / 'inversion.json', {
        'files': [str(f) for f in files] if files else None,
        'initial_loss': res.initial_loss.tolist(), 'final_loss': res.final_loss.tolist()})
    click.echo(str(run / 'z.npy'))


@main.command('translate', cls=Command)
@click.option('--source', 'source_path', type=click.Path(exists=True, dir_okay=False), required=True)
@click.option('--ckpt', 'ckpt_path', type=click.Path(exists=True, dir_okay=False), required=True)
@click.option('--images', type=click.Path(exists=True), required=True, help='PNG file or directory.')
@click.option('--alphas', default='1,0.75,0.5,0.25,0')
@click.option('--steps', type=int, default=None)
@click.option('--seed', type=int, default=None)
@click.pass_context
def translate_cmd(ctx, source_path, ckpt_path, images, alphas, steps, seed):
    """Invert images with the source and render them with the target at each alpha."""
    import torch
    from .data import write_png
    from .inversion import translate
    from .noise_control import image_grid

    alpha_list = parse_floats(alphas)
    if not alpha_list or any(not 0 <= a <= 1 for a in alpha_list):
        raise ConfigError('alphas', 'values must be in [0, 1]')
    cfg = _context(ctx, 'translate', inversion=dict(steps=steps, seed=seed))
    icfg = cfg.inversion_config()
    src, tgt = _ckpt(source_path, 'source'), _ckpt(ckpt_path)
    if tgt.anchor is None:
        raise ConfigError('ckpt', 'checkpoint has no anchor point')
    x, files = _load_images(images)
    run = _run(ctx, 'translate', cfg, alphas=alpha_list, anchor_seed=tgt.anchor.seed)
    outputs, inv = translate(src.G_ema, tgt.G_ema, x, alpha_list, tgt.anchor, icfg, rng_seed=icfg.seed)
    cols = torch.stack([x] + [outputs[a] for a in alpha_list], 1)
    write_png(run / 'translate.png', image_grid(cols))
    for a in alpha_list:
        for k, img in enumerate(outputs[a]):
            write_png(run / f'alpha={a:g}' / f'{k:06d}.png', img)
    click.echo(str(run / 'translate.png'))


@main.command('swap', cls=Command)
@click.option('--source', 'source_path', type=click.Path(exists=True, dir_okay=False), required=True)
@click.option('--ckpt', 'ckpt_path', type=click.Path(exists=True, dir_okay=False), required=True)
@click.option('--i', 'cut', type=int, required=True, help='Cut index in [0, total_layers].')
@click.pass_context
def swap_cmd(ctx, source_path, ckpt_path, cut):
    """Derived checkpoint with units below --i from the source."""
    from .baselines import swap_checkpoints
    from .checkpoint import file_hash, save_checkpoint

    cfg = _context(ctx, 'swap')
    src, tgt = _ckpt(source_path, 'source'), _ckpt(ckpt_path)
    total = src.spec.total_layers
    if not 0 <= cut <= total:
        raise ConfigError('i', f'must be in [0, {total}] (total_layers = {total})')
    parents = {'source': file_hash(source_path), 'target': file_hash(ckpt_path)}
    run = _run(ctx, 'swap', cfg, i=cut, total_layers=total, parents=parents)
    save_checkpoint(run / 'swap.ckpt', swap_checkpoints(src, tgt, cut, parents))
    click.echo(str(run / 'swap.ckpt'))


@main.command('stdmap', cls=Command)
@click.option('--ckpt', 'ckpt_path', type=click.Path(exists=True, dir_okay=False), required=True)
@click.option('--z-seed', type=int, default=0)
@click.option('--count', type=int, default=4, help='Number of latents.')
@click.option('--k', type=int, default=100, help='Noise draws per latent.')
@click.option('--seed', type=int, default=0)
@click.pass_context
def stdmap_cmd(ctx, ckpt_path, z_seed, count, k, seed):
    """Per-pixel std over random noise inputs for fixed latents."""
    from .data import write_json
    from .noise_control import latents, noise_std_map, std_map_energy, write_std_map

    if k < 2:
        raise ConfigError('k', 'must be >= 2')
    cfg = _context(ctx, 'stdmap')
    G = _ckpt(ckpt_path).G_ema
    run = _run(ctx, 'stdmap', cfg, z_seed=z_seed, k=k, noise_seed=seed)
    energies = []
    for j, z in enumerate(latents(G.spec, count, z_seed)):
        m = noise_std_map(G, z, k=k, rng_seed=seed + j)
        write_std_map(run / f'std-{j:02d}.png', m)
        energies.append(std_map_energy(m))
    write_json(run / 'energy.json', {'per_latent': energies, 'mean': sum(energies) / len(energies)})
    click.echo(f'mean energy {sum(energies) / len(energies):.6g}')


def _level_value(level):
    try:
        return float(level)
    except (TypeError, ValueError):
        return float('-inf')


@main.command('report', cls=Command)
@click.argument('runs', nargs=-1, type=click.Path(exists=True))
@click.option('--output', type=click.Path(dir_okay=False), default=None, help='CSV path (default: stdout).')
def report_cmd(runs, output):
    """Aggregate report files from run directories into one CSV."""
    rows = []
    for r in runs:
        r = Path(r)
        files = [r] if r.is_file() else sorted(r.glob('report-*.json'))
        for f in files:
            d = json.loads(f.read_text())
            rows.append([d['method'], d['level'], d['fid'], d['kid_x1e3'], d['lpips_proxy'], d['ps']])
    if not rows:
        raise ConfigError('runs', 'no report files found')
    rows.sort(key=lambda row: (row[0], -_level_value(row[1])))
    fh = open(output, 'w', newline='', encoding='utf-8') if output else sys.stdout
    try:
        w = csv.writer(fh)
        w.writerow(REPORT_COLUMNS)
        w.writerows(rows)
    finally:
        if output:
            fh.close()


if __name__ == '__main__':
    main()
