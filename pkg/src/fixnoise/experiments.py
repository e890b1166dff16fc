"""Reference runs on the toy domains: a source model on domain A and transfers to domain B.

``ensure_runs(root)`` trains whatever is missing under ``root`` and returns
the checkpoint paths. Runs are cached by name; a finished run is never
retrained. The comparison runs (unanchored feature matching, image-space
matching) use the same seeds and budget as the matched snapshot of the
main FixNoise run.
"""

from __future__ import annotations

import logging
import os
from pathlib import Path

import torch

from .checkpoint import save_checkpoint
from .data import ToyDomainSpec, render_batch, write_json
from .training import TrainConfig, run_transfer, train_source

log = logging.getLogger(__name__)

ROOT_ENV = 'FIXNOISE_REFERENCE_DIR'
SOURCE_IMAGES = 300_000
TRANSFER_IMAGES = 200_000
COMPARE_IMAGES = 100_000

RUNS = {
    'source': dict(images=SOURCE_IMAGES),
    'fixnoise': dict(images=TRANSFER_IMAGES, match_space='H', fm_noise='anchor'),
    'plain_fm': dict(images=COMPARE_IMAGES, match_space='H', fm_noise='random'),
    'image_space': dict(images=COMPARE_IMAGES, match_space='IMAGE', fm_noise='anchor'),
}


def default_root():
    return Path(os.environ.get(ROOT_ENV, Path.cwd() / 'artifacts' / 'reference'))


def domain_data(domain):
    return render_batch(ToyDomainSpec.default(domain))


def matched_snapshot(root):
    """The main FixNoise run's checkpoint at the comparison budget."""
    steps = COMPARE_IMAGES // TrainConfig().batch_size
    return Path(root) / 'fixnoise' / f'snapshot-{steps:06d}.ckpt'


def ensure_source(root):
    root = Path(root)
    path = root / 'source' / 'final.ckpt'
    if not path.exists():
        log.info('training source model (%d images)', SOURCE_IMAGES)
        cfg = TrainConfig(total_images=SOURCE_IMAGES, seed=0)
        ckpt = train_source(domain_data('A'), cfg, run_dir=root / 'source', snapshot_every=1000, log_every=200)
        save_checkpoint(path, ckpt)
    return path


def ensure_transfer(root, name):
    root = Path(root)
    path = root / name / 'final.ckpt'
    if not path.exists():
        spec = RUNS[name]
        src = ensure_source(root)
        steps = COMPARE_IMAGES // TrainConfig().batch_size
        cfg = TrainConfig(total_images=spec['images'], seed=0, anchor_seed=1234,
                          match_space=spec['match_space'], fm_noise=spec['fm_noise'])
        log.info('transfer run %s (%d images)', name, spec['images'])
        ckpt, _ = run_transfer(src, domain_data('B'), cfg, run_dir=root / name, kind=name,
                               snapshot_every=steps, log_every=200)
        save_checkpoint(path, ckpt)
        write_json(root / name / 'run.json', {'name': name, 'config': cfg.to_dict()})
    return path


def ensure_runs(root=None):
    root = Path(root or default_root())
    paths = {'source': ensure_source(root)}
    for name in ('fixnoise', 'plain_fm', 'image_space'):
        paths[name] = ensure_transfer(root, name)
    paths['fixnoise_matched'] = matched_snapshot(root)
    return paths


if __name__ == '__main__':
    logging.basicConfig(level=logging.INFO, format='%(asctime)s %(message)s')
    torch.set_num_threads(max(1, os.cpu_count() or 1))
    print(ensure_runs())
