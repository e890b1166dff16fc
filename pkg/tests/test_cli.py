import csv
import json

import numpy as np
import pytest
import yaml
from click.testing import CliRunner
from PIL import Image

from fixnoise.anchor import AnchorPoint
from fixnoise.checkpoint import Checkpoint, file_hash, load_checkpoint, save_checkpoint
from fixnoise.cli import REPORT_COLUMNS, main

from conftest import SMALL, make_models, perturbed


def invoke(*args, out, config=None):
    pre = ['--out', str(out)]
    if config is not None:
        pre += ['--config', str(config)]
    return CliRunner().invoke(main, pre + [str(a) for a in args], catch_exceptions=False)


@pytest.fixture(scope='module')
def world(tmp_path_factory):
    """Small source and target checkpoints plus a 16px target dataset."""
    root = tmp_path_factory.mktemp('cli')
    G, D = make_models(SMALL)
    save_checkpoint(root / 'src.ckpt', Checkpoint(G, G, D, None, {'kind': 'source'}))
    tgt = perturbed(G, seed=4)
    save_checkpoint(root / 'tgt.ckpt', Checkpoint(tgt, tgt, D, AnchorPoint.create(SMALL, 5), {'kind': 'fixnoise'}))
    cfg = root / 'data.yaml'
    cfg.write_text(yaml.safe_dump({'data': {'resolution': 16}}))
    r = invoke('make-data', '--domain', 'B', '--count', 24, '--dest', root / 'data', out=root / 'runs', config=cfg)
    assert r.exit_code == 0, r.output
    return root


def only_run(out, prefix):
    runs = sorted(p for p in out.iterdir() if p.name.startswith(prefix))
    assert len(runs) == 1
    return runs[0]


def test_make_data(world):
    d = world / 'data' / 'B'
    manifest = json.loads((d / 'manifest.json').read_text())
    assert len(manifest['images']) == 24 and manifest['spec']['resolution'] == 16
    run = only_run(world / 'runs', 'make-data')
    meta = json.loads((run / 'run.json').read_text())
    assert meta['command'] == 'make-data' and len(meta['config_hash']) == 64


def test_run_dirs_never_reused(world, tmp_path):
    for _ in range(2):
        assert invoke('make-data', '--count', 2, out=tmp_path).exit_code == 0
    assert len([p for p in tmp_path.iterdir() if p.name.startswith('make-data')]) == 2


def test_sweep_grid(world, tmp_path):
    r = invoke('sweep', '--ckpt', world / 'tgt.ckpt', '--source', world / 'src.ckpt', '--alphas', '1,0.5,0',
               '--samples', 3, out=tmp_path)
    assert r.exit_code == 0, r.output
    run = only_run(tmp_path, 'sweep')
    assert Image.open(run / 'sweep.png').size == (4 * 17 - 1, 3 * 17 - 1)
    assert json.loads((run / 'sweep.json').read_text())['alphas'] == [1.0, 0.5, 0.0]


def test_sweep_rejects_ascending(world, tmp_path):
    r = invoke('sweep', '--ckpt', world / 'tgt.ckpt', '--source', world / 'src.ckpt', '--alphas', '0,1',
               out=tmp_path)
    assert r.exit_code == 2


def test_unknown_config_key(world, tmp_path):
    cfg = tmp_path / 'bad.yaml'
    cfg.write_text(yaml.safe_dump({'transfer': {'lamda': 0.1}}))
    r = invoke('make-data', out=tmp_path, config=cfg)
    assert r.exit_code == 2
    assert 'transfer.lamda' in r.output


def test_invalid_value_names_key(world, tmp_path):
    r = invoke('transfer', '--source', world / 'src.ckpt', '--data', world / 'data' / 'B', '--lambda', '-1',
               out=tmp_path)
    assert r.exit_code == 2
    assert 'lambda_fm' in r.output


def test_transfer_then_evaluate_and_report(world, tmp_path):
    r = invoke('transfer', '--source', world / 'src.ckpt', '--data', world / 'data' / 'B', '--total-images', 16,
               '--anchor-seed', 3, out=tmp_path, config=world / 'data.yaml')
    assert r.exit_code == 0, r.output
    run = only_run(tmp_path, 'transfer')
    ck = load_checkpoint(run / 'final.ckpt')
    assert ck.anchor.seed == 3
    meta = json.loads((run / 'run.json').read_text())
    assert meta['source_hash'] == file_hash(world / 'src.ckpt')

    ev = tmp_path / 'eval'
    r = invoke('evaluate', '--ckpt', run / 'final.ckpt', '--source', world / 'src.ckpt', '--data',
               world / 'data' / 'B', '--alphas', '1,0.5,0', '--n-samples', 8, out=ev)
    assert r.exit_code == 0, r.output
    erun = only_run(ev, 'evaluate')
    reports = sorted(erun.glob('report-*.json'))
    assert len(reports) == 3
    out_csv = tmp_path / 'table.csv'
    r = invoke('report', erun, '--output', out_csv, out=tmp_path)
    assert r.exit_code == 0, r.output
    rows = list(csv.reader(open(out_csv, encoding='utf-8')))
    assert tuple(rows[0]) == REPORT_COLUMNS
    assert [row[1] for row in rows[1:]] == ['1', '0.5', '0']
    assert all(np.isfinite(float(x)) for row in rows[1:] for x in row[2:])


def test_swap_provenance(world, tmp_path):
    r = invoke('swap', '--source', world / 'src.ckpt', '--ckpt', world / 'tgt.ckpt', '--i', 3, out=tmp_path)
    assert r.exit_code == 0, r.output
    ck = load_checkpoint(only_run(tmp_path, 'swap') / 'swap.ckpt')
    assert ck.meta['i'] == 3
    assert ck.meta['parents'] == {'source': file_hash(world / 'src.ckpt'), 'target': file_hash(world / 'tgt.ckpt')}


def test_swap_out_of_range(world, tmp_path):
    r = invoke('swap', '--source', world / 'src.ckpt', '--ckpt', world / 'tgt.ckpt', '--i', SMALL.total_layers + 1,
               out=tmp_path)
    assert r.exit_code == 2 and 'total_layers' in r.output


def test_stdmap(world, tmp_path):
    r = invoke('stdmap', '--ckpt', world / 'tgt.ckpt', '--count', 2, '--k', 4, out=tmp_path)
    assert r.exit_code == 0, r.output
    run = only_run(tmp_path, 'stdmap')
    energy = json.loads((run / 'energy.json').read_text())
    assert len(energy['per_latent']) == 2 and energy['mean'] > 0
    assert (run / 'std-01.png').exists() and (run / 'std-01.npy').exists()


def test_invert_and_translate(world, tmp_path):
    images = world / 'data' / 'B'
    r = invoke('invert', '--ckpt', world / 'src.ckpt', '--images', images / '000000.png', '--steps', 3,
               out=tmp_path)
    assert r.exit_code == 0, r.output
    run = only_run(tmp_path, 'invert')
    assert np.load(run / 'z.npy').shape == (1, SMALL.z_dim)
    info = json.loads((run / 'inversion.json').read_text())
    assert info['final_loss'][0] <= info['initial_loss'][0]

    r = invoke('translate', '--source', world / 'src.ckpt', '--ckpt', world / 'tgt.ckpt', '--images',
               images / '000001.png', '--alphas', '1,0', '--steps', 3, out=tmp_path)
    assert r.exit_code == 0, r.output
    run = only_run(tmp_path, 'translate')
    assert Image.open(run / 'translate.png').size == (3 * 17 - 1, 16)
    assert (run / 'alpha=0' / '000000.png').exists()


def test_missing_checkpoint_is_config_error(world, tmp_path):
    bad = tmp_path / 'bad.ckpt'
    bad.write_bytes(b'nope')
    r = invoke('stdmap', '--ckpt', bad, out=tmp_path)
    assert r.exit_code == 2
