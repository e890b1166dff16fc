import copy
import csv
import json

import pytest
import torch

from fixnoise.anchor import AnchorPoint
from fixnoise.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from fixnoise.data import ToyDomainSpec, render_batch
from fixnoise.evaluation import toy_fid
from fixnoise.losses import fixnoise_fm_loss
from fixnoise.metrics import sample_images
from fixnoise.networks import GeneratorSpec, sample_noise
from fixnoise.training import (ConfigError, NumericalError, TrainConfig, Trainer, init_transfer,
                               make_transfer_trainer, run_transfer, train, train_source, transfer_step)

from conftest import SMALL, make_models


def source_ckpt(spec=SMALL, seed=0):
    G, D = make_models(spec, seed)
    return Checkpoint(G, copy.deepcopy(G), D, None, {'kind': 'source'})


def fake_data(n=64, res=16, seed=0):
    return torch.rand(n, 3, res, res, generator=torch.Generator().manual_seed(seed)) * 2 - 1


def cfg(**kw):
    base = dict(batch_size=8, total_images=80, seed=3, anchor_seed=11)
    base.update(kw)
    return TrainConfig(**base)


class TestConfig:
    @pytest.mark.parametrize('key,value', [('lambda_fm', -0.1), ('lambda_fm', float('nan')),
                                           ('match_space', 'W'), ('ema_decay', 1.0), ('batch_size', 0),
                                           ('style_mixing_prob', 1.5), ('fm_noise', 'zero')])
    def test_rejects(self, key, value):
        with pytest.raises(ConfigError) as e:
            TrainConfig(**{key: value}).validate()
        assert e.value.key == key

    def test_unknown_key(self):
        with pytest.raises(ConfigError) as e:
            TrainConfig.from_dict({'lamda': 1.0})
        assert e.value.key == 'lamda'

    def test_defaults(self):
        c = TrainConfig()
        assert (c.lambda_fm, c.batch_size, c.g_lr, c.beta1, c.beta2, c.r1_gamma, c.r1_interval, c.ema_decay) == \
            (0.05, 32, 2.5e-3, 0.0, 0.99, 1.0, 16, 0.995)
        assert c.match_space == 'H' and c.style_mixing_prob == 0 and c.path_length_weight == 0

    def test_empty_dataset(self):
        G, D = make_models(SMALL)
        with pytest.raises(ConfigError):
            train(Trainer(G, D, cfg()), torch.zeros(0, 3, 16, 16))

    def test_freeze_out_of_range(self):
        G, D = make_models(SMALL)
        with pytest.raises(ConfigError):
            Trainer(G, D, cfg(freeze_layers=SMALL.total_layers + 1))


class TestInitTransfer:
    def test_fm_zero_after_init(self):
        ck = source_ckpt()
        tgt, D, anchor = init_transfer(ck, 5)
        for seed in range(5):
            z = torch.randn(16, SMALL.z_dim, generator=torch.Generator().manual_seed(seed))
            assert float(fixnoise_fm_loss(ck.G_ema, tgt, z, anchor).detach()) == 0.0

    def test_copies_not_aliases(self):
        ck = source_ckpt()
        tgt, D, _ = init_transfer(ck, 5)
        assert tgt is not ck.G_ema and D is not ck.D
        assert all(p.data_ptr() != q.data_ptr() for p, q in zip(tgt.parameters(), ck.G_ema.parameters()))

    def test_anchor_from_seed(self):
        ck = source_ckpt()
        _, _, a = init_transfer(ck, 5)
        _, _, b = init_transfer(ck, 5)
        assert a.noise.equal(b.noise) and a.seed == 5
        assert a.noise.equal(sample_noise(SMALL, 5))

    def test_requires_discriminator(self):
        ck = source_ckpt()
        ck.D = None
        with pytest.raises(ValueError, match='discriminator'):
            init_transfer(ck, 5)


class TestTransferStep:
    def test_diverges_after_one_step(self):
        ck = source_ckpt()
        tr = make_transfer_trainer(ck, cfg())
        transfer_step(tr, fake_data()[:8])
        assert any(not torch.equal(p, q) for p, q in zip(tr.G.parameters(), ck.G_ema.parameters()))
        assert tr.state.step == 1 and tr.state.images_seen == 8

    def test_loss_composition_and_anchor_immutability(self):
        tr = make_transfer_trainer(source_ckpt(), cfg(lambda_fm=0.37))
        digest = tr.anchor.digest()
        data = fake_data()
        for _ in range(6):
            r = transfer_step(tr, tr.sample_real(data))
            assert r.total == r.adv + 0.37 * r.fm
            assert r.n_layers == SMALL.num_feature_layers
            assert tr.anchor.digest() == digest

    def test_lambda_zero_reports_fm_without_applying(self):
        tr = make_transfer_trainer(source_ckpt(), cfg(lambda_fm=0.0))
        data = fake_data()
        reports = [transfer_step(tr, tr.sample_real(data)) for _ in range(4)]
        assert all(r.total == r.adv for r in reports)
        assert reports[-1].fm > 0

    def test_large_lambda_keeps_anchor_features(self):
        tr = make_transfer_trainer(source_ckpt(), cfg(lambda_fm=1e3, d_lr=0.0))
        data = fake_data()
        d_before = copy.deepcopy(tr.D.state_dict())
        for _ in range(100):
            transfer_step(tr, tr.sample_real(data))
        z = torch.randn(64, SMALL.z_dim, generator=torch.Generator().manual_seed(1))
        fm = float(fixnoise_fm_loss(tr.src, tr.G, z, tr.anchor).detach())
        assert fm <= 1e-3
        assert all(torch.equal(v, tr.D.state_dict()[k]) for k, v in d_before.items())

    def test_deterministic(self):
        data = fake_data()
        traces = []
        for _ in range(2):
            tr = make_transfer_trainer(source_ckpt(), cfg(style_mixing_prob=0.5, mirror=True))
            traces.append([(r.adv, r.fm, r.d_loss) for r in train(tr, data, total_images=10 * 8)])
        assert traces[0] == traces[1]

    def test_random_noise_fm_variant(self):
        tr = make_transfer_trainer(source_ckpt(), cfg(fm_noise='random'))
        r = transfer_step(tr, fake_data()[:8])
        # Independent noise draws make the two generators disagree from the first step.
        assert r.fm > 0

    def test_optional_regularizers(self):
        tr = make_transfer_trainer(source_ckpt(), cfg(style_mixing_prob=1.0, path_length_weight=2.0, pl_interval=1))
        data = fake_data()
        for _ in range(3):
            r = transfer_step(tr, tr.sample_real(data))
        assert all(map(torch.isfinite, (torch.tensor(r.adv), torch.tensor(r.d_loss))))

    def test_ema(self):
        tr = make_transfer_trainer(source_ckpt(), cfg(ema_decay=0.9))
        before = [p.clone() for p in tr.G_ema.parameters()]
        transfer_step(tr, fake_data()[:8])
        for b, e, g in zip(before, tr.G_ema.parameters(), tr.G.parameters()):
            assert torch.allclose(e, g + 0.9 * (b - g), atol=1e-6)


class TestTrainLoop:
    def test_csv_and_snapshots(self, tmp_path):
        ck, reports = run_transfer(source_ckpt(), fake_data(), cfg(total_images=40), run_dir=tmp_path,
                                   snapshot_every=2)
        rows = list(csv.reader(open(tmp_path / 'loss.csv')))
        assert rows[0] == ['step', 'adv', 'fm', 'total', 'd_loss']
        assert len(rows) == 1 + 5 == 1 + len(reports)
        assert [float(x) for x in rows[3][1:]] == [reports[2].adv, reports[2].fm, reports[2].total,
                                                    reports[2].d_loss]
        snaps = sorted(p.name for p in tmp_path.glob('snapshot-*.ckpt'))
        assert snaps == ['snapshot-000002.ckpt', 'snapshot-000004.ckpt']
        loaded = load_checkpoint(tmp_path / snaps[-1])
        assert loaded.meta['anchor_seed'] == 11 and loaded.anchor.seed == 11
        assert loaded.anchor.noise.equal(ck.anchor.noise)

    def test_numerical_abort(self, tmp_path):
        tr = make_transfer_trainer(source_ckpt(), cfg())
        data = fake_data()
        data[:] = float('nan')
        with pytest.raises(NumericalError) as e:
            train(tr, data, run_dir=tmp_path)
        assert 'step' in e.value.snapshot
        assert json.loads((tmp_path / 'abort.json').read_text())['snapshot']['step'] == 0


def test_train_source_smoke_improves_fid():
    spec = GeneratorSpec()
    real = render_batch(ToyDomainSpec.default('A', count=1000))
    from fixnoise.training import new_models
    G0, _ = new_models(spec, 0)
    before = toy_fid(sample_images(G0, 256, 0), real[:256])
    ck = train_source(real, TrainConfig(total_images=1000, seed=0), spec)
    after = toy_fid(sample_images(ck.G_ema, 256, 0), real[:256])
    assert after < before
    assert ck.meta['kind'] == 'source' and ck.meta['images_seen'] >= 1000


def test_source_checkpoint_round_trip(tmp_path):
    real = fake_data(32)
    ck = train_source(real, cfg(total_images=16), SMALL)
    assert not torch.equal(ck.G.w_avg, torch.zeros(SMALL.w_dim))
    save_checkpoint(tmp_path / 'a.ckpt', ck)
    back = load_checkpoint(tmp_path / 'a.ckpt')
    for a, b in ((ck.G, back.G), (ck.G_ema, back.G_ema), (ck.D, back.D)):
        sa, sb = a.state_dict(), b.state_dict()
        assert sa.keys() == sb.keys()
        assert all(torch.equal(sa[k], sb[k]) for k in sa)
