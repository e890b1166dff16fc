import copy

import pytest
import torch

import fixnoise.inversion as inversion
from fixnoise.inversion import InversionConfig, invert_to_z, translate
from fixnoise.metrics import perceptual_distance
from fixnoise.networks import sample_noise, zero_noise
from fixnoise.training import NumericalError

from conftest import SMALL, perturbed

FAST = InversionConfig(steps=150, restarts=2)


def targets(G, n=4, seed=0, psi=0.7, noise=None):
    z = torch.randn(n, SMALL.z_dim, generator=torch.Generator().manual_seed(seed))
    with torch.no_grad():
        return z, G(z, noise if noise is not None else zero_noise(SMALL), psi=psi)['image']


class TestConfig:
    def test_defaults(self):
        c = InversionConfig()
        assert (c.steps, c.lr, c.psi, c.restarts) == (400, 0.1, 0.7, 3)

    @pytest.mark.parametrize('kw', [dict(steps=-1), dict(psi=1.2), dict(restarts=0), dict(w_pix=-1.0)])
    def test_rejects(self, kw):
        with pytest.raises(ValueError):
            InversionConfig(**kw)

    def test_schedule(self):
        c = InversionConfig(steps=100)
        lrs = [c.lr_at(s) for s in range(100)]
        assert lrs[0] == 0 and max(lrs) == pytest.approx(0.1)
        assert lrs[-1] < 0.01
        tail = lrs[75:]
        assert tail == sorted(tail, reverse=True)


class TestInvert:
    def test_zero_steps_returns_init(self, small):
        G, _ = small
        _, img = targets(G)
        init = torch.randn(4, SMALL.z_dim)
        res = invert_to_z(G, img, InversionConfig(steps=0), init_z=init)
        assert torch.equal(res.z, init)
        res = invert_to_z(G, img, InversionConfig(steps=0, seed=5))
        assert torch.equal(res.z, torch.randn(4, SMALL.z_dim, generator=torch.Generator().manual_seed(5)))
        assert res.trace.shape == (4, 1)

    def test_fixed_point(self, small):
        G, _ = small
        z, img = targets(G)
        res = invert_to_z(G, img, InversionConfig(steps=20, restarts=1), init_z=z)
        assert torch.equal(res.initial_loss, torch.zeros(4))
        assert torch.equal(res.z, z)
        assert torch.equal(res.final_loss, torch.zeros(4))

    def test_recovers_generated_images(self, small):
        G, _ = small
        _, img = targets(G, seed=3)
        res = invert_to_z(G, img, FAST)
        assert (res.final_loss <= 0.1 * res.initial_loss).all()

    def test_trace_and_determinism(self, small):
        G, _ = small
        _, img = targets(G, seed=4)
        cfg = InversionConfig(steps=30, restarts=2)
        a, b = invert_to_z(G, img, cfg), invert_to_z(G, img, cfg)
        assert torch.equal(a.z, b.z) and torch.equal(a.trace, b.trace)
        assert a.trace.shape == (4, 2 * 31)
        assert (a.trace.diff(dim=1) <= 0).all()
        assert torch.equal(a.trace[:, 0], a.initial_loss) and torch.equal(a.trace[:, -1], a.final_loss)
        assert torch.allclose(a.final_loss, a.pixel + a.perceptual)

    def test_best_is_consistent(self, small):
        G, _ = small
        _, img = targets(G, seed=5)
        cfg = InversionConfig(steps=30, restarts=1)
        res = invert_to_z(G, img, cfg)
        loss, _, _ = inversion.inversion_loss(G, res.z, img, zero_noise(SMALL), cfg)
        assert torch.allclose(loss, res.final_loss, atol=1e-6)

    def test_single_image(self, small):
        G, _ = small
        _, img = targets(G, n=1)
        assert invert_to_z(G, img[0], InversionConfig(steps=2, restarts=1)).z.shape == (1, SMALL.z_dim)

    def test_shape_mismatch(self, small):
        with pytest.raises(ValueError):
            invert_to_z(small[0], torch.zeros(1, 3, 32, 32), InversionConfig(steps=1))

    def test_non_finite(self, small):
        img = torch.full((1, 3, 16, 16), float('nan'))
        with pytest.raises(NumericalError):
            invert_to_z(small[0], img, InversionConfig(steps=3))


class TestTranslate:
    def test_single_inversion_for_many_alphas(self, small, monkeypatch):
        G, _ = small
        calls = []
        real = inversion.invert_to_z

        def counting(*a, **kw):
            calls.append(1)
            return real(*a, **kw)

        monkeypatch.setattr(inversion, 'invert_to_z', counting)
        _, img = targets(G, n=2)
        alphas = [1.0, 0.75, 0.5, 0.25, 0.0]
        out, _ = translate(G, perturbed(G), img, alphas, sample_noise(SMALL, 9), InversionConfig(steps=3))
        assert len(calls) == 1
        assert list(out) == alphas and all(v.shape == img.shape for v in out.values())

    def test_composition_with_copy(self, small):
        G, _ = small
        anchor = sample_noise(SMALL, 9)
        _, img = targets(G, n=3, seed=7, noise=anchor)
        out, inv = translate(G, copy.deepcopy(G), img, [1.0], anchor, FAST, noise=anchor)
        d = perceptual_distance(out[1.0], img)
        assert (d <= inv.final_loss + 1e-6).all()

    def test_alphas_differ(self, small):
        G, _ = small
        _, img = targets(G, n=2)
        out, _ = translate(G, perturbed(G), img, [1.0, 0.0], sample_noise(SMALL, 9), InversionConfig(steps=3))
        assert not torch.equal(out[1.0], out[0.0])

    def test_deterministic(self, small):
        G, _ = small
        tgt = perturbed(G)
        _, img = targets(G, n=2)
        cfg = InversionConfig(steps=5)
        a, _ = translate(G, tgt, img, [0.5], sample_noise(SMALL, 9), cfg, rng_seed=3)
        b, _ = translate(G, tgt, img, [0.5], sample_noise(SMALL, 9), cfg, rng_seed=3)
        assert torch.equal(a[0.5], b[0.5])
