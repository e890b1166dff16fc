import json

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from fixnoise.data import (_SUPERSAMPLE, ToyDomainSpec, _geometry, _mask, binarize, from_uint8, load_dataset,
                           make_dataset, read_png, render, render_batch, to_uint8, write_png)


def true_mask(spec, i):
    size = spec.resolution
    m = _mask(_geometry(spec, i), size * _SUPERSAMPLE).reshape(size, _SUPERSAMPLE, size, _SUPERSAMPLE)
    return m.mean(axis=(1, 3)) > 0.5


def iou(a, b):
    return (a & b).sum() / max((a | b).sum(), 1)


class TestSpec:
    def test_defaults(self):
        a, b = ToyDomainSpec.default('A'), ToyDomainSpec.default('B')
        assert a.resolution == b.resolution == 32 and a.seed != b.seed
        assert a.palette == b.palette and a.texture_amplitude == 0 < b.texture_amplitude

    @pytest.mark.parametrize('kw', [dict(domain='C'), dict(shape_families=('stars',)), dict(palette='cool'), dict(count=0)])
    def test_rejects(self, kw):
        with pytest.raises(ValueError):
            ToyDomainSpec(**kw)


class TestRender:
    def test_range_and_shape(self):
        x = render_batch(ToyDomainSpec.default('B', count=8))
        assert x.shape == (8, 3, 32, 32) and x.dtype == torch.float32
        assert x.min() >= -1 and x.max() <= 1

    def test_deterministic(self):
        spec = ToyDomainSpec.default('A')
        assert np.array_equal(render(spec, 17), render(spec, 17))
        assert torch.equal(render_batch(spec, 3, start=5)[1], torch.from_numpy(render(spec, 6)))

    def test_domains_differ_only_in_texture(self):
        a = ToyDomainSpec.default('A', seed=2)
        b = ToyDomainSpec.default('B', seed=2)
        plain = ToyDomainSpec.default('B', seed=2, texture_amplitude=0.0)
        assert np.array_equal(render(a, 5), render(plain, 5))
        assert np.abs(render(b, 5) - render(a, 5)).max() > 0.2

    def test_shape_family_restriction(self):
        spec = ToyDomainSpec(shape_families=('rings',))
        assert all(_geometry(spec, i)['family'] == 'rings' for i in range(20))

    def test_binarized_silhouettes_match_across_domains(self):
        a, b = ToyDomainSpec.default('A', seed=4), ToyDomainSpec.default('B', seed=4)
        scores = np.array([iou(binarize(render(a, i)), binarize(render(b, i))) for i in range(300)])
        assert scores.mean() >= 0.95
        assert (scores >= 0.9).all()

    def test_shared_geometry_across_domains(self):
        a, b = ToyDomainSpec.default('A', seed=3), ToyDomainSpec.default('B', seed=3)
        for i in range(20):
            assert np.array_equal(true_mask(a, i), true_mask(b, i))


class TestCodec:
    def test_examples(self):
        assert to_uint8([0.0, -1.0, 1.0, -2.0, 2.0]).tolist() == [128, 0, 255, 0, 255]

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.integers(0, 255), min_size=1, max_size=64))
    def test_round_trip_from_bytes(self, values):
        u = np.array(values, dtype=np.uint8)
        assert np.array_equal(to_uint8(from_uint8(u)), u)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-1, 1), min_size=1, max_size=64))
    def test_quantization_error(self, values):
        x = np.array(values)
        assert np.abs(from_uint8(to_uint8(x)) - x).max() <= 0.5 / 127.5 + 1e-6

    def test_png_round_trip(self, tmp_path):
        img = render(ToyDomainSpec.default('A'), 0)
        write_png(tmp_path / 'a.png', img)
        back = read_png(tmp_path / 'a.png')
        assert back.shape == (3, 32, 32)
        assert torch.equal(back, torch.from_numpy(from_uint8(to_uint8(img))))
        write_png(tmp_path / 'b.png', back)
        assert torch.equal(read_png(tmp_path / 'b.png'), back)


class TestDataset:
    def test_manifest_and_load(self, tmp_path):
        spec = ToyDomainSpec.default('B', count=6)
        manifest = make_dataset(spec, tmp_path)
        d = tmp_path / 'B'
        assert sorted(p.name for p in d.glob('*.png')) == [f'{i:06d}.png' for i in range(6)]
        on_disk = json.loads((d / 'manifest.json').read_text())
        assert on_disk == json.loads(json.dumps(manifest))
        assert on_disk['spec']['domain'] == 'B' and on_disk['images'][2]['seed'] == [1, 2]
        x = load_dataset(d)
        assert x.shape == (6, 3, 32, 32)
        assert (x - render_batch(spec)).abs().max() <= 0.5 / 127.5 + 1e-6

    def test_regenerate_identical(self, tmp_path):
        spec = ToyDomainSpec.default('A', count=3)
        make_dataset(spec, tmp_path / 'x')
        make_dataset(spec, tmp_path / 'y')
        for i in range(3):
            name = f'A/{i:06d}.png'
            assert (tmp_path / 'x' / name).read_bytes() == (tmp_path / 'y' / name).read_bytes()

    def test_empty_manifest(self, tmp_path):
        (tmp_path / 'manifest.json').write_text(json.dumps({'spec': {}, 'images': []}))
        with pytest.raises(ValueError):
            load_dataset(tmp_path)

    def test_unwritable_root(self, tmp_path):
        blocker = tmp_path / 'file'
        blocker.write_text('')
        with pytest.raises(OSError):
            make_dataset(ToyDomainSpec(count=1), blocker)
