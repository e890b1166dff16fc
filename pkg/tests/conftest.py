import copy

import pytest
import torch

from fixnoise.networks import Discriminator, Generator, GeneratorSpec
from fixnoise.training import seeded

TINY = GeneratorSpec(z_dim=4, w_dim=4, mapping_layers=1, base_resolution=4, resolution=8,
                     channels={4: 2, 8: 2}, d_channels={4: 2, 8: 2})
SMALL = GeneratorSpec(z_dim=8, w_dim=8, mapping_layers=2, base_resolution=4, resolution=16,
                      channels={4: 8, 8: 8, 16: 4}, d_channels={4: 8, 8: 8, 16: 4})


def make_models(spec, seed=0, noise_strength=0.3):
    G = seeded(lambda: Generator(spec), seed)
    D = seeded(lambda: Discriminator(spec), seed + 1)
    with torch.no_grad():
        for n in G.noise:
            n.strength.fill_(noise_strength)
    return G, D


@pytest.fixture
def tiny():
    return make_models(TINY)


@pytest.fixture
def small():
    return make_models(SMALL)


@pytest.fixture
def tiny64():
    G, D = make_models(TINY)
    return G.double(), D.double()


def perturbed(G, seed=1, scale=0.05):
    out = copy.deepcopy(G)
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in out.parameters():
            p.add_(scale * torch.randn(p.shape, generator=gen, dtype=p.dtype))
    return out


# ----------------------------------------------------------------------------
# Acceptance summary: one line per criterion at the end of the session.

ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section('acceptance criteria')
    for n in sorted(ACCEPTANCE):
        ok, name, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f'criterion {n:2d} {"PASS" if ok else "FAIL"}  {name}: {detail}')
