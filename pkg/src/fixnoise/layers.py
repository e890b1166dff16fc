"""Layer indices for freezing and swapping.

Index 0 is the constant input, index ``k + 1`` is feature conv ``k`` together
with its noise strength and, when it is the last conv of its resolution, the
tRGB head reading from it. ``spec.total_layers`` is one past the last index.

The mapping network sits outside this order: it only falls below the cut
when the cut is ``total_layers``, i.e. when the whole generator is selected.
"""

from __future__ import annotations

from .networks import GeneratorSpec


def unit_index(spec: GeneratorSpec, key: str):
    """Layer index of a generator parameter/buffer key, ``None`` for the mapping network."""
    role, layer = key.split('.')[:2]
    if role == 'mapping':
        return None
    if role == 'const':
        return 0
    if role in ('conv', 'noise'):
        return int(layer) + 1
    if role == 'torgb':
        return spec.torgb_layers[int(layer)] + 1
    raise KeyError(f'unknown generator role in key {key!r}')


def below_cut(spec: GeneratorSpec, key: str, i: int):
    if not 0 <= i <= spec.total_layers:
        raise ValueError(f'layer index {i} outside [0, {spec.total_layers}]')
    u = unit_index(spec, key)
    if u is None:
        return i == spec.total_layers
    return u < i


def paper_levels_to_toy(levels=(15, 12, 9, 6, 3), paper_total=21, spec: GeneratorSpec | None = None):
    """Rescale layer indices quoted for a 21-layer model to this spec's layer count."""
    total = (spec or GeneratorSpec()).total_layers
    return [int(round(i * total / paper_total)) for i in levels]
