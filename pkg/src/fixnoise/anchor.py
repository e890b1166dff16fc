from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from datetime import datetime, timezone

from .networks import GeneratorSpec, NoiseField, sample_noise


@dataclass(frozen=True)
class AnchorPoint:
    """The fixed noise used for feature matching during a whole transfer run."""

    noise: NoiseField
    seed: int
    created_at: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat())

    @classmethod
    def create(cls, spec: GeneratorSpec, seed: int):
        return cls(sample_noise(spec, seed), int(seed))

    def digest(self):
        h = hashlib.sha256()
        for m in self.noise.maps:
            h.update(m.detach().cpu().contiguous().numpy().tobytes())
        return h.hexdigest()
