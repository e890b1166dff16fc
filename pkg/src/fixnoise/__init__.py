"""Controllable GAN domain transfer by anchoring source features to a fixed noise input."""

from .anchor import AnchorPoint
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .losses import feature_matching_loss, fixnoise_fm_loss
from .networks import (Discriminator, Generator, GeneratorSpec, NoiseField, discriminate, map_latent,
                       sample_noise, synthesize, zero_noise)
from .noise_control import generate_interp, interpolate_noise
from .training import TrainConfig, init_transfer, run_transfer, train_source

__version__ = '0.1.0'
