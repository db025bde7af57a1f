import numpy as np
import pytest

from retimbre.dsp import AudioClip, MelFeatureConfig
from retimbre.networks import ModelConfig, ScheduleNetConfig


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# Miniature front-end + model used where only the machinery is under test.
# Upsampling factors multiply to the mel hop (4*4*2*2 = 64).
TINY_MEL = MelFeatureConfig(n_mels=32, window_length=256, hop_length=64, fft_size=512)
TINY_MODEL = ModelConfig(
    upsample_factors=(4, 4, 2, 2),
    down_channels=(4, 6, 8, 10, 12),
    up_channels=(16, 12, 10, 8, 6),
    noise_emb_dim=8,
    mel_bands=32,
)
TINY_SCHED = ScheduleNetConfig(hidden_dim=16, window_length=8, segment_size=16, attn_heads=2)


@pytest.fixture
def tiny_mel_cfg():
    return TINY_MEL


@pytest.fixture
def tiny_model_cfg():
    return TINY_MODEL


@pytest.fixture
def tiny_sched_cfg():
    return TINY_SCHED


def sine_clip(freq=440.0, seconds=1.0, rate=16000, amp=0.5, source_id=None):
    t = np.arange(int(seconds * rate)) / rate
    return AudioClip(
        samples=(amp * np.sin(2 * np.pi * freq * t)).astype(np.float32),
        sample_rate=rate,
        source_id=source_id,
    )


@pytest.fixture
def make_sine():
    return sine_clip
