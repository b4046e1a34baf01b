import pytest
import torch

from crosscd import data as D
from crosscd.config import TrainConfig
from crosscd.model import ModelConfig
from crosscd.synthesis import SynthesisConfig

torch.set_num_threads(1)


def tiny_model(variant="sili", **kw):
    return ModelConfig(variant=variant, backbone="tiny", window_size=4, **kw)


def quick_config(variant="sili", epochs=3, **kw):
    syn = SynthesisConfig(crop_size=16, flip_prob=0.5, blur_prob=0.5)
    return TrainConfig(lr0=0.05, epochs=epochs, batch_size=2, eval_batch_size=4, model=tiny_model(variant),
                       synthesis=syn, **kw)


@pytest.fixture(scope="session")
def small_hr():
    """Four equal-size 64x64 synthetic tiles."""
    return D.synthetic_dataset(4, 64, seed=1)


@pytest.fixture(scope="session")
def small_train(small_hr):
    return [D.to_lr(s, 4.0) for s in small_hr]


# PASS/FAIL lines from the acceptance suite, repeated in the terminal summary
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
