import numpy as np
import pytest

from fusionsf.config import ModelConfig
from fusionsf.model import Batch

TINY = dict(
    image_size=[4, 4], patch_size=[2, 2], dim=8, depth=1, heads=1, dim_head=8, mlp_ratio=2, dropout=0.0,
    decoder_dim=8, decoder_depth=1, decoder_heads=1, decoder_dim_head=8, T_in=4, T_out=4, aux_channels=3,
    codebook_size=8,
)


def tiny_config(**kw) -> ModelConfig:
    return ModelConfig(**{**TINY, **kw})


def tiny_batch(b=2, seed=0, cfg=None) -> Batch:
    cfg = cfg or tiny_config()
    rng = np.random.default_rng(seed)
    t = cfg.T_in
    h, w = cfg.image_size
    return Batch(
        rng.uniform(0, 1, (b, t, cfg.ts_channels)),
        rng.uniform(0, 1, (b, t, cfg.ctx_channels, h, w)),
        rng.standard_normal((b, t, cfg.aux_channels)),
        rng.uniform(-1, 1, (b, 2)),
        rng.uniform(0, 1, (b, t, cfg.ts_channels)),
    )


@pytest.fixture
def tiny_cfg():
    return tiny_config()


@pytest.fixture(scope="session")
def small_ds():
    from fusionsf.data import SynthParams, synthesize

    return synthesize(SynthParams(n_plants=3, n_days=10, grid=(8, 8), seed=7))


@pytest.fixture(scope="session")
def small_dir(tmp_path_factory):
    from fusionsf.data import synth_generate

    path = tmp_path_factory.mktemp("data") / "small"
    synth_generate(path, n_plants=3, n_days=10, grid=(8, 8), seed=7)
    return path


# one PASS/FAIL line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
