import numpy as np
import pytest

from seqprompt.backbone import BackboneConfig
from seqprompt.harness import RunConfig
from seqprompt.spa import SpaConfig

ACCEPTANCE_LINES = []


def record_acceptance(name: str, ok: bool, detail: str) -> None:
    ACCEPTANCE_LINES.append(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def max_rel_err(analytic, numeric) -> float:
    """max |a - n| over elements, relative to the largest gradient magnitude."""
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0))
    if scale == 0.0:
        return 0.0
    return float(np.abs(analytic - numeric).max() / scale)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def tiny_config(**overrides) -> RunConfig:
    """Small but complete run configuration for fast engine tests."""
    cfg = RunConfig(
        backbone=BackboneConfig(num_blocks=2, d=8, num_heads=2, seq_len=3, prefix_blocks=2, input_dim=6),
        spa=SpaConfig(pool_size=6, num_sessions=3, prompt_length=2, depth=2, d=8, num_heads=2),
        epochs=2,
        batch_size=8,
    )
    cfg.stream.num_sessions = 3
    cfg.stream.classes_per_session = 2
    cfg.stream.samples_per_class = 10
    cfg.stream.input_dim = 6
    cfg.head.proj_dim = 32
    for k, v in overrides.items():
        setattr(cfg, k, v)
    return cfg
