import numpy as np
import pytest
import torch

from dgan.core import RunConfig


@pytest.fixture
def tiny_cfg():
    """16x16 model small enough for double-precision gradient checks."""
    return RunConfig(image_size=16, base_width=8, gen_depth=3, embed_hidden=16, batch_size=2,
                     max_iterations=10, dropout_at_synthesis=False)


def random_batch(cfg, n=2, seed=0, dtype=torch.float64):
    g = torch.Generator().manual_seed(seed)
    s = cfg.image_size
    x = torch.rand(n, 3, s, s, generator=g, dtype=dtype) * 2 - 1
    y = torch.rand(n, 3, s, s, generator=g, dtype=dtype) * 2 - 1
    codes = torch.zeros(n, cfg.label_count, dtype=dtype)
    for i in range(n):
        codes[i, (i + seed) % cfg.label_count] = 1.0
    return x, y, codes


def random_image(size, seed=0):
    return np.random.default_rng(seed).uniform(-1, 1, (size, size, 3))


# criterion number -> (title, passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}


def record(number, title, passed, detail=""):
    ACCEPTANCE[number] = (title, bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {n}. {title}: {detail}")
