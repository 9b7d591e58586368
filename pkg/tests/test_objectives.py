import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from dgan.core import RunConfig, ShapeError
from dgan.objectives import (EPS, LossReport, count_clamped, loss_d_diff, loss_d_from_logits, loss_d_standard,
                             loss_g_diff, loss_g_from_logits, loss_g_standard, loss_recon, total_d_loss,
                             total_g_loss)

t = lambda *v: torch.tensor(v, dtype=torch.float64)  # noqa: E731
probs = st.lists(st.floats(1e-4, 1 - 1e-4), min_size=1, max_size=8)


def test_d_standard_values():
    assert float(loss_d_standard(t(0.5, 0.5), t(0.5, 0.5))) == pytest.approx(2 * math.log(2), abs=1e-12)
    assert float(loss_d_standard(t(0.9), t(0.1))) == pytest.approx(-2 * math.log(0.9), abs=1e-12)
    assert float(loss_d_standard(t(0.9), t(0.1))) == pytest.approx(0.210721, abs=1e-6)
    assert float(loss_d_standard(t(1 - 1e-12), t(1e-12))) < 1e-6


def test_g_standard_values():
    assert float(loss_g_standard(t(0.5))) == pytest.approx(math.log(2), abs=1e-12)
    assert float(loss_g_standard(t(0.9))) == pytest.approx(0.105361, abs=1e-6)
    assert float(loss_g_standard(t(1.0))) < 1e-6


def test_diff_values():
    assert float(loss_d_diff(t(0.5), t(0.5))) == pytest.approx(2 * math.log(2), abs=1e-12)
    assert float(loss_d_diff(t(0.8), t(0.2))) == pytest.approx(0.446287, abs=1e-6)
    assert float(loss_g_diff(t(0.25))) == pytest.approx(math.log(4), abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(probs, probs)
def test_diff_and_standard_share_formula(a, b):
    n = min(len(a), len(b))
    ra, rb = t(*a[:n]), t(*b[:n])
    assert float(loss_d_diff(ra, rb)) == float(loss_d_standard(ra, rb))
    assert float(loss_g_diff(ra)) == float(loss_g_standard(ra))


@settings(max_examples=50, deadline=None)
@given(probs, probs)
def test_losses_positive_and_duplication_invariant(a, b):
    n = min(len(a), len(b))
    ra, rb = t(*a[:n]), t(*b[:n])
    d = float(loss_d_standard(ra, rb))
    assert d > 0 and float(loss_g_standard(rb)) > 0
    assert float(loss_d_standard(torch.cat([ra, ra]), torch.cat([rb, rb]))) == pytest.approx(d, rel=1e-12)
    assert float(loss_g_standard(torch.cat([rb, rb]))) == pytest.approx(float(loss_g_standard(rb)), rel=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-20, 20), min_size=2, max_size=8))
def test_logit_form_agrees_with_probability_form(logits):
    lg = t(*logits)
    p = torch.sigmoid(lg)
    if ((p > EPS) & (p < 1 - EPS)).all():
        assert float(loss_d_from_logits(lg, lg.flip(0))) == pytest.approx(float(loss_d_standard(p, p.flip(0))), rel=1e-6)
        assert float(loss_g_from_logits(lg)) == pytest.approx(float(loss_g_standard(p)), rel=1e-6)


def test_clamping_flagged_and_finite():
    real, fake = t(1.0, 0.3), t(0.0, 1.0)
    assert count_clamped(real, fake) == 3
    assert math.isfinite(float(loss_d_standard(real, fake)))
    assert float(loss_d_standard(real, fake)) == pytest.approx(
        (-math.log(1 - EPS) - math.log(0.3) - math.log(1 - EPS) - math.log(EPS)) / 2, rel=1e-9)


def test_d_loss_batch_mismatch():
    with pytest.raises(ShapeError):
        loss_d_standard(t(0.5, 0.5), t(0.5))


def test_recon_values():
    y = torch.ones(2, 3, 4, 4, dtype=torch.float64)
    assert float(loss_recon(y, y)) == 0.0
    assert float(loss_recon(y, -y)) == 2.0
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(2, 2, 1)), rng.normal(size=(2, 2, 1))
    expected = sum(abs(a.flat[i] - b.flat[i]) for i in range(4)) / 4
    assert abs(float(loss_recon(torch.from_numpy(a), torch.from_numpy(b))) - expected) < 1e-12
    with pytest.raises(ShapeError):
        loss_recon(y, y[:1])


def test_totals():
    cfg = RunConfig()
    ln2 = math.log(2)
    assert total_g_loss(ln2, ln2, 0.01, cfg) == pytest.approx(0.5 * ln2 + ln2 + 1.0, abs=1e-12)
    assert total_g_loss(ln2, ln2, 0.01, cfg) == pytest.approx(2.039721, abs=1e-6)
    assert total_g_loss(0.0, 0.0, 0.0, cfg) == 0.0
    assert total_d_loss(2 * ln2, 2 * ln2) == pytest.approx(4 * ln2, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 10), st.floats(0, 10), st.floats(0, 200), st.floats(0, 5), st.floats(0, 5), st.floats(0, 1))
def test_totals_linear_in_components(ld, ls, lr, a, b, c):
    cfg = RunConfig(lambda_diff=ld, lambda_standard=ls, lambda_recon=lr)
    basis = [total_g_loss(*e, cfg) for e in np.eye(3)]
    assert basis == [ld, ls, lr]
    assert total_g_loss(a, b, c, cfg) == pytest.approx(ld * a + ls * b + lr * c, rel=1e-12, abs=1e-12)


def test_loss_report_csv_round_trip():
    r = LossReport(3, 1.1, 0.2, 1.3, 0.7, 0.6, 0.01, 2.0 / 3.0)
    assert LossReport.csv_header() == "iteration,d_standard,d_diff,d_total,g_standard,g_diff,recon,g_total"
    assert LossReport.from_csv_row(r.csv_row()) == r
