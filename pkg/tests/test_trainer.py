import numpy as np
import pytest
import torch

from dgan.core import ConfigError
from dgan.objectives import LossReport
from dgan.trainer import (CheckpointError, PairedData, deserialize_state, generator_losses, init_state,
                          load_checkpoint, save_checkpoint, serialize_state, snapshot, train, train_step)

from conftest import random_batch


def toy_data(cfg, n=8, seed=0, dtype=torch.float64):
    x, y, codes = random_batch(cfg, n, seed, dtype)
    return PairedData(x, y, codes, [f"s{i}" for i in range(n)])


def params(mod):
    return [p.detach().clone() for p in mod.parameters()]


def same(a, b):
    return all(torch.equal(p, q) for p, q in zip(a, b))


def test_update_order_and_isolation(tiny_cfg):
    state = init_state(tiny_cfg, torch.float64)
    batch = random_batch(tiny_cfg)
    g_mods = [state.generator, state.embed]
    d_mods = [state.d_standard, state.d_diff]
    before_g, before_d = snapshot(g_mods), snapshot(d_mods)
    order, checks = [], {}

    def hook(stage):
        order.append(stage)
        if stage == "discriminators":
            checks["g_untouched_by_d_step"] = same(snapshot(g_mods), before_g)
            checks["d_moved"] = not same(snapshot(d_mods), before_d)
            checks["d_after_d_step"] = snapshot(d_mods)
        else:
            checks["d_untouched_by_g_step"] = same(snapshot(d_mods), checks["d_after_d_step"])
            checks["g_moved"] = not same(snapshot(g_mods), before_g)

    _, report = train_step(state, batch, on_update=hook)
    assert order == ["discriminators", "generator"]
    assert checks["g_untouched_by_d_step"] and checks["d_moved"]
    assert checks["d_untouched_by_g_step"] and checks["g_moved"]
    assert report.iteration == 1 and state.iteration == 1


def test_report_consistent_with_totals(tiny_cfg):
    state = init_state(tiny_cfg, torch.float64)
    _, r = train_step(state, random_batch(tiny_cfg))
    assert r.d_total == pytest.approx(r.d_standard + r.d_diff, rel=1e-12)
    assert r.g_total == pytest.approx(0.5 * r.g_diff + r.g_standard + 100 * r.recon, rel=1e-12)


def test_zero_adversarial_weights_is_pure_regression(tiny_cfg):
    cfg = tiny_cfg.replace(lambda_diff=0.0, lambda_standard=0.0)
    state = init_state(cfg, torch.float64)
    d_before = snapshot([state.d_standard, state.d_diff])
    _, r = train_step(state, random_batch(cfg))
    assert not same(snapshot([state.d_standard, state.d_diff]), d_before)
    assert r.g_total == pytest.approx(100 * r.recon, rel=1e-12)


def test_zero_learning_rate_is_null_step(tiny_cfg):
    state = init_state(tiny_cfg.replace(learning_rate=0.0), torch.float64)
    mods = list(state.modules().values())
    before = snapshot(mods)
    train_step(state, random_batch(tiny_cfg))
    assert same(snapshot(mods), before)


def test_ablation_switches_freeze_disabled_discriminator(tiny_cfg):
    cfg = tiny_cfg.replace(lambda_diff=0.0, use_diff_d=False)
    state = init_state(cfg, torch.float64)
    before = snapshot([state.d_diff])
    _, r = train_step(state, random_batch(cfg))
    assert same(snapshot([state.d_diff]), before)
    assert r.d_diff == 0.0 and r.g_diff == 0.0
    cfg = tiny_cfg.replace(lambda_standard=0.0, use_standard_d=False)
    state = init_state(cfg, torch.float64)
    before = snapshot([state.d_standard])
    _, r = train_step(state, random_batch(cfg))
    assert same(snapshot([state.d_standard]), before)
    assert r.d_standard == 0.0 and r.g_standard == 0.0


def test_generator_step_follows_adam_formula(tiny_cfg):
    """Two steps; each generator update must equal Adam applied to a finite-difference-checked gradient."""
    cfg = tiny_cfg
    state = init_state(cfg, torch.float64)
    g_params = list(state.generator.parameters()) + list(state.embed.parameters())
    b1, b2, eps, lr = cfg.momentum_beta1, cfg.beta2, cfg.adam_eps, cfg.learning_rate
    m = [torch.zeros_like(p) for p in g_params]
    v = [torch.zeros_like(p) for p in g_params]
    rng = np.random.default_rng(0)
    for step in (1, 2):
        batch = random_batch(cfg, seed=step)
        captured = {}

        def hook(stage):
            if stage != "discriminators":
                return
            rng_state = state.rng.get_state()
            # BatchNorm running statistics are the only buffers; restore them between evaluations
            buffers = [(b, b.detach().clone()) for m_ in state.modules().values() for b in m_.buffers()]

            def restore():
                for b, saved in buffers:
                    b.copy_(saved)

            def loss():
                restore()
                g = torch.Generator()
                g.set_state(rng_state)
                return generator_losses(state, *batch, g)[0]

            grads = torch.autograd.grad(loss(), g_params)
            # spot-check the gradient itself against central differences
            for _ in range(5):
                k = int(rng.integers(len(g_params)))
                flat = g_params[k].data.view(-1)
                i = int(rng.integers(flat.numel()))
                old = float(flat[i])
                with torch.no_grad():
                    flat[i] = old + 1e-6; up = float(loss())
                    flat[i] = old - 1e-6; dn = float(loss())
                    flat[i] = old
                fd, an = (up - dn) / 2e-6, float(grads[k].view(-1)[i])
                assert abs(fd - an) <= 1e-3 * max(abs(fd), abs(an), 1e-4)
            restore()
            captured["grads"] = grads
            captured["before"] = [p.detach().clone() for p in g_params]

        train_step(state, batch, on_update=hook)
        for k, p in enumerate(g_params):
            g = captured["grads"][k]
            m[k] = b1 * m[k] + (1 - b1) * g
            v[k] = b2 * v[k] + (1 - b2) * g * g
            mhat, vhat = m[k] / (1 - b1 ** step), v[k] / (1 - b2 ** step)
            expected = captured["before"][k] - lr * mhat / (vhat.sqrt() + eps)
            assert (p.detach() - expected).abs().max() < 1e-6


def test_non_finite_loss_names_component(tiny_cfg):
    state = init_state(tiny_cfg, torch.float64)
    x, y, codes = random_batch(tiny_cfg)
    y[0, 0, 0, 0] = float("nan")
    with pytest.raises(FloatingPointError, match="d_standard"):
        train_step(state, (x, y, codes))


def test_train_requires_budget_and_data(tiny_cfg):
    with pytest.raises(ConfigError):
        train(tiny_cfg.replace(max_iterations=None), toy_data(tiny_cfg))
    with pytest.raises(ValueError):
        PairedData.from_pairs([])


def test_zero_iterations_returns_fresh_state(tiny_cfg, tmp_path):
    cfg = tiny_cfg.replace(max_iterations=0)
    state = train(cfg, toy_data(cfg), tmp_path)
    fresh = init_state(cfg, torch.float64)
    assert state.iteration == 0
    assert same(snapshot(state.modules().values()), snapshot(fresh.modules().values()))
    assert (tmp_path / "final.bin").exists()


def test_same_seed_runs_agree(tiny_cfg):
    data = toy_data(tiny_cfg)
    _, a = train(tiny_cfg, data, keep_reports=True)
    _, b = train(tiny_cfg, data, keep_reports=True)
    assert len(a) == 10
    for ra, rb in zip(a, b):
        assert np.allclose(ra.values(), rb.values(), atol=1e-6, rtol=0)
    _, c = train(tiny_cfg.replace(seed=1), data, keep_reports=True)
    assert not np.allclose(a[0].values(), c[0].values())


def test_reconstruction_descends(tiny_cfg):
    cfg = tiny_cfg.replace(max_iterations=500, batch_size=4)
    _, reports = train(cfg, toy_data(cfg, dtype=torch.float32), keep_reports=True)
    assert reports[-1].recon < reports[0].recon


def test_log_and_checkpoints_written(tiny_cfg, tmp_path):
    cfg = tiny_cfg.replace(max_iterations=4, checkpoint_every=2)
    train(cfg, toy_data(cfg), tmp_path)
    lines = (tmp_path / "train_log.csv").read_text().splitlines()
    assert lines[0] == LossReport.csv_header()
    assert [LossReport.from_csv_row(l).iteration for l in lines[1:]] == [1, 2, 3, 4]
    assert {p.name for p in tmp_path.glob("*.bin")} == {"ckpt_0000002.bin", "ckpt_0000004.bin", "final.bin"}


def test_checkpoint_round_trip_is_byte_identical(tiny_cfg, tmp_path):
    state = train(tiny_cfg.replace(max_iterations=3), toy_data(tiny_cfg))
    save_checkpoint(state, tmp_path / "a.bin")
    loaded = load_checkpoint(tmp_path / "a.bin")
    save_checkpoint(loaded, tmp_path / "b.bin")
    assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()
    assert loaded.iteration == 3 and loaded.cfg == state.cfg
    assert same(snapshot(loaded.modules().values()), snapshot(state.modules().values()))
    assert torch.equal(loaded.rng.get_state(), state.rng.get_state())


def test_resume_matches_uninterrupted(tiny_cfg, tmp_path):
    data = toy_data(tiny_cfg)
    _, full = train(tiny_cfg.replace(max_iterations=6), data, keep_reports=True)
    part = train(tiny_cfg.replace(max_iterations=4), data, tmp_path)
    resumed = load_checkpoint(tmp_path / "final.bin")
    _, rest = train(tiny_cfg.replace(max_iterations=6), data, state=resumed, keep_reports=True)
    assert [r.iteration for r in rest] == [5, 6]
    for a, b in zip(rest, full[4:]):
        assert np.allclose(a.values(), b.values(), atol=1e-6, rtol=0)
    assert len((tmp_path / "train_log.csv").read_text().splitlines()) == 5
    del part


def test_truncated_checkpoint_rejected(tiny_cfg):
    blob = serialize_state(init_state(tiny_cfg, torch.float64))
    for cut in (4, 20, len(blob) // 2, len(blob) - 1):
        with pytest.raises(CheckpointError):
            deserialize_state(blob[:cut])


def test_version_and_magic_checked(tiny_cfg):
    blob = bytearray(serialize_state(init_state(tiny_cfg)))
    bad = bytes(blob[:8]) + (99).to_bytes(4, "little") + bytes(blob[12:])
    with pytest.raises(CheckpointError, match="version 99"):
        deserialize_state(bad)
    with pytest.raises(CheckpointError, match="magic"):
        deserialize_state(b"NOTACKPT" + bytes(blob[8:]))


def test_shape_mismatch_names_tensor(tiny_cfg):
    blob = serialize_state(init_state(tiny_cfg))
    # same container, but the config now asks for a wider label embedding
    other = tiny_cfg.replace(embed_hidden=32).to_text().encode()
    old = tiny_cfg.to_text().encode()
    patched = blob.replace(len(old).to_bytes(4, "little") + old, len(other).to_bytes(4, "little") + other)
    with pytest.raises(CheckpointError, match="embed.fc1.weight"):
        deserialize_state(patched)
