"""Optimization loop, training state and checkpoint container."""
from __future__ import annotations

import io
import logging
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

import numpy as np
import torch

from .core import RunConfig, ConfigError, derived_seed, make_rng, parse_config_text
from .discriminators import Discriminator, build_discriminator
from .generator import UNetGenerator, build_generator
from .label_embed import LabelEmbedding, build_embedding
from .objectives import (LossReport, count_clamped, loss_d_from_logits, loss_g_from_logits,
                         loss_recon, total_d_loss, total_g_loss)

log = logging.getLogger(__name__)

MAGIC = b"DGANCKPT"
FORMAT_VERSION = 1
END_MARK = b"END."


class CheckpointError(RuntimeError):
    pass


@dataclass
class PairedData:
    """Stacked training pairs: sources, targets (B, 3, S, S) and codes (B, N)."""

    x: torch.Tensor
    y: torch.Tensor
    codes: torch.Tensor
    subjects: list[str] = field(default_factory=list)

    def __len__(self):
        return self.x.shape[0]

    @classmethod
    def from_pairs(cls, pairs, dtype=torch.float32) -> "PairedData":
        pairs = list(pairs)
        if not pairs:
            raise ValueError("empty dataset")
        x = torch.as_tensor(np.stack([p.source for p in pairs]), dtype=dtype).permute(0, 3, 1, 2).contiguous()
        y = torch.as_tensor(np.stack([p.target for p in pairs]), dtype=dtype).permute(0, 3, 1, 2).contiguous()
        codes = torch.as_tensor(np.stack([p.code for p in pairs]), dtype=dtype)
        return cls(x, y, codes, [p.subject_id for p in pairs])


@dataclass
class TrainState:
    cfg: RunConfig
    generator: UNetGenerator
    embed: LabelEmbedding
    d_standard: Discriminator
    d_diff: Discriminator
    opt_g: torch.optim.Adam
    opt_d: torch.optim.Adam
    rng: torch.Generator
    iteration: int = 0
    epoch_order: torch.Tensor = field(default_factory=lambda: torch.zeros(0, dtype=torch.int64))
    cursor: int = 0

    @property
    def dtype(self) -> torch.dtype:
        return self.embed.fc1.weight.dtype

    def modules(self) -> dict[str, torch.nn.Module]:
        return {"generator": self.generator, "embed": self.embed,
                "d_standard": self.d_standard, "d_diff": self.d_diff}

    def param_names(self) -> dict[int, str]:
        names = {}
        for prefix, mod in self.modules().items():
            for n, p in mod.named_parameters():
                names[id(p)] = f"{prefix}.{n}"
        return names


def _adam(params, cfg: RunConfig) -> torch.optim.Adam:
    return torch.optim.Adam(params, lr=cfg.learning_rate, betas=(cfg.momentum_beta1, cfg.beta2),
                            eps=cfg.adam_eps)


def init_state(cfg: RunConfig, dtype: torch.dtype = torch.float32) -> TrainState:
    """Freshly initialized networks, optimizers and the run's random stream."""
    g = build_generator(cfg, derived_seed(cfg.seed, "generator")).to(dtype)
    e = build_embedding(cfg.label_count, cfg.image_size, cfg.embed_hidden, cfg.leak_slope,
                        derived_seed(cfg.seed, "embed")).to(dtype)
    ds = build_discriminator(derived_seed(cfg.seed, "d_standard"), cfg.image_size, cfg.base_width,
                             cfg.leak_slope).to(dtype)
    dd = build_discriminator(derived_seed(cfg.seed, "d_diff"), cfg.image_size, cfg.base_width,
                             cfg.leak_slope).to(dtype)
    opt_g = _adam(list(g.parameters()) + list(e.parameters()), cfg)
    opt_d = _adam(list(ds.parameters()) + list(dd.parameters()), cfg)
    rng = make_rng(derived_seed(cfg.seed, "train"))
    return TrainState(cfg, g, e, ds, dd, opt_g, opt_d, rng)


def _check_finite(**terms: torch.Tensor) -> None:
    for name, value in terms.items():
        if not torch.isfinite(value).all():
            raise FloatingPointError(f"non-finite loss component {name!r}: {value.item()}")


def generator_losses(state: TrainState, x, y, codes, rng: torch.Generator):
    """Forward pass of the generator objective; returns (g_total, parts dict, fake)."""
    cfg = state.cfg
    fake = state.generator(x, state.embed(codes), dropout=True, rng=rng)
    zero = fake.new_zeros(())
    g_std = loss_g_from_logits(state.d_standard.logits(fake)) if cfg.use_standard_d else zero
    g_diff = loss_g_from_logits(state.d_diff.logits(x - fake)) if cfg.use_diff_d else zero
    recon = loss_recon(y, fake)
    return total_g_loss(g_diff, g_std, recon, cfg), {"g_standard": g_std, "g_diff": g_diff, "recon": recon}, fake


def discriminator_losses(state: TrainState, x, y, fake):
    cfg = state.cfg
    zero = fake.new_zeros(())
    clamped = 0
    d_std = d_diff = zero
    if cfg.use_standard_d:
        lr, lf = state.d_standard.logits(y), state.d_standard.logits(fake)
        d_std = loss_d_from_logits(lr, lf)
        clamped += count_clamped(torch.sigmoid(lr), torch.sigmoid(lf))
    if cfg.use_diff_d:
        lr, lf = state.d_diff.logits(x - y), state.d_diff.logits(x - fake)
        d_diff = loss_d_from_logits(lr, lf)
        clamped += count_clamped(torch.sigmoid(lr), torch.sigmoid(lf))
    return total_d_loss(d_std, d_diff), {"d_standard": d_std, "d_diff": d_diff}, clamped


def train_step(state: TrainState, batch, on_update: Callable[[str], None] | None = None):
    """One iteration: a step on both discriminators, then one on generator + embedding.

    ``batch`` is ``(x, y, codes)``. Returns ``(state, LossReport)``; the state is
    updated in place.
    """
    x, y, codes = batch
    if x.shape[0] == 0:
        raise ValueError("empty batch")
    if codes.shape[1] != state.cfg.label_count:
        raise ValueError(f"codes have length {codes.shape[1]}, model expects {state.cfg.label_count}")
    for m in state.modules().values():
        m.train()

    with torch.no_grad():
        fake = state.generator(x, state.embed(codes), dropout=True, rng=state.rng)
    d_total, d_parts, clamped = discriminator_losses(state, x, y, fake)
    _check_finite(d_standard=d_parts["d_standard"], d_diff=d_parts["d_diff"])
    state.opt_d.zero_grad(set_to_none=True)
    if d_total.requires_grad:
        d_total.backward()
        state.opt_d.step()
    if on_update:
        on_update("discriminators")

    # fresh fake through the updated discriminators
    g_total, g_parts, _ = generator_losses(state, x, y, codes, state.rng)
    _check_finite(**g_parts)
    state.opt_g.zero_grad(set_to_none=True)
    g_total.backward()
    state.opt_g.step()
    # the generator backward also filled discriminator grads; they are never stepped here
    state.opt_d.zero_grad(set_to_none=True)
    if on_update:
        on_update("generator")

    state.iteration += 1
    v = lambda t: float(t.detach())  # noqa: E731
    report = LossReport(
        state.iteration,
        v(d_parts["d_standard"]), v(d_parts["d_diff"]), v(d_total),
        v(g_parts["g_standard"]), v(g_parts["g_diff"]), v(g_parts["recon"]), v(g_total),
        clamped,
    )
    return state, report


def next_batch(state: TrainState, data: PairedData):
    """Next minibatch in the seeded shuffle order; reshuffles at each epoch boundary."""
    n = len(data)
    bs = min(state.cfg.batch_size, n)
    if state.epoch_order.numel() != n or state.cursor + bs > n:
        state.epoch_order = torch.randperm(n, generator=state.rng)
        state.cursor = 0
    idx = state.epoch_order[state.cursor:state.cursor + bs]
    state.cursor += bs
    return data.x[idx], data.y[idx], data.codes[idx]


def train(cfg: RunConfig, data: PairedData, out_dir: str | Path | None = None,
          state: TrainState | None = None, progress: Callable[[LossReport], None] | None = None,
          keep_reports: bool = False):
    """Run until ``cfg.max_iterations``; optionally resumes from ``state``.

    Writes ``train_log.csv`` and checkpoints (every ``checkpoint_every`` iterations
    and at the end) under ``out_dir`` when given. Returns the state, or
    ``(state, reports)`` with ``keep_reports``.
    """
    if cfg.max_iterations is None:
        raise ConfigError("max_iterations is required")
    if data is None or len(data) == 0:
        raise ValueError("empty dataset")
    if state is None:
        state = init_state(cfg, data.x.dtype)
    else:
        state.cfg = cfg
    reports = []
    log_file = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        log_path = out_dir / "train_log.csv"
        fresh = state.iteration == 0 or not log_path.exists()
        log_file = open(log_path, "w" if fresh else "a", encoding="utf-8")
        if fresh:
            log_file.write(LossReport.csv_header() + "\n")
    try:
        while state.iteration < cfg.max_iterations:
            _, report = train_step(state, next_batch(state, data))
            if keep_reports:
                reports.append(report)
            if log_file:
                log_file.write(report.csv_row() + "\n")
            if progress:
                progress(report)
            if out_dir is not None and cfg.checkpoint_every and state.iteration % cfg.checkpoint_every == 0:
                save_checkpoint(state, out_dir / f"ckpt_{state.iteration:07d}.bin")
        if out_dir is not None:
            save_checkpoint(state, out_dir / "final.bin")
    finally:
        if log_file:
            log_file.close()
    return (state, reports) if keep_reports else state


# ---------------------------------------------------------------- checkpoints

def _named_tensors(state: TrainState) -> list[tuple[str, torch.Tensor]]:
    out = []
    for prefix, mod in state.modules().items():
        for k, v in mod.state_dict().items():
            out.append((f"{prefix}.{k}", v))
    names = state.param_names()
    for opt_name, opt in (("opt_g", state.opt_g), ("opt_d", state.opt_d)):
        for group in opt.param_groups:
            for p in group["params"]:
                st = opt.state.get(p)
                if not st:
                    continue
                for key in ("step", "exp_avg", "exp_avg_sq"):
                    out.append((f"{opt_name}.{names[id(p)]}.{key}", torch.as_tensor(st[key])))
    out.append(("iteration", torch.tensor(state.iteration, dtype=torch.int64)))
    out.append(("cursor", torch.tensor(state.cursor, dtype=torch.int64)))
    out.append(("epoch_order", state.epoch_order.to(torch.int64)))
    return out


def _pack_str(s: str, fmt: str = "<H") -> bytes:
    raw = s.encode("utf-8")
    return struct.pack(fmt, len(raw)) + raw


def serialize_state(state: TrainState) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", FORMAT_VERSION))
    buf.write(_pack_str(state.cfg.to_text(), "<I"))
    tensors = _named_tensors(state)
    buf.write(struct.pack("<I", len(tensors)))
    for name, t in tensors:
        arr = t.detach().cpu().contiguous().numpy()
        arr = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        buf.write(_pack_str(name))
        buf.write(_pack_str(arr.dtype.str))
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        payload = arr.tobytes(order="C")
        buf.write(struct.pack("<Q", len(payload)))
        buf.write(payload)
    rng = state.rng.get_state().numpy().tobytes()
    buf.write(struct.pack("<Q", len(rng)))
    buf.write(rng)
    buf.write(END_MARK)
    return buf.getvalue()


def save_checkpoint(state: TrainState, path: str | Path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(serialize_state(state))
    os.replace(tmp, path)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(f"checkpoint truncated while reading {what}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))

    def string(self, fmt: str, what: str) -> str:
        (n,) = self.unpack(fmt, what)
        return self.take(n, what).decode("utf-8")


def deserialize_state(data: bytes) -> TrainState:
    r = _Reader(data)
    if r.take(len(MAGIC), "magic") != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    (version,) = r.unpack("<I", "format version")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format version {version} (expected {FORMAT_VERSION})")
    cfg = parse_config_text(r.string("<I", "config"))
    (count,) = r.unpack("<I", "tensor count")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        name = r.string("<H", "tensor name")
        dtype = np.dtype(r.string("<H", f"dtype of {name}"))
        (ndim,) = r.unpack("<B", f"rank of {name}")
        shape = r.unpack(f"<{ndim}Q", f"shape of {name}")
        (nbytes,) = r.unpack("<Q", f"size of {name}")
        if nbytes != int(np.prod(shape, dtype=np.int64)) * dtype.itemsize:
            raise CheckpointError(f"tensor {name}: payload size disagrees with shape {shape}")
        tensors[name] = np.frombuffer(r.take(nbytes, f"payload of {name}"), dtype=dtype).reshape(shape).copy()
    (n_rng,) = r.unpack("<Q", "rng state size")
    rng_bytes = r.take(n_rng, "rng state")
    if r.take(len(END_MARK), "end marker") != END_MARK or r.pos != len(data):
        raise CheckpointError("checkpoint has trailing or corrupt data after rng state")

    dtype = torch.from_numpy(tensors["embed.fc1.weight"][:0]).dtype if "embed.fc1.weight" in tensors else torch.float32
    state = init_state(cfg, dtype)
    for prefix, mod in state.modules().items():
        sd = mod.state_dict()
        for k, v in sd.items():
            name = f"{prefix}.{k}"
            if name not in tensors:
                raise CheckpointError(f"checkpoint is missing tensor {name}")
            if tuple(tensors[name].shape) != tuple(v.shape):
                raise CheckpointError(f"tensor {name}: shape {tensors[name].shape} does not match model {tuple(v.shape)}")
            sd[k] = torch.from_numpy(tensors[name])
        mod.load_state_dict(sd)
    names = state.param_names()
    for opt_name, opt in (("opt_g", state.opt_g), ("opt_d", state.opt_d)):
        for group in opt.param_groups:
            for p in group["params"]:
                base = f"{opt_name}.{names[id(p)]}"
                if f"{base}.step" not in tensors:
                    continue
                st = {}
                for key in ("step", "exp_avg", "exp_avg_sq"):
                    arr = tensors.get(f"{base}.{key}")
                    if arr is None:
                        raise CheckpointError(f"checkpoint is missing tensor {base}.{key}")
                    if key != "step" and tuple(arr.shape) != tuple(p.shape):
                        raise CheckpointError(f"tensor {base}.{key}: shape {arr.shape} does not match {tuple(p.shape)}")
                    st[key] = torch.from_numpy(arr)
                opt.state[p] = st
    state.iteration = int(tensors["iteration"])
    state.cursor = int(tensors["cursor"])
    state.epoch_order = torch.from_numpy(tensors["epoch_order"])
    state.rng.set_state(torch.from_numpy(np.frombuffer(rng_bytes, dtype=np.uint8).copy()))
    return state


def load_checkpoint(path: str | Path) -> TrainState:
    return deserialize_state(Path(path).read_bytes())


def snapshot(modules: Iterable[torch.nn.Module]) -> list[torch.Tensor]:
    return [p.detach().clone() for m in modules for p in m.parameters()]
