"""Optimization loop: Adam, triangular-2 cyclic learning rate, gradient
clipping, and validation-based model selection."""

import os
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad, losses, model
from .autodiff import Tensor

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

I_MAX_PERCENTILE = 99.5


@dataclass
class TrainConfig:
    eta: float = 1e-3
    batch_size: int = 32
    epochs: int = 25
    half_cycle_epochs: int = 6
    clip_norm: float = 1.0
    seed: int = 0
    weights: losses.LossWeights = field(default_factory=losses.LossWeights)

    def __post_init__(self):
        if self.eta <= 0 or self.clip_norm <= 0 or self.epochs < 1:
            raise ValueError("need eta > 0, clip_norm > 0, epochs >= 1")


def cyclic_lr(step, steps_per_half_cycle, eta):
    """Triangular-2: oscillates between eta/10 and a per-cycle peak that halves
    its gap to the base each cycle; lr(0) = eta/10."""
    if steps_per_half_cycle <= 0:
        raise ValueError("steps_per_half_cycle must be positive")
    base = eta / 10.0
    cycle = step // (2 * steps_per_half_cycle)
    pos = step % (2 * steps_per_half_cycle)
    tri = 1.0 - abs(pos - steps_per_half_cycle) / steps_per_half_cycle
    peak = base + (eta - base) / (2.0 ** cycle)
    return base + (peak - base) * tri


def clip_grad_norm(grads, max_norm=1.0):
    """Scale all grads by max_norm/norm when the global L2 norm exceeds max_norm."""
    total = 0.0
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("non-finite gradient")
        total += float(np.sum(g.astype(np.float64) ** 2))
    norm = np.sqrt(total)
    if norm > max_norm:
        scale = max_norm / norm
        grads = [g * np.float32(scale) for g in grads]
    return grads, norm


class AdamState:
    """Per-parameter first/second moments plus a shared step counter."""

    def __init__(self, params):
        self.m = {n: np.zeros_like(t.data) for n, t in params.named()}
        self.v = {n: np.zeros_like(t.data) for n, t in params.named()}
        self.t = 0


def adam_step(params, grads, state, lr):
    state.t += 1
    bc1 = 1.0 - ADAM_BETA1 ** state.t
    bc2 = 1.0 - ADAM_BETA2 ** state.t
    for name, g in grads.items():
        t = params.tensors[name]
        m = state.m[name]
        v = state.v[name]
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * g * g
        t.data -= (lr * (m / bc1) / (np.sqrt(v / bc2) + ADAM_EPS)).astype(np.float32)


@dataclass
class TrainResult:
    params: model.ModelParams
    cfg: model.ModelConfig
    best_val: float
    best_epoch: int
    log_rows: list
    val_history: list
    ring_dev_history: list  # mean |c^2+s^2-1| on validation, per epoch


def _stack_batch(frames, patches, idx):
    intensity = np.stack([frames[i].intensity for i in idx])[:, None]
    a = np.stack([patches[i].amplitude for i in idx])[:, None]
    c = np.stack([patches[i].cosp for i in idx])[:, None]
    s = np.stack([patches[i].sinp for i in idx])[:, None]
    phi = np.stack([patches[i].phase for i in idx])[:, None]
    return intensity, a, c, s, phi


def _batch_loss(frames, patches, idx, params, cfg, weights):
    intensity, a, c, s, phi = _stack_batch(frames, patches, idx)
    out = model.forward(intensity, params, cfg)
    if cfg.variant == "scalar_phase":
        total = ad.add(losses.mse(Tensor(a), out["amp"]),
                       losses.mse(Tensor(phi), out["phase"]))
        bd = losses.LossBreakdown(base=total.item(), amp=0.0, phase=0.0, cons=0.0,
                                  circular=0.0, grad_amp=0.0, ssim_amp=0.0,
                                  grad_phase=0.0, ssim_phase=0.0, total=total.item())
        ring = 0.0
    else:
        total, bd = losses.total_loss(Tensor(a), out["amp"], Tensor(c), out["c_pre"],
                                      Tensor(s), out["s_pre"], out["c_proj"],
                                      out["s_proj"], weights)
        ring = float(np.mean(np.abs(out["c_pre"].data ** 2 + out["s_pre"].data ** 2 - 1.0)))
    return total, bd, ring


def _eval_split(frames, patches, idx, params, cfg, weights, batch_size):
    tot, ring, n = 0.0, 0.0, 0
    for start in range(0, len(idx), batch_size):
        chunk = idx[start:start + batch_size]
        total, _, r = _batch_loss(frames, patches, chunk, params, cfg, weights)
        tot += total.item() * len(chunk)
        ring += r * len(chunk)
        n += len(chunk)
    return tot / max(n, 1), ring / max(n, 1)


def compute_i_max(frames, idx=None):
    """99.5th-percentile intensity over the training split, frozen for SADGS."""
    if idx is None:
        idx = range(len(frames))
    pixels = np.concatenate([frames[i].intensity.ravel() for i in idx])
    return float(np.percentile(pixels, I_MAX_PERCENTILE))


def train(frames, patches, model_cfg, train_cfg, ckpt_dir=None, config_hash="",
          log_path=None):
    """Train with per-epoch seeded shuffling and best-validation checkpointing."""
    train_idx = [i for i, f in enumerate(frames) if f.split == "train"]
    val_idx = [i for i, f in enumerate(frames) if f.split == "val"]
    if not train_idx:
        raise ValueError("empty training split")
    if not val_idx:
        # fall back to a slice of train frames so model selection still works
        val_idx = train_idx[: max(1, len(train_idx) // 20)]

    model_cfg.i_max = compute_i_max(frames, train_idx)
    params = model.init_params(model_cfg)
    state = AdamState(params)
    names = sorted(params.tensors)

    steps_per_epoch = (len(train_idx) + train_cfg.batch_size - 1) // train_cfg.batch_size
    half_cycle = train_cfg.half_cycle_epochs * steps_per_epoch

    log_rows = []
    val_history, ring_history = [], []
    best_val, best_epoch = float("inf"), -1
    best_data = {n: t.data.copy() for n, t in params.named()}
    step = 0
    for epoch in range(train_cfg.epochs):
        order = np.array(train_idx)
        np.random.default_rng([train_cfg.seed, epoch]).shuffle(order)
        for start in range(0, len(order), train_cfg.batch_size):
            batch = order[start:start + train_cfg.batch_size]
            lr = cyclic_lr(step, half_cycle, train_cfg.eta)
            for t in params.tensors.values():
                t.zero_grad()
            with ad.Tape() as tape:
                total, bd, _ = _batch_loss(frames, patches, batch, params,
                                           model_cfg, train_cfg.weights)
                if not np.isfinite(total.item()):
                    raise FloatingPointError(f"non-finite loss at step {step}")
                ad.backward(tape, total)
            grads = [params.tensors[n].grad for n in names]
            grads, _ = clip_grad_norm(grads, train_cfg.clip_norm)
            adam_step(params, dict(zip(names, grads)), state, lr)
            log_rows.append([step, lr] + bd.to_row())
            step += 1

        val_loss, ring_dev = _eval_split(frames, patches, val_idx, params,
                                         model_cfg, train_cfg.weights,
                                         train_cfg.batch_size)
        val_history.append(val_loss)
        ring_history.append(ring_dev)
        if val_loss < best_val:
            best_val, best_epoch = val_loss, epoch
            best_data = {n: t.data.copy() for n, t in params.named()}
            if ckpt_dir is not None:
                model.save_checkpoint(ckpt_dir, params, model_cfg,
                                      seed=train_cfg.seed, epoch=epoch,
                                      val_loss=val_loss, config_hash=config_hash)

    best_params = model.ModelParams(
        tensors={n: Tensor(d, requires_grad=True) for n, d in best_data.items()})
    if log_path is not None:
        write_loss_log(log_path, log_rows)
    return TrainResult(params=best_params, cfg=model_cfg, best_val=best_val,
                       best_epoch=best_epoch, log_rows=log_rows,
                       val_history=val_history, ring_dev_history=ring_history)


def write_loss_log(path, log_rows):
    header = ["step", "lr"] + list(losses.LossBreakdown.FIELDS)
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in log_rows:
            fh.write(",".join(f"{v:.8g}" if isinstance(v, float) else str(v)
                              for v in row) + "\n")
