"""Dual-gain dual-encoder network with three decoders for amplitude and
circular phase coordinates, plus the ablation variants."""

import json
import os
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad, circphase, gridio
from .autodiff import Tensor

VARIANTS = ("full", "scalar_phase", "single_gain", "no_skip", "no_outnorm",
            "deep_fusion", "three_gain")


@dataclass
class ModelConfig:
    n_c: int = 32
    i_sat: float = 4095.0
    alpha: float = 0.85
    g0: float = 0.0
    g_l: float = 0.001
    g_h: float = 4.0
    i_max: float = 1.0  # 99.5th-percentile train-set intensity, frozen before training
    variant: str = "full"
    seed: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant '{self.variant}'")
        if not (self.g_l < self.g_h) or self.i_sat <= 0 or self.i_max <= 0:
            raise ValueError("need g_l < g_h, i_sat > 0, i_max > 0")


@dataclass
class ModelParams:
    tensors: dict

    def count(self):
        return sum(t.size for t in self.tensors.values())

    def named(self):
        return self.tensors.items()


def gain_factor(cfg, g):
    return cfg.i_sat * cfg.alpha / (2.0 ** cfg.g0 * cfg.i_max) * 2.0 ** g


def _gain_branch(intensity, cfg, g):
    scaled = np.minimum(gain_factor(cfg, g) * intensity, cfg.i_sat)
    return (scaled / cfg.i_sat).astype(np.float32)


def sadgs(intensity, cfg):
    """Saturation-aware dual-gain scaling; returns (I_l, I_h) normalized to [0,1]."""
    intensity = np.asarray(intensity, dtype=np.float64)
    if np.any(intensity < 0):
        raise ValueError("negative intensity")
    return _gain_branch(intensity, cfg, cfg.g_l), _gain_branch(intensity, cfg, cfg.g_h)


def _gain_exponents(cfg):
    if cfg.variant == "single_gain":
        return [cfg.g_h]
    if cfg.variant == "three_gain":
        return [cfg.g_l, (cfg.g_l + cfg.g_h) / 2.0, cfg.g_h]
    return [cfg.g_l, cfg.g_h]


def _decoder_names(cfg):
    if cfg.variant == "scalar_phase":
        return ["amp", "phase"]
    return ["amp", "cos", "sin"]


def layer_defs(cfg):
    """Named conv layers: name -> (c_out, c_in, k, has_bias)."""
    n = cfg.n_c
    nb = len(_gain_exponents(cfg))
    defs = {}
    for i in range(nb):
        br = f"enc{i}"
        defs[f"{br}_c1"] = (n, 1, 5, True)
        defs[f"{br}_c2"] = (2 * n, n, 5, True)
        defs[f"{br}_c3"] = (4 * n, 2 * n, 5, True)
    if cfg.variant == "deep_fusion":
        defs["fusion_a"] = (8 * n, 8 * n, 3, True)
        defs["fusion_b"] = (4 * n, 8 * n, 3, True)
    else:
        defs["fusion"] = (4 * n, 4 * n * nb, 1, False)
    has_skip = cfg.variant != "no_skip"
    if has_skip:
        defs["skip_c1"] = (n, 1, 3, True)
        defs["skip_c2"] = (2 * n, n, 3, True)
    b2_in = 6 * n if has_skip else 4 * n
    for d in _decoder_names(cfg):
        defs[f"dec_{d}_b1c1"] = (4 * n, 4 * n, 3, True)
        defs[f"dec_{d}_b1c2"] = (4 * n, 4 * n, 3, True)
        defs[f"dec_{d}_b2c1"] = (2 * n, b2_in, 3, True)
        defs[f"dec_{d}_b2c2"] = (2 * n, 2 * n, 3, True)
        defs[f"dec_{d}_b3c1"] = (2 * n, 2 * n, 3, True)
        defs[f"dec_{d}_b3c2"] = (2 * n, 2 * n, 3, True)
        defs[f"dec_{d}_out"] = (1, 2 * n, 3, True)
    return defs


def init_params(cfg):
    """Fan-in uniform weights in [-sqrt(6/fan_in), +sqrt(6/fan_in)], zero biases."""
    rng = np.random.default_rng(cfg.seed)
    tensors = {}
    for name, (cout, cin, k, has_bias) in layer_defs(cfg).items():
        bound = np.sqrt(6.0 / (cin * k * k))
        w = rng.uniform(-bound, bound, size=(cout, cin, k, k)).astype(np.float32)
        tensors[name + ".w"] = Tensor(w, requires_grad=True)
        if has_bias:
            tensors[name + ".b"] = Tensor(np.zeros(cout, np.float32), requires_grad=True)
    return ModelParams(tensors=tensors)


def _conv(params, name, x, stride=1, padding=1):
    t = params.tensors
    return ad.conv2d(x, t[name + ".w"], t.get(name + ".b"), stride=stride, padding=padding)


def _encode(params, branch, x):
    x = ad.relu(_conv(params, f"{branch}_c1", x, stride=2, padding=2))
    x = ad.relu(_conv(params, f"{branch}_c2", x, stride=2, padding=2))
    x = ad.relu(_conv(params, f"{branch}_c3", x, stride=2, padding=2))
    return x


def _decode(params, d, z, skip):
    h = ad.relu(_conv(params, f"dec_{d}_b1c1", z))
    h = ad.relu(_conv(params, f"dec_{d}_b1c2", h))
    h = ad.upsample_bilinear2x(h)
    if skip is not None:
        h = ad.concat_channels(h, skip)
    h = ad.relu(_conv(params, f"dec_{d}_b2c1", h))
    h = ad.relu(_conv(params, f"dec_{d}_b2c2", h))
    h = ad.upsample_bilinear2x(h)
    h = ad.relu(_conv(params, f"dec_{d}_b3c1", h))
    h = ad.relu(_conv(params, f"dec_{d}_b3c2", h))
    h = ad.upsample_bilinear2x(h)
    return _conv(params, f"dec_{d}_out", h)


def _prep_input(intensity):
    arr = np.asarray(intensity, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None, None]
    elif arr.ndim == 3:
        arr = arr[:, None]
    elif arr.ndim != 4:
        raise ValueError(f"bad input shape {arr.shape}")
    return arr


def forward(intensity, params, cfg):
    """Run the network on raw intensity; returns a dict of N x 1 x H x W tensors.

    Full variant: amp, c_pre, s_pre, c_proj, s_proj.
    scalar_phase variant: amp, phase (phase = pi * tanh, trained on raw angles).
    """
    raw = _prep_input(intensity)
    branches = [Tensor(_gain_branch(raw, cfg, g)) for g in _gain_exponents(cfg)]

    feats = [_encode(params, f"enc{i}", b) for i, b in enumerate(branches)]
    z = feats[0]
    for f in feats[1:]:
        z = ad.concat_channels(z, f)
    if cfg.variant == "deep_fusion":
        z = ad.relu(_conv(params, "fusion_a", z))
        z = _conv(params, "fusion_b", z)
    else:
        z = _conv(params, "fusion", z, padding=0)

    skip = None
    if cfg.variant != "no_skip":
        raw_t = Tensor((raw / max(cfg.i_max, 1e-12)).astype(np.float32))
        skip = ad.relu(_conv(params, "skip_c1", raw_t, stride=2, padding=1))
        skip = _conv(params, "skip_c2", skip, stride=2, padding=1)

    amp = ad.sigmoid(_decode(params, "amp", z, skip))
    if cfg.variant == "scalar_phase":
        phase = ad.scale(ad.tanh(_decode(params, "phase", z, skip)), np.pi)
        return {"amp": amp, "phase": phase}

    c_pre = ad.tanh(_decode(params, "cos", z, skip))
    s_pre = ad.tanh(_decode(params, "sin", z, skip))
    if cfg.variant == "no_outnorm":
        c_proj, s_proj = c_pre, s_pre
    else:
        c_proj, s_proj = circphase.unit_project(c_pre, s_pre)
    return {"amp": amp, "c_pre": c_pre, "s_pre": s_pre,
            "c_proj": c_proj, "s_proj": s_proj}


# ---------------------------------------------------------------------------
# checkpoints

def save_checkpoint(ckpt_dir, params, cfg, seed=0, epoch=0, val_loss=float("nan"),
                    config_hash=""):
    os.makedirs(os.path.join(ckpt_dir, "params"), exist_ok=True)
    for name, t in params.named():
        gridio.write_grid(os.path.join(ckpt_dir, "params", name + ".ptg"), t.data)
    manifest = {"cfg": asdict(cfg), "seed": seed, "epoch": epoch,
                "val_loss": val_loss, "config_hash": config_hash,
                "param_names": sorted(params.tensors)}
    with open(os.path.join(ckpt_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def load_checkpoint(ckpt_dir):
    with open(os.path.join(ckpt_dir, "manifest.json")) as fh:
        manifest = json.load(fh)
    cfg = ModelConfig(**manifest["cfg"])
    tensors = {}
    for name in manifest["param_names"]:
        arr = gridio.read_grid(os.path.join(ckpt_dir, "params", name + ".ptg"))
        tensors[name] = Tensor(arr, requires_grad=True)
    return ModelParams(tensors=tensors), cfg, manifest
