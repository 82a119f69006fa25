"""Synthetic bar-target objects, scan simulation, splits, and dataset persistence."""

import csv
import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import circphase, gridio, physics

# Smallest comfortable canvas for the 61x61 / step-8 / probe-32 plan with
# 3-pixel jitter margin on both sides (needs >= 518).
DEFAULT_OBJECT_SIZE = 520
DEFAULT_ROWS = 61
DEFAULT_COLS = 61
DEFAULT_STEP = 8
DEFAULT_JITTER = 3

AMP_LEVELS = (0.2, 0.9)
PHASE_LEVELS = (-(np.pi - 0.2), -1.2, 0.0, 1.2, np.pi - 0.2)
BACKGROUND_AMP = 0.55
BACKGROUND_PHASE = 0.0


@dataclass
class ScanPlan:
    rows: int
    cols: int
    step: int
    jitter_max: int
    probe_size: int
    seed: int
    positions: list = field(default_factory=list)  # (row, col, y_px, x_px)

    @property
    def margin(self):
        return self.jitter_max

    def required_extent(self):
        """(rows, cols) object extent needed for the jittered scan."""
        def need(n):
            return self.margin + (n - 1) * self.step + self.probe_size + self.jitter_max
        return need(self.rows), need(self.cols)


@dataclass
class ObjectPatch:
    """Ground truth for one frame: amplitude, phase, and circular coordinates."""

    amplitude: np.ndarray
    phase: np.ndarray
    cosp: np.ndarray
    sinp: np.ndarray

    @classmethod
    def from_window(cls, amplitude, phase):
        c, s = circphase.embed(phase)
        return cls(
            amplitude=np.ascontiguousarray(amplitude, dtype=np.float32),
            phase=np.ascontiguousarray(phase, dtype=np.float32),
            cosp=c,
            sinp=s,
        )


@dataclass
class DiffractionFrame:
    intensity: np.ndarray
    row: int
    col: int
    y: int
    x: int
    noisy: bool = False
    split: str = "train"


@dataclass
class NoiseConfig:
    peak_photons: float = physics.NOISE_PEAK_PHOTONS
    read_sigma: float = None  # None -> 1% of dataset max
    seed: int = 0


def gen_object(height=DEFAULT_OBJECT_SIZE, width=DEFAULT_OBJECT_SIZE, seed=0):
    """Piecewise-constant bar target with wrap-adjacent phase plateaus.

    Bar groups (3 parallel bars at several scales, both orientations) plus
    occasional split plateaus placing +(pi-0.2) and -(pi-0.2) side by side,
    so plateaus straddling the +-pi branch cut occur by construction.
    """
    if height < 64 or width < 64:
        raise ValueError("object too small")
    rng = np.random.default_rng(seed)
    amp = np.full((height, width), BACKGROUND_AMP, dtype=np.float32)
    phase = np.full((height, width), BACKGROUND_PHASE, dtype=np.float32)

    cell = 40
    widths = (4, 6, 8, 12)
    level_cycle = list(PHASE_LEVELS)
    for cy in range(0, height - cell + 1, cell):
        for cx in range(0, width - cell + 1, cell):
            a_level = AMP_LEVELS[rng.integers(0, len(AMP_LEVELS))]
            if rng.random() < 0.3:
                # wrap-stress block: two touching plateaus across the cut
                by, bx, bs = cy + 6, cx + 6, 28
                half = bs // 2
                amp[by:by + bs, bx:bx + bs] = a_level
                phase[by:by + bs, bx:bx + half] = PHASE_LEVELS[-1]
                phase[by:by + bs, bx + half:bx + bs] = PHASE_LEVELS[0]
                continue
            w = int(widths[rng.integers(0, len(widths))])
            length = min(5 * w, cell - 4)
            offset = int(rng.integers(0, len(level_cycle)))
            horizontal = rng.random() < 0.5
            for b in range(3):
                lvl = level_cycle[(offset + b) % len(level_cycle)]
                if horizontal:
                    y0 = cy + 2 + b * 2 * w
                    if y0 + w > cy + cell:
                        break
                    amp[y0:y0 + w, cx + 2:cx + 2 + length] = a_level
                    phase[y0:y0 + w, cx + 2:cx + 2 + length] = lvl
                else:
                    x0 = cx + 2 + b * 2 * w
                    if x0 + w > cx + cell:
                        break
                    amp[cy + 2:cy + 2 + length, x0:x0 + w] = a_level
                    phase[cy + 2:cy + 2 + length, x0:x0 + w] = lvl
    return amp, phase


def plan_scan(rows=DEFAULT_ROWS, cols=DEFAULT_COLS, step=DEFAULT_STEP,
              jitter_max=DEFAULT_JITTER, probe_size=physics.PROBE_SIZE, seed=0):
    """Regular grid plus integer per-axis jitter uniform in [-jitter_max, +jitter_max]."""
    rng = np.random.default_rng(seed)
    plan = ScanPlan(rows=rows, cols=cols, step=step, jitter_max=jitter_max,
                    probe_size=probe_size, seed=seed)
    margin = plan.margin
    for r in range(rows):
        for c in range(cols):
            jy = int(rng.integers(-jitter_max, jitter_max + 1)) if jitter_max else 0
            jx = int(rng.integers(-jitter_max, jitter_max + 1)) if jitter_max else 0
            plan.positions.append((r, c, margin + r * step + jy, margin + c * step + jx))
    return plan


def make_dataset(amplitude, phase, probe, plan, noise=None):
    """Extract ground-truth windows at jittered positions and simulate frames."""
    amplitude = np.asarray(amplitude, dtype=np.float32)
    phase = np.asarray(phase, dtype=np.float32)
    h, w = amplitude.shape
    p = plan.probe_size
    need_h, need_w = plan.required_extent()
    if need_h > h or need_w > w:
        raise ValueError(f"scan extent {(need_h, need_w)} exceeds object {amplitude.shape}")

    obj = amplitude.astype(np.float64) * np.exp(1j * phase.astype(np.float64))
    frames, patches = [], []
    clean = []
    for (r, c, y, x) in plan.positions:
        assert 0 <= y and y + p <= h and 0 <= x and x + p <= w
        window = physics.ComplexGrid.from_complex(obj[y:y + p, x:x + p])
        intensity = physics.diffract(physics.exit_wave(window, probe))
        clean.append(intensity)
        patches.append(ObjectPatch.from_window(amplitude[y:y + p, x:x + p],
                                               phase[y:y + p, x:x + p]))
        frames.append(DiffractionFrame(intensity=intensity, row=r, col=c, y=y, x=x))

    if noise is not None:
        ref_max = float(max(frame.max() for frame in clean))
        for i, frame in enumerate(frames):
            frame.intensity = physics.add_noise(
                clean[i], peak_photons=noise.peak_photons, read_sigma=noise.read_sigma,
                seed=noise.seed, frame_index=i, ref_max=ref_max)
            frame.noisy = True
    return frames, patches


def split_rows(frames, rows=DEFAULT_ROWS, train_rows=49, test_rows=12,
               val_fraction=0.05, seed=0):
    """Tag frames: first train_rows rows -> train (minus seeded val sample), last rows -> test."""
    if train_rows + test_rows != rows:
        raise ValueError(f"train_rows + test_rows != rows ({train_rows}+{test_rows} != {rows})")
    train_pool = [i for i, f in enumerate(frames) if f.row < train_rows]
    for i, f in enumerate(frames):
        f.split = "train" if f.row < train_rows else "test"
    n_val = int(round(val_fraction * len(train_pool)))
    rng = np.random.default_rng(seed)
    for i in rng.choice(len(train_pool), size=n_val, replace=False):
        frames[train_pool[int(i)]].split = "val"
    return frames


# ---------------------------------------------------------------------------
# persistence

MANIFEST_FIELDS = ["index", "intensity", "amplitude", "phase", "row", "col",
                   "y", "x", "noisy", "split"]


def save_dataset(outdir, frames, patches, probe, meta):
    os.makedirs(os.path.join(outdir, "frames"), exist_ok=True)
    rows = []
    for i, (frame, patch) in enumerate(zip(frames, patches)):
        names = {k: f"frames/{i:05d}_{k}.ptg" for k in ("intensity", "amplitude", "phase")}
        gridio.write_grid(os.path.join(outdir, names["intensity"]), frame.intensity)
        gridio.write_grid(os.path.join(outdir, names["amplitude"]), patch.amplitude)
        gridio.write_grid(os.path.join(outdir, names["phase"]), patch.phase)
        rows.append({"index": i, **names, "row": frame.row, "col": frame.col,
                     "y": frame.y, "x": frame.x, "noisy": int(frame.noisy),
                     "split": frame.split})
    with open(os.path.join(outdir, "manifest.csv"), "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=MANIFEST_FIELDS)
        writer.writeheader()
        writer.writerows(rows)
    gridio.write_complex_grid(os.path.join(outdir, "probe.ptg"), probe.grid)
    with open(os.path.join(outdir, "meta.json"), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)


def load_dataset(indir):
    with open(os.path.join(indir, "meta.json")) as fh:
        meta = json.load(fh)
    probe_grid = gridio.read_complex_grid(os.path.join(indir, "probe.ptg"))
    probe = physics.Probe(grid=probe_grid,
                          radius=meta.get("probe_radius", physics.PROBE_RADIUS),
                          sigma=meta.get("probe_sigma", physics.PROBE_SIGMA),
                          curvature=meta.get("probe_curvature", physics.PROBE_CURVATURE))
    frames, patches = [], []
    with open(os.path.join(indir, "manifest.csv"), newline="") as fh:
        for row in csv.DictReader(fh):
            intensity = gridio.read_grid(os.path.join(indir, row["intensity"]))
            amplitude = gridio.read_grid(os.path.join(indir, row["amplitude"]))
            phase = gridio.read_grid(os.path.join(indir, row["phase"]))
            frames.append(DiffractionFrame(
                intensity=intensity, row=int(row["row"]), col=int(row["col"]),
                y=int(row["y"]), x=int(row["x"]), noisy=bool(int(row["noisy"])),
                split=row["split"]))
            patches.append(ObjectPatch.from_window(amplitude, phase))
    return frames, patches, probe, meta
