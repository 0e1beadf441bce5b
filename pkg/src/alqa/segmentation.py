"""Two-phase piecewise-constant level-set segmentation.

Splits a slice into foreground/background by minimizing

    E = mu * Length(boundary) + l1 * sum_in (I - c1)^2 + l2 * sum_out (I - c2)^2

with c1/c2 the exact region means, starting from a rounded-rectangle mask.
The level set is kept clamped to [-1, 1] so the region-competition force acts
on every pixel, not just near the contour. Each iteration proposes a step
built from the smoothed force plus a neighbor-coupling term, then accepts it
only if the sharp-partition energy does not increase, halving the step (and
trying a despeckled variant) otherwise - so the energy is non-increasing by
construction.
"""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import ParameterError, ShapeError

_PHI_BAND = 1.0  # level-set values live in [-band, band]
_DELTA_EPS = 1.0  # width of the smoothed delta; >= band so all pixels move
_COUPLING = 0.4  # weight pulling phi toward its 4-neighbor average
_FORCE_SMOOTH_SIGMA = 1.5  # stddev of the Gaussian applied to the force field
_MAX_HALVINGS = 10


@dataclass
class Mask:
    """Boolean foreground partition plus the two region means."""

    pixels: np.ndarray
    c1: float = 0.0
    c2: float = 0.0

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=bool)
        if self.pixels.ndim != 2:
            raise ShapeError("mask must be 2D")
        if not (np.isfinite(self.c1) and np.isfinite(self.c2)):
            raise ParameterError("region means must be finite")


@dataclass(frozen=True)
class SegmentationConfig:
    """Level-set parameters; mu defaults to 0.2 * (intensity range)^2."""

    mu: float | None = None
    lambda1: float = 1.0
    lambda2: float = 1.0
    dt: float = 0.5
    max_iters: int = 200
    tol: float = 1e-3
    margin: float = 0.1
    corner_radius: float = 0.1
    reinit_every: int = 20

    def __post_init__(self):
        if self.mu is not None and self.mu < 0:
            raise ParameterError("mu must be >= 0")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ParameterError("lambda weights must be >= 0")
        if self.dt <= 0 or self.tol <= 0:
            raise ParameterError("dt and tol must be > 0")
        if self.max_iters < 0:
            raise ParameterError("max_iters must be >= 0")
        if not 0.0 < self.margin < 0.5:
            raise ParameterError("margin must lie in (0, 0.5)")
        if self.corner_radius < 0:
            raise ParameterError("corner_radius must be >= 0")


def init_mask(height, width, margin=0.1, corner_radius=0.1):
    """Rounded-rectangle initialization.

    A pixel with integer index r is inside the rectangle when
    margin*H <= r < (1-margin)*H (same for columns); corners are rounded by
    quarter circles of radius corner_radius * min(height, width).
    """
    if height < 8 or width < 8:
        raise ShapeError("need at least 8x8 pixels")
    if not 0.0 < margin < 0.5:
        raise ParameterError("margin must lie in (0, 0.5)")
    if corner_radius < 0:
        raise ParameterError("corner_radius must be >= 0")
    y0, y1 = margin * height, (1.0 - margin) * height
    x0, x1 = margin * width, (1.0 - margin) * width
    cy, cx = (y0 + y1) / 2.0, (x0 + x1) / 2.0
    hy, hx = (y1 - y0) / 2.0, (x1 - x0) / 2.0
    rr = min(corner_radius * min(height, width), hy, hx)
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    dy = np.abs(yy - cy) - (hy - rr)
    dx = np.abs(xx - cx) - (hx - rr)
    inside = np.hypot(np.maximum(dy, 0.0), np.maximum(dx, 0.0)) <= rr
    return Mask(pixels=inside)


def boundary_length(mask):
    """Discrete contour length: 4-neighbor pixel pairs with differing labels."""
    m = np.asarray(mask, dtype=bool)
    return int((m[1:, :] != m[:-1, :]).sum() + (m[:, 1:] != m[:, :-1]).sum())


def region_means(img, mask):
    inside = mask.sum()
    total = img.size
    c1 = float(img[mask].mean()) if inside else 0.0
    c2 = float(img[~mask].mean()) if inside < total else 0.0
    return c1, c2


def chan_vese_energy(img, mask, mu, lambda1=1.0, lambda2=1.0):
    """Sharp-partition energy with exact region means."""
    c1, c2 = region_means(img, mask)
    e = mu * boundary_length(mask)
    e += lambda1 * float(((img[mask] - c1) ** 2).sum())
    e += lambda2 * float(((img[~mask] - c2) ** 2).sum())
    return e, c1, c2


def _signed_distance(mask):
    inside = ndimage.distance_transform_edt(mask)
    outside = ndimage.distance_transform_edt(~mask)
    sdf = inside - outside + mask.astype(np.float64) - 0.5
    return np.clip(sdf, -_PHI_BAND, _PHI_BAND)


def _neighbor_average(phi):
    p = np.pad(phi, 1, mode="edge")
    return (p[2:, 1:-1] + p[:-2, 1:-1] + p[1:-1, 2:] + p[1:-1, :-2]) / 4.0


def _despeckle(mask):
    """3x3 majority vote; removes isolated flips that inflate the perimeter."""
    score = ndimage.uniform_filter(mask.astype(np.float64), size=3, mode="nearest")
    return score > 0.5


def chan_vese(image, config=None, record_energy=False):
    """Segment a 2D slice; returns the final Mask.

    Stops when the mean absolute level-set change drops below config.tol or
    max_iters is reached. max_iters=0 returns the initialization with its
    region means. Constant images return the initialization unchanged. With
    record_energy=True also returns the per-iteration energy trace.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ShapeError("expected a 2D slice")
    if img.shape[0] < 8 or img.shape[1] < 8:
        raise ShapeError("slice too small to segment")
    if not np.isfinite(img).all():
        raise ParameterError("image must be finite")
    cfg = config or SegmentationConfig()
    rng = float(img.max() - img.min())
    mu = cfg.mu if cfg.mu is not None else 0.2 * rng * rng
    mask = init_mask(img.shape[0], img.shape[1], cfg.margin, cfg.corner_radius).pixels
    energy, c1, c2 = chan_vese_energy(img, mask, mu, cfg.lambda1, cfg.lambda2)
    energies = [energy]
    if rng == 0.0 or cfg.max_iters == 0:
        out = Mask(mask, c1, c2)
        return (out, energies) if record_energy else out
    phi = _signed_distance(mask)
    accepted = 0
    for _ in range(cfg.max_iters):
        c1, c2 = region_means(img, mask)
        force = cfg.lambda2 * (img - c2) ** 2 - cfg.lambda1 * (img - c1) ** 2
        force = ndimage.gaussian_filter(force, _FORCE_SMOOTH_SIGMA, mode="nearest")
        # bounded to (-1, 1); weak but consistent forces keep a usable speed
        force /= np.abs(force) + np.abs(force).mean() + 1e-12
        delta = _DELTA_EPS / (_DELTA_EPS**2 + phi**2)
        coupling = _neighbor_average(phi) - phi
        step = _COUPLING * coupling + 2.0 * cfg.dt * delta * force
        step_ok = False
        for k in range(_MAX_HALVINGS + 1):
            phi_new = np.clip(phi + step * 0.5**k, -_PHI_BAND, _PHI_BAND)
            mask_new = phi_new > 0
            e_new, _, _ = chan_vese_energy(img, mask_new, mu, cfg.lambda1, cfg.lambda2)
            if e_new <= energy + 1e-12:
                step_ok = True
                break
            despeckled = _despeckle(mask_new)
            e_desp, _, _ = chan_vese_energy(img, despeckled, mu, cfg.lambda1, cfg.lambda2)
            if e_desp <= energy + 1e-12:
                # keep phi consistent with the despeckled partition
                phi_new = np.where(despeckled, np.maximum(phi_new, 0.5),
                                   np.minimum(phi_new, -0.5))
                mask_new, e_new, step_ok = despeckled, e_desp, True
                break
        if not step_ok:
            break
        change = float(np.mean(np.abs(phi_new - phi)))
        phi = phi_new
        mask = mask_new
        energy = e_new
        energies.append(energy)
        accepted += 1
        if cfg.reinit_every and accepted % cfg.reinit_every == 0:
            phi = _signed_distance(mask)  # mask unchanged, energy unchanged
        if change < cfg.tol:
            break
    c1, c2 = region_means(img, mask)
    out = Mask(mask, c1, c2)
    return (out, energies) if record_energy else out


def segment_volume(vol, config=None):
    """chan_vese applied to every slice of an ImageVolume."""
    return [chan_vese(np.asarray(sl, dtype=np.float64), config) for sl in vol.voxels]


def dice(a, b):
    """Dice overlap between two boolean masks."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    denom = a.sum() + b.sum()
    if denom == 0:
        return 1.0
    return 2.0 * float((a & b).sum()) / float(denom)


def mask_to_rle(mask):
    """Run-length encode a boolean mask (row-major, counts alternate 0s/1s,
    starting with the number of leading zeros)."""
    m = np.asarray(mask, dtype=bool).ravel()
    if m.size == 0:
        raise ShapeError("empty mask")
    changes = np.flatnonzero(m[1:] != m[:-1]) + 1
    bounds = np.concatenate([[0], changes, [m.size]])
    counts = np.diff(bounds).tolist()
    if m[0]:
        counts = [0] + counts
    return {"shape": list(np.asarray(mask).shape), "counts": counts}


def rle_to_mask(rle):
    shape = tuple(rle["shape"])
    counts = rle["counts"]
    total = int(np.prod(shape))
    if sum(counts) != total:
        raise ParameterError("run lengths do not cover the mask")
    flat = np.zeros(total, dtype=bool)
    pos = 0
    val = False
    for c in counts:
        if val:
            flat[pos:pos + c] = True
        pos += c
        val = not val
    return flat.reshape(shape)


def save_masks(path, volume_id, masks):
    """Write per-slice masks (list of Mask) as run-length-encoded JSON."""
    payload = {
        "version": 1,
        "volume_id": volume_id,
        "slices": [
            {**mask_to_rle(m.pixels), "c1": m.c1, "c2": m.c2} for m in masks
        ],
    }
    out = Path(path)
    out.write_text(json.dumps(payload))
    return out


def load_masks(path):
    payload = json.loads(Path(path).read_text())
    if payload.get("version") != 1:
        raise ParameterError(f"unsupported mask file version {payload.get('version')!r}")
    return [Mask(rle_to_mask(s), s.get("c1", 0.0), s.get("c2", 0.0))
            for s in payload["slices"]]
