"""Texture feature extraction over a segmented foreground region.

Eight extractor families produce one fixed-length vector per slice:

  gradient (11)        central-difference statistics over the foreground
  histogram (8)        raw moments, entropy and order-statistic percentiles
  transform bands (20) radial FFT/DCT band energies, spectral entropy, DC
  gabor (48)           zero-DC Gabor bank responses (4 wavelengths x 6 angles)
  glcm (20)            Haralick statistics of symmetric co-occurrence matrices
  run length (10)      run-emphasis statistics along rows and columns
  lbp (315)            256-bin code histogram plus 59-bin uniform histogram
  fractal (5)          box-counting dimension, degeneracy flag, lacunarity

The manifest pins the order, names and parameter fingerprints of all 437
features; assembly validates outputs against it and replaces non-finite
values by zero so downstream consumers always see finite vectors.
"""

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import fft as sfft
from scipy import signal

from .errors import EmptyRegionError, ManifestMismatchError, ParameterError, ShapeError

HIST_BINS = 32
QUANT_LEVELS = 8
GLCM_ANGLES = (0, 45, 90, 135)
_GLCM_OFFSETS = {0: (0, 1), 45: (-1, 1), 90: (-1, 0), 135: (-1, -1)}
GABOR_WAVELENGTHS = (4, 8, 16, 32)
GABOR_ORIENTATIONS = (0, 30, 60, 90, 120, 150)
BOX_SIZES = (2, 4, 8, 16, 32)
LACUNARITY_SIZES = (2, 4, 8)
MIN_REGION_PIXELS = 16

GRADIENT_NAMES = (
    "grad_dy_mean", "grad_dy_std", "grad_dy_max",
    "grad_dx_mean", "grad_dx_std", "grad_dx_max",
    "grad_mag_mean", "grad_mag_std", "grad_mag_max",
    "grad_norm_sq", "grad_entropy",
)
HISTOGRAM_NAMES = (
    "hist_mean", "hist_var", "hist_skew", "hist_kurt",
    "hist_entropy", "hist_p5", "hist_p50", "hist_p95",
)
TRANSFORM_NAMES = tuple(
    [f"fft_band{k}_energy" for k in range(8)]
    + ["fft_spectral_entropy", "fft_dc_fraction"]
    + [f"dct_band{k}_energy" for k in range(8)]
    + ["dct_spectral_entropy", "dct_dc_fraction"]
)
GABOR_BANK_PARAMS = tuple(
    (lam, theta) for lam in GABOR_WAVELENGTHS for theta in GABOR_ORIENTATIONS
)
GABOR_NAMES = tuple(
    name
    for lam, theta in GABOR_BANK_PARAMS
    for name in (f"gabor_w{lam}_o{theta}_energy", f"gabor_w{lam}_o{theta}_meanmag")
)
GLCM_STATS = ("contrast", "correlation", "energy", "homogeneity", "entropy")
GLCM_NAMES = tuple(
    f"glcm_a{angle}_{stat}" for angle in GLCM_ANGLES for stat in GLCM_STATS
)
RUNLENGTH_STATS = ("sre", "lre", "gln", "rln", "rp")
RUNLENGTH_NAMES = tuple(
    f"rlm_{d}_{stat}" for d in ("h", "v") for stat in RUNLENGTH_STATS
)
LBP_NAMES = tuple(
    [f"lbp_code_{c:03d}" for c in range(256)] + [f"lbp_u59_{b:02d}" for b in range(59)]
)
FRACTAL_NAMES = (
    "fractal_box_dim", "fractal_degenerate",
    "lacunarity_s2", "lacunarity_s4", "lacunarity_s8",
)

FEATURE_COUNT = (
    len(GRADIENT_NAMES) + len(HISTOGRAM_NAMES) + len(TRANSFORM_NAMES)
    + len(GABOR_NAMES) + len(GLCM_NAMES) + len(RUNLENGTH_NAMES)
    + len(LBP_NAMES) + len(FRACTAL_NAMES)
)


def _as_image(image):
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ShapeError("expected a 2D slice")
    return img


def _foreground(image, mask):
    img = _as_image(image)
    m = np.asarray(mask, dtype=bool)
    if m.shape != img.shape:
        raise ShapeError("mask shape must match the image")
    if not m.any():
        raise EmptyRegionError("empty foreground mask")
    return img, m


def _entropy_bits(weights):
    total = weights.sum()
    if total <= 0:
        return 0.0
    p = weights[weights > 0] / total
    return float(-(p * np.log2(p)).sum())


def _binned_entropy(values, bins):
    lo, hi = float(values.min()), float(values.max())
    if hi <= lo:
        return 0.0  # single bin carries all the mass
    idx = np.clip(((values - lo) / ((hi - lo) / bins)).astype(int), 0, bins - 1)
    return _entropy_bits(np.bincount(idx, minlength=bins).astype(np.float64))


def _lower_percentile(sorted_values, p):
    n = sorted_values.size
    return float(sorted_values[(n - 1) * p // 100])


# ---------------------------------------------------------------- gradient


def gradient_features(image, mask):
    """Central-difference gradient statistics over the foreground.

    Emits mean/std/max of |dI/dy|, |dI/dx| and the gradient magnitude, the
    normalized gradient energy sum|grad I|^2 / sum I^2, and the entropy of a
    32-bin magnitude histogram, all restricted to masked pixels.
    """
    img, m = _foreground(image, mask)
    gy, gx = np.gradient(img)
    ay, ax = np.abs(gy[m]), np.abs(gx[m])
    mag = np.hypot(gy[m], gx[m])
    denom = float((img[m] ** 2).sum())
    norm_sq = float((mag**2).sum()) / denom if denom > 0 else 0.0
    return [
        float(ay.mean()), float(ay.std()), float(ay.max()),
        float(ax.mean()), float(ax.std()), float(ax.max()),
        float(mag.mean()), float(mag.std()), float(mag.max()),
        norm_sq, _binned_entropy(mag, HIST_BINS),
    ]


# --------------------------------------------------------------- histogram


def histogram_features(image, mask, bins=HIST_BINS):
    """Raw moments, binned entropy and order-statistic percentiles.

    Percentiles follow the lower rule sorted[(n-1)*p // 100], so the median
    of an even count is the smaller middle value.
    """
    img, m = _foreground(image, mask)
    v = img[m]
    mu = float(v.mean())
    var = float(v.var())
    sd = math.sqrt(var)
    skew = float(((v - mu) ** 3).mean() / sd**3) if sd > 0 else 0.0
    kurt = float(((v - mu) ** 4).mean() / sd**4) if sd > 0 else 0.0
    s = np.sort(v)
    return [
        mu, var, skew, kurt, _binned_entropy(v, bins),
        _lower_percentile(s, 5), _lower_percentile(s, 50), _lower_percentile(s, 95),
    ]


# ---------------------------------------------------------- transform bands


def _radial_band_split(power, radius, bands=8):
    """(dc, per-band sums excluding DC, total) for a power spectrum."""
    total = float(power.sum())
    dc = float(power[0, 0])
    rmax = float(radius.max())
    if rmax <= 0:
        return dc, np.zeros(bands), total
    edges = np.linspace(0.0, rmax, bands + 1)
    idx = np.clip(np.searchsorted(edges, radius.ravel(), side="right") - 1, 0, bands - 1)
    sums = np.bincount(idx, weights=power.ravel(), minlength=bands)[:bands]
    sums[0] -= dc  # DC is reported separately
    return dc, sums, total


def fft_band_energies(image, bands=8):
    """Radial partition of the orthonormal-FFT power spectrum.

    Returns (dc, band_sums, total) with dc + band_sums.sum() == total and,
    by Parseval, total == sum(image^2).
    """
    img = _as_image(image)
    spec = np.fft.fft2(img, norm="ortho")
    power = np.abs(spec) ** 2
    fy = np.fft.fftfreq(img.shape[0])
    fx = np.fft.fftfreq(img.shape[1])
    radius = np.hypot(fy[:, None], fx[None, :])
    return _radial_band_split(power, radius, bands)


def dct_band_energies(image, bands=8):
    """Radial partition of the orthonormal-DCT power, analogous to the FFT."""
    img = _as_image(image)
    coeff = sfft.dctn(img, type=2, norm="ortho")
    power = coeff**2
    ky = np.arange(img.shape[0]) / img.shape[0]
    kx = np.arange(img.shape[1]) / img.shape[1]
    radius = np.hypot(ky[:, None], kx[None, :])
    return _radial_band_split(power, radius, bands)


def _transform_stats(dc, bands, total, power_entropy):
    if total <= 0:
        return list(np.zeros(len(bands))) + [0.0, 0.0]
    return list(bands / total) + [power_entropy, dc / total]


def transform_band_features(image, mask):
    """FFT and DCT band energies of the mask-windowed slice.

    Per transform: 8 relative radial band energies (DC excluded), the
    spectral entropy of the full normalized power spectrum, and the DC
    fraction. Relative energies plus the DC fraction sum to 1.
    """
    img = _as_image(image)
    if img.shape[0] < 8 or img.shape[1] < 8:
        raise ShapeError("slice too small for transform features")
    windowed = img * np.asarray(mask, dtype=np.float64)
    out = []
    for fn in (fft_band_energies, dct_band_energies):
        dc, bands, total = fn(windowed)
        if fn is fft_band_energies:
            power = np.abs(np.fft.fft2(windowed, norm="ortho")) ** 2
        else:
            power = sfft.dctn(windowed, type=2, norm="ortho") ** 2
        out.extend(_transform_stats(dc, bands, total, _entropy_bits(power.ravel())))
    return out


# ----------------------------------------------------------------- gabor


def gabor_kernel(wavelength, orientation_deg, sigma_ratio=0.56):
    """Complex zero-DC, unit-L2 Gabor kernel.

    The carrier oscillates along the axis rotated by `orientation_deg`; the
    envelope is isotropic with sigma = sigma_ratio * wavelength and the
    kernel radius is ceil(2*sigma).
    """
    sigma = sigma_ratio * wavelength
    r = int(math.ceil(2.0 * sigma))
    yy, xx = np.mgrid[-r:r + 1, -r:r + 1].astype(np.float64)
    theta = math.radians(orientation_deg)
    rotated = xx * math.cos(theta) + yy * math.sin(theta)
    envelope = np.exp(-(xx**2 + yy**2) / (2.0 * sigma**2))
    real = envelope * np.cos(2.0 * np.pi * rotated / wavelength)
    imag = envelope * np.sin(2.0 * np.pi * rotated / wavelength)
    real -= real.mean()
    imag -= imag.mean()
    kernel = real + 1j * imag
    norm = math.sqrt(float((np.abs(kernel) ** 2).sum()))
    return kernel / norm


def default_gabor_bank():
    """The 24-kernel bank: wavelengths {4,8,16,32} x 6 orientations."""
    return [gabor_kernel(lam, theta) for lam, theta in GABOR_BANK_PARAMS]


def gabor_features(image, mask, bank=None):
    """Per-kernel response energy and mean magnitude over the foreground."""
    img, m = _foreground(image, mask)
    kernels = default_gabor_bank() if bank is None else list(bank)
    if not kernels:
        raise ParameterError("gabor bank must be non-empty")
    out = []
    for kernel in kernels:
        kh, kw = kernel.shape
        if kh > img.shape[0] or kw > img.shape[1]:
            raise ParameterError(
                f"gabor kernel {kernel.shape} exceeds image {img.shape}")
        ry, rx = kh // 2, kw // 2
        padded = np.pad(img, ((ry, ry), (rx, rx)), mode="edge")
        resp = signal.fftconvolve(padded, kernel, mode="same")
        mag = np.abs(resp[ry:ry + img.shape[0], rx:rx + img.shape[1]])[m]
        out.append(float((mag**2).sum()))
        out.append(float(mag.mean()))
    return out


# ------------------------------------------------------------------ glcm


def quantize(image, mask, levels=QUANT_LEVELS):
    """Equal-width quantization of the image over the foreground min..max."""
    img, m = _foreground(image, mask)
    v = img[m]
    lo, hi = float(v.min()), float(v.max())
    if hi <= lo:
        return np.zeros(img.shape, dtype=np.intp)
    width = (hi - lo) / levels
    return np.clip(((img - lo) / width).astype(np.intp), 0, levels - 1)


def glcm_counts(quantized, mask, offset, levels=QUANT_LEVELS):
    """Asymmetric co-occurrence counts for one (dy, dx) offset.

    A pair is counted when both endpoints are in bounds and masked.
    """
    q = np.asarray(quantized)
    m = np.asarray(mask, dtype=bool)
    dy, dx = offset
    h, w = q.shape
    ys = slice(max(0, -dy), min(h, h - dy))
    xs = slice(max(0, -dx), min(w, w - dx))
    yd = slice(max(0, dy), min(h, h + dy))
    xd = slice(max(0, dx), min(w, w + dx))
    valid = m[ys, xs] & m[yd, xd]
    counts = np.zeros((levels, levels), dtype=np.float64)
    np.add.at(counts, (q[ys, xs][valid], q[yd, xd][valid]), 1.0)
    return counts


def symmetric_glcm(counts):
    """Symmetrized, normalized co-occurrence matrix (G + G^T) / sum."""
    s = counts + counts.T
    total = s.sum()
    if total <= 0:
        raise EmptyRegionError("no valid pixel pairs for the co-occurrence matrix")
    return s / total


def haralick_stats(sym):
    """contrast, correlation, energy, homogeneity, entropy of a normalized GLCM."""
    levels = sym.shape[0]
    ii, jj = np.mgrid[0:levels, 0:levels]
    contrast = float((sym * (ii - jj) ** 2).sum())
    pi = sym.sum(axis=1)
    mu = float((np.arange(levels) * pi).sum())
    var = float(((np.arange(levels) - mu) ** 2 * pi).sum())
    if var > 0:
        corr = float((sym * (ii - mu) * (jj - mu)).sum() / var)
    else:
        corr = 1.0  # single-level region: perfectly correlated by convention
    return {
        "contrast": contrast,
        "correlation": corr,
        "energy": float((sym**2).sum()),
        "homogeneity": float((sym / (1.0 + np.abs(ii - jj))).sum()),
        "entropy": _entropy_bits(sym.ravel()),
    }


_DEGENERATE_GLCM = {
    "contrast": 0.0, "correlation": 1.0, "energy": 1.0,
    "homogeneity": 1.0, "entropy": 0.0,
}


def glcm_features(image, mask, levels=QUANT_LEVELS):
    """Haralick statistics per angle (distance 1; 0/45/90/135 degrees)."""
    img, m = _foreground(image, mask)
    q = quantize(img, m, levels)
    out = []
    any_pairs = False
    for angle in GLCM_ANGLES:
        counts = glcm_counts(q, m, _GLCM_OFFSETS[angle], levels)
        if counts.sum() > 0:
            any_pairs = True
            stats = haralick_stats(symmetric_glcm(counts))
        else:
            stats = _DEGENERATE_GLCM
        out.extend(stats[s] for s in GLCM_STATS)
    if not any_pairs:
        raise EmptyRegionError("mask forms no valid pixel pairs")
    return out


# ------------------------------------------------------------- run length


def _runs_along(q, m, axis):
    """(level, length) for maximal constant-level runs inside the mask."""
    runs = []
    lines = zip(q, m) if axis == 0 else zip(q.T, m.T)
    for line, lm in lines:
        length = 0
        level = -1
        for v, inside in zip(line, lm):
            if inside and length > 0 and v == level:
                length += 1
                continue
            if length > 0:
                runs.append((level, length))
            length = 1 if inside else 0
            level = v if inside else -1
        if length > 0:
            runs.append((level, length))
    return runs


def run_length_features(image, mask, levels=QUANT_LEVELS):
    """SRE, LRE, GLN, RLN and run percentage along rows (h) and columns (v).

    Runs are maximal same-level streaks of masked pixels; mask gaps break
    runs. The run percentage divides the run count by the masked pixel count.
    """
    img, m = _foreground(image, mask)
    q = quantize(img, m, levels)
    npx = float(m.sum())
    out = []
    for axis in (0, 1):
        runs = _runs_along(q, m, axis)
        lengths = np.array([l for _, l in runs], dtype=np.float64)
        levels_arr = np.array([g for g, _ in runs], dtype=np.intp)
        n = float(len(runs))
        sre = float((1.0 / lengths**2).sum()) / n
        lre = float((lengths**2).sum()) / n
        gln = float((np.bincount(levels_arr).astype(np.float64) ** 2).sum()) / n
        max_len = int(lengths.max())
        rln_counts = np.bincount(lengths.astype(np.intp), minlength=max_len + 1)
        rln = float((rln_counts.astype(np.float64) ** 2).sum()) / n
        out.extend([sre, lre, gln, rln, n / npx])
    return out


# ------------------------------------------------------------------- lbp


_LBP_OFFSETS = [
    (math.sin(2.0 * math.pi * k / 8.0), math.cos(2.0 * math.pi * k / 8.0))
    for k in range(8)
]


def lbp_codes(image, radius=1):
    """Per-pixel 8-neighbor LBP codes; -1 marks border pixels without a
    full neighborhood. Neighbors are sampled bilinearly on the circle and a
    neighbor >= center sets the bit (ties set the bit)."""
    img = _as_image(image)
    h, w = img.shape
    if h < 2 * radius + 1 or w < 2 * radius + 1:
        raise ShapeError("image too small for the LBP neighborhood")
    codes = np.full((h, w), -1, dtype=np.int64)
    yy, xx = np.mgrid[radius:h - radius, radius:w - radius]
    center = img[radius:h - radius, radius:w - radius]
    acc = np.zeros(center.shape, dtype=np.int64)
    for bit, (sy, sx) in enumerate(_LBP_OFFSETS):
        ys = yy + radius * sy
        xs = xx + radius * sx
        y0 = np.floor(ys).astype(np.intp)
        x0 = np.floor(xs).astype(np.intp)
        fy = ys - y0
        fx = xs - x0
        y1 = np.minimum(y0 + 1, h - 1)
        x1 = np.minimum(x0 + 1, w - 1)
        sample = (
            img[y0, x0] * (1 - fy) * (1 - fx)
            + img[y0, x1] * (1 - fy) * fx
            + img[y1, x0] * fy * (1 - fx)
            + img[y1, x1] * fy * fx
        )
        acc |= (sample >= center).astype(np.int64) << bit
    codes[radius:h - radius, radius:w - radius] = acc
    return codes


def circular_transitions(code):
    """Number of 0/1 transitions in the circular 8-bit pattern."""
    bits = [(code >> k) & 1 for k in range(8)]
    return sum(bits[k] != bits[(k + 1) % 8] for k in range(8))


_UNIFORM_CODES = [c for c in range(256) if circular_transitions(c) <= 2]
_UNIFORM_BIN = np.full(256, len(_UNIFORM_CODES), dtype=np.intp)  # catch-all = 58
for _i, _c in enumerate(_UNIFORM_CODES):
    _UNIFORM_BIN[_c] = _i


def lbp_features(image, mask, radius=1):
    """Normalized 256-bin code histogram plus the 59-bin uniform histogram."""
    img, m = _foreground(image, mask)
    codes = lbp_codes(img, radius)
    valid = m & (codes >= 0)
    if not valid.any():
        raise EmptyRegionError("mask has no interior pixels for LBP")
    values = codes[valid]
    hist256 = np.bincount(values, minlength=256).astype(np.float64)
    hist256 /= hist256.sum()
    hist59 = np.bincount(_UNIFORM_BIN[values], minlength=59).astype(np.float64)
    hist59 /= hist59.sum()
    return list(hist256) + list(hist59)


# ----------------------------------------------------------------- fractal


def otsu_threshold(values):
    """Threshold maximizing between-class variance over a 256-bin histogram."""
    v = np.asarray(values, dtype=np.float64)
    lo, hi = float(v.min()), float(v.max())
    if hi <= lo:
        return lo
    hist, edges = np.histogram(v, bins=256, range=(lo, hi))
    p = hist.astype(np.float64) / hist.sum()
    omega = np.cumsum(p)
    mu = np.cumsum(p * np.arange(256))
    mu_total = mu[-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        sigma_b = (mu_total * omega - mu) ** 2 / (omega * (1.0 - omega))
    sigma_b[~np.isfinite(sigma_b)] = -1.0
    k = int(np.argmax(sigma_b))
    return float(edges[k + 1])


def _box_counts(set_mask, size):
    h, w = set_mask.shape
    ny, nx = math.ceil(h / size), math.ceil(w / size)
    padded = np.zeros((ny * size, nx * size), dtype=bool)
    padded[:h, :w] = set_mask
    blocks = padded.reshape(ny, size, nx, size).any(axis=(1, 3))
    return int(blocks.sum())


def _lacunarity(set_mask, size):
    """Gliding-box lacunarity E[S^2]/E[S]^2 over all in-bounds positions."""
    h, w = set_mask.shape
    if h < size or w < size:
        return 0.0
    csum = np.pad(np.cumsum(np.cumsum(set_mask, axis=0), axis=1), ((1, 0), (1, 0)))
    sums = (
        csum[size:, size:] - csum[:-size, size:]
        - csum[size:, :-size] + csum[:-size, :-size]
    ).astype(np.float64)
    mean = sums.mean()
    if mean <= 0:
        return 0.0
    return float((sums**2).mean() / mean**2)


def fractal_features(image, mask):
    """Box-counting dimension and gliding-box lacunarity of the binarized
    foreground.

    The foreground is split by its Otsu threshold (strictly-above pixels form
    the set). A degenerate split (empty set or the whole foreground) reports
    dimension 0 or 2 respectively and raises the degeneracy flag.
    """
    img, m = _foreground(image, mask)
    v = img[m]
    if float(v.max()) <= float(v.min()):
        return [0.0, 1.0] + [0.0] * len(LACUNARITY_SIZES)
    t = otsu_threshold(v)
    set_mask = (img > t) & m
    n_set = int(set_mask.sum())
    if n_set == 0:
        return [0.0, 1.0] + [0.0] * len(LACUNARITY_SIZES)
    if n_set == int(m.sum()):
        return [2.0, 1.0] + [_lacunarity(set_mask, s) for s in LACUNARITY_SIZES]
    counts = np.array([_box_counts(set_mask, s) for s in BOX_SIZES], dtype=np.float64)
    x = np.log(1.0 / np.asarray(BOX_SIZES, dtype=np.float64))
    slope = float(np.polyfit(x, np.log(counts), 1)[0])
    slope = min(max(slope, 0.0), 2.0)  # a planar set's dimension is in [0, 2]
    return [slope, 0.0] + [_lacunarity(set_mask, s) for s in LACUNARITY_SIZES]


# ------------------------------------------------------- manifest/assembly


@dataclass(frozen=True)
class ManifestEntry:
    group: str
    extractor: str
    name: str
    fingerprint: str


@dataclass(frozen=True)
class FeatureManifest:
    """Ordered feature registry binding names to extractor parameters."""

    entries: tuple

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        names = [e.name for e in self.entries]
        if len(set(names)) != len(names):
            raise ParameterError("manifest feature names must be unique")

    def checksum(self):
        payload = json.dumps(
            [[e.group, e.extractor, e.name, e.fingerprint] for e in self.entries]
        )
        return hashlib.sha256(payload.encode()).hexdigest()

    def save(self, path):
        payload = {
            "version": 1,
            "checksum": self.checksum(),
            "entries": [
                {"group": e.group, "extractor": e.extractor,
                 "name": e.name, "fingerprint": e.fingerprint}
                for e in self.entries
            ],
        }
        Path(path).write_text(json.dumps(payload, indent=1))
        return Path(path)

    @classmethod
    def load(cls, path):
        payload = json.loads(Path(path).read_text())
        if payload.get("version") != 1:
            raise ParameterError(
                f"unsupported manifest version {payload.get('version')!r}")
        man = cls(entries=tuple(
            ManifestEntry(e["group"], e["extractor"], e["name"], e["fingerprint"])
            for e in payload["entries"]
        ))
        if payload.get("checksum") != man.checksum():
            raise ManifestMismatchError("manifest checksum does not match entries")
        return man


@dataclass
class FeatureVector:
    """One slice's feature values bound to a manifest checksum."""

    values: np.ndarray
    manifest_hash: str
    source: tuple = ("", -1)
    sanitized: int = 0


def _extractor_blocks():
    """(extractor name, group per feature, names, callable) in vector order."""
    lac_groups = ["geometrical", "geometrical"] + ["region"] * len(LACUNARITY_SIZES)
    return (
        ("gradient", ["intensity"] * 11, GRADIENT_NAMES,
         lambda img, m: gradient_features(img, m), f"bins={HIST_BINS}"),
        ("histogram", ["intensity"] * 8, HISTOGRAM_NAMES,
         lambda img, m: histogram_features(img, m), f"bins={HIST_BINS}"),
        ("transform", ["transformation"] * 20, TRANSFORM_NAMES,
         lambda img, m: transform_band_features(img, m), "bands=8;transforms=fft,dct"),
        ("gabor", ["transformation"] * 48, GABOR_NAMES,
         lambda img, m: gabor_features(img, m),
         "wavelengths=4,8,16,32;orientations=0,30,60,90,120,150;sigma=0.56*lambda"),
        ("glcm", ["geometrical"] * 20, GLCM_NAMES,
         lambda img, m: glcm_features(img, m),
         f"levels={QUANT_LEVELS};distance=1;angles=0,45,90,135"),
        ("run_length", ["geometrical"] * 10, RUNLENGTH_NAMES,
         lambda img, m: run_length_features(img, m),
         f"levels={QUANT_LEVELS};directions=h,v"),
        ("lbp", ["region"] * 315, LBP_NAMES,
         lambda img, m: lbp_features(img, m), "radius=1;neighbors=8"),
        ("fractal", lac_groups, FRACTAL_NAMES,
         lambda img, m: fractal_features(img, m),
         f"boxes={','.join(map(str, BOX_SIZES))};"
         f"lacunarity={','.join(map(str, LACUNARITY_SIZES))}"),
    )


def build_manifest():
    """The canonical manifest for the default extractor configuration."""
    entries = []
    for extractor, groups, names, _fn, fingerprint in _extractor_blocks():
        for group, name in zip(groups, names):
            entries.append(ManifestEntry(group, extractor, name, fingerprint))
    return FeatureManifest(entries=tuple(entries))


def assemble_feature_vector(image, mask, manifest, source=("", -1)):
    """Concatenate all extractor outputs in manifest order.

    The manifest must match the built-in extractor layout exactly (hard error
    otherwise). Non-finite outputs are replaced by zero and counted in
    `sanitized`; a foreground below 16 pixels yields the all-zero vector so
    corpus-scale extraction never aborts on a degenerate slice.
    """
    img = _as_image(image)
    m = np.asarray(mask, dtype=bool)
    blocks = _extractor_blocks()
    expected = [(ex, name) for ex, _g, names, _f, _fp in blocks for name in names]
    actual = [(e.extractor, e.name) for e in manifest.entries]
    if actual != expected:
        raise ManifestMismatchError(
            "manifest does not match the extractor layout "
            f"({len(actual)} entries vs {len(expected)} expected)")
    if int(m.sum()) < MIN_REGION_PIXELS:
        values = np.zeros(len(expected))
        return FeatureVector(values, manifest.checksum(), source, len(expected))
    out = []
    sanitized = 0
    for _ex, _groups, names, fn, _fp in blocks:
        try:
            vals = np.asarray(fn(img, m), dtype=np.float64)
        except EmptyRegionError:
            vals = np.full(len(names), np.nan)
        if vals.shape != (len(names),):
            raise ManifestMismatchError(
                f"extractor {_ex} returned {vals.shape[0]} values, "
                f"expected {len(names)}")
        bad = ~np.isfinite(vals)
        sanitized += int(bad.sum())
        vals[bad] = 0.0
        out.append(vals)
    return FeatureVector(np.concatenate(out), manifest.checksum(), source, sanitized)


def save_feature_table(path, features, manifest):
    """Write per-slice feature rows as CSV: volume_id, slice_index, values.

    `features` maps volume id to an (n_slices, F) array; rows are emitted
    sorted by (volume_id, slice_index) so the file is deterministic.
    """
    header = ["volume_id", "slice_index"] + [e.name for e in manifest.entries]
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        for vid in sorted(features):
            block = np.asarray(features[vid], dtype=np.float64)
            if block.ndim != 2 or block.shape[1] != len(manifest.entries):
                raise ManifestMismatchError(
                    f"{vid!r} has {block.shape} values for "
                    f"{len(manifest.entries)} manifest features")
            for k, row in enumerate(block):
                w.writerow([vid, k] + [repr(float(v)) for v in row])
    return Path(path)


def load_feature_table(path, manifest=None):
    """Read a feature CSV back into {volume_id: (n_slices, F)}.

    When a manifest is given the header names must match it exactly.
    """
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or header[:2] != ["volume_id", "slice_index"]:
            raise ParameterError("feature table must start with "
                                 "volume_id, slice_index columns")
        if manifest is not None:
            expected = [e.name for e in manifest.entries]
            if header[2:] != expected:
                raise ManifestMismatchError(
                    "feature table columns do not match the manifest")
        rows = {}
        for row in reader:
            vid, k = row[0], int(row[1])
            rows.setdefault(vid, []).append((k, np.asarray(row[2:], dtype=np.float64)))
    out = {}
    for vid, items in rows.items():
        items.sort(key=lambda t: t[0])
        if [k for k, _ in items] != list(range(len(items))):
            raise ParameterError(f"{vid!r} has missing or duplicate slice rows")
        out[vid] = np.vstack([v for _, v in items])
    return out
