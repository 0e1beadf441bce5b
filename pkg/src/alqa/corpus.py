"""Synthetic test-case corpus.

Phantom volumes (ellipse or rounded-rectangle bodies with nested internal
structures), k-space artifact injection, ordinal oracle labels, simulated
raters, patient-disjoint splits, and raw-float32 disk persistence.
"""

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import DatabaseError, DatabaseNotFoundError, ParameterError, ShapeError

N_CLASSES = 5
DEFAULT_THRESHOLDS = (0.2, 0.4, 0.6, 0.8)
ARTIFACT_KINDS = ("none", "motion_ghost", "alias_subsample", "blur")
DB_VERSION = 1


def validate_class(value):
    """Check that `value` is a legal ordinal quality class (1..5)."""
    if not isinstance(value, (int, np.integer)) or not 1 <= int(value) <= N_CLASSES:
        raise ParameterError(f"class must be an integer in [1, {N_CLASSES}], got {value!r}")
    return int(value)


@dataclass(frozen=True)
class ArtifactSpec:
    """Degradation to inject into a volume.

    kind is one of {none, motion_ghost, alias_subsample, blur}; severity runs
    from 0 (pristine) to 1 (worst). Kind-specific knobs: ghost_phase is the
    phase (radians) applied to odd k-space lines at severity 1,
    subsample_factor the k-space line decimation, blur_width the Gaussian
    sigma in pixels at severity 1.
    """

    kind: str = "none"
    severity: float = 0.0
    ghost_phase: float = math.pi
    subsample_factor: int = 2
    blur_width: float = 3.0

    def __post_init__(self):
        if self.kind not in ARTIFACT_KINDS:
            raise ParameterError(f"unknown artifact kind {self.kind!r}")
        if not 0.0 <= self.severity <= 1.0 or not math.isfinite(self.severity):
            raise ParameterError(f"severity must lie in [0, 1], got {self.severity}")
        if self.kind == "none" and self.severity != 0.0:
            raise ParameterError("kind 'none' requires severity 0")
        if self.subsample_factor not in (1, 2, 3, 4):
            raise ParameterError("subsample_factor must be one of 1..4")
        if self.blur_width <= 0 or self.ghost_phase < 0:
            raise ParameterError("blur_width must be > 0 and ghost_phase >= 0")


@dataclass(frozen=True)
class Blob:
    """Internal elliptical structure, in fractional coordinates.

    (cy, cx) offset the blob centre from the body centre as fractions of the
    image height/width; (ry, rx) are fractional semi-axes.
    """

    cy: float
    cx: float
    ry: float
    rx: float
    intensity: float


@dataclass(frozen=True)
class BodySpec:
    """Foreground geometry of a phantom slice."""

    kind: str = "ellipse"
    ry: float = 0.4
    rx: float = 0.4
    intensity: float = 1.0
    corner_radius: float = 0.3
    blobs: tuple = ()

    def __post_init__(self):
        if self.kind not in ("ellipse", "rounded_rect"):
            raise ParameterError(f"unknown body kind {self.kind!r}")
        if not (0 < self.ry < 0.5 and 0 < self.rx < 0.5):
            raise ParameterError("body semi-axes must lie in (0, 0.5)")
        if not 0.0 <= self.corner_radius <= 1.0:
            raise ParameterError("corner_radius must lie in [0, 1]")


@dataclass(frozen=True)
class PhantomSpec:
    """Complete recipe for one synthetic volume.

    Identical specs (including seed) produce bit-identical volumes.
    """

    shape: tuple
    body: BodySpec = field(default_factory=BodySpec)
    artifact: ArtifactSpec = field(default_factory=ArtifactSpec)
    noise_sigma: float = 0.0
    contrast_gamma: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if len(self.shape) != 3:
            raise ShapeError(f"shape must be (depth, height, width), got {self.shape}")
        d, h, w = self.shape
        if d < 1 or h < 8 or w < 8:
            raise ShapeError("need depth >= 1 and height/width >= 8")
        if self.noise_sigma < 0 or not math.isfinite(self.noise_sigma):
            raise ParameterError("noise_sigma must be finite and >= 0")
        if not 0.25 <= self.contrast_gamma <= 4.0:
            raise ParameterError("contrast_gamma must lie in [0.25, 4]")

    def to_dict(self):
        out = dataclasses.asdict(self)
        out["shape"] = list(self.shape)
        return out

    @staticmethod
    def from_dict(d):
        body = d.get("body", {})
        blobs = tuple(Blob(**b) for b in body.get("blobs", ()))
        return PhantomSpec(
            shape=tuple(d["shape"]),
            body=BodySpec(**{**body, "blobs": blobs}),
            artifact=ArtifactSpec(**d.get("artifact", {})),
            noise_sigma=d.get("noise_sigma", 0.0),
            contrast_gamma=d.get("contrast_gamma", 1.0),
            seed=d.get("seed", 0),
        )


@dataclass
class ImageVolume:
    """A stack of 2D slices plus identity and provenance."""

    volume_id: str
    patient_id: str
    voxels: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)
    provenance: PhantomSpec | None = None

    def __post_init__(self):
        v = np.asarray(self.voxels)
        if v.ndim != 3:
            raise ShapeError("voxels must be 3D (depth, height, width)")
        if v.shape[0] < 1 or v.shape[1] < 8 or v.shape[2] < 8:
            raise ShapeError(f"unusable volume shape {v.shape}")
        if not np.isfinite(v).all():
            raise ParameterError("voxels must be finite")
        self.voxels = np.ascontiguousarray(v, dtype=np.float32)

    @property
    def shape(self):
        return self.voxels.shape


@dataclass(frozen=True)
class Splits:
    train: tuple
    validation: tuple
    test: tuple

    def as_dict(self):
        return {
            "train": list(self.train),
            "validation": list(self.validation),
            "test": list(self.test),
        }


@dataclass
class TestCaseDatabase:
    """Volumes plus pool bookkeeping for the labeling loop.

    `unlabeled`/`labeled` track the active-learning pools over the train
    split; `reference_labels` hold the fused rater labels for every volume
    and serve as replayable ground truth.
    """

    __test__ = False  # keep pytest from collecting the domain class

    volumes: dict = field(default_factory=dict)
    unlabeled: set = field(default_factory=set)
    labeled: dict = field(default_factory=dict)
    reference_labels: dict = field(default_factory=dict)
    splits: Splits | None = None

    def mark_labeled(self, volume_id, cls):
        validate_class(cls)
        if volume_id not in self.unlabeled:
            raise ParameterError(f"{volume_id!r} is not in the unlabeled pool")
        self.unlabeled.discard(volume_id)
        self.labeled[volume_id] = int(cls)

    def check_pools(self):
        """Raise if the pool bookkeeping violates its invariants."""
        overlap = self.unlabeled & set(self.labeled)
        if overlap:
            raise DatabaseError(f"pools overlap: {sorted(overlap)[:5]}")
        known = set(self.volumes)
        stray = (self.unlabeled | set(self.labeled)) - known
        if stray:
            raise DatabaseError(f"pool ids missing from volume table: {sorted(stray)[:5]}")
        if self.splits is not None:
            train = set(self.splits.train)
            if (self.unlabeled | set(self.labeled)) != train:
                raise DatabaseError("unlabeled + labeled must partition the train split")


def _render_slice(body, height, width, scale=1.0):
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    cy, cx = (height - 1) / 2.0, (width - 1) / 2.0
    ry, rx = body.ry * height * scale, body.rx * width * scale
    if body.kind == "ellipse":
        mask = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
    else:
        rr = body.corner_radius * min(ry, rx)
        dy = np.abs(yy - cy) - (ry - rr)
        dx = np.abs(xx - cx) - (rx - rr)
        mask = np.hypot(np.maximum(dy, 0.0), np.maximum(dx, 0.0)) <= rr
    img = np.zeros((height, width), dtype=np.float64)
    img[mask] = body.intensity
    for blob in body.blobs:
        bry, brx = blob.ry * height * scale, blob.rx * width * scale
        bcy, bcx = cy + blob.cy * height, cx + blob.cx * width
        bm = ((yy - bcy) / bry) ** 2 + ((xx - bcx) / brx) ** 2 <= 1.0
        img[bm & mask] = blob.intensity
    return img


def _ghost_slice(img, phase):
    # odd phase-encode (row) lines of k-space pick up per-line phase errors;
    # golden-angle modulation keeps the errors aperiodic across lines so
    # heavy motion smears into stacked ghosts instead of collapsing into one
    # clean displaced copy of the object
    f = np.fft.fft2(img)
    rows = np.arange(img.shape[0], dtype=np.float64)[1::2]
    mod = np.cos(2.399963229728653 * rows)
    f[1::2, :] *= np.exp(1j * phase * mod)[:, None]
    return np.fft.ifft2(f).real


def _alias_slice(img, factor):
    # keep every factor-th k-space line, scaled by factor; fold-over ghosts
    f = np.fft.fft2(img)
    keep = np.zeros(img.shape[0], dtype=bool)
    keep[::factor] = True
    f = np.where(keep[:, None], f * factor, 0.0)
    return np.fft.ifft2(f).real


def inject_artifact_slice(img, art):
    """Apply `art` to a single 2D slice; severity 0 is the identity."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ShapeError("expected a 2D slice")
    s = art.severity
    if art.kind == "none" or s == 0.0:
        return img.copy()
    if art.kind == "motion_ghost":
        return _ghost_slice(img, s * art.ghost_phase)
    if art.kind == "alias_subsample":
        aliased = _alias_slice(img, art.subsample_factor)
        return (1.0 - s) * img + s * aliased
    if art.kind == "blur":
        return ndimage.gaussian_filter(img, sigma=s * art.blur_width, mode="nearest")
    raise ParameterError(f"unknown artifact kind {art.kind!r}")


def inject_artifact(vol, art, seed=0):
    """Return a copy of `vol` with `art` applied slice-wise.

    `seed` is reserved for stochastic artifact variants; the current kinds
    are deterministic and ignore it.
    """
    out = np.stack([inject_artifact_slice(sl, art) for sl in vol.voxels])
    prov = vol.provenance
    if prov is not None:
        prov = dataclasses.replace(prov, artifact=art)
    return ImageVolume(vol.volume_id, vol.patient_id, out.astype(np.float32),
                       vol.spacing, prov)


def generate_phantom(spec):
    """Render the volume described by `spec` (pure function of spec + seed)."""
    depth, height, width = spec.shape
    half = max((depth - 1) / 2.0, 1.0)
    slices = []
    for k in range(depth):
        scale = 1.0 - 0.15 * abs(k - (depth - 1) / 2.0) / half
        sl = _render_slice(spec.body, height, width, scale)
        slices.append(inject_artifact_slice(sl, spec.artifact))
    vox = np.stack(slices)
    if spec.noise_sigma > 0:
        rng = np.random.default_rng(spec.seed)
        vox = vox + rng.normal(0.0, spec.noise_sigma, size=vox.shape)
    if spec.contrast_gamma != 1.0:
        # signed power keeps the transfer monotone through the noisy
        # near-zero background; 2.0 bounds the intensity range
        vox = 2.0 * np.sign(vox) * (np.abs(vox) / 2.0) ** spec.contrast_gamma
    return ImageVolume(
        volume_id=f"phantom-{spec.seed & 0xFFFFFFFF:08x}",
        patient_id="",
        voxels=vox.astype(np.float32),
        provenance=spec,
    )


def severity_score(art, noise_sigma, noise_ref=0.5, art_weight=1.0, noise_weight=1.0):
    """Combined degradation severity: weighted max of artifact and noise."""
    if noise_sigma < 0:
        raise ParameterError("noise_sigma must be >= 0")
    noise_norm = min(noise_sigma / noise_ref, 1.0)
    s = max(art_weight * art.severity, noise_weight * noise_norm)
    return min(max(s, 0.0), 1.0)


def oracle_label(art, noise_sigma, thresholds=DEFAULT_THRESHOLDS, noise_ref=0.5):
    """Map a degradation recipe to its ordinal class 1..5.

    The combined severity is compared against strictly increasing thresholds;
    class = 1 + number of thresholds strictly below the severity.
    """
    t = tuple(thresholds)
    if len(t) != N_CLASSES - 1 or any(b <= a for a, b in zip(t, t[1:])):
        raise ParameterError("need strictly increasing thresholds, one fewer than classes")
    if t[0] <= 0.0 or t[-1] >= 1.0:
        raise ParameterError("thresholds must lie strictly inside (0, 1)")
    s = severity_score(art, noise_sigma, noise_ref=noise_ref)
    return 1 + int(sum(s > x for x in t))


def simulate_raters(true_class, n_raters=5, flip_prob=0.1, seed=0):
    """Simulate noisy ordinal raters.

    Each rater independently reports the true class, except with probability
    flip_prob it moves one class up or down (equal chance), clamped to the
    1..5 range.
    """
    validate_class(true_class)
    if not 0.0 <= flip_prob <= 0.5:
        raise ParameterError("flip_prob must lie in [0, 0.5]")
    if n_raters < 1:
        raise ParameterError("need at least one rater")
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n_raters):
        c = int(true_class)
        if rng.random() < flip_prob:
            c += 1 if rng.random() < 0.5 else -1
        out.append(int(np.clip(c, 1, N_CLASSES)))
    return out


def _allocate(n, ratios):
    raw = [r * n for r in ratios]
    base = [int(math.floor(x)) for x in raw]
    rem = n - sum(base)
    order = sorted(range(len(ratios)), key=lambda i: raw[i] - base[i], reverse=True)
    for i in order[:rem]:
        base[i] += 1
    # every split must keep at least one patient
    while min(base) == 0:
        base[base.index(max(base))] -= 1
        base[base.index(min(base))] += 1
    return base


def split_database(db, ratios=(0.7, 0.1, 0.2), seed=0):
    """Partition volumes into patient-disjoint train/validation/test splits.

    Ratios apply to patient counts (nearest patient). Resets the pools:
    afterwards the unlabeled pool is exactly the train split.
    """
    if len(ratios) != 3 or any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ParameterError("ratios must be three positive numbers summing to 1")
    by_patient = {}
    for vid, vol in db.volumes.items():
        by_patient.setdefault(vol.patient_id, []).append(vid)
    patients = sorted(by_patient)
    if len(patients) < 3:
        raise ParameterError(f"need at least 3 patients, got {len(patients)}")
    rng = np.random.default_rng(seed)
    rng.shuffle(patients)
    n_train, n_val, _ = _allocate(len(patients), ratios)
    buckets = (patients[:n_train], patients[n_train:n_train + n_val],
               patients[n_train + n_val:])
    groups = [tuple(sorted(v for p in b for v in by_patient[p])) for b in buckets]
    splits = Splits(train=groups[0], validation=groups[1], test=groups[2])
    db.splits = splits
    db.unlabeled = set(splits.train)
    db.labeled = {}
    return splits


def save_database(db, path):
    """Write the database under `path` (db.json + volumes/*.f32 + *.json)."""
    path = Path(path)
    vol_dir = path / "volumes"
    vol_dir.mkdir(parents=True, exist_ok=True)
    for vid in sorted(db.volumes):
        vol = db.volumes[vid]
        vol.voxels.astype("<f4").tofile(vol_dir / f"{vid}.f32")
        meta = {
            "volume_id": vol.volume_id,
            "patient_id": vol.patient_id,
            "shape": list(vol.voxels.shape),
            "spacing": list(vol.spacing),
            "provenance": vol.provenance.to_dict() if vol.provenance else None,
        }
        (vol_dir / f"{vid}.json").write_text(json.dumps(meta, indent=1, sort_keys=True))
    index = {
        "version": DB_VERSION,
        "volumes": sorted(db.volumes),
        "unlabeled": sorted(db.unlabeled),
        "labeled": {k: int(v) for k, v in sorted(db.labeled.items())},
        "reference_labels": {k: int(v) for k, v in sorted(db.reference_labels.items())},
        "splits": db.splits.as_dict() if db.splits else None,
    }
    (path / "db.json").write_text(json.dumps(index, indent=1, sort_keys=True))
    return path


def load_database(path):
    """Load a database written by save_database; errors name what is wrong."""
    path = Path(path)
    index_file = path / "db.json"
    if not index_file.exists():
        raise DatabaseNotFoundError(f"no db.json under {path}")
    try:
        index = json.loads(index_file.read_text())
    except json.JSONDecodeError as e:
        raise DatabaseError(f"db.json is not valid JSON: {e}") from e
    if index.get("version") != DB_VERSION:
        raise DatabaseError(f"unsupported database version {index.get('version')!r}")
    vol_dir = path / "volumes"
    volumes = {}
    for vid in index.get("volumes", []):
        meta_file = vol_dir / f"{vid}.json"
        raw_file = vol_dir / f"{vid}.f32"
        if not meta_file.exists() or not raw_file.exists():
            raise DatabaseNotFoundError(f"volume files for {vid!r} are missing")
        meta = json.loads(meta_file.read_text())
        shape = tuple(meta["shape"])
        expected = int(np.prod(shape)) * 4
        actual = raw_file.stat().st_size
        if actual != expected:
            raise DatabaseError(
                f"{vid}.f32 holds {actual} bytes, expected {expected} for shape {shape}")
        vox = np.fromfile(raw_file, dtype="<f4").reshape(shape)
        prov = meta.get("provenance")
        volumes[vid] = ImageVolume(
            volume_id=meta["volume_id"],
            patient_id=meta["patient_id"],
            voxels=vox,
            spacing=tuple(meta.get("spacing", (1.0, 1.0, 1.0))),
            provenance=PhantomSpec.from_dict(prov) if prov else None,
        )
    splits = None
    if index.get("splits"):
        s = index["splits"]
        splits = Splits(tuple(s["train"]), tuple(s["validation"]), tuple(s["test"]))
    db = TestCaseDatabase(
        volumes=volumes,
        unlabeled=set(index.get("unlabeled", [])),
        labeled={k: int(v) for k, v in index.get("labeled", {}).items()},
        reference_labels={k: int(v) for k, v in index.get("reference_labels", {}).items()},
        splits=splits,
    )
    db.check_pools()
    return db


def load_volume(path):
    """Load one volume from its .json or .f32 file path."""
    path = Path(path)
    stem = path.with_suffix("")
    meta_file, raw_file = stem.with_suffix(".json"), stem.with_suffix(".f32")
    if not meta_file.exists() or not raw_file.exists():
        raise DatabaseNotFoundError(f"need both {stem}.json and {stem}.f32")
    meta = json.loads(meta_file.read_text())
    shape = tuple(meta["shape"])
    expected = int(np.prod(shape)) * 4
    if raw_file.stat().st_size != expected:
        raise DatabaseError(
            f"{raw_file.name} holds {raw_file.stat().st_size} bytes, "
            f"expected {expected} for shape {shape}")
    vox = np.fromfile(raw_file, dtype="<f4").reshape(shape)
    prov = meta.get("provenance")
    return ImageVolume(
        volume_id=meta["volume_id"],
        patient_id=meta["patient_id"],
        voxels=vox,
        spacing=tuple(meta.get("spacing", (1.0, 1.0, 1.0))),
        provenance=PhantomSpec.from_dict(prov) if prov else None,
    )


@dataclass(frozen=True)
class CorpusConfig:
    """Knobs for corpus generation; defaults give a learnable 5-class mix."""

    count: int = 900
    seed: int = 0
    shape: tuple = (3, 96, 96)
    n_raters: int = 5
    flip_prob: float = 0.1
    thresholds: tuple = DEFAULT_THRESHOLDS
    class_margin: float = 0.09
    edge_fraction: float = 0.0
    noise_low: float = 0.005
    noise_high: float = 0.045
    noise_ref: float = 0.5
    noise_driven_prob: float = 0.15
    volumes_per_patient: tuple = (2, 3)
    gamma_range: tuple = (0.82, 1.24)

    def __post_init__(self):
        if self.count < 1:
            raise ParameterError("count must be positive")
        if not 0 <= self.class_margin < 0.1:
            raise ParameterError("class_margin must lie in [0, 0.1)")
        if not 0.0 <= self.edge_fraction <= 1.0:
            raise ParameterError("edge_fraction must lie in [0, 1]")
        g_lo, g_hi = self.gamma_range
        if not (0.25 <= g_lo <= g_hi <= 4.0):
            raise ParameterError("gamma_range must satisfy 0.25 <= lo <= hi <= 4")


def _class_band(cls, thresholds, margin):
    lo = 0.0 if cls == 1 else thresholds[cls - 2] + margin
    hi = 1.0 if cls == N_CLASSES else thresholds[cls - 1] - margin
    return lo, hi


def _class_severity(rng, cls, band, edge_fraction):
    # most patients sit at class-typical severities; a minority lands next
    # to a class boundary, where a label pins the decision surface down
    lo, hi = band
    width = hi - lo
    sides = [s for s, ok in (("lo", cls > 1), ("hi", cls < N_CLASSES)) if ok]
    if sides and rng.random() < edge_fraction:
        side = sides[int(rng.integers(len(sides)))]
        off = float(rng.uniform(0.0, 0.25 * width))
        return lo + off if side == "lo" else hi - off
    return float(rng.uniform(lo + 0.3 * width, hi - 0.3 * width))


@dataclass(frozen=True)
class _PatientProfile:
    """Acquisition condition shared by all volumes of one patient."""

    cls: int
    body: BodySpec
    noise_driven: bool
    kind: str  # "" when no k-space artifact is applied
    severity: float
    noise_sigma: float
    gamma: float


def _patient_profile(rng, pid, config):
    cls = 1 + pid % N_CLASSES
    band = _class_band(cls, config.thresholds, config.class_margin)
    severity = _class_severity(rng, cls, band, config.edge_fraction)
    body = _random_body(rng)
    noise_driven = rng.random() < config.noise_driven_prob
    kind, noise_sigma = "", 0.0
    if not noise_driven:
        clean = cls == 1 and (severity < 0.01 or rng.random() < 0.35)
        if not clean:
            kind = ("motion_ghost", "alias_subsample", "blur")[
                int(rng.integers(3))]
        noise_sigma = float(rng.uniform(config.noise_low, config.noise_high))
    gamma = float(rng.uniform(*config.gamma_range))
    return _PatientProfile(cls, body, noise_driven, kind,
                           severity, noise_sigma, gamma)


def _volume_severity(rng, profile, config):
    # repeat scans of one patient drift a little around the patient's
    # severity but never leave the class band
    lo, hi = _class_band(profile.cls, config.thresholds, config.class_margin)
    s = profile.severity + float(rng.uniform(-0.1, 0.1)) * (hi - lo)
    return float(np.clip(s, lo, hi))


def _random_body(rng):
    kind = "ellipse" if rng.random() < 0.6 else "rounded_rect"
    blobs = []
    for _ in range(int(rng.integers(1, 5))):
        bright = rng.random() < 0.5
        blobs.append(Blob(
            cy=float(rng.uniform(-0.13, 0.13)),
            cx=float(rng.uniform(-0.13, 0.13)),
            ry=float(rng.uniform(0.05, 0.15)),
            rx=float(rng.uniform(0.05, 0.15)),
            intensity=float(rng.uniform(1.22, 1.65) if bright else rng.uniform(0.32, 0.72)),
        ))
    return BodySpec(
        kind=kind,
        ry=float(rng.uniform(0.31, 0.45)),
        rx=float(rng.uniform(0.31, 0.45)),
        intensity=1.0,
        corner_radius=float(rng.uniform(0.18, 0.52)),
        blobs=tuple(blobs),
    )


def generate_corpus(config):
    """Generate a labeled corpus of phantom volumes.

    Every volume gets a fused reference label: the oracle class passed
    through simulated raters and median fusion. Splits are not assigned
    here; call split_database afterwards.
    """
    from .evaluation import fuse_labels

    size_rng = np.random.default_rng([config.seed, 0xC0FFEE])
    lo, hi = config.volumes_per_patient
    patient_of = []
    p = 0
    while len(patient_of) < config.count:
        patient_of.extend([p] * int(size_rng.integers(lo, hi + 1)))
        p += 1
    db = TestCaseDatabase()
    profiles = {}
    for i in range(config.count):
        rng = np.random.default_rng([config.seed, 1, i])
        pid = patient_of[i]
        if pid not in profiles:
            profiles[pid] = _patient_profile(
                np.random.default_rng([config.seed, 3, pid]), pid, config)
        prof = profiles[pid]
        s = _volume_severity(rng, prof, config)
        if prof.noise_driven:
            art = ArtifactSpec()
            noise_sigma = config.noise_ref * s
        else:
            if prof.kind:
                art = ArtifactSpec(kind=prof.kind, severity=s)
            else:
                art = ArtifactSpec()
            # scanner noise floor is a property of the patient's exam, with
            # slight drift between repeat scans
            noise_sigma = float(np.clip(
                prof.noise_sigma * rng.uniform(0.9, 1.1),
                config.noise_low, config.noise_high))
        spec = PhantomSpec(
            shape=config.shape,
            body=prof.body,
            artifact=art,
            noise_sigma=noise_sigma,
            contrast_gamma=prof.gamma,
            seed=int(rng.integers(0, 2**62)),
        )
        vol = generate_phantom(spec)
        vol.volume_id = f"vol{i:05d}"
        vol.patient_id = f"pat{patient_of[i]:04d}"
        db.volumes[vol.volume_id] = vol
        truth = oracle_label(art, noise_sigma, config.thresholds, config.noise_ref)
        raters = simulate_raters(truth, config.n_raters, config.flip_prob,
                                 seed=[config.seed, 2, i])
        db.reference_labels[vol.volume_id] = fuse_labels(raters)
    db.unlabeled = set(db.volumes)
    return db
