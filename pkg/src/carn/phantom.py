"""Synthetic sagittal spine phantoms with known height ground truth.

Targets are 30 heights in millimetres: five discs (top to bottom), each
an (anterior, middle, posterior) triple, then five vertebral bodies the
same way. A latent vector drives bounded sinusoidal features mixed into
the heights, so all generated targets lie on a low-dimensional manifold
and always satisfy the range invariants. The renderer stacks bright
vertebral quadrilaterals and dark disc bands whose column-wise extents
encode the heights; a threshold-scan oracle can read them back to within
one pixel.

Also defines the on-disk dataset layout: ``manifest.json`` + one raw
little-endian float32 image per sample + ``targets.csv``.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

PAPER_PIXEL_SPACING = 0.4688  # mm per pixel
PAPER_HW = (512, 256)

IDH_MAX_MM = 25.0
VBH_MAX_MM = 40.0
MIN_HEIGHT_PX = 2.0

VB_INTENSITY = 0.7
DISC_INTENSITY = 0.3
BACKGROUND = 0.1

MANIFEST_VERSION = 1
_POSITIONS = ("anterior", "middle", "posterior")

INDEX_NAMES = tuple(
    [f"disc{i}_{p}" for i in range(1, 6) for p in _POSITIONS]
    + [f"vb{i}_{p}" for i in range(1, 6) for p in _POSITIONS]
)
IDH_SLICE = slice(0, 15)
VBH_SLICE = slice(15, 30)

# baseline anatomy, mm: per-level scale x per-position base
_VB_LEVEL = np.array([0.92, 0.96, 1.00, 1.04, 1.08])
_VB_BASE = np.array([26.0, 27.0, 25.0])
_DISC_LEVEL = np.array([0.85, 0.95, 1.00, 1.08, 0.92])
_DISC_BASE = np.array([9.5, 10.5, 8.0])


def desk_pixel_spacing(image_h):
    """Pixel spacing that keeps the full-scale field of view on a smaller canvas."""
    return PAPER_PIXEL_SPACING * PAPER_HW[0] / image_h


@dataclass
class PhantomSpec:
    """Generator settings; defaults match the full-scale acquisition grid."""

    latent_dim: int = 4
    pixel_spacing: float = PAPER_PIXEL_SPACING
    image_hw: tuple = PAPER_HW
    noise_sigma: float = 0.02
    ambiguity_prob: float = 0.1

    def __post_init__(self):
        self.image_hw = tuple(int(v) for v in self.image_hw)
        if not 1 <= self.latent_dim < 30:
            raise ValueError(f"latent_dim must be in [1, 30), got {self.latent_dim}")
        if self.pixel_spacing <= 0:
            raise ValueError("pixel_spacing must be positive")
        if self.noise_sigma < 0 or not 0 <= self.ambiguity_prob <= 1:
            raise ValueError("noise_sigma must be >= 0 and ambiguity_prob in [0, 1]")


def baseline_indices():
    """The fixed all-default anatomy (the latent origin's image)."""
    discs = (_DISC_LEVEL[:, None] * _DISC_BASE[None, :]).reshape(-1)
    vbs = (_VB_LEVEL[:, None] * _VB_BASE[None, :]).reshape(-1)
    return np.concatenate([discs, vbs])


def _structured_column(**rows):
    col = np.zeros(30)
    for key, triple in rows.items():
        which, level = key[0], int(key[1:])
        base = (level - 1) * 3 if which == "d" else 15 + (level - 1) * 3
        col[base:base + 3] = triple
    return col


def _mixing_matrix(m):
    """Fixed 30 x m pattern: global stature, disc/VB balance, and two joint
    disc-plus-adjacent-VB shrink factors; extra columns are a small fixed blend."""
    all_discs = {f"d{i}": (0.8,) * 3 for i in range(1, 6)}
    all_vbs = {f"v{i}": (2.0,) * 3 for i in range(1, 6)}
    balance_discs = {f"d{i}": (1.2,) * 3 for i in range(1, 6)}
    balance_vbs = {f"v{i}": (-0.8,) * 3 for i in range(1, 6)}
    cols = [
        _structured_column(**all_discs, **all_vbs),
        _structured_column(**balance_discs, **balance_vbs),
        _structured_column(d2=(-1.6, -1.8, -1.2), v2=(-0.9, -0.7, -0.5),
                           v3=(-0.8, -0.6, -0.6)),
        _structured_column(d4=(-1.6, -1.8, -1.2), v4=(-0.9, -0.7, -0.5),
                           v5=(-0.8, -0.6, -0.6)),
    ]
    A = np.zeros((30, m))
    for j in range(min(m, 4)):
        A[:, j] = cols[j]
    if m > 4:
        extra_rng = np.random.default_rng(424242)
        A[:, 4:] = 0.5 * extra_rng.uniform(-1.0, 1.0, size=(30, m - 4))
    return A


def _feature_mixers(m):
    rng = np.random.default_rng(151515)
    W = rng.standard_normal((m, m))
    W /= np.linalg.norm(W, axis=0, keepdims=True)
    return 1.2 * W


def latent_to_indices(z):
    """Smooth deterministic map from an m-dim latent to the 30 heights.

    Heights are an affine function of bounded sinusoidal features of z, so
    every output satisfies the positivity and range invariants for any
    finite z and the centered target population has rank <= m.
    """
    z = np.asarray(z, dtype=np.float64).reshape(-1)
    m = z.shape[0]
    if not 1 <= m < 30:
        raise ValueError(f"latent dimension must be in [1, 30), got {m}")
    features = np.sin(_feature_mixers(m).T @ z)
    y = baseline_indices() + _mixing_matrix(m) @ features
    # bounded by construction; the clip only guards the declared invariants
    y[IDH_SLICE] = np.clip(y[IDH_SLICE], 0.5, IDH_MAX_MM)
    y[VBH_SLICE] = np.clip(y[VBH_SLICE], 0.5, VBH_MAX_MM)
    return y


# ---------------------------------------------------------------------------
# rendering


def column_span(width):
    """Horizontal extent [x0, x1) of the spine column; odd width so the
    middle station falls on an exact column."""
    x0 = int(round(0.2 * width))
    span = int(round(0.6 * width))
    if span % 2 == 0:
        span += 1
    return x0, x0 + span


def station_columns(width):
    """Columns where the anterior/middle/posterior heights are exact."""
    x0, x1 = column_span(width)
    return x0, (x0 + x1 - 1) // 2, x1 - 1


def _interp_heights(y_px, s):
    """Quadratic interpolation through the three stations for each of the
    10 structures, stacked VB1, disc1, ..., VB5, disc5. Returns (10, ncols)."""
    triples = np.empty((10, 3))
    for lvl in range(5):
        triples[2 * lvl] = y_px[15 + 3 * lvl:15 + 3 * lvl + 3]  # VB
        triples[2 * lvl + 1] = y_px[3 * lvl:3 * lvl + 3]        # disc below it
    ha, hm, hp = triples[:, 0:1], triples[:, 1:2], triples[:, 2:3]
    s = s[None, :]
    return (ha * 2.0 * (s - 0.5) * (s - 1.0)
            + hm * 4.0 * s * (1.0 - s)
            + hp * s * (2.0 * s - 1.0))


_BLUR_HALFWIDTH = 2.5  # px


def render_phantom(y, spec, rng_seed):
    """Rasterize one phantom: (1, H, W) float32 image with values in [0, 1].

    Bright vertebral bodies alternate with darker disc bands; each
    structure's column-wise extent encodes its interpolated height. Each
    internal boundary is blurred with probability ``ambiguity_prob``; then
    Gaussian intensity noise is added and the image is clipped to [0, 1].
    """
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if y.shape[0] != 30:
        raise ValueError(f"expected 30 heights, got {y.shape[0]}")
    if np.any(y <= 0):
        raise ValueError("heights must be strictly positive")
    rng = np.random.default_rng(rng_seed)
    H, W = spec.image_hw
    y_px = y / spec.pixel_spacing
    if np.any(y_px < MIN_HEIGHT_PX):
        raise ValueError(
            f"heights below {MIN_HEIGHT_PX} pixels at spacing {spec.pixel_spacing}"
        )

    x0, x1 = column_span(W)
    ncols = x1 - x0
    s = np.arange(ncols) / (ncols - 1)
    heights = _interp_heights(y_px, s)  # (10, ncols)
    totals = heights.sum(axis=0)
    top = (H - totals) / 2.0
    if np.any(top < 1.0):
        raise ValueError(
            f"column height {totals.max():.1f}px exceeds canvas H={H} (margin < 1px)"
        )
    bounds = np.empty((11, ncols))
    bounds[0] = top
    bounds[1:] = top + np.cumsum(heights, axis=0)

    img = np.full((H, W), BACKGROUND, dtype=np.float64)
    centers = np.arange(H, dtype=np.float64)[:, None] + 0.5
    intensities = [VB_INTENSITY, DISC_INTENSITY] * 5
    strip = img[:, x0:x1]
    for k in range(10):
        strip[(centers >= bounds[k]) & (centers < bounds[k + 1])] = intensities[k]

    blurred = rng.random(9) < spec.ambiguity_prob
    for b in np.nonzero(blurred)[0]:
        edge = bounds[b + 1]  # boundary below structure b
        above = intensities[b]
        below = intensities[b + 1] if b + 1 < 10 else BACKGROUND
        t = (centers - (edge - _BLUR_HALFWIDTH)) / (2.0 * _BLUR_HALFWIDTH)
        t = np.clip(t, 0.0, 1.0)
        ramp = t * t * (3.0 - 2.0 * t)
        window = (t > 0.0) & (t < 1.0)
        strip[window] = (above * (1.0 - ramp) + below * ramp)[window]

    if spec.noise_sigma > 0:
        img += rng.normal(0.0, spec.noise_sigma, size=(H, W))
    np.clip(img, 0.0, 1.0, out=img)
    return img[None, :, :].astype(np.float32)


def measure_heights(image, spec):
    """Threshold-scan oracle: recover the 30 heights from a clean render.

    Scans the three station columns, classifies pixels as vertebra or disc
    by intensity, and converts run lengths back to millimetres. Exact to
    within one pixel spacing when noise and blurring are disabled.
    """
    img = np.asarray(image)
    if img.ndim == 3:
        img = img[0]
    H, W = img.shape
    if (H, W) != tuple(spec.image_hw):
        raise ValueError(f"image {img.shape} does not match spec {spec.image_hw}")
    stations = station_columns(W)
    measured = np.full(30, np.nan)
    for pos, x in enumerate(stations):
        col = img[:, x]
        kind = np.where(col > 0.5, 1, np.where(col > 0.2, 2, 0))  # 1=VB 2=disc
        runs = []
        r = 0
        while r < H:
            if kind[r] == 0:
                r += 1
                continue
            start, label = r, kind[r]
            while r < H and kind[r] == label:
                r += 1
            runs.append((label, r - start))
        if [label for label, _ in runs] != [1, 2] * 5:
            raise ValueError(
                f"column {x}: expected 5 alternating vertebra/disc bands, got {runs}"
            )
        for lvl in range(5):
            vb_len = runs[2 * lvl][1]
            disc_len = runs[2 * lvl + 1][1]
            measured[15 + 3 * lvl + pos] = vb_len * spec.pixel_spacing
            measured[3 * lvl + pos] = disc_len * spec.pixel_spacing
    return measured


# ---------------------------------------------------------------------------
# dataset files


@dataclass
class SampleRef:
    image: str
    sha256: str
    split: str
    target: list


@dataclass
class DatasetManifest:
    version: int
    n: int
    image_hw: tuple
    pixel_spacing: float
    dtype: str
    index_names: tuple
    samples: list
    latent_dim: int
    noise_sigma: float
    ambiguity_prob: float
    seed: int
    train_fraction: float

    def to_dict(self):
        return {
            "version": self.version,
            "n": self.n,
            "image_hw": list(self.image_hw),
            "pixel_spacing": self.pixel_spacing,
            "dtype": self.dtype,
            "index_names": list(self.index_names),
            "latent_dim": self.latent_dim,
            "noise_sigma": self.noise_sigma,
            "ambiguity_prob": self.ambiguity_prob,
            "seed": self.seed,
            "train_fraction": self.train_fraction,
            "samples": [
                {"image": s.image, "sha256": s.sha256, "split": s.split,
                 "target": s.target}
                for s in self.samples
            ],
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("version") != MANIFEST_VERSION:
            raise ValueError(f"unsupported manifest version {d.get('version')}")
        samples = [SampleRef(s["image"], s["sha256"], s["split"], s["target"])
                   for s in d["samples"]]
        return cls(
            version=d["version"], n=d["n"], image_hw=tuple(d["image_hw"]),
            pixel_spacing=d["pixel_spacing"], dtype=d["dtype"],
            index_names=tuple(d["index_names"]), samples=samples,
            latent_dim=d["latent_dim"], noise_sigma=d["noise_sigma"],
            ambiguity_prob=d["ambiguity_prob"], seed=d["seed"],
            train_fraction=d["train_fraction"],
        )


def generate_dataset(n, spec, seed, out_dir, train_fraction=0.8):
    """Write n rendered phantoms plus manifest and targets to ``out_dir``.

    Latents are i.i.d. standard normal; every sample gets its own child
    seed, so regeneration with the same arguments is bit-identical. The
    first round(train_fraction * n) samples form the train split.
    """
    if n < 10:
        raise ValueError(f"need at least 10 samples, got {n}")
    if not 0 < train_fraction < 1:
        raise ValueError(f"train_fraction must be in (0, 1), got {train_fraction}")
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    n_train = int(round(n * train_fraction))
    children = np.random.SeedSequence(seed).spawn(n)

    samples = []
    targets = np.empty((n, 30))
    for i in range(n):
        rng = np.random.default_rng(children[i])
        z = rng.standard_normal(spec.latent_dim)
        y = latent_to_indices(z)
        img = render_phantom(y, spec, rng)
        rel = f"images/sample_{i:05d}.bin"
        payload = img.astype("<f4").tobytes()
        (out / rel).write_bytes(payload)
        targets[i] = y
        samples.append(SampleRef(
            image=rel,
            sha256=hashlib.sha256(payload).hexdigest(),
            split="train" if i < n_train else "test",
            target=[float(v) for v in y],
        ))

    manifest = DatasetManifest(
        version=MANIFEST_VERSION, n=n, image_hw=spec.image_hw,
        pixel_spacing=spec.pixel_spacing, dtype="<f4",
        index_names=INDEX_NAMES, samples=samples,
        latent_dim=spec.latent_dim, noise_sigma=spec.noise_sigma,
        ambiguity_prob=spec.ambiguity_prob, seed=seed,
        train_fraction=train_fraction,
    )
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest.to_dict(), fh, indent=1)
    with open(out / "targets.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(INDEX_NAMES)
        for i in range(n):
            writer.writerow([repr(float(v)) for v in targets[i]])
    return manifest


@dataclass
class Dataset:
    """An in-memory dataset: manifest plus stacked images and targets."""

    manifest: DatasetManifest
    images: np.ndarray   # (N, 1, H, W) float32
    targets: np.ndarray  # (N, 30) float64

    @property
    def train_mask(self):
        return np.array([s.split == "train" for s in self.manifest.samples])

    def split_arrays(self, split):
        if split not in ("train", "test"):
            raise ValueError(f"split must be 'train' or 'test', got {split!r}")
        mask = self.train_mask if split == "train" else ~self.train_mask
        return self.images[mask], self.targets[mask]


def read_dataset(path):
    """Load a dataset directory, verifying shapes and checksums.

    Any corrupt, missing, or truncated image is rejected with an error
    naming the offending file.
    """
    root = Path(path)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise ValueError(f"no manifest.json under {root}")
    with open(manifest_path, encoding="utf-8") as fh:
        manifest = DatasetManifest.from_dict(json.load(fh))
    if manifest.n < 1 or len(manifest.samples) != manifest.n:
        raise ValueError(f"manifest {manifest_path} declares an empty or inconsistent sample list")
    if len(manifest.index_names) != 30:
        raise ValueError(f"manifest {manifest_path} must name exactly 30 indices")
    H, W = manifest.image_hw
    dtype = np.dtype(manifest.dtype)
    expected_bytes = H * W * dtype.itemsize

    images = np.empty((manifest.n, 1, H, W), dtype=np.float32)
    targets = np.empty((manifest.n, 30))
    for i, sample in enumerate(manifest.samples):
        fpath = root / sample.image
        if not fpath.exists():
            raise ValueError(f"missing image file: {fpath}")
        payload = fpath.read_bytes()
        if len(payload) != expected_bytes:
            raise ValueError(
                f"image file {fpath} has {len(payload)} bytes, expected {expected_bytes}"
            )
        if hashlib.sha256(payload).hexdigest() != sample.sha256:
            raise ValueError(f"checksum mismatch for image file: {fpath}")
        images[i, 0] = np.frombuffer(payload, dtype=dtype).reshape(H, W)
        targets[i] = np.asarray(sample.target, dtype=np.float64)
    return Dataset(manifest=manifest, images=images, targets=targets)
