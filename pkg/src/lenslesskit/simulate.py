"""Synthetic scenes, illumination, sensor noise, and dataset generation.

Measurements follow the two-capture protocol: a scene measurement
``y = H x + H x_b + n_a`` contaminated by external illumination ``x_b``
passing through the mask, and an estimate of that contamination
``b_hat = H x_b - n_b`` obtained by averaging noisy background-only frames.
All bookkeeping terms are stored separately so downstream analysis is exact.

Randomness: every record derives its generator from
``SeedSequence([master_seed, stream, record_index])`` so parallel and serial
generation agree and identical configs are bit-reproducible.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from . import arrayio, numerics, optics
from .errors import InvalidParamsError, ShapeMismatchError

_STREAM_SPLIT = 0
_STREAM_RECORD = 1

MANIFEST_NAME = "manifest.json"


# ---------------------------------------------------------------------------
# specs


@dataclass(frozen=True)
class NoiseSpec:
    """Sensor noise model: additive Gaussian, optionally with a Poisson part."""

    kind: str = "gaussian"
    sigma: float = 0.01
    peak: float | None = None

    def __post_init__(self):
        if self.kind not in ("gaussian", "poisson_gaussian"):
            raise InvalidParamsError(f"unknown noise kind {self.kind!r}")
        if self.sigma < 0:
            raise InvalidParamsError(f"sigma must be >= 0, got {self.sigma}")
        if self.kind == "poisson_gaussian" and (self.peak is None or self.peak <= 0):
            raise InvalidParamsError("poisson_gaussian requires peak > 0")

    def to_dict(self):
        return {"kind": self.kind, "sigma": self.sigma, "peak": self.peak}

    @classmethod
    def from_dict(cls, d):
        return cls(kind=d.get("kind", "gaussian"), sigma=d.get("sigma", 0.01), peak=d.get("peak"))


@dataclass(frozen=True)
class IlluminationSpec:
    """External illumination reaching the mask.

    ``ambient_uniform`` is a constant plane at ``level``; ``lamp_directional``
    sums 2D Gaussians, one per ``(y, x, sigma, intensity)`` entry; ``mixture``
    adds both. ``seed`` is carried for randomized variants built on top.
    """

    kind: str = "ambient_uniform"
    level: float = 0.0
    lamp_positions: tuple = ()
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("ambient_uniform", "lamp_directional", "mixture"):
            raise InvalidParamsError(f"unknown illumination kind {self.kind!r}")
        if self.level < 0:
            raise InvalidParamsError(f"level must be >= 0, got {self.level}")
        for lamp in self.lamp_positions:
            if len(lamp) != 4:
                raise InvalidParamsError(f"lamp must be (y, x, sigma, intensity), got {lamp}")
            if lamp[2] <= 0 or lamp[3] < 0:
                raise InvalidParamsError(f"lamp sigma must be > 0 and intensity >= 0, got {lamp}")

    def to_dict(self):
        return {
            "kind": self.kind,
            "level": self.level,
            "lamp_positions": [list(p) for p in self.lamp_positions],
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            kind=d.get("kind", "ambient_uniform"),
            level=d.get("level", 0.0),
            lamp_positions=tuple(tuple(p) for p in d.get("lamp_positions", ())),
            seed=d.get("seed", 0),
        )


@dataclass
class SimRecord:
    """One simulated capture with exact bookkeeping of every term.

    ``y = forward(x) + forward(x_b) + n_a`` and ``n_b = forward(x_b) - b_hat``
    hold by construction; after a float32 disk round-trip they hold to
    float32 quantization (~1e-6 relative).
    """

    x: np.ndarray
    x_b: np.ndarray
    y: np.ndarray
    n_a: np.ndarray
    b_hat: np.ndarray | None = None
    n_b: np.ndarray | None = None
    meta: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# synthesis


def _record_rng(master_seed, index, stream=_STREAM_RECORD):
    return np.random.default_rng(np.random.SeedSequence([int(master_seed), stream, int(index)]))


def synth_psf(kind, shape, params=None, seed=0):
    """Generate a normalized synthetic PSF.

    Kinds: ``random_spots`` (impulses blurred by a small Gaussian),
    ``gaussian_speckle`` (low-pass filtered complex noise magnitude), and
    ``multifocal_like`` (superposed defocused spot grids). The 2D pattern is
    shared across channels; per-channel sums are normalized to 1.
    """
    if len(shape) == 2:
        shape = (shape[0], shape[1], 3)
    h, w, c = shape
    if min(h, w, c) < 1:
        raise InvalidParamsError(f"invalid psf shape {shape}")
    params = dict(params or {})
    rng = np.random.default_rng(seed)

    if kind == "random_spots":
        n_spots = int(params.pop("n_spots", 5))
        blur = float(params.pop("blur_sigma", 0.8))
        if n_spots < 1 or blur < 0:
            raise InvalidParamsError("random_spots needs n_spots >= 1 and blur_sigma >= 0")
        base = np.zeros((h, w))
        ys = rng.integers(0, h, size=n_spots)
        xs = rng.integers(0, w, size=n_spots)
        for yy, xx in zip(ys, xs):
            base[yy, xx] += 1.0
        if blur > 0:
            base = gaussian_filter(base, blur, mode="constant")
    elif kind == "gaussian_speckle":
        corr = float(params.pop("corr_sigma", 1.5))
        if corr <= 0:
            raise InvalidParamsError("gaussian_speckle needs corr_sigma > 0")
        re = gaussian_filter(rng.standard_normal((h, w)), corr, mode="wrap")
        im = gaussian_filter(rng.standard_normal((h, w)), corr, mode="wrap")
        base = re * re + im * im
    elif kind == "multifocal_like":
        n_grids = int(params.pop("n_grids", 3))
        spacing = int(params.pop("spacing", max(2, min(h, w) // 3)))
        if n_grids < 1 or spacing < 1:
            raise InvalidParamsError("multifocal_like needs n_grids >= 1 and spacing >= 1")
        base = np.zeros((h, w))
        for g in range(n_grids):
            grid = np.zeros((h, w))
            oy = int(rng.integers(0, spacing))
            ox = int(rng.integers(0, spacing))
            grid[oy::spacing, ox::spacing] = 1.0
            # larger grids are progressively more defocused
            grid = gaussian_filter(grid, 0.4 + 0.5 * g, mode="constant")
            base += grid * float(rng.uniform(0.5, 1.0))
    else:
        raise InvalidParamsError(f"unknown psf kind {kind!r}")
    if params:
        raise InvalidParamsError(f"unknown psf params {sorted(params)}")

    image = np.repeat(base[:, :, None], c, axis=2)
    return optics.normalize_psf(image)


def synth_scene(shape, seed=0, kind="mixed"):
    """Procedural scene: band-limited texture, geometric shapes, or both."""
    h, w, c = shape
    rng = np.random.default_rng(seed)
    out = np.zeros((h, w, c))
    if kind not in ("texture", "shapes", "mixed"):
        raise InvalidParamsError(f"unknown scene kind {kind!r}")

    if kind in ("texture", "mixed"):
        fy = np.fft.fftfreq(h)[:, None]
        fx = np.fft.fftfreq(w)[None, :]
        lowpass = np.exp(-((fy**2 + fx**2) / (2 * 0.15**2)))
        for ch in range(c):
            noise = rng.standard_normal((h, w))
            tex = np.fft.ifft2(np.fft.fft2(noise) * lowpass).real
            lo, hi = tex.min(), tex.max()
            out[:, :, ch] += 0.6 * (tex - lo) / max(hi - lo, 1e-12)

    if kind in ("shapes", "mixed"):
        n_shapes = int(rng.integers(2, 5))
        yy, xx = np.mgrid[0:h, 0:w]
        for _ in range(n_shapes):
            cy, cx = rng.uniform(0, h), rng.uniform(0, w)
            r = rng.uniform(min(h, w) * 0.08, min(h, w) * 0.25)
            mask = ((yy - cy) ** 2 + (xx - cx) ** 2) < r * r
            color = rng.uniform(0.2, 0.9, size=c)
            out[mask] += color
    return np.clip(out, 0.0, 1.0)


def synth_background(spec, scene_shape, channels=3):
    """Render the external-illumination scene plane for an IlluminationSpec."""
    h, w = scene_shape
    plane = np.zeros((h, w))
    if spec.kind in ("ambient_uniform", "mixture"):
        plane += spec.level
    if spec.kind in ("lamp_directional", "mixture"):
        yy, xx = np.mgrid[0:h, 0:w]
        for ly, lx, sigma, intensity in spec.lamp_positions:
            plane += intensity * np.exp(
                -((yy - ly) ** 2 + (xx - lx) ** 2) / (2.0 * sigma**2)
            )
    return np.repeat(plane[:, :, None], channels, axis=2)


def draw_noise(spec, clean, rng):
    """Sample sensor noise for a clean (noise-free) measurement."""
    if spec.kind == "gaussian":
        if spec.sigma == 0:
            return np.zeros_like(clean)
        return spec.sigma * rng.standard_normal(clean.shape)
    # poisson_gaussian: shot noise at `peak` photons per unit intensity
    rate = np.maximum(clean, 0.0) * spec.peak
    shot = rng.poisson(rate) / spec.peak - np.maximum(clean, 0.0)
    if spec.sigma > 0:
        shot = shot + spec.sigma * rng.standard_normal(clean.shape)
    return shot


def capture(op, x, x_b, noise, seed=0):
    """Simulate one measurement ``y = H x + H x_b + n_a``; terms kept apart.

    Returns a partial :class:`SimRecord` (no background estimate yet).
    """
    x = numerics.ensure_image(x, "scene")
    x_b = numerics.ensure_image(x_b, "background scene")
    if x.shape != x_b.shape:
        raise ShapeMismatchError(f"scene {x.shape} != background scene {x_b.shape}")
    hx = optics.forward(op, x)
    hxb = optics.forward(op, x_b)
    rng = np.random.default_rng(seed)
    n_a = draw_noise(noise, hx + hxb, rng)
    y = hx + hxb + n_a
    return SimRecord(x=x, x_b=x_b, y=y, n_a=n_a, meta={"noise": noise.to_dict()})


def estimate_background(op, x_b, noise, n_frames, seed=0):
    """Frame-averaged background estimate ``b_hat`` and its error ``n_b``.

    ``b_hat`` is the mean of ``n_frames`` noisy background-only captures;
    ``n_b = H x_b - b_hat`` shrinks in norm as ``1/sqrt(n_frames)``.
    """
    if n_frames < 1:
        raise InvalidParamsError(f"n_frames must be >= 1, got {n_frames}")
    x_b = numerics.ensure_image(x_b, "background scene")
    hxb = optics.forward(op, x_b)
    rng = np.random.default_rng(seed)
    noise_sum = np.zeros_like(hxb)
    for _ in range(n_frames):
        noise_sum += draw_noise(noise, hxb, rng)
    b_hat = hxb + noise_sum / n_frames
    n_b = hxb - b_hat
    return b_hat, n_b


def make_record(op, x, x_b, noise, n_frames, seed, meta=None):
    """Capture plus background estimation with independent derived seeds."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    capture_ss, estimate_ss = ss.spawn(2)
    record = capture(op, x, x_b, noise, seed=capture_ss)
    record.b_hat, record.n_b = estimate_background(op, x_b, noise, n_frames, seed=estimate_ss)
    record.meta.update({"n_frames": n_frames})
    if meta:
        record.meta.update(meta)
    return record


# ---------------------------------------------------------------------------
# datasets


@dataclass
class DatasetConfig:
    """Everything needed to synthesize a dataset deterministically."""

    n_records: int
    scene_shape: tuple
    psf: dict | str
    channels: int = 3
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    ambient_level: float = 0.0
    train_lamp_sets: tuple = ()
    test_lamp_sets: tuple = ()
    n_frames: int = 16
    split_fraction: float = 0.85
    seed: int = 0
    scene_kind: str = "mixed"
    scene_dir: str | None = None

    def __post_init__(self):
        if self.n_records < 1:
            raise InvalidParamsError("n_records must be >= 1")
        if not 0.0 < self.split_fraction < 1.0:
            raise InvalidParamsError("split_fraction must be in (0, 1)")
        if bool(self.train_lamp_sets) != bool(self.test_lamp_sets):
            raise InvalidParamsError(
                "train_lamp_sets and test_lamp_sets must be provided together"
            )

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if isinstance(d.get("noise"), dict):
            d["noise"] = NoiseSpec.from_dict(d["noise"])
        d["scene_shape"] = tuple(d["scene_shape"])
        d["train_lamp_sets"] = tuple(
            tuple(tuple(p) for p in s) for s in d.get("train_lamp_sets", ())
        )
        d["test_lamp_sets"] = tuple(
            tuple(tuple(p) for p in s) for s in d.get("test_lamp_sets", ())
        )
        return cls(**d)


def _load_or_synth_psf(psf_spec, base_dir=None):
    if isinstance(psf_spec, str):
        path = Path(psf_spec)
        if base_dir is not None and not path.is_absolute():
            path = Path(base_dir) / path
        return optics.check_psf(arrayio.read_array(path))
    spec = dict(psf_spec)
    if "path" in spec:
        return optics.check_psf(arrayio.read_array(spec["path"]))
    return synth_psf(
        spec["kind"], tuple(spec["shape"]), spec.get("params"), spec.get("seed", 0)
    )


def _illumination_for(config, lamp_set):
    lamps = tuple(tuple(p) for p in lamp_set)
    if config.ambient_level > 0 and lamps:
        kind = "mixture"
    elif lamps:
        kind = "lamp_directional"
    else:
        kind = "ambient_uniform"
    return IlluminationSpec(kind=kind, level=config.ambient_level, lamp_positions=lamps)


def _scene_for(config, index, rng_seed):
    shape = (config.scene_shape[0], config.scene_shape[1], config.channels)
    if config.scene_dir is not None:
        paths = sorted(Path(config.scene_dir).glob("*.png"))
        if not paths:
            raise InvalidParamsError(f"no PNG scenes found in {config.scene_dir}")
        img = arrayio.read_png(paths[index % len(paths)])
        if img.shape[2] == 1 and config.channels > 1:
            img = np.repeat(img, config.channels, axis=2)
        if img.shape != shape:
            from PIL import Image

            pil = Image.fromarray(np.round(np.clip(img, 0, 1) * 255).astype(np.uint8).squeeze())
            pil = pil.resize((shape[1], shape[0]), Image.BILINEAR)
            img = np.asarray(pil, dtype=np.float64) / 255.0
            if img.ndim == 2:
                img = np.repeat(img[:, :, None], config.channels, axis=2)
        return img[:, :, : config.channels]
    return synth_scene(shape, seed=rng_seed, kind=config.scene_kind)


def build_dataset(config, out_dir):
    """Write a full dataset (records + JSON manifest) and return its manifest.

    The train/test split is a seeded shuffle at ``split_fraction``; when lamp
    variation is configured the two splits draw from disjoint lamp-position
    sets. Record ``i`` derives all randomness from
    ``SeedSequence([seed, 1, i])``; the split permutation uses stream 0.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    psf = _load_or_synth_psf(config.psf)
    if psf.shape[2] != config.channels:
        raise ShapeMismatchError(
            f"psf has {psf.shape[2]} channels, dataset wants {config.channels}"
        )
    op = optics.make_operator(psf, config.scene_shape)
    arrayio.write_array(out_dir / "psf.llia", psf)

    n = config.n_records
    n_train = int(round(config.split_fraction * n))
    perm = _record_rng(config.seed, 0, stream=_STREAM_SPLIT).permutation(n)
    split = np.empty(n, dtype=object)
    split[perm[:n_train]] = "train"
    split[perm[n_train:]] = "test"

    records = []
    for i in range(n):
        ss = np.random.SeedSequence([int(config.seed), _STREAM_RECORD, i])
        scene_seed, record_ss = ss.spawn(2)
        x = _scene_for(config, i, scene_seed)
        if split[i] == "train":
            sets = config.train_lamp_sets
        else:
            sets = config.test_lamp_sets
        lamp_set = sets[i % len(sets)] if sets else ()
        illum = _illumination_for(config, lamp_set)
        x_b = synth_background(illum, config.scene_shape, config.channels)
        rec = make_record(op, x, x_b, config.noise, config.n_frames, record_ss)

        rec_dir = out_dir / "records" / f"{i:05d}"
        rec_dir.mkdir(parents=True, exist_ok=True)
        for name, arr in (
            ("x", rec.x),
            ("xb", rec.x_b),
            ("y", rec.y),
            ("bhat", rec.b_hat),
            ("nb", rec.n_b),
            ("na", rec.n_a),
        ):
            arrayio.write_array(rec_dir / f"{name}.llia", arr)
        records.append(
            {
                "index": i,
                "split": str(split[i]),
                "path": f"records/{i:05d}",
                "lamp_set": [list(p) for p in lamp_set],
                "illumination": illum.to_dict(),
            }
        )

    manifest = {
        "format": "lenslesskit-dataset",
        "version": 1,
        "n_records": n,
        "scene_shape": list(config.scene_shape),
        "channels": config.channels,
        "psf_file": "psf.llia",
        "noise": config.noise.to_dict(),
        "ambient_level": config.ambient_level,
        "n_frames": config.n_frames,
        "split_fraction": config.split_fraction,
        "seed": config.seed,
        "scene_kind": config.scene_kind,
        "records": records,
    }
    with open(out_dir / MANIFEST_NAME, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return DatasetManifest(out_dir, manifest)


class DatasetManifest:
    """Handle to a dataset on disk: JSON index plus per-record array files."""

    def __init__(self, root, data):
        self.root = Path(root)
        self.data = data

    @classmethod
    def load(cls, path):
        path = Path(path)
        if path.is_dir():
            path = path / MANIFEST_NAME
        with open(path) as f:
            data = json.load(f)
        if data.get("format") != "lenslesskit-dataset":
            raise InvalidParamsError(f"{path} is not a dataset manifest")
        return cls(path.parent, data)

    @property
    def records(self):
        return self.data["records"]

    def indices(self, split=None):
        return [r["index"] for r in self.records if split is None or r["split"] == split]

    def psf(self):
        return arrayio.read_array(self.root / self.data["psf_file"])

    def operator(self):
        return optics.make_operator(self.psf(), tuple(self.data["scene_shape"]))

    def load_record(self, index):
        entry = self.records[index]
        assert entry["index"] == index
        rec_dir = self.root / entry["path"]
        return SimRecord(
            x=arrayio.read_array(rec_dir / "x.llia"),
            x_b=arrayio.read_array(rec_dir / "xb.llia"),
            y=arrayio.read_array(rec_dir / "y.llia"),
            n_a=arrayio.read_array(rec_dir / "na.llia"),
            b_hat=arrayio.read_array(rec_dir / "bhat.llia"),
            n_b=arrayio.read_array(rec_dir / "nb.llia"),
            meta={"split": entry["split"], "index": index, **{k: entry[k] for k in ("lamp_set",)}},
        )
