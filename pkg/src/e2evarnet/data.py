"""Synthetic multi-coil acquisitions and fastMRI-style volume files.

A volume file is an HDF5 container holding

    kspace               complex64  (slices, coils, H, W)   fully sampled
    reconstruction_rss   float32    (slices, H, W)          RSS target
    sensitivity_maps     complex64  (slices, coils, H, W)   optional, synthetic only

plus attributes (``id``, ``acquisition``, ``max``, ...). Datasets live in
``<root>/{train,val,test}/<id>.h5`` with a ``manifest.json`` at the root.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Sequence

import h5py
import numpy as np

from .errors import IngestError, InvalidInputError
from .kspace_core import expand, fft2c, ifft2c, mask_columns, rss
from .masking import SamplingMask, full_mask
from .sme import dss_normalize

__all__ = [
    "SyntheticCase",
    "VolumeRecord",
    "synth_phantom",
    "synth_coil_maps",
    "simulate_acquisition",
    "synth_volume",
    "save_volume",
    "load_volume",
    "make_synthetic_dataset",
    "read_manifest",
    "list_volumes",
    "derive_seed",
    "SPLITS",
]

SPLITS = ("train", "val", "test")
MANIFEST = "manifest.json"


def derive_seed(*parts: Any) -> int:
    """Stable 63-bit seed from arbitrary printable parts."""
    digest = hashlib.sha256("/".join(map(str, parts)).encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


def _grid(height: int, width: int):
    y = (np.arange(height) - height // 2) / (height / 2)
    x = (np.arange(width) - width // 2) / (width / 2)
    return np.meshgrid(y, x, indexing="ij")


def synth_phantom(height: int, width: int, seed: int = 0) -> np.ndarray:
    """Random piecewise-smooth complex phantom with peak magnitude 1.

    The magnitude is a head-like outer ellipse with randomly placed inner
    ellipses and a gentle intensity bias; the phase is a smooth low-order
    polynomial.
    """
    if height < 1 or width < 1:
        raise InvalidInputError(f"phantom size must be positive, got {height}x{width}")
    rng = np.random.default_rng(seed)
    yy, xx = _grid(height, width)

    def ellipse(cy, cx, ay, ax, theta):
        c, s = np.cos(theta), np.sin(theta)
        u = (xx - cx) * c + (yy - cy) * s
        v = -(xx - cx) * s + (yy - cy) * c
        return (u / ax) ** 2 + (v / ay) ** 2 <= 1.0

    outer_ay, outer_ax = rng.uniform(0.75, 0.9), rng.uniform(0.6, 0.8)
    theta0 = rng.uniform(-0.3, 0.3)
    mag = 0.9 * ellipse(0, 0, outer_ay, outer_ax, theta0).astype(float)
    mag -= 0.6 * ellipse(0, 0, 0.92 * outer_ay, 0.9 * outer_ax, theta0)
    for _ in range(rng.integers(5, 10)):
        r = rng.uniform(0, 0.55)
        ang = rng.uniform(0, 2 * np.pi)
        cy, cx = r * np.sin(ang) * outer_ay, r * np.cos(ang) * outer_ax
        ay, ax = rng.uniform(0.05, 0.3), rng.uniform(0.05, 0.3)
        mag += rng.uniform(-0.25, 0.45) * ellipse(cy, cx, ay, ax, rng.uniform(0, np.pi))
    mag = np.clip(mag, 0.0, None)
    bias = 1 + 0.15 * (rng.uniform(-1, 1) * yy + rng.uniform(-1, 1) * xx)
    mag *= bias
    if mag.max() > 0:
        mag /= mag.max()
    coeffs = rng.uniform(-1, 1, size=5) * np.array([np.pi, 0.6, 0.6, 0.4, 0.4])
    phase = coeffs[0] + coeffs[1] * yy + coeffs[2] * xx + coeffs[3] * yy * xx + coeffs[4] * (yy**2 - xx**2)
    return mag * np.exp(1j * phase)


def synth_coil_maps(num_coils: int, height: int, width: int, seed: int = 0) -> np.ndarray:
    """Smooth complex coil sensitivities ``(N, H, W)`` normalized to unit RSS.

    Coils sit on a ring around the field of view; each has a Gaussian
    magnitude profile centered on its position and a smooth phase ramp.
    """
    if num_coils < 1:
        raise InvalidInputError(f"num_coils must be >= 1, got {num_coils}")
    rng = np.random.default_rng(seed)
    yy, xx = _grid(height, width)
    rot = rng.uniform(0, 2 * np.pi)
    maps = np.empty((num_coils, height, width), dtype=np.complex128)
    for i in range(num_coils):
        ang = rot + 2 * np.pi * i / num_coils + rng.uniform(-0.2, 0.2)
        radius = rng.uniform(1.0, 1.3)
        cy, cx = radius * np.sin(ang), radius * np.cos(ang)
        width_ = rng.uniform(0.7, 0.9)
        mag = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * width_**2))
        phase = rng.uniform(-np.pi, np.pi) + rng.uniform(-1.5, 1.5) * (yy * np.sin(ang) + xx * np.cos(ang))
        maps[i] = mag * np.exp(1j * phase)
    return dss_normalize(maps)


@dataclass
class SyntheticCase:
    ground_truth: np.ndarray
    true_maps: np.ndarray
    kspace: np.ndarray
    mask: SamplingMask
    noise_std: float
    seed: int
    full_kspace: Optional[np.ndarray] = None

    @property
    def target(self) -> np.ndarray:
        """RSS of the fully sampled coil images."""
        return rss(ifft2c(self.full_kspace))


def simulate_acquisition(
    image: np.ndarray,
    maps: np.ndarray,
    mask: Optional[SamplingMask] = None,
    noise_std: float = 0.0,
    seed: int = 0,
) -> SyntheticCase:
    """Multi-coil k-space ``M (F(S_i x) + noise)`` with complex Gaussian noise.

    ``noise_std`` is the standard deviation of the real and of the
    imaginary part of each noise sample.
    """
    if noise_std < 0:
        raise InvalidInputError(f"noise_std must be >= 0, got {noise_std}")
    if mask is None:
        mask = full_mask(image.shape[-1])
    full = fft2c(expand(image, maps))
    if noise_std > 0:
        rng = np.random.default_rng(seed)
        full = full + noise_std * (rng.standard_normal(full.shape) + 1j * rng.standard_normal(full.shape))
    return SyntheticCase(
        ground_truth=image,
        true_maps=maps,
        kspace=mask_columns(full, mask),
        mask=mask,
        noise_std=float(noise_std),
        seed=int(seed),
        full_kspace=full,
    )


@dataclass
class VolumeRecord:
    """One volume: fully sampled k-space, its RSS target and attributes."""

    id: str
    kspace: np.ndarray
    target_rss: np.ndarray
    attrs: Dict[str, Any] = field(default_factory=dict)
    maps: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kspace.ndim != 4:
            raise IngestError(f"{self.id}: field 'kspace' must be (slices, coils, H, W), got {self.kspace.shape}")
        if self.target_rss.ndim != 3:
            raise IngestError(f"{self.id}: field 'reconstruction_rss' must be (slices, H, W), got {self.target_rss.shape}")
        if self.kspace.shape[0] != self.target_rss.shape[0]:
            raise IngestError(
                f"{self.id}: slice count mismatch between 'kspace' ({self.kspace.shape[0]}) "
                f"and 'reconstruction_rss' ({self.target_rss.shape[0]})"
            )
        if self.maps is not None and self.maps.shape != self.kspace.shape:
            raise IngestError(f"{self.id}: field 'sensitivity_maps' shape {self.maps.shape} != kspace {self.kspace.shape}")

    @property
    def num_slices(self) -> int:
        return self.kspace.shape[0]

    @property
    def num_coils(self) -> int:
        return self.kspace.shape[1]

    @property
    def max_value(self) -> float:
        return float(self.attrs.get("max", float(self.target_rss.max())))

    def content_hash(self) -> str:
        h = hashlib.sha256()
        for arr in (self.kspace, self.target_rss):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()


def synth_volume(
    vol_id: str,
    num_slices: int = 1,
    num_coils: int = 4,
    height: int = 64,
    width: int = 64,
    noise_std: float = 0.0,
    seed: int = 0,
) -> VolumeRecord:
    """A synthetic volume: one coil geometry, an independent phantom per slice."""
    maps = synth_coil_maps(num_coils, height, width, derive_seed(seed, "maps"))
    kspace = []
    for s in range(num_slices):
        image = synth_phantom(height, width, derive_seed(seed, "phantom", s))
        case = simulate_acquisition(image, maps, None, noise_std, derive_seed(seed, "noise", s))
        kspace.append(case.full_kspace)
    kspace = np.stack(kspace).astype(np.complex64)
    # target from the stored (single precision) k-space so file and target agree
    targets = rss(ifft2c(kspace.astype(np.complex128))).astype(np.float32)
    attrs = {
        "id": vol_id,
        "acquisition": "synthetic",
        "max": float(targets.max()),
        "noise_std": float(noise_std),
        "seed": int(seed),
    }
    return VolumeRecord(vol_id, kspace, targets, attrs, np.repeat(maps[None], num_slices, 0).astype(np.complex64))


def save_volume(rec: VolumeRecord, path) -> Path:
    """Write ``rec`` atomically (temporary file, then rename)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    os.close(fd)
    try:
        with h5py.File(tmp, "w") as f:
            f.create_dataset("kspace", data=np.asarray(rec.kspace, dtype=np.complex64))
            f.create_dataset("reconstruction_rss", data=np.asarray(rec.target_rss, dtype=np.float32))
            if rec.maps is not None:
                f.create_dataset("sensitivity_maps", data=np.asarray(rec.maps, dtype=np.complex64))
            for key, value in rec.attrs.items():
                f.attrs[key] = value
            f.attrs["id"] = rec.id
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def load_volume(path) -> VolumeRecord:
    """Read a volume file, validating fields, shapes and dtypes."""
    path = Path(path)
    if not path.exists():
        raise IngestError(f"{path}: no such volume file")
    try:
        f = h5py.File(path, "r")
    except OSError as exc:
        raise IngestError(f"{path}: corrupt or unreadable volume file ({exc})") from exc
    with f:
        for name in ("kspace", "reconstruction_rss"):
            if name not in f:
                raise IngestError(f"{path}: missing required field {name!r}")
        try:
            kspace = f["kspace"][()]
            target = f["reconstruction_rss"][()]
            maps = f["sensitivity_maps"][()] if "sensitivity_maps" in f else None
            attrs = {k: (v.item() if hasattr(v, "item") else v) for k, v in f.attrs.items()}
        except (OSError, KeyError) as exc:
            raise IngestError(f"{path}: corrupt volume data ({exc})") from exc
    if not np.iscomplexobj(kspace):
        raise IngestError(f"{path}: field 'kspace' must be complex, got {kspace.dtype}")
    if not np.issubdtype(target.dtype, np.floating):
        raise IngestError(f"{path}: field 'reconstruction_rss' must be real, got {target.dtype}")
    vol_id = str(attrs.get("id", path.stem))
    rec = VolumeRecord(vol_id, kspace, target, attrs, maps)
    if target.shape[-2:] != kspace.shape[-2:]:
        raise IngestError(
            f"{path}: 'reconstruction_rss' spatial shape {target.shape[-2:]} != 'kspace' {kspace.shape[-2:]}"
        )
    return rec


def make_synthetic_dataset(
    root,
    n_train: int = 200,
    n_val: int = 20,
    n_test: int = 0,
    num_slices: int = 1,
    num_coils: int = 4,
    height: int = 64,
    width: int = 64,
    noise_std: float = 0.0,
    seed: int = 0,
) -> Dict[str, Any]:
    """Generate a synthetic dataset directory and return its manifest."""
    root = Path(root)
    manifest: Dict[str, Any] = {
        "format": 1,
        "seed": int(seed),
        "geometry": {"slices": num_slices, "coils": num_coils, "height": height, "width": width},
        "noise_std": float(noise_std),
        "splits": {},
    }
    for split, count in zip(SPLITS, (n_train, n_val, n_test)):
        entries = []
        for i in range(count):
            vol_id = f"{split}_{i:05d}"
            rec = synth_volume(vol_id, num_slices, num_coils, height, width, noise_std, derive_seed(seed, split, i))
            save_volume(rec, root / split / f"{vol_id}.h5")
            entries.append({"id": vol_id, "slices": rec.num_slices, "coils": rec.num_coils, "sha256": rec.content_hash()})
        manifest["splits"][split] = entries
    tmp = root / (MANIFEST + ".tmp")
    tmp.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    os.replace(tmp, root / MANIFEST)
    return manifest


def read_manifest(root) -> Dict[str, Any]:
    path = Path(root) / MANIFEST
    if not path.exists():
        raise IngestError(f"{root}: dataset has no {MANIFEST}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise IngestError(f"{path}: corrupt manifest ({exc})") from exc


def list_volumes(root, split: str) -> List[Path]:
    """Volume files of ``split``, in manifest order when a manifest exists."""
    root = Path(root)
    if (root / MANIFEST).exists():
        entries = read_manifest(root)["splits"].get(split, [])
        paths = [root / split / f"{e['id']}.h5" for e in entries]
    else:
        paths = sorted((root / split).glob("*.h5"))
    missing = [p for p in paths if not p.exists()]
    if missing:
        raise IngestError(f"{root}: {len(missing)} volume(s) listed in manifest are missing, e.g. {missing[0]}")
    return paths


def iter_volumes(paths: Sequence[Path]) -> Iterator[VolumeRecord]:
    for p in paths:
        yield load_volume(p)
