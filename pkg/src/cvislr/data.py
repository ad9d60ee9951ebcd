"""Deterministic synthetic multi-view RGB-D gesture dataset.

Each class ("gloss") is a characteristic pair of 3-D Lissajous hand
trajectories; each signer is a seeded perturbation of that class motif
(phases, amplitudes, blob width).  A clip renders the two moving hands as
energy-normalized Gaussian blobs from one of three camera azimuths: front,
left or right.  All views of a (gloss, signer) pair observe the *same* 3-D
trajectory, so class identity survives the view change by construction —
exactly the difficulty the protocol wants: train on the front view, validate
on the left, test on left and right, with disjoint signers per split.

RGB channels carry two fixed hand colors (shared by every class, so color
never leaks the label); the depth clip carries each blob scaled by its
camera proximity, replicated to three channels.  Clips are stored as raw
TNSR tensors of extents (T, H, W, 3).
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import ContractError, FormatError
from .tensor import Tensor, read_tensor, write_tensor

VIEWS = ("front", "left", "right")
SPLITS = ("train", "val", "test")
#: Camera azimuth per view, radians about the vertical axis.
VIEW_AZIMUTH = {"front": 0.0, "left": math.radians(45.0),
                "right": math.radians(-45.0)}
#: Views rendered per split (the cross-view protocol).
SPLIT_VIEWS = {"train": ("front",), "val": ("left",), "test": ("left", "right")}

MODALITIES = ("rgb", "depth")

# Fixed hand colors (class-independent) and blob mass; mass is normalized
# after truncation at the image border, so per-frame RGB energy is identical
# across views regardless of where the blobs land.
_HAND_COLORS = np.array([[1.0, 0.35, 0.1], [0.1, 0.45, 1.0]])
_BLOB_MASS = 4.0
_AMPLITUDE = 0.24  # world half-range per axis; keeps blobs inside every view


@dataclass(frozen=True, eq=False)
class MotionParams:
    """Jittered per-signer trajectory parameters (two hands, three axes)."""

    freq: np.ndarray     # (2, 3) integer cycles per clip
    phase: np.ndarray    # (2, 3) radians
    amp: np.ndarray      # (2, 3) world units
    center: np.ndarray   # (2, 3) world units
    sigma: float         # blob std dev in pixels at W = 32
    mirror: np.ndarray   # (2,) x-axis signs distinguishing the hands


@dataclass(frozen=True, eq=False)
class SceneSpec:
    """Everything needed to render one clip deterministically."""

    gloss_id: int
    signer_seed: int
    view: str
    geometry: tuple[int, int, int]
    motion: MotionParams

    def __post_init__(self):
        if self.view not in VIEWS:
            raise ContractError(f"unknown view {self.view!r}; expected one of {VIEWS}")
        t, h, w = self.geometry
        if t < 1 or h < 8 or w < 8:
            raise ContractError(f"geometry {self.geometry} too small to render")


def _class_motif(gloss_id: int) -> tuple[np.ndarray, np.ndarray]:
    """Class-characteristic integer frequencies and base phases."""
    g = int(gloss_id)
    fx = 1 + g % 4
    fy = 1 + (g // 4) % 4
    fz = 1 + (g // 16) % 3
    base = 2.0 * math.pi * ((g * 0.6180339887498949) % 1.0)
    freq = np.array([[fx, fy, fz], [fy, fx, fz]], dtype=np.int64)
    phase = np.array([
        [base, base + 0.5 * math.pi, base + 0.25 * math.pi],
        [base + math.pi, base + 1.5 * math.pi, base + 0.75 * math.pi],
    ])
    return freq, phase


def scene_spec(gloss_id: int, signer_seed: int, view: str,
               geometry: tuple[int, int, int], master_seed: int = 0) -> SceneSpec:
    """Build a render spec; motion depends on everything except the view."""
    if gloss_id < 0 or signer_seed < 0:
        raise ContractError("gloss_id and signer_seed must be nonnegative")
    freq, phase = _class_motif(gloss_id)
    ss = np.random.SeedSequence(int(master_seed),
                                spawn_key=(int(gloss_id), int(signer_seed)))
    rng = np.random.Generator(np.random.Philox(ss))
    motion = MotionParams(
        freq=freq,
        phase=phase + rng.uniform(-0.25, 0.25, size=(2, 3)),
        amp=_AMPLITUDE * rng.uniform(0.85, 1.0, size=(2, 3)),
        center=rng.uniform(-0.04, 0.04, size=(2, 3)),
        sigma=float(rng.uniform(1.3, 1.7)),
        mirror=np.array([1.0, -1.0]),
    )
    return SceneSpec(gloss_id=int(gloss_id), signer_seed=int(signer_seed),
                     view=view, geometry=tuple(int(g) for g in geometry),
                     motion=motion)


def trajectory(spec: SceneSpec) -> np.ndarray:
    """Ground-truth world positions, shape (T, 2 hands, 3 axes)."""
    t_frames = spec.geometry[0]
    m = spec.motion
    tau = np.arange(t_frames)[:, None, None] / t_frames  # (T, 1, 1)
    pos = m.amp * np.sin(2.0 * math.pi * m.freq * tau + m.phase) + m.center
    pos[:, :, 0] *= m.mirror[None, :]
    return pos


def project(points: np.ndarray, view: str) -> tuple[np.ndarray, np.ndarray]:
    """Rotate world points to a view and project orthographically.

    Returns (uv, proximity): uv in [0, 1]^2 image coordinates (u right,
    v down) and proximity in (0, 1), larger for points nearer the camera.
    """
    if view not in VIEW_AZIMUTH:
        raise ContractError(f"unknown view {view!r}; expected one of {VIEWS}")
    theta = VIEW_AZIMUTH[view]
    x, y, z = points[..., 0], points[..., 1], points[..., 2]
    xr = x * math.cos(theta) + z * math.sin(theta)
    zr = -x * math.sin(theta) + z * math.cos(theta)
    u = 0.5 + xr
    v = 0.5 - y
    z_max = _AMPLITUDE * math.sqrt(2.0) + 0.05
    prox = 0.55 + 0.4 * (zr / z_max)
    return np.stack([u, v], axis=-1), prox


def render_clip(spec: SceneSpec) -> tuple[Tensor, Tensor]:
    """Render (rgb, depth) clips of extents (T, H, W, 3), values in [0, 1]."""
    t_frames, height, width = spec.geometry
    uv, prox = project(trajectory(spec), spec.view)  # (T, 2, 2), (T, 2)
    px = uv[..., 0] * (width - 1)   # (T, 2)
    py = uv[..., 1] * (height - 1)
    sigma = spec.motion.sigma * (width / 32.0)

    yy = np.arange(height)[:, None]
    xx = np.arange(width)[None, :]
    d2 = ((yy[None, None] - py[..., None, None]) ** 2
          + (xx[None, None] - px[..., None, None]) ** 2)  # (T, 2, H, W)
    kernel = np.exp(-d2 / (2.0 * sigma * sigma))
    mass = kernel.sum(axis=(2, 3), keepdims=True)
    splat = kernel * (_BLOB_MASS / mass)  # each blob integrates to _BLOB_MASS

    rgb = np.einsum("thyx,hc->tyxc", splat, _HAND_COLORS)
    depth_map = np.einsum("thyx,th->tyx", splat, prox)
    depth = np.repeat(depth_map[..., None], 3, axis=-1)
    return Tensor(np.clip(rgb, 0.0, 1.0)), Tensor(np.clip(depth, 0.0, 1.0))


# ---------------------------------------------------------------------------
# manifest


@dataclass(frozen=True)
class ClipRecord:
    split: str
    sample_id: str
    gloss_id: int
    view: str
    rgb_path: str    # relative to the manifest's directory
    depth_path: str


@dataclass(frozen=True)
class DatasetManifest:
    records: tuple[ClipRecord, ...]
    num_classes: int
    geometry: tuple[int, int, int]
    root: str  # directory holding the clip files

    def split(self, name: str) -> list[ClipRecord]:
        if name not in SPLITS:
            raise ContractError(f"unknown split {name!r}; expected one of {SPLITS}")
        return [r for r in self.records if r.split == name]


MANIFEST_NAME = "manifest.tsv"


def save_manifest(manifest: DatasetManifest, path: str) -> None:
    lines = [
        "# cvislr dataset manifest",
        f"# num_classes={manifest.num_classes}",
        "# geometry=" + ",".join(map(str, manifest.geometry)),
    ]
    for r in manifest.records:
        lines.append("\t".join([r.split, r.sample_id, str(r.gloss_id), r.view,
                                r.rgb_path, r.depth_path]))
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")


def load_manifest(path: str) -> DatasetManifest:
    """Parse a manifest file; clip paths stay relative to its directory."""
    root = os.path.dirname(os.path.abspath(path))
    num_classes = None
    geometry = None
    records: list[ClipRecord] = []
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if body.startswith("num_classes="):
                    num_classes = int(body.partition("=")[2])
                elif body.startswith("geometry="):
                    geometry = tuple(int(v) for v in body.partition("=")[2].split(","))
                continue
            parts = line.split("\t")
            if len(parts) != 6:
                raise FormatError(f"{path}:{lineno}: expected 6 tab-separated "
                                  f"fields, got {len(parts)}")
            split, sample_id, gloss, view, rgb_path, depth_path = parts
            if split not in SPLITS:
                raise FormatError(f"{path}:{lineno}: unknown split {split!r}")
            if view not in VIEWS:
                raise FormatError(f"{path}:{lineno}: unknown view {view!r}")
            if sample_id in seen:
                raise FormatError(f"{path}:{lineno}: duplicate sample id {sample_id!r}")
            seen.add(sample_id)
            try:
                gloss_id = int(gloss)
            except ValueError as e:
                raise FormatError(f"{path}:{lineno}: bad gloss id {gloss!r}") from e
            records.append(ClipRecord(split, sample_id, gloss_id, view,
                                      rgb_path, depth_path))
    if num_classes is None or geometry is None or len(geometry) != 3:
        raise FormatError(f"{path}: missing num_classes/geometry header lines")
    if any(r.gloss_id < 0 or r.gloss_id >= num_classes for r in records):
        raise FormatError(f"{path}: gloss id outside [0, {num_classes})")
    return DatasetManifest(records=tuple(records), num_classes=num_classes,
                           geometry=geometry, root=root)


# ---------------------------------------------------------------------------
# generation


def generate_dataset(num_classes: int, signers_per_class: int,
                     geometry: tuple[int, int, int], out_dir: str,
                     seed: int = 0) -> DatasetManifest:
    """Render and write the full cross-view dataset under ``out_dir``.

    Splits follow the protocol: train = front view, val = left view,
    test = left + right views.  Signer seeds are disjoint across splits
    (train uses signers [0, S), val [S, 2S), test [2S, 3S)).
    """
    if num_classes < 2:
        raise ContractError("need at least 2 classes")
    if signers_per_class < 1:
        raise ContractError("need at least 1 signer per class")
    geometry = tuple(int(g) for g in geometry)
    records: list[ClipRecord] = []
    os.makedirs(out_dir, exist_ok=True)
    for split_index, split in enumerate(SPLITS):
        split_dir = os.path.join(out_dir, split)
        os.makedirs(split_dir, exist_ok=True)
        for gloss in range(num_classes):
            for signer_index in range(signers_per_class):
                signer = split_index * signers_per_class + signer_index
                for view in SPLIT_VIEWS[split]:
                    spec = scene_spec(gloss, signer, view, geometry, seed)
                    rgb, depth = render_clip(spec)
                    sample_id = f"g{gloss:03d}_s{signer:03d}_{view}"
                    rgb_rel = f"{split}/{sample_id}_rgb.tnsr"
                    depth_rel = f"{split}/{sample_id}_depth.tnsr"
                    try:
                        write_tensor(os.path.join(out_dir, rgb_rel), rgb)
                        write_tensor(os.path.join(out_dir, depth_rel), depth)
                    except OSError as e:
                        raise OSError(f"writing clip under {out_dir!r}: {e}") from e
                    records.append(ClipRecord(split, sample_id, gloss, view,
                                              rgb_rel, depth_rel))
    manifest = DatasetManifest(records=tuple(records), num_classes=num_classes,
                               geometry=geometry, root=os.path.abspath(out_dir))
    save_manifest(manifest, os.path.join(out_dir, MANIFEST_NAME))
    return manifest


def load_clip(path: str) -> Tensor:
    """Read one clip; validates the (T, H, W, 3) layout."""
    tensor = read_tensor(path)
    if tensor.ndim != 4 or tensor.shape[-1] != 3:
        raise FormatError(f"{path}: expected clip extents (T, H, W, 3), "
                          f"got {tensor.shape}")
    return tensor


def load_split(manifest: DatasetManifest, split: str, modality: str,
               ) -> tuple[np.ndarray, np.ndarray, list[str]]:
    """Stack one split's clips: (clips (N,T,H,W,3), labels (N,), sample ids)."""
    if modality not in MODALITIES:
        raise ContractError(f"unknown modality {modality!r}; expected one of {MODALITIES}")
    recs = manifest.split(split)
    if not recs:
        raise ContractError(f"split {split!r} is empty")
    clips = np.empty((len(recs), *manifest.geometry, 3))
    labels = np.empty(len(recs), dtype=np.int64)
    ids: list[str] = []
    for i, r in enumerate(recs):
        rel = r.rgb_path if modality == "rgb" else r.depth_path
        clip = load_clip(os.path.join(manifest.root, rel))
        if clip.shape != (*manifest.geometry, 3):
            raise FormatError(f"{rel}: clip extents {clip.shape} do not match "
                              f"manifest geometry {manifest.geometry}")
        clips[i] = clip.data
        labels[i] = r.gloss_id
        ids.append(r.sample_id)
    return clips, labels, ids
