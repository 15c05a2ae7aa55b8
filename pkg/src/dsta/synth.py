"""Synthetic articulated-skeleton clips: kinematics, rendering and top-down cropping."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

JOINT_NAMES = (
    "head", "neck", "torso_root",
    "l_shoulder", "l_elbow", "l_wrist",
    "r_shoulder", "r_elbow", "r_wrist",
    "l_hip", "l_knee", "l_ankle",
    "r_hip", "r_knee", "r_ankle",
)

BOX_EXPANSION = 1.25
BASE_BLOB_SIGMA = 1.5  # pixels


class DegenerateBoxError(ValueError):
    pass


@dataclass(frozen=True)
class SkeletonSpec:
    """Kinematic tree plus the K-group partition used by spatial attention.

    Angles are relative to the parent bone's direction (for the root: to
    "up" in image coordinates); ``angle_limit`` bounds each joint's excursion
    from ``rest_angle``. Lengths are canonical units.
    """
    names: tuple
    parent: tuple
    bone_length: tuple
    rest_angle: tuple
    angle_limit: tuple
    groups: tuple

    def __post_init__(self):
        n = len(self.parent)
        for attr in ("names", "bone_length", "rest_angle", "angle_limit"):
            if len(getattr(self, attr)) != n:
                raise ValueError(f"SkeletonSpec.{attr} has {len(getattr(self, attr))} entries, expected {n}")
        roots = [j for j, p in enumerate(self.parent) if p < 0]
        if len(roots) != 1:
            raise ValueError(f"SkeletonSpec.parent must have exactly one root, found {len(roots)}")
        for j in range(n):
            seen, k = set(), j
            while k >= 0:
                if k in seen:
                    raise ValueError(f"SkeletonSpec.parent has a cycle through joint {j}")
                seen.add(k)
                k = self.parent[k]
        validate_groups(self.groups, n)

    @property
    def n(self) -> int:
        return len(self.parent)

    @property
    def K(self) -> int:
        return len(self.groups)

    @property
    def root(self) -> int:
        return self.parent.index(-1)

    def index(self, name: str) -> int:
        return self.names.index(name)

    def topo_order(self) -> list[int]:
        depth = [self.depth(j) for j in range(self.n)]
        return sorted(range(self.n), key=lambda j: (depth[j], j))

    def depth(self, j: int) -> int:
        d = 0
        while self.parent[j] >= 0:
            j = self.parent[j]
            d += 1
        return d

    def with_groups(self, groups) -> "SkeletonSpec":
        return SkeletonSpec(self.names, self.parent, self.bone_length, self.rest_angle,
                            self.angle_limit, tuple(tuple(g) for g in groups))


def validate_groups(groups, n: int) -> None:
    """Raise ``ValueError`` unless ``groups`` partitions ``range(n)`` into non-empty sets."""
    flat = [j for g in groups for j in g]
    if any(len(g) == 0 for g in groups):
        raise ValueError("groups: empty group")
    if sorted(flat) != list(range(n)):
        raise ValueError(f"groups: not a partition of {n} joints: {groups}")


def default_skeleton() -> SkeletonSpec:
    d = math.radians
    # joint:        head neck root  lsh    lel    lwr   rsh     rel    rwr   lhip    lkn   lank  rhip     rkn   rank
    parent = (1, 2, -1, 1, 3, 4, 1, 6, 7, 2, 9, 10, 2, 12, 13)
    length = (0.22, 0.50, 0.0, 0.18, 0.30, 0.27, 0.18, 0.30, 0.27, 0.12, 0.45, 0.42, 0.12, 0.45, 0.42)
    rest = (0.0, 0.0, 0.0, d(100), d(70), d(15), d(-100), d(-70), d(-15), d(120), d(60), 0.0, d(-120), d(-60), 0.0)
    limit = (0.4, 0.25, 0.3, 0.15, 1.0, 1.2, 0.15, 1.0, 1.2, 0.1, 0.6, 0.7, 0.1, 0.6, 0.7)
    groups = ((0, 1, 2), (3, 4, 5), (6, 7, 8), (9, 10, 11), (12, 13, 14))
    return SkeletonSpec(JOINT_NAMES, parent, length, rest, limit, groups)


@dataclass(frozen=True)
class MotionDynamics:
    sigma_angle: float = 0.08      # radians per frame
    sigma_translation: float = 0.03  # canonical units per frame
    unit_px: float = 100.0         # image pixels per canonical unit
    canvas: tuple = (640, 480)     # image (width, height)


@dataclass(frozen=True)
class Augmentation:
    """Whole-clip similarity transform drawn once per clip."""
    rotation_deg: float = 45.0
    scale_range: tuple = (0.65, 1.35)


@dataclass(frozen=True)
class CorruptionConfig:
    occlusion_prob: float = 0.25
    blur_sigma_range: tuple = (1.0, 2.0)
    observation_noise: float = 0.05
    key_frame_only: bool = False  # occlusion applied to the key frame only

    def __post_init__(self):
        if not 0.0 <= self.occlusion_prob <= 1.0:
            raise ValueError(f"occlusion_prob must be in [0, 1], got {self.occlusion_prob}")
        lo, hi = self.blur_sigma_range
        if not 0 < lo <= hi:
            raise ValueError(f"blur_sigma_range must be positive and ordered, got {self.blur_sigma_range}")
        if self.observation_noise < 0:
            raise ValueError("observation_noise must be >= 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["blur_sigma_range"] = list(self.blur_sigma_range)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CorruptionConfig":
        d = dict(d)
        d["blur_sigma_range"] = tuple(d["blur_sigma_range"])
        return cls(**d)


CLEAN = CorruptionConfig(occlusion_prob=0.0, blur_sigma_range=(1.0, 1.0), observation_noise=0.0)


@dataclass
class MotionClip:
    frames: np.ndarray        # (2T+1, n, 2) image coordinates
    key_index: int
    visibility: np.ndarray    # (2T+1, n) bool
    meta: dict = field(default_factory=dict)

    @property
    def T(self) -> int:
        return self.key_index


@dataclass
class ClipSample:
    observations: np.ndarray  # (2T+1, H, W) float32
    gt_key: np.ndarray        # (n, 2) float32 in [-0.5, 0.5] crop coordinates (x, y)
    gt_visibility: np.ndarray  # (n,) uint8
    seed: int = 0
    crop: tuple = (0.0, 0.0, 1.0, 1.0)  # (cx, cy, w, h) shared by every frame

    @property
    def T(self) -> int:
        return (self.observations.shape[0] - 1) // 2


def forward_kinematics(spec: SkeletonSpec, angles: np.ndarray, root_xy: np.ndarray, unit: float) -> np.ndarray:
    """Joint positions (n, 2) from relative angles (n,); angle 0 points up (negative y)."""
    absolute = np.zeros(spec.n)
    pos = np.zeros((spec.n, 2))
    for j in spec.topo_order():
        p = spec.parent[j]
        if p < 0:
            absolute[j] = angles[j]
            pos[j] = root_xy
            continue
        absolute[j] = absolute[p] + angles[j]
        step = unit * spec.bone_length[j]
        pos[j] = pos[p] + step * np.array([math.sin(absolute[j]), -math.cos(absolute[j])])
    return pos


def sample_motion(spec: SkeletonSpec, T: int, dynamics: MotionDynamics | None = None,
                  seed: int | np.random.Generator = 0, augment: Augmentation | None = None) -> MotionClip:
    """Forward-kinematic pose sequence of length 2T+1 driven by clamped angle random walks."""
    if T < 0:
        raise ValueError(f"T must be >= 0, got {T}")
    dyn = dynamics or MotionDynamics()
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    rest = np.asarray(spec.rest_angle)
    lim = np.asarray(spec.angle_limit)
    angles = rest + rng.uniform(-1.0, 1.0, spec.n) * lim
    root = np.array(dyn.canvas, dtype=float) / 2.0 / dyn.unit_px + rng.normal(0, 0.2, 2)
    frames = np.empty((2 * T + 1, spec.n, 2))
    for t in range(2 * T + 1):
        frames[t] = forward_kinematics(spec, angles, root * dyn.unit_px, dyn.unit_px)
        angles = np.clip(angles + rng.normal(0, 1, spec.n) * dyn.sigma_angle, rest - lim, rest + lim)
        root = root + rng.normal(0, 1, 2) * dyn.sigma_translation
    meta = {"T": T}
    if augment is not None:
        theta = math.radians(rng.uniform(-augment.rotation_deg, augment.rotation_deg))
        scale = rng.uniform(*augment.scale_range)
        c, s = math.cos(theta), math.sin(theta)
        centre = frames[T, spec.root].copy()
        rot = np.array([[c, -s], [s, c]]) * scale
        frames = (frames - centre) @ rot.T + centre
        meta.update(rotation=theta, scale=scale)
    w, h = dyn.canvas
    vis = (frames[..., 0] >= 0) & (frames[..., 0] < w) & (frames[..., 1] >= 0) & (frames[..., 1] < h)
    return MotionClip(frames=frames, key_index=T, visibility=vis, meta=meta)


def expand_box(pose: np.ndarray, factor: float = BOX_EXPANSION) -> tuple:
    """Tight box of ``pose`` scaled by ``factor`` about its centre, as (cx, cy, w, h)."""
    lo, hi = pose.min(axis=0), pose.max(axis=0)
    w, h = hi - lo
    if w <= 0 or h <= 0:
        raise DegenerateBoxError(f"degenerate key-frame box {w:.3g} x {h:.3g}")
    cx, cy = (lo + hi) / 2.0
    return float(cx), float(cy), float(w * factor), float(h * factor)


def to_crop_coords(points: np.ndarray, crop: tuple) -> np.ndarray:
    cx, cy, w, h = crop
    return (points - np.array([cx, cy])) / np.array([w, h])


def render_frame(pose: np.ndarray, visibility: np.ndarray, crop: tuple, corruption: CorruptionConfig,
                 H: int, W: int, seed: int | np.random.Generator = 0,
                 occlusion_prob: float | None = None) -> np.ndarray:
    """Render joints as Gaussian blobs inside ``crop`` onto an H x W canvas.

    ``pose`` is in image coordinates; ``crop`` is (cx, cy, w, h). The blob
    width is the base sigma times one blur draw per frame, and its peak is
    ``1 / blur`` so wider blobs are dimmer. Occluded joints are skipped.
    """
    cx, cy, w, h = crop
    if w <= 0 or h <= 0:
        raise DegenerateBoxError(f"crop has non-positive area: {w} x {h}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    p_occ = corruption.occlusion_prob if occlusion_prob is None else occlusion_prob
    blur = rng.uniform(*corruption.blur_sigma_range)
    occluded = rng.random(len(pose)) < p_occ
    noise = rng.normal(0.0, 1.0, (H, W))
    show = np.asarray(visibility, bool) & ~occluded
    u = to_crop_coords(pose, crop)
    px = (u[:, 0] + 0.5) * W
    py = (u[:, 1] + 0.5) * H
    sigma = BASE_BLOB_SIGMA * blur
    xs = np.arange(W) + 0.5
    ys = np.arange(H) + 0.5
    gx = np.exp(-((xs[None, :] - px[show, None]) ** 2) / (2 * sigma ** 2))
    gy = np.exp(-((ys[None, :] - py[show, None]) ** 2) / (2 * sigma ** 2))
    img = np.einsum("jh,jw->hw", gy, gx) / blur
    img = img + corruption.observation_noise * noise
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def crop_clip(clip: MotionClip, spec: SkeletonSpec, corruption: CorruptionConfig, H: int, W: int,
              seed: int | np.random.Generator = 0) -> ClipSample:
    """Crop every frame with the key-frame box expanded by 25% and render observations."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    key = clip.frames[clip.key_index]
    crop = expand_box(key)
    obs = np.empty((len(clip.frames), H, W), dtype=np.float32)
    for t, pose in enumerate(clip.frames):
        p = corruption.occlusion_prob
        if corruption.key_frame_only and t != clip.key_index:
            p = 0.0
        obs[t] = render_frame(pose, clip.visibility[t], crop, corruption, H, W, rng, occlusion_prob=p)
    gt = to_crop_coords(key, crop).astype(np.float32)
    inside = np.all(np.abs(gt) <= 0.5, axis=1)
    vis = (clip.visibility[clip.key_index] & inside).astype(np.uint8)
    return ClipSample(observations=obs, gt_key=gt, gt_visibility=vis, seed=int(clip.meta.get("seed", 0)), crop=crop)


SPLIT_CODES = {"train": 0, "val": 1, "val-occluded": 2}


def split_corruption(split: str, base: CorruptionConfig | None = None) -> CorruptionConfig:
    """Corruption for a split; ``val-occluded`` occludes only the key frame, with p >= 0.5."""
    base = base or CorruptionConfig()
    if split == "val-occluded":
        return CorruptionConfig(max(0.5, base.occlusion_prob), base.blur_sigma_range,
                                base.observation_noise, key_frame_only=True)
    if split not in SPLIT_CODES:
        raise ValueError(f"unknown split {split!r}; expected one of {sorted(SPLIT_CODES)}")
    return base


def generate_samples(count: int, split: str = "train", seed: int = 0, T: int = 1, H: int = 64, W: int = 48,
                     spec: SkeletonSpec | None = None, corruption: CorruptionConfig | None = None,
                     dynamics: MotionDynamics | None = None, augment: Augmentation | None = Augmentation()
                     ) -> list[ClipSample]:
    """Deterministic list of samples; each is a pure function of (split, seed, index)."""
    spec = spec or default_skeleton()
    corr = split_corruption(split, corruption)
    out = []
    for i in range(count):
        sample_seed = [seed, SPLIT_CODES[split], i]
        rng = np.random.default_rng(sample_seed)
        clip = sample_motion(spec, T, dynamics, rng, augment)
        s = crop_clip(clip, spec, corr, H, W, rng)
        s.seed = (seed * 10 + SPLIT_CODES[split]) * 1_000_000 + i
        out.append(s)
    return out
