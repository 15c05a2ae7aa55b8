import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dsta.synth import (
    CLEAN,
    CorruptionConfig,
    DegenerateBoxError,
    MotionClip,
    MotionDynamics,
    SkeletonSpec,
    crop_clip,
    default_skeleton,
    expand_box,
    generate_samples,
    render_frame,
    sample_motion,
    split_corruption,
)

SPEC = default_skeleton()


def test_default_groups_partition():
    flat = sorted(j for g in SPEC.groups for j in g)
    assert flat == list(range(15))
    assert SPEC.n == 15 and SPEC.K == 5
    assert [len(g) for g in SPEC.groups] == [3, 3, 3, 3, 3]


def test_default_kinematic_tree():
    wrist, elbow = SPEC.index("l_wrist"), SPEC.index("l_elbow")
    assert SPEC.parent[wrist] == elbow
    assert SPEC.depth(wrist) == 4
    assert SPEC.names[SPEC.root] == "torso_root"


def test_limb_groups_are_semantic():
    names = [[SPEC.names[j] for j in g] for g in SPEC.groups]
    assert names[0] == ["head", "neck", "torso_root"]
    assert names[1] == ["l_shoulder", "l_elbow", "l_wrist"]
    assert names[4] == ["r_hip", "r_knee", "r_ankle"]


@pytest.mark.parametrize("groups", [((0, 1), (1, 2)), ((0, 1),), ((0, 1, 2), ())])
def test_invalid_partitions_rejected(groups):
    with pytest.raises(ValueError):
        SkeletonSpec(("a", "b", "c"), (-1, 0, 1), (0, 1, 1), (0, 0, 0), (0, 0, 0), groups)


def test_cyclic_or_multi_root_tree_rejected():
    with pytest.raises(ValueError):
        SkeletonSpec(("a", "b", "c"), (-1, 2, 1), (0, 1, 1), (0, 0, 0), (0, 0, 0), ((0, 1, 2),))
    with pytest.raises(ValueError):
        SkeletonSpec(("a", "b", "c"), (-1, -1, 1), (0, 1, 1), (0, 0, 0), (0, 0, 0), ((0, 1, 2),))


def test_zero_motion_frames_identical():
    clip = sample_motion(SPEC, 3, MotionDynamics(sigma_angle=0.0, sigma_translation=0.0), seed=1)
    assert clip.frames.shape == (7, 15, 2) and clip.key_index == 3
    for f in clip.frames[1:]:
        np.testing.assert_array_equal(f, clip.frames[0])


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(0, 3))
def test_bone_lengths_preserved(seed, T):
    dyn = MotionDynamics()
    clip = sample_motion(SPEC, T, dyn, seed=seed)
    for frame in clip.frames:
        for j, p in enumerate(SPEC.parent):
            if p < 0:
                continue
            length = np.linalg.norm(frame[j] - frame[p])
            assert abs(length - SPEC.bone_length[j] * dyn.unit_px) < 1e-6


def test_motion_deterministic():
    a = sample_motion(SPEC, 2, seed=42)
    b = sample_motion(SPEC, 2, seed=42)
    assert a.frames.tobytes() == b.frames.tobytes()


def test_negative_span_rejected():
    with pytest.raises(ValueError):
        sample_motion(SPEC, -1)


def test_render_all_occluded_is_black():
    pose = np.array([[50.0, 50.0], [60.0, 70.0]])
    corr = CorruptionConfig(occlusion_prob=1.0, blur_sigma_range=(1, 1), observation_noise=0.0)
    img = render_frame(pose, np.ones(2, bool), (55.0, 60.0, 40.0, 40.0), corr, 32, 24, seed=0)
    assert img.shape == (32, 24) and not img.any()


def test_render_single_centered_joint_peak():
    H, W = 32, 24
    crop = (100.0, 100.0, 48.0, 64.0)
    # pixel (row 10, col 5) centre in crop coordinates
    u = ((5 + 0.5) / W - 0.5, (10 + 0.5) / H - 0.5)
    pose = np.array([[100.0 + u[0] * 48.0, 100.0 + u[1] * 64.0]])
    img = render_frame(pose, np.ones(1, bool), crop, CLEAN, H, W, seed=0)
    assert np.unravel_index(img.argmax(), img.shape) == (10, 5)


def test_doubling_blur_halves_peak():
    pose = np.array([[0.0, 0.0]])
    crop = (0.0, 0.0, 64.0, 64.0)
    narrow = CorruptionConfig(0.0, (1.0, 1.0), 0.0)
    wide = CorruptionConfig(0.0, (2.0, 2.0), 0.0)
    a = render_frame(pose, np.ones(1, bool), crop, narrow, 64, 64).max()
    b = render_frame(pose, np.ones(1, bool), crop, wide, 64, 64).max()
    assert abs(b / a - 0.5) < 0.05


def test_render_values_clamped():
    pose = np.zeros((5, 2))
    corr = CorruptionConfig(0.0, (1.0, 1.0), 0.5)
    img = render_frame(pose, np.ones(5, bool), (0.0, 0.0, 20.0, 20.0), corr, 16, 16, seed=3)
    assert img.min() >= 0.0 and img.max() <= 1.0


def test_box_expansion_25_percent():
    pose = np.array([[0.0, 0.0], [100.0, 200.0], [30.0, 10.0]])
    cx, cy, w, h = expand_box(pose)
    assert (cx, cy) == (50.0, 100.0)
    assert (w, h) == (125.0, 250.0)


def test_degenerate_box_rejected():
    with pytest.raises(DegenerateBoxError):
        expand_box(np.array([[1.0, 1.0], [1.0, 5.0]]))


def _clip_with_key(key_pose, T=1):
    frames = np.repeat(key_pose[None], 2 * T + 1, axis=0)
    return MotionClip(frames, T, np.ones(frames.shape[:2], bool))


def test_crop_normalisation_convention():
    # 3 joints: corners of a 80x160 box and its centre
    key = np.array([[10.0, 20.0], [90.0, 180.0], [50.0, 100.0]])
    spec = SkeletonSpec(("a", "b", "c"), (-1, 0, 0), (0, 1, 1), (0, 0, 0), (0, 0, 0), ((0, 1, 2),))
    s = crop_clip(_clip_with_key(key), spec, CLEAN, 32, 16, seed=0)
    np.testing.assert_allclose(s.gt_key[2], [0.0, 0.0], atol=1e-7)
    # tight corners sit at +-0.4 of the 25%-expanded crop
    np.testing.assert_allclose(s.gt_key[0], [-0.4, -0.4], atol=1e-6)
    assert s.crop == (50.0, 100.0, 100.0, 200.0)
    # crop top-left corner maps to (-0.5, -0.5)
    from dsta.synth import to_crop_coords
    np.testing.assert_allclose(to_crop_coords(np.array([[0.0, 0.0]]), s.crop), [[-0.5, -0.5]])


def test_crop_window_shared_by_all_frames():
    clip = sample_motion(SPEC, 2, seed=5)
    s = crop_clip(clip, SPEC, CLEAN, 64, 48, seed=0)
    assert s.crop == expand_box(clip.frames[2])
    # re-rendering an auxiliary frame with the key-frame window reproduces the observation
    again = render_frame(clip.frames[0], clip.visibility[0], s.crop, CLEAN, 64, 48, seed=0)
    np.testing.assert_array_equal(again, s.observations[0])


def test_visible_gt_inside_unit_square():
    for s in generate_samples(20, "train", seed=3, T=1):
        vis = s.gt_visibility.astype(bool)
        assert np.all(np.abs(s.gt_key[vis]) <= 0.5)
        assert s.observations.shape == (3, 64, 48)


def test_generation_pure_function_of_seed():
    a = generate_samples(4, "val", seed=9, T=1)
    b = generate_samples(4, "val", seed=9, T=1)
    for x, y in zip(a, b):
        assert x.observations.tobytes() == y.observations.tobytes()
        assert x.gt_key.tobytes() == y.gt_key.tobytes()


def test_splits_use_disjoint_seeds():
    tr = {s.seed for s in generate_samples(5, "train", seed=0, T=0)}
    va = {s.seed for s in generate_samples(5, "val", seed=0, T=0)}
    assert not tr & va


def test_occluded_split_corruption():
    c = split_corruption("val-occluded", CorruptionConfig(occlusion_prob=0.1))
    assert c.occlusion_prob >= 0.5 and c.key_frame_only
    with pytest.raises(ValueError):
        split_corruption("test")


def test_occluded_split_keeps_auxiliary_frames_unoccluded():
    # with no noise/blur variance, aux frames of an occluded split match a clean render
    base = CorruptionConfig(occlusion_prob=0.9, blur_sigma_range=(1, 1), observation_noise=0.0)
    (s,) = generate_samples(1, "val-occluded", seed=2, T=1, corruption=base)
    rng = np.random.default_rng([2, 2, 0])
    clip = sample_motion(SPEC, 1, None, rng, __import__("dsta.synth", fromlist=["Augmentation"]).Augmentation())
    clean = crop_clip(clip, SPEC, base.__class__(0.0, (1, 1), 0.0), 64, 48, rng)
    np.testing.assert_array_equal(s.observations[0], clean.observations[0])
    assert s.observations[1].sum() < clean.observations[1].sum()


def test_corruption_validation():
    with pytest.raises(ValueError):
        CorruptionConfig(occlusion_prob=1.5)
    with pytest.raises(ValueError):
        CorruptionConfig(blur_sigma_range=(2.0, 1.0))
