import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from motionrealign.corpus import ActionSpec, synthesize
from motionrealign.motion import (MotionFeatures, RawMotion, Skeleton, binarize_contacts,
                                  contact_threshold, decode_features, default_skeleton,
                                  detect_foot_contacts, encode_features, feature_dim,
                                  fit_normalizer, read_features_csv, read_motion_csv,
                                  recover_rotations, rot6d_to_matrix, split_blocks, wrap_angle,
                                  write_features_csv, write_motion_csv, yaw_matrix)

SK = default_skeleton()


def _walk(seed=0, action="walk", speed="normal", n=80):
    return synthesize(ActionSpec(action, speed, n), 20.0, seed)


def test_feature_dim_layout():
    assert feature_dim(7) == 92
    assert SK.feature_dim == 92
    m, _ = _walk()
    f = encode_features(m, SK)
    assert f.data.shape == (m.n_frames - 1, 92)
    sizes = {k: v.shape[1] for k, v in split_blocks(f.data, 7).items()}
    assert sizes == {"yaw_vel": 1, "root_vel": 2, "root_height": 1, "joint_pos": 21,
                     "joint_vel": 21, "joint_rot": 42, "contacts": 4}


def test_yaw_zero_faces_plus_z_and_turns_about_y():
    r = yaw_matrix(np.pi / 2)
    np.testing.assert_allclose(r @ [0, 0, 1], [1, 0, 0], atol=1e-15)
    np.testing.assert_allclose(r @ [0, 1, 0], [0, 1, 0])


@pytest.mark.parametrize("action", ["walk", "run", "turn_left", "turn_right", "spin", "jump"])
def test_round_trip_root_trajectory(action):
    m, _ = _walk(3, action)
    f = encode_features(m, SK)
    rec = decode_features(f, SK, (m.root_position[0], m.root_yaw[0]), m.fps)
    n = f.n_frames
    assert np.max(np.abs(rec.root_position - m.root_position[:n])) < 1e-6
    assert np.max(np.abs(wrap_angle(rec.root_yaw - m.root_yaw[:n]))) < 1e-9
    np.testing.assert_allclose(rec.local_joint_positions, m.local_joint_positions[:n], atol=1e-12)


def test_recovered_rotations_are_orthonormal():
    m, _ = _walk(1, "turn_left")
    rots = recover_rotations(encode_features(m, SK))
    eye = np.einsum("...ji,...jk->...ik", rots, rots)
    assert np.max(np.abs(eye - np.eye(3))) < 1e-9
    assert np.allclose(np.linalg.det(rots), 1.0)


def test_rotations_map_rest_bones_to_current_bones():
    m, _ = _walk(2)
    f = encode_features(m, SK)
    rots = recover_rotations(f)
    local = m.local_joint_positions[:-1]
    for k, p in enumerate(SK.parents):
        if p == k:
            continue
        bone = local[:, k] - local[:, p]
        rest = SK.offsets[k] / np.linalg.norm(SK.offsets[k])
        pred = rots[:, k] @ rest
        np.testing.assert_allclose(pred, bone / np.linalg.norm(bone, axis=1, keepdims=True),
                                   atol=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=6, max_size=6))
def test_rot6d_gram_schmidt_orthonormal(vals):
    v = np.array(vals)
    a, b = v[:3], v[3:]
    if np.linalg.norm(a) < 1e-3 or np.linalg.norm(np.cross(a, b)) < 1e-3:
        return
    r = rot6d_to_matrix(v)
    np.testing.assert_allclose(r.T @ r, np.eye(3), atol=1e-9)
    assert np.linalg.det(r) == pytest.approx(1.0)


def test_contact_threshold_calibration():
    assert contact_threshold(20.0) == pytest.approx(0.02)


@pytest.mark.parametrize("seed", range(4))
@pytest.mark.parametrize("speed", ["slow", "normal", "fast"])
def test_contacts_match_ground_truth_on_walks(seed, speed):
    m, stance = _walk(seed, "walk", speed, 120)
    labels = detect_foot_contacts(m, SK)
    assert labels.shape == (m.n_frames, 4)
    agree = (labels[:-1, :2] == stance[:-1]).mean()
    assert agree >= 0.9


def test_contacts_padded_by_repeating_last_foot():
    m, _ = _walk()
    labels = detect_foot_contacts(m, SK)
    np.testing.assert_array_equal(labels[:, 2], labels[:, 1])
    np.testing.assert_array_equal(labels[:, 3], labels[:, 1])


def test_translation_invariance_of_features():
    m, _ = _walk(4)
    a = encode_features(m, SK).data
    b = encode_features(m.translated([5.0, 0.0, -2.0]), SK).data
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_short_and_mismatched_motions_rejected():
    m, _ = _walk()
    with pytest.raises(ValueError):
        encode_features(m.crop(0, 1), SK)
    with pytest.raises(ValueError):
        RawMotion(20.0, np.zeros((3, 3)), np.zeros(2), np.zeros((3, 7, 3)))
    bad = Skeleton((0, 0), np.zeros((2, 3)), (1,))
    with pytest.raises(ValueError):
        encode_features(m, bad)


def test_skeleton_validation():
    with pytest.raises(ValueError):
        Skeleton((0, 1), np.zeros((2, 3)), (1,))  # two roots
    with pytest.raises(ValueError):
        Skeleton((1, 0), np.zeros((2, 3)), (1,))  # cycle, no root
    with pytest.raises(ValueError):
        Skeleton((0, 0), np.zeros((2, 3)), ())


def test_normalizer_round_trip_and_floor():
    rng = np.random.default_rng(0)
    feats = [MotionFeatures(rng.standard_normal((10, 92)), 7) for _ in range(3)]
    feats[0].data[:, 0] = 1.0
    for f in feats:
        f.data[:, 5] = 2.0  # constant column
    ns = fit_normalizer(feats)
    assert ns.std[5] == ns.floor
    x = feats[1].data
    np.testing.assert_allclose(ns.invert(ns.apply(x)), x, atol=1e-9)
    with pytest.raises(ValueError):
        fit_normalizer([])


def test_binarize_contacts_only_touches_contact_block():
    x = np.full((3, 92), 0.3)
    out = binarize_contacts(x, 7)
    np.testing.assert_array_equal(out[:, :-4], x[:, :-4])
    assert set(np.unique(out[:, -4:])) <= {0.0, 1.0}


def test_csv_round_trips(tmp_path):
    m, _ = _walk(5, n=30)
    write_motion_csv(tmp_path / "m.csv", m)
    back = read_motion_csv(tmp_path / "m.csv")
    np.testing.assert_array_equal(back.root_position, m.root_position)
    np.testing.assert_array_equal(back.local_joint_positions, m.local_joint_positions)
    assert back.fps == m.fps
    f = encode_features(m, SK)
    write_features_csv(tmp_path / "f.csv", f)
    np.testing.assert_array_equal(read_features_csv(tmp_path / "f.csv").data, f.data)
    (tmp_path / "bad.csv").write_text("a,b\n1,2\n")
    with pytest.raises(ValueError):
        read_features_csv(tmp_path / "bad.csv")
    with pytest.raises(ValueError):
        read_motion_csv(tmp_path / "bad.csv")
