"""Skeletal motion <-> redundant per-frame feature representation.

Feature frame layout (``D = 4 + 12 * n_joints + 4``)::

    [yaw_vel (1), root_vel_xz (2), root_height (1),
     joint_pos (3J), joint_vel (3J), joint_rot6d (6J), foot_contact (4)]

Feature frame ``t`` describes the transition from raw frame ``t`` to
``t + 1``, so an ``N`` frame motion encodes to ``N - 1`` feature frames.
Yaw turns about +Y; a character with yaw 0 faces +Z.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

N_CONTACTS = 4
ROT_TOL = 1e-12
DEFAULT_CONTACT_SPEED = 0.4  # m/s, i.e. 0.02 m/frame at 20 fps
STD_FLOOR = 1e-6


@dataclass(frozen=True)
class Skeleton:
    parents: tuple[int, ...]
    offsets: np.ndarray
    foot_joints: tuple[int, ...]
    names: tuple[str, ...] = ()

    def __post_init__(self):
        n = len(self.parents)
        roots = [i for i, p in enumerate(self.parents) if p == i]
        if len(roots) != 1:
            raise ValueError(f"skeleton needs exactly one root, found {len(roots)}")
        for i in range(n):
            seen, j = set(), i
            while self.parents[j] != j:
                if j in seen or not 0 <= self.parents[j] < n:
                    raise ValueError(f"invalid parent chain at joint {i}")
                seen.add(j)
                j = self.parents[j]
        if np.shape(self.offsets) != (n, 3):
            raise ValueError("offsets must be (n_joints, 3)")
        if not self.foot_joints:
            raise ValueError("skeleton needs at least one foot joint")
        for f in self.foot_joints:
            if not 0 <= f < n:
                raise ValueError(f"unknown foot joint {f}")

    @property
    def n_joints(self) -> int:
        return len(self.parents)

    @property
    def root(self) -> int:
        return next(i for i, p in enumerate(self.parents) if p == i)

    @property
    def feature_dim(self) -> int:
        return feature_dim(self.n_joints)

    def contact_joints(self) -> tuple[int, ...]:
        """Foot joints padded to four by repeating the last one."""
        feet = tuple(self.foot_joints[:N_CONTACTS])
        return feet + (feet[-1],) * (N_CONTACTS - len(feet))


def feature_dim(n_joints: int) -> int:
    return 4 + 12 * n_joints + N_CONTACTS


def default_skeleton() -> Skeleton:
    """Seven joints: pelvis root, hips, feet, hands."""
    offsets = np.array([
        [0.0, 0.0, 0.0],     # root
        [0.1, 0.0, 0.0],     # left hip
        [-0.1, 0.0, 0.0],    # right hip
        [0.0, -0.9, 0.0],    # left foot
        [0.0, -0.9, 0.0],    # right foot
        [0.2, -0.05, 0.0],   # left hand (hanging from a shoulder line)
        [-0.2, -0.05, 0.0],  # right hand
    ])
    return Skeleton(parents=(0, 0, 0, 1, 2, 0, 0), offsets=offsets, foot_joints=(3, 4),
                    names=("root", "l_hip", "r_hip", "l_foot", "r_foot", "l_hand", "r_hand"))


@dataclass
class RawMotion:
    fps: float
    root_position: np.ndarray          # (N, 3)
    root_yaw: np.ndarray               # (N,)
    local_joint_positions: np.ndarray  # (N, J, 3), root-facing frame, root-relative

    def __post_init__(self):
        self.root_position = np.asarray(self.root_position, dtype=np.float64)
        self.root_yaw = np.asarray(self.root_yaw, dtype=np.float64)
        self.local_joint_positions = np.asarray(self.local_joint_positions, dtype=np.float64)
        n = self.root_position.shape[0]
        if self.fps <= 0:
            raise ValueError("fps must be positive")
        if self.root_position.shape != (n, 3) or self.root_yaw.shape != (n,):
            raise ValueError("root arrays must have shapes (N, 3) and (N,)")
        if self.local_joint_positions.ndim != 3 or self.local_joint_positions.shape[0] != n \
                or self.local_joint_positions.shape[2] != 3:
            raise ValueError("local_joint_positions must be (N, J, 3)")
        for arr in (self.root_position, self.root_yaw, self.local_joint_positions):
            if not np.all(np.isfinite(arr)):
                raise ValueError("motion contains non-finite values")

    @property
    def n_frames(self) -> int:
        return self.root_yaw.shape[0]

    def global_positions(self) -> np.ndarray:
        rot = yaw_matrix(self.root_yaw)
        return self.root_position[:, None, :] + np.einsum("nij,nkj->nki", rot, self.local_joint_positions)

    def translated(self, offset) -> "RawMotion":
        return RawMotion(self.fps, self.root_position + np.asarray(offset), self.root_yaw.copy(),
                         self.local_joint_positions.copy())

    def crop(self, start: int, length: int) -> "RawMotion":
        sl = slice(start, start + length)
        return RawMotion(self.fps, self.root_position[sl], self.root_yaw[sl],
                         self.local_joint_positions[sl])


@dataclass
class MotionFeatures:
    data: np.ndarray  # (frames, D)
    n_joints: int

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2 or self.data.shape[1] != feature_dim(self.n_joints):
            raise ValueError(f"feature matrix must be (frames, {feature_dim(self.n_joints)}), "
                             f"got {self.data.shape}")

    @property
    def n_frames(self) -> int:
        return self.data.shape[0]

    def blocks(self) -> dict[str, np.ndarray]:
        return split_blocks(self.data, self.n_joints)


def split_blocks(data: np.ndarray, n_joints: int) -> dict[str, np.ndarray]:
    j = n_joints
    s = np.cumsum([0, 1, 2, 1, 3 * j, 3 * j, 6 * j, N_CONTACTS])
    names = ("yaw_vel", "root_vel", "root_height", "joint_pos", "joint_vel", "joint_rot", "contacts")
    return {name: data[..., s[i]:s[i + 1]] for i, name in enumerate(names)}


def yaw_matrix(yaw) -> np.ndarray:
    """Rotation(s) about +Y; broadcasts over the shape of ``yaw``."""
    yaw = np.asarray(yaw, dtype=np.float64)
    c, s = np.cos(yaw), np.sin(yaw)
    out = np.zeros(yaw.shape + (3, 3))
    out[..., 0, 0] = c
    out[..., 0, 2] = s
    out[..., 1, 1] = 1.0
    out[..., 2, 0] = -s
    out[..., 2, 2] = c
    return out


def wrap_angle(a):
    return (np.asarray(a) + np.pi) % (2 * np.pi) - np.pi


def _align_rotation(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Minimal rotation matrices taking unit vectors ``src`` onto ``dst`` (batched)."""
    v = np.cross(src, dst)
    c = np.einsum("...i,...i->...", src, dst)
    vx = np.zeros(v.shape[:-1] + (3, 3))
    vx[..., 0, 1], vx[..., 0, 2] = -v[..., 2], v[..., 1]
    vx[..., 1, 0], vx[..., 1, 2] = v[..., 2], -v[..., 0]
    vx[..., 2, 0], vx[..., 2, 1] = -v[..., 1], v[..., 0]
    eye = np.broadcast_to(np.eye(3), vx.shape)
    denom = np.where(1.0 + c > 1e-9, 1.0 + c, 1.0)
    rot = eye + vx + (vx @ vx) / denom[..., None, None]
    flipped = 1.0 + c <= 1e-9
    if np.any(flipped):
        # antiparallel: half turn about any axis orthogonal to src
        s = src[flipped]
        axis = np.cross(s, np.array([1.0, 0.0, 0.0]))
        weak = np.linalg.norm(axis, axis=-1) < 1e-6
        axis[weak] = np.cross(s[weak], np.array([0.0, 1.0, 0.0]))
        axis /= np.linalg.norm(axis, axis=-1, keepdims=True)
        rot[flipped] = 2.0 * axis[:, :, None] * axis[:, None, :] - np.eye(3)
    return rot


def joint_rotations(local_positions: np.ndarray, skeleton: Skeleton) -> np.ndarray:
    """Per-joint rotations (N, J, 3, 3) in root space.

    Positions carry no twist, so each bone gets the minimal rotation taking its
    rest offset direction onto its current direction. The root is identity.
    """
    n, j, _ = local_positions.shape
    rots = np.broadcast_to(np.eye(3), (n, j, 3, 3)).copy()
    for k, p in enumerate(skeleton.parents):
        if p == k:
            continue
        rest = skeleton.offsets[k]
        bone = local_positions[:, k] - local_positions[:, p]
        rest_len = np.linalg.norm(rest)
        bone_len = np.linalg.norm(bone, axis=-1)
        ok = bone_len > 1e-9
        if rest_len < 1e-9 or not np.any(ok):
            continue
        src = np.broadcast_to(rest / rest_len, (int(ok.sum()), 3))
        rots[ok, k] = _align_rotation(src, bone[ok] / bone_len[ok, None])
    return rots


def rot6d_to_matrix(rot6d: np.ndarray) -> np.ndarray:
    """Gram-Schmidt recovery of rotation matrices from two stored columns."""
    a = rot6d[..., 0:3]
    b = rot6d[..., 3:6]
    c1 = a / np.linalg.norm(a, axis=-1, keepdims=True)
    b = b - np.sum(c1 * b, axis=-1, keepdims=True) * c1
    c2 = b / np.linalg.norm(b, axis=-1, keepdims=True)
    c3 = np.cross(c1, c2)
    return np.stack([c1, c2, c3], axis=-1)


def contact_threshold(fps: float, speed: float = DEFAULT_CONTACT_SPEED) -> float:
    """Per-frame displacement threshold for a speed given in m/s."""
    return speed / fps


def detect_foot_contacts(motion: RawMotion, skeleton: Skeleton,
                         threshold: float | None = None) -> np.ndarray:
    """Binary (N, 4) contact labels: 1 where the foot moves less than ``threshold`` m/frame.

    Frame ``t`` uses the displacement to frame ``t + 1``; the last frame repeats
    the previous label.
    """
    if threshold is None:
        threshold = contact_threshold(motion.fps)
    feet = list(skeleton.contact_joints())
    pos = motion.global_positions()[:, feet]
    n = motion.n_frames
    if n < 2:
        return np.ones((n, N_CONTACTS))
    speed = np.linalg.norm(pos[1:] - pos[:-1], axis=-1)
    speed = np.concatenate([speed, speed[-1:]], axis=0)
    return (speed < threshold).astype(np.float64)


def encode_features(motion: RawMotion, skeleton: Skeleton,
                    contact_threshold: float | None = None) -> MotionFeatures:
    n = motion.n_frames
    j = skeleton.n_joints
    if n < 2:
        raise ValueError("need at least 2 frames to difference a motion")
    if motion.local_joint_positions.shape[1] != j:
        raise ValueError(f"motion has {motion.local_joint_positions.shape[1]} joints, "
                         f"skeleton has {j}")
    yaw = motion.root_yaw
    inv = np.swapaxes(yaw_matrix(yaw[:-1]), -1, -2)  # world -> facing frame of t

    yaw_vel = wrap_angle(yaw[1:] - yaw[:-1])[:, None]
    disp = motion.root_position[1:] - motion.root_position[:-1]
    local_disp = np.einsum("nij,nj->ni", inv, disp)
    root_vel = local_disp[:, [0, 2]]
    height = motion.root_position[:-1, 1:2]

    local = motion.local_joint_positions[:-1]
    glob = motion.global_positions()
    joint_vel = np.einsum("nij,nkj->nki", inv, glob[1:] - glob[:-1])
    rots = joint_rotations(local, skeleton)
    rot6d = np.concatenate([rots[..., :, 0], rots[..., :, 1]], axis=-1)
    contacts = detect_foot_contacts(motion, skeleton, contact_threshold)[:-1]

    data = np.concatenate([
        yaw_vel, root_vel, height,
        local.reshape(n - 1, -1), joint_vel.reshape(n - 1, -1), rot6d.reshape(n - 1, -1),
        contacts,
    ], axis=1)
    return MotionFeatures(data, j)


def decode_features(features: MotionFeatures, skeleton: Skeleton,
                    initial_root=((0.0, 0.0, 0.0), 0.0), fps: float = 20.0) -> RawMotion:
    """Integrate root velocities from ``initial_root = (position, yaw)``.

    Returns one raw frame per feature frame. Root height comes from the height
    channel; joint positions from the joint-position block.
    """
    if features.n_joints != skeleton.n_joints:
        raise ValueError(f"features carry {features.n_joints} joints, skeleton has "
                         f"{skeleton.n_joints}")
    b = features.blocks()
    n = features.n_frames
    pos0, yaw0 = initial_root
    yaw_vel = b["yaw_vel"][:, 0]
    yaw = yaw0 + np.concatenate([[0.0], np.cumsum(yaw_vel[:-1])])
    planar = np.zeros((n, 3))
    planar[:, 0] = b["root_vel"][:, 0]
    planar[:, 2] = b["root_vel"][:, 1]
    steps = np.einsum("nij,nj->ni", yaw_matrix(yaw), planar)
    root = np.zeros((n, 3))
    root[0] = pos0
    root[1:] = np.asarray(pos0) + np.cumsum(steps[:-1], axis=0)
    root[:, 1] = b["root_height"][:, 0]
    local = b["joint_pos"].reshape(n, skeleton.n_joints, 3)
    return RawMotion(fps, root, yaw, local)


def recover_rotations(features: MotionFeatures) -> np.ndarray:
    """Rotation matrices (frames, J, 3, 3) from the 6D block."""
    r6 = features.blocks()["joint_rot"].reshape(features.n_frames, features.n_joints, 2, 3)
    return rot6d_to_matrix(np.concatenate([r6[:, :, 0], r6[:, :, 1]], axis=-1))


@dataclass
class NormStats:
    mean: np.ndarray
    std: np.ndarray
    floor: float = field(default=STD_FLOOR)

    def apply(self, data: np.ndarray) -> np.ndarray:
        return (data - self.mean) / self.std

    def invert(self, data: np.ndarray) -> np.ndarray:
        return data * self.std + self.mean


def fit_normalizer(train_features: list[MotionFeatures], floor: float = STD_FLOOR) -> NormStats:
    if not train_features:
        raise ValueError("cannot fit normalisation statistics on an empty list")
    frames = np.concatenate([f.data for f in train_features], axis=0)
    mean = frames.mean(axis=0)
    std = np.maximum(frames.std(axis=0), floor)
    return NormStats(mean, std, floor)


def binarize_contacts(data: np.ndarray, n_joints: int) -> np.ndarray:
    out = data.copy()
    out[:, -N_CONTACTS:] = (out[:, -N_CONTACTS:] > 0.5).astype(np.float64)
    return out


# CSV interchange

def feature_columns(n_joints: int) -> list[str]:
    cols = ["yaw_vel", "root_vel_x", "root_vel_z", "root_height"]
    for block, width in (("pos", 3), ("vel", 3)):
        cols += [f"j{j}_{block}_{ax}" for j in range(n_joints) for ax in "xyz"[:width]]
    cols += [f"j{j}_rot6d_{k}" for j in range(n_joints) for k in range(6)]
    cols += [f"contact_{k}" for k in range(N_CONTACTS)]
    return cols


def write_features_csv(path, features: MotionFeatures) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(feature_columns(features.n_joints))
        for row in features.data:
            w.writerow([repr(float(v)) for v in row])


def read_features_csv(path) -> MotionFeatures:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    n_joints = (len(header) - 4 - N_CONTACTS) // 12
    if feature_columns(n_joints) != header:
        raise ValueError(f"{path}: unrecognised feature CSV header")
    return MotionFeatures(np.array(body, dtype=np.float64).reshape(len(body), -1), n_joints)


def motion_columns(n_joints: int) -> list[str]:
    cols = ["root_x", "root_y", "root_z", "root_yaw"]
    return cols + [f"j{j}_{ax}" for j in range(n_joints) for ax in "xyz"]


def write_motion_csv(path, motion: RawMotion) -> None:
    """One frame per row; ``fps`` is stored in a leading comment line."""
    j = motion.local_joint_positions.shape[1]
    with open(path, "w", newline="") as fh:
        fh.write(f"# fps={motion.fps!r}\n")
        w = csv.writer(fh)
        w.writerow(motion_columns(j))
        for t in range(motion.n_frames):
            row = list(motion.root_position[t]) + [motion.root_yaw[t]] \
                + list(motion.local_joint_positions[t].reshape(-1))
            w.writerow([repr(float(v)) for v in row])


def read_motion_csv(path) -> RawMotion:
    text = Path(path).read_text().splitlines()
    if not text or not text[0].startswith("# fps="):
        raise ValueError(f"{path}: missing '# fps=' header line")
    fps = float(text[0].split("=", 1)[1])
    rows = list(csv.reader(text[1:]))
    header, body = rows[0], rows[1:]
    j = (len(header) - 4) // 3
    if motion_columns(j) != header:
        raise ValueError(f"{path}: unrecognised motion CSV header")
    arr = np.array(body, dtype=np.float64)
    return RawMotion(fps, arr[:, 0:3], arr[:, 3], arr[:, 4:].reshape(len(arr), j, 3))
