"""Procedural paired (motion, caption) corpus.

Motions are built from analytic root trajectories and limb oscillators on the
default seven-joint skeleton. Locomotion plants feet in world space during
stance so that contact labels have a ground truth. Styled walks are kept
apart from the train/test splits and only serve as inversion exemplars.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .motion import RawMotion, read_motion_csv, write_motion_csv, yaw_matrix

ACTIONS = ("walk", "run", "turn_left", "turn_right", "jump", "wave_left", "wave_right",
           "crouch", "spin", "idle")
SPEEDS = ("slow", "normal", "fast")
STYLES = ("none", "bouncy", "stiff", "leaning", "giant_stride")
SUBJECTS = ("the sim", "the man", "the woman", "figure", "someone", "he", "she", "a robot")

SPEED_FACTOR = {"slow": 0.6, "normal": 1.0, "fast": 1.5}
ADVERB = {"slow": " slowly", "normal": "", "fast": " quickly"}
PHRASE = {
    "walk": "walks forward",
    "run": "runs forward",
    "turn_left": "walks in a curve to the left",
    "turn_right": "walks in a curve to the right",
    "jump": "jumps in place",
    "wave_left": "waves with the left hand",
    "wave_right": "waves with the right hand",
    "crouch": "crouches down and stands up",
    "spin": "spins around",
    "idle": "stands still",
}

PELVIS_HEIGHT = 0.9
HIP_X = 0.1
SHOULDER = np.array([0.2, 0.45, 0.0])
ARM_LEN = 0.5


@dataclass(frozen=True)
class ActionSpec:
    action: str
    speed_level: str = "normal"
    duration_frames: int = 80
    style: str = "none"

    def __post_init__(self):
        if self.action not in ACTIONS:
            raise ValueError(f"unknown action {self.action!r}")
        if self.speed_level not in SPEEDS:
            raise ValueError(f"unknown speed level {self.speed_level!r}")
        if self.style not in STYLES:
            raise ValueError(f"unknown style {self.style!r}")


@dataclass(frozen=True)
class CorpusConfig:
    n_train: int = 256
    n_test: int = 64
    fps: float = 20.0
    min_len: int = 40
    max_len: int = 120
    jitter: float = 0.05
    vocab_bound: int = 64
    min_test_captions: int = 32
    exemplar_len: int = 120
    min_train: int = 256
    min_test: int = 64


@dataclass
class CorpusItem:
    id: str
    spec: ActionSpec
    motion: RawMotion
    caption: str
    template_id: int
    seed: int


@dataclass
class Corpus:
    config: CorpusConfig
    seed: int
    items: list[CorpusItem]
    train_ids: list[str]
    test_ids: list[str]
    exemplars: list[CorpusItem] = field(default_factory=list)

    def by_id(self) -> dict[str, CorpusItem]:
        return {it.id: it for it in self.items}

    def split_items(self, which: str) -> list[CorpusItem]:
        lookup = self.by_id()
        ids = self.train_ids if which == "train" else self.test_ids
        return [lookup[i] for i in ids]

    def captions(self) -> list[str]:
        return [it.caption for it in self.items]


def render_caption(spec: ActionSpec, template_id: int) -> str:
    """Subject template + action phrase; styles are never spelled out."""
    if not 0 <= template_id < len(SUBJECTS):
        raise ValueError(f"template_id must be < {len(SUBJECTS)}")
    return f"{SUBJECTS[template_id]} {PHRASE[spec.action]}{ADVERB[spec.speed_level]}."


def all_captions() -> list[str]:
    return [render_caption(ActionSpec(a, s), t)
            for a in ACTIONS for s in SPEEDS for t in range(len(SUBJECTS))]


# kinematics

@dataclass(frozen=True)
class _Gait:
    speed: float        # m/s along facing
    yaw_rate: float     # rad/s
    cadence: float      # gait cycles per second
    duty: float         # stance fraction
    lift: float         # swing foot apex height
    bounce: float       # pelvis vertical amplitude
    arm_swing: float    # hand fore/aft amplitude
    lean: float = 0.0   # forward offset of upper body
    crouch: float = 0.0  # pelvis lowering
    arm_raise: float = 0.0


def _gait_for(spec: ActionSpec, amp: float) -> _Gait:
    k = SPEED_FACTOR[spec.speed_level]
    if spec.action == "run":
        g = _Gait(speed=3.0 * k, yaw_rate=0.0, cadence=1.4 * np.sqrt(k), duty=0.35,
                  lift=0.18 * amp, bounce=0.06 * amp, arm_swing=0.3 * amp)
    else:
        turn = {"turn_left": 0.6, "turn_right": -0.6}.get(spec.action, 0.0)
        speed = 0.9 if turn else 1.2
        g = _Gait(speed=speed * k, yaw_rate=turn * k, cadence=0.9 * np.sqrt(k), duty=0.6,
                  lift=0.08 * amp, bounce=0.025 * amp, arm_swing=0.15 * amp)
    if spec.style == "bouncy":
        g = replace(g, bounce=0.15, lift=g.lift * 3.0, arm_raise=0.2)
    elif spec.style == "stiff":
        g = replace(g, arm_swing=0.0, lift=g.lift * 0.3, bounce=0.0, arm_raise=-0.05)
    elif spec.style == "leaning":
        g = replace(g, lean=0.3, crouch=0.15)
    elif spec.style == "giant_stride":
        g = replace(g, cadence=g.cadence * 0.55, lift=g.lift * 3.0, arm_swing=g.arm_swing * 2.5)
    return g


def _root_path(t: np.ndarray, speed: float, yaw_rate: float, yaw0: float) -> tuple[np.ndarray, np.ndarray]:
    yaw = yaw0 + yaw_rate * t
    pos = np.zeros(t.shape + (3,))
    if abs(yaw_rate) < 1e-12:
        pos[..., 0] = speed * t * np.sin(yaw0)
        pos[..., 2] = speed * t * np.cos(yaw0)
    else:
        r = speed / yaw_rate
        pos[..., 0] = r * (np.cos(yaw0) - np.cos(yaw))
        pos[..., 2] = r * (np.sin(yaw) - np.sin(yaw0))
    return pos, yaw


def _hand_rest(side: float) -> np.ndarray:
    return np.array([side * SHOULDER[0], SHOULDER[1] - ARM_LEN, SHOULDER[2]])


def _locomotion(spec: ActionSpec, fps: float, rng: np.random.Generator, amp: float, phase0: float):
    g = _gait_for(spec, amp)
    n = spec.duration_frames
    t = np.arange(n) / fps
    yaw0 = rng.uniform(-np.pi, np.pi)
    root, yaw = _root_path(t, g.speed, g.yaw_rate, yaw0)
    phase = g.cadence * t + phase0
    height = PELVIS_HEIGHT - g.crouch + g.bounce * np.cos(4 * np.pi * phase)
    root[:, 1] = height

    local = np.zeros((n, 7, 3))
    stance = np.zeros((n, 2), dtype=bool)
    for side_idx, (side, offset) in enumerate(((1.0, 0.0), (-1.0, 0.5))):
        local[:, 1 + side_idx] = [side * HIP_X, 0.0, 0.0]
        phi = phase + offset
        cycle = np.floor(phi)
        u = phi - cycle
        ks = np.arange(cycle.min() - 1, cycle.max() + 2)
        t_anchor = (ks + g.duty / 2 - phase0 - offset) / g.cadence
        a_pos, a_yaw = _root_path(t_anchor, g.speed, g.yaw_rate, yaw0)
        lateral = np.einsum("kij,j->ki", yaw_matrix(a_yaw), [side * HIP_X, 0.0, 0.0])
        anchors = a_pos + lateral
        anchors[:, 1] = 0.0
        idx = (cycle - ks[0]).astype(int)
        in_stance = u < g.duty
        s = np.clip((u - g.duty) / (1.0 - g.duty), 0.0, 1.0)
        foot = np.where(in_stance[:, None], anchors[idx],
                        anchors[idx] + s[:, None] * (anchors[idx + 1] - anchors[idx]))
        foot[:, 1] = np.where(in_stance, 0.0, g.lift * np.sin(np.pi * s))
        local[:, 3 + side_idx] = _to_local(foot, root, yaw)
        # ground truth evaluated mid-transition to match the differencing convention
        u_mid = (g.cadence * (t + 0.5 / fps) + phase0 + offset) % 1.0
        stance[:, side_idx] = u_mid < g.duty
        swing = g.arm_swing * np.sin(2 * np.pi * (phi + 0.5))
        hand = _hand_rest(side) + np.stack([np.zeros(n), np.zeros(n), swing], axis=1)
        hand[:, 2] += g.lean
        hand[:, 1] += g.arm_raise * (0.5 + 0.5 * np.cos(4 * np.pi * phase))
        local[:, 5 + side_idx] = hand
    local[:, 1:3, 2] += g.lean * 0.5
    return root, yaw, local, stance


def _to_local(world: np.ndarray, root: np.ndarray, yaw: np.ndarray) -> np.ndarray:
    return np.einsum("nji,nj->ni", yaw_matrix(yaw), world - root)


def _stationary(spec: ActionSpec, fps: float, rng: np.random.Generator, amp: float, phase0: float):
    k = SPEED_FACTOR[spec.speed_level]
    n = spec.duration_frames
    t = np.arange(n) / fps
    yaw0 = rng.uniform(-np.pi, np.pi)
    root = np.zeros((n, 3))
    root[:, 1] = PELVIS_HEIGHT
    yaw = np.full(n, yaw0)
    local = np.zeros((n, 7, 3))
    for side_idx, side in enumerate((1.0, -1.0)):
        local[:, 1 + side_idx] = [side * HIP_X, 0.0, 0.0]
        local[:, 3 + side_idx] = [side * HIP_X, -PELVIS_HEIGHT, 0.0]
        local[:, 5 + side_idx] = _hand_rest(side)
    a = spec.action
    if a == "idle":
        breath = 0.01 * amp * np.sin(2 * np.pi * 0.25 * t + phase0 * 2 * np.pi)
        local[:, 5:7, 1] += breath[:, None]
    elif a in ("wave_left", "wave_right"):
        side_idx = 0 if a == "wave_left" else 1
        side = 1.0 if side_idx == 0 else -1.0
        w = 2 * np.pi * 1.5 * k * t + phase0 * 2 * np.pi
        local[:, 5 + side_idx] = np.stack([
            side * (0.3 + 0.15 * amp * np.sin(w)),
            SHOULDER[1] + 0.4 + 0.05 * amp * np.cos(2 * w),
            np.full(n, 0.1)], axis=1)
    elif a == "crouch":
        w = 2 * np.pi * 0.4 * k * t + phase0 * 2 * np.pi
        drop = 0.35 * amp * (0.5 - 0.5 * np.cos(w))
        root[:, 1] = PELVIS_HEIGHT - drop
        local[:, 3:5, 1] = -root[:, 1:2]
        local[:, 5:7, 2] = 0.3 * drop[:, None] / 0.35
    elif a == "jump":
        period = 1.0 / (0.9 * k)
        ph = (t / period + phase0) % 1.0
        hop = 0.3 * amp * np.sin(np.pi * np.clip(ph / 0.6, 0.0, 1.0))
        root[:, 1] = PELVIS_HEIGHT + hop
        local[:, 5:7, 1] += 0.3 * hop[:, None] / 0.3
    elif a == "spin":
        yaw = yaw0 + 2.5 * k * t * (1.0 if phase0 >= 0 else -1.0)
        local[:, 5:7, 1] += 0.15 * amp
        local[:, 5, 0] += 0.15 * amp
        local[:, 6, 0] -= 0.15 * amp
    return root, yaw, local, np.ones((n, 2), dtype=bool)


def synthesize(spec: ActionSpec, fps: float, seed: int, jitter: float = 0.05,
               start=(0.0, 0.0)) -> tuple[RawMotion, np.ndarray]:
    """Motion for ``spec`` plus ground-truth stance labels (N, 2) for the two feet."""
    rng = np.random.default_rng(seed)
    amp = 1.0 + rng.uniform(-jitter, jitter)
    # phase jitter is +-jitter radians, expressed in cycles
    phase0 = rng.uniform(-jitter, jitter) / (2 * np.pi)
    if spec.action in ("walk", "run", "turn_left", "turn_right"):
        root, yaw, local, stance = _locomotion(spec, fps, rng, amp, phase0)
    else:
        root, yaw, local, stance = _stationary(spec, fps, rng, amp, phase0)
    root[:, 0] += start[0]
    root[:, 2] += start[1]
    return RawMotion(fps, root, yaw, local), stance


# corpus assembly

def _item_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def generate_corpus(config: CorpusConfig = CorpusConfig(), seed: int = 0) -> Corpus:
    if config.n_train < config.min_train or config.n_test < config.min_test:
        raise ValueError(f"corpus needs >= {config.min_train} train and >= {config.min_test} "
                         f"test items, got {config.n_train}/{config.n_test}")
    if not 2 <= config.min_len <= config.max_len:
        raise ValueError("invalid motion length bounds")
    rng = np.random.default_rng(seed)
    items = []
    total = config.n_train + config.n_test
    for i in range(total):
        spec = ActionSpec(
            action=ACTIONS[rng.integers(len(ACTIONS))],
            speed_level=SPEEDS[rng.integers(len(SPEEDS))],
            duration_frames=int(rng.integers(config.min_len, config.max_len + 1)),
        )
        template = int(rng.integers(len(SUBJECTS)))
        item_seed = _item_seed(seed, i)
        motion, _ = synthesize(spec, config.fps, item_seed, config.jitter)
        items.append(CorpusItem(f"item_{i:05d}", spec, motion, render_caption(spec, template),
                                template, item_seed))
    corpus = Corpus(config, seed, items, [], [])
    corpus.train_ids, corpus.test_ids = split(corpus, config.n_train / total, seed,
                                              min_test_captions=config.min_test_captions)
    corpus.exemplars = make_exemplars(config, seed)
    return corpus


def make_exemplars(config: CorpusConfig, seed: int) -> list[CorpusItem]:
    """One styled walk per non-trivial style; captions omit the style."""
    out = []
    for k, style in enumerate(STYLES[1:]):
        spec = ActionSpec("walk", "normal", config.exemplar_len, style)
        item_seed = _item_seed(seed, 1_000_000 + k)
        motion, _ = synthesize(spec, config.fps, item_seed, config.jitter)
        out.append(CorpusItem(f"style_{style}", spec, motion, render_caption(spec, 0), 0,
                              item_seed))
    return out


def unstyled_twin(item: CorpusItem, config: CorpusConfig) -> RawMotion:
    """Same spec and seed as a styled exemplar, without the style."""
    spec = replace(item.spec, style="none")
    motion, _ = synthesize(spec, config.fps, item.seed, config.jitter)
    return motion


def split(corpus: Corpus, ratio: float, seed: int, min_test_captions: int = 32,
          attempts: int = 50) -> tuple[list[str], list[str]]:
    """Seeded disjoint train/test split with a distinct-caption floor on the test side."""
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"split ratio must be in (0, 1), got {ratio}")
    ids = [it.id for it in corpus.items]
    captions = {it.id: it.caption for it in corpus.items}
    n_train = int(round(ratio * len(ids)))
    rng = np.random.default_rng([seed, 7919])
    for _ in range(attempts):
        order = rng.permutation(len(ids))
        train = sorted(ids[i] for i in order[:n_train])
        test = sorted(ids[i] for i in order[n_train:])
        if len({captions[i] for i in test}) >= min_test_captions:
            return train, test
    raise ValueError(f"test split cannot reach {min_test_captions} distinct captions; "
                     "enlarge the corpus or the test fraction")


# persistence

def save_corpus(corpus: Corpus, directory) -> None:
    d = Path(directory)
    (d / "motions").mkdir(parents=True, exist_ok=True)
    records = []
    for it in corpus.items + corpus.exemplars:
        write_motion_csv(d / "motions" / f"{it.id}.csv", it.motion)
        records.append({"id": it.id, "spec": asdict(it.spec), "caption": it.caption,
                        "template_id": it.template_id, "seed": it.seed})
    manifest = {
        "seed": corpus.seed,
        "config": asdict(corpus.config),
        "items": records[:len(corpus.items)],
        "exemplars": records[len(corpus.items):],
        "train_ids": corpus.train_ids,
        "test_ids": corpus.test_ids,
    }
    (d / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))


def load_corpus(directory) -> Corpus:
    d = Path(directory)
    m = json.loads((d / "manifest.json").read_text())

    def load(rec):
        return CorpusItem(rec["id"], ActionSpec(**rec["spec"]),
                          read_motion_csv(d / "motions" / f"{rec['id']}.csv"),
                          rec["caption"], rec["template_id"], rec["seed"])

    return Corpus(CorpusConfig(**m["config"]), m["seed"], [load(r) for r in m["items"]],
                  m["train_ids"], m["test_ids"], [load(r) for r in m["exemplars"]])
