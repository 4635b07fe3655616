"""Deterministic 2D push-world: one controllable pusher disc and K passive
block discs with equal-mass elastic collisions in the unit arena.

State advances by semi-implicit Euler with linear drag; wall contacts reflect
the normal velocity component; disc-disc overlaps are resolved with an
equal-mass elastic impulse along the contact normal plus positional
separation. Every resolved contact emits an (step, i, j) event.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field

import numpy as np

ARENA = 1.0
DT = 0.05
DRAG = 0.05          # velocity fraction removed per step
A_MAX = 0.5
PUSHER_RADIUS = 0.06
BLOCK_RADIUS = 0.05
SEP_TOL = 1e-6

KIND_PUSHER = 0
KIND_BLOCK = 1

MAGIC = b"CJWD"
FORMAT_VERSION = 1


@dataclass
class EnvState:
    """Positions/velocities/radii/masses/kinds of all discs at one step."""

    pos: np.ndarray        # (M, 2) in [0, 1]^2
    vel: np.ndarray        # (M, 2)
    radius: np.ndarray     # (M,)
    mass: np.ndarray       # (M,)
    kind: np.ndarray       # (M,) int, exactly one KIND_PUSHER
    step: int = 0

    def copy(self):
        return EnvState(self.pos.copy(), self.vel.copy(), self.radius.copy(),
                        self.mass.copy(), self.kind.copy(), self.step)

    @property
    def num_objects(self):
        return self.pos.shape[0]

    @property
    def pusher_index(self):
        return int(np.argmax(self.kind == KIND_PUSHER))

    def proprio(self):
        """4-vector: pusher position then pusher velocity."""
        p = self.pusher_index
        return np.concatenate([self.pos[p], self.vel[p]])

    def kinetic_energy(self):
        return float(0.5 * (self.mass * (self.vel ** 2).sum(axis=1)).sum())


@dataclass
class Trajectory:
    states: list            # EnvState per step (length L)
    actions: np.ndarray     # (L, 2) clamped pusher accelerations
    proprio: np.ndarray     # (L, 4)
    events: list            # (step, i, j) with i < j
    seed: int = 0

    def __len__(self):
        return len(self.states)


@dataclass
class GoalSpec:
    """A goal frame: raw environment state plus (optionally) its slot set."""

    state: EnvState
    slots: object = None    # filled in by the encoder when needed


def clamp_action(action):
    a = np.asarray(action, dtype=np.float64).reshape(2)
    return np.clip(a, -A_MAX, A_MAX)


def initial_state(rng, K=3):
    """Random non-overlapping placement of K blocks plus one pusher."""
    M = K + 1
    radius = np.full(M, BLOCK_RADIUS)
    radius[0] = PUSHER_RADIUS
    kind = np.full(M, KIND_BLOCK, dtype=np.int64)
    kind[0] = KIND_PUSHER
    pos = np.zeros((M, 2))
    for i in range(M):
        for _ in range(1000):
            cand = rng.uniform(radius[i] + 0.02, ARENA - radius[i] - 0.02,
                               size=2)
            if all(np.linalg.norm(cand - pos[j]) > radius[i] + radius[j] + 0.02
                   for j in range(i)):
                pos[i] = cand
                break
        else:
            pos[i] = cand  # dense arena fallback; overlaps resolve on step 1
    vel = np.zeros((M, 2))
    return EnvState(pos, vel, radius, np.ones(M), kind, step=0)


def step(state: EnvState, action, dt: float = DT):
    """Advance one step; returns (new_state, events). Pure in its inputs."""
    if not (0.0 < dt <= 0.1):
        raise ValueError(f"dt must be in (0, 0.1], got {dt}")
    s = state.copy()
    a = clamp_action(action)
    p = s.pusher_index
    s.vel[p] += a * dt
    s.vel *= (1.0 - DRAG)
    s.pos += s.vel * dt

    events = []
    # wall reflection
    for i in range(s.num_objects):
        for ax in range(2):
            lo, hi = s.radius[i], ARENA - s.radius[i]
            if s.pos[i, ax] < lo:
                s.pos[i, ax] = lo + (lo - s.pos[i, ax])
                s.vel[i, ax] = abs(s.vel[i, ax])
            elif s.pos[i, ax] > hi:
                s.pos[i, ax] = hi - (s.pos[i, ax] - hi)
                s.vel[i, ax] = -abs(s.vel[i, ax])
            s.pos[i, ax] = np.clip(s.pos[i, ax], lo, hi)

    # disc-disc impulses, ascending (i, j), one pass
    for i in range(s.num_objects):
        for j in range(i + 1, s.num_objects):
            delta = s.pos[j] - s.pos[i]
            dist = float(np.linalg.norm(delta))
            min_dist = s.radius[i] + s.radius[j]
            if dist >= min_dist - SEP_TOL:
                continue
            if dist < 1e-12:
                delta = np.array([1.0, 0.0])
                dist = 1e-12
            normal = delta / dist
            rel = float((s.vel[j] - s.vel[i]) @ normal)
            if rel < 0.0:
                # equal-mass elastic impulse: swap normal components
                impulse = rel * normal
                s.vel[i] += impulse
                s.vel[j] -= impulse
            events.append((s.step + 1, i, j))

    # positional separation iterated to tolerance (chain contacts can
    # reintroduce overlap after a single pass)
    for _ in range(50):
        moved = False
        for i in range(s.num_objects):
            for j in range(i + 1, s.num_objects):
                delta = s.pos[j] - s.pos[i]
                dist = float(np.linalg.norm(delta))
                min_dist = s.radius[i] + s.radius[j]
                if dist >= min_dist - SEP_TOL:
                    continue
                if dist < 1e-12:
                    delta = np.array([1.0, 0.0])
                    dist = 1e-12
                normal = delta / dist
                overlap = min_dist - dist
                s.pos[i] -= 0.5 * overlap * normal
                s.pos[j] += 0.5 * overlap * normal
                moved = True
        np.clip(s.pos, s.radius[:, None], ARENA - s.radius[:, None],
                out=s.pos)
        if not moved:
            break
    s.step = state.step + 1
    return s, events


def contacts(state: EnvState, tol: float = SEP_TOL):
    """Brute-force list of overlapping pairs in a frame (oracle for the log)."""
    out = []
    for i in range(state.num_objects):
        for j in range(i + 1, state.num_objects):
            d = np.linalg.norm(state.pos[j] - state.pos[i])
            if d < state.radius[i] + state.radius[j] - tol:
                out.append((i, j))
    return out


# -- rollout policies --------------------------------------------------------


def random_policy(rng, state):
    return rng.uniform(-A_MAX, A_MAX, size=2)


def pursuit_policy(rng, state):
    """Accelerate the pusher toward the nearest block, with small noise."""
    p = state.pusher_index
    blocks = np.flatnonzero(state.kind == KIND_BLOCK)
    deltas = state.pos[blocks] - state.pos[p]
    nearest = blocks[np.argmin(np.linalg.norm(deltas, axis=1))]
    direction = state.pos[nearest] - state.pos[p]
    n = np.linalg.norm(direction)
    if n > 1e-9:
        direction = direction / n
    return np.clip(A_MAX * direction + rng.normal(0, 0.1 * A_MAX, size=2),
                   -A_MAX, A_MAX)


def rollout_episode(seed, length, K=3, policy_mix=0.5, spread=False):
    """Roll one episode under a random/pursuit policy mixture.

    ``spread`` starts objects in separated quadrants with a pursuit policy
    locked onto a fixed block, so distant pairs never interact (used by the
    influence diagnostics).
    """
    rng = np.random.default_rng(seed)
    if spread:
        state = _spread_state(rng, K)
        target_block = 1 + int(rng.integers(K))
    else:
        state = initial_state(rng, K)
        target_block = None
    use_pursuit = rng.random() < policy_mix
    states, actions, proprios, events = [], [], [], []
    for t in range(length):
        if target_block is not None:
            direction = state.pos[target_block] - state.pos[state.pusher_index]
            n = np.linalg.norm(direction)
            a = A_MAX * direction / n if n > 1e-9 else np.zeros(2)
            a = np.clip(a + rng.normal(0, 0.05 * A_MAX, size=2), -A_MAX, A_MAX)
        elif use_pursuit:
            a = pursuit_policy(rng, state)
        else:
            a = random_policy(rng, state)
        states.append(state)
        proprios.append(state.proprio())
        actions.append(clamp_action(a))
        state, ev = step(state, a)
        events.extend(ev)
    return Trajectory(states, np.array(actions), np.array(proprios), events,
                      seed=seed)


def _spread_state(rng, K):
    state = initial_state(rng, K)
    corners = np.array([[0.2, 0.2], [0.8, 0.8], [0.2, 0.8], [0.8, 0.2],
                        [0.5, 0.9]])
    for i in range(state.num_objects):
        state.pos[i] = corners[i % len(corners)] + rng.uniform(-0.05, 0.05, 2)
    return state


def episode_seed(seed: int, episode: int) -> int:
    """Deterministic per-episode seed derivation."""
    return int(np.random.SeedSequence([seed, episode]).generate_state(1)[0])


def sample_goal(traj: Trajectory, t: int, offset: int) -> GoalSpec:
    """Goal = the recorded frame ``offset`` steps after frame ``t``."""
    if t + offset >= len(traj):
        raise IndexError(
            f"goal frame {t + offset} beyond episode length {len(traj)}")
    return GoalSpec(state=traj.states[t + offset].copy())


# -- dataset file ------------------------------------------------------------
# header: magic, version u32, episodes u32, length u32, K u32, seed u64
# per episode: per step (pos, vel for each object; action; proprio) as <f8,
#              then varint event count, then (step, i, j) varints per event.
# radii/kinds are implied by K and the module constants.


def _write_varint(fh, value):
    while True:
        b = value & 0x7F
        value >>= 7
        if value:
            fh.write(bytes([b | 0x80]))
        else:
            fh.write(bytes([b]))
            return


def _read_varint(fh):
    shift = 0
    out = 0
    while True:
        b = fh.read(1)[0]
        out |= (b & 0x7F) << shift
        if not (b & 0x80):
            return out
        shift += 7


@dataclass
class Dataset:
    episodes: list          # Trajectory
    K: int
    length: int
    seed: int

    def __len__(self):
        return len(self.episodes)


def generate_dataset(seed, episodes, length, K=3, policy_mix=0.5,
                     spread=False) -> Dataset:
    trajs = [rollout_episode(episode_seed(seed, e), length, K,
                             policy_mix=policy_mix, spread=spread)
             for e in range(episodes)]
    return Dataset(trajs, K=K, length=length, seed=seed)


def save_dataset(ds: Dataset, path):
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IIIIQ", FORMAT_VERSION, len(ds.episodes),
                             ds.length, ds.K, ds.seed))
        for traj in ds.episodes:
            for t, st in enumerate(traj.states):
                fh.write(st.pos.astype("<f8").tobytes())
                fh.write(st.vel.astype("<f8").tobytes())
                fh.write(traj.actions[t].astype("<f8").tobytes())
                fh.write(traj.proprio[t].astype("<f8").tobytes())
            _write_varint(fh, len(traj.events))
            for (t, i, j) in traj.events:
                _write_varint(fh, t)
                _write_varint(fh, i)
                _write_varint(fh, j)


def load_dataset(path) -> Dataset:
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise ValueError(f"{path}: not a push-world dataset")
        version, n_ep, length, K, seed = struct.unpack("<IIIIQ", fh.read(24))
        if version != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        M = K + 1
        radius = np.full(M, BLOCK_RADIUS)
        radius[0] = PUSHER_RADIUS
        kind = np.full(M, KIND_BLOCK, dtype=np.int64)
        kind[0] = KIND_PUSHER
        episodes = []
        for e in range(n_ep):
            states, actions, proprios = [], [], []
            for t in range(length):
                pos = np.frombuffer(fh.read(16 * M), "<f8").reshape(M, 2)
                vel = np.frombuffer(fh.read(16 * M), "<f8").reshape(M, 2)
                act = np.frombuffer(fh.read(16), "<f8")
                prop = np.frombuffer(fh.read(32), "<f8")
                states.append(EnvState(pos.copy(), vel.copy(), radius.copy(),
                                       np.ones(M), kind.copy(), step=t))
                actions.append(act)
                proprios.append(prop)
            n_ev = _read_varint(fh)
            events = [(_read_varint(fh), _read_varint(fh), _read_varint(fh))
                      for _ in range(n_ev)]
            episodes.append(Trajectory(states, np.array(actions),
                                       np.array(proprios), events,
                                       seed=episode_seed(seed, e)))
        return Dataset(episodes, K=K, length=length, seed=seed)
