"""Frozen object-state-to-slot encoder and trainable auxiliary embedders.

The frozen encoder maps each object's ground-truth record
(position, velocity, radius, kind one-hot) through a fixed random affine map
followed by tanh, shared across objects; slot order within an episode is
shuffled by a per-episode random permutation. Actions and proprioception are
embedded by trainable temporal 1-D convolutions and attached as extra entity
tokens per step.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numerics import Tensor, ParameterStore, conv1d_time, init_uniform
from .worldsim import EnvState, KIND_PUSHER

FEATURE_DIM = 7       # pos(2) + vel(2) + radius(1) + kind one-hot(2)
DEFAULT_SLOT_DIM = 16

ROLE_SLOT = "slot"
ROLE_ACTION = "action"
ROLE_PROPRIO = "proprio"

AUX_KERNEL_WIDTH = 3  # unstated upstream; artifact default, zero padding


@dataclass
class SlotSet:
    """N slot vectors at one time step, plus the episode's slot-order shuffle.

    ``perm`` maps slot index -> object index: slots[k] encodes object perm[k].
    """

    slots: np.ndarray          # (N, d)
    time: int = 0
    perm: np.ndarray = None    # bijection on range(N)

    @property
    def n_slots(self):
        return self.slots.shape[0]

    @property
    def dim(self):
        return self.slots.shape[1]


@dataclass
class EntityTokenSeq:
    """Token grid over the interval: (T_h + T_p) x (N [+ action] [+ proprio]).

    ``tokens`` may hold numpy values (frozen slots) or Tensors (trainable aux
    embeddings); column roles are fixed. Future slot cells (tau >= T_h) are
    the always-masked prediction targets.
    """

    tokens: object             # Tensor (T, E, d)
    roles: list                # length E, each ROLE_*
    T_h: int = 0
    T_p: int = 0
    perm: np.ndarray = None

    @property
    def T(self):
        return self.T_h + self.T_p

    @property
    def n_entities(self):
        return len(self.roles)

    @property
    def n_slots(self):
        return sum(1 for r in self.roles if r == ROLE_SLOT)

    def slot_columns(self):
        return [e for e, r in enumerate(self.roles) if r == ROLE_SLOT]


def object_features(state: EnvState) -> np.ndarray:
    """(M, 7) raw per-object feature rows in canonical object order."""
    one_hot = np.zeros((state.num_objects, 2))
    one_hot[state.kind == KIND_PUSHER, 0] = 1.0
    one_hot[state.kind != KIND_PUSHER, 1] = 1.0
    return np.concatenate(
        [state.pos, state.vel, state.radius[:, None], one_hot], axis=1)


class FrozenSlotEncoder:
    """s = tanh(A x + b) with fixed random A, b derived from a seed.

    Permutation-equivariant by construction: the same map is applied to every
    object row. No weight here ever enters a trainable store.
    """

    def __init__(self, seed: int, dim: int = DEFAULT_SLOT_DIM):
        rng = np.random.default_rng(seed)
        self.seed = seed
        self.dim = dim
        # Gaussian A is full rank almost surely; scaled for unit-order slots
        self.A = rng.normal(0.0, 1.0 / np.sqrt(FEATURE_DIM),
                            size=(FEATURE_DIM, dim))
        self.b = rng.normal(0.0, 0.1, size=dim)

    def encode_frame(self, state: EnvState, perm=None, time=0) -> SlotSet:
        x = object_features(state)
        slots = np.tanh(x @ self.A + self.b)
        if perm is None:
            perm = np.arange(state.num_objects)
        perm = np.asarray(perm)
        return SlotSet(slots=slots[perm], time=time, perm=perm)

    def episode_permutation(self, rng, n_objects: int) -> np.ndarray:
        return rng.permutation(n_objects)


class AuxEmbedders:
    """Trainable temporal-conv embedders for actions and proprioception."""

    def __init__(self, store: ParameterStore, rng, dim: int,
                 action_dim: int = 2, proprio_dim: int = 4,
                 kernel: int = AUX_KERNEL_WIDTH, prefix: str = "aux"):
        self.dim = dim
        self.kernel = kernel
        fan_a = kernel * action_dim
        fan_p = kernel * proprio_dim
        self.Ka = store.add(f"{prefix}.action.kernel",
                            init_uniform(rng, (kernel, action_dim, dim), fan_a))
        self.ba = store.add(f"{prefix}.action.bias", np.zeros(dim))
        self.Kp = store.add(f"{prefix}.proprio.kernel",
                            init_uniform(rng, (kernel, proprio_dim, dim), fan_p))
        self.bp = store.add(f"{prefix}.proprio.bias", np.zeros(dim))

    def embed(self, actions, proprio):
        """Per-step d-dim tokens for action and proprio sequences.

        actions: (..., T, 2); proprio: (..., T, 4); lengths must match.
        Returns (action_tokens, proprio_tokens), each (..., T, d).
        """
        actions = actions if isinstance(actions, Tensor) else Tensor(actions)
        proprio = proprio if isinstance(proprio, Tensor) else Tensor(proprio)
        if actions.shape[:-1] != proprio.shape[:-1]:
            raise ValueError(
                f"action/proprio length mismatch: {actions.shape} vs "
                f"{proprio.shape}")
        a_tok = conv1d_time(actions, self.Ka, self.ba)
        p_tok = conv1d_time(proprio, self.Kp, self.bp)
        return a_tok, p_tok


def assemble(slot_frames, T_h, T_p, aux_tokens=None, perm=None):
    """Build the token grid from per-step slot arrays plus optional aux tokens.

    slot_frames: (T, N, d) array (or list of SlotSet) spanning T_h + T_p
    steps; aux_tokens: optional (action_tokens, proprio_tokens) Tensors of
    shape (T, d). Future slot cells (tau >= T_h) are the to-be-masked region.
    """
    if isinstance(slot_frames, (list, tuple)):
        n0 = slot_frames[0].n_slots
        if any(f.n_slots != n0 for f in slot_frames):
            raise ValueError("inconsistent slot count across frames")
        if perm is None:
            perm = slot_frames[0].perm
        slot_frames = np.stack([f.slots for f in slot_frames])
    T, N, d = slot_frames.shape
    if T != T_h + T_p:
        raise ValueError(
            f"got {T} frames for window T_h={T_h}, T_p={T_p}")
    roles = [ROLE_SLOT] * N
    from .numerics import concat
    grid = Tensor(slot_frames)
    if aux_tokens is not None:
        a_tok, p_tok = aux_tokens
        cols = [grid]
        for tok, role in ((a_tok, ROLE_ACTION), (p_tok, ROLE_PROPRIO)):
            if tok is None:
                continue
            tok = tok if isinstance(tok, Tensor) else Tensor(tok)
            cols.append(tok.reshape(T, 1, d))
            roles.append(role)
        grid = concat(cols, axis=1)
    return EntityTokenSeq(tokens=grid, roles=roles, T_h=T_h, T_p=T_p,
                          perm=perm)


def encode_episode(enc: FrozenSlotEncoder, traj, perm_seed=None):
    """Slots for every frame of a trajectory under one episode permutation.

    Returns (slots (L, N, d), perm). ``perm_seed`` defaults to the episode
    seed so caches are reproducible.
    """
    if perm_seed is None:
        perm_seed = traj.seed
    rng = np.random.default_rng(perm_seed)
    n = traj.states[0].num_objects
    perm = enc.episode_permutation(rng, n)
    slots = np.stack([enc.encode_frame(st, perm=perm, time=t).slots
                      for t, st in enumerate(traj.states)])
    return slots, perm


@dataclass
class EncodedDataset:
    """Slot-space mirror of a raw dataset: per-episode slots, aux, perms."""

    slots: np.ndarray       # (episodes, L, N, d)
    actions: np.ndarray     # (episodes, L, 2)
    proprio: np.ndarray     # (episodes, L, 4)
    perms: np.ndarray       # (episodes, N)
    encoder_seed: int = 0

    @property
    def n_episodes(self):
        return self.slots.shape[0]

    @property
    def length(self):
        return self.slots.shape[1]

    @property
    def n_slots(self):
        return self.slots.shape[2]

    @property
    def dim(self):
        return self.slots.shape[3]

    def save(self, path):
        np.savez(path, slots=self.slots, actions=self.actions,
                 proprio=self.proprio, perms=self.perms,
                 encoder_seed=self.encoder_seed)

    @classmethod
    def load(cls, path):
        z = np.load(path)
        return cls(slots=z["slots"], actions=z["actions"],
                   proprio=z["proprio"], perms=z["perms"],
                   encoder_seed=int(z["encoder_seed"]))


def encode_dataset(enc: FrozenSlotEncoder, dataset) -> EncodedDataset:
    slots, actions, proprio, perms = [], [], [], []
    for traj in dataset.episodes:
        s, perm = encode_episode(enc, traj)
        slots.append(s)
        actions.append(traj.actions)
        proprio.append(traj.proprio)
        perms.append(perm)
    return EncodedDataset(
        slots=np.stack(slots) if slots else np.zeros((0, 0, 0, enc.dim)),
        actions=np.stack(actions) if actions else np.zeros((0, 0, 2)),
        proprio=np.stack(proprio) if proprio else np.zeros((0, 0, 4)),
        perms=np.stack(perms) if perms else np.zeros((0, 0), dtype=int),
        encoder_seed=enc.seed)
