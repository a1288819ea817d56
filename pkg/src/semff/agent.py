"""Adaptive fast-forward agent.

The agent walks a video with integer velocity and acceleration, choosing at
every selected frame whether to decelerate, keep pace, or accelerate. Its
observation is the concatenated document/frame embedding pair; the reward is
their cosine, so staying slow inside text-relevant stretches pays and racing
through them does not. Training is episodic policy-gradient with a learned
state-value baseline and an entropy bonus.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, DataFormatError, NumericError, ShapeError
from .optim import Adam
from .tensor import (
    Tape, Tensor, add_rowvec, backward, dot, flatten, glorot, log_softmax,
    matmul, maximum_const, mul, neg, pick_rows, scale, softmax, sub, sum_all,
    square, zeros_param,
)


class Action(IntEnum):
    DECELERATE = 0
    DO_NOTHING = 1
    ACCELERATE = 2


@dataclass(frozen=True)
class NavState:
    frame_index: int
    velocity: int
    acceleration: int


@dataclass(frozen=True)
class AgentConfig:
    gamma: float = 1.0
    beta: float = 0.01
    v_max: int = 20
    omega_max: int = 5
    policy_lr: float = 1e-5
    value_lr: float = 1e-3
    epochs: int = 100
    hidden: tuple[int, int] = (256, 128)

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise ConfigError(f"gamma must be in (0, 1], got {self.gamma}")
        if self.beta < 0:
            raise ConfigError(f"beta must be non-negative, got {self.beta}")
        if self.v_max < 1 or self.omega_max < 1:
            raise ConfigError("v_max and omega_max must be at least 1")
        if self.policy_lr <= 0 or self.value_lr <= 0:
            raise ConfigError("learning rates must be positive")
        if self.epochs <= 0:
            raise ConfigError("epochs must be positive")


def step_env(nav: NavState, action: Action, video_length: int,
             v_max: int = 20, omega_max: int = 5
             ) -> tuple[NavState | None, int | None]:
    """Advance one decision; (None, None) when the pointer leaves the video.

    The velocity update uses the pre-update acceleration, then the
    acceleration changes; both saturate at [1, max]. The pointer advances by
    the new velocity and the landing frame is the selected one.
    """
    w = nav.acceleration
    if action == Action.ACCELERATE:
        v, w_next = nav.velocity + w, w + 1
    elif action == Action.DECELERATE:
        v, w_next = nav.velocity - w, w - 1
    else:
        v, w_next = nav.velocity, w
    v = min(max(v, 1), v_max)
    w_next = min(max(w_next, 1), omega_max)
    idx = nav.frame_index + v
    if idx >= video_length:
        return None, None
    return NavState(idx, v, w_next), idx


class MlpParams:
    """Fully connected stack with rectified hidden layers, linear output."""

    def __init__(self, rng: np.random.Generator, dims: Sequence[int]):
        if len(dims) < 2:
            raise ConfigError(f"perceptron needs at least 2 dims, got {dims}")
        self.dims = tuple(int(d) for d in dims)
        self.Ws = [glorot(rng, (a, b)) for a, b in zip(dims, dims[1:])]
        self.bs = [zeros_param((b,)) for b in dims[1:]]

    def tensors(self, prefix: str) -> dict[str, Tensor]:
        out = {}
        for i, (W, b) in enumerate(zip(self.Ws, self.bs)):
            out[f"{prefix}.W{i}"] = W
            out[f"{prefix}.b{i}"] = b
        return out

    def parameters(self) -> list[Tensor]:
        return [t for pair in zip(self.Ws, self.bs) for t in pair]

    def replace_tensors(self, values: Sequence[Tensor]) -> None:
        n = len(self.Ws)
        if len(values) != 2 * n:
            raise ValueError(f"expected {2 * n} tensors, got {len(values)}")
        for i in range(n):
            self.Ws[i] = values[2 * i]
            self.bs[i] = values[2 * i + 1]

    def logits_rows(self, S: Tensor) -> Tensor:
        """Batched forward: one observation per row."""
        h = S
        last = len(self.Ws) - 1
        for i, (W, b) in enumerate(zip(self.Ws, self.bs)):
            h = add_rowvec(matmul(h, W), b)
            if i != last:
                h = maximum_const(h, 0.0)
        return h

    def logits_np(self, x: np.ndarray) -> np.ndarray:
        """Tape-free forward for rollouts with frozen parameters."""
        h = x
        last = len(self.Ws) - 1
        for i, (W, b) in enumerate(zip(self.Ws, self.bs)):
            h = h @ W.data + b.data
            if i != last:
                h = np.maximum(h, 0.0)
        return h


def policy_forward(policy: MlpParams, obs: np.ndarray) -> np.ndarray:
    """Action distribution for one observation (numerically stable, f64)."""
    if obs.shape != (policy.dims[0],):
        raise ShapeError(
            f"observation shape {obs.shape}, expected ({policy.dims[0]},)")
    logits = policy.logits_np(obs).astype(np.float64)
    logits -= logits.max()
    e = np.exp(logits)
    return e / e.sum()


def compute_reward(e_doc: np.ndarray, e_img: np.ndarray) -> float:
    if e_doc.shape != e_img.shape or e_doc.ndim != 1:
        raise ShapeError(
            f"embedding shapes {e_doc.shape} and {e_img.shape} must match")
    return float(np.dot(e_doc, e_img))


def compute_returns(rewards: Sequence[float], gamma: float) -> list[float]:
    """Discounted suffix sums; with gamma 1 these are plain suffix sums."""
    if len(rewards) == 0:
        raise ValueError("compute_returns needs at least one reward")
    out = [0.0] * len(rewards)
    acc = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        acc = float(rewards[t]) + gamma * acc
        out[t] = acc
    return out


def entropy(dist: Sequence[float]) -> float:
    """-sum p log p with the 0 log 0 = 0 convention."""
    p = np.asarray(dist, dtype=np.float64)
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum())


@dataclass
class Trajectory:
    """One episode: row t describes the t-th selected frame, the action
    chosen there, and that frame's own reward."""
    states: np.ndarray          # (T, 2d) float32
    actions: np.ndarray         # (T,) int64
    rewards: list[float]
    frames: list[int]
    returns: list[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.frames)


def rollout(frame_embeddings, e_doc: np.ndarray, policy: MlpParams,
            mode: str = "sample", rng: np.random.Generator | None = None,
            v_max: int = 20, omega_max: int = 5) -> Trajectory:
    """Play one episode; frame 0 is always selected and rewarded.

    ``frame_embeddings`` only needs ``len`` and per-index access, so frames
    never visited are never encoded. No tape is involved; gradients come
    later from replaying the recorded states in a batch.
    """
    n = len(frame_embeddings)
    if n < 1:
        raise ValueError("cannot roll out on an empty video")
    if mode not in ("sample", "greedy"):
        raise ValueError(f"mode must be 'sample' or 'greedy', got {mode!r}")
    if mode == "sample" and rng is None:
        raise ValueError("sampled rollout needs an rng")

    states: list[np.ndarray] = []
    actions: list[int] = []
    rewards: list[float] = []
    frames: list[int] = []

    nav = NavState(0, 1, 1)
    while True:
        e_img = frame_embeddings[nav.frame_index]
        obs = np.concatenate([e_doc, e_img]).astype(np.float32)
        probs = policy_forward(policy, obs)
        if mode == "greedy":
            action = int(np.argmax(probs))
        else:
            action = int(rng.choice(3, p=probs / probs.sum()))
        states.append(obs)
        actions.append(action)
        rewards.append(compute_reward(e_doc, e_img))
        frames.append(nav.frame_index)
        nav, _ = step_env(nav, Action(action), n, v_max, omega_max)
        if nav is None:
            break

    return Trajectory(states=np.stack(states),
                      actions=np.asarray(actions, dtype=np.int64),
                      rewards=rewards, frames=frames)


def policy_value_losses(policy: MlpParams, value: MlpParams,
                        states: np.ndarray, actions: np.ndarray,
                        returns: Sequence[float], beta: float
                        ) -> tuple[Tensor, Tensor]:
    """Build both episode losses on the active tape.

    The baseline enters the policy loss as a constant: the advantage is
    computed from the value net's forward values, never its graph, so the
    two losses touch disjoint parameter sets.
    """
    S = Tensor(states)
    R = np.asarray(returns, dtype=np.float32)

    vhat = flatten(value.logits_rows(S))
    value_loss = sum_all(square(sub(vhat, Tensor(R))))

    advantage = R - vhat.data

    logits = policy.logits_rows(S)
    logp = log_softmax(logits)
    probs = softmax(logits)
    picked = pick_rows(logp, actions)
    pg_term = neg(dot(picked, Tensor(advantage)))
    entropy_sum = neg(sum_all(mul(probs, logp)))
    policy_loss = sub(pg_term, scale(entropy_sum, beta))
    return policy_loss, value_loss


def reinforce_update(traj: Trajectory, policy: MlpParams, value: MlpParams,
                     cfg: AgentConfig, policy_opt: Adam, value_opt: Adam,
                     context: str = "episode") -> tuple[float, float]:
    """One Adam step on each network from a finished episode."""
    if len(traj) == 0:
        raise ValueError("cannot update from an empty trajectory")
    returns = traj.returns or compute_returns(traj.rewards, cfg.gamma)
    with Tape() as tape:
        policy_loss, value_loss = policy_value_losses(
            policy, value, traj.states, traj.actions, returns, cfg.beta)
    pl, vl = policy_loss.item(), value_loss.item()
    if not (np.isfinite(pl) and np.isfinite(vl)):
        raise NumericError(
            f"non-finite loss in {context}: policy={pl}, value={vl}")
    policy_opt.zero_grad()
    value_opt.zero_grad()
    backward(tape, policy_loss)
    backward(tape, value_loss)
    policy_opt.step()
    value_opt.step()
    return pl, vl


def train_agent(videos: Sequence[tuple], cfg: AgentConfig,
                rng: np.random.Generator,
                init_rng: np.random.Generator | None = None,
                progress: Callable[[int, dict], None] | None = None
                ) -> tuple[MlpParams, MlpParams, list[dict]]:
    """Episodic training over (frame_embeddings, document_embedding) videos.

    Each epoch plays every video once with sampled actions and applies one
    update per episode. ``rng`` drives action sampling, ``init_rng``
    (defaults to ``rng``) the weight init. Returns the nets plus a
    per-epoch log of mean episode return and losses.
    """
    videos = list(videos)
    if not videos:
        raise ValueError("train_agent needs at least one video")
    d2 = len(videos[0][1]) * 2
    wrng = init_rng if init_rng is not None else rng
    policy = MlpParams(wrng, (d2, *cfg.hidden, 3))
    value = MlpParams(wrng, (d2, *cfg.hidden, 1))
    policy_opt = Adam(policy.parameters(), lr=cfg.policy_lr)
    value_opt = Adam(value.parameters(), lr=cfg.value_lr)

    history: list[dict] = []
    for epoch in range(1, cfg.epochs + 1):
        ep_returns, pls, vls = [], [], []
        for vi, (frame_embeddings, e_doc) in enumerate(videos):
            traj = rollout(frame_embeddings, e_doc, policy, "sample", rng,
                           cfg.v_max, cfg.omega_max)
            traj.returns = compute_returns(traj.rewards, cfg.gamma)
            pl, vl = reinforce_update(
                traj, policy, value, cfg, policy_opt, value_opt,
                context=f"epoch {epoch}, video {vi}")
            ep_returns.append(traj.returns[0])
            pls.append(pl)
            vls.append(vl)
        row = {"epoch": epoch,
               "mean_return": float(np.mean(ep_returns)),
               "policy_loss": float(np.mean(pls)),
               "value_loss": float(np.mean(vls))}
        history.append(row)
        if progress is not None:
            progress(epoch, row)
    return policy, value, history


class LazyFrameEmbeddings:
    """Per-frame embeddings computed on first access and cached."""

    def __init__(self, encode: Callable[[np.ndarray], np.ndarray],
                 features: np.ndarray):
        self._encode = encode
        self._features = features
        self._cache: dict[int, np.ndarray] = {}

    def __len__(self) -> int:
        return self._features.shape[0]

    def __getitem__(self, i: int) -> np.ndarray:
        hit = self._cache.get(i)
        if hit is None:
            hit = self._encode(self._features[i])
            self._cache[i] = hit
        return hit


def fast_forward(frame_features: np.ndarray, sentences: Sequence[str],
                 vdan_params, table, policy: MlpParams,
                 v_max: int = 20, omega_max: int = 5) -> list[int]:
    """Greedy playback: encode the document once, frames on demand, and
    return the strictly increasing selected frame indices."""
    from .vdan import encode_document, encode_image

    if frame_features.shape[0] < 1:
        raise ValueError("video has no frames")
    if not sentences:
        raise ValueError("document has no sentences")
    e_doc = encode_document(vdan_params, table, sentences,
                            frame_features.mean(axis=0)).data
    frames = LazyFrameEmbeddings(
        lambda f: encode_image(vdan_params, f).data, frame_features)
    traj = rollout(frames, e_doc, policy, "greedy",
                   v_max=v_max, omega_max=omega_max)
    return traj.frames


def uniform_skip(video_length: int, count: int) -> list[int]:
    """Evenly spaced selection of about ``count`` frames, starting at 0.

    The comparison baseline: same output length, no content awareness.
    """
    if video_length < 1:
        raise ValueError("video has no frames")
    count = max(1, min(count, video_length))
    idx = np.linspace(0, video_length - 1, count)
    return sorted(set(int(round(i)) for i in idx))


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def save_agent(path, policy: MlpParams, value: MlpParams,
               cfg: AgentConfig) -> None:
    from .checkpoint import save_checkpoint
    arrays: dict[str, Tensor] = {}
    arrays.update(policy.tensors("policy"))
    arrays.update(value.tensors("value"))
    config = {"gamma": cfg.gamma, "beta": cfg.beta, "v_max": cfg.v_max,
              "omega_max": cfg.omega_max, "policy_lr": cfg.policy_lr,
              "value_lr": cfg.value_lr, "epochs": cfg.epochs,
              "hidden0": cfg.hidden[0], "hidden1": cfg.hidden[1]}
    save_checkpoint(path, arrays, config)


def _mlp_from_arrays(arrays: dict[str, np.ndarray], prefix: str) -> MlpParams:
    layers = []
    i = 0
    while f"{prefix}.W{i}" in arrays:
        layers.append((arrays[f"{prefix}.W{i}"], arrays.get(f"{prefix}.b{i}")))
        i += 1
    if not layers:
        raise DataFormatError(f"checkpoint has no {prefix!r} layers")
    dims = [layers[0][0].shape[0]] + [W.shape[1] for W, _ in layers]
    mlp = MlpParams(np.random.default_rng(0), dims)
    for i, (W, b) in enumerate(layers):
        if b is None or b.shape != (W.shape[1],) or W.ndim != 2:
            raise DataFormatError(f"malformed layer {prefix}.{i} in checkpoint")
        if i and W.shape[0] != layers[i - 1][0].shape[1]:
            raise DataFormatError(f"layer {prefix}.{i} does not chain")
        mlp.Ws[i].data = np.array(W, dtype=np.float32)
        mlp.bs[i].data = np.array(b, dtype=np.float32)
    return mlp


def load_agent(path) -> tuple[MlpParams, MlpParams, AgentConfig]:
    from .checkpoint import load_checkpoint
    arrays, config = load_checkpoint(path)
    try:
        cfg = AgentConfig(
            gamma=config["gamma"], beta=config["beta"],
            v_max=int(config["v_max"]), omega_max=int(config["omega_max"]),
            policy_lr=config["policy_lr"], value_lr=config["value_lr"],
            epochs=int(config["epochs"]),
            hidden=(int(config["hidden0"]), int(config["hidden1"])))
    except KeyError as e:
        raise DataFormatError(f"agent checkpoint config missing key {e}") from None
    return _mlp_from_arrays(arrays, "policy"), _mlp_from_arrays(arrays, "value"), cfg
