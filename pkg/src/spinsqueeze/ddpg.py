"""Deep deterministic policy gradient for time-varying control amplitudes.

Actor maps state features to a control amplitude in [zeta_lo, zeta_hi]
(tanh head); the critic scores (features, action) pairs.  Two slowly
tracking target copies stabilize the bootstrapped value target
y = r + mu * Q'(s', pi'(s')).  All network machinery (forward, backprop,
Adam) is implemented here in plain numpy; every stochastic choice draws
from one seeded Generator, so training runs are deterministic per seed.

The per-step reward is -10 log10(xi^2) of the state the action produced;
the running trapezoid of those rewards over the episode is the proxy for
the integrated-squeezing objective, and the best-scoring control is kept.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

import numpy as np

from . import hilbert, squeezing
from .dynamics import (BinRollout, ControlSignal, IntegrationError, ModelOps,
                       ModelParams, evolve, evolve_unitary)
from .squeezing import SpinMoments, squeezing_record_from_moments, storage_integral

__all__ = [
    "MLPNet",
    "Adam",
    "Transition",
    "ReplayBuffer",
    "AgentConfig",
    "TrainingLog",
    "featurize",
    "reward",
    "act",
    "train_step",
    "train",
    "evaluate",
    "save_checkpoint",
    "load_checkpoint",
]

N_MOMENT_FEATURES = 13


class MLPNet:
    """Fully connected net with tanh hidden layers.

    head='bounded' squashes the scalar output into [lo, hi] via tanh
    (actor); head='linear' leaves it unbounded (critic).
    """

    def __init__(self, sizes, head, lo=-1.0, hi=1.0, rng=None, weights=None):
        self.sizes = tuple(int(s) for s in sizes)
        if self.sizes[-1] != 1:
            raise ValueError("scalar output expected")
        if head not in ("bounded", "linear"):
            raise ValueError(f"unknown head {head!r}")
        self.head = head
        self.lo = float(lo)
        self.hi = float(hi)
        if weights is not None:
            self.w = [np.array(wi, dtype=float) for wi in weights[0]]
            self.b = [np.array(bi, dtype=float) for bi in weights[1]]
        else:
            if rng is None:
                raise ValueError("rng or weights required")
            self.w, self.b = [], []
            for n_in, n_out in zip(self.sizes[:-1], self.sizes[1:]):
                self.w.append(rng.normal(0.0, 1.0 / np.sqrt(n_in), size=(n_in, n_out)))
                self.b.append(np.zeros(n_out))

    @property
    def mid(self) -> float:
        return 0.5 * (self.lo + self.hi)

    @property
    def half(self) -> float:
        return 0.5 * (self.hi - self.lo)

    def parameters(self):
        return self.w + self.b

    def forward(self, x: np.ndarray):
        """x (batch, n_in) -> (out (batch,), cache for backward)."""
        x = np.atleast_2d(x)
        hs = [x]
        zs = []
        h = x
        n_layers = len(self.w)
        for L in range(n_layers):
            z = h @ self.w[L] + self.b[L]
            zs.append(z)
            h = np.tanh(z) if L < n_layers - 1 else z
            hs.append(h)
        raw = hs[-1][:, 0]
        out = self.mid + self.half * np.tanh(raw) if self.head == "bounded" else raw
        return out, (hs, zs, raw)

    def backward(self, cache, dout: np.ndarray):
        """Gradients for mean-free upstream dout (batch,).

        Returns (grads aligned with parameters(), dinput (batch, n_in)).
        """
        hs, zs, raw = cache
        if self.head == "bounded":
            dz = (dout * self.half * (1.0 - np.tanh(raw) ** 2))[:, None]
        else:
            dz = dout[:, None]
        gw = [None] * len(self.w)
        gb = [None] * len(self.b)
        for L in reversed(range(len(self.w))):
            gw[L] = hs[L].T @ dz
            gb[L] = dz.sum(axis=0)
            dh = dz @ self.w[L].T
            if L > 0:
                dz = dh * (1.0 - np.tanh(zs[L - 1]) ** 2)
        return gw + gb, dh

    def copy(self) -> "MLPNet":
        return MLPNet(self.sizes, self.head, self.lo, self.hi,
                      weights=([w.copy() for w in self.w], [b.copy() for b in self.b]))

    def soft_update_from(self, src: "MLPNet", tau: float):
        for dst_p, src_p in zip(self.parameters(), src.parameters()):
            dst_p *= (1.0 - tau)
            dst_p += tau * src_p


class Adam:
    """Per-parameter adaptive moments with bias correction."""

    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


class SGD:
    """Plain gradient descent, kept for ablation."""

    def __init__(self, params, lr):
        self.lr = lr

    def step(self, params, grads):
        for p, g in zip(params, grads):
            p -= self.lr * g


@dataclass(frozen=True)
class Transition:
    features: np.ndarray
    action: float
    reward: float
    next_features: np.ndarray
    done: bool


class ReplayBuffer:
    """Fixed-capacity ring of transitions with uniform batch sampling."""

    def __init__(self, capacity: int, feature_dim: int):
        self.capacity = capacity
        self.features = np.zeros((capacity, feature_dim))
        self.actions = np.zeros(capacity)
        self.rewards = np.zeros(capacity)
        self.next_features = np.zeros((capacity, feature_dim))
        self.dones = np.zeros(capacity)
        self.size = 0
        self._head = 0

    def add(self, tr: Transition):
        i = self._head
        self.features[i] = tr.features
        self.actions[i] = tr.action
        self.rewards[i] = tr.reward
        self.next_features[i] = tr.next_features
        self.dones[i] = float(tr.done)
        self._head = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch: int, rng: np.random.Generator):
        """Uniform without replacement within the batch."""
        idx = rng.choice(self.size, size=batch, replace=False)
        return (self.features[idx], self.actions[idx], self.rewards[idx],
                self.next_features[idx], self.dones[idx])


@dataclass(frozen=True)
class AgentConfig:
    feature_mode: str = "moments"           # or "full_rho"
    action_low: float = -5.0
    action_high: float = 5.0
    discount: float = 0.95
    tau: float = 0.1
    lr_actor: float = 1e-4
    lr_critic: float = 1e-3
    batch_size: int = 64
    buffer_capacity: int = 100_000
    warmup_episodes: int = 10
    sigma0: float = 0.5
    sigma_final: float = 0.02
    episodes: int = 600
    steps_per_episode: int = 100
    hidden: tuple[int, ...] = (64, 64)
    optimizer: str = "adam"                  # or "sgd"
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.discount <= 1.0):
            raise ValueError("discount must be in (0, 1]")
        if not (0.0 < self.tau <= 1.0):
            raise ValueError("tau must be in (0, 1]")
        if self.action_high <= self.action_low:
            raise ValueError("empty action range")

    def sigma_at(self, episode: int) -> float:
        if self.episodes <= 1:
            return self.sigma0
        frac = episode / (self.episodes - 1)
        return self.sigma0 * (self.sigma_final / self.sigma0) ** frac


@dataclass
class TrainingLog:
    episode_rewards: np.ndarray
    episode_S: np.ndarray
    best_control: ControlSignal | None
    best_episode: int
    best_S: float
    actor: MLPNet
    critic: MLPNet
    config: AgentConfig
    params: ModelParams
    t_start: float
    horizon: float
    failures: list = field(default_factory=list)

    def to_csv(self, path):
        with open(path, "w") as f:
            f.write("episode,total_reward,S\n")
            for i, (r, s) in enumerate(zip(self.episode_rewards, self.episode_S)):
                f.write(f"{i},{float(r)!r},{float(s)!r}\n")


def reward(xi2: float) -> float:
    """-10 log10(xi^2); the floored-log convention of the squeezing module."""
    return -squeezing.xi2_to_db(xi2)


def feature_dim(mode: str, params: ModelParams) -> int:
    if mode == "moments":
        return N_MOMENT_FEATURES
    if mode == "full_rho":
        return params.space.total_dim ** 2 + 1
    raise ValueError(f"unknown feature mode {mode!r}")


def featurize(state, t: float, mode: str, params: ModelParams, horizon: float) -> np.ndarray:
    """State features for the agent, each normalized to order one.

    'moments' packs the first and symmetrized second collective-spin moments
    (scaled by J and J^2), the photon number, Re/Im <a>, and t/T: 13 numbers
    that carry exactly the statistics the squeezing reward is built from.
    'full_rho' packs the full density matrix (upper triangle, re+im) plus t/T.
    """
    if mode == "moments":
        if isinstance(state, SpinMoments):
            m = state
        else:
            ops = ModelOps.for_params(params)
            arr = state.matrix if isinstance(state, hilbert.DensityMatrix) else np.asarray(state)
            m = ops.moments_density(arr) if arr.ndim == 2 else ops.moments_state(arr)
        j = params.n_spins / 2.0
        j2 = j * j
        return np.array([
            m.jx / j, m.jy / j, m.jz / j,
            m.jxx / j2, m.jyy / j2, m.jzz / j2,
            m.jxy / j2, m.jxz / j2, m.jyz / j2,
            m.photon, m.a_re, m.a_im, t / horizon])
    if mode == "full_rho":
        arr = state.matrix if isinstance(state, hilbert.DensityMatrix) else np.asarray(state)
        if arr.ndim == 1:
            arr = np.outer(arr, arr.conj())
        iu = np.triu_indices(arr.shape[0])
        upper = arr[iu]
        return np.concatenate([upper.real, upper.imag[iu[0] != iu[1]], [t / horizon]])
    raise ValueError(f"unknown feature mode {mode!r}")


def act(actor: MLPNet, features: np.ndarray, noise_sigma: float = 0.0,
        rng: np.random.Generator | None = None) -> float:
    """Deterministic policy action plus optional Gaussian exploration, clipped."""
    a, _ = actor.forward(features)
    a = float(a[0])
    if noise_sigma > 0.0:
        if rng is None:
            raise ValueError("rng required for exploration noise")
        a += noise_sigma * rng.standard_normal()
    return float(np.clip(a, actor.lo, actor.hi))


@dataclass
class Nets:
    actor: MLPNet
    critic: MLPNet
    target_actor: MLPNet
    target_critic: MLPNet
    opt_actor: object
    opt_critic: object

    @classmethod
    def build(cls, config: AgentConfig, n_features: int, rng: np.random.Generator):
        actor = MLPNet((n_features, *config.hidden, 1), "bounded",
                       lo=config.action_low, hi=config.action_high, rng=rng)
        critic = MLPNet((n_features + 1, *config.hidden, 1), "linear", rng=rng)
        opt = Adam if config.optimizer == "adam" else SGD
        return cls(actor=actor, critic=critic,
                   target_actor=actor.copy(), target_critic=critic.copy(),
                   opt_actor=opt(actor.parameters(), config.lr_actor),
                   opt_critic=opt(critic.parameters(), config.lr_critic))


def train_step(buffer: ReplayBuffer, nets: Nets, config: AgentConfig,
               rng: np.random.Generator) -> tuple[float, float]:
    """One critic + actor update from a uniformly sampled batch.

    Critic regresses onto y = r + mu Q'(s', pi'(s')) (y = r on terminal
    steps); the actor ascends Q(s, pi(s)); targets then absorb a tau-weighted
    copy of the mains.  Returns (critic_loss, actor_objective).
    """
    if buffer.size < config.batch_size:
        raise ValueError("buffer smaller than batch size")
    s, a, r, s2, done = buffer.sample(config.batch_size, rng)
    b = config.batch_size

    a2, _ = nets.target_actor.forward(s2)
    q2, _ = nets.target_critic.forward(np.column_stack([s2, a2]))
    y = r + config.discount * q2 * (1.0 - done)

    q, cache_q = nets.critic.forward(np.column_stack([s, a]))
    td = q - y
    critic_loss = float(np.mean(td ** 2))
    grads_c, _ = nets.critic.backward(cache_q, 2.0 * td / b)
    nets.opt_critic.step(nets.critic.parameters(), grads_c)

    a_pi, cache_pi = nets.actor.forward(s)
    q_pi, cache_qpi = nets.critic.forward(np.column_stack([s, a_pi]))
    actor_objective = float(np.mean(q_pi))
    _, dinput = nets.critic.backward(cache_qpi, -np.ones(b) / b)
    dq_da = dinput[:, -1]
    grads_a, _ = nets.actor.backward(cache_pi, dq_da)
    nets.opt_actor.step(nets.actor.parameters(), grads_a)

    nets.target_actor.soft_update_from(nets.actor, config.tau)
    nets.target_critic.soft_update_from(nets.critic, config.tau)
    return critic_loss, actor_objective


def train(params: ModelParams, config: AgentConfig, start_state=None,
          t_start: float = 0.0, horizon: float | None = None,
          noisy: bool | None = None, verbose: bool = False) -> TrainingLog:
    """Episodic DDPG training of a piecewise-constant control.

    One action per control bin of width (horizon - t_start)/steps_per_episode;
    the first warmup_episodes use uniform random amplitudes to fill the
    buffer, after which every step also runs one gradient update.  Episodes
    whose dynamics abort are logged and skipped.  Deterministic per seed.
    """
    if noisy is None:
        noisy = params.kappa > 0.0 or params.gamma > 0.0
    if horizon is None:
        horizon = 100.0 if noisy else 50.0
    k = config.steps_per_episode
    dt_ctrl = (horizon - t_start) / k
    if dt_ctrl <= 0:
        raise ValueError("empty control horizon")

    if start_state is None:
        start_state = (hilbert.initial_state(params).matrix if noisy
                       else hilbert.initial_state_vector(params.space))

    rng = np.random.default_rng(config.seed)
    n_feat = feature_dim(config.feature_mode, params)
    nets = Nets.build(config, n_feat, rng)
    buffer = ReplayBuffer(config.buffer_capacity, n_feat)
    rollout = BinRollout(params, t_start, dt_ctrl, noisy)

    episode_rewards = np.full(config.episodes, np.nan)
    episode_S = np.full(config.episodes, np.nan)
    best_S = -np.inf
    best_control = None
    best_episode = -1
    failures = []

    for ep in range(config.episodes):
        warmup = ep < config.warmup_episodes
        sigma = config.sigma_at(ep)
        moments = rollout.start(start_state)
        rec = squeezing_record_from_moments(moments, params.n_spins)
        feats = featurize(
            moments if config.feature_mode == "moments" else rollout.lab_state(),
            t_start, config.feature_mode, params, horizon)
        boundary_rewards = [reward(rec.xi2)]
        actions = []
        total = 0.0
        try:
            for j in range(k):
                if warmup:
                    zeta = float(rng.uniform(config.action_low, config.action_high))
                else:
                    zeta = act(nets.actor, feats, sigma, rng)
                moments = rollout.step(zeta)
                rec = squeezing_record_from_moments(moments, params.n_spins)
                r = reward(rec.xi2)
                feats_next = featurize(
                    moments if config.feature_mode == "moments" else rollout.lab_state(),
                    rollout.t, config.feature_mode, params, horizon)
                buffer.add(Transition(feats, zeta, r, feats_next, j == k - 1))
                actions.append(zeta)
                boundary_rewards.append(r)
                total += r
                feats = feats_next
                if not warmup and buffer.size >= config.batch_size:
                    train_step(buffer, nets, config, rng)
        except (IntegrationError, squeezing.MeanSpinDegenerateError) as exc:
            failures.append((ep, str(exc)))
            continue

        times = t_start + dt_ctrl * np.arange(k + 1)
        S = float(np.trapezoid(boundary_rewards, times))
        episode_rewards[ep] = total
        episode_S[ep] = S
        if S > best_S:
            best_S = S
            best_episode = ep
            best_control = ControlSignal(t0=t_start, dt_ctrl=dt_ctrl,
                                         values=tuple(actions))
        if verbose and (ep % 25 == 0 or ep == config.episodes - 1):
            print(f"episode {ep:4d}  total_reward {total:9.3f}  S {S:9.3f}  "
                  f"best_S {best_S:9.3f}  sigma {sigma:.3f}", flush=True)

    return TrainingLog(episode_rewards=episode_rewards, episode_S=episode_S,
                       best_control=best_control, best_episode=best_episode,
                       best_S=best_S, actor=nets.actor, critic=nets.critic,
                       config=config, params=params, t_start=t_start,
                       horizon=horizon, failures=failures)


def evaluate(control: ControlSignal, params: ModelParams, noisy: bool,
             record_every: float = 0.1, start_state=None,
             convention: str = "lifetime"):
    """Deterministic rollout of a fixed control; returns (Trajectory, StorageResult)."""
    t_final = control.t_end
    if noisy:
        if start_state is None:
            start_state = hilbert.initial_state(params)
        traj = evolve(start_state, control, params, t_final, record_every=record_every)
    else:
        if start_state is None:
            start_state = hilbert.initial_state_vector(params.space)
        traj = evolve_unitary(start_state, control, params.noiseless, t_final,
                              record_every=record_every)
    return traj, storage_integral(traj, convention)


def save_checkpoint(path, log: TrainingLog):
    """Single-file npz checkpoint: config + params + weights + training curves."""
    payload = {
        "schema": "spinsqueeze.ddpg/1",
        "config": asdict(log.config),
        "params": asdict(log.params),
        "t_start": log.t_start,
        "horizon": log.horizon,
        "best_episode": log.best_episode,
        "best_S": log.best_S,
        "best_control": {
            "t0": log.best_control.t0,
            "dt_ctrl": log.best_control.dt_ctrl,
            "values": list(log.best_control.values),
        } if log.best_control is not None else None,
        "failures": log.failures,
    }
    arrays = {"episode_rewards": log.episode_rewards, "episode_S": log.episode_S}
    for name, net in (("actor", log.actor), ("critic", log.critic)):
        for i, w in enumerate(net.w):
            arrays[f"{name}_w{i}"] = w
        for i, b in enumerate(net.b):
            arrays[f"{name}_b{i}"] = b
        payload[f"{name}_meta"] = {"sizes": net.sizes, "head": net.head,
                                   "lo": net.lo, "hi": net.hi}
    np.savez(path, meta=json.dumps(payload, sort_keys=True), **arrays)


def load_checkpoint(path) -> TrainingLog:
    data = np.load(path, allow_pickle=False)
    meta = json.loads(str(data["meta"]))
    nets = {}
    for name in ("actor", "critic"):
        m = meta[f"{name}_meta"]
        n_layers = len(m["sizes"]) - 1
        ws = [data[f"{name}_w{i}"] for i in range(n_layers)]
        bs = [data[f"{name}_b{i}"] for i in range(n_layers)]
        nets[name] = MLPNet(m["sizes"], m["head"], m["lo"], m["hi"], weights=(ws, bs))
    cfg = AgentConfig(**{**meta["config"], "hidden": tuple(meta["config"]["hidden"])})
    params = ModelParams(**meta["params"])
    bc = meta["best_control"]
    control = (ControlSignal(bc["t0"], bc["dt_ctrl"], tuple(bc["values"]))
               if bc is not None else None)
    return TrainingLog(
        episode_rewards=data["episode_rewards"], episode_S=data["episode_S"],
        best_control=control, best_episode=meta["best_episode"],
        best_S=meta["best_S"], actor=nets["actor"], critic=nets["critic"],
        config=cfg, params=params, t_start=meta["t_start"],
        horizon=meta["horizon"], failures=[tuple(f) for f in meta["failures"]])
