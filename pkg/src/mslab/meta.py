"""First-order meta-learning: inner-loop adaptation and outer updates.

Two outer objectives share one inner loop (N plain SGD steps on the
support set):

  maml  gradient of the target loss at the last adapted parameters only
  msl   weighted sum of target-loss gradients taken after *every* inner
        step, with an importance schedule that starts uniform and anneals
        toward the final step

Everything is strictly first order: each target gradient is computed in
an isolated recording that treats the adapted parameters as leaves, then
accumulated onto the initialization by name.

The loss_fn protocol everywhere is `loss_fn(params, batch, train)` ->
scalar Tensor; `train=False` is used for target losses so dropout (and
any other train-only stochasticity) stays out of the stability metrics.
"""

import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError, DivergenceError
from .tensor import GradStore, Recording, backward

EPISODE_THREADS_VAR = "MSLAB_EPISODE_THREADS"


@dataclass
class Episode:
    """One task's adaptation split: support to adapt on, target to judge by."""

    support: object
    target: object
    task_id: str = ""


@dataclass
class InnerConfig:
    n_steps: int = 5
    inner_lr: float = 0.01

    def __post_init__(self):
        if self.n_steps < 1:
            raise ConfigError(f"n_steps must be >= 1, got {self.n_steps}")
        if self.inner_lr < 0:
            raise ConfigError(f"inner_lr must be >= 0, got {self.inner_lr}")


@dataclass
class OuterConfig:
    meta_lr: float = 1e-3
    meta_batch_size: int = 4
    n_outer_iters: int = 200
    optimizer: str = "adam"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    mode: str = "msl"
    include_step_zero: bool = False

    def __post_init__(self):
        if self.meta_batch_size < 1:
            raise ConfigError(f"meta_batch_size must be >= 1, got {self.meta_batch_size}")
        if self.n_outer_iters < 0:
            raise ConfigError(f"n_outer_iters must be >= 0, got {self.n_outer_iters}")
        if self.meta_lr <= 0:
            raise ConfigError(f"meta_lr must be positive, got {self.meta_lr}")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError(f"optimizer must be sgd or adam, got {self.optimizer!r}")
        if self.mode not in ("maml", "msl"):
            raise ConfigError(f"mode must be maml or msl, got {self.mode!r}")


@dataclass
class WeightSchedule:
    """Per-step importance weights as a function of the outer iteration.

    w_i(t) = max(floor, 1/N - t*decay) for i < N, the remainder goes to
    the last step: uniform at t=0, near-one-hot once every non-final
    weight has decayed to the floor.
    """

    n_steps: int
    decay_per_iter: float = 0.0
    floor: float = 1e-3
    one_hot: bool = False

    def __post_init__(self):
        if self.n_steps < 1:
            raise ConfigError(f"n_steps must be >= 1, got {self.n_steps}")
        if self.one_hot:
            return
        if self.decay_per_iter < 0:
            raise ConfigError(f"decay_per_iter must be >= 0, got {self.decay_per_iter}")
        if not 0.0 < self.floor <= 1.0 / self.n_steps:
            raise ConfigError(
                f"floor must be in (0, 1/{self.n_steps}], got {self.floor}")

    @classmethod
    def one_hot_last(cls, n_steps):
        """Degenerate schedule [0,...,0,1]: reduces msl to plain maml."""
        return cls(n_steps=n_steps, decay_per_iter=0.0, floor=0.0, one_hot=True)

    @classmethod
    def annealed(cls, n_steps, n_outer_iters):
        """Default annealing: near-one-hot by 80% of the run, floor 0.03/N."""
        if n_outer_iters > 0:
            d = 1.0 / (0.8 * n_outer_iters * n_steps)
        else:
            d = 0.0
        return cls(n_steps=n_steps, decay_per_iter=d, floor=0.03 / n_steps)

    def weights_at(self, t):
        if t < 0:
            raise ContractError(f"outer iteration index must be >= 0, got {t}")
        n = self.n_steps
        if self.one_hot:
            return [0.0] * (n - 1) + [1.0]
        if n == 1:
            return [1.0]
        early = [max(self.floor, 1.0 / n - t * self.decay_per_iter) for _ in range(n - 1)]
        return early + [1.0 - sum(early)]


def weights_at(schedule, t):
    return schedule.weights_at(t)


@dataclass
class AdaptTrajectory:
    """Inner-loop states θ_1..θ_N and the support losses that produced them."""

    param_steps: list
    support_losses: list


@dataclass
class RunRecord:
    """One outer iteration's metrics row."""

    outer_iter: int
    outer_loss: float
    per_step_losses: list
    weights: list
    wall_ms: float = 0.0


def _finite_or_raise(value, what, step=None, episode_id=None):
    if not np.isfinite(value):
        raise DivergenceError(f"{what} became non-finite ({value})",
                              step=step, episode_id=episode_id)


def inner_adapt(theta, support, cfg, loss_fn):
    """N plain SGD steps on the support loss; `theta` itself is untouched."""
    steps = []
    losses = []
    cur = theta
    for i in range(cfg.n_steps):
        with Recording():
            loss = loss_fn(cur, support, True)
        value = loss.item()
        _finite_or_raise(value, f"support loss at inner step {i}", step=i)
        grads = backward(loss).by_name(cur)
        cur = cur.updated(grads, cfg.inner_lr)
        steps.append(cur)
        losses.append(value)
    return AdaptTrajectory(steps, losses)


def per_step_target_losses(trajectory, target, loss_fn):
    """Target loss after each inner step, evaluated in eval mode."""
    if not trajectory.param_steps:
        raise ContractError("empty trajectory")
    out = []
    for i, theta_i in enumerate(trajectory.param_steps):
        loss = loss_fn(theta_i, target, False)
        value = loss.item()
        _finite_or_raise(value, f"target loss after step {i + 1}", step=i + 1)
        out.append(value)
    return out


def msl_combine(losses, weights):
    """Weighted sum of scalar loss tensors, differentiable through each."""
    if len(losses) != len(weights):
        raise ContractError(f"{len(losses)} losses vs {len(weights)} weights")
    total_w = sum(weights)
    if abs(total_w - 1.0) > 1e-9:
        raise ContractError(f"weights must sum to 1 within 1e-9, got {total_w!r}")
    combined = None
    for loss, w in zip(losses, weights):
        if w == 0.0:
            continue
        term = loss * w
        combined = term if combined is None else combined + term
    return combined


def _episode_grad(theta, episode, inner_cfg, weights, mode, loss_fn, include_step_zero):
    """Per-episode first-order gradient and target-loss values.

    Zero-weight steps are evaluated without a recording (value only) so
    a one-hot-at-last-step schedule performs exactly the same float
    operations as maml mode.
    """
    try:
        traj = inner_adapt(theta, episode.support, inner_cfg, loss_fn)
        steps = traj.param_steps
        if mode == "msl" and include_step_zero:
            steps = [theta] + steps
        if mode == "maml":
            eff_weights = [0.0] * (len(steps) - 1) + [1.0]
        else:
            if len(weights) != len(steps):
                raise ContractError(
                    f"schedule has {len(weights)} weights but {len(steps)} "
                    "target losses are computed")
            eff_weights = weights
        acc = {name: None for name in theta}
        step_losses = []
        for i, (theta_i, w) in enumerate(zip(steps, eff_weights)):
            if w == 0.0:
                loss = loss_fn(theta_i, episode.target, False)
                value = loss.item()
            else:
                with Recording():
                    loss = loss_fn(theta_i, episode.target, False)
                value = loss.item()
            _finite_or_raise(value, f"target loss after step {i + 1}",
                             step=i + 1, episode_id=episode.task_id)
            step_losses.append(value)
            if w == 0.0:
                continue
            g = backward(loss).by_name(theta_i)
            for name, arr in g.items():
                term = arr if w == 1.0 else w * arr
                acc[name] = term if acc[name] is None else acc[name] + term
        grads = {name: (np.zeros_like(theta[name].data) if a is None else a)
                 for name, a in acc.items()}
        if mode == "maml":
            outer_loss = step_losses[-1]
        else:
            outer_loss = 0.0
            for value, w in zip(step_losses, eff_weights):
                if w != 0.0:
                    outer_loss += w * value
        return grads, step_losses, outer_loss
    except DivergenceError as exc:
        if exc.episode_id is None:
            exc.episode_id = episode.task_id
        raise


@dataclass
class OuterGradResult:
    grads: GradStore
    outer_loss: float
    step_losses: list
    weights: list


def outer_grad(theta, episodes, inner_cfg, schedule, t, mode, loss_fn,
               include_step_zero=False):
    """First-order meta-gradient averaged over episodes, in episode order.

    Returns an OuterGradResult; `.grads` is a GradStore keyed by parameter
    name. Episodes may be processed in parallel threads (set the
    MSLAB_EPISODE_THREADS environment variable); the reduction stays
    serialized in episode order, so results are identical to a serial run.
    """
    if not episodes:
        raise ContractError("outer_grad needs at least one episode")
    weights = schedule.weights_at(t)

    def run(ep):
        return _episode_grad(theta, ep, inner_cfg, weights, mode, loss_fn,
                             include_step_zero)

    n_threads = int(os.environ.get(EPISODE_THREADS_VAR, "1"))
    if n_threads > 1 and len(episodes) > 1:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            results = list(pool.map(run, episodes))
    else:
        results = [run(ep) for ep in episodes]

    inv = 1.0 / len(episodes)
    store = GradStore()
    for name in theta:
        total = results[0][0][name]
        for r in results[1:]:
            total = total + r[0][name]
        store.put(name, total * inv)
    step_losses = [sum(r[1][i] for r in results) * inv
                   for i in range(len(results[0][1]))]
    outer_loss = sum(r[2] for r in results) * inv
    return OuterGradResult(store, outer_loss, step_losses, weights)


class SgdOptimizer:
    def __init__(self, lr):
        self.lr = lr

    def step(self, theta, grads):
        return theta.updated(grads, self.lr)


class AdamOptimizer:
    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {}
        self.v = {}

    def step(self, theta, grads):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        corr1 = 1.0 - b1 ** self.t
        corr2 = 1.0 - b2 ** self.t
        update = {}
        for name, _ in theta.items():
            g = grads.get(name)
            m = self.m.get(name)
            m = (1 - b1) * g if m is None else b1 * m + (1 - b1) * g
            v = self.v.get(name)
            v = (1 - b2) * g * g if v is None else b2 * v + (1 - b2) * g * g
            self.m[name] = m
            self.v[name] = v
            update[name] = (m / corr1) / (np.sqrt(v / corr2) + self.eps)
        return theta.updated(update, self.lr)


def make_optimizer(outer_cfg):
    if outer_cfg.optimizer == "sgd":
        return SgdOptimizer(outer_cfg.meta_lr)
    return AdamOptimizer(outer_cfg.meta_lr, outer_cfg.adam_beta1,
                         outer_cfg.adam_beta2, outer_cfg.adam_eps)


def meta_train(theta0, episode_fn, inner_cfg, outer_cfg, schedule, loss_fn,
               on_record=None):
    """Full outer loop; returns (final ParamSet, [RunRecord...]).

    `episode_fn(index)` supplies the episode stream; iteration t consumes
    indices t*B .. t*B+B-1, so two runs over the same stream see the same
    tasks in the same order. Deterministic given its inputs: all
    randomness lives in the episode stream and the initialization.
    `on_record` (if given) is called with each RunRecord as it is made.
    On divergence, raises DivergenceError carrying the partial records
    and the last parameters.
    """
    theta = theta0.clone()
    optimizer = make_optimizer(outer_cfg)
    records = []
    b = outer_cfg.meta_batch_size
    for t in range(outer_cfg.n_outer_iters):
        started = time.perf_counter()
        episodes = [episode_fn(t * b + j) for j in range(b)]
        try:
            result = outer_grad(theta, episodes, inner_cfg, schedule, t,
                                outer_cfg.mode, loss_fn,
                                outer_cfg.include_step_zero)
        except DivergenceError as exc:
            exc.records = records
            exc.params = theta
            raise
        theta = optimizer.step(theta, result.grads)
        record = RunRecord(
            outer_iter=t,
            outer_loss=result.outer_loss,
            per_step_losses=result.step_losses,
            weights=result.weights,
            wall_ms=(time.perf_counter() - started) * 1e3,
        )
        records.append(record)
        if on_record is not None:
            on_record(record)
    return theta, records


def fine_tune(theta, batches, loss_fn, epochs, lr):
    """Plain supervised SGD: one gradient step per batch per epoch."""
    if epochs < 1:
        raise ContractError(f"epochs must be >= 1, got {epochs}")
    if not batches:
        raise ContractError("fine_tune needs at least one batch")
    cur = theta.clone()
    for _ in range(epochs):
        for batch in batches:
            with Recording():
                loss = loss_fn(cur, batch, True)
            value = loss.item()
            _finite_or_raise(value, "fine-tune loss")
            grads = backward(loss).by_name(cur)
            cur = cur.updated(grads, lr)
    return cur
