"""Synthetic task families for fast meta-learning experiments.

Three families, all pure functions of their seeds:

  quad      scalar quadratic losses (theta - c)^2 with shifting optima;
            closed forms make analytic gradient checks possible
  sinusoid  y = A*sin(x + phi) few-shot regression (the classic family)
  cipher    random substitution-cipher "languages": source symbol strings
            mapped through a per-task permutation, optionally perturbed
            by symbol noise; a sequence-level stand-in for per-language
            adaptation

Cipher episodes use the token convention PAD=0, BOS=1, EOS=2, symbols
starting at 3, so a V-symbol alphabet needs a vocab of V + 3.
"""

import hashlib
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError
from .meta import Episode
from .model import SequenceBatch, make_sequence_batch

PAD, BOS, EOS = 0, 1, 2
SYMBOL_OFFSET = 3

SINUSOID_AMP_RANGE = (0.1, 5.0)
SINUSOID_PHASE_RANGE = (0.0, float(np.pi))
SINUSOID_X_RANGE = (-5.0, 5.0)
QUAD_C_RANGE = (-1.0, 1.0)


@dataclass
class QuadraticTask:
    c: float
    seed_key: tuple = ()


@dataclass
class SinusoidTask:
    amplitude: float
    phase: float
    seed_key: tuple = ()


@dataclass
class CipherLanguageTask:
    alphabet_size: int
    cipher: np.ndarray  # permutation over {0..V-1}
    len_min: int
    len_max: int
    noise_rate: float
    seed_key: tuple = ()

    def __post_init__(self):
        if sorted(self.cipher.tolist()) != list(range(self.alphabet_size)):
            raise ConfigError("cipher must be a permutation of the alphabet")
        if not 0.0 <= self.noise_rate < 0.5:
            raise ConfigError(f"noise_rate must be in [0, 0.5), got {self.noise_rate}")
        if not 1 <= self.len_min <= self.len_max:
            raise ConfigError(f"bad length range [{self.len_min}, {self.len_max}]")

    @property
    def vocab_size(self):
        return self.alphabet_size + SYMBOL_OFFSET


@dataclass
class TaskSampler:
    """Deterministic episode stream for one family.

    `n_tasks` > 0 fixes a finite task pool that episode indices cycle
    through (the "source languages" setting); 0 draws a fresh task per
    index. Calling the sampler with an episode index returns an Episode.
    """

    family: str
    master_seed: int
    k_support: int = 8
    k_target: int = 8
    n_tasks: int = 0
    alphabet_size: int = 20
    len_min: int = 5
    len_max: int = 15
    noise_rate: float = 0.1

    def __post_init__(self):
        if self.family not in ("quad", "sinusoid", "cipher"):
            raise ConfigError(f"unknown task family {self.family!r}")
        if self.k_support < 1 or self.k_target < 1:
            raise ConfigError("k_support and k_target must be >= 1")

    def sample_task(self, task_index):
        return sample_task(self, task_index)

    def episode(self, index):
        task_index = index % self.n_tasks if self.n_tasks > 0 else index
        task = sample_task(self, task_index)
        return sample_episode(task, self.k_support, self.k_target, episode_seed=index)

    def __call__(self, index):
        return self.episode(index)


def sample_task(sampler, task_index):
    """Deterministic function of (master seed, task index)."""
    if task_index < 0:
        raise ContractError(f"task_index must be >= 0, got {task_index}")
    key = (sampler.master_seed, task_index)
    rng = np.random.default_rng(key)
    if sampler.family == "quad":
        lo, hi = QUAD_C_RANGE
        return QuadraticTask(c=float(rng.uniform(lo, hi)), seed_key=key)
    if sampler.family == "sinusoid":
        a = float(rng.uniform(*SINUSOID_AMP_RANGE))
        phi = float(rng.uniform(*SINUSOID_PHASE_RANGE))
        return SinusoidTask(amplitude=a, phase=phi, seed_key=key)
    cipher = rng.permutation(sampler.alphabet_size)
    return CipherLanguageTask(
        alphabet_size=sampler.alphabet_size,
        cipher=cipher,
        len_min=sampler.len_min,
        len_max=sampler.len_max,
        noise_rate=sampler.noise_rate,
        seed_key=key,
    )


def sample_episode(task, k_support, k_target, episode_seed):
    """Independent support/target draws, keyed by (task, episode_seed)."""
    if k_support < 1 or k_target < 1:
        raise ContractError("episode sizes must be >= 1")
    rng = np.random.default_rng((*task.seed_key, 7, episode_seed))
    if isinstance(task, QuadraticTask):
        batch = {"c": task.c}
        return Episode(batch, batch, task_id=f"quad:{task_key(task)}")
    if isinstance(task, SinusoidTask):
        lo, hi = SINUSOID_X_RANGE
        xs = rng.uniform(lo, hi, size=(k_support, 1))
        xt = rng.uniform(lo, hi, size=(k_target, 1))
        support = {"x": xs, "y": task.amplitude * np.sin(xs + task.phase)}
        target = {"x": xt, "y": task.amplitude * np.sin(xt + task.phase)}
        return Episode(support, target, task_id=f"sinusoid:{task_key(task)}")
    support = _cipher_batch(task, k_support, rng)
    target = _cipher_batch(task, k_target, rng)
    return Episode(support, target, task_id=f"cipher:{task_key(task)}")


def task_key(task):
    """Space-free identifier, e.g. '7.3' for (master_seed=7, task_index=3)."""
    return ".".join(str(k) for k in task.seed_key)


def _cipher_batch(task, k, rng):
    srcs, tgts = [], []
    for _ in range(k):
        n = int(rng.integers(task.len_min, task.len_max + 1))
        sym = rng.integers(task.alphabet_size, size=n)
        out = task.cipher[sym]
        if task.noise_rate > 0.0:
            flip = rng.random(n) < task.noise_rate
            if flip.any():
                out = out.copy()
                out[flip] = rng.integers(task.alphabet_size, size=int(flip.sum()))
        srcs.append((sym + SYMBOL_OFFSET).tolist())
        tgts.append((out + SYMBOL_OFFSET).tolist())
    return make_sequence_batch(srcs, tgts, pad_id=PAD, bos_id=BOS, eos_id=EOS)


# ---------------------------------------------------------------------------
# loss adapters (loss_fn protocol: (params, batch, train) -> scalar Tensor)


def quadratic_loss(params, batch, train=False):
    diff = params["theta"] - T.Tensor(np.array([batch["c"]]))
    return T.sum_all(diff * diff)


def init_quadratic_params(theta0=0.0):
    from .model import ParamSet

    p = ParamSet()
    p.add("theta", T.Tensor(np.array([theta0]), requires_grad=True))
    return p


def make_sinusoid_loss():
    from .model import mlp_forward, mse_loss

    def loss_fn(params, batch, train=False):
        return mse_loss(mlp_forward(params, T.Tensor(batch["x"])), batch["y"])

    return loss_fn


def make_cipher_loss(model_cfg, dropout_seed=0):
    """Sequence NLL adapter; dropout masks are seeded per call, in call order."""
    from .model import sequence_nll

    counter = [0]

    def loss_fn(params, batch, train=False):
        counter[0] += 1
        return sequence_nll(model_cfg, params, batch, train_mode=train,
                            dropout_seed=(dropout_seed, counter[0]))

    return loss_fn


# ---------------------------------------------------------------------------
# episode serialization (cross-implementation fixtures)


def _batch_rows(task_id, split, batch):
    rows = []
    for i in range(batch.n_sequences()):
        src = batch.src[i]
        src = src[src != batch.pad_id]
        tgt = batch.tgt_out[i]
        tgt = tgt[(tgt != batch.pad_id) & (tgt != batch.eos_id)]
        rows.append(f"{task_id} {split} {' '.join(map(str, src))}\t"
                    f"{' '.join(map(str, tgt))}")
    return rows


def episode_to_lines(episode):
    """Line records: task id, split, source ids, tab, target ids."""
    if not isinstance(episode.support, SequenceBatch):
        raise ContractError("episode serialization supports sequence episodes only")
    tid = episode.task_id.replace(" ", "_")
    return (_batch_rows(tid, "support", episode.support)
            + _batch_rows(tid, "target", episode.target))


def episode_bytes(episode):
    """Canonical bytes for hashing/determinism checks, any family."""
    if isinstance(episode.support, SequenceBatch):
        return ("\n".join(episode_to_lines(episode)) + "\n").encode()
    parts = [episode.task_id.encode()]
    for split in (episode.support, episode.target):
        for key in sorted(split):
            val = split[key]
            arr = np.asarray(val, dtype=np.float64)
            parts.append(key.encode())
            parts.append(arr.tobytes())
    return b"|".join(parts)


def episode_stream_digest(episodes):
    h = hashlib.sha256()
    for ep in episodes:
        h.update(episode_bytes(ep))
    return h.hexdigest()


def dump_episodes(path, episodes):
    """Write episodes as line-delimited records, blank-line separated."""
    with open(path, "w") as f:
        for ep in episodes:
            for line in episode_to_lines(ep):
                f.write(line + "\n")
            f.write("\n")


def load_episodes(path):
    """Inverse of dump_episodes; rebuilds padded SequenceBatches."""
    episodes = []
    block = []
    with open(path) as f:
        for raw in f:
            line = raw.rstrip("\n")
            if not line:
                if block:
                    episodes.append(_episode_from_lines(block))
                    block = []
                continue
            block.append(line)
    if block:
        episodes.append(_episode_from_lines(block))
    return episodes


def _episode_from_lines(lines):
    split_seqs = {"support": ([], []), "target": ([], [])}
    task_id = None
    for line in lines:
        head, _, tgt_part = line.partition("\t")
        tid, split, *src_toks = head.split(" ")
        task_id = tid
        split_seqs[split][0].append([int(x) for x in src_toks if x])
        split_seqs[split][1].append([int(x) for x in tgt_part.split(" ") if x])
    support = make_sequence_batch(*split_seqs["support"], pad_id=PAD, bos_id=BOS, eos_id=EOS)
    target = make_sequence_batch(*split_seqs["target"], pad_id=PAD, bos_id=BOS, eos_id=EOS)
    return Episode(support, target, task_id=task_id)
