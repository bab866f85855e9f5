"""Evaluation metrics and training-curve stability statistics.

Character error rate is unit-cost edit distance normalized by reference
length (it can exceed 1). Curve statistics turn "the loss curve shows
unstable peaks" into numbers: mean absolute successive difference,
mean within-window standard deviation, largest upward jump, mean loss,
and iterations until a trailing-window mean first drops below a
threshold.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ContractError
from .meta import RunRecord  # noqa: F401  (records produced by meta, consumed here)
from .model import beam_decode, greedy_decode
from .tasks import EOS, PAD, sample_episode

EVAL_EPISODE_SEED_BASE = 900_000_000


def _as_ids(seq):
    if isinstance(seq, str):
        return np.array([ord(c) for c in seq], dtype=np.int64)
    return np.ascontiguousarray(np.asarray(seq, dtype=np.int64))


def edit_distance(a, b):
    return int(kernels.levenshtein(_as_ids(a), _as_ids(b)))


def cer(reference, hypothesis):
    """Levenshtein(reference, hypothesis) / len(reference)."""
    ref = _as_ids(reference)
    if len(ref) == 0:
        raise ContractError("cer needs a non-empty reference")
    return edit_distance(ref, _as_ids(hypothesis)) / len(ref)


@dataclass
class CurveStats:
    mean_abs_successive_diff: float
    windowed_std: float
    max_spike: float
    auc: float
    iters_to_threshold: int | None = None


def curve_stats(records, window, threshold=None):
    """Stability statistics of an outer-loss curve.

    windowed_std averages the population std over all full sliding
    windows; iters_to_threshold is the first t whose trailing mean (over
    at most `window` records) is below `threshold`, None if never.
    """
    if len(records) < 2:
        raise ContractError(f"curve_stats needs >= 2 records, got {len(records)}")
    if window < 2:
        raise ContractError(f"window must be >= 2, got {window}")
    losses = np.array([r.outer_loss for r in records], dtype=np.float64)
    diffs = np.diff(losses)
    mean_abs = float(np.abs(diffs).mean())
    max_spike = float(np.maximum(diffs, 0.0).max()) if len(diffs) else 0.0
    if len(losses) >= window:
        stds = [losses[i:i + window].std() for i in range(len(losses) - window + 1)]
        win_std = float(np.mean(stds))
    else:
        win_std = float(losses.std())
    auc = float(losses.mean())
    iters = None
    if threshold is not None:
        for t in range(len(losses)):
            trailing = losses[max(0, t - window + 1):t + 1]
            if trailing.mean() < threshold:
                iters = t
                break
    return CurveStats(mean_abs, win_std, max_spike, auc, iters)


def _strip_special(row, pad_id=PAD, eos_id=EOS):
    toks = row[row != pad_id]
    return toks[toks != eos_id].tolist()


def evaluate_model(cfg, params, task, n_eval_episodes, decode="greedy",
                   k_per_episode=8, eval_seed_base=EVAL_EPISODE_SEED_BASE):
    """Mean CER of decoded sources against episode references.

    `decode` is "greedy", ("beam", k), or a callable
    (cfg, params, src_matrix, max_steps) -> list of token sequences.
    Eval episodes come from a seed namespace disjoint from training.
    """
    if n_eval_episodes < 1:
        raise ContractError(f"n_eval_episodes must be >= 1, got {n_eval_episodes}")
    max_steps = cfg.max_len - 1
    if decode == "greedy":
        run = lambda src: greedy_decode(cfg, params, src, max_steps)
    elif isinstance(decode, tuple) and len(decode) == 2 and decode[0] == "beam":
        run = lambda src: beam_decode(cfg, params, src, decode[1], max_steps)
    elif callable(decode):
        run = lambda src: decode(cfg, params, src, max_steps)
    else:
        raise ContractError(f"decode must be 'greedy', ('beam', k) or callable, got {decode!r}")
    scores = []
    for j in range(n_eval_episodes):
        ep = sample_episode(task, 1, k_per_episode, episode_seed=eval_seed_base + j)
        batch = ep.target
        hyps = run(batch.src)
        for i in range(batch.n_sequences()):
            ref = _strip_special(batch.tgt_out[i])
            scores.append(cer(ref, hyps[i]))
    return float(np.mean(scores))
