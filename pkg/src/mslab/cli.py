"""Experiment harness: train, finetune-eval, compare, emit-plot-data.

Configuration is a flat dotted-key text file (`inner.alpha = 0.01`,
`#` comments) plus `--key value` command-line overrides; every key has
a documented default below and unknown keys are rejected. Exit codes:
0 success, 2 usage/config problems, 3 numeric divergence.

Metrics files hold one `key=value` record per line and are flushed
line by line, so a truncated file is still parseable. Outputs of
`compare` contain no wall-clock times: two runs with the same config
and seeds produce byte-identical files.
"""

import argparse
import hashlib
import sys
import time
from pathlib import Path

import numpy as np

from .errors import ConfigError, DivergenceError
from .meta import InnerConfig, OuterConfig, WeightSchedule, fine_tune, meta_train
from .metrics import curve_stats, evaluate_model
from .model import (
    ModelConfig,
    init_mlp_params,
    init_params,
    load_params,
    save_params,
)
from .tasks import (
    TaskSampler,
    episode_bytes,
    init_quadratic_params,
    make_cipher_loss,
    make_sinusoid_loss,
    quadratic_loss,
    sample_episode,
    sample_task,
    task_key,
)

FINETUNE_EPISODE_SEED_BASE = 800_000_000


def _parse_bool(s):
    low = s.lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise ConfigError(f"expected a boolean, got {s!r}")


def _parse_int(s):
    try:
        return int(s)
    except ValueError:
        raise ConfigError(f"expected an integer, got {s!r}") from None


def _parse_float(s):
    try:
        return float(s)
    except ValueError:
        raise ConfigError(f"expected a number, got {s!r}") from None


def _parse_auto(inner):
    def parse(s):
        if s.lower() == "auto":
            return None
        return inner(s)

    return parse


def _parse_optional_float(s):
    if s.lower() == "none":
        return None
    return _parse_float(s)


def _parse_choice(*choices):
    def parse(s):
        if s not in choices:
            raise ConfigError(f"expected one of {choices}, got {s!r}")
        return s

    return parse


# key -> (parser, default, help); "auto"/None defaults are derived at build time
CONFIG_SPEC = {
    "seed": (_parse_int, 0, "master seed for init, tasks and episodes"),
    "task.family": (_parse_choice("cipher", "sinusoid", "quad"), "cipher",
                    "task family"),
    "task.alphabet_size": (_parse_int, 20, "cipher alphabet size V"),
    "task.len_min": (_parse_int, 5, "cipher minimum sequence length"),
    "task.len_max": (_parse_int, 15, "cipher maximum sequence length"),
    "task.noise_rate": (_parse_float, 0.1, "cipher symbol resample rate"),
    "task.n_source_languages": (_parse_int, 3,
                                "size of the training task pool (0 = unlimited)"),
    "task.k_support": (_parse_int, 8, "support sequences per episode"),
    "task.k_target": (_parse_int, 8, "target sequences per episode"),
    "model.d_model": (_parse_int, 32, "model width"),
    "model.n_heads": (_parse_int, 4, "attention heads"),
    "model.d_k": (_parse_int, 8, "attention key dim per head"),
    "model.d_v": (_parse_int, 8, "attention value dim per head"),
    "model.d_ff": (_parse_int, 64, "feed-forward inner dim"),
    "model.n_encoder_layers": (_parse_int, 1, "encoder layers"),
    "model.n_decoder_layers": (_parse_int, 1, "decoder layers"),
    "model.dropout": (_parse_float, 0.0, "dropout rate (train mode only)"),
    "model.max_len": (_parse_auto(_parse_int), None,
                      "max sequence length (auto = task.len_max + 2)"),
    "model.mlp_hidden": (_parse_int, 40, "hidden width of the sinusoid MLP"),
    "inner.n_steps": (_parse_int, 5, "inner-loop SGD steps N"),
    "inner.alpha": (_parse_float, 0.01, "inner-loop learning rate"),
    "outer.mode": (_parse_choice("msl", "maml"), "msl", "outer objective"),
    "outer.meta_lr": (_parse_float, 1e-3, "outer learning rate"),
    "outer.meta_batch_size": (_parse_int, 4, "episodes per outer iteration"),
    "outer.n_outer_iters": (_parse_int, 200, "outer iterations"),
    "outer.optimizer": (_parse_choice("adam", "sgd"), "adam", "outer optimizer"),
    "outer.adam_beta1": (_parse_float, 0.9, "adam beta1"),
    "outer.adam_beta2": (_parse_float, 0.999, "adam beta2"),
    "outer.adam_eps": (_parse_float, 1e-8, "adam epsilon"),
    "outer.include_step_zero": (_parse_bool, False,
                                "also weight the unadapted target loss"),
    "schedule.decay_per_iter": (_parse_auto(_parse_float), None,
                                "weight decay per outer iter (auto = 1/(0.8*iters*N))"),
    "schedule.floor": (_parse_auto(_parse_float), None,
                       "non-final weight floor (auto = 0.03/N)"),
    "schedule.one_hot": (_parse_bool, False,
                         "force one-hot-at-last-step weights (msl == maml)"),
    "finetune.epochs": (_parse_int, 10, "fine-tuning epochs"),
    "finetune.lr": (_parse_auto(_parse_float), None,
                    "fine-tuning learning rate (auto = inner.alpha)"),
    "finetune.n_sequences": (_parse_int, 64, "fine-tuning training sequences"),
    "finetune.batch_size": (_parse_int, 16, "fine-tuning batch size"),
    "finetune.language_index": (_parse_auto(_parse_int), None,
                                "held-out task index (auto = first index past the pool)"),
    "eval.n_episodes": (_parse_int, 4, "evaluation episodes"),
    "eval.k_per_episode": (_parse_int, 8, "sequences per evaluation episode"),
    "eval.decode": (_parse_choice("greedy", "beam:1", "beam:2", "beam:3",
                                  "beam:4", "beam:5", "beam:8"), "greedy",
                    "decoder used for CER evaluation"),
    "compare.window": (_parse_int, 25, "window for curve statistics"),
    "compare.threshold": (_parse_optional_float, None,
                          "loss threshold for iters_to_threshold (none = skip)"),
    "compare.finetune": (_parse_bool, True,
                         "also fine-tune + evaluate CER per mode in compare"),
}


class ExperimentConfig:
    """Resolved flat config; values keyed exactly as in CONFIG_SPEC."""

    def __init__(self, values):
        self.values = values

    def __getitem__(self, key):
        return self.values[key]

    @classmethod
    def defaults(cls):
        return cls({k: d for k, (_, d, _) in CONFIG_SPEC.items()})

    def set(self, key, raw):
        spec = CONFIG_SPEC.get(key)
        if spec is None:
            raise ConfigError(f"unknown config key {key!r}")
        parser = spec[0]
        try:
            self.values[key] = parser(raw) if isinstance(raw, str) else raw
        except ConfigError as exc:
            raise ConfigError(f"{key}: {exc}") from None

    def load_file(self, path):
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
            key, _, value = line.partition("=")
            try:
                self.set(key.strip(), value.strip())
            except ConfigError as exc:
                raise ConfigError(f"{path}:{lineno}: {exc}") from None

    def to_text(self):
        lines = []
        for key in CONFIG_SPEC:
            v = self.values[key]
            if v is None:
                v = "auto" if key != "compare.threshold" else "none"
            elif isinstance(v, bool):
                v = "true" if v else "false"
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{key} = {v}")
        return "\n".join(lines) + "\n"

    # -- derived domain objects -------------------------------------------

    @property
    def seed(self):
        return self.values["seed"]

    def max_len(self):
        v = self.values["model.max_len"]
        return v if v is not None else self.values["task.len_max"] + 2

    def model_config(self):
        vocab = self.values["task.alphabet_size"] + 3
        return ModelConfig(
            d_model=self.values["model.d_model"],
            n_heads=self.values["model.n_heads"],
            d_k=self.values["model.d_k"],
            d_v=self.values["model.d_v"],
            d_ff=self.values["model.d_ff"],
            n_encoder_layers=self.values["model.n_encoder_layers"],
            n_decoder_layers=self.values["model.n_decoder_layers"],
            dropout=self.values["model.dropout"],
            src_vocab=vocab,
            tgt_vocab=vocab,
            max_len=self.max_len(),
        )

    def inner_config(self):
        return InnerConfig(self.values["inner.n_steps"], self.values["inner.alpha"])

    def outer_config(self, mode=None):
        return OuterConfig(
            meta_lr=self.values["outer.meta_lr"],
            meta_batch_size=self.values["outer.meta_batch_size"],
            n_outer_iters=self.values["outer.n_outer_iters"],
            optimizer=self.values["outer.optimizer"],
            adam_beta1=self.values["outer.adam_beta1"],
            adam_beta2=self.values["outer.adam_beta2"],
            adam_eps=self.values["outer.adam_eps"],
            mode=mode or self.values["outer.mode"],
            include_step_zero=self.values["outer.include_step_zero"],
        )

    def schedule(self):
        n = self.values["inner.n_steps"]
        if self.values["outer.include_step_zero"]:
            n += 1
        if self.values["schedule.one_hot"]:
            return WeightSchedule.one_hot_last(n)
        base = WeightSchedule.annealed(n, self.values["outer.n_outer_iters"])
        d = self.values["schedule.decay_per_iter"]
        floor = self.values["schedule.floor"]
        return WeightSchedule(
            n_steps=n,
            decay_per_iter=base.decay_per_iter if d is None else d,
            floor=base.floor if floor is None else floor,
        )

    def sampler(self, seed=None):
        return TaskSampler(
            family=self.values["task.family"],
            master_seed=self.seed if seed is None else seed,
            k_support=self.values["task.k_support"],
            k_target=self.values["task.k_target"],
            n_tasks=self.values["task.n_source_languages"],
            alphabet_size=self.values["task.alphabet_size"],
            len_min=self.values["task.len_min"],
            len_max=self.values["task.len_max"],
            noise_rate=self.values["task.noise_rate"],
        )

    def finetune_lr(self):
        v = self.values["finetune.lr"]
        return self.values["inner.alpha"] if v is None else v

    def heldout_language_index(self, offset=0):
        v = self.values["finetune.language_index"]
        base = self.values["task.n_source_languages"] if v is None else v
        return base + offset

    def decode_spec(self):
        d = self.values["eval.decode"]
        if d == "greedy":
            return "greedy"
        return ("beam", int(d.split(":")[1]))


class FamilyRun:
    """Per-family wiring: initial parameters and the loss adapter."""

    def __init__(self, cfg, seed=None):
        self.cfg = cfg
        self.family = cfg["task.family"]
        self.seed = cfg.seed if seed is None else seed
        self.model_cfg = cfg.model_config() if self.family == "cipher" else None

    def init_theta(self):
        if self.family == "cipher":
            return init_params(self.model_cfg, self.seed)
        if self.family == "sinusoid":
            h = self.cfg["model.mlp_hidden"]
            return init_mlp_params([1, h, h, 1], self.seed)
        return init_quadratic_params(0.0)

    def loss_fn(self):
        if self.family == "cipher":
            return make_cipher_loss(self.model_cfg, dropout_seed=self.seed)
        if self.family == "sinusoid":
            return make_sinusoid_loss()
        return quadratic_loss

    def supports_cer(self):
        return self.family == "cipher"


# ---------------------------------------------------------------------------
# metrics records


def format_record(record, mode, with_wall=True):
    parts = [
        f"iter={record.outer_iter}",
        f"mode={mode}",
        f"outer_loss={record.outer_loss!r}",
        "step_losses=" + ",".join(repr(x) for x in record.per_step_losses),
        "weights=" + ",".join(repr(x) for x in record.weights),
    ]
    if with_wall:
        parts.append(f"wall_ms={record.wall_ms!r}")
    return " ".join(parts)


def parse_metrics(path):
    """Parse a metrics file; a partial trailing line (crash mid-write) is dropped."""
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"metrics file not found: {path}")
    text = p.read_text()
    lines = text.splitlines()
    if lines and not text.endswith("\n"):
        lines = lines[:-1]
    records = []
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        row = {}
        for token in line.split(" "):
            if "=" not in token:
                raise ConfigError(f"{path}:{lineno}: malformed token {token!r}")
            k, _, v = token.partition("=")
            row[k] = v
        if "iter" not in row or "outer_loss" not in row:
            raise ConfigError(f"{path}:{lineno}: record missing iter/outer_loss")
        records.append(row)
    return records


class _HashingStream:
    """Wraps an episode stream, hashing every episode it hands out."""

    def __init__(self, episode_fn):
        self.episode_fn = episode_fn
        self._h = hashlib.sha256()

    def __call__(self, index):
        ep = self.episode_fn(index)
        self._h.update(episode_bytes(ep))
        return ep

    def digest(self):
        return self._h.hexdigest()


# ---------------------------------------------------------------------------
# fine-tune / evaluate helpers shared by finetune-eval and compare


def finetune_batches(task, n_sequences, batch_size, seed_base=FINETUNE_EPISODE_SEED_BASE):
    batches = []
    remaining = n_sequences
    j = 0
    while remaining > 0:
        k = min(batch_size, remaining)
        ep = sample_episode(task, 1, k, episode_seed=seed_base + j)
        batches.append(ep.target)
        remaining -= k
        j += 1
    return batches


def finetune_and_eval(cfg, theta, language_index, seed=None):
    """Returns (task_id, pre_cer, post_cer) on one held-out cipher language.

    `seed` selects the task universe; it must match the master seed the
    checkpoint was trained against (defaults to the config seed).
    """
    run = FamilyRun(cfg, seed=seed)
    if not run.supports_cer():
        raise ConfigError("finetune-eval needs the cipher task family")
    task = sample_task(cfg.sampler(seed=seed), language_index)
    decode = cfg.decode_spec()
    pre = evaluate_model(run.model_cfg, theta, task, cfg["eval.n_episodes"],
                         decode=decode, k_per_episode=cfg["eval.k_per_episode"])
    epochs = cfg["finetune.epochs"]
    if epochs > 0:
        batches = finetune_batches(task, cfg["finetune.n_sequences"],
                                   cfg["finetune.batch_size"])
        theta = fine_tune(theta, batches, run.loss_fn(), epochs, cfg.finetune_lr())
    post = evaluate_model(run.model_cfg, theta, task, cfg["eval.n_episodes"],
                          decode=decode, k_per_episode=cfg["eval.k_per_episode"])
    return task, pre, post


# ---------------------------------------------------------------------------
# subcommands


def _load_config(ns, extras):
    cfg = ExperimentConfig.defaults()
    if getattr(ns, "config", None):
        cfg.load_file(ns.config)
    if getattr(ns, "seed", None) is not None:
        cfg.set("seed", str(ns.seed))
    if len(extras) % 2 != 0:
        raise ConfigError(f"override arguments must be --key value pairs, got {extras}")
    for flag, value in zip(extras[::2], extras[1::2]):
        if not flag.startswith("--"):
            raise ConfigError(f"expected an override flag, got {flag!r}")
        key = flag[2:]
        head, _, tail = key.partition(".")
        key = head + "." + tail.replace("-", "_") if tail else head.replace("-", "_")
        cfg.set(key, value)
    return cfg


def _out_dir(ns):
    out = Path(getattr(ns, "out", None) or "mslab_out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_train(ns, extras):
    cfg = _load_config(ns, extras)
    out = _out_dir(ns)
    run = FamilyRun(cfg)
    theta0 = run.init_theta()
    sampler = cfg.sampler()
    mode = cfg["outer.mode"]
    metrics_path = out / "metrics.txt"
    (out / "config.resolved.cfg").write_text(cfg.to_text())
    started = time.perf_counter()
    with open(metrics_path, "w") as metrics_file:

        def on_record(rec):
            metrics_file.write(format_record(rec, mode) + "\n")
            metrics_file.flush()

        try:
            theta, records = meta_train(theta0, sampler, cfg.inner_config(),
                                        cfg.outer_config(), cfg.schedule(),
                                        run.loss_fn(), on_record=on_record)
        except DivergenceError as exc:
            save_params(out / "model.ckpt", exc.params if exc.params else theta0)
            raise
    save_params(out / "model.ckpt", theta)
    wall = time.perf_counter() - started
    print(f"trained {len(records)} outer iterations ({mode}) in {wall:.1f}s; "
          f"checkpoint and metrics in {out}")
    return 0


def cmd_finetune_eval(ns, extras):
    ckpt = Path(ns.checkpoint)
    if ns.config is None:
        sibling = ckpt.parent / "config.resolved.cfg"
        ns.config = str(sibling) if sibling.exists() else None
    cfg = _load_config(ns, extras)
    out = _out_dir(ns)
    theta = load_params(ckpt)
    task, pre, post = finetune_and_eval(cfg, theta, cfg.heldout_language_index())
    row = f"task=cipher:{task_key(task)} pre_cer={pre!r} post_cer={post!r}"
    with open(out / "results.txt", "a") as f:
        f.write(row + "\n")
    print(row)
    return 0


def cmd_compare(ns, extras):
    cfg = _load_config(ns, extras)
    out = _out_dir(ns)
    try:
        seeds = [int(s) for s in ns.seeds.split(",") if s != ""]
    except ValueError:
        raise ConfigError(f"--seeds must be a comma list of integers, got {ns.seeds!r}") from None
    if not seeds:
        raise ConfigError("compare needs at least one seed")
    window = cfg["compare.window"]
    threshold = cfg["compare.threshold"]
    do_finetune = cfg["compare.finetune"] and cfg["task.family"] == "cipher"

    per_seed = {}
    for seed in seeds:
        digests = {}
        stats = {}
        cers = {}
        for mode in ("maml", "msl"):
            run = FamilyRun(cfg, seed=seed)
            theta0 = run.init_theta()
            stream = _HashingStream(cfg.sampler(seed=seed))
            theta, records = meta_train(theta0, stream, cfg.inner_config(),
                                        cfg.outer_config(mode=mode), cfg.schedule(),
                                        run.loss_fn())
            digests[mode] = stream.digest()
            stats[mode] = curve_stats(records, window, threshold)
            _write_mode_files(out, mode, seed, records)
            if do_finetune:
                _, pre, post = finetune_and_eval(cfg, theta,
                                                 cfg.heldout_language_index(),
                                                 seed=seed)
                cers[mode] = (pre, post)
            else:
                cers[mode] = (None, None)
        if digests["maml"] != digests["msl"]:
            raise RuntimeError(
                f"episode streams diverged between modes for seed {seed}: "
                f"{digests['maml']} vs {digests['msl']}")
        per_seed[seed] = (digests["maml"], stats, cers)

    report = _format_report(cfg, seeds, window, threshold, per_seed)
    (out / "report.txt").write_text(report)
    print(report, end="")
    return 0


def _write_mode_files(out, mode, seed, records):
    with open(out / f"metrics_{mode}_seed{seed}.txt", "w") as f:
        for rec in records:
            f.write(format_record(rec, mode, with_wall=False) + "\n")
    with open(out / f"curve_{mode}_seed{seed}.txt", "w") as f:
        for rec in records:
            f.write(f"{rec.outer_iter} {rec.outer_loss!r}\n")


def _fmt(x):
    if x is None:
        return "none"
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _format_report(cfg, seeds, window, threshold, per_seed):
    lines = ["mslab comparison report"]
    lines.append(f"config_sha256 = {hashlib.sha256(cfg.to_text().encode()).hexdigest()}")
    lines.append(f"seeds = {','.join(str(s) for s in seeds)}")
    lines.append(f"window = {window}")
    lines.append(f"threshold = {_fmt(threshold)}")
    agg = {mode: {"mean_abs_successive_diff": [], "windowed_std": [], "max_spike": [],
                  "auc": [], "post_cer": []} for mode in ("maml", "msl")}
    for seed in seeds:
        digest, stats, cers = per_seed[seed]
        for mode in ("maml", "msl"):
            st = stats[mode]
            pre, post = cers[mode]
            lines.append("")
            lines.append(f"[mode={mode} seed={seed}]")
            lines.append(f"episode_stream_sha256 = {digest}")
            lines.append(f"mean_abs_successive_diff = {_fmt(st.mean_abs_successive_diff)}")
            lines.append(f"windowed_std = {_fmt(st.windowed_std)}")
            lines.append(f"max_spike = {_fmt(st.max_spike)}")
            lines.append(f"auc = {_fmt(st.auc)}")
            lines.append(f"iters_to_threshold = {_fmt(st.iters_to_threshold)}")
            lines.append(f"final_cer_pre_finetune = {_fmt(pre)}")
            lines.append(f"final_cer_post_finetune = {_fmt(post)}")
            agg[mode]["mean_abs_successive_diff"].append(st.mean_abs_successive_diff)
            agg[mode]["windowed_std"].append(st.windowed_std)
            agg[mode]["max_spike"].append(st.max_spike)
            agg[mode]["auc"].append(st.auc)
            if post is not None:
                agg[mode]["post_cer"].append(post)
    lines.append("")
    lines.append("[aggregate]")
    for metric in ("mean_abs_successive_diff", "windowed_std", "max_spike", "auc",
                   "post_cer"):
        means = {}
        for mode in ("maml", "msl"):
            vals = agg[mode][metric]
            means[mode] = float(np.mean(vals)) if vals else None
            lines.append(f"{mode}_mean_{metric} = {_fmt(means[mode])}")
        if means["maml"] and means["msl"] is not None and means["maml"] != 0:
            pct = (means["maml"] - means["msl"]) / means["maml"] * 100.0
            lines.append(f"{metric}_improvement_pct = {_fmt(pct)}")
        else:
            lines.append(f"{metric}_improvement_pct = none")
    return "\n".join(lines) + "\n"


def cmd_emit_plot_data(ns, extras):
    if extras:
        raise ConfigError(f"emit-plot-data takes no overrides, got {extras}")
    records = parse_metrics(ns.metrics)
    if not records:
        raise ConfigError(f"metrics file {ns.metrics} holds no records")
    out_path = Path(ns.out) if ns.out else Path(str(ns.metrics) + ".plot.txt")
    with open(out_path, "w") as f:
        for row in records:
            f.write(f"{row['iter']} {row['outer_loss']}\n")
    print(f"wrote {len(records)} rows to {out_path}")
    return 0


# ---------------------------------------------------------------------------
# entry point


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="mslab",
        description="first-order MAML / multi-step-loss experiment harness")
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="meta-train and write checkpoint + metrics")
    train.add_argument("--config", help="config file (dotted keys)")
    train.add_argument("--seed", type=int, help="override the master seed")
    train.add_argument("--out", help="output directory (default mslab_out)")
    train.set_defaults(fn=cmd_train)

    fte = sub.add_parser("finetune-eval",
                         help="fine-tune a checkpoint on a held-out task and report CER")
    fte.add_argument("--checkpoint", required=True)
    fte.add_argument("--config", help="config file (default: next to checkpoint)")
    fte.add_argument("--seed", type=int)
    fte.add_argument("--out")
    fte.set_defaults(fn=cmd_finetune_eval)

    comp = sub.add_parser("compare",
                          help="run maml and msl on identical episode streams")
    comp.add_argument("--config")
    comp.add_argument("--seeds", required=True, help="comma list, e.g. 0,1,2")
    comp.add_argument("--out")
    comp.set_defaults(fn=cmd_compare)

    plot = sub.add_parser("emit-plot-data",
                          help="dump iteration/loss columns from a metrics file")
    plot.add_argument("--metrics", required=True)
    plot.add_argument("--out")
    plot.set_defaults(fn=cmd_emit_plot_data)
    return parser


def main(argv=None):
    parser = _build_parser()
    ns, extras = parser.parse_known_args(argv)
    try:
        return ns.fn(ns, extras)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DivergenceError as exc:
        print(f"divergence: {exc} (step={exc.step}, episode={exc.episode_id})",
              file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
