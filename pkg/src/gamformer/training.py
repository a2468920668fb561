"""Pretraining on synthetic tasks and checkpoint files.

Checkpoint layout (``.gamf``, little-endian)::

    b"GAMF"  u16 version  u32 header_len  header (utf-8 JSON)
    for each parameter in header["params"] order: f32 values
    for each parameter: f32 first moment, f32 second moment

The header holds model/prior/train configs, parameter names and shapes, the
step counter, the optimizer step count, the loss EMA and the task-stream
seed. Tasks for step ``s`` are drawn from seeds ``(seed, s, i)``, so
``(seed, step)`` is the complete RNG state of a run.
"""

from __future__ import annotations

import json
import logging
import math
import struct
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Iterator

import numpy as np
import torch

from .binning import assign_bins
from .model import GAMformerNet, ModelConfig, prepare_context
from .priors import PriorConfig, SupervisedTask, sample_task
from .shapes import FormatError

log = logging.getLogger(__name__)

CKPT_MAGIC = b"GAMF"
CKPT_VERSION = 1


class TrainingDiverged(FloatingPointError):
    """Loss became NaN/Inf; a diagnostic checkpoint was written if possible."""


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    batch_size: int = 16
    batch_doubling_steps: tuple[int, ...] = ()
    lr: float = 1e-3
    lr_min: float = 1e-6
    warmup_steps: int = 100
    beta1: float = 0.9
    beta2: float = 0.99
    weight_decay: float = 0.01
    eps: float = 1e-8
    grad_clip: float = 1.0
    ema_decay: float = 0.95
    seed: int = 0
    workers: int = 1
    checkpoint_every: int = 0
    prior: PriorConfig = field(default_factory=PriorConfig)
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if self.warmup_steps >= self.steps:
            raise ValueError("warmup_steps must be below steps")
        if self.lr_min > self.lr:
            raise ValueError("lr_min must not exceed lr")

    def batch_at(self, step: int) -> int:
        return self.batch_size * 2 ** sum(step >= s for s in self.batch_doubling_steps)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["prior"] = asdict(self.prior)
        d["model"] = asdict(self.model)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        prior = PriorConfig.from_dict(d.pop("prior", {}))
        model = ModelConfig(**d.pop("model", {}))
        known = {f.name for f in fields(cls)}
        bad = set(d) - known
        if bad:
            raise KeyError(f"unknown train options {sorted(bad)}")
        if "batch_doubling_steps" in d:
            d["batch_doubling_steps"] = tuple(d["batch_doubling_steps"])
        return cls(prior=prior, model=model, **d)


def _parse_value(text: str):
    text = text.strip()
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        pass
    if "," in text:
        return [_parse_value(t) for t in text.split(",") if t.strip()]
    return text


def parse_overrides(lines) -> dict:
    """Flat ``key=value`` lines -> nested dict (``prior.x`` / ``model.x``)."""
    out: dict = {}
    for raw in lines:
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line without '=': {raw!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        target = out
        if "." in key:
            section, key = key.split(".", 1)
            target = out.setdefault(section, {})
        target[key] = _parse_value(val)
    return out


def load_config(path=None, overrides=()) -> TrainConfig:
    d: dict = {}
    if path is not None:
        d = parse_overrides(Path(path).read_text().splitlines())
    for section, vals in parse_overrides(overrides).items():
        if isinstance(vals, dict):
            d.setdefault(section, {}).update(vals)
        else:
            d[section] = vals
    return TrainConfig.from_dict(d)


def cosine_lr(step: int, cfg: TrainConfig) -> float:
    """Linear warmup from 0, then cosine decay to ``lr_min`` at the last step."""
    if step < cfg.warmup_steps:
        return cfg.lr * step / cfg.warmup_steps
    span = max(cfg.steps - cfg.warmup_steps, 1)
    frac = min((step - cfg.warmup_steps) / span, 1.0)
    return cfg.lr_min + 0.5 * (cfg.lr - cfg.lr_min) * (1.0 + math.cos(math.pi * frac))


# loss ------------------------------------------------------------------------


@dataclass
class PreparedTask:
    """A task with its bins already fitted on the train split."""

    train_bins: np.ndarray
    y_train: np.ndarray
    test_bins: np.ndarray
    y_test: np.ndarray
    m: int


def prepare_task(task: SupervisedTask, n_bins: int) -> PreparedTask:
    binned = prepare_context(task.X_train, task.y_train, n_bins, task.categorical_mask)
    Xte = task.X_test
    test_bins = np.column_stack(
        [assign_bins(s, Xte[:, i]) for i, s in enumerate(binned.specs)]
    ) if task.p else np.empty((len(Xte), 0), np.int64)
    return PreparedTask(binned.indices, task.y_train, test_bins.astype(np.int64), task.y_test, task.m)


def gam_logits(shapes: torch.Tensor, bins: torch.Tensor) -> torch.Tensor:
    """Sum of per-feature table lookups: ``(p, n_bins, m)`` x ``(n, p)`` -> ``(n, m)``."""
    p = shapes.shape[0]
    feat = torch.arange(p).expand(bins.shape[0], p)
    return shapes[feat, bins].sum(dim=1)


def task_loss(net: GAMformerNet, task) -> torch.Tensor:
    """Mean cross-entropy of the in-context GAM on the task's test rows."""
    if isinstance(task, SupervisedTask):
        task = prepare_task(task, net.config.n_bins)
    shapes = net(torch.from_numpy(task.train_bins), torch.from_numpy(task.y_train), task.m)
    logits = gam_logits(shapes, torch.from_numpy(task.test_bins))
    return torch.nn.functional.cross_entropy(logits, torch.from_numpy(task.y_test))


# data stream -----------------------------------------------------------------


def _make_task(args) -> PreparedTask:
    prior, n_bins, seed = args
    return prepare_task(sample_task(prior, seed), n_bins)


def task_seeds(cfg: TrainConfig, step: int) -> list[tuple[int, int, int]]:
    return [(cfg.seed, step, i) for i in range(cfg.batch_at(step))]


class TaskStream:
    """Batches of prepared tasks; order depends only on seeds, not workers."""

    def __init__(self, cfg: TrainConfig):
        self.cfg = cfg
        self.pool = ProcessPoolExecutor(cfg.workers) if cfg.workers > 1 else None

    def batch(self, step: int) -> list[PreparedTask]:
        args = [(self.cfg.prior, self.cfg.model.n_bins, s) for s in task_seeds(self.cfg, step)]
        if self.pool is None:
            return [_make_task(a) for a in args]
        return list(self.pool.map(_make_task, args))

    def close(self):
        if self.pool is not None:
            self.pool.shutdown()


# trainer ---------------------------------------------------------------------


def make_optimizer(params, cfg: TrainConfig) -> torch.optim.AdamW:
    """AdamW with decoupled weight decay; the learning rate is set per step."""
    return torch.optim.AdamW(
        params,
        lr=cfg.lr,
        betas=(cfg.beta1, cfg.beta2),
        eps=cfg.eps,
        weight_decay=cfg.weight_decay,
    )


class Trainer:
    """Owns the network, the AdamW state and the step counter."""

    def __init__(self, cfg: TrainConfig, net: GAMformerNet | None = None):
        self.cfg = cfg
        if net is None:
            torch.manual_seed(cfg.seed)
            net = GAMformerNet(cfg.model)
        self.net = net
        self.opt = make_optimizer(net.parameters(), cfg)
        self.step = 0
        self.ema: float | None = None
        self.stream = TaskStream(cfg)

    def train_step(self) -> dict:
        t0 = time.perf_counter()
        batch = self.stream.batch(self.step)
        lr = cosine_lr(self.step, self.cfg)
        for g in self.opt.param_groups:
            g["lr"] = lr
        self.opt.zero_grad(set_to_none=False)
        total = 0.0
        for task in batch:
            loss = task_loss(self.net, task) / len(batch)
            if not torch.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at step {self.step}")
            loss.backward()
            total += loss.item()
        if self.cfg.grad_clip:
            torch.nn.utils.clip_grad_norm_(self.net.parameters(), self.cfg.grad_clip)
        self.opt.step()
        self.ema = total if self.ema is None else self.cfg.ema_decay * self.ema + (1 - self.cfg.ema_decay) * total
        record = {
            "step": self.step,
            "lr": lr,
            "loss": total,
            "loss_ema": self.ema,
            "tasks_per_sec": len(batch) / (time.perf_counter() - t0),
        }
        self.step += 1
        return record

    def run(self, steps: int | None = None, out_dir=None, log_file=None) -> Iterator[dict]:
        """Train until ``steps`` (default ``cfg.steps``), yielding log records."""
        end = self.cfg.steps if steps is None else steps
        out = Path(out_dir) if out_dir is not None else None
        fh = open(log_file, "a") if log_file else None
        try:
            while self.step < end:
                try:
                    rec = self.train_step()
                except TrainingDiverged:
                    if out is not None:
                        out.mkdir(parents=True, exist_ok=True)
                        save_checkpoint(self, out / "diverged.gamf")
                    raise
                if fh:
                    fh.write(json.dumps(rec) + "\n")
                    fh.flush()
                every = self.cfg.checkpoint_every
                if out is not None and every and self.step % every == 0:
                    out.mkdir(parents=True, exist_ok=True)
                    save_checkpoint(self, out / f"step{self.step:07d}.gamf")
                yield rec
            if out is not None:
                out.mkdir(parents=True, exist_ok=True)
                save_checkpoint(self, out / "final.gamf")
        finally:
            if fh:
                fh.close()

    def close(self):
        self.stream.close()


def train(cfg: TrainConfig, out_dir=None, log_file=None) -> Iterator[dict]:
    trainer = Trainer(cfg)
    try:
        yield from trainer.run(out_dir=out_dir, log_file=log_file)
    finally:
        trainer.close()


# checkpoints -----------------------------------------------------------------


def checkpoint_bytes(trainer: Trainer) -> bytes:
    names, tensors, first, second = [], [], [], []
    opt_steps = []
    for name, p in trainer.net.named_parameters():
        names.append([name, list(p.shape)])
        tensors.append(p.detach().to(torch.float32).cpu().numpy().astype("<f4").tobytes())
        st = trainer.opt.state.get(p, {})
        m1 = st.get("exp_avg", torch.zeros_like(p))
        m2 = st.get("exp_avg_sq", torch.zeros_like(p))
        opt_steps.append(float(st["step"]) if "step" in st else 0.0)
        first.append(m1.detach().to(torch.float32).cpu().numpy().astype("<f4").tobytes())
        second.append(m2.detach().to(torch.float32).cpu().numpy().astype("<f4").tobytes())
    header = {
        "train_config": trainer.cfg.to_dict(),
        "params": names,
        "step": trainer.step,
        "opt_steps": opt_steps,
        "loss_ema": trainer.ema,
        "rng": {"seed": trainer.cfg.seed, "next_step": trainer.step},
    }
    hb = json.dumps(header, sort_keys=True).encode("utf-8")
    return b"".join([CKPT_MAGIC, struct.pack("<HI", CKPT_VERSION, len(hb)), hb, *tensors, *first, *second])


def save_checkpoint(trainer: Trainer, path) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(checkpoint_bytes(trainer))
    tmp.replace(path)


def _decode(buf: bytes):
    if buf[:4] != CKPT_MAGIC:
        raise FormatError("not a checkpoint (bad magic)")
    if len(buf) < 10:
        raise FormatError("truncated checkpoint")
    version, hlen = struct.unpack_from("<HI", buf, 4)
    if version != CKPT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    if 10 + hlen > len(buf):
        raise FormatError("truncated checkpoint header")
    try:
        header = json.loads(buf[10 : 10 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError("corrupt checkpoint header") from exc
    sizes = [int(np.prod(shape)) for _, shape in header["params"]]
    expected = 10 + hlen + 4 * 3 * sum(sizes)
    if len(buf) != expected:
        raise FormatError(f"checkpoint size {len(buf)} != expected {expected}")
    off = 10 + hlen
    arrays = []
    for _ in range(3):
        for (_, shape), size in zip(header["params"], sizes):
            arrays.append(np.frombuffer(buf, "<f4", size, off).reshape(shape).copy())
            off += 4 * size
    k = len(sizes)
    params = arrays[:k]
    m1 = arrays[k : 2 * k]
    m2 = arrays[2 * k :]
    return header, params, m1, m2


def load_checkpoint(path, trainer_cfg_overrides: dict | None = None) -> Trainer:
    """Rebuild a :class:`Trainer` exactly as it was when saved.

    The file is fully validated before any state is constructed.
    """
    buf = Path(path).read_bytes()
    header, params, m1, m2 = _decode(buf)
    cfg = TrainConfig.from_dict(header["train_config"])
    if trainer_cfg_overrides:
        cfg = replace(cfg, **trainer_cfg_overrides)
    net = GAMformerNet(cfg.model)
    named = dict(net.named_parameters())
    if [n for n, _ in header["params"]] != list(named):
        raise FormatError("checkpoint parameter names do not match the model")
    with torch.no_grad():
        for (name, _), arr in zip(header["params"], params):
            named[name].copy_(torch.from_numpy(arr))
    trainer = Trainer(cfg, net)
    for (name, _), a1, a2, st in zip(header["params"], m1, m2, header["opt_steps"]):
        if st > 0:
            trainer.opt.state[named[name]] = {
                "step": torch.tensor(st),
                "exp_avg": torch.from_numpy(a1),
                "exp_avg_sq": torch.from_numpy(a2),
            }
    trainer.step = header["step"]
    trainer.ema = header["loss_ema"]
    return trainer


def load_net(path) -> GAMformerNet:
    """Just the network from a checkpoint, in eval mode."""
    buf = Path(path).read_bytes()
    header, params, _, _ = _decode(buf)
    cfg = TrainConfig.from_dict(header["train_config"])
    net = GAMformerNet(cfg.model)
    named = dict(net.named_parameters())
    with torch.no_grad():
        for (name, _), arr in zip(header["params"], params):
            named[name].copy_(torch.from_numpy(arr))
    return net.eval()


def read_train_config(path) -> TrainConfig:
    """The training configuration stored in a checkpoint header."""
    header, *_ = _decode(Path(path).read_bytes())
    return TrainConfig.from_dict(header["train_config"])
