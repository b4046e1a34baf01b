"""Loss, schedule and the training loop."""
from __future__ import annotations

import copy
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from . import data as D
from .checkpoint import Checkpoint
from .config import TrainConfig, config_hash, model_hash
from .edges import edge_clues
from .evaluate import evaluate_prepared
from .metrics import report
from .model import ChangeNet, ModelConfig, build_model
from .synthesis import BitemporalSample, augment, make_rng, prepare_inference_pair, synthesize_training_pair

log = logging.getLogger(__name__)


def loss_fn(logits: torch.Tensor, label: torch.Tensor) -> torch.Tensor:
    """Mean two-class cross-entropy on raw logits ``(B, 2, H, W)`` against ``(B, H, W)`` labels."""
    if logits.shape[-2:] != label.shape[-2:]:
        raise ValueError(f"logits {tuple(logits.shape)} and labels {tuple(label.shape)} differ spatially")
    loss = F.cross_entropy(logits, label.long())
    if not torch.isfinite(loss):
        raise FloatingPointError(f"non-finite loss {loss.item()}")
    return loss


def lr_schedule(step: int, total_steps: int, lr0: float = 0.01) -> float:
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    return lr0 * (1.0 - step / total_steps)


def make_optimizer(model: torch.nn.Module, cfg: TrainConfig) -> torch.optim.SGD:
    # torch SGD: b <- mu * b + (g + wd * w); w <- w - lr * b  (coupled weight decay)
    return torch.optim.SGD(model.parameters(), lr=cfg.lr0, momentum=cfg.momentum, weight_decay=cfg.weight_decay)


def training_sample(sample: BitemporalSample, cfg: TrainConfig, rng: np.random.Generator, record=None):
    """Synthesize, augment and compute edge clues for one sample."""
    s = synthesize_training_pair(sample, cfg.synthesis, rng, record)
    s = augment(s, rng, cfg.synthesis, record)
    x0 = None
    if cfg.model.uses_edges:
        if cfg.model.edge_source == "unswapped":
            x0 = edge_clues(s.hr, s.lr_upsampled, cfg.model.canny)
        else:
            x0 = edge_clues(s.pre, s.post, cfg.model.canny)
    return s, x0


def collate(samples, x0s=None, dtype=torch.float32):
    to_t = lambda arrs: torch.from_numpy(np.stack(arrs)).permute(0, 3, 1, 2).to(dtype)
    pre = to_t([s.pre for s in samples])
    post = to_t([s.post for s in samples])
    label = torch.from_numpy(np.stack([s.label for s in samples]).astype(np.int64))
    x0 = None
    if x0s is not None and all(x is not None for x in x0s):
        x0 = to_t(list(x0s))
    return pre, post, x0, label


@dataclass
class TrainResult:
    model: ChangeNet
    best: Checkpoint
    last: Checkpoint
    history: list = field(default_factory=list)


def _manifest(cfg: TrainConfig, epoch: int, step: int, best_f1: float, history: list) -> dict:
    return {
        "config": cfg.to_dict(),
        "config_hash": config_hash(cfg.to_dict()),
        "model_hash": model_hash(cfg.model),
        "seed": cfg.seed,
        "epoch": epoch,
        "step": step,
        "best_val_f1": best_f1,
        "history": copy.deepcopy(history),
    }


def _epoch_seed(seed: int, epoch: int) -> int:
    return int(np.random.SeedSequence(seed, spawn_key=(3, epoch)).generate_state(1)[0])


def train(cfg: TrainConfig, train_set: list[BitemporalSample], val_set: list[BitemporalSample] | None = None,
          out_dir=None, resume: Checkpoint | None = None, stop_after_epoch: int | None = None) -> TrainResult:
    """Train with SGD and a linearly decaying rate, keeping the best-validation checkpoint.

    ``train_set`` holds samples with the LR slot at LR size (ratio recorded);
    ``val_set`` defaults to the training samples. Validation runs at each
    sample's own ratio. ``stop_after_epoch`` ends the run early (for resume tests)
    without changing the schedule.
    """
    if not train_set:
        raise ValueError("training set is empty")
    val_set = val_set if val_set is not None else train_set
    if not val_set:
        raise ValueError("validation set is empty")
    val_prepared = [prepare_inference_pair(s) for s in val_set]
    torch.manual_seed(cfg.seed)
    model = build_model(cfg.model)
    opt = make_optimizer(model, cfg)
    n = len(train_set)
    steps_per_epoch = math.ceil(n / cfg.batch_size)
    total = cfg.epochs * steps_per_epoch
    max_steps = min(total, cfg.max_iters) if cfg.max_iters else total

    start_epoch, step, best_f1, history = 0, 0, -1.0, []
    if resume is not None:
        resume.validate(model_hash(cfg.model))
        resume.load_into(model, opt)
        start_epoch = resume.manifest["epoch"] + 1
        step = resume.manifest["step"]
        best_f1 = resume.manifest["best_val_f1"]
        history = list(resume.manifest["history"])

    out_dir = Path(out_dir) if out_dir else None
    jsonl = None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
        jsonl = open(out_dir / "train_log.jsonl", "a")
    best_ckpt = last = None
    if out_dir and (out_dir / "best.ckpt").exists() and resume is not None:
        best_ckpt = Checkpoint.load(out_dir / "best.ckpt")
    try:
        for epoch in range(start_epoch, cfg.epochs):
            if step >= max_steps:
                break
            torch.manual_seed(_epoch_seed(cfg.seed, epoch))
            model.train()
            losses = []
            for idxs in D.batches(n, cfg.batch_size, cfg.seed, epoch):
                if step >= max_steps:
                    break
                lr = lr_schedule(step, total, cfg.lr0)
                for g in opt.param_groups:
                    g["lr"] = lr
                prepared = [training_sample(train_set[i], cfg, make_rng(cfg.seed, epoch, i)) for i in idxs]
                pre, post, x0, label = collate([p[0] for p in prepared], [p[1] for p in prepared])
                loss = loss_fn(model.hr_logits(pre, post, x0), label)
                opt.zero_grad(set_to_none=True)
                loss.backward()
                opt.step()
                losses.append(loss.item())
                step += 1
            rep = report(evaluate_prepared(model, val_prepared, cfg.eval_batch_size))
            entry = {"epoch": epoch, "step": step, "loss": float(np.mean(losses)) if losses else float("nan"),
                     "losses": losses, "lr": lr_schedule(min(step, total), total, cfg.lr0), "val_f1": rep.f1,
                     "val": rep.as_dict()}
            history.append(entry)
            log.info("epoch %d  loss %.4f  lr %.5f  val F1 %.4f", epoch, entry["loss"], entry["lr"], rep.f1)
            if jsonl:
                jsonl.write(json.dumps(entry) + "\n")
                jsonl.flush()
            if rep.f1 > best_f1:
                best_f1 = rep.f1
                best_ckpt = Checkpoint.from_model(model, _manifest(cfg, epoch, step, best_f1, history))
                if out_dir:
                    best_ckpt.save(out_dir / "best.ckpt")
            last = Checkpoint.from_model(model, _manifest(cfg, epoch, step, best_f1, history), opt)
            if out_dir:
                last.save(out_dir / "last.ckpt")
            if stop_after_epoch is not None and epoch >= stop_after_epoch:
                break
    finally:
        if jsonl:
            jsonl.close()
    if last is None:
        last = Checkpoint.from_model(model, _manifest(cfg, start_epoch - 1, step, best_f1, history), opt)
    if best_ckpt is None:
        best_ckpt = last
    return TrainResult(model, best_ckpt, last, history)


def model_from_checkpoint(ckpt: Checkpoint, model_cfg: ModelConfig | None = None) -> ChangeNet:
    """Rebuild the network recorded in ``ckpt``; a given ``model_cfg`` must match it."""
    recorded = ModelConfig(**ckpt.manifest["config"]["model"])
    ckpt.validate(model_hash(model_cfg) if model_cfg is not None else None)
    model = build_model(model_cfg or recorded)
    ckpt.load_into(model)
    return model.eval()


def train_config_of(ckpt: Checkpoint) -> TrainConfig:
    return TrainConfig.from_dict(copy.deepcopy(ckpt.manifest["config"]))
