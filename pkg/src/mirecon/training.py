"""Minibatch training loop with per-epoch checkpoints and resumable state."""

from __future__ import annotations

import csv
import logging
import os
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Tuple

import numpy as np
import torch

from .datagen import SampleBatch
from .errors import ContractError
from .network import IndicatorNet, NetworkConfig, build_model, load_checkpoint, save_checkpoint

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 64
    epochs: int = 10
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    n_d: int = 200
    n_s: int = 1000
    k: int = 10
    c: int = 16
    widths: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.lr < 0 or self.batch_size < 1 or self.epochs < 0:
            raise ContractError("lr must be >= 0, batch_size >= 1, epochs >= 0")

    def network_config(self) -> NetworkConfig:
        return NetworkConfig(n_d=self.n_d, n_s=self.n_s, k=self.k, c=self.c, **self.widths)


def set_deterministic(threads: int = 1):
    torch.set_num_threads(threads)
    torch.use_deterministic_algorithms(True)


def _optimizer_state(opt: torch.optim.Adam, model: IndicatorNet):
    tensors, step = {}, 0
    for name, p in model.named_parameters():
        st = opt.state.get(p)
        if st:
            tensors[f"adam.exp_avg.{name}"] = st["exp_avg"].detach().numpy()
            tensors[f"adam.exp_avg_sq.{name}"] = st["exp_avg_sq"].detach().numpy()
            step = int(st["step"])
    return tensors, step


def _restore_optimizer(opt, model, extra, step):
    dtype = next(model.parameters()).dtype
    for name, p in model.named_parameters():
        key = f"adam.exp_avg.{name}"
        if key in extra:
            opt.state[p] = {
                "step": torch.tensor(float(step)),
                "exp_avg": torch.as_tensor(extra[key], dtype=dtype).clone(),
                "exp_avg_sq": torch.as_tensor(extra[f"adam.exp_avg_sq.{name}"], dtype=dtype).clone(),
            }


def train(data: SampleBatch, cfg: TrainConfig, out_dir: Optional[str] = None, resume: Optional[str] = None,
          model: Optional[IndicatorNet] = None, dtype=torch.float32) -> Tuple[IndicatorNet, List[Tuple[int, float]]]:
    """Adam on the mean L2 loss. Returns the model and (step, loss) history.

    With ``out_dir`` a checkpoint is written after every epoch
    (``epoch_XXXX.lmic`` and ``last.lmic``) together with ``loss.csv``.
    """
    if data.dims != (cfg.n_d, cfg.n_s, cfg.k):
        raise ContractError(f"dataset dims (n_d, n_s, k) = {data.dims} do not match config "
                            f"{(cfg.n_d, cfg.n_s, cfg.k)}")
    if len(data) == 0:
        raise ContractError("empty training set")
    history: List[Tuple[int, float]] = []
    start_epoch, step = 0, 0
    extra = {}
    if resume is not None:
        model, meta, extra = load_checkpoint(resume, dtype=dtype)
        start_epoch = int(meta.get("epoch", 0))
        step = int(meta.get("step", 0))
        history = [tuple(h) for h in meta.get("history", [])]
    elif model is None:
        model = build_model(cfg.network_config(), seed=cfg.seed, dtype=dtype)
    if (model.cfg.n_d, model.cfg.n_s, model.cfg.k) != data.dims:
        raise ContractError("model dims do not match the dataset")

    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr, betas=(cfg.beta1, cfg.beta2), eps=cfg.eps)
    if extra:
        _restore_optimizer(opt, model, extra, step)
    elif out_dir is not None and resume is None:
        os.makedirs(out_dir, exist_ok=True)
        meta = {"epoch": 0, "step": 0, "train": asdict(cfg), "history": []}
        save_checkpoint(os.path.join(out_dir, "epoch_0000.lmic"), model, meta)

    tensors = [torch.as_tensor(np.asarray(a), dtype=dtype)
               for a in (data.patch, data.subsample, data.knn_features, data.target)]
    n = len(data)
    for epoch in range(start_epoch, cfg.epochs):
        order = np.random.default_rng([cfg.seed, epoch]).permutation(n)
        model.train()
        for s in range(0, n, cfg.batch_size):
            idx = torch.as_tensor(order[s : s + cfg.batch_size])
            p, u, k, t = (x[idx] for x in tensors)
            opt.zero_grad()
            loss = ((model(p, u, k) - t) ** 2).mean()
            loss.backward()
            opt.step()
            step += 1
            history.append((step, loss.item()))
        log.info("epoch %d  step %d  loss %.6f", epoch + 1, step, history[-1][1])
        if out_dir is not None:
            os.makedirs(out_dir, exist_ok=True)
            opt_tensors, _ = _optimizer_state(opt, model)
            meta = {"epoch": epoch + 1, "step": step, "train": asdict(cfg), "history": history}
            save_checkpoint(os.path.join(out_dir, f"epoch_{epoch + 1:04d}.lmic"), model, meta, opt_tensors)
            save_checkpoint(os.path.join(out_dir, "last.lmic"), model, meta, opt_tensors)
            write_loss_csv(os.path.join(out_dir, "loss.csv"), history)
    model.eval()
    return model, history


def write_loss_csv(path, history):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "loss"])
        for step, loss in history:
            w.writerow([step, repr(float(loss))])


def read_loss_csv(path):
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    return [(int(r["step"]), float(r["loss"])) for r in rows]
