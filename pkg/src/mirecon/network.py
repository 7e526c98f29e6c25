"""Dual-branch point-contribution network.

Patch branch (local k-NN patch) and shape branch (global subsample) share
one spatial transformer. Each branch turns its points into per-point
contribution vectors that are summed, and a small head combines the two
sums into the predicted modified indicator.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from typing import Dict, Tuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .datagen import QuerySample, SampleBatch
from .errors import ContractError, FormatError, NumericError


@dataclass
class NetworkConfig:
    """Sample sizes and layer widths. Defaults follow the full-size model."""

    n_d: int = 200
    n_s: int = 1000
    k: int = 10
    c: int = 16
    point_dims: Tuple[int, ...] = (64, 64)
    sef_dims: Tuple[int, ...] = (64, 64)
    pool_dims: Tuple[int, ...] = (128, 1024)
    latent_dims: Tuple[int, ...] = (1024, 1024)
    contrib_dims: Tuple[int, ...] = (256, 64)
    combine_dims: Tuple[int, ...] = (64,)
    stn_dims: Tuple[int, ...] = (64, 128, 256)
    stn_fc_dims: Tuple[int, ...] = (128,)

    def __post_init__(self):
        for name in ("point_dims", "sef_dims", "pool_dims", "latent_dims", "contrib_dims", "combine_dims",
                     "stn_dims", "stn_fc_dims"):
            setattr(self, name, tuple(int(d) for d in getattr(self, name)))
        for name in ("n_d", "n_s", "k", "c"):
            if int(getattr(self, name)) < 1:
                raise ContractError(f"{name} must be positive")

    @property
    def point_dim(self):
        return self.point_dims[-1]

    @property
    def local_dim(self):
        return self.sef_dims[-1]

    @property
    def global_dim(self):
        return self.pool_dims[-1]

    @property
    def latent_dim(self):
        return self.latent_dims[-1]

    def to_dict(self):
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


DESK_CONFIG = dict(
    point_dims=(32, 32), sef_dims=(32, 32), pool_dims=(64, 128), latent_dims=(128,),
    contrib_dims=(64, 32), combine_dims=(32,), stn_dims=(32, 64), stn_fc_dims=(32,),
)


def _mlp(dims, last_act=True):
    layers = []
    for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
        layers.append(nn.Linear(a, b))
        if last_act or i < len(dims) - 2:
            layers.append(nn.ReLU())
    return nn.Sequential(*layers)


def _check(x, name):
    if not torch.isfinite(x).all():
        raise NumericError("non-finite activation", where=name)
    return x


class STN(nn.Module):
    """Regresses a 3x3 transform from a point set; identity at init."""

    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        self.point_mlp = _mlp((3,) + cfg.stn_dims)
        self.fc = _mlp((cfg.stn_dims[-1],) + cfg.stn_fc_dims)
        self.out = nn.Linear(cfg.stn_fc_dims[-1], 9)
        nn.init.zeros_(self.out.weight)
        with torch.no_grad():
            self.out.bias.copy_(torch.eye(3).flatten())

    def forward(self, points):
        feat = self.point_mlp(points).max(dim=-2).values
        return self.out(self.fc(feat)).view(*points.shape[:-2], 3, 3)


class SEF(nn.Module):
    """Local surface-element features from each point's k nearest neighbours."""

    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        self.k = cfg.k
        self.mlp = _mlp((cfg.point_dim + 3,) + cfg.sef_dims)

    def forward(self, point_feat, knn):
        # point_feat (..., n, f); knn (..., n, k, 3)
        if knn.shape[-2] != self.k:
            raise ContractError(f"k-NN features have k={knn.shape[-2]}, model expects k={self.k}")
        own = point_feat.unsqueeze(-2).expand(*knn.shape[:-1], point_feat.shape[-1])
        local = self.mlp(torch.cat([own, knn], dim=-1)).max(dim=-2).values
        return torch.cat([point_feat, local], dim=-1)


class ContributionHead(nn.Module):
    """Per-point MLP over [per-point features | latent], summed over points.

    The first layer is split so the latent part is computed once per sample
    instead of once per point; the result is identical to concatenation.
    """

    def __init__(self, point_in, latent_in, dims, c, n_points):
        super().__init__()
        self.first = nn.Linear(point_in + latent_in, dims[0])
        self.point_in = point_in
        self.act = nn.ReLU()
        self.rest = _mlp(dims, last_act=True) if len(dims) > 1 else nn.Identity()
        self.out = nn.Linear(dims[-1], c)
        with torch.no_grad():
            # keep the initial sum over n points in a sane range
            self.out.weight.mul_(1.0 / n_points)
            self.out.bias.mul_(1.0 / n_points)

    def forward(self, feat, latent):
        w, b = self.first.weight, self.first.bias
        h = F.linear(feat, w[:, : self.point_in]) + F.linear(latent, w[:, self.point_in :], b).unsqueeze(-2)
        per_point = self.out(self.rest(self.act(h)))
        return per_point.sum(dim=-2)


class IndicatorNet(nn.Module):
    def __init__(self, cfg: NetworkConfig = None):
        super().__init__()
        cfg = cfg or NetworkConfig()
        self.cfg = cfg
        self.stn = STN(cfg)
        self.patch_point_mlp = _mlp((3,) + cfg.point_dims)
        self.shape_point_mlp = _mlp((3,) + cfg.point_dims)
        self.sef = SEF(cfg)
        self.patch_pool_mlp = _mlp((cfg.point_dim + cfg.local_dim,) + cfg.pool_dims)
        self.shape_pool_mlp = _mlp((cfg.point_dim,) + cfg.pool_dims)
        self.patch_global_fc = _mlp((2 * cfg.global_dim,) + cfg.latent_dims)
        self.shape_global_fc = _mlp((2 * cfg.global_dim,) + cfg.latent_dims)
        self.patch_contrib = ContributionHead(cfg.point_dim + cfg.local_dim, cfg.latent_dim, cfg.contrib_dims,
                                              cfg.c, cfg.n_d)
        self.shape_contrib = ContributionHead(cfg.point_dim, cfg.latent_dim, cfg.contrib_dims, cfg.c, cfg.n_s)
        self.combine_fc = nn.Sequential(_mlp((2 * cfg.c,) + cfg.combine_dims), nn.Linear(cfg.combine_dims[-1], 1))

    def transform(self, patch, subsample, knn):
        """Apply the shared spatial transform to both branches and the k-NN coordinates."""
        t = self.stn(torch.cat([patch, subsample], dim=-2))
        return t, patch @ t, subsample @ t, knn @ t.unsqueeze(-3)

    def forward(self, patch, subsample, knn, check=True):
        chk = _check if check else (lambda x, name: x)
        if patch.shape[-2] != self.cfg.n_d or subsample.shape[-2] != self.cfg.n_s:
            raise ContractError(f"sample dims ({patch.shape[-2]}, {subsample.shape[-2]}) do not match "
                                f"model ({self.cfg.n_d}, {self.cfg.n_s})")
        _, patch, subsample, knn = self.transform(patch, subsample, knn)
        chk(patch, "stn")
        pf = chk(self.patch_point_mlp(patch), "patch_point_mlp")
        sf = chk(self.shape_point_mlp(subsample), "shape_point_mlp")
        pl = chk(self.sef(pf, knn), "sef")
        g = torch.cat([self.patch_pool_mlp(pl).max(dim=-2).values,
                       self.shape_pool_mlp(sf).max(dim=-2).values], dim=-1)
        chk(g, "global_pool")
        pz = chk(self.patch_global_fc(g), "patch_global_fc")
        sz = chk(self.shape_global_fc(g), "shape_global_fc")
        pc = chk(self.patch_contrib(pl, pz), "patch_contrib")
        sc = chk(self.shape_contrib(sf, sz), "shape_contrib")
        logit = chk(self.combine_fc(torch.cat([pc, sc], dim=-1)).squeeze(-1), "combine_fc")
        return torch.sigmoid(logit)

    def predict(self, batch: SampleBatch, batch_size: int = 256) -> np.ndarray:
        dtype = next(self.parameters()).dtype
        out = np.empty(len(batch))
        with torch.no_grad():
            for s in range(0, len(batch), batch_size):
                sl = slice(s, s + batch_size)
                p, u, k = (torch.as_tensor(np.asarray(a[sl]), dtype=dtype)
                           for a in (batch.patch, batch.subsample, batch.knn_features))
                out[sl] = self(p, u, k).numpy()
        return out


def build_model(cfg: NetworkConfig = None, seed: int = 0, dtype=torch.float32) -> IndicatorNet:
    torch.manual_seed(seed)
    return IndicatorNet(cfg).to(dtype)


def _as_tensors(sample, dtype):
    if isinstance(sample, QuerySample):
        arrays = (sample.patch[None], sample.subsample[None], sample.knn_features[None])
    else:
        arrays = (sample.patch, sample.subsample, sample.knn_features)
    return [torch.as_tensor(np.asarray(a), dtype=dtype) for a in arrays]


def stn_forward(points, model: IndicatorNet):
    """(3x3 transform, transformed points) for one centered point set."""
    dtype = next(model.parameters()).dtype
    p = torch.as_tensor(np.asarray(points), dtype=dtype)
    with torch.no_grad():
        t = model.stn(p)
        return t.numpy(), (p @ t).numpy()


def sef_forward(point_features, knn_features, model: IndicatorNet):
    dtype = next(model.parameters()).dtype
    with torch.no_grad():
        return model.sef(torch.as_tensor(np.asarray(point_features), dtype=dtype),
                         torch.as_tensor(np.asarray(knn_features), dtype=dtype)).numpy()


def network_forward(sample, model: IndicatorNet):
    """Prediction in [0, 1] for a QuerySample (float) or SampleBatch (array)."""
    dtype = next(model.parameters()).dtype
    with torch.no_grad():
        out = model(*_as_tensors(sample, dtype)).numpy()
    return float(out[0]) if isinstance(sample, QuerySample) else out


def loss_l2(pred, target):
    """Mean squared error; works on scalars, arrays and tensors."""
    if isinstance(pred, torch.Tensor):
        return ((pred - target) ** 2).mean()
    return float(np.mean((np.asarray(pred, dtype=np.float64) - np.asarray(target, dtype=np.float64)) ** 2))


def backward(sample, target, model: IndicatorNet) -> Dict[str, np.ndarray]:
    """Gradient of the (batch-mean) L2 loss with respect to every parameter."""
    dtype = next(model.parameters()).dtype
    model.zero_grad(set_to_none=False)
    pred = model(*_as_tensors(sample, dtype))
    loss = loss_l2(pred, torch.as_tensor(np.asarray(target), dtype=dtype).reshape(pred.shape))
    loss.backward()
    return {name: p.grad.detach().numpy().copy() for name, p in model.named_parameters()}


# ---------------------------------------------------------------------------
# checkpoint file: b"LMIC" | u32 version | u32 meta_len | meta JSON | u32 n_tensors
#                  then per tensor: u16 name_len | name | u8 ndim | u32 dims[ndim] | f32 data

CKPT_MAGIC = b"LMIC"
CKPT_VERSION = 1


def save_checkpoint(path, model: IndicatorNet, meta: dict = None, extra: Dict[str, np.ndarray] = None):
    tensors = {name: p.detach().cpu().numpy() for name, p in model.state_dict().items()}
    tensors.update(extra or {})
    meta = dict(meta or {}, network=model.cfg.to_dict())
    text = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sII", CKPT_MAGIC, CKPT_VERSION, len(text)))
        fh.write(text)
        fh.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors.items():
            arr = np.ascontiguousarray(arr, dtype="<f4")
            raw = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def read_checkpoint(path) -> Tuple[dict, Dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        data = fh.read()
    try:
        magic, version, mlen = struct.unpack_from("<4sII", data, 0)
        if magic != CKPT_MAGIC:
            raise FormatError(f"bad checkpoint magic {magic!r}")
        if version != CKPT_VERSION:
            raise FormatError(f"unsupported checkpoint version {version}")
        off = 12
        meta = json.loads(data[off : off + mlen].decode("utf-8"))
        off += mlen
        (n,) = struct.unpack_from("<I", data, off)
        off += 4
        tensors = {}
        for _ in range(n):
            (ln,) = struct.unpack_from("<H", data, off)
            name = data[off + 2 : off + 2 + ln].decode("utf-8")
            off += 2 + ln
            (nd,) = struct.unpack_from("<B", data, off)
            shape = struct.unpack_from(f"<{nd}I", data, off + 1)
            off += 1 + 4 * nd
            count = int(np.prod(shape)) if nd else 1
            if off + 4 * count > len(data):
                raise FormatError(f"tensor {name} truncated")
            tensors[name] = np.frombuffer(data, "<f4", count, off).reshape(shape).copy()
            off += 4 * count
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"corrupt checkpoint: {exc}") from None
    return meta, tensors


def load_checkpoint(path, dtype=torch.float32) -> Tuple[IndicatorNet, dict, Dict[str, np.ndarray]]:
    """Rebuild the model; returns (model, meta, non-model tensors such as optimizer state)."""
    meta, tensors = read_checkpoint(path)
    model = IndicatorNet(NetworkConfig(**meta["network"])).to(dtype)
    state = model.state_dict()
    missing = [k for k in state if k not in tensors]
    if missing:
        raise FormatError(f"checkpoint lacks tensors {missing[:3]}")
    for k in state:
        if tuple(state[k].shape) != tensors[k].shape:
            raise ContractError(f"tensor {k} has shape {tensors[k].shape}, model expects {tuple(state[k].shape)}")
    model.load_state_dict({k: torch.as_tensor(tensors[k], dtype=dtype) for k in state})
    extra = {k: v for k, v in tensors.items() if k not in state}
    return model, meta, extra
