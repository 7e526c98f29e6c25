"""Finite-difference gradient check shared by the unit and acceptance tests."""

import numpy as np
import torch
import torch.nn as nn

from mirecon.datagen import build_samples
from mirecon.geometry import icosphere, sample_surface
from mirecon.network import NetworkConfig, backward, build_model

TINY = dict(point_dims=(8, 8), sef_dims=(8, 8), pool_dims=(8, 16), latent_dims=(16,), contrib_dims=(16, 8),
            combine_dims=(8,), stn_dims=(8, 16), stn_fc_dims=(8,))


def tiny_problem(seed, n_d=8, n_s=16, k=3, c=4, n_queries=3):
    """float64 model with randomized weights plus a small batch from a sphere cloud."""
    cfg = NetworkConfig(n_d=n_d, n_s=n_s, k=k, c=c, **TINY)
    model = build_model(cfg, seed=seed, dtype=torch.float64)
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        # move off the structured init (zero STN weights) so every tensor gets a gradient
        for p in model.parameters():
            p.add_(0.05 * torch.randn(p.shape, generator=gen, dtype=p.dtype))
    rng = np.random.default_rng(seed)
    cloud = sample_surface(icosphere(2, 0.5, (0.5, 0.5, 0.5)), 200, seed)
    batch = build_samples(cloud, rng.random((n_queries, 3)), n_d, n_s, k, seed=seed, targets=rng.random(n_queries))
    return model, batch


def _pattern_recorder(model):
    """Hooks that record every ReLU on/off state and every max-pool winner."""
    store = []
    hooks = [m.register_forward_hook(lambda mod, i, o: store.append(i[0] > 0))
             for m in model.modules() if isinstance(m, nn.ReLU)]
    for m in (model.stn.point_mlp, model.sef.mlp, model.patch_pool_mlp, model.shape_pool_mlp):
        hooks.append(m.register_forward_hook(lambda mod, i, o: store.append(o.argmax(dim=-2))))
    return store, hooks


def fd_check(model, batch, h=1e-4, names=None, max_coords=None, seed=0):
    """Compare autograd with central differences.

    Returns {name: (rel_error, rel_error_on_smooth_coords, n_kink_coords)}.
    A coordinate counts as a kink crossing when its +-h stencil changes any
    ReLU state or max-pool winner; there the difference quotient is not a
    derivative estimate.
    """
    grads = backward(batch, batch.target, model)
    x = [torch.as_tensor(np.asarray(a), dtype=torch.float64) for a in (batch.patch, batch.subsample, batch.knn_features)]
    t = torch.as_tensor(batch.target, dtype=torch.float64)
    store, hooks = _pattern_recorder(model)

    def loss():
        store.clear()
        with torch.no_grad():
            value = float(((model(*x) - t) ** 2).mean())
        return value, [s.clone() for s in store]

    _, base = loss()
    rng = np.random.default_rng(seed)
    out = {}
    try:
        for name, p in model.named_parameters():
            if names is not None and name not in names:
                continue
            flat = p.data.view(-1)
            coords = np.arange(flat.numel())
            if max_coords is not None and len(coords) > max_coords:
                coords = np.sort(rng.choice(coords, max_coords, replace=False))
            fd = np.empty(len(coords))
            smooth = np.ones(len(coords), dtype=bool)
            for j, i in enumerate(coords):
                old = flat[i].item()
                flat[i] = old + h
                lp, pp = loss()
                flat[i] = old - h
                lm, pm = loss()
                flat[i] = old
                fd[j] = (lp - lm) / (2 * h)
                smooth[j] = all(torch.equal(a, b) for a, b in zip(base, pp)) and \
                    all(torch.equal(a, b) for a, b in zip(base, pm))
            g = grads[name].reshape(-1)[coords]
            out[name] = (_rel(fd, g), _rel(fd[smooth], g[smooth]), int((~smooth).sum()))
    finally:
        for hk in hooks:
            hk.remove()
    return out


def _rel(a, b):
    if len(a) == 0:
        return 0.0
    den = np.linalg.norm(a) + np.linalg.norm(b)
    return float(np.linalg.norm(a - b) / den) if den > 0 else 0.0
