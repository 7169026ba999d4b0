"""Conditional generators G(eta, z) and their moment-matching training.

A generator maps standard-normal latent noise ``eta`` and a conditioning row
``z`` to a synthetic draw.  Two kinds exist: :class:`GmmnGenerator` (a trained
network fed ``concat(eta, z)``) and the closed-form oracles in
:mod:`drcit.dgp`.  All of them share the batched interface
``sample_batch(z, eta)`` with ``z`` of shape (n, d_z) and ``eta`` of shape
(n, M, latent_dim), returning (n, M, output_dim).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numba
import numpy as np

from . import mlp
from .errors import InputError, TrainingError, UsageError
from .kernels import KernelSpec, as_data_matrix, gram, median_kernel

GENERATOR_FORMAT = "drcit-generator"
GENERATOR_VERSION = 1


class CondGenerator:
    """Base class; subclasses set ``latent_dim``/``output_dim`` and ``_map``."""

    name = "generator"
    latent_dim: int
    output_dim: int
    z_dim: int | None = None

    def _map(self, z, eta):
        raise NotImplementedError

    def sample_batch(self, z, eta) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        eta = np.asarray(eta, dtype=np.float64)
        if z.ndim != 2 or eta.ndim != 3 or eta.shape[0] != z.shape[0]:
            raise UsageError(f"expected z (n, d_z) and eta (n, M, m); got {z.shape} and {eta.shape}")
        if eta.shape[2] != self.latent_dim:
            raise UsageError(f"{self.name}: latent dimension is {self.latent_dim}, noise has {eta.shape[2]}")
        if self.z_dim is not None and z.shape[1] != self.z_dim:
            raise UsageError(f"{self.name}: expects z of dimension {self.z_dim}, got {z.shape[1]}")
        out = self._map(z, eta)
        return out.reshape(eta.shape[0], eta.shape[1], self.output_dim)

    def sample(self, z, eta) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64).reshape(1, -1)
        eta = np.asarray(eta, dtype=np.float64).reshape(1, 1, -1)
        return self.sample_batch(z, eta)[0, 0]

    def describe(self) -> dict:
        return {"kind": self.name, "latent_dim": self.latent_dim, "output_dim": self.output_dim}


@dataclass
class GmmnGenerator(CondGenerator):
    params: mlp.MlpParams
    latent_dim: int
    trace: list = field(default_factory=list)  # (epoch, held-out objective)
    kernels: dict = field(default_factory=dict)  # loss kernels used in training
    name = "gmmn"

    def __post_init__(self):
        if self.latent_dim < 1:
            raise UsageError("latent_dim must be >= 1")
        if self.params.input_dim <= self.latent_dim:
            raise UsageError("network input must hold the latent noise plus at least one z column")
        self.z_dim = self.params.input_dim - self.latent_dim
        self.output_dim = self.params.output_dim

    def network_input(self, z, eta):
        n, M, m = eta.shape
        return np.concatenate([eta.reshape(n * M, m), np.repeat(z, M, axis=0)], axis=1)

    def _map(self, z, eta):
        out, _ = mlp.forward(self.params, self.network_input(z, eta))
        return out

    def to_dict(self) -> dict:
        return {
            "format": GENERATOR_FORMAT,
            "version": GENERATOR_VERSION,
            "kind": "gmmn",
            "latent_dim": self.latent_dim,
            "output_dim": self.output_dim,
            "mlp": mlp.to_dict(self.params),
        }


def save_generator(gen: GmmnGenerator, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(gen.to_dict(), fh)


def load_generator(path) -> GmmnGenerator:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != GENERATOR_FORMAT or doc.get("version") != GENERATOR_VERSION:
        raise InputError(f"{path}: not a {GENERATOR_FORMAT} v{GENERATOR_VERSION} file")
    if doc.get("kind") != "gmmn":
        raise InputError(f"{path}: unsupported generator kind {doc.get('kind')!r}")
    gen = GmmnGenerator(mlp.from_dict(doc["mlp"]), int(doc["latent_dim"]))
    if gen.output_dim != int(doc["output_dim"]):
        raise InputError(f"{path}: header output_dim disagrees with network")
    return gen


@dataclass
class SyntheticBlock:
    x: np.ndarray  # (n, M, d_x)
    y: np.ndarray  # (n, M, d_y)

    @property
    def M(self) -> int:
        return self.x.shape[1]


def synthesize(gen_x: CondGenerator, gen_y: CondGenerator, z, M: int, rng) -> SyntheticBlock:
    """Draw M synthetic (X, Y) pairs per row of ``z`` with independent noise streams."""
    if M < 1:
        raise UsageError("M must be >= 1")
    z = as_data_matrix(z, "z")
    n = z.shape[0]
    eta = rng.standard_normal((n, M, gen_x.latent_dim))
    kappa = rng.standard_normal((n, M, gen_y.latent_dim))
    return SyntheticBlock(gen_x.sample_batch(z, eta), gen_y.sample_batch(z, kappa))


# ---------------------------------------------------------------------------
# Moment-matching objective and training
# ---------------------------------------------------------------------------


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 128
    learning_rate: float = 1e-3
    latent_dim: int = 16
    hidden: tuple = (64, 64)
    m_train: int = 8
    activation: str = "tanh"
    holdout_fraction: float = 0.2
    eval_every: int = 10
    full_batch: bool = False
    final_lr_fraction: float = 1.0
    x_bandwidth_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 2 or self.latent_dim < 1 or self.m_train < 1:
            raise UsageError("epochs >= 0, batch_size >= 2, latent_dim >= 1 and m_train >= 1 required")
        if not self.learning_rate > 0:
            raise UsageError("learning_rate must be positive")
        if not 0 < self.final_lr_fraction <= 1:
            raise UsageError("final_lr_fraction must lie in (0, 1]")
        if not self.x_bandwidth_scale > 0:
            raise UsageError("x_bandwidth_scale must be positive")
        if not 0 <= self.holdout_fraction < 1:
            raise UsageError("holdout_fraction must lie in [0, 1)")
        if any(int(h) < 1 for h in self.hidden):
            raise UsageError("hidden sizes must be >= 1")
        self.hidden = tuple(int(h) for h in self.hidden)

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["hidden"] = list(self.hidden)
        return d


def _objective_parts(gen_out, x, kz_gram, kx: KernelSpec, M: int):
    b = x.shape[0]
    W = kz_gram.copy()
    np.fill_diagonal(W, 0.0)
    Kxx = gram(kx, x)
    Kxg = gram(kx, x, gen_out)
    Kgg = gram(kx, gen_out)
    C = Kxg.reshape(b, b, M).sum(axis=2) / M
    S = Kgg.reshape(b, M, b, M).sum(axis=(1, 3)) / (M * M)
    loss = float(np.sum(W * (Kxx - C - C.T + S))) / (b * (b - 1))
    return loss, W, Kxg, Kgg


@numba.njit(cache=True)
def _gaussian_mm_loss_grad(out, x, kz_gram, kx_gram, bandwidth, M):
    """Objective and its gradient with respect to the generated rows, gaussian X kernel.

    Row j of ``out`` is draw j % M for observation j // M.  Pairs from the same
    observation carry zero weight, matching the off-diagonal average.
    """
    b, d = x.shape
    nm = out.shape[0]
    c = 1.0 / (b * (b - 1))
    scale = 2.0 / bandwidth  # d/dg exp(-|a - g|^2 / s) = K * scale * (a - g)
    loss = 0.0
    for k in range(b):
        for l in range(b):
            if k != l:
                loss += kz_gram[k, l] * kx_gram[k, l]
    grad = np.zeros((nm, d))
    diff = np.empty(d)
    for j in range(nm):
        lj = j // M
        # real rows against generated row j: the C and C^T terms
        for k in range(b):
            if k == lj:
                continue
            w = kz_gram[k, lj]
            sq = 0.0
            for t in range(d):
                diff[t] = x[k, t] - out[j, t]
                sq += diff[t] * diff[t]
            kv = math.exp(-sq / bandwidth)
            loss -= 2.0 * w * kv / M
            f = -2.0 * c / M * scale * w * kv
            for t in range(d):
                grad[j, t] += f * diff[t]
        # generated pairs, each unordered pair visited once
        for i in range(j + 1, nm):
            li = i // M
            if li == lj:
                continue
            w = kz_gram[lj, li]
            sq = 0.0
            for t in range(d):
                diff[t] = out[i, t] - out[j, t]
                sq += diff[t] * diff[t]
            kv = math.exp(-sq / bandwidth)
            loss += 2.0 * w * kv / (M * M)
            f = 2.0 * c / (M * M) * scale * w * kv
            for t in range(d):
                grad[j, t] += f * diff[t]
                grad[i, t] -= f * diff[t]
    return loss * c, grad


def gmmn_objective(gen: GmmnGenerator, x, z, noise, kx: KernelSpec, kz: KernelSpec) -> float:
    """The moment-matching objective of ``gen`` on (x, z) with the given noise (b, M, m)."""
    x = as_data_matrix(x, "x")
    z = as_data_matrix(z, "z")
    out = gen.sample_batch(z, noise).reshape(-1, gen.output_dim)
    return _objective_parts(out, x, gram(kz, z), kx, noise.shape[1])[0]


def gmmn_loss_and_grad(params: mlp.MlpParams, x, z, noise, kx: KernelSpec, kz: KernelSpec, kz_gram=None,
                       kx_gram=None):
    """Batch objective and its exact gradient with respect to the network parameters.

    The objective is the off-diagonal average of Uhat(X_k, X_l) * K_Z(Z_k, Z_l)
    where Uhat compares real rows against the M generated draws per row.
    ``noise`` has shape (b, M, m); the network input is ``concat(noise, z)``.
    Precomputed Gram matrices of the batch rows may be passed in to save work.
    """
    if kx.family != "gaussian":
        raise UsageError(
            "moment-matching training needs a differentiable X kernel; "
            "the laplacian kernel is not differentiable at coincident points, use gaussian"
        )
    x = as_data_matrix(x, "x")
    z = as_data_matrix(z, "z")
    noise = np.asarray(noise, dtype=np.float64)
    b, M, m = noise.shape
    if b < 2 or x.shape[0] != b or z.shape[0] != b:
        raise UsageError("batch needs at least 2 rows and matching x, z, noise")
    inp = np.concatenate([noise.reshape(b * M, m), np.repeat(z, M, axis=0)], axis=1)
    out, cache = mlp.forward(params, inp)
    if out.shape[1] != x.shape[1]:
        raise UsageError(f"network outputs {out.shape[1]} columns, x has {x.shape[1]}")
    kzg = gram(kz, z) if kz_gram is None else kz_gram
    kxx = gram(kx, x) if kx_gram is None else kx_gram
    loss, grad_out = _gaussian_mm_loss_grad(out, x, kzg, kxx, kx.bandwidth, M)
    if not math.isfinite(loss):
        raise TrainingError("non-finite moment-matching loss")
    grads, _ = mlp.backward(params, cache, grad_out)
    return loss, grads


def _split_holdout(n, fraction, rng):
    n_hold = int(round(n * fraction))
    if fraction <= 0 or n_hold < 2 or n - n_hold < 2:
        idx = np.arange(n)
        return idx, idx
    perm = rng.permutation(n)
    return np.sort(perm[n_hold:]), np.sort(perm[:n_hold])


def train_gmmn(x, z, cfg: TrainConfig, kx: KernelSpec | None = None, kz: KernelSpec | None = None,
               kz_family: str = "laplacian") -> GmmnGenerator:
    """Fit a conditional generator for P(x | z) by minimising the moment-matching objective.

    Kernels default to median-heuristic bandwidths on the training rows
    (gaussian for x, scaled by ``cfg.x_bandwidth_scale``; ``kz_family`` for z)
    and stay frozen during training.
    The returned generator carries ``trace``: the objective on held-out rows
    (or on the training rows when no holdout is taken) with fixed noise,
    recorded before training and every ``eval_every`` epochs.
    """
    x = as_data_matrix(x, "x")
    z = as_data_matrix(z, "z")
    n = x.shape[0]
    if z.shape[0] != n or n < 2:
        raise UsageError("x and z need the same number of rows, at least 2")
    init_seq, split_seq, step_seq, eval_seq = np.random.SeedSequence(cfg.seed).spawn(4)
    train_idx, hold_idx = _split_holdout(n, cfg.holdout_fraction, np.random.default_rng(split_seq))
    xt, zt = x[train_idx], z[train_idx]
    if kx is None:
        kx = median_kernel("gaussian", xt)
        # a narrower kernel than the median penalises smeared mass more, which
        # matters for discrete targets
        kx = KernelSpec("gaussian", kx.bandwidth * cfg.x_bandwidth_scale)
    if kz is None:
        kz = median_kernel(kz_family, zt)

    params = mlp.init([cfg.latent_dim + z.shape[1], *cfg.hidden, x.shape[1]], cfg.activation,
                      np.random.default_rng(init_seq))
    gen = GmmnGenerator(params, cfg.latent_dim)
    xh, zh = x[hold_idx], z[hold_idx]
    eval_noise = np.random.default_rng(eval_seq).standard_normal((len(hold_idx), cfg.m_train, cfg.latent_dim))
    trace = [(0, gmmn_objective(gen, xh, zh, eval_noise, kx, kz))]

    rng = np.random.default_rng(step_seq)
    n_train = len(train_idx)
    batch = n_train if cfg.full_batch else min(cfg.batch_size, n_train)
    n_batches = math.ceil(n_train / batch)
    if n_train // n_batches < 2:
        n_batches = n_train // 2
    state = mlp.init_state(params)
    kx_full, kz_full = gram(kx, xt), gram(kz, zt)
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        # geometric decay from learning_rate to learning_rate * final_lr_fraction
        lr = cfg.learning_rate * cfg.final_lr_fraction ** ((epoch - 1) / max(cfg.epochs - 1, 1))
        order = rng.permutation(n_train)
        for idx in np.array_split(order, n_batches):
            step += 1
            noise = rng.standard_normal((len(idx), cfg.m_train, cfg.latent_dim))
            try:
                sub = np.ix_(idx, idx)
                _, grads = gmmn_loss_and_grad(params, xt[idx], zt[idx], noise, kx, kz,
                                              kz_gram=kz_full[sub], kx_gram=kx_full[sub])
                params, state = mlp.adam_step(params, grads, state, lr)
            except TrainingError as exc:
                raise TrainingError(f"training diverged in epoch {epoch}", step=step) from exc
        if epoch % cfg.eval_every == 0 or epoch == cfg.epochs:
            gen = GmmnGenerator(params, cfg.latent_dim)
            value = gmmn_objective(gen, xh, zh, eval_noise, kx, kz)
            if not math.isfinite(value):
                raise TrainingError("non-finite held-out objective", step=step)
            trace.append((epoch, value))
    return GmmnGenerator(params, cfg.latent_dim, trace=trace, kernels={"x": kx.to_dict(), "z": kz.to_dict()})
