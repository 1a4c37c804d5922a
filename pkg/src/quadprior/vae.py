"""Dense-network pose prior over 36-dim joint-angle vectors.

Encoder (ReLU trunk + linear mean/log-variance heads) and a mirrored decoder,
trained with  total = w1 * KL(q(z|x) || N(0,I)) + w2 * ||x - xhat||^2  per
batch mean. Everything runs in float64 numpy with hand-derived analytic
gradients so the whole training path is deterministic and checkable against
finite differences.

Angles are normalized by ``angle_scale`` (degrees -> roughly [-1, 1]) before
the first layer; the decoder output is scaled back into degrees.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .poses import POSE_DIM, PoseAngles, poses_to_array

DEFAULT_HIDDEN = (64, 64)
DEFAULT_LATENT = 16
DEFAULT_ANGLE_SCALE = 180.0

MODEL_FORMAT = "quadprior-vae"
MODEL_VERSION = 1


class ConfigError(ValueError):
    """Inconsistent network dimensions or malformed model files."""


@dataclass
class DenseLayer:
    w: np.ndarray  # (out, in)
    b: np.ndarray  # (out,)

    @property
    def in_dim(self) -> int:
        return self.w.shape[1]

    @property
    def out_dim(self) -> int:
        return self.w.shape[0]


@dataclass
class LatentCode:
    """Encoder output: mean and log-variance, plus the sampled z if drawn."""

    mu: np.ndarray
    logvar: np.ndarray
    z: np.ndarray | None = None

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64)
        self.logvar = np.asarray(self.logvar, dtype=np.float64)
        if self.mu.shape != self.logvar.shape:
            raise ConfigError("mu and logvar must have the same shape")
        if not (np.all(np.isfinite(self.mu)) and np.all(np.isfinite(self.logvar))):
            raise ConfigError("latent code contains non-finite values")

    @property
    def sigma(self) -> np.ndarray:
        return np.exp(0.5 * self.logvar)


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    w1: float = 0.005  # KL weight
    w2: float = 0.01  # reconstruction weight
    epochs: int = 250
    batch_size: int = 128
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be > 0")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise ConfigError("adam betas must lie in [0, 1)")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")


@dataclass
class AdamState:
    first_moment: list[np.ndarray]
    second_moment: list[np.ndarray]
    step_count: int = 0


@dataclass
class VaePrior:
    """Encoder trunk + mu/logvar heads, and the mirrored decoder.

    ``decoder`` applies ReLU to every layer except the last (linear) one.
    """

    encoder: list[DenseLayer]
    mu_head: DenseLayer
    logvar_head: DenseLayer
    decoder: list[DenseLayer]
    angle_scale: float = DEFAULT_ANGLE_SCALE

    def __post_init__(self):
        for prev, layer in zip(self.encoder, self.encoder[1:]):
            if layer.in_dim != prev.out_dim:
                raise ConfigError("encoder layer dimensions do not chain")
        trunk_out = self.encoder[-1].out_dim
        if self.mu_head.in_dim != trunk_out or self.logvar_head.in_dim != trunk_out:
            raise ConfigError("head input dim must match encoder trunk output")
        if self.mu_head.out_dim != self.logvar_head.out_dim:
            raise ConfigError("mu and logvar heads must agree on latent dim")
        if self.decoder[0].in_dim != self.latent_dim:
            raise ConfigError("decoder input dim must equal latent dim")
        for prev, layer in zip(self.decoder, self.decoder[1:]):
            if layer.in_dim != prev.out_dim:
                raise ConfigError("decoder layer dimensions do not chain")
        if self.decoder[-1].out_dim != self.input_dim:
            raise ConfigError("decoder must map back to the input dim")
        if self.angle_scale <= 0:
            raise ConfigError("angle_scale must be > 0")

    @property
    def input_dim(self) -> int:
        return self.encoder[0].in_dim

    @property
    def latent_dim(self) -> int:
        return self.mu_head.out_dim

    def parameters(self) -> list[np.ndarray]:
        """All trainable arrays in a fixed order (shared, not copied)."""
        params = []
        for layer in [*self.encoder, self.mu_head, self.logvar_head, *self.decoder]:
            params.append(layer.w)
            params.append(layer.b)
        return params


def new_prior(
    seed: int,
    hidden: tuple[int, ...] = DEFAULT_HIDDEN,
    input_dim: int = POSE_DIM,
    latent_dim: int = DEFAULT_LATENT,
    angle_scale: float = DEFAULT_ANGLE_SCALE,
) -> VaePrior:
    """He-uniform initialized prior; decoder mirrors the encoder."""
    rng = np.random.default_rng(seed)

    def dense(n_in, n_out):
        limit = np.sqrt(6.0 / n_in)
        return DenseLayer(rng.uniform(-limit, limit, size=(n_out, n_in)), np.zeros(n_out))

    encoder, d = [], input_dim
    for h in hidden:
        encoder.append(dense(d, h))
        d = h
    mu_head = dense(d, latent_dim)
    logvar_head = dense(d, latent_dim)
    decoder, d = [], latent_dim
    for h in reversed(hidden):
        decoder.append(dense(d, h))
        d = h
    decoder.append(dense(d, input_dim))
    return VaePrior(encoder, mu_head, logvar_head, decoder, angle_scale)


def _encode_forward(vae: VaePrior, x: np.ndarray):
    """Trunk forward on normalized input (B, in). Returns activations cache."""
    pre, post = [], [x]
    h = x
    for layer in vae.encoder:
        a = h @ layer.w.T + layer.b
        h = np.maximum(a, 0.0)
        pre.append(a)
        post.append(h)
    mu = h @ vae.mu_head.w.T + vae.mu_head.b
    logvar = h @ vae.logvar_head.w.T + vae.logvar_head.b
    return mu, logvar, pre, post


def _decode_forward(vae: VaePrior, z: np.ndarray):
    pre, post = [], [z]
    h = z
    for layer in vae.decoder[:-1]:
        a = h @ layer.w.T + layer.b
        h = np.maximum(a, 0.0)
        pre.append(a)
        post.append(h)
    last = vae.decoder[-1]
    xhat = h @ last.w.T + last.b
    return xhat, pre, post


def encode(vae: VaePrior, pose: PoseAngles) -> LatentCode:
    """Deterministic encoder pass; ``z`` is left unset."""
    x = pose.values[None, :] / vae.angle_scale
    if x.shape[1] != vae.input_dim:
        raise ConfigError(f"pose dim {x.shape[1]} != network input dim {vae.input_dim}")
    mu, logvar, _, _ = _encode_forward(vae, x)
    return LatentCode(mu[0], logvar[0])


def reparameterize(code: LatentCode, eps: np.ndarray) -> np.ndarray:
    """z = mu + eps * sigma, with sigma = exp(logvar / 2)."""
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != code.mu.shape:
        raise ConfigError(f"eps shape {eps.shape} != latent shape {code.mu.shape}")
    if not np.all(np.isfinite(eps)):
        raise ConfigError("eps contains non-finite values")
    return code.mu + eps * code.sigma


def decode(vae: VaePrior, z: np.ndarray) -> PoseAngles:
    """Decoder pass, rescaled into degrees."""
    return PoseAngles(decode_batch(vae, np.asarray(z, dtype=np.float64)[None, :])[0])


def decode_batch(vae: VaePrior, z: np.ndarray) -> np.ndarray:
    """Decode (B, latent) -> (B, 36) degrees."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2 or z.shape[1] != vae.latent_dim:
        raise ConfigError(f"z shape {z.shape} incompatible with latent dim {vae.latent_dim}")
    if not np.all(np.isfinite(z)):
        raise ConfigError("z contains non-finite values")
    xhat, _, _ = _decode_forward(vae, z)
    return xhat * vae.angle_scale


def kl_loss(code: LatentCode) -> float:
    """KL(q || N(0, I)) in closed form; always >= 0."""
    return float(0.5 * np.sum(code.mu**2 + np.exp(code.logvar) - 1.0 - code.logvar))


def rec_loss(a, a_hat) -> float:
    """Squared L2 distance between two 36-vectors (same units as given)."""
    va = a.values if isinstance(a, PoseAngles) else np.asarray(a, dtype=np.float64)
    vb = a_hat.values if isinstance(a_hat, PoseAngles) else np.asarray(a_hat, dtype=np.float64)
    if va.shape != vb.shape:
        raise ConfigError(f"shape mismatch {va.shape} vs {vb.shape}")
    d = va - vb
    return float(d @ d)


class BatchLosses(NamedTuple):
    total: float
    kl: float
    rec: float


def _loss_and_grads(vae: VaePrior, x: np.ndarray, eps: np.ndarray, config: TrainConfig):
    """Forward + analytic backward on a normalized batch (B, in).

    Returns (BatchLosses, grads), grads aligned with ``vae.parameters()``.
    The KL and rec terms are batch means; gradients are exact derivatives of
    total = w1 * mean_kl + w2 * mean_rec.
    """
    bsz = x.shape[0]
    mu, logvar, enc_pre, enc_post = _encode_forward(vae, x)
    sigma = np.exp(0.5 * logvar)
    z = mu + eps * sigma
    xhat, dec_pre, dec_post = _decode_forward(vae, z)

    kl_mean = float(0.5 * np.sum(mu**2 + np.exp(logvar) - 1.0 - logvar) / bsz)
    diff = xhat - x
    rec_mean = float(np.sum(diff * diff) / bsz)
    total = config.w1 * kl_mean + config.w2 * rec_mean

    # Decoder backward.
    d_xhat = (2.0 * config.w2 / bsz) * diff
    dec_grads = []
    delta = d_xhat
    for i in range(len(vae.decoder) - 1, -1, -1):
        layer = vae.decoder[i]
        dec_grads.append(delta.sum(axis=0))  # bias
        dec_grads.append(delta.T @ dec_post[i])  # weight
        delta = delta @ layer.w
        if i > 0:
            delta = delta * (dec_pre[i - 1] > 0)
    d_z = delta

    # Heads: z and KL both feed mu/logvar.
    d_mu = d_z + (config.w1 / bsz) * mu
    d_logvar = d_z * eps * (0.5 * sigma) + (config.w1 / bsz) * 0.5 * (np.exp(logvar) - 1.0)

    trunk_out = enc_post[-1]
    g_wm, g_bm = d_mu.T @ trunk_out, d_mu.sum(axis=0)
    g_wl, g_bl = d_logvar.T @ trunk_out, d_logvar.sum(axis=0)

    # Encoder trunk backward.
    delta = d_mu @ vae.mu_head.w + d_logvar @ vae.logvar_head.w
    enc_grads = []
    for i in range(len(vae.encoder) - 1, -1, -1):
        layer = vae.encoder[i]
        delta = delta * (enc_pre[i] > 0)
        enc_grads.append(delta.sum(axis=0))
        enc_grads.append(delta.T @ enc_post[i])
        delta = delta @ layer.w

    grads = []
    for i in range(len(vae.encoder)):
        grads.append(enc_grads[-(2 * i + 1)])
        grads.append(enc_grads[-(2 * i + 2)])
    grads.extend([g_wm, g_bm, g_wl, g_bl])
    for i in range(len(vae.decoder)):
        grads.append(dec_grads[-(2 * i + 1)])
        grads.append(dec_grads[-(2 * i + 2)])
    return BatchLosses(total, kl_mean, rec_mean), grads


def loss_and_gradients(
    vae: VaePrior, batch: list[PoseAngles], eps_batch: np.ndarray, config: TrainConfig
) -> tuple[float, list[np.ndarray]]:
    """Total loss and its exact gradients w.r.t. every parameter.

    ``eps_batch`` must be (len(batch), latent_dim); passing the noise in keeps
    the computation deterministic.
    """
    if not batch:
        raise ValueError("empty batch")
    x = poses_to_array(batch) / vae.angle_scale
    eps_batch = np.asarray(eps_batch, dtype=np.float64)
    if eps_batch.shape != (len(batch), vae.latent_dim):
        raise ConfigError(
            f"eps_batch shape {eps_batch.shape} != {(len(batch), vae.latent_dim)}"
        )
    losses, grads = _loss_and_grads(vae, x, eps_batch, config)
    return losses.total, grads


def init_adam_state(params: list[np.ndarray]) -> AdamState:
    return AdamState(
        [np.zeros_like(p) for p in params],
        [np.zeros_like(p) for p in params],
        step_count=0,
    )


def adam_step(
    params: list[np.ndarray],
    grads: list[np.ndarray],
    state: AdamState,
    config: TrainConfig,
) -> tuple[list[np.ndarray], AdamState]:
    """Bias-corrected Adam update, applied in place."""
    if len(params) != len(grads) or len(params) != len(state.first_moment):
        raise ConfigError("params/grads/state lengths differ")
    state.step_count += 1
    t = state.step_count
    b1, b2 = config.adam_beta1, config.adam_beta2
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        if p.shape != g.shape:
            raise ConfigError(f"grad shape {g.shape} != param shape {p.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        p -= config.learning_rate * m_hat / (np.sqrt(v_hat) + config.adam_eps)
    return params, state


class EpochLoss(NamedTuple):
    kl: float
    rec: float
    total: float


def train(
    vae: VaePrior, dataset: list[PoseAngles], config: TrainConfig
) -> tuple[VaePrior, list[EpochLoss]]:
    """Train a copy of ``vae`` on the dataset; the input model is untouched.

    Shuffling and noise draws come from one generator seeded with
    ``config.seed``, so fixed-seed runs are bit-reproducible. The final short
    batch of each epoch is used as-is. History holds per-epoch mean losses.
    """
    if len(dataset) < 1:
        raise ValueError("dataset must contain at least one pose")
    model = copy.deepcopy(vae)
    x_all = poses_to_array(dataset) / model.angle_scale
    if x_all.shape[1] != model.input_dim:
        raise ConfigError("dataset dimension does not match the model")

    rng = np.random.default_rng(config.seed)
    params = model.parameters()
    state = init_adam_state(params)
    n = x_all.shape[0]
    history: list[EpochLoss] = []

    for _ in range(config.epochs):
        order = rng.permutation(n)
        kl_sum = rec_sum = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            x = x_all[idx]
            eps = rng.standard_normal((len(idx), model.latent_dim))
            losses, grads = _loss_and_grads(model, x, eps, config)
            adam_step(params, grads, state, config)
            kl_sum += losses.kl * len(idx)
            rec_sum += losses.rec * len(idx)
        kl_mean, rec_mean = kl_sum / n, rec_sum / n
        history.append(
            EpochLoss(kl_mean, rec_mean, config.w1 * kl_mean + config.w2 * rec_mean)
        )
    return model, history


def mean_reconstruction_error(vae: VaePrior, dataset: list[PoseAngles]) -> float:
    """Mean ||x - decode(encode_mu(x))||^2 in normalized units (no sampling)."""
    x = poses_to_array(dataset) / vae.angle_scale
    mu, _, _, _ = _encode_forward(vae, x)
    xhat, _, _ = _decode_forward(vae, mu)
    return float(np.mean(np.sum((x - xhat) ** 2, axis=1)))


def _layer_to_json(layer: DenseLayer) -> dict:
    return {
        "shape": [int(s) for s in layer.w.shape],
        "w": [float(v) for v in layer.w.ravel(order="C")],
        "b": [float(v) for v in layer.b],
    }


def _layer_from_json(obj: dict) -> DenseLayer:
    shape = tuple(obj["shape"])
    w = np.asarray(obj["w"], dtype=np.float64).reshape(shape, order="C")
    return DenseLayer(w, np.asarray(obj["b"], dtype=np.float64))


def save_model(path: str | Path, vae: VaePrior, config: TrainConfig | None = None) -> None:
    """Versioned JSON model file; weights round-trip bit-exactly."""
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "input_dim": vae.input_dim,
        "latent_dim": vae.latent_dim,
        "angle_scale": vae.angle_scale,
        "encoder": [_layer_to_json(l) for l in vae.encoder],
        "mu_head": _layer_to_json(vae.mu_head),
        "logvar_head": _layer_to_json(vae.logvar_head),
        "decoder": [_layer_to_json(l) for l in vae.decoder],
        "train_config": None if config is None else vars(config).copy(),
    }
    Path(path).write_text(json.dumps(doc))


def load_model(path: str | Path) -> tuple[VaePrior, TrainConfig | None]:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: not valid JSON: {e}") from e
    if doc.get("format") != MODEL_FORMAT:
        raise ConfigError(f"{path}: not a {MODEL_FORMAT} file")
    if doc.get("version") != MODEL_VERSION:
        raise ConfigError(f"{path}: unsupported model version {doc.get('version')}")
    vae = VaePrior(
        [_layer_from_json(l) for l in doc["encoder"]],
        _layer_from_json(doc["mu_head"]),
        _layer_from_json(doc["logvar_head"]),
        [_layer_from_json(l) for l in doc["decoder"]],
        float(doc["angle_scale"]),
    )
    if vae.input_dim != doc["input_dim"] or vae.latent_dim != doc["latent_dim"]:
        raise ConfigError(f"{path}: declared dims do not match stored layers")
    cfg = None
    if doc.get("train_config") is not None:
        cfg = TrainConfig(**doc["train_config"])
    return vae, cfg
