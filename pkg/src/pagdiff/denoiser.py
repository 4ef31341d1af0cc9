"""Tiny self-attention transformer denoiser with a perturbation registry.

Tokens are the pixels of a square grayscale image. Each attention block is
pre-norm single-head self-attention followed by a pre-norm 2-layer GELU MLP,
both with residual connections. The perturbation registry builds the
"degraded" forward pass by manipulating selected self-attention maps
(identity replacement, masking, noise, blur), by dropping the class label,
or by blurring the input image.

All math is float64 and hand-differentiated; gradients are checked against
central finite differences in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter
from scipy.special import erf

from .errors import ConfigError, NumericError, ShapeError
from .schedule import NoiseSchedule

_LN_EPS = 1e-6
_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)

ATTENTION_KINDS = ("identity_map", "random_mask", "offdiag_mask",
                   "additive_noise", "map_blur")
PERTURBATION_KINDS = ("none",) + ATTENTION_KINDS + ("condition_drop",
                                                    "input_blur")


@dataclass(frozen=True)
class PerturbationSpec:
    """Declarative description of how to degrade the forward pass.

    `layers` lists 1-based attention block indices; it is ignored by
    condition_drop and input_blur, which act outside the attention stack.
    """

    kind: str = "none"
    layers: frozenset = frozenset()
    ratio: float = 0.25
    sigma: float = 0.1
    kernel_size: int = 5
    blur_sigma: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in PERTURBATION_KINDS:
            raise ConfigError(f"perturbation kind must be one of "
                              f"{PERTURBATION_KINDS}, got {self.kind!r}")
        if not (0.0 <= self.ratio < 1.0):
            raise ConfigError(f"perturbation ratio must be in [0, 1), "
                              f"got {self.ratio}")
        if self.sigma < 0.0:
            raise ConfigError(f"perturbation sigma must be >= 0, "
                              f"got {self.sigma}")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ConfigError(f"perturbation kernel_size must be odd >= 1, "
                              f"got {self.kernel_size}")
        if self.blur_sigma < 0.0:
            raise ConfigError(f"perturbation blur_sigma must be >= 0, "
                              f"got {self.blur_sigma}")
        object.__setattr__(self, "layers", frozenset(self.layers))

    def is_attention_level(self) -> bool:
        return self.kind in ATTENTION_KINDS


NO_PERTURBATION = PerturbationSpec()


@dataclass(frozen=True)
class DenoiserConfig:
    image_side: int = 8
    token_dim: int = 32
    num_attention_blocks: int = 2
    num_classes: int = 3
    cond_dropout_prob: float = 0.1

    def __post_init__(self):
        if self.image_side < 2:
            raise ConfigError(f"image_side must be >= 2, got {self.image_side}")
        if self.token_dim < 4 or self.token_dim % 4 != 0:
            raise ConfigError(f"token_dim must be >= 4 and divisible by 4, "
                              f"got {self.token_dim}")
        if self.num_attention_blocks < 1:
            raise ConfigError(f"num_attention_blocks must be >= 1, "
                              f"got {self.num_attention_blocks}")
        if not (0.0 <= self.cond_dropout_prob <= 1.0):
            raise ConfigError(f"cond_dropout_prob must be in [0, 1], "
                              f"got {self.cond_dropout_prob}")

    @property
    def null_class_index(self) -> int:
        return self.num_classes

    @property
    def num_tokens(self) -> int:
        return self.image_side * self.image_side


def _softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax over the last axis, safe against -inf rows.

    A row whose logits are all -inf (fully masked) falls back to the
    identity row: weight 1 on the diagonal entry.
    """
    finite_row = np.isfinite(logits).any(axis=-1)
    with np.errstate(invalid="ignore"):
        shifted = logits - np.max(
            np.where(np.isfinite(logits), logits, -np.inf),
            axis=-1, keepdims=True, initial=-np.inf)
        e = np.exp(shifted)
    e = np.where(np.isfinite(logits), e, 0.0)
    denom = e.sum(axis=-1, keepdims=True)
    out = np.divide(e, denom, out=np.zeros_like(e), where=denom > 0)
    if not finite_row.all():
        n = logits.shape[-1]
        eye = np.eye(n)
        starved = ~finite_row
        idx = np.broadcast_to(np.arange(n), logits.shape[:-1])
        out[starved] = eye[idx[starved]]
    return out


def self_attention(q: np.ndarray, k: np.ndarray, v: np.ndarray,
                   return_map: bool = False):
    """Softmax(q k^T / sqrt(d)) v for (..., n_tokens, d) operands."""
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    for name, a in (("q", q), ("k", k), ("v", v)):
        if not np.isfinite(a).all():
            raise NumericError(f"non-finite values in attention input {name}")
    d = q.shape[-1]
    logits = q @ np.swapaxes(k, -1, -2) / np.sqrt(d)
    attn = _softmax(logits)
    out = attn @ v
    return (out, attn) if return_map else out


def _renormalize_rows(attn: np.ndarray) -> np.ndarray:
    """Clip negatives and renormalize to a row-stochastic matrix.

    Rows that end up all-zero fall back to the identity row.
    """
    attn = np.maximum(attn, 0.0)
    sums = attn.sum(axis=-1, keepdims=True)
    dead = (sums <= 0.0)[..., 0]
    attn = np.divide(attn, sums, out=attn, where=sums > 0)
    if dead.any():
        n = attn.shape[-1]
        eye = np.eye(n)
        idx = np.broadcast_to(np.arange(n), attn.shape[:-1])
        attn[dead] = eye[idx[dead]]
    return attn


def _gaussian_kernel_2d(size: int, sigma: float) -> np.ndarray:
    half = size // 2
    x = np.arange(-half, half + 1, dtype=np.float64)
    if sigma == 0.0:
        k1 = (x == 0).astype(np.float64)
    else:
        k1 = np.exp(-0.5 * (x / sigma) ** 2)
    k1 /= k1.sum()
    return np.outer(k1, k1)


def _blur_attention_rows(attn: np.ndarray, grid_side: int, size: int,
                         sigma: float) -> np.ndarray:
    """Convolve each attention row, viewed as a grid image, with a kernel."""
    from scipy.signal import convolve2d

    kernel = _gaussian_kernel_2d(size, sigma)
    flat = attn.reshape(-1, grid_side, grid_side)
    out = np.empty_like(flat)
    for i in range(flat.shape[0]):
        out[i] = convolve2d(flat[i], kernel, mode="same", boundary="fill")
    return out.reshape(attn.shape)


def perturbed_self_attention(q: np.ndarray, k: np.ndarray, v: np.ndarray,
                             spec: PerturbationSpec,
                             rng: np.random.Generator | None = None,
                             return_map: bool = False):
    """Attention with the map degraded per `spec`.

    identity_map short-circuits to v (the map is exactly I). Mask variants
    set the selected pre-softmax logits to -inf; additive_noise and map_blur
    act on the post-softmax map and renormalize rows.
    """
    if not spec.is_attention_level():
        raise ConfigError(f"perturbation kind {spec.kind!r} does not apply at "
                          "the attention level")
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    n = q.shape[-2]
    if spec.kind == "identity_map":
        out = v.copy()
        attn = np.broadcast_to(np.eye(n), q.shape[:-2] + (n, n)).copy()
        return (out, attn) if return_map else out

    if rng is None:
        rng = np.random.default_rng(spec.seed)
    d = q.shape[-1]
    logits = q @ np.swapaxes(k, -1, -2) / np.sqrt(d)

    if spec.kind in ("random_mask", "offdiag_mask"):
        mask = rng.random((n, n)) < spec.ratio
        if spec.kind == "offdiag_mask":
            mask &= ~np.eye(n, dtype=bool)
        logits = np.where(mask, -np.inf, logits)
        attn = _softmax(logits)
    elif spec.kind == "additive_noise":
        attn = _softmax(logits)
        attn = attn + spec.sigma * rng.standard_normal(attn.shape)
        attn = _renormalize_rows(attn)
    elif spec.kind == "map_blur":
        attn = _softmax(logits)
        grid_side = int(round(np.sqrt(n)))
        if grid_side * grid_side != n:
            raise ConfigError(f"map_blur needs a square token grid, "
                              f"got {n} tokens")
        attn = _blur_attention_rows(attn, grid_side, spec.kernel_size,
                                    spec.blur_sigma)
        attn = _renormalize_rows(attn)
    else:  # pragma: no cover - kinds exhausted above
        raise ConfigError(f"unhandled perturbation kind {spec.kind!r}")
    out = attn @ v
    return (out, attn) if return_map else out


def _gelu(u: np.ndarray) -> np.ndarray:
    return u * 0.5 * (1.0 + erf(u / _SQRT2))


def _gelu_prime(u: np.ndarray) -> np.ndarray:
    cdf = 0.5 * (1.0 + erf(u / _SQRT2))
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * u * u)
    return cdf + u * pdf


def _sinusoidal_features(t: np.ndarray, dim: int) -> np.ndarray:
    """Standard sinusoidal embedding of integer timesteps, shape (N, dim)."""
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    ang = t[:, None].astype(np.float64) * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


def _positional_encoding(side: int, dim: int) -> np.ndarray:
    """Fixed 2-D sinusoidal positional encoding, shape (side*side, dim)."""
    half = dim // 2
    rows, cols = np.divmod(np.arange(side * side), side)
    enc = np.empty((side * side, dim))
    enc[:, :half] = _sinusoidal_features(rows, half)
    enc[:, half:] = _sinusoidal_features(cols, half)
    return enc


def init_weights(config: DenoiserConfig, seed: int = 0) -> dict:
    """Fresh parameter dict: N(0, 0.02) projections, zero output head."""
    rng = np.random.default_rng(seed)
    d = config.token_dim
    std = 0.02

    def normal(*shape):
        return std * rng.standard_normal(shape)

    w = {
        "embed.w": normal(d),
        "embed.b": np.zeros(d),
        "time.w": normal(d, d),
        "time.b": np.zeros(d),
        "cls.table": normal(config.num_classes + 1, d),
    }
    for b in range(1, config.num_attention_blocks + 1):
        p = f"block{b}"
        w[f"{p}.ln1.g"] = np.ones(d)
        w[f"{p}.ln1.b"] = np.zeros(d)
        for proj in ("q", "k", "v", "o"):
            w[f"{p}.w{proj}"] = normal(d, d)
            w[f"{p}.b{proj}"] = np.zeros(d)
        w[f"{p}.ln2.g"] = np.ones(d)
        w[f"{p}.ln2.b"] = np.zeros(d)
        w[f"{p}.w1"] = normal(d, 4 * d)
        w[f"{p}.b1"] = np.zeros(4 * d)
        w[f"{p}.w2"] = normal(4 * d, d)
        w[f"{p}.b2"] = np.zeros(d)
    w["head.w"] = np.zeros(d)
    w["head.b"] = np.zeros(())
    return w


def _layer_norm(h, gamma, beta):
    mu = h.mean(axis=-1, keepdims=True)
    var = h.var(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + _LN_EPS)
    xhat = (h - mu) * inv_std
    return gamma * xhat + beta, (xhat, inv_std)


def _layer_norm_backward(dy, cache, gamma):
    xhat, inv_std = cache
    dgamma = (dy * xhat).sum(axis=(0, 1))
    dbeta = dy.sum(axis=(0, 1))
    dxhat = dy * gamma
    dx = inv_std * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
    return dx, dgamma, dbeta


class Denoiser:
    """Noise-prediction network eps(x_t, t, c) with pluggable perturbations.

    Forward passes are pure given the weights; the weight dict may be shared
    read-only across concurrent sampling workers. `eval_count` tallies
    public forward() calls, used to audit guidance cost.
    """

    def __init__(self, config: DenoiserConfig, weights: dict | None = None,
                 init_seed: int = 0):
        self.config = config
        self.weights = weights if weights is not None else init_weights(
            config, init_seed)
        self.pos_enc = _positional_encoding(config.image_side,
                                            config.token_dim)
        self.eval_count = 0

    # -- forward ---------------------------------------------------------

    def forward(self, x_t: np.ndarray, t, c,
                spec: PerturbationSpec = NO_PERTURBATION,
                taps: dict | None = None) -> np.ndarray:
        """Predicted noise for a batch, same shape as x_t."""
        self.eval_count += 1
        pred, _ = self._forward(x_t, t, c, spec, want_cache=False, taps=taps)
        return pred

    def _forward(self, x_t, t, c, spec, want_cache=False, taps=None):
        cfg = self.config
        w = self.weights
        x_t = np.asarray(x_t, dtype=np.float64)
        if x_t.ndim != 3 or x_t.shape[1:] != (cfg.image_side, cfg.image_side):
            raise ShapeError(f"expected batch shape (N, {cfg.image_side}, "
                             f"{cfg.image_side}), got {x_t.shape}")
        n = x_t.shape[0]
        t_arr = np.broadcast_to(np.asarray(t, dtype=np.int64), (n,))
        c_arr = np.broadcast_to(np.asarray(c, dtype=np.int64), (n,)).copy()
        if np.any(c_arr < 0) or np.any(c_arr > cfg.num_classes):
            raise ConfigError(f"class index out of range [0, "
                              f"{cfg.num_classes}]: {c_arr}")
        if spec.kind == "condition_drop":
            c_arr[:] = cfg.null_class_index
        if spec.kind == "input_blur":
            x_t = np.stack([gaussian_filter(img, spec.blur_sigma,
                                            mode="constant")
                            for img in x_t])
        bad_layers = spec.layers - set(range(1, cfg.num_attention_blocks + 1))
        if spec.is_attention_level() and bad_layers:
            raise ConfigError(f"perturbation layers out of range: "
                              f"{sorted(bad_layers)}")

        d = cfg.token_dim
        tok = x_t.reshape(n, cfg.num_tokens)
        t_feats = _sinusoidal_features(t_arr, d)
        temb = t_feats @ w["time.w"] + w["time.b"]
        cemb = w["cls.table"][c_arr]
        h = (tok[:, :, None] * w["embed.w"] + w["embed.b"]
             + self.pos_enc[None] + temb[:, None, :] + cemb[:, None, :])

        rng = (np.random.default_rng(spec.seed)
               if spec.kind in ("random_mask", "offdiag_mask",
                                "additive_noise") else None)
        cache = {"tok": tok, "t_feats": t_feats, "c_arr": c_arr,
                 "blocks": []} if want_cache else None

        for b in range(1, cfg.num_attention_blocks + 1):
            p = f"block{b}"
            if taps is not None:
                taps[f"{p}.in"] = h.copy()
            a, ln1c = _layer_norm(h, w[f"{p}.ln1.g"], w[f"{p}.ln1.b"])
            q = a @ w[f"{p}.wq"] + w[f"{p}.bq"]
            k = a @ w[f"{p}.wk"] + w[f"{p}.bk"]
            v = a @ w[f"{p}.wv"] + w[f"{p}.bv"]
            if spec.is_attention_level() and b in spec.layers:
                attn_out, attn = perturbed_self_attention(
                    q, k, v, spec, rng=rng, return_map=True)
            else:
                attn_out, attn = self_attention(q, k, v, return_map=True)
            if taps is not None:
                taps[f"{p}.attn_map"] = attn
            if want_cache:
                cache["blocks"].append(
                    {"h_in": h, "ln1": ln1c, "a": a, "q": q, "k": k, "v": v,
                     "attn": attn, "attn_out": attn_out})
            h = h + attn_out @ w[f"{p}.wo"] + w[f"{p}.bo"]
            m, ln2c = _layer_norm(h, w[f"{p}.ln2.g"], w[f"{p}.ln2.b"])
            u = m @ w[f"{p}.w1"] + w[f"{p}.b1"]
            g = _gelu(u)
            if want_cache:
                cache["blocks"][-1].update(
                    {"h_mid": h, "ln2": ln2c, "m": m, "u": u, "g": g})
            h = h + g @ w[f"{p}.w2"] + w[f"{p}.b2"]

        if want_cache:
            cache["h_final"] = h
        pred = h @ w["head.w"] + w["head.b"]
        return pred.reshape(n, cfg.image_side, cfg.image_side), cache

    # -- backward --------------------------------------------------------

    def _backward(self, cache: dict, dpred: np.ndarray) -> dict:
        """Gradients of a scalar loss w.r.t. every weight tensor.

        `dpred` is the loss gradient w.r.t. the (N, L) token output.
        Only the unperturbed path is differentiated; training never uses
        attention-level perturbations.
        """
        cfg = self.config
        w = self.weights
        d = cfg.token_dim
        grads = {}

        h_final = cache["h_final"]
        grads["head.w"] = np.einsum("nl,nld->d", dpred, h_final)
        grads["head.b"] = np.asarray(dpred.sum())
        dh = dpred[:, :, None] * w["head.w"]

        for b in range(cfg.num_attention_blocks, 0, -1):
            p = f"block{b}"
            blk = cache["blocks"][b - 1]
            # MLP residual
            grads[f"{p}.w2"] = np.einsum("nlf,nld->fd", blk["g"], dh)
            grads[f"{p}.b2"] = dh.sum(axis=(0, 1))
            dg = dh @ w[f"{p}.w2"].T
            du = dg * _gelu_prime(blk["u"])
            grads[f"{p}.w1"] = np.einsum("nld,nlf->df", blk["m"], du)
            grads[f"{p}.b1"] = du.sum(axis=(0, 1))
            dm = du @ w[f"{p}.w1"].T
            dx, dg2, db2 = _layer_norm_backward(dm, blk["ln2"],
                                                w[f"{p}.ln2.g"])
            grads[f"{p}.ln2.g"] = dg2
            grads[f"{p}.ln2.b"] = db2
            dh_mid = dh + dx
            # attention residual
            grads[f"{p}.wo"] = np.einsum("nld,nle->de", blk["attn_out"],
                                         dh_mid)
            grads[f"{p}.bo"] = dh_mid.sum(axis=(0, 1))
            dattn_out = dh_mid @ w[f"{p}.wo"].T
            attn = blk["attn"]
            da = dattn_out @ np.swapaxes(blk["v"], 1, 2)
            dv = np.swapaxes(attn, 1, 2) @ dattn_out
            ds = attn * (da - (da * attn).sum(axis=-1, keepdims=True))
            scale = 1.0 / np.sqrt(d)
            dq = ds @ blk["k"] * scale
            dk = np.swapaxes(ds, 1, 2) @ blk["q"] * scale
            a = blk["a"]
            for proj, dval in (("q", dq), ("k", dk), ("v", dv)):
                grads[f"{p}.w{proj}"] = np.einsum("nld,nle->de", a, dval)
                grads[f"{p}.b{proj}"] = dval.sum(axis=(0, 1))
            da_in = (dq @ w[f"{p}.wq"].T + dk @ w[f"{p}.wk"].T
                     + dv @ w[f"{p}.wv"].T)
            dx, dg1, db1 = _layer_norm_backward(da_in, blk["ln1"],
                                                w[f"{p}.ln1.g"])
            grads[f"{p}.ln1.g"] = dg1
            grads[f"{p}.ln1.b"] = db1
            dh = dh_mid + dx

        grads["embed.w"] = np.einsum("nl,nld->d", cache["tok"], dh)
        grads["embed.b"] = dh.sum(axis=(0, 1))
        dtemb = dh.sum(axis=1)
        grads["time.w"] = cache["t_feats"].T @ dtemb
        grads["time.b"] = dtemb.sum(axis=0)
        dcls = np.zeros_like(w["cls.table"])
        np.add.at(dcls, cache["c_arr"], dtemb)
        grads["cls.table"] = dcls
        return grads

    # -- training objective ---------------------------------------------

    def _draw(self, rng: np.random.Generator, batch: np.ndarray,
              classes: np.ndarray, schedule: NoiseSchedule):
        n = batch.shape[0]
        t = rng.integers(1, schedule.T + 1, size=n)
        eps = rng.standard_normal(batch.shape)
        drop = rng.random(n) < self.config.cond_dropout_prob
        classes_eff = np.where(drop, self.config.null_class_index, classes)
        return t, eps, classes_eff

    def loss_given(self, x0, classes, t, eps, schedule: NoiseSchedule):
        """Denoising MSE with the randomness pre-drawn (used by training
        and by finite-difference checks)."""
        x_t = schedule.q_sample(x0, t, eps)
        pred, _ = self._forward(x_t, t, classes, NO_PERTURBATION)
        return float(np.mean((eps - pred) ** 2))

    def loss_and_grad_given(self, x0, classes, t, eps,
                            schedule: NoiseSchedule):
        x_t = schedule.q_sample(x0, t, eps)
        pred, cache = self._forward(x_t, t, classes, NO_PERTURBATION,
                                    want_cache=True)
        resid = pred - eps
        loss = float(np.mean(resid ** 2))
        n = resid.size
        dpred = (2.0 / n) * resid.reshape(resid.shape[0], -1)
        grads = self._backward(cache, dpred)
        for name, g in grads.items():
            if not np.isfinite(g).all():
                raise NumericError(f"non-finite gradient in tensor {name!r}")
        return loss, grads

    def loss(self, batch, classes, rng: np.random.Generator,
             schedule: NoiseSchedule) -> float:
        """Eq.-style denoising objective with fresh t, eps, label dropout."""
        batch = np.asarray(batch, dtype=np.float64)
        t, eps, classes_eff = self._draw(rng, batch, np.asarray(classes),
                                         schedule)
        return self.loss_given(batch, classes_eff, t, eps, schedule)

    def grad(self, batch, classes, rng: np.random.Generator,
             schedule: NoiseSchedule) -> dict:
        batch = np.asarray(batch, dtype=np.float64)
        t, eps, classes_eff = self._draw(rng, batch, np.asarray(classes),
                                         schedule)
        _, grads = self.loss_and_grad_given(batch, classes_eff, t, eps,
                                            schedule)
        return grads


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    batch_size: int = 32
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0


def train(model: Denoiser, schedule: NoiseSchedule, images: np.ndarray,
          labels: np.ndarray, tc: TrainConfig = TrainConfig()):
    """Adam training loop; mutates model.weights, returns the loss curve.

    Fully deterministic given tc.seed; identical runs produce bit-identical
    weights.
    """
    rng = np.random.default_rng(tc.seed)
    images = np.asarray(images, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    m = {k: np.zeros_like(v) for k, v in model.weights.items()}
    v = {k: np.zeros_like(val) for k, val in model.weights.items()}
    losses = np.empty(tc.steps)
    for step in range(tc.steps):
        idx = rng.integers(0, images.shape[0], size=tc.batch_size)
        x0 = images[idx]
        cls = labels[idx]
        t, eps, cls_eff = model._draw(rng, x0, cls, schedule)
        loss, grads = model.loss_and_grad_given(x0, cls_eff, t, eps, schedule)
        if not np.isfinite(loss):
            raise NumericError(f"NaN loss at training step {step}")
        losses[step] = loss
        bc1 = 1.0 - tc.beta1 ** (step + 1)
        bc2 = 1.0 - tc.beta2 ** (step + 1)
        for name, g in grads.items():
            m[name] = tc.beta1 * m[name] + (1.0 - tc.beta1) * g
            v[name] = tc.beta2 * v[name] + (1.0 - tc.beta2) * g * g
            mhat = m[name] / bc1
            vhat = v[name] / bc2
            model.weights[name] = np.asarray(
                model.weights[name] - tc.lr * mhat / (np.sqrt(vhat) + tc.eps))
    return model.weights, losses
