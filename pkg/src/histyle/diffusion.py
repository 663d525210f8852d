"""Conditional diffusion over style embeddings.

Forward noising x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) z with a linear beta
schedule; a small transformer denoiser that reads [timestep token, condition
token, noisy-embedding token] and predicts the clean embedding directly;
squared-error plus cosine-contrastive training; ancestral sampling driven by
the clean-embedding prediction.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from .numerics import (
    ParamStore,
    Rng,
    Tensor,
    adam_init,
    adam_step,
    concat,
    gelu,
    layer_norm,
    matmul,
    no_grad,
    relu,
    softmax,
)

# ---------------------------------------------------------------------------
# schedule


@dataclass
class NoiseSchedule:
    T: int
    betas: np.ndarray       # betas[i] is the step i+1 value (1-based steps)
    alphas: np.ndarray
    alpha_bars: np.ndarray

    def abar(self, t):
        """Cumulative retention at step t; t = 0 is the no-noise convention."""
        t = np.asarray(t)
        if np.any(t < 0) or np.any(t > self.T):
            raise ValueError(f"t out of range [0, {self.T}]: {t}")
        out = np.where(t == 0, 1.0, self.alpha_bars[np.maximum(t, 1) - 1])
        return float(out) if out.ndim == 0 else out

    def beta(self, t):
        t = np.asarray(t)
        if np.any(t < 1) or np.any(t > self.T):
            raise ValueError(f"t out of range [1, {self.T}]: {t}")
        out = self.betas[t - 1]
        return float(out) if out.ndim == 0 else out


def make_schedule(T: int, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValueError(
            f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
        )
    if T == 1:
        betas = np.array([beta_start])
    else:
        betas = np.linspace(beta_start, beta_end, T)
    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    return NoiseSchedule(T=T, betas=betas, alphas=alphas, alpha_bars=alpha_bars)


def q_sample(x0, t, z, schedule: NoiseSchedule):
    """Exact forward noising; x0/z may be single vectors or (B, d) batches."""
    x0 = np.asarray(x0, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if x0.shape != z.shape:
        raise ValueError(f"x0/z shape mismatch: {x0.shape} vs {z.shape}")
    abar = schedule.abar(t)
    if np.ndim(abar) > 0:
        abar = np.asarray(abar)[:, None]
    return np.sqrt(abar) * x0 + np.sqrt(1.0 - abar) * z


# ---------------------------------------------------------------------------
# denoiser


@dataclass(frozen=True)
class DenoiserConfig:
    d_emb: int
    d_cond: int
    n_layers: int = 4
    d_model: int = 128
    n_heads: int = 4
    d_ff: int = 0  # 0 -> 4 * d_model

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ValueError(
                f"d_model {self.d_model} not divisible by n_heads {self.n_heads}"
            )
        if self.d_ff == 0:
            object.__setattr__(self, "d_ff", 4 * self.d_model)

    def to_dict(self):
        return {
            "d_emb": self.d_emb, "d_cond": self.d_cond, "n_layers": self.n_layers,
            "d_model": self.d_model, "n_heads": self.n_heads, "d_ff": self.d_ff,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def init_denoiser(cfg: DenoiserConfig, rng: Rng, dtype=np.float64) -> ParamStore:
    store = ParamStore()
    g = rng.stream("denoiser_init")

    def w(name, n_in, n_out, scale=None):
        s = scale if scale is not None else 1.0 / np.sqrt(n_in)
        store.add(name, (g.standard_normal((n_in, n_out)) * s).astype(dtype))

    def b(name, n, value=0.0):
        store.add(name, np.full(n, value, dtype=dtype))

    d = cfg.d_model
    w("time_proj.W", d, d)
    b("time_proj.b", d)
    w("cond_proj.W", cfg.d_cond, d)
    b("cond_proj.b", d)
    w("x_proj.W", cfg.d_emb, d)
    b("x_proj.b", d)
    store.add("pos", (g.standard_normal((3, d)) * 0.02).astype(dtype))
    for i in range(cfg.n_layers):
        p = f"layers.{i}."
        b(p + "ln1.g", d, 1.0)
        b(p + "ln1.b", d)
        for nm in ("Wq", "Wk", "Wv", "Wo"):
            w(p + "attn." + nm, d, d)
        for nm in ("bq", "bk", "bv", "bo"):
            b(p + "attn." + nm, d)
        b(p + "ln2.g", d, 1.0)
        b(p + "ln2.b", d)
        w(p + "ff.W1", d, cfg.d_ff)
        b(p + "ff.b1", cfg.d_ff)
        w(p + "ff.W2", cfg.d_ff, d)
        b(p + "ff.b2", d)
    b("head.ln.g", d, 1.0)
    b("head.ln.b", d)
    w("head.W", d, cfg.d_emb, scale=0.02 / np.sqrt(d))
    b("head.b", cfg.d_emb)
    return store


def timestep_features(t, d_model: int) -> np.ndarray:
    """Sinusoidal features of the integer diffusion step, (B, d_model)."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = d_model // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / max(half - 1, 1))
    ang = t[:, None] * freqs[None, :]
    feats = np.concatenate([np.sin(ang), np.cos(ang)], axis=1)
    if feats.shape[1] < d_model:
        feats = np.concatenate([feats, np.zeros((feats.shape[0], 1))], axis=1)
    return feats


def denoise(params: ParamStore, cfg: DenoiserConfig, x_t, t, cond) -> Tensor:
    """Predict the clean embedding from a noisy one.

    x_t: (B, d_emb) array; t: scalar or (B,) ints; cond: (B, d_cond) array or
    Tensor (a Tensor condition lets gradients reach upstream parameters).
    """
    dtype = params["pos"].data.dtype
    x_t = np.asarray(x_t, dtype=dtype)
    if x_t.ndim == 1:
        x_t = x_t[None, :]
    batch = x_t.shape[0]
    if x_t.shape[1] != cfg.d_emb:
        raise ValueError(f"x_t dim {x_t.shape[1]} != d_emb {cfg.d_emb}")
    cond_t = cond if isinstance(cond, Tensor) else Tensor(np.asarray(cond, dtype=dtype))
    if cond_t.data.ndim == 1:
        cond_t = cond_t.reshape(1, -1)
    if cond_t.data.shape != (batch, cfg.d_cond):
        raise ValueError(
            f"cond shape {cond_t.data.shape} != ({batch}, {cfg.d_cond})"
        )
    t_arr = np.broadcast_to(np.atleast_1d(np.asarray(t, dtype=np.int64)), (batch,))

    d = cfg.d_model
    tok_t = Tensor(timestep_features(t_arr, d).astype(dtype)) @ params["time_proj.W"] + params["time_proj.b"]
    tok_c = matmul(cond_t, params["cond_proj.W"]) + params["cond_proj.b"]
    tok_x = Tensor(x_t) @ params["x_proj.W"] + params["x_proj.b"]
    seq = concat(
        [tok_t.reshape(batch, 1, d), tok_c.reshape(batch, 1, d), tok_x.reshape(batch, 1, d)],
        axis=1,
    ) + params["pos"]

    n_heads = cfg.n_heads
    d_head = d // n_heads
    scale = 1.0 / np.sqrt(d_head)
    for i in range(cfg.n_layers):
        p = f"layers.{i}."
        h = layer_norm(seq, params[p + "ln1.g"], params[p + "ln1.b"])
        q = (matmul(h, params[p + "attn.Wq"]) + params[p + "attn.bq"]) \
            .reshape(batch, 3, n_heads, d_head).transpose((0, 2, 1, 3))
        k = (matmul(h, params[p + "attn.Wk"]) + params[p + "attn.bk"]) \
            .reshape(batch, 3, n_heads, d_head).transpose((0, 2, 1, 3))
        v = (matmul(h, params[p + "attn.Wv"]) + params[p + "attn.bv"]) \
            .reshape(batch, 3, n_heads, d_head).transpose((0, 2, 1, 3))
        scores = matmul(q, k.transpose((0, 1, 3, 2))) * scale
        attn = softmax(scores, axis=-1)
        ctx = matmul(attn, v).transpose((0, 2, 1, 3)).reshape(batch, 3, d)
        seq = seq + matmul(ctx, params[p + "attn.Wo"]) + params[p + "attn.bo"]
        h2 = layer_norm(seq, params[p + "ln2.g"], params[p + "ln2.b"])
        ff = matmul(gelu(matmul(h2, params[p + "ff.W1"]) + params[p + "ff.b1"]),
                    params[p + "ff.W2"]) + params[p + "ff.b2"]
        seq = seq + ff

    out = layer_norm(seq[:, 2, :], params["head.ln.g"], params["head.ln.b"])
    return matmul(out, params["head.W"]) + params["head.b"]


# ---------------------------------------------------------------------------
# losses


@dataclass(frozen=True)
class ContrastiveConfig:
    margin: float = 0.5
    lambda_neg: float = 1.0
    lam: float = 0.1
    target_mode: str = "reference_embedding"

    def __post_init__(self):
        if not -1.0 <= self.margin <= 1.0:
            raise ValueError(f"margin must be in [-1, 1], got {self.margin}")
        if self.lam < 0 or self.lambda_neg < 0:
            raise ValueError("lam and lambda_neg must be >= 0")
        if self.target_mode not in ("reference_embedding", "prompt_embedding"):
            raise ValueError(f"unknown target_mode {self.target_mode!r}")

    def to_dict(self):
        return {"margin": self.margin, "lambda_neg": self.lambda_neg,
                "lam": self.lam, "target_mode": self.target_mode}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def loss_mse(x0_pred, x0):
    """Squared L2 norm of the difference (sum over coordinates)."""
    pred_t, x0_t = _as_tensor(x0_pred), _as_tensor(x0)
    if pred_t.data.shape != x0_t.data.shape:
        raise ValueError(
            f"loss_mse shape mismatch: {pred_t.data.shape} vs {x0_t.data.shape}"
        )
    diff = pred_t - x0_t
    out = (diff * diff).sum()
    if isinstance(x0_pred, Tensor) or isinstance(x0, Tensor):
        return out
    return float(out.data)


def _cosine(a: Tensor, b: Tensor) -> Tensor:
    na = float(np.linalg.norm(a.data))
    nb = float(np.linalg.norm(b.data))
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine is undefined for a zero-norm vector")
    dot = (a * b).sum()
    return dot * ((a * a).sum() ** -0.5) * ((b * b).sum() ** -0.5)


def loss_contrastive(z_pred, z_ref, negatives=(), cfg: ContrastiveConfig | None = None):
    """1 - cos(pred, ref) plus the hinge repulsion over negatives."""
    cfg = cfg or ContrastiveConfig()
    pred_t, ref_t = _as_tensor(z_pred), _as_tensor(z_ref)
    if pred_t.data.shape != ref_t.data.shape:
        raise ValueError(
            f"loss_contrastive shape mismatch: {pred_t.data.shape} vs {ref_t.data.shape}"
        )
    total = 1.0 - _cosine(pred_t, ref_t)
    if negatives is not None and len(negatives) > 0 and cfg.lambda_neg > 0:
        neg_sum = None
        for neg in negatives:
            h = relu(_cosine(pred_t, _as_tensor(neg)) - cfg.margin)
            neg_sum = h if neg_sum is None else neg_sum + h
        total = total + cfg.lambda_neg * neg_sum
    if isinstance(z_pred, Tensor) or isinstance(z_ref, Tensor):
        return total
    return float(total.data)


def total_loss(l_mse, l_contrastive, lam: float):
    if lam < 0:
        raise ValueError(f"lam must be >= 0, got {lam}")
    return l_mse + lam * l_contrastive


def _batch_contrastive(pred: Tensor, refs: np.ndarray, cfg: ContrastiveConfig):
    """Mean in-batch contrastive terms: every other row is a negative."""
    n = pred.data.shape[0]
    dt = pred.data.dtype
    norms = np.linalg.norm(refs, axis=1)
    if np.any(norms == 0.0):
        raise ValueError("cosine is undefined for a zero-norm reference")
    refs_hat = (refs / norms[:, None]).astype(dt)
    pred_norm = ((pred * pred).sum(axis=1, keepdims=True) + 1e-30) ** 0.5
    pred_hat = pred / pred_norm
    sims = matmul(pred_hat, Tensor(refs_hat.T))  # (B, B)
    eye = np.eye(n, dtype=dt)
    l_cl = ((Tensor(eye) * sims).sum(axis=1) * -1.0 + 1.0).mean()
    l_neg = (relu(sims - cfg.margin) * Tensor(1.0 - eye)).sum(axis=1).mean()
    return l_cl, l_neg


# ---------------------------------------------------------------------------
# training and sampling


def _fixed_projection(d_in: int, d_out: int, seed_label: str) -> np.ndarray:
    g = Rng(9291).stream("contrast_projection", seed_label).standard_normal((d_out, d_in))
    q, _ = np.linalg.qr(g) if d_out >= d_in else np.linalg.qr(g.T)
    return q if d_out >= d_in else q.T


def lr_at(step: int, total_steps: int, lr: float, schedule: str) -> float:
    """Learning-rate schedule: constant, or linear warmup then cosine decay."""
    if schedule == "constant":
        return lr
    if schedule != "warmup_cosine":
        raise ValueError(f"unknown lr schedule {schedule!r}")
    warmup = max(1, int(0.05 * total_steps))
    if step < warmup:
        return lr * (step + 1) / warmup
    frac = (step - warmup) / max(1, total_steps - warmup)
    return lr * (0.1 + 0.45 * (1.0 + np.cos(np.pi * frac)))


def train_stage(targets, conditions, cfg: DenoiserConfig, schedule: NoiseSchedule,
                contrastive: ContrastiveConfig | None = None, epochs: int = 10,
                seed: int = 0, batch_size: int = 128, lr: float = 2e-4,
                contrast_refs=None, extra_init=None, dtype=np.float64,
                lr_schedule: str = "constant"):
    """Minibatch diffusion training; returns (ParamStore, trace rows).

    `conditions` is an (N, d_cond) array, or a callable
    (store, idx) -> Tensor for conditions that carry trainable parameters.
    `extra_init(store)` may register those parameters before optimization.
    `contrast_refs` overrides the contrastive reference vectors (defaults to
    the targets); references of a different width are mapped through a fixed
    orthonormal projection.
    """
    targets = np.asarray(targets, dtype=np.float64)
    n = targets.shape[0]
    if targets.shape[1] != cfg.d_emb:
        raise ValueError(f"target dim {targets.shape[1]} != d_emb {cfg.d_emb}")
    cond_fn = None
    if callable(conditions):
        cond_fn = conditions
    else:
        conditions = np.asarray(conditions, dtype=np.float64)
        if conditions.shape != (n, cfg.d_cond):
            raise ValueError(
                f"conditions shape {conditions.shape} != ({n}, {cfg.d_cond})"
            )
    contrastive = contrastive or ContrastiveConfig(lam=0.0)
    use_contrastive = contrastive.lam > 0.0
    if use_contrastive and contrastive.lambda_neg > 0.0 and (n < 2 or batch_size < 2):
        raise ValueError("contrastive negatives need at least 2 items per batch")

    refs = targets if contrast_refs is None else np.asarray(contrast_refs, dtype=np.float64)
    if refs.shape[1] != cfg.d_emb:
        proj = _fixed_projection(refs.shape[1], cfg.d_emb, f"{refs.shape[1]}to{cfg.d_emb}")
        refs = refs @ proj.T

    rng = Rng(seed)
    params = init_denoiser(cfg, rng, dtype=dtype)
    if extra_init is not None:
        extra_init(params)
    state = adam_init(params, lr=lr)
    steps_per_epoch = int(np.ceil(n / batch_size))
    total_steps = epochs * steps_per_epoch
    trace = []
    step = 0
    for epoch in range(epochs):
        order = rng.stream("shuffle", epoch).permutation(n)
        pos = 0
        while pos < n:
            idx = order[pos: pos + batch_size]
            # avoid a trailing singleton batch when negatives are enabled
            if use_contrastive and contrastive.lambda_neg > 0.0 and n - pos - batch_size == 1:
                idx = order[pos: pos + batch_size + 1]
            pos += len(idx)
            bsz = len(idx)
            if use_contrastive and contrastive.lambda_neg > 0.0 and bsz < 2:
                raise ValueError("batch of size 1 with contrastive negatives enabled")
            x0 = targets[idx]
            t = rng.stream("t", step).integers(1, schedule.T + 1, size=bsz)
            z = rng.stream("z", step).standard_normal(x0.shape)
            x_t = q_sample(x0, t, z, schedule)
            cond = cond_fn(params, idx) if cond_fn is not None else conditions[idx]
            pred = denoise(params, cfg, x_t, t, cond)
            diff = pred - Tensor(x0.astype(pred.data.dtype))
            l_mse = (diff * diff).sum(axis=1).mean()
            if use_contrastive:
                l_cl, l_neg = _batch_contrastive(pred, refs[idx], contrastive)
                loss = l_mse + contrastive.lam * (l_cl + contrastive.lambda_neg * l_neg)
                cl_v, neg_v = float(l_cl.data), float(l_neg.data)
            else:
                loss = l_mse
                cl_v, neg_v = 0.0, 0.0
            loss.backward()
            grads = {
                name: (t_.grad if t_.grad is not None else np.zeros_like(t_.data))
                for name, t_ in params.items()
            }
            state.lr = lr_at(step, total_steps, lr, lr_schedule)
            adam_step(params, grads, state)
            params.zero_grad()
            trace.append({
                "step": step, "l_mse": float(l_mse.data), "l_cl": cl_v,
                "l_neg": neg_v, "total": float(loss.data),
            })
            step += 1
    return params, trace


def write_trace_csv(trace, path):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["step", "l_mse", "l_cl", "l_neg", "total"])
        writer.writeheader()
        for row in trace:
            writer.writerow(row)


def sample(params: ParamStore, cfg: DenoiserConfig, cond, schedule: NoiseSchedule,
           seed: int = 0, t_start: int | None = None) -> np.ndarray:
    """Ancestral sampling from pure noise down to the clean prediction."""
    cond = np.asarray(cond, dtype=np.float64)
    single = cond.ndim == 1
    if single:
        cond = cond[None, :]
    batch = cond.shape[0]
    t_start = schedule.T if t_start is None else int(t_start)
    if not 1 <= t_start <= schedule.T:
        raise ValueError(f"t_start out of range [1, {schedule.T}]: {t_start}")
    rng = Rng(seed)
    x = rng.stream("sample_init").standard_normal((batch, cfg.d_emb))
    pred_np = None
    with no_grad():
        for t in range(t_start, 0, -1):
            pred = denoise(params, cfg, x, t, cond)
            pred_np = pred.data
            if t == 1:
                break
            abar_t = schedule.abar(t)
            abar_prev = schedule.abar(t - 1)
            beta_t = schedule.beta(t)
            alpha_t = 1.0 - beta_t
            coef_x0 = np.sqrt(abar_prev) * beta_t / (1.0 - abar_t)
            coef_xt = np.sqrt(alpha_t) * (1.0 - abar_prev) / (1.0 - abar_t)
            mean = coef_x0 * pred_np + coef_xt * x
            var = (1.0 - abar_prev) / (1.0 - abar_t) * beta_t
            noise = rng.stream("sample_noise", t).standard_normal((batch, cfg.d_emb))
            x = mean + np.sqrt(var) * noise
    return pred_np[0] if single else pred_np
