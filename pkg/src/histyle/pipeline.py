"""Two-stage hierarchical prediction: speaker stage, residual fusion, style
stage; plus the direct-regression and single-stage baselines."""

import json
import os
from dataclasses import dataclass

import numpy as np

from .corpus import CorpusItem
from .diffusion import (
    ContrastiveConfig,
    DenoiserConfig,
    NoiseSchedule,
    denoise,
    make_schedule,
    sample,
    train_stage,
)
from .numerics import (
    ParamStore,
    Rng,
    Tensor,
    adam_init,
    adam_step,
    gelu,
    load_checkpoint,
    matmul,
    save_checkpoint,
)
from .prompts import FeaturizerConfig, encode_label_batch, encode_prompt_text

MODEL_VERSION = "histyle-model-1"


@dataclass
class StageModel:
    params: ParamStore
    config: DenoiserConfig
    schedule: NoiseSchedule
    schedule_spec: tuple  # (T, beta_start, beta_end)
    contrastive: ContrastiveConfig


@dataclass
class HiStyleModel:
    stage1: StageModel
    stage2: StageModel
    fusion_proj: np.ndarray  # (d_text, d_emb)
    featurizer: FeaturizerConfig
    seed: int
    version: str = MODEL_VERSION


def fuse(speaker_pred, prompt_vec, fusion_proj):
    """Residual fusion in prompt space: prompt + fusion_proj @ speaker_pred."""
    speaker_pred = np.asarray(speaker_pred, dtype=np.float64)
    prompt_vec = np.asarray(prompt_vec, dtype=np.float64)
    fusion_proj = np.asarray(fusion_proj, dtype=np.float64)
    d_text, d_emb = fusion_proj.shape
    if speaker_pred.shape[-1] != d_emb or prompt_vec.shape[-1] != d_text:
        raise ValueError(
            f"fuse dim mismatch: speaker {speaker_pred.shape}, prompt "
            f"{prompt_vec.shape}, fusion {fusion_proj.shape}"
        )
    return prompt_vec + speaker_pred @ fusion_proj.T


@dataclass(frozen=True)
class TrainSettings:
    epochs: int = 30
    stage2_epochs: int = 0  # 0 -> same as epochs
    batch_size: int = 256
    lr: float = 2e-4
    lr_schedule: str = "constant"
    dtype: str = "float32"
    stage1_mixing_prob: float = 0.0  # fraction of stage-2 conds using sampled stage-1 outputs

    def np_dtype(self):
        return np.dtype(self.dtype).type


def _stage_inputs(items):
    labels = [it.labels for it in items]
    prompts = encode_label_batch(labels)
    speaker = np.stack([it.speaker_emb for it in items])
    style = np.stack([it.style_emb for it in items])
    return prompts, speaker, style


def train_two_stage(items, cfg1: DenoiserConfig | None = None,
                    cfg2: DenoiserConfig | None = None,
                    schedule_spec=(50, 1e-4, 0.02),
                    contrastive: ContrastiveConfig | None = None,
                    settings: TrainSettings | None = None,
                    seed: int = 0, featurizer: FeaturizerConfig | None = None):
    """Returns (HiStyleModel, {"stage1": trace, "stage2": trace})."""
    settings = settings or TrainSettings()
    featurizer = featurizer or FeaturizerConfig()
    contrastive = contrastive or ContrastiveConfig()
    prompts, speaker, style = _stage_inputs(items)
    d_text = prompts.shape[1]
    d_emb = style.shape[1]
    cfg1 = cfg1 or DenoiserConfig(d_emb=d_emb, d_cond=d_text)
    cfg2 = cfg2 or DenoiserConfig(d_emb=d_emb, d_cond=d_text)
    schedule = make_schedule(*schedule_spec)
    dtype = settings.np_dtype()

    params1, trace1 = train_stage(
        speaker, prompts, cfg1, schedule, contrastive=contrastive,
        epochs=settings.epochs, seed=seed, batch_size=settings.batch_size,
        lr=settings.lr, dtype=dtype, lr_schedule=settings.lr_schedule,
    )
    stage1 = StageModel(params1, cfg1, schedule, tuple(schedule_spec), contrastive)

    # teacher forcing: stage-2 conditions fuse the ground-truth speaker
    # embedding (optionally mixed with sampled stage-1 outputs) into the prompt
    speaker_cond = speaker.copy()
    if settings.stage1_mixing_prob > 0.0:
        mixed = sample(params1, cfg1, prompts, schedule, seed=seed + 1)
        mask = Rng(seed).stream("stage1_mix").random(len(items)) < settings.stage1_mixing_prob
        speaker_cond[mask] = mixed[mask]

    # init so the fused residual enters at roughly the prompt embedding's norm
    speaker_norm = float(np.mean(np.linalg.norm(speaker, axis=1)))
    fusion_scale = 1.0 / (np.sqrt(d_text) * max(speaker_norm, 1e-6))

    def fusion_init(store: ParamStore):
        g = Rng(seed).stream("fusion_init")
        store.add("fusion.W", (g.standard_normal((d_text, d_emb)) * fusion_scale).astype(dtype))

    prompts_cast = prompts.astype(dtype)
    speaker_cast = speaker_cond.astype(dtype)

    def cond_fn(store: ParamStore, idx):
        w_t = store["fusion.W"].transpose((1, 0))
        return Tensor(prompts_cast[idx]) + matmul(Tensor(speaker_cast[idx]), w_t)

    refs = style if contrastive.target_mode == "reference_embedding" else prompts
    params2, trace2 = train_stage(
        style, cond_fn, cfg2, schedule, contrastive=contrastive,
        epochs=settings.stage2_epochs or settings.epochs, seed=seed + 2,
        batch_size=settings.batch_size,
        lr=settings.lr, contrast_refs=refs, extra_init=fusion_init, dtype=dtype,
        lr_schedule=settings.lr_schedule,
    )
    fusion = params2["fusion.W"].data.astype(np.float64)
    stage2 = StageModel(params2, cfg2, schedule, tuple(schedule_spec), contrastive)
    model = HiStyleModel(stage1=stage1, stage2=stage2, fusion_proj=fusion,
                         featurizer=featurizer, seed=seed)
    return model, {"stage1": trace1, "stage2": trace2}


def predict(model: HiStyleModel, prompt_text: str, seed: int = 0):
    """(speaker_emb_pred, style_emb_pred) for one prompt sentence."""
    emb = encode_prompt_text(prompt_text, model.featurizer).vector
    out_s, out_y = predict_batch(model, emb[None, :], seed=seed)
    return out_s[0], out_y[0]


def predict_batch(model: HiStyleModel, prompt_vecs: np.ndarray, seed: int = 0):
    """Vectorized two-stage sampling for (N, d_text) prompt embeddings."""
    rng = Rng(seed)
    s1_seed = int(rng.stream("stage1").integers(0, 2**62))
    s2_seed = int(rng.stream("stage2").integers(0, 2**62))
    speaker_pred = sample(model.stage1.params, model.stage1.config, prompt_vecs,
                          model.stage1.schedule, seed=s1_seed)
    cond2 = fuse(speaker_pred, prompt_vecs, model.fusion_proj)
    style_pred = sample(model.stage2.params, model.stage2.config, cond2,
                        model.stage2.schedule, seed=s2_seed)
    return speaker_pred, style_pred


# ---------------------------------------------------------------------------
# baselines


@dataclass
class DirectRegressor:
    params: ParamStore
    d_text: int
    d_emb: int
    d_hidden: int


def train_baseline_direct(items, d_hidden: int = 128, epochs: int = 60,
                          batch_size: int = 256, lr: float = 1e-3, seed: int = 0,
                          dtype=np.float64):
    """Two-layer feed-forward prompt -> style embedding, squared error only."""
    prompts, _, style = _stage_inputs(items)
    n, d_text = prompts.shape
    d_emb = style.shape[1]
    rng = Rng(seed)
    g = rng.stream("direct_init")
    store = ParamStore()
    store.add("W1", (g.standard_normal((d_text, d_hidden)) / np.sqrt(d_text)).astype(dtype))
    store.add("b1", np.zeros(d_hidden, dtype=dtype))
    store.add("W2", (g.standard_normal((d_hidden, d_emb)) / np.sqrt(d_hidden)).astype(dtype))
    store.add("b2", np.zeros(d_emb, dtype=dtype))
    state = adam_init(store, lr=lr)
    prompts_c = prompts.astype(dtype)
    style_c = style.astype(dtype)
    trace = []
    step = 0
    for epoch in range(epochs):
        order = rng.stream("shuffle", epoch).permutation(n)
        for pos in range(0, n, batch_size):
            idx = order[pos: pos + batch_size]
            h = gelu(matmul(Tensor(prompts_c[idx]), store["W1"]) + store["b1"])
            pred = matmul(h, store["W2"]) + store["b2"]
            diff = pred - Tensor(style_c[idx])
            loss = (diff * diff).sum(axis=1).mean()
            loss.backward()
            grads = {nm: (p.grad if p.grad is not None else np.zeros_like(p.data))
                     for nm, p in store.items()}
            adam_step(store, grads, state)
            store.zero_grad()
            trace.append({"step": step, "l_mse": float(loss.data), "l_cl": 0.0,
                          "l_neg": 0.0, "total": float(loss.data)})
            step += 1
    return DirectRegressor(store, d_text, d_emb, d_hidden), trace


def predict_direct(reg: DirectRegressor, prompt_vecs: np.ndarray) -> np.ndarray:
    from .numerics import no_grad
    with no_grad():
        h = gelu(matmul(Tensor(prompt_vecs.astype(reg.params["W1"].data.dtype)),
                        reg.params["W1"]) + reg.params["b1"])
        pred = matmul(h, reg.params["W2"]) + reg.params["b2"]
    return pred.data.astype(np.float64)


def train_single_stage(items, cfg: DenoiserConfig | None = None,
                       schedule_spec=(50, 1e-4, 0.02),
                       contrastive: ContrastiveConfig | None = None,
                       settings: TrainSettings | None = None, seed: int = 0):
    """Style-embedding diffusion conditioned on the prompt alone."""
    settings = settings or TrainSettings()
    contrastive = contrastive or ContrastiveConfig()
    prompts, _, style = _stage_inputs(items)
    cfg = cfg or DenoiserConfig(d_emb=style.shape[1], d_cond=prompts.shape[1])
    schedule = make_schedule(*schedule_spec)
    refs = style if contrastive.target_mode == "reference_embedding" else prompts
    params, trace = train_stage(
        style, prompts, cfg, schedule, contrastive=contrastive,
        epochs=settings.epochs, seed=seed, batch_size=settings.batch_size,
        lr=settings.lr, contrast_refs=refs, dtype=settings.np_dtype(),
        lr_schedule=settings.lr_schedule,
    )
    return StageModel(params, cfg, schedule, tuple(schedule_spec), contrastive), trace


def predict_single_stage(stage: StageModel, prompt_vecs: np.ndarray, seed: int = 0):
    return sample(stage.params, stage.config, prompt_vecs, stage.schedule, seed=seed)


# ---------------------------------------------------------------------------
# model bundle I/O


def _save_stage(stage: StageModel, dirpath):
    os.makedirs(dirpath, exist_ok=True)
    save_checkpoint(os.path.join(dirpath, "params.bin"), stage.params.state_dict())
    with open(os.path.join(dirpath, "config.json"), "w") as fh:
        json.dump({
            "denoiser": stage.config.to_dict(),
            "schedule": list(stage.schedule_spec),
            "contrastive": stage.contrastive.to_dict(),
        }, fh, indent=2)


def _load_stage(dirpath) -> StageModel:
    with open(os.path.join(dirpath, "config.json")) as fh:
        cfg = json.load(fh)
    tensors, _ = load_checkpoint(os.path.join(dirpath, "params.bin"))
    store = ParamStore()
    store.load_state_dict(tensors)
    spec = tuple(cfg["schedule"])
    return StageModel(
        params=store,
        config=DenoiserConfig.from_dict(cfg["denoiser"]),
        schedule=make_schedule(*spec),
        schedule_spec=spec,
        contrastive=ContrastiveConfig.from_dict(cfg["contrastive"]),
    )


def save_model(model: HiStyleModel, dirpath):
    os.makedirs(dirpath, exist_ok=True)
    _save_stage(model.stage1, os.path.join(dirpath, "stage1"))
    _save_stage(model.stage2, os.path.join(dirpath, "stage2"))
    save_checkpoint(os.path.join(dirpath, "fusion.bin"), {"fusion.W": model.fusion_proj})
    with open(os.path.join(dirpath, "featurizer.json"), "w") as fh:
        json.dump({"d_text": model.featurizer.d_text, "seed": model.featurizer.seed}, fh)
    with open(os.path.join(dirpath, "manifest.json"), "w") as fh:
        json.dump({"version": model.version, "seed": model.seed}, fh, indent=2)


def load_model(dirpath) -> HiStyleModel:
    with open(os.path.join(dirpath, "manifest.json")) as fh:
        manifest = json.load(fh)
    if manifest.get("version") != MODEL_VERSION:
        raise ValueError(f"unknown model version {manifest.get('version')!r}")
    with open(os.path.join(dirpath, "featurizer.json")) as fh:
        feat = json.load(fh)
    fusion, _ = load_checkpoint(os.path.join(dirpath, "fusion.bin"))
    return HiStyleModel(
        stage1=_load_stage(os.path.join(dirpath, "stage1")),
        stage2=_load_stage(os.path.join(dirpath, "stage2")),
        fusion_proj=fusion["fusion.W"],
        featurizer=FeaturizerConfig(d_text=feat["d_text"], seed=feat["seed"]),
        seed=manifest["seed"],
    )
