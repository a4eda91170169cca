"""Trimodal solar forecaster: patch / series embeddings, random context masking,
residual VQ on the context and power branches, rotary transformers, cross-attention
fusion and a temporal-transformer decoder.

Shapes follow ``B`` batch, ``T`` hours, ``Np`` patches, ``d`` hidden size.
"""

from __future__ import annotations

import json
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import container
from . import tensor as T
from .config import ModelConfig, derive_rng
from .nn import MLP, FeedForward, LayerNorm, Linear, Module
from .optim import AdamW
from .rope import AttentionParams, RopeTables, build_rope_tables, cross_attention, rope_self_attention
from .tensor import NumericError, ShapeError, Tensor
from .vq import Codebook, ResidualVQ, RVQOutput, residual_quantize, rvq_ema_update


@dataclass
class Batch:
    x_ts: np.ndarray  # [B, T_in, C_ts]
    x_ctx: np.ndarray  # [B, T_in, C_ctx, H, W]
    x_aux: np.ndarray  # [B, T_out, C_aux]
    plant_pos: np.ndarray  # [B, 2] normalized (lat, lon)
    y: np.ndarray | None = None  # [B, T_out, C_ts]

    def __len__(self) -> int:
        return len(self.x_ts)


@contextmanager
def _layer(name: str):
    try:
        yield
    except NumericError as exc:
        raise NumericError(f"{name}: {exc}") from None


# ---------------------------------------------------------------- patching


def patchify(x_ctx: np.ndarray, patch_size) -> np.ndarray:
    """``[B, T, C, H, W]`` -> ``[(B*T), Np, C*ph*pw]``, patches in row-major grid order."""
    b, t, c, h, w = x_ctx.shape
    ph, pw = patch_size
    if h % ph or w % pw:
        raise ShapeError(f"image {h}x{w} not divisible into {ph}x{pw} patches")
    gh, gw = h // ph, w // pw
    x = x_ctx.reshape(b * t, c, gh, ph, gw, pw)
    return x.transpose(0, 2, 4, 1, 3, 5).reshape(b * t, gh * gw, c * ph * pw)


def unpatchify(patches: np.ndarray, batch: int, channels: int, image_size, patch_size) -> np.ndarray:
    h, w = image_size
    ph, pw = patch_size
    gh, gw = h // ph, w // pw
    bt = patches.shape[0]
    x = patches.reshape(bt, gh, gw, channels, ph, pw).transpose(0, 3, 1, 4, 2, 5)
    return x.reshape(batch, bt // batch, channels, h, w)


def patch_centers(image_size, patch_size) -> np.ndarray:
    """Normalized ``(lat, lon)`` of every patch centre; row 0 is the northern edge."""
    gh = image_size[0] // patch_size[0]
    gw = image_size[1] // patch_size[1]
    lat = 1.0 - (2.0 * np.arange(gh) + 1.0) / gh
    lon = -1.0 + (2.0 * np.arange(gw) + 1.0) / gw
    return np.stack(np.meshgrid(lat, lon, indexing="ij"), axis=-1).reshape(-1, 2)


def random_mask(n_tokens: int, n_groups: int, max_ratio: float, rng: np.random.Generator | None, training: bool) -> np.ndarray:
    """Indices of kept tokens, shape ``[n_groups, n_kept]`` (sorted per group).

    In training a ratio ``r ~ U(0, max_ratio)`` is drawn once and ``floor(r * n_tokens)``
    tokens are dropped from each group independently. Inference keeps everything.
    """
    if not 0.0 <= max_ratio < 1.0:
        raise ValueError(f"masking ratio must lie in [0, 1), got {max_ratio}")
    keep_all = np.broadcast_to(np.arange(n_tokens), (n_groups, n_tokens))
    if not training or max_ratio == 0.0:
        return keep_all
    r = rng.uniform(0.0, max_ratio)
    n_drop = int(np.floor(r * n_tokens))
    if n_drop == 0:
        return keep_all
    order = np.argsort(rng.random((n_groups, n_tokens)), axis=1)
    return np.sort(order[:, n_drop:], axis=1)


# ---------------------------------------------------------------- blocks


class Block(Module):
    """Pre-norm transformer block with rotary self-attention."""

    def __init__(self, dim, heads, dim_head, mlp_ratio, dropout, use_glu, rng):
        self.norm1 = LayerNorm(dim)
        self.attn = AttentionParams(dim, heads, dim_head, rng)
        self.norm2 = LayerNorm(dim)
        self.ff = FeedForward(dim, mlp_ratio, rng, use_glu=use_glu, dropout=dropout)
        self.p = dropout

    def __call__(self, x, tables, training, rng):
        x = x + rope_self_attention(self.norm1(x), self.attn, tables, self.p, training, rng)
        return x + self.ff(self.norm2(x), training, rng)


class Transformer(Module):
    def __init__(self, dim, depth, heads, dim_head, mlp_ratio, dropout, use_glu, rng):
        self.blocks = [Block(dim, heads, dim_head, mlp_ratio, dropout, use_glu, rng) for _ in range(depth)]
        self.norm = LayerNorm(dim)

    def __call__(self, x, tables, training=False, rng=None):
        for blk in self.blocks:
            x = blk(x, tables, training, rng)
        return self.norm(x)


@dataclass
class Encoded:
    ctx_latent: Tensor | None  # [(B*T), N_kept, d]
    cat_latent: Tensor  # [B, T, d_cat]
    ts_latent: Tensor | None
    aux_latent: Tensor | None
    commit: dict = field(default_factory=dict)
    vq: dict = field(default_factory=dict)  # branch -> RVQOutput
    keep_index: np.ndarray | None = None
    ctx_embed: Tensor | None = None
    ts_embed: Tensor | None = None


class FusionSF(Module):
    """Parameters plus codebook state of the forecaster."""

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        cfg.validate()
        self.cfg = cfg
        self._seed = seed
        rng = derive_rng(seed, "init")
        d = cfg.dim
        n_patch_feat = cfg.ctx_channels * cfg.patch_size[0] * cfg.patch_size[1]
        tf = dict(heads=cfg.heads, dim_head=cfg.dim_head, mlp_ratio=cfg.mlp_ratio, dropout=cfg.dropout, use_glu=cfg.use_glu)
        self.cat_dim = d * (int(cfg.use_ts) + int(cfg.use_aux))
        if cfg.use_ctx:
            self.ctx_embed = MLP(n_patch_feat, d, d, rng)
            self.vit = Transformer(d, cfg.depth, rng=rng, **tf)
            self.fuse_norm_q = LayerNorm(d)
            self.fuse_norm_kv = LayerNorm(self.cat_dim)
            self.fuse_attn = AttentionParams(d, cfg.heads, cfg.dim_head, rng, kv_dim=self.cat_dim)
        if cfg.use_ts:
            self.ts_embed = MLP(cfg.ts_channels, d, d, rng)
            self.ts_encoder = Transformer(d, cfg.depth, rng=rng, **tf)
        if cfg.use_aux:
            self.aux_embed = MLP(cfg.aux_channels, d, d, rng)
            self.aux_encoder = Transformer(d, cfg.depth, rng=rng, **tf)
        dec_in = self.cat_dim + (d if cfg.use_ctx else 0)
        self.dec_in = MLP(dec_in, cfg.decoder_dim, cfg.decoder_dim, rng)
        self.decoder = Transformer(
            cfg.decoder_dim, cfg.decoder_depth, cfg.decoder_heads, cfg.decoder_dim_head,
            cfg.mlp_ratio, cfg.dropout, cfg.use_glu, rng,
        )
        self.head = Linear(cfg.decoder_dim, cfg.ts_channels, rng)
        self._rvq: dict[str, ResidualVQ | None] = {b: None for b in self.vq_branches()}
        self._centers = patch_centers(cfg.image_size, cfg.patch_size)
        self._ctx_tables = build_rope_tables(self._centers, cfg.dim_head, cfg.max_freq)
        hours = np.arange(cfg.T_in)
        self._time_tables = build_rope_tables(hours, cfg.dim_head)
        self._dec_tables = build_rope_tables(hours, cfg.decoder_dim_head)

    # ------------------------------------------------------------ vq state

    def vq_branches(self) -> list[str]:
        cfg = self.cfg
        out = []
        if cfg.use_ctx and cfg.vq_in_ctx:
            out.append("ctx")
        if cfg.use_ts and cfg.vq_in_ts:
            out.append("ts")
        if cfg.use_aux and cfg.vq_in_guide:
            out.append("aux")
        return out

    @property
    def rvq(self) -> dict[str, ResidualVQ | None]:
        return self._rvq

    def _quantize(self, branch: str, z: Tensor, override: dict | None) -> RVQOutput:
        rvq = self._rvq[branch]
        if rvq is None:
            cfg = self.cfg
            rvq = ResidualVQ.init_from(
                z.data, cfg.num_quantizers, cfg.codebook_size, derive_rng(self._seed, f"codebook-{branch}"),
                cfg.vq_decay, cfg.vq_eps, cfg.commitment_weight,
            )
            self._rvq[branch] = rvq
        if override and branch in override:
            frozen, offset = override[branch]
            return residual_quantize(rvq, z, frozen=frozen, offset=offset)
        return residual_quantize(rvq, z)

    # ------------------------------------------------------------ forward

    def embed(self, x: np.ndarray, branch: str) -> Tensor:
        """ctx: ``[B, T, C, H, W]`` -> ``[(B*T), Np, d]``; ts/aux: ``[B, T, C]`` -> ``[(B*T), 1, d]``."""
        if branch == "ctx":
            if x.ndim != 5:
                raise ShapeError(f"ctx input must be [B, T, C, H, W], got {x.shape}")
            return self.ctx_embed(Tensor(patchify(x, self.cfg.patch_size)))
        if branch not in ("ts", "aux"):
            raise ValueError(f"unknown branch {branch!r}")
        if x.ndim != 3:
            raise ShapeError(f"{branch} input must be [B, T, C], got {x.shape}")
        b, t, c = x.shape
        mlp = self.ts_embed if branch == "ts" else self.aux_embed
        return mlp(Tensor(x.reshape(b * t, 1, c)))

    def encode(self, batch: Batch, training: bool = False, rng=None, vq_override=None) -> Encoded:
        cfg = self.cfg
        b = len(batch)
        t = cfg.T_in
        if batch.x_ts.shape[1] != t or batch.x_aux.shape[1] != cfg.T_out:
            raise ShapeError(f"series lengths {batch.x_ts.shape[1]}/{batch.x_aux.shape[1]} do not match T_in/T_out {t}/{cfg.T_out}")
        commit, vq_out = {}, {}
        enc = Encoded(None, None, None, None, commit, vq_out)
        parts = []
        if cfg.use_ts:
            with _layer("ts_embed"):
                z = self.embed(batch.x_ts, "ts")
            if training and cfg.masking and cfg.ts_masking_ratio > 0:
                keep = random_mask(t, b, cfg.ts_masking_ratio, rng, True)
                hour_mask = np.zeros((b, t))
                np.put_along_axis(hour_mask, keep, 1.0, axis=1)
                z = z * hour_mask.reshape(b * t, 1, 1)
            if "ts" in self._rvq:
                res = self._quantize("ts", z, vq_override)
                vq_out["ts"], commit["ts"], z = res, res.commit, res.out
            enc.ts_embed = z
            with _layer("ts_encoder"):
                enc.ts_latent = self.ts_encoder(z.reshape(b, t, cfg.dim), self._time_tables, training, rng)
            parts.append(enc.ts_latent)
        if cfg.use_aux:
            with _layer("aux_embed"):
                z = self.embed(batch.x_aux, "aux")
            if "aux" in self._rvq:
                res = self._quantize("aux", z, vq_override)
                vq_out["aux"], commit["aux"], z = res, res.commit, res.out
            with _layer("aux_encoder"):
                enc.aux_latent = self.aux_encoder(z.reshape(b, t, cfg.dim), self._time_tables, training, rng)
            parts.append(enc.aux_latent)
        enc.cat_latent = parts[0] if len(parts) == 1 else T.concat(parts, axis=-1)
        if cfg.use_ctx:
            # the embedding is per token, so dropping raw patches first is equivalent and cheaper
            if batch.x_ctx.ndim != 5:
                raise ShapeError(f"ctx input must be [B, T, C, H, W], got {batch.x_ctx.shape}")
            patches = patchify(batch.x_ctx, cfg.patch_size)
            n_p = patches.shape[1]
            ratio = cfg.ctx_masking_ratio if cfg.masking else 0.0
            keep = random_mask(n_p, b * t, ratio, rng, training)
            enc.keep_index = keep
            if keep.shape[1] < n_p:
                patches = np.take_along_axis(patches, keep[..., None], axis=1)
            with _layer("ctx_embed"):
                z = self.ctx_embed(Tensor(patches))
            tables = self._ctx_tables.take(keep)
            if "ctx" in self._rvq:
                res = self._quantize("ctx", z, vq_override)
                vq_out["ctx"], commit["ctx"], z = res, res.commit, res.out
            enc.ctx_embed = z
            with _layer("vision_transformer"):
                enc.ctx_latent = self.vit(z, tables, training, rng)
        return enc

    def fuse(self, ctx_latent: Tensor, cat_latent: Tensor, plant_pos: np.ndarray, keep_index: np.ndarray, training=False, rng=None) -> Tensor:
        """Context tokens of every hour query the series latents (all hours) of their own sample.

        Queries carry patch-centre rotary tables, keys the plant coordinate.
        """
        cfg = self.cfg
        b, t = cat_latent.shape[0], cat_latent.shape[1]
        if ctx_latent.shape[0] != b * t:
            raise ShapeError(f"fuse: {ctx_latent.shape[0]} context groups for batch {b} x {t} hours (hour alignment)")
        n_kept = ctx_latent.shape[1]
        q = ctx_latent.reshape(b, t * n_kept, cfg.dim)
        q_tables = self._ctx_tables.take(keep_index)
        q_tables = RopeTables(q_tables.sin.reshape(b, t * n_kept, -1), q_tables.cos.reshape(b, t * n_kept, -1))
        plant = np.repeat(np.asarray(plant_pos, dtype=np.float64)[:, None, :], t, axis=1)
        kv_tables = build_rope_tables(plant, cfg.dim_head, cfg.max_freq)
        with _layer("fusion"):
            att = cross_attention(self.fuse_norm_q(q), self.fuse_norm_kv(cat_latent), self.fuse_attn,
                                  q_tables, kv_tables, cfg.dropout, training, rng)
            return ctx_latent + att.reshape(b * t, n_kept, cfg.dim)

    def decode(self, mixed: Tensor | None, cat_latent: Tensor, training=False, rng=None) -> Tensor:
        """Pool patch tokens per hour, join the hour-aligned series latents, decode to ``[B, T_out, C_ts]``."""
        cfg = self.cfg
        b, t = cat_latent.shape[0], cat_latent.shape[1]
        x = cat_latent
        if mixed is not None:
            pooled = T.mean(mixed, axis=1).reshape(b, t, cfg.dim)
            x = T.concat([pooled, cat_latent], axis=-1)
        with _layer("decoder_mlp"):
            h = self.dec_in(x)
        with _layer("decoder_transformer"):
            h = self.decoder(h, self._dec_tables, training, rng)
        with _layer("prediction_head"):
            return self.head(h)

    def forward(self, batch: Batch, training: bool = False, rng=None, vq_override=None) -> tuple[Tensor, Encoded]:
        enc = self.encode(batch, training, rng, vq_override)
        mixed = None
        if self.cfg.use_ctx:
            mixed = self.fuse(enc.ctx_latent, enc.cat_latent, batch.plant_pos, enc.keep_index, training, rng)
        return self.decode(mixed, enc.cat_latent, training, rng), enc

    def predict(self, batch: Batch) -> np.ndarray:
        """Inference: no masking, no dropout, clamped to the normalized power range."""
        with T.no_grad():
            y, _ = self.forward(batch, training=False)
        return np.clip(y.data, 0.0, 1.0)

    def commit_total(self, enc: Encoded) -> Tensor | None:
        cfg = self.cfg
        weights = {"ctx": cfg.commit_weight_ctx, "ts": cfg.commit_weight_ts, "aux": cfg.commit_weight_aux}
        total = None
        for branch, loss in enc.commit.items():
            term = loss * weights[branch]
            total = term if total is None else total + term
        return total * cfg.commitment_weight if total is not None else None

    def loss(self, batch: Batch, training=False, rng=None, vq_override=None) -> tuple[Tensor, Tensor, Encoded]:
        """Return ``(total, prediction_mse, encoded, y_hat)``."""
        y_hat, enc = self.forward(batch, training, rng, vq_override)
        diff = y_hat - Tensor(batch.y)
        mse = T.mean(diff * diff)
        commit = self.commit_total(enc)
        total = mse + commit if commit is not None else mse
        return total, mse, enc, y_hat

    def ema_update(self, enc: Encoded, rng=None) -> None:
        dead = self.cfg.dead_code_threshold if self.cfg.reseed_dead_codes else None
        for branch, res in enc.vq.items():
            rvq_ema_update(self._rvq[branch], res, rng=rng, dead_after=dead)

    # ------------------------------------------------------------ checkpoints

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {name: p.data for name, p in self.named_parameters()}
        for branch, rvq in self._rvq.items():
            if rvq is None:
                continue
            for s, cb in enumerate(rvq.stages):
                out[f"vq_{branch}/vq.stage{s}.codes"] = cb.codes
                out[f"vq_{branch}/vq.stage{s}.counts"] = cb.ema_counts
                out[f"vq_{branch}/vq.stage{s}.sums"] = cb.ema_sums
                out[f"vq_{branch}/vq.stage{s}.idle"] = cb.idle.astype(np.float64)
        return out


class TrainingError(RuntimeError):
    pass


def training_step(batch: Batch, model: FusionSF, opt: AdamW, rng: np.random.Generator) -> tuple[float, float]:
    """One optimisation step; returns ``(loss_total, batch_mae)``."""
    try:
        total, mse, enc, y_hat = model.loss(batch, training=True, rng=rng)
    except NumericError as exc:
        raise TrainingError(f"non-finite forward at optimizer step {opt.state.step + 1}: {exc}") from None
    opt.zero_grad()
    try:
        T.backward(total)
    except NumericError as exc:
        raise TrainingError(f"non-finite gradient at optimizer step {opt.state.step + 1}: {exc}") from None
    opt.step()
    model.ema_update(enc, rng)
    mae = float(np.abs(y_hat.data - batch.y).mean())
    return float(total.data), mae


def save_checkpoint(path, model: FusionSF, opt: AdamW | None = None, extra: dict | None = None) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    files = {}
    for name, arr in model.state_arrays().items():
        fname = name + ".fstn"
        (path / fname).parent.mkdir(parents=True, exist_ok=True)
        container.save(path / fname, arr, name)
        files[name] = fname
    opt_info = None
    if opt is not None and opt.state.m:
        (path / "optim").mkdir(exist_ok=True)
        for i, (m, v) in enumerate(zip(opt.state.m, opt.state.v)):
            container.save(path / f"optim/m{i}.fstn", m, f"m{i}")
            container.save(path / f"optim/v{i}.fstn", v, f"v{i}")
        st = opt.state
        opt_info = {"step": st.step, "lr": st.lr, "weight_decay": st.weight_decay, "beta1": st.beta1,
                    "beta2": st.beta2, "eps": st.eps, "n": len(st.m)}
    manifest = {
        "config": asdict(model.cfg),
        "seed": model._seed,
        "step": opt.state.step if opt is not None else 0,
        "files": files,
        "vq": {b: (len(r.stages) if r is not None else 0) for b, r in model.rvq.items()},
        "optimizer": opt_info,
        "extra": extra or {},
    }
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def load_checkpoint(path) -> tuple[FusionSF, AdamW, dict]:
    path = Path(path)
    manifest = json.loads((path / "manifest.json").read_text())
    cfg = ModelConfig(**manifest["config"])
    model = FusionSF(cfg, seed=manifest["seed"])
    params = dict(model.named_parameters())
    for name, fname in manifest["files"].items():
        arr, _ = container.load(path / fname)
        if name in params:
            if params[name].shape != arr.shape:
                raise ShapeError(f"checkpoint tensor {name} has shape {arr.shape}, model expects {params[name].shape}")
            params[name].data = arr
    for branch, n in manifest["vq"].items():
        if not n:
            continue
        stages = []
        for s in range(n):
            get = lambda k: container.load(path / manifest["files"][f"vq_{branch}/vq.stage{s}.{k}"])[0]
            cb = Codebook(get("codes"), get("counts"), get("sums"), cfg.vq_decay, cfg.vq_eps, frozen_zero=s > 0)
            cb.idle = get("idle").astype(np.int64)
            stages.append(cb)
        model.rvq[branch] = ResidualVQ(stages, cfg.commitment_weight)
    opt = AdamW(model.parameters())
    info = manifest.get("optimizer")
    if info:
        st = opt.state
        st.step, st.lr, st.weight_decay = info["step"], info["lr"], info["weight_decay"]
        st.beta1, st.beta2, st.eps = info["beta1"], info["beta2"], info["eps"]
        st.m = [container.load(path / f"optim/m{i}.fstn")[0] for i in range(info["n"])]
        st.v = [container.load(path / f"optim/v{i}.fstn")[0] for i in range(info["n"])]
    return model, opt, manifest
