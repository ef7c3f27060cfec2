"""Two-stage patch transformer with token or regression grasp heads.

Stage 1 reads the full image plus a detect instruction and emits box-token
logits. Stage 2 reads the full image, optionally the zoomed crop, plus a grasp
instruction and emits the grasp. Both stages share every weight; learned
query slots at the end of the sequence carry the outputs.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from . import layers as L

HEAD_KINDS = ("token", "regression")


@dataclass(frozen=True)
class ModelConfig:
    image_side: int = 64
    patch: int = 8
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    mlp_ratio: int = 4
    n_bins: int = 1024
    codebook_dim: int = 96
    n_colors: int = 6
    n_shapes: int = 4
    head_kind: str = "token"
    n_box_slots: int = 4
    n_grasp_slots: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.image_side % self.patch:
            raise ValueError("image_side must be divisible by patch")
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")
        if self.head_kind not in HEAD_KINDS:
            raise ValueError(f"head_kind must be one of {HEAD_KINDS}")

    @property
    def n_patches(self) -> int:
        return (self.image_side // self.patch) ** 2

    @property
    def n_conditions(self) -> int:
        return self.n_colors * self.n_shapes * 2

    @property
    def grasp_scales(self) -> np.ndarray:
        s = float(self.image_side)
        return np.array([s, s, s, s, 180.0])

    def to_dict(self) -> dict:
        return asdict(self)


def init_params(cfg: ModelConfig) -> dict[str, np.ndarray]:
    """Deterministic initialization from ``cfg.seed``.

    The token head gives every slot its own zero-initialized projection into
    a shared bin codebook whose rows are cosine features of the bin position,
    so every slot starts with uniform logits and neighbouring bins start out
    similar. Box slots come first, then grasp slots.
    """
    rng = np.random.default_rng(cfg.seed)
    d, P = cfg.d_model, cfg.patch
    hidden = cfg.mlp_ratio * d
    out_std = 0.02 / np.sqrt(2 * cfg.n_layers)

    def normal(*shape, std=0.02):
        return rng.normal(0.0, std, shape)

    p = {
        "patch.w": normal(P * P * 3, d, std=1.0 / np.sqrt(P * P * 3)),
        "patch.b": np.zeros(d),
        "pos": grid_sincos(cfg.image_side // P, d),
        "seg": normal(2, d),
        "cond.color": normal(cfg.n_colors, d),
        "cond.shape": normal(cfg.n_shapes, d),
        "cond.task": normal(2, d),
        "query.box": normal(cfg.n_box_slots, d),
        "query.grasp": normal(cfg.n_grasp_slots, d),
    }
    for i in range(cfg.n_layers):
        k = f"blocks.{i}."
        p[k + "ln1.g"] = np.ones(d)
        p[k + "ln1.b"] = np.zeros(d)
        p[k + "attn.wqkv"] = normal(d, 3 * d)
        p[k + "attn.bqkv"] = np.zeros(3 * d)
        p[k + "attn.wo"] = normal(d, d, std=out_std)
        p[k + "attn.bo"] = np.zeros(d)
        p[k + "ln2.g"] = np.ones(d)
        p[k + "ln2.b"] = np.zeros(d)
        p[k + "mlp.w1"] = normal(d, hidden)
        p[k + "mlp.b1"] = np.zeros(hidden)
        p[k + "mlp.w2"] = normal(hidden, d, std=out_std)
        p[k + "mlp.b2"] = np.zeros(d)
    p["lnf.g"] = np.ones(d)
    p["lnf.b"] = np.zeros(d)
    slots = cfg.n_box_slots + cfg.n_grasp_slots
    p["tok_head.proj"] = np.zeros((slots, d, cfg.codebook_dim))
    p["tok_head.codebook"] = bin_codebook(cfg.n_bins, cfg.codebook_dim)
    p["tok_head.b"] = np.zeros((slots, cfg.n_bins))
    p["reg_head.w1"] = normal(d, d, std=1.0 / np.sqrt(d))
    p["reg_head.b1"] = np.zeros(d)
    p["reg_head.w2"] = normal(d, 1)
    p["reg_head.b2"] = np.zeros(1)
    return p


def grid_sincos(g: int, d: int) -> np.ndarray:
    """[g*g, d] sin/cos features of patch row (first half) and column (second half)."""
    q = d // 4
    freqs = 1.0 / 10000.0 ** (np.arange(q) / q)
    ax = np.arange(g)[:, None] * freqs[None, :]
    one = np.concatenate([np.sin(ax), np.cos(ax)], axis=1)
    rows = np.repeat(one, g, axis=0)
    cols = np.tile(one, (g, 1))
    out = np.zeros((g * g, d))
    out[:, : 2 * q] = rows
    out[:, 2 * q: 4 * q] = cols
    return out


def bin_codebook(n_bins: int, dim: int) -> np.ndarray:
    """DCT-II basis over bin centers: row k holds cos(pi * j * (k + 0.5) / n_bins)."""
    k = np.arange(n_bins)[:, None] + 0.5
    j = np.arange(dim)[None, :]
    return np.cos(np.pi * j * k / n_bins)


def _slots(cfg, stage: int) -> slice:
    return slice(0, cfg.n_box_slots) if stage == 1 else slice(cfg.n_box_slots, cfg.n_box_slots + cfg.n_grasp_slots)


def _tok_head(params, f, sl: slice):
    """f [B, S, d] -> logits [B, S, n_bins] with slot s using projection ``sl.start + s``."""
    z = np.einsum("bsd,sdr->bsr", f, params["tok_head.proj"][sl])
    return z @ params["tok_head.codebook"].T + params["tok_head.b"][sl], z


def _tok_head_backward(params, grads, dlogits, f, z, sl: slice):
    r = z.shape[-1]
    nb = dlogits.shape[-1]
    grads["tok_head.b"][sl] += dlogits.sum(axis=0)
    grads["tok_head.codebook"] += dlogits.reshape(-1, nb).T @ z.reshape(-1, r)
    dz = dlogits @ params["tok_head.codebook"]
    grads["tok_head.proj"][sl] += np.einsum("bsd,bsr->sdr", f, dz)
    return np.einsum("bsr,sdr->bsd", dz, params["tok_head.proj"][sl])


def check_params(params: dict, cfg: ModelConfig):
    ref = init_params(cfg)
    if set(ref) != set(params):
        raise ValueError(f"parameter names differ: {sorted(set(ref) ^ set(params))}")
    for k, v in ref.items():
        if params[k].shape != v.shape:
            raise ValueError(f"{k}: expected shape {v.shape}, got {params[k].shape}")


# --- embeddings -----------------------------------------------------------


def _patchify(cfg: ModelConfig, images: np.ndarray) -> np.ndarray:
    B, S = images.shape[0], cfg.image_side
    if images.shape[1:] != (S, S, 3):
        raise ValueError(f"expected images of shape (B, {S}, {S}, 3), got {images.shape}")
    P, g = cfg.patch, S // cfg.patch
    x = np.asarray(images, dtype=np.float64) / 255.0
    return x.reshape(B, g, P, g, P, 3).transpose(0, 1, 3, 2, 4, 5).reshape(B, g * g, P * P * 3)


def _embed(params, cfg, images):
    x = _patchify(cfg, images)
    return x @ params["patch.w"] + params["patch.b"] + params["pos"], x


def _cond_parts(cfg: ModelConfig, cond):
    cond = np.asarray(cond)
    if np.any(cond < 0) or np.any(cond >= cfg.n_conditions):
        raise ValueError(f"condition ids must lie in [0, {cfg.n_conditions})")
    cat, task = np.divmod(cond, 2)
    color, shape = np.divmod(cat, cfg.n_shapes)
    return color, shape, task


def _cond_embed(params, cfg, cond):
    color, shape, task = _cond_parts(cfg, cond)
    return params["cond.color"][color] + params["cond.shape"][shape] + params["cond.task"][task]


# --- encoder --------------------------------------------------------------


def _encoder(params, cfg, x):
    caches = []
    for i in range(cfg.n_layers):
        k = f"blocks.{i}."
        h1, ln1 = L.layernorm_forward(x, params[k + "ln1.g"], params[k + "ln1.b"])
        a, att = L.attention_forward(
            h1, params[k + "attn.wqkv"], params[k + "attn.bqkv"], params[k + "attn.wo"], params[k + "attn.bo"], cfg.n_heads
        )
        x = x + a
        h2, ln2 = L.layernorm_forward(x, params[k + "ln2.g"], params[k + "ln2.b"])
        m1, _ = L.linear_forward(h2, params[k + "mlp.w1"], params[k + "mlp.b1"])
        g, gc = L.gelu_forward(m1)
        m2, _ = L.linear_forward(g, params[k + "mlp.w2"], params[k + "mlp.b2"])
        x = x + m2
        caches.append((ln1, att, ln2, h2, gc, g))
    return x, caches


def _encoder_backward(params, cfg, dx, caches, grads):
    for i in reversed(range(cfg.n_layers)):
        k = f"blocks.{i}."
        ln1, att, ln2, h2, gc, g = caches[i]
        dg, dw2, db2 = L.linear_backward(dx, g, params[k + "mlp.w2"])
        _acc(grads, k + "mlp.w2", dw2)
        _acc(grads, k + "mlp.b2", db2)
        dm1 = L.gelu_backward(dg, gc)
        dh2, dw1, db1 = L.linear_backward(dm1, h2, params[k + "mlp.w1"])
        _acc(grads, k + "mlp.w1", dw1)
        _acc(grads, k + "mlp.b1", db1)
        dxn, dgam, dbet = L.layernorm_backward(dh2, ln2)
        _acc(grads, k + "ln2.g", dgam)
        _acc(grads, k + "ln2.b", dbet)
        dx = dx + dxn
        dh1, dwqkv, dbqkv, dwo, dbo = L.attention_backward(
            dx, att, params[k + "attn.wqkv"], params[k + "attn.wo"], cfg.n_heads
        )
        _acc(grads, k + "attn.wqkv", dwqkv)
        _acc(grads, k + "attn.bqkv", dbqkv)
        _acc(grads, k + "attn.wo", dwo)
        _acc(grads, k + "attn.bo", dbo)
        dxn, dgam, dbet = L.layernorm_backward(dh1, ln1)
        _acc(grads, k + "ln1.g", dgam)
        _acc(grads, k + "ln1.b", dbet)
        dx = dx + dxn
    return dx


def _acc(grads, name, g):
    grads[name] += g


# --- stages ---------------------------------------------------------------


def _stage1(params, cfg, full_e, detect):
    B = full_e.shape[0]
    seq = np.concatenate(
        [
            full_e + params["seg"][0],
            _cond_embed(params, cfg, detect)[:, None, :],
            np.broadcast_to(params["query.box"], (B,) + params["query.box"].shape),
        ],
        axis=1,
    )
    out, enc = _encoder(params, cfg, seq)
    q = out[:, -cfg.n_box_slots:]
    f, lnf = L.layernorm_forward(q, params["lnf.g"], params["lnf.b"])
    logits, z = _tok_head(params, f, _slots(cfg, 1))
    return logits, (enc, lnf, f, z, seq.shape[1])


def _stage2(params, cfg, full_e, crop_e, grasp):
    B = full_e.shape[0]
    parts = [full_e + params["seg"][0]]
    if crop_e is not None:
        parts.append(crop_e + params["seg"][1])
    parts += [
        _cond_embed(params, cfg, grasp)[:, None, :],
        np.broadcast_to(params["query.grasp"], (B,) + params["query.grasp"].shape),
    ]
    seq = np.concatenate(parts, axis=1)
    out, enc = _encoder(params, cfg, seq)
    q = out[:, -cfg.n_grasp_slots:]
    f, lnf = L.layernorm_forward(q, params["lnf.g"], params["lnf.b"])
    if cfg.head_kind == "token":
        logits, z = _tok_head(params, f, _slots(cfg, 2))
        return logits, (enc, lnf, f, seq.shape[1], z)
    z1 = f @ params["reg_head.w1"] + params["reg_head.b1"]
    h, gc = L.gelu_forward(z1)
    z = (h @ params["reg_head.w2"] + params["reg_head.b2"])[..., 0]
    return L.sigmoid(z), (enc, lnf, f, seq.shape[1], (h, gc))


# --- public single-sample API --------------------------------------------


def patch_embed(params, cfg: ModelConfig, image: np.ndarray) -> np.ndarray:
    """[n_patches, d_model] tokens for one image (pixels scaled to [0, 1])."""
    return _embed(params, cfg, np.asarray(image)[None])[0][0]


def encoder_forward(params, cfg: ModelConfig, token_sets, condition: int, query_slots: int) -> np.ndarray:
    """Final residual-stream states of the query slots.

    ``token_sets`` are [n_i, d_model] arrays (full image first, then the crop);
    4 query slots select the box queries, 5 the grasp queries.
    """
    queries = {cfg.n_box_slots: "query.box", cfg.n_grasp_slots: "query.grasp"}
    if query_slots not in queries:
        raise ValueError(f"query_slots must be one of {sorted(queries)}")
    if len(token_sets) > 2:
        raise ValueError("at most two token sets (full image, crop)")
    for t in token_sets:
        if t.ndim != 2 or t.shape[1] != cfg.d_model:
            raise ValueError(f"token set of shape {t.shape} does not match d_model={cfg.d_model}")
    seq = [t + params["seg"][i] for i, t in enumerate(token_sets)]
    seq += [_cond_embed(params, cfg, [condition]), params[queries[query_slots]]]
    out, _ = _encoder(params, cfg, np.concatenate(seq, axis=0)[None])
    return out[0, -query_slots:]


def stage1_forward(params, cfg: ModelConfig, image, condition: int) -> np.ndarray:
    """Box logits [4, n_bins]."""
    full_e, _ = _embed(params, cfg, np.asarray(image)[None])
    return _stage1(params, cfg, full_e, np.array([condition]))[0][0]


def stage2_forward(params, cfg: ModelConfig, full_image, crop_image, condition: int) -> np.ndarray:
    """Token head: logits [5, n_bins]. Regression head: pixel/degree values [5]."""
    full_e, _ = _embed(params, cfg, np.asarray(full_image)[None])
    crop_e = None if crop_image is None else _embed(params, cfg, np.asarray(crop_image)[None])[0]
    out = _stage2(params, cfg, full_e, crop_e, np.array([condition]))[0][0]
    if cfg.head_kind == "regression":
        return out * cfg.grasp_scales
    return out


def loss_total(box_logits, grasp_out, box_labels, grasp_labels, head_kind: str = "token", lam: float = 1.0):
    """Grasp loss plus ``lam`` times box loss; returns (total, grasp, box).

    ``grasp_labels`` are bin indices for the token head and values normalized
    to [0, 1] for the regression head, whose ``grasp_out`` must be normalized
    the same way.
    """
    lb, _ = L.cross_entropy(np.asarray(box_logits), np.asarray(box_labels))
    if head_kind == "token":
        lg, _ = L.cross_entropy(np.asarray(grasp_out), np.asarray(grasp_labels))
    else:
        lg = float(np.abs(np.asarray(grasp_out) - np.asarray(grasp_labels)).mean())
    return lg + lam * lb, lg, lb


# --- batched training path -----------------------------------------------


def forward(params, cfg: ModelConfig, batch: dict, lam: float = 1.0):
    """Losses for a batch, plus the cache :func:`backward` needs.

    batch keys: images [B,S,S,3], crops [B,S,S,3] or None, detect [B],
    grasp [B], box_tokens [B,4], grasp_tokens [B,5], grasp_norm [B,5].
    """
    full_e, full_x = _embed(params, cfg, batch["images"])
    crops = batch.get("crops")
    crop_e, crop_x = (None, None) if crops is None else _embed(params, cfg, crops)

    box_logits, c1 = _stage1(params, cfg, full_e, batch["detect"])
    grasp_out, c2 = _stage2(params, cfg, full_e, crop_e, batch["grasp"])

    lb, dbox = L.cross_entropy(box_logits, batch["box_tokens"])
    if cfg.head_kind == "token":
        lg, dgrasp = L.cross_entropy(grasp_out, batch["grasp_tokens"])
        slot_sum = cfg.n_box_slots * lb + cfg.n_grasp_slots * lg
    else:
        diff = grasp_out - batch["grasp_norm"]
        lg = float(np.abs(diff).mean())
        dgrasp = np.sign(diff) / diff.size
        slot_sum = float("nan")
    losses = {"total": lg + lam * lb, "grasp": lg, "box": lb, "slot_ce_sum": slot_sum}
    cache = (full_x, crop_x, c1, c2, dbox * lam, dgrasp, grasp_out, batch)
    return losses, cache


def _backward_cache(params, cfg, cache):
    full_x, crop_x, c1, c2, dbox, dgrasp, grasp_out, batch = cache
    grads = {k: np.zeros_like(v) for k, v in params.items()}
    B = full_x.shape[0]
    N = cfg.n_patches
    d = cfg.d_model

    # stage 2 head
    enc2, lnf2, f2, T2, reg = c2
    if cfg.head_kind == "token":
        df2 = _tok_head_backward(params, grads, dgrasp, f2, reg, _slots(cfg, 2))
    else:
        h, gc = reg
        dz = (dgrasp * grasp_out * (1.0 - grasp_out))[..., None]
        dh, dw2, db2 = L.linear_backward(dz, h, params["reg_head.w2"])
        grads["reg_head.w2"] += dw2
        grads["reg_head.b2"] += db2
        dz1 = L.gelu_backward(dh, gc)
        df2, dw1, db1 = L.linear_backward(dz1, f2, params["reg_head.w1"])
        grads["reg_head.w1"] += dw1
        grads["reg_head.b1"] += db1
    dq2, dg, db = L.layernorm_backward(df2, lnf2)
    grads["lnf.g"] += dg
    grads["lnf.b"] += db
    dseq2 = np.zeros((B, T2, d))
    dseq2[:, -cfg.n_grasp_slots:] = dq2
    dseq2 = _encoder_backward(params, cfg, dseq2, enc2, grads)
    grads["query.grasp"] += dseq2[:, -cfg.n_grasp_slots:].sum(axis=0)
    _cond_backward(cfg, grads, batch["grasp"], dseq2[:, -cfg.n_grasp_slots - 1])
    d_full = dseq2[:, :N].copy()
    grads["seg"][0] += dseq2[:, :N].sum(axis=(0, 1))
    d_crop = None
    if crop_x is not None:
        d_crop = dseq2[:, N:2 * N]
        grads["seg"][1] += d_crop.sum(axis=(0, 1))

    # stage 1 head
    enc1, lnf1, f1, z1, T1 = c1
    df1 = _tok_head_backward(params, grads, dbox, f1, z1, _slots(cfg, 1))
    dq1, dg, db = L.layernorm_backward(df1, lnf1)
    grads["lnf.g"] += dg
    grads["lnf.b"] += db
    dseq1 = np.zeros((B, T1, d))
    dseq1[:, -cfg.n_box_slots:] = dq1
    dseq1 = _encoder_backward(params, cfg, dseq1, enc1, grads)
    grads["query.box"] += dseq1[:, -cfg.n_box_slots:].sum(axis=0)
    _cond_backward(cfg, grads, batch["detect"], dseq1[:, -cfg.n_box_slots - 1])
    d_full += dseq1[:, :N]
    grads["seg"][0] += dseq1[:, :N].sum(axis=(0, 1))

    # patch embeddings
    for x, de in ((full_x, d_full), (crop_x, d_crop)):
        if x is None:
            continue
        grads["patch.w"] += x.reshape(-1, x.shape[-1]).T @ de.reshape(-1, d)
        grads["patch.b"] += de.sum(axis=(0, 1))
        grads["pos"] += de.sum(axis=0)

    for k, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in layer {k}")
    return grads


def _cond_backward(cfg, grads, cond, dcond):
    color, shape, task = _cond_parts(cfg, cond)
    np.add.at(grads["cond.color"], color, dcond)
    np.add.at(grads["cond.shape"], shape, dcond)
    np.add.at(grads["cond.task"], task, dcond)


def backward(params, cfg: ModelConfig, batch: dict, lam: float = 1.0):
    """Exact gradients of the total loss; returns (losses, grads)."""
    losses, cache = forward(params, cfg, batch, lam)
    return losses, _backward_cache(params, cfg, cache)


class GraspNet:
    """Inference wrapper matching what :func:`vcot_grasp.vcot.run_pipeline` expects."""

    def __init__(self, cfg: ModelConfig, params: Optional[dict] = None):
        self.cfg = cfg
        self.params = init_params(cfg) if params is None else params
        check_params(self.params, cfg)

    @property
    def head_kind(self) -> str:
        return self.cfg.head_kind

    @property
    def image_side(self) -> int:
        return self.cfg.image_side

    def box_logits(self, image, condition: int) -> np.ndarray:
        return stage1_forward(self.params, self.cfg, image, condition)

    def grasp_output(self, image, crop, condition: int) -> np.ndarray:
        return stage2_forward(self.params, self.cfg, image, crop, condition)
