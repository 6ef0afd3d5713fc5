"""Attention-based joint predictor, written functionally over a dict of named tensors.

Layout of one forward pass::

    map / agent / goal tokens --embed--> per-view encoder (self-attention)  -> E
    [late fusion] route tokens --embed--> reduction decoder (m queries) --+
                  goal         --embed-------------------------------------+--> concat to E
    K mode queries + own-agent embedding --> decoder (joint self-attn over
        all modes x agents, cross-attn into the agent's view) --> waypoints
    mode queries pooled over agents --> one confidence logit per joint mode
"""
from __future__ import annotations

import math
from collections import OrderedDict

import numpy as np
import torch
import torch.nn.functional as F

from navfuse.errors import NonFiniteActivation, TooFewRouteTokens
from navfuse.prediction import PredictionOutput
from navfuse.predictor.config import ModelConfig, Variant
from navfuse.predictor.features import AGENT_FEATS, GOAL_FEATS, POLY_FEATS, Batch, SceneFeatures, map_feature_dim

_NEG = -1e9


class ModelParams(OrderedDict):
    """Ordered mapping ``name -> float64 ndarray``."""

    def to_torch(self, dtype=torch.float64, requires_grad=False) -> "OrderedDict[str, torch.Tensor]":
        out = OrderedDict()
        for k, v in self.items():
            t = torch.tensor(v, dtype=dtype)
            t.requires_grad_(requires_grad)
            out[k] = t
        return out

    @classmethod
    def from_torch(cls, tensors) -> "ModelParams":
        return cls((k, t.detach().to(torch.float64).cpu().numpy().copy()) for k, t in tensors.items())

    def num_parameters(self) -> int:
        return int(sum(v.size for v in self.values()))


# ---------------------------------------------------------------------------
# parameter shapes and initialisation


def _mlp_shapes(prefix, n_in, hidden, n_out):
    return [(f"{prefix}.w1", (n_in, hidden)), (f"{prefix}.b1", (hidden,)),
            (f"{prefix}.w2", (hidden, n_out)), (f"{prefix}.b2", (n_out,))]


def _ln_shapes(prefix, d):
    return [(f"{prefix}.g", (d,)), (f"{prefix}.b", (d,))]


def _attn_shapes(prefix, d):
    out = []
    for n in ("q", "k", "v", "o"):
        out += [(f"{prefix}.w{n}", (d, d)), (f"{prefix}.b{n}", (d,))]
    return out


def param_shapes(cfg: ModelConfig, variant: Variant) -> "OrderedDict[str, tuple]":
    variant = Variant(variant)
    D, H = cfg.hidden_dim, cfg.hidden_dim * cfg.ff_mult
    s = []
    s += _mlp_shapes("embed_map", map_feature_dim(variant), D, D)
    s += _mlp_shapes("embed_agent", AGENT_FEATS, D, D)
    if variant.early_fusion or variant.late_fusion:
        s += _mlp_shapes("embed_goal", GOAL_FEATS, D, D)
    if variant.late_fusion:
        s += _mlp_shapes("embed_route", POLY_FEATS, D, D)
        s += [("reduce.queries", (cfg.reduction_queries, D)), ("reduce.null", (D,))]
        s += _ln_shapes("reduce.ln_kv", D) + _attn_shapes("reduce.attn", D)
        s += _ln_shapes("reduce.ln_ff", D) + _mlp_shapes("reduce.ff", D, H, D)
    for l in range(cfg.encoder_layers):
        p = f"enc{l}"
        s += _ln_shapes(f"{p}.ln1", D) + _attn_shapes(f"{p}.attn", D)
        s += _ln_shapes(f"{p}.ln2", D) + _mlp_shapes(f"{p}.ff", D, H, D)
    s += [("mode_queries", (cfg.modes, D))]
    for l in range(cfg.decoder_layers):
        p = f"dec{l}"
        s += _ln_shapes(f"{p}.ln_sa", D) + _attn_shapes(f"{p}.sa", D)
        s += _ln_shapes(f"{p}.ln_q", D) + _ln_shapes(f"{p}.ln_kv", D) + _attn_shapes(f"{p}.xa", D)
        s += _ln_shapes(f"{p}.ln_ff", D) + _mlp_shapes(f"{p}.ff", D, H, D)
    s += _ln_shapes("head_traj.ln", D) + _mlp_shapes("head_traj", D, D, cfg.waypoints * 4)
    s += _ln_shapes("head_conf.ln", D) + _mlp_shapes("head_conf", D, D, 1)
    return OrderedDict(s)


def init_params(cfg: ModelConfig, variant: Variant, seed: int) -> ModelParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights; LayerNorm gain 1, bias 0."""
    rng = np.random.default_rng(seed)
    shapes = param_shapes(cfg, variant)
    params = ModelParams()
    for name, shape in shapes.items():
        prefix, _, leaf = name.rpartition(".")
        if ".ln" in name:
            params[name] = np.ones(shape) if leaf == "g" else np.zeros(shape)
        elif name in ("mode_queries", "reduce.queries", "reduce.null"):
            params[name] = rng.uniform(-1.0, 1.0, size=shape)
        else:
            # biases share the fan-in of their weight matrix
            fan_in = shape[0] if leaf.startswith("w") else shapes[f"{prefix}.w{leaf[1:]}"][0]
            bound = 1.0 / math.sqrt(fan_in)
            params[name] = rng.uniform(-bound, bound, size=shape)
    return params


# ---------------------------------------------------------------------------
# building blocks


def _check(x: torch.Tensor, layer: str) -> torch.Tensor:
    if not torch.isfinite(x).all():
        raise NonFiniteActivation(layer)
    return x


def _mlp(p, prefix, x):
    h = F.gelu(x @ p[f"{prefix}.w1"] + p[f"{prefix}.b1"])
    return h @ p[f"{prefix}.w2"] + p[f"{prefix}.b2"]


def _ln(p, prefix, x):
    return F.layer_norm(x, x.shape[-1:], p[f"{prefix}.g"], p[f"{prefix}.b"])


def _attn(p, prefix, q_in, kv_in, key_mask, heads):
    """Multi-head attention; ``key_mask`` is ``(batch, n_keys)`` with True = attend."""
    B, Nq, D = q_in.shape
    Nk = kv_in.shape[1]
    dh = D // heads
    q = (q_in @ p[f"{prefix}.wq"] + p[f"{prefix}.bq"]).view(B, Nq, heads, dh).transpose(1, 2)
    k = (kv_in @ p[f"{prefix}.wk"] + p[f"{prefix}.bk"]).view(B, Nk, heads, dh).transpose(1, 2)
    v = (kv_in @ p[f"{prefix}.wv"] + p[f"{prefix}.bv"]).view(B, Nk, heads, dh).transpose(1, 2)
    scores = (q @ k.transpose(-1, -2)) / math.sqrt(dh)
    if key_mask is not None:
        scores = scores.masked_fill(~key_mask[:, None, None, :], _NEG)
    w = torch.softmax(scores, dim=-1)
    out = (w @ v).transpose(1, 2).reshape(B, Nq, D)
    return out @ p[f"{prefix}.wo"] + p[f"{prefix}.bo"]


def _encoder_layer(p, prefix, x, mask, heads):
    h = _ln(p, f"{prefix}.ln1", x)
    x = x + _attn(p, f"{prefix}.attn", h, h, mask, heads)
    return x + _mlp(p, f"{prefix}.ff", _ln(p, f"{prefix}.ln2", x))


def reduction_decode(p, route_tokens: torch.Tensor, cfg: ModelConfig, mask: torch.Tensor | None = None):
    """Compress ``(..., n, D)`` route embeddings into ``(..., m, D)`` with m learned queries.

    Pure cross-attention: every output is an attention-weighted mix of the
    route tokens' value projections.
    """
    n = route_tokens.shape[-2]
    if mask is None:
        if n <= cfg.reduction_queries:
            raise TooFewRouteTokens(f"{n} route tokens for {cfg.reduction_queries} reduction queries")
        mask = torch.ones(route_tokens.shape[:-1], dtype=torch.bool)
    lead = route_tokens.shape[:-2]
    kv = route_tokens.reshape(-1, n, route_tokens.shape[-1])
    m = mask.reshape(-1, n)
    q = p["reduce.queries"].unsqueeze(0).expand(kv.shape[0], -1, -1)
    out = _attn(p, "reduce.attn", q, _ln(p, "reduce.ln_kv", kv), m, cfg.heads)
    return out.reshape(*lead, cfg.reduction_queries, -1)


def pad_route_tokens(p, route_emb: torch.Tensor, route_mask: torch.Tensor, m: int):
    """Append learned null tokens so every view has at least ``m + 1`` route tokens."""
    B, A, _, D = route_emb.shape
    n = route_mask.sum(-1, keepdim=True)  # (B, A, 1)
    slots = torch.arange(m + 1).view(1, 1, -1)
    null_mask = slots < (m + 1 - n)
    null = p["reduce.null"].view(1, 1, 1, D).expand(B, A, m + 1, D)
    return torch.cat([route_emb, null], dim=2), torch.cat([route_mask, null_mask], dim=2)


# ---------------------------------------------------------------------------
# forward


def _tensor(x, dtype):
    return torch.as_tensor(x, dtype=dtype)


def encode(p, batch: Batch, cfg: ModelConfig, variant: Variant, dtype=torch.float64):
    """Run the per-view encoder; returns ``(tokens (B, A, N, D), mask (B, A, N))``."""
    variant = Variant(variant)
    focal = torch.as_tensor(batch.focal_mask)
    agent_emb = _mlp(p, "embed_agent", _tensor(batch.agent_tokens, dtype))
    map_emb = _mlp(p, "embed_map", _tensor(batch.map_tokens, dtype))
    parts = [agent_emb, map_emb]
    masks = [torch.as_tensor(batch.agent_mask), torch.as_tensor(batch.map_mask)]
    if variant.early_fusion:
        parts.append(_mlp(p, "embed_goal", _tensor(batch.goal, dtype)).unsqueeze(2))
        masks.append(focal.unsqueeze(-1))
    x = _check(torch.cat(parts, dim=2), "embed")
    mask = torch.cat(masks, dim=2)
    B, A, N, D = x.shape
    x = x.reshape(B * A, N, D)
    m = mask.reshape(B * A, N)
    for l in range(cfg.encoder_layers):
        x = _check(_encoder_layer(p, f"enc{l}", x, m, cfg.heads), f"enc{l}")
    return x.reshape(B, A, N, D), mask


def forward(p, batch: Batch, cfg: ModelConfig, variant: Variant, dtype=torch.float64) -> dict:
    """Return ``traj (B, K, A, T, 4)`` (x, y, cos, sin in agent frames) and ``logits (B, K)``."""
    variant = Variant(variant)
    focal = torch.as_tensor(batch.focal_mask)
    E, mem_mask = encode(p, batch, cfg, variant, dtype)
    B, A, N, D = E.shape
    own = E[:, :, 0]  # own-agent token is row 0 of every view
    memory = E
    if variant.late_fusion:
        r_emb = _mlp(p, "embed_route", _tensor(batch.route_tokens, dtype))
        r_emb, r_mask = pad_route_tokens(p, r_emb, torch.as_tensor(batch.route_mask), cfg.reduction_queries)
        R = reduction_decode(p, r_emb, cfg, r_mask)
        R = _check(R + _mlp(p, "reduce.ff", _ln(p, "reduce.ln_ff", R)), "reduce")
        G = _mlp(p, "embed_goal", _tensor(batch.goal, dtype)).unsqueeze(2)
        memory = torch.cat([E, R, G], dim=2)
        extra = torch.ones(B, A, cfg.reduction_queries + 1, dtype=torch.bool) & focal.unsqueeze(-1)
        mem_mask = torch.cat([mem_mask, extra], dim=2)

    K = cfg.modes
    q = p["mode_queries"].view(1, K, 1, D) + own.unsqueeze(1)  # (B, K, A, D)
    joint_mask = focal.unsqueeze(1).expand(B, K, A).reshape(B, K * A)
    mem = memory.reshape(B * A, -1, D)
    mm = mem_mask.reshape(B * A, -1)
    for l in range(cfg.decoder_layers):
        pre = f"dec{l}"
        flat = q.reshape(B, K * A, D)
        h = _ln(p, f"{pre}.ln_sa", flat)
        flat = flat + _attn(p, f"{pre}.sa", h, h, joint_mask, cfg.heads)
        qa = flat.view(B, K, A, D).transpose(1, 2).reshape(B * A, K, D)
        qa = qa + _attn(p, f"{pre}.xa", _ln(p, f"{pre}.ln_q", qa), _ln(p, f"{pre}.ln_kv", mem), mm, cfg.heads)
        qa = qa + _mlp(p, f"{pre}.ff", _ln(p, f"{pre}.ln_ff", qa))
        q = _check(qa.view(B, A, K, D).transpose(1, 2), pre)

    T = cfg.waypoints
    out = _mlp(p, "head_traj", _ln(p, "head_traj.ln", q)).view(B, K, A, T, 4)
    traj = torch.cat([out[..., :2] * cfg.pos_scale, out[..., 2:]], dim=-1)
    w = focal.to(dtype).view(B, 1, A, 1)
    pooled = (q * w).sum(2) / w.sum(2).clamp_min(1.0)
    logits = _mlp(p, "head_conf", _ln(p, "head_conf.ln", pooled)).squeeze(-1)
    _check(traj, "head_traj")
    _check(logits, "head_conf")
    return {"traj": traj, "logits": logits}


def to_predictions(out: dict, feats: list[SceneFeatures]) -> list[PredictionOutput]:
    traj = out["traj"].detach().to(torch.float64).numpy()
    logits = out["logits"].detach().to(torch.float64).numpy()
    preds = []
    for b, f in enumerate(feats):
        A = f.num_focal
        t = traj[b, :, :A]
        xyh = np.concatenate([t[..., :2], np.arctan2(t[..., 3], t[..., 2])[..., None]], axis=-1)
        z = logits[b] - logits[b].max()
        conf = np.exp(z)
        conf /= conf.sum()
        preds.append(PredictionOutput(xyh, conf, f.agent_ids, f.frames))
    return preds
