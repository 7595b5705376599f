"""Multimodal fusion transformer over [text; objects; OCR; decode steps]."""
from __future__ import annotations

import numpy as np

from .config import ModelConfig
from .core import tensor as T
from .core.optim import DivergenceError
from .core.tensor import ShapeError, Tensor


def segment_offsets(cfg: ModelConfig) -> dict[str, int]:
    return {
        "text": 0,
        "obj": cfg.k_cap,
        "ocr": cfg.k_cap + cfg.m_cap,
        "decode": cfg.k_cap + cfg.m_cap + cfg.n_cap,
    }


def build_joint_sequence(text: Tensor, obj: Tensor, ocr: Tensor, decode: Tensor, cfg: ModelConfig) -> Tensor:
    """Concatenate the four blocks at fixed offsets along the sequence axis.

    Accepts (rows, d) or (B, rows, d) blocks.
    """
    expect = (cfg.k_cap, cfg.m_cap, cfg.n_cap)
    got = (text.shape[-2], obj.shape[-2], ocr.shape[-2])
    if got != expect:
        raise ShapeError(f"joint sequence blocks have rows {list(got)}, expected {list(expect)}")
    if decode.shape[-2] > cfg.t_cap:
        raise ShapeError(f"{decode.shape[-2]} decode positions exceed t_cap={cfg.t_cap}")
    dims = {b.shape[-1] for b in (text, obj, ocr, decode)}
    if dims != {cfg.d}:
        raise ShapeError(f"block widths {sorted(dims)} differ from d={cfg.d}")
    return T.concat([text, obj, ocr, decode], axis=-2)


def build_mask(valid_lengths, cfg: ModelConfig, t_len: int | None = None) -> np.ndarray:
    """Boolean visibility ``(B, S, S)``: entry [b, i, j] is True iff query i sees key j.

    ``valid_lengths`` is a ``(B, 3)`` array of (k_used, m_used, n_used).
    Context positions see every valid context position; decode step t also
    sees decode steps <= t. Padding rows and columns are fully hidden.
    """
    lengths = np.atleast_2d(np.asarray(valid_lengths, dtype=np.int64))
    t_len = cfg.t_cap if t_len is None else t_len
    caps = (cfg.k_cap, cfg.m_cap, cfg.n_cap)
    ctx = sum(caps)
    s = ctx + t_len
    b = lengths.shape[0]
    valid = np.ones((b, s), dtype=bool)
    start = 0
    for blk, cap in enumerate(caps):
        if np.any(lengths[:, blk] > cap):
            raise ValueError(f"valid length exceeds cap {cap} in block {blk}")
        valid[:, start : start + cap] = np.arange(cap)[None, :] < lengths[:, blk : blk + 1]
        start += cap
    rule = np.zeros((s, s), dtype=bool)
    rule[:ctx, :ctx] = True
    rule[ctx:, :ctx] = True
    rule[ctx:, ctx:] = np.tril(np.ones((t_len, t_len), dtype=bool))
    return rule[None] & valid[:, :, None] & valid[:, None, :]


def additive_mask(visible: np.ndarray) -> np.ndarray:
    """{0, -inf} additive form of a boolean visibility mask."""
    return np.where(visible, 0.0, -np.inf)


def init_fusion_params(cfg: ModelConfig, rng: np.random.Generator) -> dict[str, Tensor]:
    d, f = cfg.d, cfg.ffn_dim
    params: dict[str, Tensor] = {}

    def normal(name, shape):
        params[name] = Tensor(rng.normal(0.0, 0.02, shape), requires_grad=True, name=name)

    def const(name, value, n):
        params[name] = Tensor(np.full(n, value), requires_grad=True, name=name)

    for l in range(cfg.layers):
        p = f"fusion.{l}."
        const(p + "ln1.g", 1.0, d)
        const(p + "ln1.b", 0.0, d)
        for proj in ("q", "k", "v", "o"):
            normal(p + f"attn.{proj}.w", (d, d))
            # a key bias only shifts each query's scores by a constant, which softmax ignores
            if proj != "k":
                const(p + f"attn.{proj}.b", 0.0, d)
        const(p + "ln2.g", 1.0, d)
        const(p + "ln2.b", 0.0, d)
        normal(p + "ffn.w1", (d, f))
        const(p + "ffn.b1", 0.0, f)
        normal(p + "ffn.w2", (f, d))
        const(p + "ffn.b2", 0.0, d)
    const("fusion.ln_f.g", 1.0, d)
    const("fusion.ln_f.b", 0.0, d)
    return params


def _heads(x: Tensor, b: int, s: int, h: int) -> Tensor:
    # (B, S, d) -> (B, H, S, d/H)
    return T.transpose(T.reshape(x, (b, s, h, -1)), (0, 2, 1, 3))


def attention(x: Tensor, visible: np.ndarray, params, prefix: str, cfg: ModelConfig,
              training: bool = False, rng=None, keep=None) -> Tensor:
    b, s, d = x.shape
    h = cfg.heads
    q = _heads(T.matmul(x, params[prefix + "q.w"]) + params[prefix + "q.b"], b, s, h)
    k = _heads(T.matmul(x, params[prefix + "k.w"]), b, s, h)
    v = _heads(T.matmul(x, params[prefix + "v.w"]) + params[prefix + "v.b"], b, s, h)
    scores = T.matmul(q, T.transpose(k)) * (1.0 / np.sqrt(d // h))
    att = T.softmax(scores, axis=-1, mask=visible[:, None, :, :])
    if keep is not None:
        keep.append(att.data)
    att = T.dropout(att, cfg.dropout, rng, training)
    ctx = T.reshape(T.transpose(T.matmul(att, v), (0, 2, 1, 3)), (b, s, d))
    return T.matmul(ctx, params[prefix + "o.w"]) + params[prefix + "o.b"]


def forward(seq: Tensor, visible: np.ndarray, params, cfg: ModelConfig,
            training: bool = False, rng=None, attention_log: list | None = None) -> Tensor:
    """Pre-norm transformer stack followed by a final layer norm.

    ``seq`` is (B, S, d) or (S, d); ``visible`` the matching boolean mask.
    """
    squeeze = seq.ndim == 2
    if squeeze:
        seq = T.reshape(seq, (1,) + seq.shape)
        visible = visible.reshape((1,) + visible.shape[-2:])
    if seq.shape[-1] != cfg.d:
        raise ShapeError(f"sequence width {seq.shape[-1]} != d={cfg.d}")
    x = seq
    for l in range(cfg.layers):
        p = f"fusion.{l}."
        hdn = T.layer_norm(x, params[p + "ln1.g"], params[p + "ln1.b"])
        x = x + T.dropout(attention(hdn, visible, params, p + "attn.", cfg, training, rng, attention_log),
                          cfg.dropout, rng, training)
        hdn = T.layer_norm(x, params[p + "ln2.g"], params[p + "ln2.b"])
        ff = T.matmul(T.gelu(T.matmul(hdn, params[p + "ffn.w1"]) + params[p + "ffn.b1"]), params[p + "ffn.w2"])
        x = x + T.dropout(ff + params[p + "ffn.b2"], cfg.dropout, rng, training)
        if not np.all(np.isfinite(x.data)):
            raise DivergenceError(f"non-finite activations after fusion layer {l}")
    out = T.layer_norm(x, params["fusion.ln_f.g"], params["fusion.ln_f.b"])
    if squeeze:
        out = T.reshape(out, out.shape[1:])
    return out
