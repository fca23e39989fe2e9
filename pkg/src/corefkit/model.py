"""A small pre-norm transformer encoder with hand-written backprop (float64).

Parameters live in an ordered ``dict`` of numpy arrays; the order is the
declaration order used by checkpoints. ``forward`` returns the final hidden
states and a cache; ``backward`` accumulates parameter gradients from an
upstream gradient on the hidden states.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

LN_EPS = 1e-5
_GELU_C = np.sqrt(2.0 / np.pi)


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    d_model: int = 32
    n_layers: int = 2
    n_heads: int = 2
    d_ff: int = 64
    max_positions: int = 128
    dropout: float = 0.0

    def __post_init__(self):
        for f in ("vocab_size", "d_model", "n_layers", "n_heads", "d_ff", "max_positions"):
            if getattr(self, f) <= 0:
                raise ValueError(f"{f} must be positive")
        if self.d_model % self.n_heads:
            raise ValueError("heads must divide hidden size")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    d, f, V = cfg.d_model, cfg.d_ff, cfg.vocab_size
    shapes = {"tok_emb": (V, d), "pos_emb": (cfg.max_positions, d)}
    for l in range(cfg.n_layers):
        p = f"l{l}."
        shapes.update({
            p + "ln1_g": (d,), p + "ln1_b": (d,),
            p + "wq": (d, d), p + "bq": (d,),
            p + "wk": (d, d), p + "bk": (d,),
            p + "wv": (d, d), p + "bv": (d,),
            p + "wo": (d, d), p + "bo": (d,),
            p + "ln2_g": (d,), p + "ln2_b": (d,),
            p + "w1": (d, f), p + "b1": (f,),
            p + "w2": (f, d), p + "b2": (d,),
        })
    shapes.update({
        "lnf_g": (d,), "lnf_b": (d,),
        "head_w": (d, d), "head_b": (d,),
        "head_ln_g": (d,), "head_ln_b": (d,),
        "out_b": (V,),
        "copy_v": (d,),
    })
    return shapes


@dataclass
class ModelParams:
    cfg: ModelConfig
    tensors: dict[str, np.ndarray]

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def copy(self) -> "ModelParams":
        return ModelParams(self.cfg, {k: v.copy() for k, v in self.tensors.items()})

    def zeros_like(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.tensors.items()}


def init_params(cfg: ModelConfig, seed: int) -> ModelParams:
    """Normal(0, 0.02) weights, zero biases, unit layer-norm gains, copy gate of ones."""
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in param_shapes(cfg).items():
        short = name.split(".")[-1]
        if short.endswith("_g") or name == "copy_v":
            tensors[name] = np.ones(shape)
        elif short.startswith("b") or short.endswith("_b"):
            tensors[name] = np.zeros(shape)
        else:
            tensors[name] = rng.normal(0.0, 0.02, size=shape)
    return ModelParams(cfg, tensors)


# --- primitives -------------------------------------------------------------


def gelu(x):
    t = np.tanh(_GELU_C * (x + 0.044715 * (x * x * x)))
    return 0.5 * x * (1.0 + t), t


def gelu_grad(x, t):
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * x * x)


def layer_norm(x, g, b):
    mu = x.mean(-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(-1, keepdims=True) + LN_EPS)
    xhat = xc * inv
    return xhat * g + b, (xhat, inv)


def layer_norm_backward(dy, g, cache):
    xhat, inv = cache
    dg = (dy * xhat).reshape(-1, xhat.shape[-1]).sum(0)
    db = dy.reshape(-1, xhat.shape[-1]).sum(0)
    dxhat = dy * g
    dx = inv * (dxhat - dxhat.mean(-1, keepdims=True) - xhat * (dxhat * xhat).mean(-1, keepdims=True))
    return dx, dg, db


def softmax(s, axis=-1):
    m = s.max(axis, keepdims=True)
    e = np.exp(s - m)
    return e / e.sum(axis, keepdims=True)


# --- encoder ----------------------------------------------------------------


@dataclass
class EncoderOutput:
    H: np.ndarray  # (B, n, d)
    cache: dict


def forward(params: ModelParams, input_ids, valid=None, rng: np.random.Generator | None = None) -> EncoderOutput:
    """Encode a (B, n) id batch; ``valid`` marks non-padding positions.

    Dropout on the residual branches is active only when ``rng`` is given
    and the config rate is non-zero.
    """
    cfg = params.cfg
    P = params.tensors
    ids = np.asarray(input_ids)
    if ids.ndim == 1:
        ids = ids[None, :]
    B, n = ids.shape
    if ids.size and (ids.min() < 0 or ids.max() >= cfg.vocab_size):
        raise ValueError("token id out of vocabulary")
    if n > cfg.max_positions:
        raise ValueError(f"sequence length {n} exceeds max_positions {cfg.max_positions}")
    valid = np.ones((B, n), dtype=bool) if valid is None else np.asarray(valid, dtype=bool).reshape(B, n)
    A, dh = cfg.n_heads, cfg.d_head
    key_bias = np.where(valid, 0.0, -np.inf)[:, None, None, :]
    drop = cfg.dropout if rng is not None else 0.0

    x = P["tok_emb"][ids] + P["pos_emb"][:n]
    layers = []
    for l in range(cfg.n_layers):
        p = f"l{l}."
        c = {}
        a_in, c["ln1"] = layer_norm(x, P[p + "ln1_g"], P[p + "ln1_b"])
        q = (a_in @ P[p + "wq"] + P[p + "bq"]).reshape(B, n, A, dh).transpose(0, 2, 1, 3)
        k = (a_in @ P[p + "wk"] + P[p + "bk"]).reshape(B, n, A, dh).transpose(0, 2, 1, 3)
        v = (a_in @ P[p + "wv"] + P[p + "bv"]).reshape(B, n, A, dh).transpose(0, 2, 1, 3)
        att = softmax(q @ k.transpose(0, 1, 3, 2) / np.sqrt(dh) + key_bias)
        ctx = (att @ v).transpose(0, 2, 1, 3).reshape(B, n, A * dh)
        o = ctx @ P[p + "wo"] + P[p + "bo"]
        if drop:
            c["m1"] = (rng.random(o.shape) >= drop) / (1.0 - drop)
            o = o * c["m1"]
        x = x + o
        f_in, c["ln2"] = layer_norm(x, P[p + "ln2_g"], P[p + "ln2_b"])
        h1 = f_in @ P[p + "w1"] + P[p + "b1"]
        g, t = gelu(h1)
        f = g @ P[p + "w2"] + P[p + "b2"]
        if drop:
            c["m2"] = (rng.random(f.shape) >= drop) / (1.0 - drop)
            f = f * c["m2"]
        x = x + f
        c.update(a_in=a_in, q=q, k=k, v=v, att=att, ctx=ctx, f_in=f_in, h1=h1, g=g, t=t)
        layers.append(c)
    H, lnf = layer_norm(x, P["lnf_g"], P["lnf_b"])
    return EncoderOutput(H, {"ids": ids, "valid": valid, "layers": layers, "lnf": lnf, "shape": (B, n)})


def backward(params: ModelParams, cache: dict, dH, grads: dict[str, np.ndarray] | None = None) -> dict[str, np.ndarray]:
    """Reverse-mode gradients of the encoder given dL/dH; accumulates into ``grads``."""
    cfg = params.cfg
    P = params.tensors
    if grads is None:
        grads = params.zeros_like()
    B, n = cache["shape"]
    dH = np.asarray(dH).reshape(B, n, cfg.d_model)
    if len(cache["layers"]) != cfg.n_layers:
        raise ValueError("cache does not match model config")
    A, dh = cfg.n_heads, cfg.d_head
    d = cfg.d_model

    dx, dg_, db_ = layer_norm_backward(dH, P["lnf_g"], cache["lnf"])
    grads["lnf_g"] += dg_
    grads["lnf_b"] += db_
    for l in reversed(range(cfg.n_layers)):
        p = f"l{l}."
        c = cache["layers"][l]
        # feed-forward branch
        df = dx * c["m2"] if "m2" in c else dx
        grads[p + "w2"] += c["g"].reshape(-1, cfg.d_ff).T @ df.reshape(-1, d)
        grads[p + "b2"] += df.reshape(-1, d).sum(0)
        dh1 = (df @ P[p + "w2"].T) * gelu_grad(c["h1"], c["t"])
        grads[p + "w1"] += c["f_in"].reshape(-1, d).T @ dh1.reshape(-1, cfg.d_ff)
        grads[p + "b1"] += dh1.reshape(-1, cfg.d_ff).sum(0)
        df_in = dh1 @ P[p + "w1"].T
        dxl, dg_, db_ = layer_norm_backward(df_in, P[p + "ln2_g"], c["ln2"])
        grads[p + "ln2_g"] += dg_
        grads[p + "ln2_b"] += db_
        dx = dx + dxl
        # attention branch
        do = dx * c["m1"] if "m1" in c else dx
        grads[p + "wo"] += c["ctx"].reshape(-1, d).T @ do.reshape(-1, d)
        grads[p + "bo"] += do.reshape(-1, d).sum(0)
        dctx = (do @ P[p + "wo"].T).reshape(B, n, A, dh).transpose(0, 2, 1, 3)
        att = c["att"]
        datt = dctx @ c["v"].transpose(0, 1, 3, 2)
        dv = att.transpose(0, 1, 3, 2) @ dctx
        ds = att * (datt - (datt * att).sum(-1, keepdims=True)) / np.sqrt(dh)
        dq = ds @ c["k"]
        dk = ds.transpose(0, 1, 3, 2) @ c["q"]
        a_in = c["a_in"].reshape(-1, d)
        da_in = np.zeros((B * n, d))
        for name, dt in (("q", dq), ("k", dk), ("v", dv)):
            dt = dt.transpose(0, 2, 1, 3).reshape(-1, d)
            grads[p + "w" + name] += a_in.T @ dt
            grads[p + "b" + name] += dt.sum(0)
            da_in += dt @ P[p + "w" + name].T
        dxl, dg_, db_ = layer_norm_backward(da_in.reshape(B, n, d), P[p + "ln1_g"], c["ln1"])
        grads[p + "ln1_g"] += dg_
        grads[p + "ln1_b"] += db_
        dx = dx + dxl

    np.add.at(grads["tok_emb"], cache["ids"].reshape(-1), dx.reshape(-1, d))
    grads["pos_emb"][:n] += dx.sum(0)
    return grads


# --- MLM head ---------------------------------------------------------------


def mlm_head_forward(params: ModelParams, h):
    """Logits over the vocabulary for rows of ``h`` (M, d)."""
    P = params.tensors
    z = h @ P["head_w"] + P["head_b"]
    g, t = gelu(z)
    u, ln = layer_norm(g, P["head_ln_g"], P["head_ln_b"])
    logits = u @ P["tok_emb"].T + P["out_b"]
    return logits, (h, z, t, u, ln)


def mlm_head_backward(params: ModelParams, cache, dlogits, grads):
    P = params.tensors
    h, z, t, u, ln = cache
    grads["tok_emb"] += dlogits.T @ u
    grads["out_b"] += dlogits.sum(0)
    du = dlogits @ P["tok_emb"]
    dg, dgg, dgb = layer_norm_backward(du, P["head_ln_g"], ln)
    grads["head_ln_g"] += dgg
    grads["head_ln_b"] += dgb
    dz = dg * gelu_grad(z, t)
    grads["head_w"] += h.T @ dz
    grads["head_b"] += dz.sum(0)
    return dz @ P["head_w"].T


# --- checkpoints ------------------------------------------------------------

CKPT_MAGIC = b"CPKM"
CKPT_VERSION = 1
_INT_FIELDS = ("vocab_size", "d_model", "n_layers", "n_heads", "d_ff", "max_positions")


def save_checkpoint(params: ModelParams, path) -> None:
    cfg = params.cfg
    out = [CKPT_MAGIC, struct.pack("<H", CKPT_VERSION)]
    out.append(struct.pack("<6I", *(getattr(cfg, f) for f in _INT_FIELDS)))
    out.append(struct.pack("<d", cfg.dropout))
    out.append(struct.pack("<I", len(params.tensors)))
    for name, arr in params.tensors.items():
        raw = name.encode("utf-8")
        out.append(struct.pack("<H", len(raw)) + raw)
        out.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(out))


def load_checkpoint(path) -> ModelParams:
    data = Path(path).read_bytes()
    if data[:4] != CKPT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint (bad magic)")
    (version,) = struct.unpack_from("<H", data, 4)
    if version != CKPT_VERSION:
        raise ValueError(f"{path}: checkpoint version {version} unsupported")
    off = 6
    ints = struct.unpack_from("<6I", data, off)
    off += 24
    (dropout,) = struct.unpack_from("<d", data, off)
    off += 8
    cfg = ModelConfig(**dict(zip(_INT_FIELDS, ints)), dropout=dropout)
    (count,) = struct.unpack_from("<I", data, off)
    off += 4
    tensors = {}
    for _ in range(count):
        (ln,) = struct.unpack_from("<H", data, off)
        off += 2
        name = data[off : off + ln].decode("utf-8")
        off += ln
        (ndim,) = struct.unpack_from("<B", data, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", data, off)
        off += 4 * ndim
        size = int(np.prod(shape)) * 8
        tensors[name] = np.frombuffer(data[off : off + size], dtype="<f8").reshape(shape).astype(np.float64)
        off += size
    expected = param_shapes(cfg)
    if list(tensors) != list(expected) or any(tensors[k].shape != s for k, s in expected.items()):
        raise ValueError(f"{path}: tensors do not match the stored config")
    return ModelParams(cfg, tensors)


def config_from_dict(d: dict) -> ModelConfig:
    names = {f.name for f in fields(ModelConfig)}
    return ModelConfig(**{k: v for k, v in d.items() if k in names})
