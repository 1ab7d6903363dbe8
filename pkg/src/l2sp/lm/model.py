"""Small pre-norm causal transformer with a hand-written backward pass."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import nn
from .vocab import PAD

MAGIC = b"PLLM"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    d: int = 64
    heads: int = 4
    blocks: int = 2
    max_len: int = 128

    def __post_init__(self):
        if self.d % self.heads:
            raise ValueError(f"d={self.d} is not divisible by heads={self.heads}")


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Parameter names and shapes in declaration (serialization) order."""
    d, V = cfg.d, cfg.vocab_size
    shapes: dict[str, tuple[int, ...]] = {"wte": (V, d), "wpe": (cfg.max_len, d)}
    for i in range(cfg.blocks):
        p = f"h{i}."
        shapes.update(
            {
                p + "ln1.g": (d,),
                p + "ln1.b": (d,),
                p + "attn.wqkv": (d, 3 * d),
                p + "attn.bqkv": (3 * d,),
                p + "attn.wo": (d, d),
                p + "attn.bo": (d,),
                p + "ln2.g": (d,),
                p + "ln2.b": (d,),
                p + "mlp.w1": (d, 4 * d),
                p + "mlp.b1": (4 * d,),
                p + "mlp.w2": (4 * d, d),
                p + "mlp.b2": (d,),
            }
        )
    shapes.update({"lnf.g": (d,), "lnf.b": (d,), "head.w": (d, V), "head.b": (V,)})
    return shapes


class ToyModel:
    def __init__(self, cfg: ModelConfig, params: dict[str, np.ndarray]):
        shapes = param_shapes(cfg)
        if list(params) != list(shapes):
            raise ValueError("parameter names do not match the configuration")
        for name, shape in shapes.items():
            if params[name].shape != shape:
                raise ValueError(f"{name}: expected shape {shape}, got {params[name].shape}")
        self.cfg = cfg
        self.params = params

    @classmethod
    def init(cls, cfg: ModelConfig, seed: int = 0, dtype=np.float64, std: float = 0.02) -> "ToyModel":
        rng = np.random.default_rng(seed)
        params = {}
        for name, shape in param_shapes(cfg).items():
            leaf = name.rsplit(".", 1)[-1]
            if leaf == "g":
                params[name] = np.ones(shape, dtype=dtype)
            elif leaf.startswith("b"):
                params[name] = np.zeros(shape, dtype=dtype)
            else:
                params[name] = (rng.standard_normal(shape) * std).astype(dtype)
        return cls(cfg, params)

    @property
    def dtype(self):
        return self.params["wte"].dtype

    def astype(self, dtype) -> "ToyModel":
        return ToyModel(self.cfg, {k: v.astype(dtype) for k, v in self.params.items()})

    def copy(self) -> "ToyModel":
        return ToyModel(self.cfg, {k: v.copy() for k, v in self.params.items()})

    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())

    # -- forward / backward ------------------------------------------------

    def _forward(self, tokens: np.ndarray):
        """tokens: (B, T) ints. Returns logits (B, T, V), last hidden (B, T, d), caches."""
        P, cfg = self.params, self.cfg
        B, T = tokens.shape
        if T > cfg.max_len:
            raise ValueError(f"sequence length {T} exceeds max_len {cfg.max_len}")
        nh, dh = cfg.heads, cfg.d // cfg.heads
        x = P["wte"][tokens] + P["wpe"][:T]
        caches = []
        for i in range(cfg.blocks):
            p = f"h{i}."
            h1, c_ln1 = nn.layernorm_forward(x, P[p + "ln1.g"], P[p + "ln1.b"])
            qkv, c_qkv = nn.linear_forward(h1, P[p + "attn.wqkv"], P[p + "attn.bqkv"])
            q, k, v = (
                t.reshape(B, T, nh, dh).transpose(0, 2, 1, 3) for t in np.split(qkv, 3, axis=-1)
            )
            y, c_att = nn.causal_attention_forward(q, k, v)
            y = y.transpose(0, 2, 1, 3).reshape(B, T, cfg.d)
            o, c_o = nn.linear_forward(y, P[p + "attn.wo"], P[p + "attn.bo"])
            x = x + o
            h2, c_ln2 = nn.layernorm_forward(x, P[p + "ln2.g"], P[p + "ln2.b"])
            f1, c_f1 = nn.linear_forward(h2, P[p + "mlp.w1"], P[p + "mlp.b1"])
            a1, c_gelu = nn.gelu_forward(f1)
            f2, c_f2 = nn.linear_forward(a1, P[p + "mlp.w2"], P[p + "mlp.b2"])
            x = x + f2
            caches.append((c_ln1, c_qkv, c_att, c_o, c_ln2, c_f1, c_gelu, c_f2))
        hf, c_lnf = nn.layernorm_forward(x, P["lnf.g"], P["lnf.b"])
        logits, c_head = nn.linear_forward(hf, P["head.w"], P["head.b"])
        return logits, hf, (tokens, caches, c_lnf, c_head)

    def _backward(self, dlogits: np.ndarray, cache) -> dict[str, np.ndarray]:
        P, cfg = self.params, self.cfg
        tokens, caches, c_lnf, c_head = cache
        B, T = tokens.shape
        nh, dh = cfg.heads, cfg.d // cfg.heads
        grads: dict[str, np.ndarray] = {}
        dhf, grads["head.w"], grads["head.b"] = nn.linear_backward(dlogits, c_head, P["head.w"])
        dx, grads["lnf.g"], grads["lnf.b"] = nn.layernorm_backward(dhf, c_lnf)
        for i in reversed(range(cfg.blocks)):
            p = f"h{i}."
            c_ln1, c_qkv, c_att, c_o, c_ln2, c_f1, c_gelu, c_f2 = caches[i]
            da1, grads[p + "mlp.w2"], grads[p + "mlp.b2"] = nn.linear_backward(dx, c_f2, P[p + "mlp.w2"])
            df1 = nn.gelu_backward(da1, c_gelu)
            dh2, grads[p + "mlp.w1"], grads[p + "mlp.b1"] = nn.linear_backward(df1, c_f1, P[p + "mlp.w1"])
            dln2, grads[p + "ln2.g"], grads[p + "ln2.b"] = nn.layernorm_backward(dh2, c_ln2)
            dx = dx + dln2
            dy, grads[p + "attn.wo"], grads[p + "attn.bo"] = nn.linear_backward(dx, c_o, P[p + "attn.wo"])
            dy = dy.reshape(B, T, nh, dh).transpose(0, 2, 1, 3)
            dq, dk, dv = nn.causal_attention_backward(dy, c_att)
            dqkv = np.concatenate([t.transpose(0, 2, 1, 3).reshape(B, T, cfg.d) for t in (dq, dk, dv)], axis=-1)
            dh1, grads[p + "attn.wqkv"], grads[p + "attn.bqkv"] = nn.linear_backward(dqkv, c_qkv, P[p + "attn.wqkv"])
            dln1, grads[p + "ln1.g"], grads[p + "ln1.b"] = nn.layernorm_backward(dh1, c_ln1)
            dx = dx + dln1
        dwte = np.zeros_like(P["wte"])
        np.add.at(dwte, tokens, dx)
        grads["wte"] = dwte
        dwpe = np.zeros_like(P["wpe"])
        dwpe[:T] = dx.sum(axis=0)
        grads["wpe"] = dwpe
        return {k: grads[k] for k in P}

    # -- public API ----------------------------------------------------------

    def forward_logits(self, tokens: Sequence[int]) -> np.ndarray:
        """Logit rows (T, V) for one sequence; row j scores the token after position j."""
        logits, _, _ = self._forward(np.asarray(tokens, dtype=np.int64)[None, :])
        return logits[0]

    def hidden_states(self, tokens: Sequence[int]) -> np.ndarray:
        """Last-layer (post final norm) token representations, shape (T, d)."""
        _, hf, _ = self._forward(np.asarray(tokens, dtype=np.int64)[None, :])
        return hf[0]

    def loss_and_grads(self, batch: Sequence[np.ndarray], with_grads: bool = True):
        """Mean over texts of the per-text mean next-token cross-entropy.

        Sequences are right-padded with PAD; padded targets carry no loss.
        """
        tokens, weights = _pad_batch(batch)
        logits, _, cache = self._forward(tokens)
        logp = nn.log_softmax(logits[:, :-1])
        targets = tokens[:, 1:]
        picked = np.take_along_axis(logp, targets[..., None], axis=-1)[..., 0]
        loss = float(-(picked * weights).sum())
        if not with_grads:
            return loss, None
        dlogits = np.zeros_like(logits)
        probs = np.exp(logp)
        probs[np.arange(tokens.shape[0])[:, None], np.arange(targets.shape[1])[None, :], targets] -= 1.0
        dlogits[:, :-1] = probs * weights[..., None]
        return loss, self._backward(dlogits, cache)

    # -- persistence -----------------------------------------------------------

    def save(self, path: str | Path) -> None:
        c = self.cfg
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<6I", FORMAT_VERSION, c.d, c.heads, c.blocks, c.vocab_size, c.max_len))
            for p in self.params.values():
                fh.write(np.ascontiguousarray(p, dtype="<f4").tobytes())

    @classmethod
    def load(cls, path: str | Path, dtype=np.float32) -> "ToyModel":
        with open(path, "rb") as fh:
            data = fh.read()
        if data[:4] != MAGIC:
            raise ValueError(f"{path}: not a model file")
        version, d, heads, blocks, V, max_len = struct.unpack_from("<6I", data, 4)
        if version != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported model version {version}")
        cfg = ModelConfig(V, d, heads, blocks, max_len)
        offset = 4 + 24
        params = {}
        for name, shape in param_shapes(cfg).items():
            size = int(np.prod(shape))
            arr = np.frombuffer(data, dtype="<f4", count=size, offset=offset)
            params[name] = arr.reshape(shape).astype(dtype)
            offset += 4 * size
        if offset != len(data):
            raise ValueError(f"{path}: trailing bytes after parameters")
        return cls(cfg, params)


def _pad_batch(batch: Sequence[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """Stack sequences into (B, T) with PAD, plus (B, T-1) target weights.

    Each text's valid targets share weight 1 / (B * n_targets), so the weighted
    sum equals the mean over texts of per-text mean losses.
    """
    B = len(batch)
    T = max(len(s) for s in batch)
    if T < 2:
        raise ValueError("sequences need at least two tokens for a next-token loss")
    tokens = np.full((B, T), PAD, dtype=np.int64)
    weights = np.zeros((B, T - 1))
    for i, s in enumerate(batch):
        n = len(s)
        tokens[i, :n] = s
        if n >= 2:
            weights[i, : n - 1] = 1.0 / (B * (n - 1))
    return tokens, weights
