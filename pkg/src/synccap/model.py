"""Single-layer (by default) encoder/decoder with controlled cross-attention."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as tt
from .attention import (INF, AttentionMap, CrossResult, cross_attention_controlled,
                        parse_radius, radius_to_json, windowed_self_attention)
from .data import BOS, EOS, PAD, POSE_DIM
from .tensor import Tensor

LN_EPS = 1e-5


@dataclass
class ModelConfig:
    vocab_size: int
    d_m: int = 64
    N_h: int = 4
    r: float = 10
    D: float = 10
    n_layers: int = 1
    d_ff: int | None = None
    max_T_y: int = 32
    c: int = POSE_DIM
    max_T_x: int = 1024

    def __post_init__(self):
        self.r = parse_radius(self.r)
        self.D = parse_radius(self.D)
        if self.d_ff is None:
            self.d_ff = 4 * self.d_m
        if self.d_m % self.N_h:
            raise ValueError(f"d_m={self.d_m} is not divisible by N_h={self.N_h}")
        if self.n_layers < 1:
            raise ValueError("n_layers must be >= 1")
        if self.max_T_y < 2:
            raise ValueError("max_T_y must be >= 2")
        if self.vocab_size < 5:
            raise ValueError("vocab_size must cover the 4 reserved ids plus one word")

    def to_json(self) -> dict:
        obj = asdict(self)
        obj["r"] = radius_to_json(self.r)
        obj["D"] = radius_to_json(self.D)
        return obj

    @classmethod
    def from_json(cls, obj: dict) -> ModelConfig:
        known = {k: obj[k] for k in cls.__dataclass_fields__ if k in obj}
        return cls(**known)


def positional_encoding(length: int, d: int) -> np.ndarray:
    """Sinusoidal table: even dims ``sin(pos / 10000^(2i/d))``, odd dims ``cos``."""
    pos = np.arange(length, dtype=np.float64)[:, None]
    rates = 1.0 / np.power(10000.0, np.arange(0, d, 2, dtype=np.float64) / d)
    pe = np.zeros((length, d))
    pe[:, 0::2] = np.sin(pos * rates)
    pe[:, 1::2] = np.cos(pos * rates[: d // 2])
    return pe


def parameter_shapes(cfg: ModelConfig) -> dict[str, tuple[tuple[int, ...], int]]:
    """Parameter name → (shape, fan_in); fan_in 0 marks LayerNorm params."""
    d, f, V = cfg.d_m, cfg.d_ff, cfg.vocab_size
    shapes: dict[str, tuple[tuple[int, ...], int]] = {}

    def linear(name, n_in, n_out, bias=True):
        shapes[f"{name}.W"] = ((n_in, n_out), n_in)
        if bias:
            shapes[f"{name}.b"] = ((n_out,), n_in)

    def attn(prefix):
        for key in "QKV":
            shapes[f"{prefix}.W_{key}"] = ((d, d), d)
            shapes[f"{prefix}.b_{key}"] = ((d,), d)
        shapes[f"{prefix}.W_O"] = ((d, d), d)

    def norm(prefix):
        shapes[f"{prefix}.scale"] = ((d,), 0)
        shapes[f"{prefix}.shift"] = ((d,), 0)

    linear("enc.embed", cfg.c, d)
    for layer in range(cfg.n_layers):
        p = f"enc.{layer}"
        attn(f"{p}.attn")
        norm(f"{p}.ln1")
        linear(f"{p}.ffn1", d, f)
        linear(f"{p}.ffn2", f, d)
        norm(f"{p}.ln2")
    shapes["dec.embed"] = ((V, d), 1)
    for layer in range(cfg.n_layers):
        p = f"dec.{layer}"
        attn(f"{p}.self")
        norm(f"{p}.ln_self")
        linear(f"{p}.cross_k", d, d)
        linear(f"{p}.cross_v", d, d)
        norm(f"{p}.ln1")
        linear(f"{p}.ffn1", d, f)
        linear(f"{p}.ffn2", f, d)
        norm(f"{p}.ln2")
    linear("out", d, V)
    return shapes


def init_params(cfg: ModelConfig, seed: int = 0) -> dict[str, Tensor]:
    """Uniform(-k, k), k = 1/sqrt(fan_in); LayerNorm scale 1, shift 0."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, (shape, fan_in) in parameter_shapes(cfg).items():
        if fan_in == 0:
            data = np.ones(shape) if name.endswith(".scale") else np.zeros(shape)
        else:
            k = 1.0 / math.sqrt(fan_in)
            data = rng.uniform(-k, k, size=shape)
        params[name] = Tensor(data, requires_grad=True)
    return params


@dataclass
class EncoderOutput:
    x: Tensor                 # (B, T_x, d_m)
    frame_mask: np.ndarray    # (B, T_x) bool
    alphas: list[Tensor] = field(default_factory=list)


@dataclass
class DecoderOutput:
    logits: Tensor            # (B, T_y, V)
    cross: CrossResult        # last decoder layer


@dataclass
class DecodeState:
    tokens: list[int]
    rows: list[np.ndarray] = field(default_factory=list)
    centers: list[float] = field(default_factory=list)
    windows: list[tuple[int, int]] = field(default_factory=list)

    @property
    def step(self) -> int:
        return len(self.rows)


class SyncTransformer:
    def __init__(self, cfg: ModelConfig, params: dict[str, Tensor] | None = None, seed: int = 0):
        self.cfg = cfg
        self.params = params if params is not None else init_params(cfg, seed)
        expected = parameter_shapes(cfg)
        if set(self.params) != set(expected):
            missing = sorted(set(expected) - set(self.params))
            extra = sorted(set(self.params) - set(expected))
            raise ValueError(f"parameter names mismatch: missing={missing} unexpected={extra}")
        for name, (shape, _) in expected.items():
            if self.params[name].shape != shape:
                raise ValueError(f"{name}: shape {self.params[name].shape} != {shape}")
        self._pe = positional_encoding(max(cfg.max_T_x, cfg.max_T_y + 1), cfg.d_m)

    # -- building blocks ---------------------------------------------------
    def _linear(self, x: Tensor, name: str) -> Tensor:
        return x @ self.params[f"{name}.W"] + self.params[f"{name}.b"]

    def _norm(self, x: Tensor, name: str) -> Tensor:
        return tt.layer_norm(x, self.params[f"{name}.scale"], self.params[f"{name}.shift"], LN_EPS)

    def _ffn_block(self, z: Tensor, prefix: str) -> Tensor:
        """``LN(z + W2 relu(W1 z + b1) + b2)``, the LN+FFN mapping shared by both sides."""
        h = self._linear(tt.relu(self._linear(z, f"{prefix}.ffn1")), f"{prefix}.ffn2")
        return self._norm(h + z, f"{prefix}.ln2")

    def _pe_rows(self, T: int) -> np.ndarray:
        if T > len(self._pe):
            raise ValueError(f"sequence length {T} exceeds positional table capacity {len(self._pe)}")
        return self._pe[:T]

    # -- encoder -----------------------------------------------------------
    def embed_poses(self, poses) -> Tensor:
        poses = tt.as_tensor(poses)
        if poses.shape[-1] != self.cfg.c:
            raise ValueError(f"pose dim {poses.shape[-1]} != configured c={self.cfg.c}")
        if poses.shape[-2] > self.cfg.max_T_x:
            raise ValueError(f"T_x={poses.shape[-2]} exceeds max_T_x={self.cfg.max_T_x}")
        return self._linear(poses, "enc.embed") + self._pe_rows(poses.shape[-2])

    def encode(self, poses, frame_mask=None) -> EncoderOutput:
        poses = tt.as_tensor(poses)
        if poses.ndim == 2:
            poses = poses.reshape(1, *poses.shape)
        B, T, _ = poses.shape
        mask = np.ones((B, T), dtype=bool) if frame_mask is None else np.asarray(frame_mask, dtype=bool)
        x = self.embed_poses(poses)
        alphas = []
        for layer in range(self.cfg.n_layers):
            p = f"enc.{layer}"
            z, alpha = windowed_self_attention(x, self.params, f"{p}.attn", self.cfg.N_h,
                                               self.cfg.r, mask)
            z = self._norm(z + x, f"{p}.ln1")
            x = self._ffn_block(z, p)
            alphas.append(alpha)
        return EncoderOutput(x, mask, alphas)

    # -- decoder -----------------------------------------------------------
    def decode(self, enc: EncoderOutput, tokens, token_mask=None) -> DecoderOutput:
        """Run every decoder position in parallel (teacher forcing / prefix re-run)."""
        tokens = np.asarray(tokens, dtype=np.int64)
        if tokens.ndim == 1:
            tokens = tokens[None]
        B, T_y = tokens.shape
        tmask = tokens != PAD if token_mask is None else np.asarray(token_mask, dtype=bool)
        h = tt.embedding(self.params["dec.embed"], tokens) + self._pe_rows(T_y)
        cross = None
        for layer in range(self.cfg.n_layers):
            p = f"dec.{layer}"
            a, _ = windowed_self_attention(h, self.params, f"{p}.self", self.cfg.N_h, INF,
                                           tmask, causal=True)
            u = self._norm(a + h, f"{p}.ln_self")
            keys = self._linear(enc.x, f"{p}.cross_k")
            values = self._linear(enc.x, f"{p}.cross_v")
            cross = cross_attention_controlled(keys, values, u, self.cfg.D, enc.frame_mask)
            z = self._norm(cross.context + u, f"{p}.ln1")
            h = self._ffn_block(z, p)
        return DecoderOutput(self._linear(h, "out"), cross)

    def forward_teacher_forced(self, poses, frame_mask, dec_in, step_mask=None):
        """Logits ``(B, T_y, V)`` for every ground-truth prefix plus the cross-attention."""
        enc = self.encode(poses, frame_mask)
        out = self.decode(enc, dec_in, step_mask)
        return out.logits, out.cross

    def decode_step(self, state: DecodeState, enc: EncoderOutput):
        """Logits for the next token given the emitted prefix in ``state``.

        Returns ``(logits, beta_row, m_t, r_t)`` and appends the attention row
        to ``state``.
        """
        if not state.tokens:
            raise ValueError("decode state must start with BOS")
        out = self.decode(enc, np.asarray(state.tokens)[None])
        cross = out.cross
        beta_row = cross.beta.data[0, -1].copy()
        m_t = float(cross.centers.data[0, -1])
        state.rows.append(beta_row)
        state.centers.append(m_t)
        state.windows.append(tuple(int(v) for v in cross.bounds[0, -1]))
        return out.logits.data[0, -1].copy(), beta_row, m_t, cross.context.data[0, -1].copy()

    def generate(self, poses) -> tuple[list[int], AttentionMap]:
        """Greedy decoding from BOS until EOS or ``max_T_y`` emitted tokens.

        Returns the emitted ids (EOS included when produced) and one
        attention row per emitted token.
        """
        with tt.no_grad():
            enc = self.encode(poses)
            state = DecodeState([BOS])
            emitted: list[int] = []
            while len(emitted) < self.cfg.max_T_y:
                logits, *_ = self.decode_step(state, enc)
                tok = int(np.argmax(logits))
                emitted.append(tok)
                state.tokens.append(tok)
                if tok == EOS:
                    break
        amap = AttentionMap(np.array(state.rows), np.array(state.centers),
                            np.array(state.windows, dtype=np.int64).reshape(-1, 2))
        return emitted, amap

    # -- parameter utilities -----------------------------------------------
    def n_parameters(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None
