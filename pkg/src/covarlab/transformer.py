"""Attention-based quantile regression model over return-augmented tokens.

The model input is a d x n matrix whose columns are news-embedding tokens
with the other institutions' returns stacked on top (d = (J-1) + d_e).
The forward map is: L layers of (multi-head self-attention, position-wise
feed-forward), an n-vector readout collapsing the token axis, and an MLP
head producing the scalar quantile prediction.

Two variants:
  * "plain"              - sublayers composed directly,
  * "residual_layernorm" - each sublayer wrapped with a skip connection
                           followed by per-column normalization.

Padding tokens are zero-filled, excluded from every attention softmax, and
zeroed again before the readout so the readout entries at pad positions
are inert. Forward passes are pure; training owns the weights exclusively.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .numcore import (
    Tape,
    _broadcast_valid,
    _softmax_cols_value,
    layernorm_cols_value,
)

_VARIANTS = ("plain", "residual_layernorm")


@dataclass(frozen=True)
class ArchConfig:
    """Architecture tuple of the quantile network.

    n: token capacity per input; d_e: embedding dimension; J: number of
    institutions (the return block has J-1 rows); H: attention heads;
    d_h: feed-forward hidden width; L: attention layers; D: MLP depth;
    d_m: MLP hidden width.
    """

    n: int
    d_e: int
    J: int
    H: int = 1
    d_h: int = 64
    L: int = 1
    D: int = 2
    d_m: int = 64
    variant: str = "plain"

    @property
    def d(self) -> int:
        return (self.J - 1) + self.d_e

    def __post_init__(self):
        if self.n < 1 or self.L < 1 or self.D < 1:
            raise ValueError("need n >= 1, L >= 1, D >= 1")
        if self.d_e < 1 or self.J < 2:
            raise ValueError("need d_e >= 1 and J >= 2")
        if self.H < 1 or self.d % self.H != 0:
            raise ValueError(f"head count {self.H} must divide d = {self.d}")
        if self.variant not in _VARIANTS:
            raise ValueError(f"variant must be one of {_VARIANTS}")


@dataclass
class TokenBatch:
    """One model input: Z (d x n) plus the validity mask of its columns."""

    Z: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        self.Z = np.asarray(self.Z, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=bool).reshape(-1)
        if self.Z.ndim != 2 or self.Z.shape[1] != self.mask.shape[0]:
            raise ValueError("token matrix and mask shapes disagree")
        if not self.mask.any():
            raise ValueError("token batch needs at least one valid token")
        if not np.all(np.isfinite(self.Z)):
            raise ValueError("non-finite token values")
        if self.Z[:, ~self.mask].any():
            raise ValueError("pad columns must be zero-filled")


def concat_pi(returns, E, mask) -> TokenBatch:
    """Stack the other institutions' returns on top of each embedding column.

    Returns are replicated only into valid columns; pad columns stay zero.
    """
    r = np.asarray(returns, dtype=np.float64).reshape(-1)
    E = np.asarray(E, dtype=np.float64)
    m = np.asarray(mask, dtype=bool).reshape(-1)
    if E.ndim != 2 or E.shape[1] != m.shape[0]:
        raise ValueError("embedding matrix and mask shapes disagree")
    mf = m.astype(np.float64)
    Z = np.vstack([np.outer(r, mf), E * mf])
    return TokenBatch(Z=Z, mask=m)


def positional_encoding(k: int, d_e: int, scale: float) -> np.ndarray:
    """Sinusoidal position vector: sin/cos of k over geometric wavelengths."""
    if d_e % 2 != 0 or d_e < 2:
        raise ValueError("positional encoding needs an even dimension")
    if k < 0:
        raise ValueError("position index must be nonnegative")
    i = np.arange(d_e // 2, dtype=np.float64)
    angle = k / np.power(10000.0, 2.0 * i / d_e)
    pe = np.empty(d_e)
    pe[0::2] = np.sin(angle)
    pe[1::2] = np.cos(angle)
    return pe * scale


def apply_positional_encoding(E, mask, positions) -> np.ndarray:
    """Add position vectors to the valid columns of an embedding matrix.

    The encoding is scaled by the mean l2 norm of the valid columns, so an
    all-zero window stays all-zero. Positions are the day offsets inside
    the look-back window (0 = oldest day).
    """
    E = np.asarray(E, dtype=np.float64)
    m = np.asarray(mask, dtype=bool).reshape(-1)
    pos = np.asarray(positions, dtype=np.int64).reshape(-1)
    if E.shape[1] != m.shape[0] or pos.shape[0] != m.shape[0]:
        raise ValueError("embedding, mask and position shapes disagree")
    out = E.copy()
    if not m.any():
        return out
    scale = float(np.linalg.norm(E[:, m], axis=0).mean())
    for j in np.nonzero(m)[0]:
        out[:, j] += positional_encoding(int(pos[j]), E.shape[0], scale)
    return out


# --------------------------------------------------------------- weights


@dataclass
class HeadWeights:
    wk: np.ndarray  # (d/H, d)
    wq: np.ndarray  # (d/H, d)
    wv: np.ndarray  # (d/H, d)
    wo: np.ndarray  # (d, d/H)


@dataclass
class LayerWeights:
    heads: list[HeadWeights]
    w1: np.ndarray  # (d_h, d)
    b1: np.ndarray  # (d_h, 1)
    w2: np.ndarray  # (d, d_h)
    b2: np.ndarray  # (d, 1)


class TransformerModel:
    """All weights of the quantile network, in a fixed parameter order."""

    def __init__(self, config: ArchConfig, layers, readout, mlp):
        self.config = config
        self.layers: list[LayerWeights] = layers
        self.readout: np.ndarray = readout  # (n, 1)
        self.mlp: list[tuple[np.ndarray, np.ndarray]] = mlp  # [(W_i, b_i)]
        self._validate()

    def _validate(self):
        c = self.config
        d, h = c.d, c.d // c.H
        if len(self.layers) != c.L or len(self.mlp) != c.D:
            raise ValueError("layer structure does not match the config")
        for lw in self.layers:
            if len(lw.heads) != c.H:
                raise ValueError("head count does not match the config")
            for hw in lw.heads:
                for w, shape in (
                    (hw.wk, (h, d)), (hw.wq, (h, d)), (hw.wv, (h, d)), (hw.wo, (d, h)),
                ):
                    if w.shape != shape:
                        raise ValueError(f"head weight shape {w.shape} != {shape}")
            if lw.w1.shape != (c.d_h, d) or lw.w2.shape != (d, c.d_h):
                raise ValueError("feed-forward weight shapes do not match the config")
        if self.readout.shape != (c.n, 1):
            raise ValueError("readout must have one entry per token")
        for a in self.param_arrays():
            if not np.all(np.isfinite(a)):
                raise ValueError("non-finite model weights")

    # fixed parameter order: per layer heads (wk,wq,wv,wo) then w1,b1,w2,b2;
    # then the readout; then the MLP stack.
    def param_items(self):
        items = []
        for li, lw in enumerate(self.layers):
            for hi, hw in enumerate(lw.heads):
                items += [
                    (f"layer{li}.head{hi}.wk", hw.wk),
                    (f"layer{li}.head{hi}.wq", hw.wq),
                    (f"layer{li}.head{hi}.wv", hw.wv),
                    (f"layer{li}.head{hi}.wo", hw.wo),
                ]
            items += [
                (f"layer{li}.ffn.w1", lw.w1),
                (f"layer{li}.ffn.b1", lw.b1),
                (f"layer{li}.ffn.w2", lw.w2),
                (f"layer{li}.ffn.b2", lw.b2),
            ]
        items.append(("readout.w", self.readout))
        for i, (w, b) in enumerate(self.mlp):
            items += [(f"mlp{i}.w", w), (f"mlp{i}.b", b)]
        return items

    def param_arrays(self) -> list[np.ndarray]:
        return [a for _, a in self.param_items()]

    def set_params(self, arrays):
        for dst, src in zip(self.param_arrays(), arrays):
            np.copyto(dst, src)

    def clone(self) -> "TransformerModel":
        layers = [
            LayerWeights(
                heads=[HeadWeights(h.wk.copy(), h.wq.copy(), h.wv.copy(), h.wo.copy()) for h in lw.heads],
                w1=lw.w1.copy(), b1=lw.b1.copy(), w2=lw.w2.copy(), b2=lw.b2.copy(),
            )
            for lw in self.layers
        ]
        return TransformerModel(
            self.config, layers, self.readout.copy(),
            [(w.copy(), b.copy()) for w, b in self.mlp],
        )

    # ---- forward ----

    def forward(self, batch: TokenBatch) -> float:
        return model_forward(self, batch)

    def predict_batch(self, Z: np.ndarray, mask: np.ndarray) -> np.ndarray:
        """Predictions for stacked inputs Z (B, d, n), mask (B, n)."""
        out = _forward_arrays(self, Z, mask)
        return out[..., 0, 0]

    def training_loss(self, tape: Tape, Z, mask, y, tau: float):
        """Mean pinball loss node over a stacked batch, plus parameter nodes."""
        nodes = [tape.param(a) for a in self.param_arrays()]
        out = _forward_tape(self, tape, nodes, Z, mask)
        target = tape.constant(np.asarray(y, dtype=np.float64).reshape(-1, 1, 1))
        loss = tape.mean(tape.pinball(tape.sub(target, out), tau))
        return loss, nodes


def init_transformer(config: ArchConfig, seed: int) -> TransformerModel:
    """Uniform(-a, a) init with a = sqrt(6 / (fan_in + fan_out)); zero biases."""
    rng = np.random.default_rng(seed)

    def u(rows, cols):
        a = math.sqrt(6.0 / (rows + cols))
        return rng.uniform(-a, a, size=(rows, cols))

    c = config
    d, h = c.d, c.d // c.H
    layers = []
    for _ in range(c.L):
        heads = [HeadWeights(u(h, d), u(h, d), u(h, d), u(d, h)) for _ in range(c.H)]
        layers.append(
            LayerWeights(heads, u(c.d_h, d), np.zeros((c.d_h, 1)), u(d, c.d_h), np.zeros((d, 1)))
        )
    readout = u(c.n, 1)
    widths = [d] + [c.d_m] * (c.D - 1) + [1]
    mlp = [(u(widths[i + 1], widths[i]), np.zeros((widths[i + 1], 1))) for i in range(c.D)]
    return TransformerModel(c, layers, readout, mlp)


# --------------------------------------------------------------- forward
#
# The array path and the tape path below perform the same numpy calls in
# the same order, so their values agree bit for bit (asserted in tests).


def _msa_arrays(lw: LayerWeights, Z, mask, d):
    c = 1.0 / math.sqrt(d)
    out = None
    for hw in lw.heads:
        k = np.matmul(hw.wk, Z)
        q = np.matmul(hw.wq, Z)
        scores = np.matmul(np.swapaxes(k, -1, -2), q) * c
        att = _softmax_cols_value(scores, _broadcast_valid(scores, mask))
        head = np.matmul(hw.wo, np.matmul(np.matmul(hw.wv, Z), att))
        out = head if out is None else out + head
    return out


def _ffn_arrays(lw: LayerWeights, X):
    return np.matmul(lw.w2, np.maximum(np.matmul(lw.w1, X) + lw.b1, 0.0)) + lw.b2


def _forward_arrays(model: TransformerModel, Z, mask):
    c = model.config
    X = np.asarray(Z, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    for lw in model.layers:
        att = _msa_arrays(lw, X, mask, c.d)
        if c.variant == "plain":
            X = _ffn_arrays(lw, att)
        else:
            X = layernorm_cols_value(X + att)
            X = layernorm_cols_value(X + _ffn_arrays(lw, X))
    colmask = mask.astype(np.float64)[..., None, :]
    v = np.matmul(X * colmask, model.readout)
    a = v
    for i, (w, b) in enumerate(model.mlp):
        a = np.matmul(w, a) + b
        if i < len(model.mlp) - 1:
            a = np.maximum(a, 0.0)
    return a


def _forward_tape(model: TransformerModel, tape: Tape, nodes, Z, mask):
    c = model.config
    mask = np.asarray(mask, dtype=bool)
    scale = 1.0 / math.sqrt(c.d)
    it = iter(nodes)
    X = tape.constant(np.asarray(Z, dtype=np.float64))
    for lw in model.layers:
        att = None
        for _ in lw.heads:
            wk, wq, wv, wo = next(it), next(it), next(it), next(it)
            k = tape.matmul(wk, X)
            q = tape.matmul(wq, X)
            scores = tape.scale(tape.matmul(tape.transpose(k), q), scale)
            a = tape.softmax_cols(scores, mask)
            head = tape.matmul(wo, tape.matmul(tape.matmul(wv, X), a))
            att = head if att is None else tape.add(att, head)
        w1, b1, w2, b2 = next(it), next(it), next(it), next(it)

        def ffn(inp):
            return tape.add(tape.matmul(w2, tape.relu(tape.add(tape.matmul(w1, inp), b1))), b2)

        if c.variant == "plain":
            X = ffn(att)
        else:
            X = tape.layernorm_cols(tape.add(X, att))
            X = tape.layernorm_cols(tape.add(X, ffn(X)))
    colmask = mask.astype(np.float64)[..., None, :]
    w = next(it)
    v = tape.matmul(tape.mul(X, tape.constant(colmask)), w)
    a = v
    for i in range(c.D):
        wi, bi = next(it), next(it)
        a = tape.add(tape.matmul(wi, a), bi)
        if i < c.D - 1:
            a = tape.relu(a)
    return a


def msa_forward(batch: TokenBatch, layer: LayerWeights, config: ArchConfig) -> np.ndarray:
    """One multi-head self-attention sublayer on a single token batch.

    Pad keys are excluded from every softmax column; outputs at pad query
    positions are computed but carry no information into the readout.
    """
    return _msa_arrays(layer, batch.Z, batch.mask, config.d)


def ffn_forward(X, w1, b1, w2, b2) -> np.ndarray:
    """Position-wise feed-forward: w2 relu(w1 X + b1) + b2, column-wise."""
    X = np.asarray(X, dtype=np.float64)
    w1 = np.asarray(w1, dtype=np.float64)
    w2 = np.asarray(w2, dtype=np.float64)
    b1 = np.asarray(b1, dtype=np.float64).reshape(-1, 1)
    b2 = np.asarray(b2, dtype=np.float64).reshape(-1, 1)
    if w1.shape[1] != X.shape[-2] or w2.shape[1] != w1.shape[0]:
        raise ValueError("feed-forward shapes do not match the input")
    if b1.shape[0] != w1.shape[0] or b2.shape[0] != w2.shape[0]:
        raise ValueError("bias shapes do not match the weights")
    return np.matmul(w2, np.maximum(np.matmul(w1, X) + b1, 0.0)) + b2


def model_forward(model: TransformerModel, batch: TokenBatch) -> float:
    """Scalar quantile prediction for one token batch. Pure and deterministic."""
    if batch.Z.shape != (model.config.d, model.config.n):
        raise ValueError(
            f"token batch shape {batch.Z.shape} does not match config "
            f"({model.config.d}, {model.config.n})"
        )
    out = _forward_arrays(model, batch.Z, batch.mask)
    return float(out[0, 0])


# ----------------------------------------------------------- MLP baseline


class MlpModel:
    """Plain MLP on a flat feature vector (the no-attention baseline).

    Used for the returns-only and sentiment-index models: the input is the
    J-1 contemporaneous returns, optionally with extra scalar features.
    """

    def __init__(self, input_dim: int, mlp):
        self.input_dim = input_dim
        self.mlp: list[tuple[np.ndarray, np.ndarray]] = mlp
        if mlp[0][0].shape[1] != input_dim:
            raise ValueError("first weight does not match the input dimension")

    def param_items(self):
        return [
            (f"mlp{i}.{p}", a)
            for i, (w, b) in enumerate(self.mlp)
            for p, a in (("w", w), ("b", b))
        ]

    def param_arrays(self):
        return [a for _, a in self.param_items()]

    def set_params(self, arrays):
        for dst, src in zip(self.param_arrays(), arrays):
            np.copyto(dst, src)

    def clone(self) -> "MlpModel":
        return MlpModel(self.input_dim, [(w.copy(), b.copy()) for w, b in self.mlp])

    def forward(self, x) -> float:
        x = np.asarray(x, dtype=np.float64).reshape(-1, 1)
        return float(self._run(x)[0, 0])

    def predict_batch(self, X: np.ndarray, mask=None) -> np.ndarray:
        out = self._run(np.asarray(X, dtype=np.float64)[..., None])
        return out[..., 0, 0]

    def _run(self, a):
        last = len(self.mlp) - 1
        for i, (w, b) in enumerate(self.mlp):
            a = np.matmul(w, a) + b
            if i < last:
                a = np.maximum(a, 0.0)
        return a

    def training_loss(self, tape: Tape, X, mask, y, tau: float):
        nodes = [tape.param(a) for a in self.param_arrays()]
        it = iter(nodes)
        a = tape.constant(np.asarray(X, dtype=np.float64)[..., None])
        last = len(self.mlp) - 1
        for i in range(len(self.mlp)):
            w, b = next(it), next(it)
            a = tape.add(tape.matmul(w, a), b)
            if i < last:
                a = tape.relu(a)
        target = tape.constant(np.asarray(y, dtype=np.float64).reshape(-1, 1, 1))
        loss = tape.mean(tape.pinball(tape.sub(target, a), tau))
        return loss, nodes


def init_mlp(input_dim: int, width: int, depth: int, seed: int) -> MlpModel:
    rng = np.random.default_rng(seed)

    def u(rows, cols):
        a = math.sqrt(6.0 / (rows + cols))
        return rng.uniform(-a, a, size=(rows, cols))

    widths = [input_dim] + [width] * (depth - 1) + [1]
    mlp = [(u(widths[i + 1], widths[i]), np.zeros((widths[i + 1], 1))) for i in range(depth)]
    return MlpModel(input_dim, mlp)


# ---------------------------------------------------------- diagnostics


@dataclass
class WeightNormRow:
    name: str
    spectral: float
    norm_2_1: float
    max_abs: float


def weight_norm_report(model) -> list[WeightNormRow]:
    """Spectral, (2,1) and max-abs norms of every weight array.

    The (2,1) norm takes the l2 norm of each row, then sums. Bias vectors
    are treated as single-column matrices.
    """
    rows = []
    for name, a in model.param_items():
        mat = a.reshape(-1, 1) if a.ndim == 1 else a
        spectral = float(np.linalg.norm(mat, 2)) if mat.size else 0.0
        norm21 = float(np.linalg.norm(mat, axis=1).sum())
        rows.append(WeightNormRow(name, spectral, norm21, float(np.abs(mat).max())))
    return rows


def format_weight_norms(rows: list[WeightNormRow]) -> str:
    width = max(len(r.name) for r in rows)
    lines = [f"{'weight'.ljust(width)}  {'spectral':>12}  {'(2,1)':>12}  {'max-abs':>12}"]
    for r in rows:
        lines.append(
            f"{r.name.ljust(width)}  {r.spectral:12.6f}  {r.norm_2_1:12.6f}  {r.max_abs:12.6f}"
        )
    return "\n".join(lines)


# ----------------------------------------------------------- checkpoints

_MAGIC = b"CVTF"
_MAGIC_MLP = b"CVMB"
_VERSION = 1


def _write_matrix(f, a: np.ndarray):
    f.write(struct.pack("<II", a.shape[0], a.shape[1]))
    f.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def _read_matrix(f) -> np.ndarray:
    header = f.read(8)
    if len(header) != 8:
        raise ValueError(f"truncated checkpoint record at offset {f.tell()}")
    rows, cols = struct.unpack("<II", header)
    raw = f.read(rows * cols * 8)
    if len(raw) != rows * cols * 8:
        raise ValueError(f"truncated checkpoint record at offset {f.tell()}")
    return np.frombuffer(raw, dtype="<f8").reshape(rows, cols).astype(np.float64)


def save_model(model: TransformerModel, path):
    """Versioned binary checkpoint; round trips bit-exactly."""
    c = model.config
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<IIIIIIIII", _VERSION, c.n, c.d_e, c.J, c.H, c.d_h, c.L, c.D, c.d_m))
        f.write(struct.pack("<I", _VARIANTS.index(c.variant)))
        for _, a in model.param_items():
            _write_matrix(f, a)


def load_model(path) -> TransformerModel:
    with open(path, "rb") as f:
        if f.read(4) != _MAGIC:
            raise ValueError("bad checkpoint magic")
        version, n, d_e, J, H, d_h, L, D, d_m = struct.unpack("<IIIIIIIII", f.read(36))
        if version != _VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        (variant_idx,) = struct.unpack("<I", f.read(4))
        config = ArchConfig(n=n, d_e=d_e, J=J, H=H, d_h=d_h, L=L, D=D, d_m=d_m,
                            variant=_VARIANTS[variant_idx])
        layers = []
        for _ in range(L):
            heads = [
                HeadWeights(_read_matrix(f), _read_matrix(f), _read_matrix(f), _read_matrix(f))
                for _ in range(H)
            ]
            layers.append(LayerWeights(heads, _read_matrix(f), _read_matrix(f),
                                       _read_matrix(f), _read_matrix(f)))
        readout = _read_matrix(f)
        mlp = [(_read_matrix(f), _read_matrix(f)) for _ in range(D)]
    return TransformerModel(config, layers, readout, mlp)


def save_mlp(model: MlpModel, path):
    with open(path, "wb") as f:
        f.write(_MAGIC_MLP)
        f.write(struct.pack("<III", _VERSION, model.input_dim, len(model.mlp)))
        for _, a in model.param_items():
            _write_matrix(f, a)


def load_mlp(path) -> MlpModel:
    with open(path, "rb") as f:
        if f.read(4) != _MAGIC_MLP:
            raise ValueError("bad checkpoint magic")
        version, input_dim, depth = struct.unpack("<III", f.read(12))
        if version != _VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        mlp = [(_read_matrix(f), _read_matrix(f)) for _ in range(depth)]
    return MlpModel(input_dim, mlp)
