"""Fully connected tanh network and its flat parameter vector."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .autodiff import Jet2, Var, eval_jet, tanh

CKPT_MAGIC = "rpinn-params v1"


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int = 2
    hidden_layers: int = 7
    hidden_width: int = 20
    output_dim: int = 1
    activation: str = "tanh"

    def __post_init__(self):
        if self.input_dim < 1 or self.hidden_layers < 1 or self.hidden_width < 1:
            raise ValueError(f"invalid network shape: {self}")
        if self.output_dim != 1:
            raise ValueError("only scalar-output networks are supported")
        if self.activation != "tanh":
            raise ValueError(f"unsupported activation {self.activation!r}")

    @property
    def sizes(self) -> list[int]:
        return [self.input_dim] + [self.hidden_width] * self.hidden_layers + [1]


@dataclass(frozen=True)
class ParamLayout:
    """Flat index map: for each layer the weight (out, in) row-major, then
    the bias; trainable PDE parameters follow the last layer."""

    spec: MlpSpec
    n_lambda: int = 0
    blocks: tuple = field(init=False, repr=False)

    def __post_init__(self):
        blocks = []
        offset = 0
        sizes = self.spec.sizes
        for k in range(len(sizes) - 1):
            n_in, n_out = sizes[k], sizes[k + 1]
            blocks.append((f"W{k + 1}", (n_out, n_in), offset))
            offset += n_out * n_in
            blocks.append((f"b{k + 1}", (n_out,), offset))
            offset += n_out
        if self.n_lambda:
            blocks.append(("lambda", (self.n_lambda,), offset))
            offset += self.n_lambda
        object.__setattr__(self, "blocks", tuple(blocks))

    @property
    def size(self) -> int:
        name, shape, offset = self.blocks[-1]
        return offset + int(np.prod(shape))

    @property
    def n_network(self) -> int:
        return self.size - self.n_lambda

    def index(self, name: str, *pos: int) -> int:
        """Flat index of entry ``pos`` inside block ``name``."""
        for bname, shape, offset in self.blocks:
            if bname == name:
                return offset + int(np.ravel_multi_index(pos, shape))
        raise KeyError(name)


@dataclass
class ParamVector:
    values: np.ndarray
    layout: ParamLayout

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.layout.size,):
            raise ValueError(f"expected {self.layout.size} parameters, got {self.values.shape}")

    @property
    def spec(self) -> MlpSpec:
        return self.layout.spec

    @property
    def lam(self) -> np.ndarray:
        return self.values[self.layout.n_network :]

    def copy(self) -> "ParamVector":
        return ParamVector(self.values.copy(), self.layout)


def init_params(spec: MlpSpec, seed: int, n_lambda: int = 0, lam0=None) -> ParamVector:
    """Glorot-uniform weights, zero biases."""
    layout = ParamLayout(spec, n_lambda)
    rng = np.random.default_rng(seed)
    values = np.zeros(layout.size)
    for name, shape, offset in layout.blocks:
        if name.startswith("W"):
            n_out, n_in = shape
            bound = np.sqrt(6.0 / (n_in + n_out))
            values[offset : offset + n_out * n_in] = rng.uniform(-bound, bound, n_out * n_in)
    if n_lambda and lam0 is not None:
        values[layout.n_network :] = lam0
    return ParamVector(values, layout)


def unpack(spec: MlpSpec, theta):
    """Split a flat parameter array (or tape node) into ``[(W, b), ...]``."""
    layers = []
    offset = 0
    sizes = spec.sizes
    for k in range(len(sizes) - 1):
        n_in, n_out = sizes[k], sizes[k + 1]
        W = theta[offset : offset + n_out * n_in].reshape(n_out, n_in)
        offset += n_out * n_in
        b = theta[offset : offset + n_out]
        offset += n_out
        layers.append((W, b))
    return layers


def _theta(params):
    return params.values if isinstance(params, ParamVector) else params


def forward(spec: MlpSpec, params, x):
    """Network output at points ``x`` of shape ``(..., d)``.

    ``params`` may be a :class:`ParamVector`, a flat array or a tape node;
    ``x`` may be a point array or a point-like :class:`Jet2`.
    """
    dim = x.dim if isinstance(x, Jet2) else np.shape(x)[-1]
    if dim != spec.input_dim:
        raise ValueError(f"input has dimension {dim}, network expects {spec.input_dim}")
    layers = unpack(spec, _theta(params))
    h = x
    for W, b in layers[:-1]:
        h = tanh(h @ W.T + b)
    W, b = layers[-1]
    return (h @ W.T + b)[..., 0]


def forward_jet_reference(spec: MlpSpec, params, x) -> Jet2:
    """Jet of the network through the generic :func:`eval_jet` machinery."""
    return eval_jet(lambda p: forward(spec, params, p), x)


def _pairs(d: int) -> list[tuple[int, int]]:
    return [(i, j) for i in range(d) for j in range(i, d)]


def _jet_layer(H, W, b, d, order):
    """tanh(W h + b) applied to a stacked jet of layout (width, comp, point)."""
    h, w, bb = (v.value if isinstance(v, Var) else v for v in (H, W, b))
    w_in, n_comp, n = h.shape
    w_out = w.shape[0]
    Z = (w @ h.reshape(w_in, -1)).reshape(w_out, n_comp, n)
    out, s = _kernels.tanh_forward(Z, bb, d, order)
    if not any(isinstance(v, Var) for v in (H, W, b)):
        return out
    memo = {}

    def grads(g):
        # one hand-derived backward serves all three parents
        key = id(g)
        if key not in memo:
            memo.clear()
            gZ, gb = _kernels.tanh_backward(g, Z, s, d, order)
            memo[key] = (gZ.reshape(w_out, -1), gb)
        return memo[key]

    parents = []
    if isinstance(H, Var):
        parents.append((H, lambda g: (w.T @ grads(g)[0]).reshape(h.shape)))
    if isinstance(W, Var):
        parents.append((W, lambda g: grads(g)[0] @ h.reshape(w_in, -1).T))
    if isinstance(b, Var):
        parents.append((b, lambda g: grads(g)[1]))
    return Var(out, tuple(parents))


def forward_jet(spec: MlpSpec, params, x, order: int = 2) -> Jet2:
    """Output value with input-gradient and (for ``order=2``) input-Hessian.

    Derivatives are propagated layer by layer in stacked form; when
    ``params`` is a tape node the result components are tape nodes too, so
    losses built from them can be differentiated in the parameters.
    """
    if order not in (0, 1, 2):
        raise ValueError("order must be 0, 1 or 2")
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n, d = x.shape
    if d != spec.input_dim:
        raise ValueError(f"input has dimension {d}, network expects {spec.input_dim}")
    n_comp = 1 + (d if order >= 1 else 0) + (d * (d + 1) // 2 if order == 2 else 0)
    H = np.zeros((d, n_comp, n))
    H[:, 0, :] = x.T
    if order >= 1:
        for i in range(d):
            H[i, 1 + i, :] = 1.0
    layers = unpack(spec, _theta(params))
    h = H
    with np.errstate(over="raise", invalid="raise", divide="raise", under="ignore"):
        for W, b in layers[:-1]:
            h = _jet_layer(h, W, b, d, order)
        W, b = layers[-1]
        out = (W @ h.reshape(spec.hidden_width, -1)).reshape(n_comp, n)
    comps = [out[c] for c in range(n_comp)]
    value = comps[0] + b[0]
    first = comps[1 : 1 + d] if order >= 1 else [0.0] * d
    if order == 2:
        upper = [[None] * (d - i) for i in range(d)]
        for p, (i, j) in enumerate(_pairs(d)):
            upper[i][j - i] = comps[1 + d + p]
    else:
        upper = [[0.0] * (d - i) for i in range(d)]
    return Jet2.from_upper(value, first, upper)


def forward_values(spec: MlpSpec, params, x, chunk: int = 65536) -> np.ndarray:
    """Plain evaluation on many points, chunked to bound memory."""
    x = np.asarray(x, dtype=float)
    theta = np.asarray(_theta(params), dtype=float)
    if len(x) <= chunk:
        return forward(spec, theta, x)
    return np.concatenate([forward(spec, theta, x[i : i + chunk]) for i in range(0, len(x), chunk)])


# ---------------------------------------------------------------------------
# checkpoint file: one header line, then one value per line in layout order


def save_params(path, params: ParamVector) -> None:
    s = params.spec
    header = (
        f"# {CKPT_MAGIC} input_dim={s.input_dim} hidden_layers={s.hidden_layers} "
        f"hidden_width={s.hidden_width} activation={s.activation} "
        f"n_lambda={params.layout.n_lambda} size={params.layout.size}"
    )
    body = "\n".join(f"{v:.17g}" for v in params.values)
    Path(path).write_text(header + "\n" + body + "\n")


def load_params(path) -> ParamVector:
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith(f"# {CKPT_MAGIC}"):
        raise ValueError(f"{path}: not a parameter checkpoint")
    fields = dict(tok.split("=", 1) for tok in lines[0][len(f"# {CKPT_MAGIC}") :].split())
    spec = MlpSpec(
        input_dim=int(fields["input_dim"]),
        hidden_layers=int(fields["hidden_layers"]),
        hidden_width=int(fields["hidden_width"]),
        activation=fields["activation"],
    )
    layout = ParamLayout(spec, int(fields["n_lambda"]))
    values = np.array([float(v) for v in lines[1:] if v.strip()])
    if values.size != int(fields["size"]):
        raise ValueError(f"{path}: expected {fields['size']} values, found {values.size}")
    return ParamVector(values, layout)


__all__ = [
    "MlpSpec",
    "ParamLayout",
    "ParamVector",
    "init_params",
    "unpack",
    "forward",
    "forward_jet",
    "forward_jet_reference",
    "forward_values",
    "save_params",
    "load_params",
    "Var",
]
