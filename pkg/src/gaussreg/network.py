"""MLP feature extractor plus a regressor head that emits (mu, sigma).

The trunk layers and the head layers are plain dense layers; the final layer
has width 2D.  Its first D columns are the means, the last D pass through
softplus and get ``sigma_floor`` added.  A "point" head (width D, no sigma) is
available so a squared-error baseline can share the exact same trunk.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import rng
from . import tensor as T
from .errors import DimensionError, ModelFormatError, NonFiniteError
from .gauss_head import DEFAULT_SIGMA_FLOOR, GaussianPrediction

MAGIC = "GAUSSREG-MODEL"
VERSION = "v1"
ACTIVATIONS = {"tanh": T.tanh, "relu": T.relu}
HEADS = ("gaussian", "point")


@dataclass(frozen=True)
class NetworkSpec:
    input_dim: int
    hidden_layers: Tuple[Tuple[int, str], ...] = ((50, "relu"),)
    head_hidden: Tuple[int, ...] = (50,)
    head_activation: str = "relu"
    output_dim: int = 1
    sigma_floor: float = DEFAULT_SIGMA_FLOOR
    seed: int = 0
    head: str = "gaussian"

    def __post_init__(self):
        hidden = tuple((int(w), str(a)) for w, a in self.hidden_layers)
        object.__setattr__(self, "hidden_layers", hidden)
        object.__setattr__(self, "head_hidden", tuple(int(w) for w in self.head_hidden))
        if self.input_dim < 1 or self.output_dim < 1:
            raise ValueError("input_dim and output_dim must be >= 1")
        for width, act in hidden:
            if width < 1:
                raise ValueError(f"layer width must be >= 1, got {width}")
            if act not in ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}")
        if any(w < 1 for w in self.head_hidden):
            raise ValueError("head widths must be >= 1")
        if self.head_activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.head_activation!r}")
        if not self.sigma_floor > 0:
            raise ValueError("sigma_floor must be positive")
        if self.head not in HEADS:
            raise ValueError(f"head must be one of {HEADS}")
        if self.seed < 0:
            raise ValueError("seed must be unsigned")

    @property
    def out_width(self) -> int:
        return 2 * self.output_dim if self.head == "gaussian" else self.output_dim

    def layer_dims(self) -> List[Tuple[int, int, Optional[str]]]:
        """(fan_in, fan_out, activation) per dense layer; final layer has none."""
        acts = [a for _, a in self.hidden_layers] + [self.head_activation] * len(self.head_hidden)
        widths = [w for w, _ in self.hidden_layers] + list(self.head_hidden)
        dims = [self.input_dim] + widths + [self.out_width]
        return [(dims[i], dims[i + 1], acts[i] if i < len(acts) else None) for i in range(len(dims) - 1)]

    def parameter_count(self) -> int:
        return sum(fi * fo + fo for fi, fo, _ in self.layer_dims())

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden_layers"] = [list(h) for h in self.hidden_layers]
        d["head_hidden"] = list(self.head_hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        d = dict(d)
        d["hidden_layers"] = tuple(tuple(h) for h in d.get("hidden_layers", ()))
        d["head_hidden"] = tuple(d.get("head_hidden", ()))
        return cls(**d)


@dataclass
class NetOutput:
    """Tensors produced by one forward pass (sigma is None for point heads)."""

    mu: T.Tensor
    sigma: Optional[T.Tensor]

    def prediction(self) -> GaussianPrediction:
        if self.sigma is None:
            raise ValueError("point head has no sigma")
        return GaussianPrediction(self.mu.data.copy(), self.sigma.data.copy())


class Network:
    def __init__(self, spec: NetworkSpec, params: Sequence[np.ndarray], metadata: Optional[dict] = None):
        expected = [((fi, fo), (fo,)) for fi, fo, _ in spec.layer_dims()]
        if len(params) != 2 * len(expected):
            raise DimensionError(f"expected {2 * len(expected)} parameter arrays, got {len(params)}")
        for i, (ws, bs) in enumerate(expected):
            for arr, shape in ((params[2 * i], ws), (params[2 * i + 1], bs)):
                if tuple(np.shape(arr)) != shape:
                    raise DimensionError(f"layer {i}: parameter shape {np.shape(arr)} != {shape}")
        self.spec = spec
        self.params = [T.Tensor(p, requires_grad=True) for p in params]
        self.metadata = dict(metadata or {})

    @classmethod
    def init(cls, spec: NetworkSpec) -> "Network":
        gen = rng.stream(spec.seed, "init")
        params = []
        for fan_in, fan_out, _ in spec.layer_dims():
            bound = math.sqrt(6.0 / (fan_in + fan_out))
            params.append(gen.uniform(-bound, bound, size=(fan_in, fan_out)))
            params.append(np.zeros(fan_out))
        if spec.head == "gaussian":
            params[-1][spec.output_dim:] = T.inverse_softplus(1.0)
        return cls(spec, params)

    def parameter_arrays(self) -> List[np.ndarray]:
        return [p.data.copy() for p in self.params]

    def parameter_count(self) -> int:
        return sum(p.size for p in self.params)

    def copy(self) -> "Network":
        return Network(self.spec, self.parameter_arrays(), self.metadata)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def forward(self, x) -> NetOutput:
        x = x if isinstance(x, T.Tensor) else T.Tensor(x)
        if x.data.ndim != 2 or x.shape[1] != self.spec.input_dim:
            raise DimensionError(f"network expects N x {self.spec.input_dim} input, got {x.shape}")
        if not np.all(np.isfinite(x.data)):
            raise NonFiniteError("network input contains NaN or infinity")  # relu would mask NaN
        h = x
        for i, (_, _, act) in enumerate(self.spec.layer_dims()):
            h = T.broadcast_add_row(T.matmul(h, self.params[2 * i]), self.params[2 * i + 1])
            if act is not None:
                h = ACTIVATIONS[act](h)
        if not np.all(np.isfinite(h.data)):
            raise NonFiniteError("network produced non-finite activations")
        d = self.spec.output_dim
        if self.spec.head == "point":
            return NetOutput(h, None)
        mu = T.slice_cols(h, 0, d)
        floor = T.Tensor(np.full((h.shape[0], d), self.spec.sigma_floor))
        sigma = T.add(T.softplus(T.slice_cols(h, d, 2 * d)), floor)
        return NetOutput(mu, sigma)

    def predict(self, x) -> GaussianPrediction:
        return self.forward(x).prediction()

    def predict_mean(self, x) -> np.ndarray:
        return self.forward(x).mu.data.copy()

    # -- persistence ---------------------------------------------------------

    def to_document(self) -> str:
        doc = {
            "spec": self.spec.to_dict(),
            "parameters": [{"shape": list(p.shape), "values": p.data.reshape(-1).tolist()} for p in self.params],
            "metadata": self.metadata,
        }
        return f"{MAGIC} {VERSION}\n" + json.dumps(doc, sort_keys=True) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_document(), encoding="utf-8")

    @classmethod
    def from_document(cls, text: str) -> "Network":
        header, _, body = text.partition("\n")
        header = header.strip()
        if not header.startswith(MAGIC):
            raise ModelFormatError(f"not a model file: bad header {header[:40]!r}")
        if header != f"{MAGIC} {VERSION}":
            raise ModelFormatError(f"unsupported model version {header[len(MAGIC):].strip()!r}, expected {VERSION}")
        try:
            doc = json.loads(body)
        except json.JSONDecodeError as exc:
            raise ModelFormatError(f"model file is truncated or corrupt: {exc}") from None
        try:
            spec = NetworkSpec.from_dict(doc["spec"])
            params = []
            for entry in doc["parameters"]:
                values = np.array(entry["values"], dtype=np.float64)
                shape = tuple(entry["shape"])
                if values.size != math.prod(shape):
                    raise ModelFormatError(f"parameter has {values.size} values but shape {shape}")
                params.append(values.reshape(shape))
            return cls(spec, params, doc.get("metadata"))
        except ModelFormatError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise ModelFormatError(f"inconsistent model file: {exc}") from None

    @classmethod
    def load(cls, path) -> "Network":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except UnicodeDecodeError:
            raise ModelFormatError(f"{path}: not a text model file") from None
        return cls.from_document(text)


def init(spec: NetworkSpec) -> Network:
    return Network.init(spec)


def forward(net: Network, x) -> NetOutput:
    return net.forward(x)


def save(net: Network, path) -> None:
    net.save(path)


def load(path) -> Network:
    return Network.load(path)
