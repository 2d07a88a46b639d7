"""The shallow CNN family (Conv2 / Conv4 / Conv6) and its checkpoint format.

Depth d means d conv blocks: conv ('same' padding) -> batch norm -> relu ->
3x3/stride-2 max pool, so each block halves the spatial extent (rounded up).
The first layer has 3*d filters of size d x d; every later layer uses 2x2
kernels and doubles the filter count.  After flattening, three relu+dropout
dense layers of width 1024 feed a linear 2-way head.

Parameters live in an ordered name -> array dict; a fixed flattening order
makes whole-model vectors (for Adam, distances, PCA) well defined.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import nn
from .optim import xavier_uniform
from .tensor import ShapeError, Tensor, reshape

MAGIC = b"RMWT"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class ModelSpec:
    depth: int = 4
    canvas: int = 64
    channels: int = 3
    n_classes: int = 2
    fc_width: int = 1024
    n_fc: int = 3
    batchnorm: bool = True
    dropout: float = 0.5

    def __post_init__(self):
        if self.depth not in (2, 4, 6):
            raise ValueError(f"depth must be 2, 4 or 6, got {self.depth}")
        if self.canvas < 2 ** self.depth:
            raise ValueError(
                f"Conv{self.depth} needs canvas >= {2 ** self.depth}, got {self.canvas}"
            )

    # -- static architecture facts ---------------------------------------

    def conv_kernels(self) -> list[int]:
        return [self.depth] + [2] * (self.depth - 1)

    def conv_filters(self) -> list[int]:
        return [3 * self.depth * (2 ** i) for i in range(self.depth)]

    def spatial_sizes(self) -> list[int]:
        """Extent after each block (pooling halves, rounded up)."""
        sizes, s = [], self.canvas
        for _ in range(self.depth):
            s = (s + 1) // 2
            sizes.append(s)
        return sizes

    @property
    def flat_dim(self) -> int:
        return self.conv_filters()[-1] * self.spatial_sizes()[-1] ** 2

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        shapes: dict[str, tuple[int, ...]] = {}
        in_ch = self.channels
        for i, (k, f) in enumerate(zip(self.conv_kernels(), self.conv_filters())):
            shapes[f"conv{i}.w"] = (f, in_ch, k, k)
            shapes[f"conv{i}.b"] = (f,)
            if self.batchnorm:
                shapes[f"bn{i}.gamma"] = (f,)
                shapes[f"bn{i}.beta"] = (f,)
            in_ch = f
        d = self.flat_dim
        for j in range(self.n_fc):
            shapes[f"fc{j}.w"] = (d, self.fc_width)
            shapes[f"fc{j}.b"] = (self.fc_width,)
            d = self.fc_width
        shapes["head.w"] = (d, self.n_classes)
        shapes["head.b"] = (self.n_classes,)
        return shapes

    def param_names(self) -> list[str]:
        return list(self.param_shapes())

    @property
    def n_params(self) -> int:
        return sum(int(np.prod(s)) for s in self.param_shapes().values())


def init_params(spec: ModelSpec, rng: np.random.Generator, dtype=np.float32) -> dict[str, np.ndarray]:
    """Xavier-uniform weights, zero biases, identity batch-norm affine."""
    params: dict[str, np.ndarray] = {}
    for name, shape in spec.param_shapes().items():
        kind = name.split(".")[1]
        if kind == "w":
            if len(shape) == 4:
                f, c, kh, kw = shape
                fan_in, fan_out = c * kh * kw, f * kh * kw
            else:
                fan_in, fan_out = shape
            params[name] = xavier_uniform(shape, fan_in, fan_out, rng, dtype)
        elif kind == "gamma":
            params[name] = np.ones(shape, dtype=dtype)
        else:  # biases and beta
            params[name] = np.zeros(shape, dtype=dtype)
    return params


def flatten_params(spec: ModelSpec, params: dict[str, np.ndarray | Tensor]) -> np.ndarray:
    parts = []
    for name in spec.param_names():
        p = params[name]
        arr = p.data if isinstance(p, Tensor) else p
        parts.append(np.asarray(arr, dtype=np.float32).reshape(-1))
    return np.concatenate(parts)


def unflatten_params(spec: ModelSpec, vec: np.ndarray, dtype=np.float32) -> dict[str, np.ndarray]:
    if vec.size != spec.n_params:
        raise ShapeError(f"vector has {vec.size} entries, model needs {spec.n_params}")
    out: dict[str, np.ndarray] = {}
    pos = 0
    for name, shape in spec.param_shapes().items():
        n = int(np.prod(shape))
        out[name] = np.asarray(vec[pos : pos + n], dtype=dtype).reshape(shape)
        pos += n
    return out


class ConvNet:
    """A model = spec + parameter arrays + batch-norm running stats."""

    def __init__(self, spec: ModelSpec, params: dict[str, np.ndarray], bn_states: list[nn.BatchNormState] | None = None):
        self.spec = spec
        self.params = params
        if spec.batchnorm:
            if bn_states is None:
                bn_states = [nn.BatchNormState.create(f) for f in spec.conv_filters()]
            if len(bn_states) != spec.depth:
                raise ValueError(f"need {spec.depth} batch-norm states, got {len(bn_states)}")
        else:
            bn_states = []
        self.bn_states = bn_states

    @classmethod
    def create(cls, spec: ModelSpec, rng: np.random.Generator) -> "ConvNet":
        return cls(spec, init_params(spec, rng))

    def clone(self) -> "ConvNet":
        return ConvNet(
            self.spec,
            {k: v.copy() for k, v in self.params.items()},
            [s.copy() for s in self.bn_states],
        )

    # -- parameter plumbing ----------------------------------------------

    def tensor_params(self, requires_grad: bool = True) -> dict[str, Tensor]:
        return {k: Tensor(v, requires_grad=requires_grad) for k, v in self.params.items()}

    def set_flat(self, vec: np.ndarray) -> None:
        self.params = unflatten_params(self.spec, vec)

    def get_flat(self) -> np.ndarray:
        return flatten_params(self.spec, self.params)

    # -- forward ----------------------------------------------------------

    def forward(
        self,
        x,
        params: dict[str, Tensor] | None = None,
        *,
        bn_training: bool = True,
        update_running: bool = False,
        dropout_rng: np.random.Generator | None = None,
    ) -> Tensor:
        """Logits for a batch of images (B, C, H, W).

        params overrides the stored weights (pass adapted tensors during the
        inner loop).  bn_training picks batch vs running statistics;
        update_running folds batch stats into the running buffers."""
        spec = self.spec
        if params is None:
            params = self.tensor_params(requires_grad=False)
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x))
        if x.ndim != 4 or x.shape[1:] != (spec.channels, spec.canvas, spec.canvas):
            raise ShapeError(
                f"expected input (B, {spec.channels}, {spec.canvas}, {spec.canvas}), got {x.shape}"
            )
        h = x
        for i, k in enumerate(spec.conv_kernels()):
            pb, pe = nn.same_pads(k)
            h = nn.conv2d(h, params[f"conv{i}.w"], params[f"conv{i}.b"], stride=1, padding=((pb, pe), (pb, pe)))
            if spec.batchnorm:
                # running buffers move only when explicitly asked (or are read
                # in eval mode); episodic adaptation must not pollute them
                state = self.bn_states[i] if (not bn_training or update_running) else None
                h = nn.batchnorm2d(
                    h,
                    params[f"bn{i}.gamma"],
                    params[f"bn{i}.beta"],
                    state=state,
                    training=bn_training,
                    momentum=0.1,
                )
            h = nn.relu(h)
            h = nn.maxpool2d(h, 3, 2, 1)
        B = h.shape[0]
        h = reshape(h, (B, spec.flat_dim))
        for j in range(spec.n_fc):
            h = nn.dense(h, params[f"fc{j}.w"], params[f"fc{j}.b"])
            h = nn.relu(h)
            h = nn.dropout(h, spec.dropout, dropout_rng)
        return nn.dense(h, params["head.w"], params["head.b"])


# -- checkpoints -----------------------------------------------------------

_HEADER = struct.Struct("<4sIIIIIIIBxxxQ")  # magic, ver, depth, canvas, ch, ncls, fcw, nfc, bnflag, nparams


def save_checkpoint(path: str | Path, model: ConvNet, meta: dict | None = None) -> None:
    """Binary weights (header + little-endian float32 in flattening order)

    plus a JSON sidecar carrying batch-norm running stats and caller meta."""
    path = Path(path)
    spec = model.spec
    vec = model.get_flat().astype("<f4")
    header = _HEADER.pack(
        MAGIC, FORMAT_VERSION, spec.depth, spec.canvas, spec.channels,
        spec.n_classes, spec.fc_width, spec.n_fc, int(spec.batchnorm), vec.size,
    )
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(header)
        f.write(vec.tobytes())
    sidecar = {
        "format_version": FORMAT_VERSION,
        "spec": {
            "depth": spec.depth, "canvas": spec.canvas, "channels": spec.channels,
            "n_classes": spec.n_classes, "fc_width": spec.fc_width, "n_fc": spec.n_fc,
            "batchnorm": spec.batchnorm, "dropout": spec.dropout,
        },
        "bn_running": [
            {"mean": s.mean.tolist(), "var": s.var.tolist(), "count": s.count}
            for s in model.bn_states
        ],
        "meta": meta or {},
    }
    Path(str(path) + ".json").write_text(json.dumps(sidecar, indent=1))


def load_checkpoint(path: str | Path) -> tuple[ConvNet, dict]:
    """Inverse of save_checkpoint; returns (model, meta)."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size or raw[:4] != MAGIC:
        raise ValueError(f"{path} is not a model checkpoint (bad magic)")
    magic, ver, depth, canvas, ch, ncls, fcw, nfc, bnflag, nparams = _HEADER.unpack_from(raw)
    if ver != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint version {ver}")
    sidecar_path = Path(str(path) + ".json")
    dropout_p = 0.5
    sidecar = None
    if sidecar_path.exists():
        sidecar = json.loads(sidecar_path.read_text())
        dropout_p = float(sidecar["spec"].get("dropout", 0.5))
    spec = ModelSpec(
        depth=depth, canvas=canvas, channels=ch, n_classes=ncls,
        fc_width=fcw, n_fc=nfc, batchnorm=bool(bnflag), dropout=dropout_p,
    )
    if nparams != spec.n_params:
        raise ValueError(f"checkpoint declares {nparams} params, spec implies {spec.n_params}")
    vec = np.frombuffer(raw, dtype="<f4", count=nparams, offset=_HEADER.size)
    model = ConvNet(spec, unflatten_params(spec, vec.copy()))
    meta: dict = {}
    if sidecar is not None:
        for s, rec in zip(model.bn_states, sidecar.get("bn_running", [])):
            s.mean = np.asarray(rec["mean"], dtype=np.float32)
            s.var = np.asarray(rec["var"], dtype=np.float32)
            s.count = int(rec.get("count", 0))
        meta = sidecar.get("meta", {})
    return model, meta
