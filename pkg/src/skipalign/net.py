"""A tiny fully-connected network with exact reverse-mode gradients.

Shared MLP backbone -> feature f; three heads on top of f: a projection
head producing the alignment embedding z (one hidden rectified layer, or a
single linear map), a linear K-way classifier, and a linear one-vs-all
detector emitting K (ID, OOD) logit pairs. Plain momentum SGD; checkpoints
round-trip bitwise via hex-encoded float64.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Callable, Mapping

import numpy as np

from .autodiff import Tensor, constant, parameter
from .heads import OvaOutput

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class NetSpec:
    input_dim: int = 16
    backbone_widths: tuple[int, ...] = (32,)
    feature_dim: int = 16
    proj_hidden: int = 16
    embed_dim: int = 8
    num_classes: int = 4
    proj_nonlinear: bool = True
    seed: int = 1

    def __post_init__(self):
        dims = (self.input_dim, self.feature_dim, self.proj_hidden,
                self.embed_dim, self.num_classes, *self.backbone_widths)
        if any(d < 1 for d in dims):
            raise ValueError("all network dimensions must be >= 1")
        object.__setattr__(self, "backbone_widths", tuple(int(w) for w in self.backbone_widths))


def layout(spec: NetSpec) -> list[tuple[str, tuple[int, ...]]]:
    """Ordered (name, shape) table defining the flat parameter vector."""
    entries: list[tuple[str, tuple[int, ...]]] = []
    dims = [spec.input_dim, *spec.backbone_widths, spec.feature_dim]
    for i in range(len(dims) - 1):
        entries.append((f"backbone{i}.W", (dims[i], dims[i + 1])))
        entries.append((f"backbone{i}.b", (dims[i + 1],)))
    if spec.proj_nonlinear:
        entries.append(("proj0.W", (spec.feature_dim, spec.proj_hidden)))
        entries.append(("proj0.b", (spec.proj_hidden,)))
        entries.append(("proj1.W", (spec.proj_hidden, spec.embed_dim)))
        entries.append(("proj1.b", (spec.embed_dim,)))
    else:
        entries.append(("proj0.W", (spec.feature_dim, spec.embed_dim)))
        entries.append(("proj0.b", (spec.embed_dim,)))
    entries.append(("cc.W", (spec.feature_dim, spec.num_classes)))
    entries.append(("cc.b", (spec.num_classes,)))
    entries.append(("od.W", (spec.feature_dim, 2 * spec.num_classes)))
    entries.append(("od.b", (2 * spec.num_classes,)))
    return entries


def param_count(spec: NetSpec) -> int:
    return sum(int(np.prod(shape)) for _, shape in layout(spec))


@dataclass
class ParamState:
    spec: NetSpec
    flat: np.ndarray
    step: int = 0
    _offsets: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        expected = param_count(self.spec)
        if self.flat.shape != (expected,):
            raise ValueError(f"parameter vector has {self.flat.shape[0]} entries, expected {expected}")
        if not np.all(np.isfinite(self.flat)):
            raise ValueError("parameters have non-finite entries")
        offset = 0
        offsets = {}
        for name, shape in layout(self.spec):
            size = int(np.prod(shape))
            offsets[name] = (offset, shape)
            offset += size
        self._offsets = offsets

    def view(self, name: str) -> np.ndarray:
        offset, shape = self._offsets[name]
        return self.flat[offset:offset + int(np.prod(shape))].reshape(shape)

    def names(self) -> list[str]:
        return [name for name, _ in layout(self.spec)]


def init_params(spec: NetSpec) -> ParamState:
    """Seeded scaled-uniform init, U(+-1/sqrt(fan_in)) per layer.

    Biases draw from the same range as their weights; an exactly-zero bias
    vector would park dead-ReLU rows exactly on downstream kinks.
    """
    rng = np.random.default_rng(spec.seed)
    chunks = []
    bound = 1.0
    for name, shape in layout(spec):
        if name.endswith(".W"):
            bound = 1.0 / np.sqrt(shape[0])
        chunks.append(rng.uniform(-bound, bound, size=int(np.prod(shape))))
    return ParamState(spec=spec, flat=np.concatenate(chunks), step=0)


@dataclass(frozen=True)
class ForwardResult:
    features: np.ndarray      # (B, d_f)
    embeddings: np.ndarray    # (B, d)
    cc_logits: np.ndarray     # (B, K)
    ova: OvaOutput
    feature_norms: np.ndarray  # (B,) per-sample ||f||, for geometry statistics


def _forward_core(spec: NetSpec, get: Callable[[str], object], x, relu: Callable):
    """Architecture shared by the numpy and autodiff paths."""
    h = x
    n_backbone = len(spec.backbone_widths) + 1
    for i in range(n_backbone):
        h = h @ get(f"backbone{i}.W") + get(f"backbone{i}.b")
        if i < n_backbone - 1:  # feature output stays linear
            h = relu(h)
    f = h
    if spec.proj_nonlinear:
        p = relu(f @ get("proj0.W") + get("proj0.b"))
        z = p @ get("proj1.W") + get("proj1.b")
    else:
        z = f @ get("proj0.W") + get("proj0.b")
    cc = f @ get("cc.W") + get("cc.b")
    od = f @ get("od.W") + get("od.b")
    return f, z, cc, od


def forward(params: ParamState, x) -> ForwardResult:
    """Deterministic forward pass over a (B, d_in) batch."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.spec.input_dim:
        raise ValueError(f"expected (B, {params.spec.input_dim}) inputs, got {x.shape}")
    f, z, cc, od = _forward_core(params.spec, params.view, x,
                                 relu=lambda v: np.maximum(v, 0.0))
    k = params.spec.num_classes
    ova = OvaOutput.from_logits(od[:, :k], od[:, k:])
    return ForwardResult(features=f, embeddings=z, cc_logits=cc, ova=ova,
                         feature_norms=np.linalg.norm(f, axis=1))


@dataclass(frozen=True)
class ForwardTensors:
    features: Tensor
    embeddings: Tensor
    cc_logits: Tensor
    id_logits: Tensor
    ood_logits: Tensor


def forward_tensors(spec: NetSpec, params: Mapping[str, Tensor], x) -> ForwardTensors:
    """Forward pass on the autodiff tape; validates every layer output."""
    def get(name: str) -> Tensor:
        return params[name]

    def checked_relu(v: Tensor) -> Tensor:
        return v.relu()

    xt = constant(np.asarray(x, dtype=np.float64))
    f, z, cc, od = _forward_core(spec, get, xt, relu=checked_relu)
    for name, t in (("backbone", f), ("projection", z), ("classifier", cc), ("detector", od)):
        if not np.all(np.isfinite(t.data)):
            raise ValueError(f"non-finite activation in layer '{name}'")
    k = spec.num_classes
    return ForwardTensors(features=f, embeddings=z, cc_logits=cc,
                          id_logits=od[:, :k], ood_logits=od[:, k:])


def param_tensors(params: ParamState) -> dict[str, Tensor]:
    return {name: parameter(params.view(name)) for name in params.names()}


def backward(params: ParamState, inputs: Mapping[str, np.ndarray],
             loss_closure: Callable[[Mapping[str, ForwardTensors]], Tensor]) -> np.ndarray:
    """Exact gradient of a scalar loss with respect to all parameters.

    `inputs` maps batch names to (B, d_in) arrays; the closure receives the
    corresponding forward outputs and returns the scalar loss node.
    """
    tensors = param_tensors(params)
    outputs = {name: forward_tensors(params.spec, tensors, x) for name, x in inputs.items()}
    loss = loss_closure(outputs)
    if not np.isfinite(loss.data):
        raise ValueError("non-finite loss")
    loss.backward()
    grads = []
    for name in params.names():
        g = tensors[name].grad
        grads.append(np.zeros(tensors[name].data.size) if g is None else g.ravel())
    return np.concatenate(grads)


def sgd_step(params: ParamState, grads: np.ndarray, lr: float, momentum: float = 0.0,
             weight_decay: float = 0.0, velocity: np.ndarray | None = None
             ) -> tuple[ParamState, np.ndarray]:
    """Classic momentum SGD; weight decay is added to the gradient."""
    if grads.shape != params.flat.shape:
        raise ValueError("gradient length does not match parameter count")
    if velocity is None:
        velocity = np.zeros_like(params.flat)
    effective = grads + weight_decay * params.flat
    velocity = momentum * velocity + effective
    new_flat = params.flat - lr * velocity
    return ParamState(spec=params.spec, flat=new_flat, step=params.step + 1), velocity


def save_checkpoint(params: ParamState, path) -> None:
    payload = {
        "version": CHECKPOINT_VERSION,
        "spec": asdict(params.spec),
        "step": params.step,
        "params_hex": [v.hex() for v in params.flat.tolist()],
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)


def load_checkpoint(path) -> ParamState:
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {payload.get('version')!r}")
    spec_dict = dict(payload["spec"])
    spec_dict["backbone_widths"] = tuple(spec_dict["backbone_widths"])
    spec = NetSpec(**spec_dict)
    flat = np.array([float.fromhex(h) for h in payload["params_hex"]], dtype=np.float64)
    return ParamState(spec=spec, flat=flat, step=int(payload["step"]))
