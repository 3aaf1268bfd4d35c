"""Factorized TDNN acoustic model with manual backpropagation.

Hidden layers run at the full input frame rate in valid mode: a layer with
offsets ``[-a, ..., b]`` consumes ``a`` frames of left and ``b`` frames of
right context. The input is padded by replicating its first and last frames,
so the last hidden activation has one row per input frame. The final
(offset-0) layer is evaluated only on input frames 0, 3, 6, ...

Layer kinds:

``tdnn``   affine over spliced frames, ReLU, per-dimension scale and offset
``relu``   same as ``tdnn``; kept as its own kind for architecture plans
``tdnnf``  semi-orthogonal factor M to a bottleneck, affine A back out,
           ReLU, scale and offset, plus ``0.66 * input`` when dims match
``linear`` affine output (distillation head)
``output`` affine output followed by log-softmax
"""

from __future__ import annotations

import hashlib
import json
import logging
import struct
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any

import numpy as np
from scipy.special import log_softmax

from .errors import (
    ArchitectureMismatchError,
    ConfigError,
    FormatError,
    MissingArtifactError,
    NonFiniteError,
    ShapeMismatchError,
)
from .features import NUM_MEL
from .utils import derive_rng, get_resource_path

logger = logging.getLogger(__name__)

SKIP_SCALE = 0.66
MAX_RIGHT_CONTEXT = 10
STUDENT_PARAM_LIMIT = 400_000
CHECKPOINT_MAGIC = b"WFCKPT01"
ARCHITECTURE_DIR = ("resources", "architectures")


class LayerKind(str, Enum):
    TDNN = "tdnn"
    TDNNF = "tdnnf"
    RELU = "relu"
    LINEAR = "linear"
    OUTPUT = "output"

    @property
    def is_final(self) -> bool:
        return self in (LayerKind.LINEAR, LayerKind.OUTPUT)


@dataclass(frozen=True)
class LayerSpec:
    kind: LayerKind
    offsets: tuple[int, ...] = (0,)
    dim: int | None = None
    bottleneck: int | None = None
    bottleneck_offsets: tuple[int, ...] = (0,)
    skip: bool = True

    @property
    def left_context(self) -> int:
        left = -self.offsets[0]
        if self.kind is LayerKind.TDNNF:
            left -= self.bottleneck_offsets[0]
        return left

    @property
    def right_context(self) -> int:
        right = self.offsets[-1]
        if self.kind is LayerKind.TDNNF:
            right += self.bottleneck_offsets[-1]
        return right

    def validate(self, index: int) -> None:
        for name, offsets in (("offsets", self.offsets), ("bottleneck_offsets",
                                                           self.bottleneck_offsets)):
            if not offsets or list(offsets) != sorted(set(offsets)):
                raise ArchitectureMismatchError(
                    f"layer {index}: {name} must be sorted and unique", layer=index
                )
            if offsets[0] > 0 or offsets[-1] < 0:
                raise ArchitectureMismatchError(
                    f"layer {index}: {name} must span frame 0", layer=index
                )
        if self.kind is LayerKind.TDNNF and not self.bottleneck:
            raise ArchitectureMismatchError(f"layer {index}: tdnnf needs a bottleneck", layer=index)
        if self.kind.is_final and self.offsets != (0,):
            raise ArchitectureMismatchError(
                f"layer {index}: {self.kind.value} layers use offset 0 only", layer=index
            )

    def to_dict(self) -> dict[str, Any]:
        data: dict[str, Any] = {"kind": self.kind.value, "offsets": list(self.offsets),
                                "dim": self.dim}
        if self.kind is LayerKind.TDNNF:
            data["bottleneck"] = self.bottleneck
            data["bottleneck_offsets"] = list(self.bottleneck_offsets)
            data["skip"] = self.skip
        return data

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> LayerSpec:
        try:
            kind = LayerKind(data["kind"])
        except (KeyError, ValueError) as e:
            raise ConfigError(f"bad layer kind in {dict(data)!r}", field="kind") from e
        dim = data.get("dim")
        bottleneck = data.get("bottleneck")
        return cls(
            kind=kind,
            offsets=tuple(int(o) for o in data.get("offsets", (0,))),
            dim=None if dim is None else int(dim),
            bottleneck=None if bottleneck is None else int(bottleneck),
            bottleneck_offsets=tuple(int(o) for o in data.get("bottleneck_offsets", (0,))),
            skip=bool(data.get("skip", True)),
        )


@dataclass(frozen=True)
class NetworkConfig:
    """Layer plan plus bookkeeping for transfer and distillation.

    ``lower_layers`` counts the layers that form the transferable lower
    stack. ``bottleneck_layer`` names the tdnnf layer whose bottleneck is
    captured as the distillation target.
    """

    name: str
    layers: tuple[LayerSpec, ...]
    input_dim: int = NUM_MEL
    subsample: int = 3
    lower_layers: int = 0
    bottleneck_layer: int | None = None

    def __post_init__(self) -> None:
        if not self.layers:
            raise ArchitectureMismatchError(f"{self.name}: no layers")
        for index, layer in enumerate(self.layers):
            layer.validate(index)
            if layer.kind.is_final and index != len(self.layers) - 1:
                raise ArchitectureMismatchError(
                    f"{self.name}: {layer.kind.value} must be the last layer", layer=index
                )
        if not self.layers[-1].kind.is_final:
            raise ArchitectureMismatchError(f"{self.name}: last layer must be linear or output")
        if self.right_context > MAX_RIGHT_CONTEXT:
            raise ArchitectureMismatchError(
                f"{self.name}: right context {self.right_context} exceeds {MAX_RIGHT_CONTEXT}"
            )
        if not 0 <= self.lower_layers < len(self.layers):
            raise ArchitectureMismatchError(f"{self.name}: lower_layers out of range")
        if self.bottleneck_layer is not None and (
            self.layers[self.bottleneck_layer].kind is not LayerKind.TDNNF
        ):
            raise ArchitectureMismatchError(
                f"{self.name}: bottleneck_layer must be a tdnnf layer", layer=self.bottleneck_layer
            )

    @property
    def left_context(self) -> int:
        return sum(layer.left_context for layer in self.layers)

    @property
    def right_context(self) -> int:
        return sum(layer.right_context for layer in self.layers)

    @property
    def output_dim(self) -> int | None:
        return self.layers[-1].dim

    @property
    def is_resolved(self) -> bool:
        return self.output_dim is not None

    def with_output_dim(self, dim: int) -> NetworkConfig:
        """Fill in an output layer declared with ``dim: null`` (the topology's pdf count)."""
        last = self.layers[-1]
        if last.dim is not None and last.dim != dim:
            raise ShapeMismatchError(
                f"{self.name}: output dim {last.dim} does not match {dim}",
                expected=dim, actual=last.dim,
            )
        return replace(self, layers=(*self.layers[:-1], replace(last, dim=dim)))

    def lower_stack(self, head_dim: int, name: str | None = None) -> NetworkConfig:
        """The lower stack followed by a linear head of ``head_dim`` outputs."""
        if self.lower_layers == 0:
            raise ArchitectureMismatchError(f"{self.name}: no lower stack declared")
        head = LayerSpec(LayerKind.LINEAR, dim=head_dim)
        return NetworkConfig(
            name=name or f"{self.name}-lower",
            layers=(*self.layers[: self.lower_layers], head),
            input_dim=self.input_dim,
            subsample=self.subsample,
            lower_layers=self.lower_layers,
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "input_dim": self.input_dim,
            "subsample": self.subsample,
            "lower_layers": self.lower_layers,
            "bottleneck_layer": self.bottleneck_layer,
            "layers": [layer.to_dict() for layer in self.layers],
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> NetworkConfig:
        try:
            layers = tuple(LayerSpec.from_dict(item) for item in data["layers"])
        except KeyError as e:
            raise ConfigError("architecture needs a 'layers' list", field="layers") from e
        bottleneck = data.get("bottleneck_layer")
        return cls(
            name=str(data.get("name", "network")),
            layers=layers,
            input_dim=int(data.get("input_dim", NUM_MEL)),
            subsample=int(data.get("subsample", 3)),
            lower_layers=int(data.get("lower_layers", 0)),
            bottleneck_layer=None if bottleneck is None else int(bottleneck),
        )


def load_architecture(name_or_path: str | Path) -> NetworkConfig:
    """Load a shipped architecture by name or any architecture JSON by path."""
    path = Path(name_or_path)
    if path.suffix != ".json":
        path = get_resource_path(*ARCHITECTURE_DIR, f"{name_or_path}.json")
    if not path.is_file():
        raise MissingArtifactError(f"architecture {name_or_path!r} not found", path, "architecture")
    with path.open(encoding="utf-8") as fh:
        return NetworkConfig.from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# Parameter layout
# ---------------------------------------------------------------------------
def param_shapes(config: NetworkConfig) -> dict[str, tuple[int, ...]]:
    """Ordered parameter names and shapes, ``"<layer>.<tensor>"``."""
    if not config.is_resolved:
        raise ShapeMismatchError(f"{config.name}: output dim not resolved")
    shapes: dict[str, tuple[int, ...]] = {}
    in_dim = config.input_dim
    for i, layer in enumerate(config.layers):
        out_dim = layer.dim if layer.dim is not None else in_dim
        fan_in = in_dim * len(layer.offsets)
        if layer.kind is LayerKind.TDNNF:
            assert layer.bottleneck is not None
            if layer.bottleneck > fan_in:
                raise ArchitectureMismatchError(
                    f"layer {i}: bottleneck {layer.bottleneck} wider than input {fan_in}", layer=i
                )
            shapes[f"{i}.M"] = (layer.bottleneck, fan_in)
            shapes[f"{i}.A"] = (out_dim, layer.bottleneck * len(layer.bottleneck_offsets))
        else:
            shapes[f"{i}.W"] = (out_dim, fan_in)
        shapes[f"{i}.b"] = (out_dim,)
        if not layer.kind.is_final:
            shapes[f"{i}.gamma"] = (out_dim,)
            shapes[f"{i}.beta"] = (out_dim,)
        in_dim = out_dim
    return shapes


def count_params(config: NetworkConfig) -> int:
    return int(sum(np.prod(shape) for shape in param_shapes(config).values()))


def layer_dims(config: NetworkConfig) -> list[tuple[int, int]]:
    dims = []
    in_dim = config.input_dim
    for layer in config.layers:
        out_dim = layer.dim if layer.dim is not None else in_dim
        dims.append((in_dim, out_dim))
        in_dim = out_dim
    return dims


def _init_params(config: NetworkConfig, seed: int, dtype: np.dtype) -> dict[str, np.ndarray]:
    params: dict[str, np.ndarray] = {}
    for name, shape in param_shapes(config).items():
        index, tensor = name.split(".")
        layer = config.layers[int(index)]
        rng = derive_rng(seed, "init", name)
        if tensor == "M":
            q, _ = np.linalg.qr(rng.standard_normal((shape[1], shape[0])))
            value = q.T
        elif tensor in ("W", "A"):
            if layer.kind is LayerKind.OUTPUT:
                value = np.zeros(shape)
            else:
                gain = 1.0 if layer.kind is LayerKind.LINEAR else 2.0
                value = rng.standard_normal(shape) * np.sqrt(gain / shape[1])
        elif tensor == "gamma":
            value = np.ones(shape)
        else:
            value = np.zeros(shape)
        params[name] = value.astype(dtype)
    return params


# ---------------------------------------------------------------------------
# Semi-orthogonal constraint
# ---------------------------------------------------------------------------
def semiorth_error(m: np.ndarray) -> float:
    m = np.asarray(m, dtype=np.float64)
    return float(np.linalg.norm(m @ m.T - np.eye(m.shape[0])))


def semiorth_step(m: np.ndarray) -> np.ndarray:
    """One step pulling the rows of a wide matrix towards orthonormality.

    ``M <- M - 0.5 (M M^T - I) M``. When the largest eigenvalue of ``M M^T``
    exceeds 2 the matrix is first scaled so that it equals 1, which keeps
    every singular value inside the region where the update converges.
    A matrix already within 1e-6 of orthonormal is returned unchanged.

    Raises:
        ShapeMismatchError: If ``m`` has more rows than columns.
        NonFiniteError: If ``m`` holds NaN or inf.
    """
    work = np.asarray(m, dtype=np.float64)
    if work.ndim != 2 or work.shape[0] > work.shape[1]:
        raise ShapeMismatchError("semi-orthogonal factor must be wide", actual=work.shape)
    if not np.all(np.isfinite(work)):
        raise NonFiniteError("semi-orthogonal factor is not finite", what="M")
    eye = np.eye(work.shape[0])
    p = work @ work.T
    if np.linalg.norm(p - eye) <= 1e-6:
        return np.array(m, copy=True)
    top = float(np.linalg.eigvalsh(p)[-1])
    if top > 2.0:
        work = work / np.sqrt(top)
        p = work @ work.T
    updated = work - 0.5 * (p - eye) @ work
    return updated.astype(np.asarray(m).dtype)


# ---------------------------------------------------------------------------
# Forward / backward
# ---------------------------------------------------------------------------
def _splice(x: np.ndarray, offsets: tuple[int, ...]) -> np.ndarray:
    lo = offsets[0]
    n = x.shape[0] - (offsets[-1] - lo)
    if n <= 0:
        raise ShapeMismatchError(f"{x.shape[0]} frames cannot cover offsets {offsets}")
    if len(offsets) == 1:
        return x[-lo : -lo + n] if lo else x[:n]
    return np.concatenate([x[o - lo : o - lo + n] for o in offsets], axis=1)


def _unsplice(grad: np.ndarray, offsets: tuple[int, ...], num_in: int) -> np.ndarray:
    lo = offsets[0]
    n, width = grad.shape
    dim = width // len(offsets)
    out = np.zeros((num_in, dim), dtype=grad.dtype)
    for k, o in enumerate(offsets):
        out[o - lo : o - lo + n] += grad[:, k * dim : (k + 1) * dim]
    return out


def pad_features(frames: np.ndarray, left: int, right: int) -> np.ndarray:
    """Replicate the first frame ``left`` times and the last frame ``right`` times."""
    return np.concatenate(
        [np.repeat(frames[:1], left, axis=0), frames, np.repeat(frames[-1:], right, axis=0)]
    )


@dataclass
class ForwardResult:
    """Network output rows plus whatever backward needs."""

    output: np.ndarray
    taps: dict[str, np.ndarray] = field(default_factory=dict)
    cache: list[dict[str, np.ndarray]] = field(default_factory=list, repr=False)
    rows: int = 0

    @property
    def num_frames(self) -> int:
        return int(self.output.shape[0])


class Network:
    """A TDNN-F network: configuration, parameters and frozen-layer set."""

    def __init__(
        self,
        config: NetworkConfig,
        *,
        seed: int = 0,
        dtype: Any = np.float32,
        params: Mapping[str, np.ndarray] | None = None,
    ):
        if not config.is_resolved:
            raise ShapeMismatchError(f"{config.name}: resolve the output dim before building")
        self.config = config
        self.dtype = np.dtype(dtype)
        self.seed = seed
        self.frozen: set[int] = set()
        if params is None:
            self.params = _init_params(config, seed, self.dtype)
        else:
            shapes = param_shapes(config)
            if list(params) != list(shapes):
                raise ArchitectureMismatchError(f"{config.name}: parameter names do not match")
            self.params = {}
            for name, value in params.items():
                if tuple(value.shape) != shapes[name]:
                    raise ShapeMismatchError(
                        f"{name}: expected {shapes[name]}", expected=shapes[name],
                        actual=value.shape,
                    )
                self.params[name] = np.array(value, dtype=self.dtype)
        self._dims = layer_dims(config)

    # -- bookkeeping --------------------------------------------------------
    @property
    def num_params(self) -> int:
        return count_params(self.config)

    @property
    def left_context(self) -> int:
        return self.config.left_context

    @property
    def right_context(self) -> int:
        return self.config.right_context

    def freeze(self, num_layers: int) -> None:
        """Freeze the first ``num_layers`` layers."""
        self.frozen = set(range(num_layers))

    def unfreeze(self) -> None:
        self.frozen = set()

    def layer_params(self, index: int) -> dict[str, np.ndarray]:
        prefix = f"{index}."
        return {k: v for k, v in self.params.items() if k.startswith(prefix)}

    def trainable_names(self) -> list[str]:
        return [k for k in self.params if int(k.split(".")[0]) not in self.frozen]

    def digest(self, layers: Iterable[int] | None = None) -> str:
        """SHA-256 over the bytes of the selected layers' parameters."""
        wanted = set(range(len(self.config.layers)) if layers is None else layers)
        h = hashlib.sha256()
        for name, value in self.params.items():
            if int(name.split(".")[0]) in wanted:
                h.update(name.encode())
                h.update(np.ascontiguousarray(value).tobytes())
        return h.hexdigest()

    def copy(self) -> Network:
        clone = Network(self.config, seed=self.seed, dtype=self.dtype, params=self.params)
        clone.frozen = set(self.frozen)
        return clone

    # -- forward ------------------------------------------------------------
    def forward(self, features: np.ndarray, capture: bool = False) -> ForwardResult:
        """Evaluate the network on a T x 64 feature matrix.

        Returns one output row per input frame ``t = 0, 3, 6, ...``; with
        ``capture`` the lower-stack output (``"lower"``) and the designated
        bottleneck (``"bottleneck"``) are returned at the same rows.
        """
        frames = np.asarray(features)
        if frames.ndim != 2 or frames.shape[1] != self.config.input_dim:
            raise ShapeMismatchError(
                f"expected T x {self.config.input_dim} features, got {frames.shape}",
                expected=self.config.input_dim, actual=frames.shape,
            )
        if frames.shape[0] == 0:
            out_dim = self._dims[-1][1]
            return ForwardResult(np.zeros((0, out_dim), dtype=self.dtype))
        padded = pad_features(frames.astype(self.dtype), self.left_context, self.right_context)
        return self.forward_window(padded, capture=capture)

    def forward_window(self, window: np.ndarray, capture: bool = False) -> ForwardResult:
        """Evaluate on already padded frames; row 0 of the result is window row ``left_context``."""
        x = np.asarray(window, dtype=self.dtype)
        span = self.left_context + self.right_context
        rows = x.shape[0] - span
        if rows <= 0:
            raise ShapeMismatchError(f"window of {x.shape[0]} frames is shorter than the context")
        cache: list[dict[str, np.ndarray]] = []
        taps: dict[str, np.ndarray] = {}
        origin = 0
        step = self.config.subsample
        last = len(self.config.layers) - 1
        for i, layer in enumerate(self.config.layers):
            if i == last:
                # Row r of x is window row origin + r; outputs sit at left_context + 0, 3, ...
                start = self.left_context - origin
                x = x[start : start + rows : step]
                entry = self._final_forward(i, layer, x)
            else:
                entry = self._hidden_forward(i, layer, x)
            cache.append(entry)
            if capture and i == self.config.bottleneck_layer:
                start = self.left_context - origin + layer.offsets[0]
                taps["bottleneck"] = entry["bn"][start : start + rows : step]
            origin += layer.left_context
            x = entry["y"]
            if capture and i == self.config.lower_layers - 1:
                start = self.left_context - origin
                taps["lower"] = x[start : start + rows : step]
        return ForwardResult(x, taps, cache, rows)

    def _hidden_forward(self, i: int, layer: LayerSpec, x: np.ndarray) -> dict[str, np.ndarray]:
        p = self.params
        entry: dict[str, np.ndarray] = {"x": x}
        if layer.kind is LayerKind.TDNNF:
            s1 = _splice(x, layer.offsets)
            bn = s1 @ p[f"{i}.M"].T
            s2 = _splice(bn, layer.bottleneck_offsets)
            u = s2 @ p[f"{i}.A"].T + p[f"{i}.b"]
            entry.update(s1=s1, bn=bn, s2=s2)
        else:
            s = _splice(x, layer.offsets)
            u = s @ p[f"{i}.W"].T + p[f"{i}.b"]
            entry["s1"] = s
        h = np.maximum(u, 0)
        y = p[f"{i}.gamma"] * h + p[f"{i}.beta"]
        if self._has_skip(i, layer):
            left = layer.left_context
            y = y + self.dtype.type(SKIP_SCALE) * x[left : left + y.shape[0]]
        entry.update(u=u, h=h, y=y)
        return entry

    def _final_forward(self, i: int, layer: LayerSpec, x: np.ndarray) -> dict[str, np.ndarray]:
        z = x @ self.params[f"{i}.W"].T + self.params[f"{i}.b"]
        y = log_softmax(z, axis=1).astype(self.dtype) if layer.kind is LayerKind.OUTPUT else z
        return {"x": x, "z": z, "y": y}

    def _has_skip(self, i: int, layer: LayerSpec) -> bool:
        in_dim, out_dim = self._dims[i]
        return layer.kind is LayerKind.TDNNF and layer.skip and in_dim == out_dim

    # -- backward -----------------------------------------------------------
    def backward(self, result: ForwardResult, grad_output: np.ndarray) -> dict[str, np.ndarray]:
        """Parameter gradients of a scalar loss given its gradient w.r.t. the output.

        For an ``output`` layer ``grad_output`` is taken w.r.t. the
        log-softmax values. Frozen layers, and everything below the highest
        frozen layer, get no entry.
        """
        g = np.asarray(grad_output, dtype=self.dtype)
        if g.shape != result.output.shape:
            raise ShapeMismatchError(
                f"gradient shape {g.shape} does not match output {result.output.shape}",
                expected=result.output.shape, actual=g.shape,
            )
        if not result.cache:
            return {}
        grads: dict[str, np.ndarray] = {}
        layers = self.config.layers
        last = len(layers) - 1
        if last in self.frozen:
            return grads

        entry = result.cache[last]
        if layers[last].kind is LayerKind.OUTPUT:
            g = g - np.exp(entry["y"]) * g.sum(axis=1, keepdims=True)
        grads[f"{last}.W"] = g.T @ entry["x"]
        grads[f"{last}.b"] = g.sum(axis=0)
        g_rows = g @ self.params[f"{last}.W"]

        previous = result.cache[last - 1]["y"] if last else None
        if previous is None or (last - 1) in self.frozen:
            return grads
        origin = sum(layer.left_context for layer in layers[:last])
        start = self.left_context - origin
        g = np.zeros_like(previous)
        g[start : start + result.rows : self.config.subsample] = g_rows

        for i in range(last - 1, -1, -1):
            if i in self.frozen:
                break
            need_input = i > 0 and (i - 1) not in self.frozen
            g = self._hidden_backward(i, layers[i], result.cache[i], g, grads, need_input)
            if g is None:
                break
        return grads

    def _hidden_backward(
        self,
        i: int,
        layer: LayerSpec,
        entry: dict[str, np.ndarray],
        g: np.ndarray,
        grads: dict[str, np.ndarray],
        need_input: bool,
    ) -> np.ndarray | None:
        p = self.params
        grads[f"{i}.gamma"] = np.sum(g * entry["h"], axis=0)
        grads[f"{i}.beta"] = g.sum(axis=0)
        g_u = g * p[f"{i}.gamma"] * (entry["u"] > 0)
        grads[f"{i}.b"] = g_u.sum(axis=0)
        x = entry["x"]
        if layer.kind is LayerKind.TDNNF:
            grads[f"{i}.A"] = g_u.T @ entry["s2"]
            g_bn = _unsplice(g_u @ p[f"{i}.A"], layer.bottleneck_offsets, entry["bn"].shape[0])
            grads[f"{i}.M"] = g_bn.T @ entry["s1"]
            if not need_input:
                return None
            g_x = _unsplice(g_bn @ p[f"{i}.M"], layer.offsets, x.shape[0])
        else:
            grads[f"{i}.W"] = g_u.T @ entry["s1"]
            if not need_input:
                return None
            g_x = _unsplice(g_u @ p[f"{i}.W"], layer.offsets, x.shape[0])
        if self._has_skip(i, layer):
            left = layer.left_context
            g_x[left : left + g.shape[0]] += self.dtype.type(SKIP_SCALE) * g
        return g_x

    # -- constraint ---------------------------------------------------------
    def apply_semiorth(self) -> float:
        """Apply one constraint step to every trainable tdnnf factor; return the worst error."""
        worst = 0.0
        for i, layer in enumerate(self.config.layers):
            if layer.kind is LayerKind.TDNNF and i not in self.frozen:
                name = f"{i}.M"
                self.params[name] = semiorth_step(self.params[name])
                worst = max(worst, semiorth_error(self.params[name]))
        return worst


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------
def save_checkpoint(
    path: str | Path, net: Network, *, step: int = 0, extra: Mapping[str, Any] | None = None
) -> None:
    """Write magic + u32 JSON length + JSON metadata + float32 tensors in declaration order."""
    meta = {
        "config": net.config.to_dict(),
        "seed": net.seed,
        "step": step,
        "frozen": sorted(net.frozen),
        "tensors": [[name, list(value.shape)] for name, value in net.params.items()],
        **(extra or {}),
    }
    header = json.dumps(meta, sort_keys=True).encode("utf-8")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for value in net.params.values():
            fh.write(np.ascontiguousarray(value, dtype="<f4").tobytes())


def load_checkpoint(path: str | Path, dtype: Any = np.float32) -> tuple[Network, dict[str, Any]]:
    """Read a checkpoint; returns the network and its metadata."""
    path = Path(path)
    if not path.is_file():
        raise MissingArtifactError(f"checkpoint {path} not found", path, "checkpoint")
    blob = path.read_bytes()
    offset = len(CHECKPOINT_MAGIC) + 4
    if len(blob) < offset or blob[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: bad magic", path, CHECKPOINT_MAGIC)
    (size,) = struct.unpack("<I", blob[len(CHECKPOINT_MAGIC) : offset])
    meta = json.loads(blob[offset : offset + size])
    cursor = offset + size
    params: dict[str, np.ndarray] = {}
    for name, shape in meta["tensors"]:
        count = int(np.prod(shape))
        chunk = blob[cursor : cursor + 4 * count]
        if len(chunk) != 4 * count:
            raise FormatError(f"{path}: truncated tensor {name}", path, CHECKPOINT_MAGIC)
        params[name] = np.frombuffer(chunk, dtype="<f4").reshape(shape)
        cursor += 4 * count
    if cursor != len(blob):
        raise FormatError(f"{path}: trailing bytes after tensors", path, CHECKPOINT_MAGIC)
    net = Network(NetworkConfig.from_dict(meta["config"]), seed=int(meta["seed"]), dtype=dtype,
                  params=params)
    net.frozen = set(meta.get("frozen", []))
    return net, meta
