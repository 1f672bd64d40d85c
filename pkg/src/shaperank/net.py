"""Network architectures, parameters, and forward scoring.

Two architectures are supported.  `full` is a plain fully-connected stack
of affine+tanh layers ending in a single output node.  `conv` starts with
one 3D convolutional layer (per-channel shared mask and bias applied at
every stride position), runs a small fully-connected stage separately for
each channel down to one node, concatenates the channel outputs, and
finishes with a fully-connected merge stage.  tanh is the activation at
every layer including the output, so scores live in (-1, 1).
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .voxel import VoxelGrid, grid_to_input

INIT_STD = 0.1  # weights and biases start from N(0, 0.1^2)

_MAGIC = "SRNET"
_VERSION = "1"


class ModelFormatError(ValueError):
    """Raised for malformed SRNET model files."""


@dataclass(frozen=True)
class ArchitectureSpec:
    kind: str  # "full" | "conv"
    resolution: int
    widths: tuple[int, ...] = ()  # full: s_0 .. s_{n_l}
    channels: int = 0  # conv fields below
    mask: int = 0
    stride: int = 0
    per_channel: tuple[int, ...] = ()  # (d^3, ..., 1) widths of each channel's stage
    merge: tuple[int, ...] = ()  # (channels, ..., 1) widths after concatenation

    def __post_init__(self):
        if self.kind == "full":
            if len(self.widths) < 2:
                raise ValueError("full architecture needs at least 2 layers")
            if self.widths[-1] != 1:
                raise ValueError("final layer width must be 1")
            if any(w < 1 for w in self.widths):
                raise ValueError("layer widths must be positive")
        elif self.kind == "conv":
            r, m, st = self.resolution, self.mask, self.stride
            if self.channels < 1 or m < 1 or st < 1:
                raise ValueError("conv needs positive channels, mask and stride")
            if m > r:
                raise ValueError(f"mask {m} larger than resolution {r}")
            if (r - m) % st != 0:
                raise ValueError(f"conv geometry invalid: (resolution - mask) = {r - m} "
                                 f"is not divisible by stride {st}")
            d = self.conv_side
            if d < 1:
                raise ValueError("conv output side must be >= 1")
            if not self.per_channel or self.per_channel[0] != d ** 3:
                raise ValueError(f"per-channel stage must start at {d ** 3} nodes")
            if self.per_channel[-1] != 1:
                raise ValueError("per-channel stage must end at 1 node")
            if not self.merge or self.merge[0] != self.channels:
                raise ValueError(f"merge stage must start at {self.channels} nodes")
            if self.merge[-1] != 1:
                raise ValueError("merge stage must end at 1 node")
        else:
            raise ValueError(f"unknown architecture kind {self.kind!r}")

    @property
    def conv_side(self) -> int:
        return (self.resolution - self.mask) // self.stride + 1

    @property
    def input_size(self) -> int:
        return self.widths[0] if self.kind == "full" else self.resolution ** 3

    @property
    def n_layers(self) -> int:
        """Number of weighted layers (the output layer's index n_l)."""
        if self.kind == "full":
            return len(self.widths) - 1
        return 1 + (len(self.per_channel) - 1) + (len(self.merge) - 1)

    def layer_width(self, layer: int) -> int:
        """Total node count of a layer, 0-based up to n_layers."""
        if self.kind == "full":
            return self.widths[layer]
        if layer == 0:
            return self.resolution ** 3
        if layer == 1:
            return self.channels * self.conv_side ** 3
        pc_top = 1 + (len(self.per_channel) - 1)
        if layer <= pc_top:
            return self.channels * self.per_channel[layer - 1]
        return self.merge[layer - pc_top]

    def describe(self) -> str:
        if self.kind == "full":
            return " ".join(["full", str(self.resolution)] + [str(w) for w in self.widths])
        return " ".join(
            ["conv", str(self.resolution), str(self.channels), str(self.mask),
             str(self.stride), "pc"] + [str(w) for w in self.per_channel]
            + ["merge"] + [str(w) for w in self.merge])


def parse_architecture(text: str) -> ArchitectureSpec:
    parts = text.split()
    try:
        if parts[0] == "full":
            return ArchitectureSpec(kind="full", resolution=int(parts[1]),
                                    widths=tuple(int(w) for w in parts[2:]))
        if parts[0] == "conv":
            pc_at = parts.index("pc")
            merge_at = parts.index("merge")
            return ArchitectureSpec(
                kind="conv", resolution=int(parts[1]), channels=int(parts[2]),
                mask=int(parts[3]), stride=int(parts[4]),
                per_channel=tuple(int(w) for w in parts[pc_at + 1:merge_at]),
                merge=tuple(int(w) for w in parts[merge_at + 1:]))
    except (IndexError, ValueError) as exc:
        raise ModelFormatError(f"bad architecture descriptor {text!r}: {exc}") from None
    raise ModelFormatError(f"bad architecture descriptor {text!r}")


def build_architecture(kind: str, resolution: int, *,
                       widths: tuple[int, ...] | None = None,
                       channels: int | None = None,
                       mask: int | None = None,
                       stride: int | None = None,
                       per_channel: tuple[int, ...] | None = None,
                       merge: tuple[int, ...] | None = None) -> ArchitectureSpec:
    """Default wiring for each kind, with every knob overridable.

    full: [R^3, 200, 200, 50, 1].  conv at 45: 200 channels, mask 9,
    stride 6 (7^3 positions); at 60: mask 12, stride 8.  Per-channel stages
    run d^3 -> 50 -> 1 and the merge runs channels -> 50 -> 1.
    """
    if resolution < 2:
        raise ValueError(f"resolution must be >= 2, got {resolution}")
    if kind == "full":
        w = tuple(widths) if widths else (resolution ** 3, 200, 200, 50, 1)
        return ArchitectureSpec(kind="full", resolution=resolution, widths=w)
    if kind == "conv":
        if mask is None or stride is None:
            if resolution == 60:
                mask, stride = 12, 8
            elif (resolution - 9) % 6 == 0:
                mask, stride = 9, 6  # the reference 45-cube geometry
            else:
                raise ValueError(f"no default conv geometry for resolution {resolution}; "
                                 "pass mask= and stride=")
        channels = 200 if channels is None else channels
        d = (resolution - mask) // stride + 1 if (resolution - mask) % stride == 0 else -1
        if per_channel is None:
            per_channel = (d ** 3, 50, 1) if d > 0 else ()
        if merge is None:
            merge = (channels, 50, 1)
        return ArchitectureSpec(kind="conv", resolution=resolution, channels=channels,
                                mask=mask, stride=stride,
                                per_channel=tuple(per_channel), merge=tuple(merge))
    raise ValueError(f"unknown architecture kind {kind!r}")


@dataclass
class NetworkParams:
    """All weights and biases, one tensor pair per weighted layer.

    full nets: weights[l] is (s_{l+1}, s_l), biases[l] is (s_{l+1},).
    conv nets: weights[0] is the (channels, mask^3) bank of shared masks and
    biases[0] the (channels,) bank of shared biases; per-channel stages are
    (channels, out, in) / (channels, out); merge stages are (out, in) / (out,).
    """

    arch: ArchitectureSpec
    weights: list[np.ndarray] = field(default_factory=list)
    biases: list[np.ndarray] = field(default_factory=list)

    def tensor_items(self) -> list[tuple[str, np.ndarray]]:
        """(name, array) pairs in a stable order, for files and gradchecks."""
        return list(zip(_tensor_names(self.arch),
                        [t for pair in zip(self.weights, self.biases) for t in pair]))

    def copy(self) -> "NetworkParams":
        return NetworkParams(self.arch, [w.copy() for w in self.weights],
                             [b.copy() for b in self.biases])

    def weight_sq_norm(self) -> float:
        return float(sum(np.vdot(w, w) for w in self.weights))


@dataclass
class ForwardTrace:
    """Per-layer pre-activations and activations of one forward pass.

    activations[0] is the input; activations[l] = tanh(preacts[l-1]) for the
    weighted layers.  y is the single output node's activation.
    """

    activations: list[np.ndarray]
    preacts: list[np.ndarray]
    y: float


def _tensor_shapes(arch: ArchitectureSpec) -> list[tuple[int, ...]]:
    shapes: list[tuple[int, ...]] = []
    if arch.kind == "full":
        for l in range(1, len(arch.widths)):
            shapes.append((arch.widths[l], arch.widths[l - 1]))
            shapes.append((arch.widths[l],))
    else:
        shapes.append((arch.channels, arch.mask ** 3))
        shapes.append((arch.channels,))
        pc = arch.per_channel
        for j in range(1, len(pc)):
            shapes.append((arch.channels, pc[j], pc[j - 1]))
            shapes.append((arch.channels, pc[j]))
        mg = arch.merge
        for j in range(1, len(mg)):
            shapes.append((mg[j], mg[j - 1]))
            shapes.append((mg[j],))
    return shapes


def _tensor_names(arch: ArchitectureSpec) -> list[str]:
    names: list[str] = []
    if arch.kind == "full":
        for l in range(1, len(arch.widths)):
            names += [f"W{l}", f"b{l}"]
    else:
        names += ["convW", "convb"]
        for j in range(1, len(arch.per_channel)):
            names += [f"pcW{j}", f"pcb{j}"]
        for j in range(1, len(arch.merge)):
            names += [f"mergeW{j}", f"mergeb{j}"]
    return names


def n_params(arch: ArchitectureSpec) -> int:
    return sum(int(np.prod(s)) for s in _tensor_shapes(arch))


def init_params(arch: ArchitectureSpec, seed: int) -> NetworkParams:
    """Draw every weight and bias from N(0, 0.1^2), deterministically."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for i, shape in enumerate(_tensor_shapes(arch)):
        t = rng.normal(0.0, INIT_STD, size=shape)
        (weights if i % 2 == 0 else biases).append(t)
    return NetworkParams(arch=arch, weights=weights, biases=biases)


_patch_cache: dict[tuple[int, int, int], np.ndarray] = {}


def conv_patch_indices(resolution: int, mask: int, stride: int) -> np.ndarray:
    """Flat input indices of each conv patch: (d^3, m^3), both x-fastest."""
    key = (resolution, mask, stride)
    cached = _patch_cache.get(key)
    if cached is not None:
        return cached
    r, m, st = resolution, mask, stride
    d = (r - m) // st + 1
    pos = np.arange(d) * st
    # x-fastest flattening of positions and of in-mask offsets
    px, py, pz = np.meshgrid(pos, pos, pos, indexing="ij")
    p = np.stack([px.ravel(order="F"), py.ravel(order="F"), pz.ravel(order="F")], axis=1)
    off = np.arange(m)
    ox, oy, oz = np.meshgrid(off, off, off, indexing="ij")
    o = np.stack([ox.ravel(order="F"), oy.ravel(order="F"), oz.ravel(order="F")], axis=1)
    cells = p[:, None, :] + o[None, :, :]  # (d^3, m^3, 3)
    flat = cells[..., 0] + r * cells[..., 1] + r * r * cells[..., 2]
    flat = np.ascontiguousarray(flat, dtype=np.int64)
    _patch_cache[key] = flat
    return flat


def forward(params: NetworkParams, x: np.ndarray) -> ForwardTrace:
    """Affine-then-tanh through every layer; returns the full trace."""
    arch = params.arch
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.shape[0] != arch.input_size:
        raise ValueError(f"input length {x.shape[0]} does not match "
                         f"architecture input size {arch.input_size}")
    activations: list[np.ndarray] = [x]
    preacts: list[np.ndarray] = []

    if arch.kind == "full":
        a = x
        for w, b in zip(params.weights, params.biases):
            z = w @ a + b
            a = np.tanh(z)
            preacts.append(z)
            activations.append(a)
        return ForwardTrace(activations, preacts, float(a[0]))

    # conv
    patches = x[conv_patch_indices(arch.resolution, arch.mask, arch.stride)]  # (d^3, m^3)
    z = patches @ params.weights[0].T + params.biases[0]  # (d^3, C)
    z = np.ascontiguousarray(z.T)  # (C, d^3)
    a = np.tanh(z)
    preacts.append(z)
    activations.append(a)

    n_pc = len(arch.per_channel) - 1
    for j in range(n_pc):
        w, b = params.weights[1 + j], params.biases[1 + j]
        z = np.einsum("coi,ci->co", w, a) + b  # (C, out)
        a = np.tanh(z)
        preacts.append(z)
        activations.append(a)

    a = a[:, 0]  # concatenate the per-channel scalars
    for j in range(len(arch.merge) - 1):
        w, b = params.weights[1 + n_pc + j], params.biases[1 + n_pc + j]
        z = w @ a + b
        a = np.tanh(z)
        preacts.append(z)
        activations.append(a)

    return ForwardTrace(activations, preacts, float(a[0]))


def forward_batch(params: NetworkParams, xs: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
    """Forward many inputs at once: (per-layer batched activations, y vector).

    activations[0] is xs itself; layer arrays carry the batch on axis 0.
    Shapes mirror forward(): full layers are (n, s_l); the conv layer is
    (n, C, d^3) and per-channel stages (n, C, w).
    """
    arch = params.arch
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim != 2 or xs.shape[1] != arch.input_size:
        raise ValueError(f"batch shape {xs.shape} does not match input size "
                         f"{arch.input_size}")
    acts: list[np.ndarray] = [xs]

    if arch.kind == "full":
        a = xs
        for w, b in zip(params.weights, params.biases):
            a = np.tanh(a @ w.T + b)
            acts.append(a)
        return acts, a[:, 0].copy()

    patches = xs[:, conv_patch_indices(arch.resolution, arch.mask, arch.stride)]  # (n, d^3, m^3)
    z = patches @ params.weights[0].T + params.biases[0]  # (n, d^3, C)
    a = np.tanh(np.swapaxes(z, 1, 2))  # (n, C, d^3)
    acts.append(a)

    n_pc = len(arch.per_channel) - 1
    for j in range(n_pc):
        w, b = params.weights[1 + j], params.biases[1 + j]
        a = np.tanh(np.einsum("coi,nci->nco", w, a) + b)
        acts.append(a)

    a = a[:, :, 0]  # (n, C)
    for j in range(len(arch.merge) - 1):
        w, b = params.weights[1 + n_pc + j], params.biases[1 + n_pc + j]
        a = np.tanh(a @ w.T + b)
        acts.append(a)

    return acts, a[:, 0].copy()


def score(params: NetworkParams, grid: VoxelGrid) -> float:
    """Aesthetics score of one voxelized shape (a single forward pass)."""
    if grid.resolution != params.arch.resolution:
        raise ValueError(f"grid resolution {grid.resolution} does not match "
                         f"architecture resolution {params.arch.resolution}")
    return forward(params, grid_to_input(grid)).y


def score_many(params: NetworkParams, grids: list[VoxelGrid]) -> np.ndarray:
    for g in grids:
        if g.resolution != params.arch.resolution:
            raise ValueError(f"grid {g.shape_id!r} resolution {g.resolution} does not "
                             f"match architecture resolution {params.arch.resolution}")
    if not grids:
        return np.zeros(0)
    xs = np.stack([grid_to_input(g) for g in grids])
    _, ys = forward_batch(params, xs)
    return ys


def save_params(params: NetworkParams, path: str | os.PathLike) -> None:
    """Text model file; values at 17 significant digits round-trip exactly."""
    lines = [f"{_MAGIC} {_VERSION}", params.arch.describe()]
    for name, tensor in params.tensor_items():
        dims = " ".join(str(d) for d in tensor.shape)
        values = " ".join(f"{v:.17g}" for v in tensor.ravel())
        lines.append(f"{name} {tensor.ndim} {dims} {values}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def load_params(path: str | os.PathLike) -> NetworkParams:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != f"{_MAGIC} {_VERSION}":
            raise ModelFormatError(f"{path}: bad header {header!r}")
        arch = parse_architecture(fh.readline().strip())
        expected = list(zip(_tensor_names(arch), _tensor_shapes(arch)))
        weights, biases = [], []
        for i, (name, shape) in enumerate(expected):
            line = fh.readline()
            if not line:
                raise ModelFormatError(f"{path}: truncated file, missing tensor {name}")
            parts = line.split()
            if not parts or parts[0] != name:
                raise ModelFormatError(f"{path}: expected tensor {name}, "
                                       f"got {parts[0] if parts else '<empty>'!r}")
            try:
                ndim = int(parts[1])
                dims = tuple(int(d) for d in parts[2:2 + ndim])
                values = np.array([float(v) for v in parts[2 + ndim:]], dtype=np.float64)
            except (ValueError, IndexError) as exc:
                raise ModelFormatError(f"{path}: bad tensor line for {name}: {exc}") from None
            if dims != shape:
                raise ModelFormatError(f"{path}: tensor {name} has shape {dims}, "
                                       f"expected {shape}")
            if values.size != int(np.prod(shape)):
                raise ModelFormatError(f"{path}: tensor {name} has {values.size} values, "
                                       f"expected {int(np.prod(shape))}")
            tensor = values.reshape(shape)
            (weights if i % 2 == 0 else biases).append(tensor)
    return NetworkParams(arch=arch, weights=weights, biases=biases)
