"""Graph-attention forecasting network and per-tool graph extraction.

The model is a compact multivariate time-series learner shared by the
whole fleet: per-sensor temporal convolution, one feature-oriented graph
attention layer across sensors, a GRU over the window, and dense heads
that forecast the next run and (for the reconstruction-capable variant)
reconstruct the window. Two variants share the code path:

* ``mtad_gat``: attention inputs are the transformed conv features;
  forecast plus reconstruction loss.
* ``gdn``: every sensor additionally owns a learned embedding vector that
  is added to its attention input, and the model is forecast-only (its
  reconstruction is defined as the input window, so that loss term is 0).

Training runs plain SGD in float64 with a hand-rolled reverse-mode tape
(:mod:`tttm.autodiff`), which keeps two runs with the same seed bitwise
identical. After training, each tool gets a sensor graph: per window,
nodes are connected when their attention-layer output features have
cosine similarity at or above a threshold, and the tool's adjacency is
the mean of those binary window graphs.

Heterogeneous fleets are handled by building the model over the union of
sensor ids; a tool lacking a sensor contributes zero rows for it, and its
graph is indexed by the same shared sensor list as everyone else's.
"""
from __future__ import annotations

import csv
import json
import struct
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .errors import (
    InsufficientDataError,
    NumericError,
    SchemaError,
    ShapeError,
    TrainingDivergedError,
)
from .fleet import FleetDataset, TsumMatrix, union_sensors

__all__ = [
    "GnnHyperParams",
    "ModelParams",
    "WindowBatch",
    "WindowSlices",
    "ToolGraph",
    "TrainResult",
    "window_slice",
    "lift_to_sensors",
    "conv_features",
    "gat_forward",
    "model_forward",
    "loss",
    "init_params",
    "train",
    "extract_graph",
    "window_node_features",
    "save_model",
    "load_model",
    "save_graph_csv",
    "load_graph_csv",
]

ARCHS = ("mtad_gat", "gdn")

#: additive mask that removes self-attention before the row softmax
_MASK = -1e30

_MODEL_MAGIC = b"TTTMMODL"
_MODEL_VERSION = 1


@dataclass(frozen=True)
class GnnHyperParams:
    """Architecture and training knobs, defaulting to the production scale."""

    arch: str = "mtad_gat"
    omega: int = 7  # window length
    kernel: int = 3  # conv kernel size, odd
    feat_dim: int = 50  # attention feature width z
    gru_layers: int = 1
    gru_units: int = 50
    head_units: int = 50
    dropout: float = 0.2  # on attention weights, training only
    leaky_slope: float = 0.2
    learning_rate: float = 1e-3
    epochs: int = 1000
    batch_size: int = 16
    seed: int = 0
    gap_factor: float = 3.0  # timestamp gap tolerance, in median spacings

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise SchemaError(f"unknown arch {self.arch!r}, expected one of {ARCHS}")
        if self.omega < 2:
            raise SchemaError(f"window length must be >= 2, got {self.omega}")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise SchemaError(f"conv kernel must be odd and positive, got {self.kernel}")
        if not (0.0 <= self.dropout < 1.0):
            raise SchemaError(f"dropout must be in [0, 1), got {self.dropout}")
        for name in ("feat_dim", "gru_layers", "gru_units", "head_units", "batch_size"):
            if getattr(self, name) < 1:
                raise SchemaError(f"{name} must be >= 1")
        if self.learning_rate <= 0 or self.epochs < 1:
            raise SchemaError("learning_rate must be > 0 and epochs >= 1")

    @classmethod
    def defaults(cls, arch: str = "mtad_gat", **overrides) -> "GnnHyperParams":
        """Published defaults per variant (the embedding variant widens z)."""
        base: dict = {"arch": arch}
        if arch == "gdn":
            base["feat_dim"] = 128
        base.update(overrides)
        return cls(**base)


@dataclass
class ModelParams:
    """Trained (or freshly initialized) parameters plus their sensor index."""

    arch: str
    sensors: list[str]
    arrays: dict[str, np.ndarray]
    hyper: GnnHyperParams


@dataclass(frozen=True)
class WindowBatch:
    """One non-overlapping window of a tool's matrix.

    ``target`` is the column right after the window when it exists and is
    not separated by a timestamp gap; windows without one are excluded
    from the forecast loss term.
    """

    tool: str
    index: int
    start: int
    values: np.ndarray  # (N, omega)
    target: np.ndarray | None


@dataclass
class WindowSlices:
    """Windowing outcome, with the bookkeeping of what was discarded."""

    windows: list[WindowBatch]
    dropped_gap: int = 0
    dropped_tail: int = 0


@dataclass
class ToolGraph:
    """Mean binary sensor graph of one tool on the shared sensor index."""

    tool: str
    sensors: list[str]
    adjacency: np.ndarray  # (N, N), symmetric, zero diagonal, entries in [0, 1]
    window_count: int
    flags: list[str] = field(default_factory=list)


@dataclass
class TrainResult:
    params: ModelParams
    loss_trace: list[float]


# ---------------------------------------------------------------------------
# windowing


def _gap_limit(timestamps: np.ndarray, factor: float) -> float:
    gaps = np.diff(np.asarray(timestamps, dtype=float))
    if gaps.size == 0:
        return np.inf
    med = float(np.median(gaps))
    return factor * med if med > 0 else np.inf


def window_slice(
    tool: TsumMatrix, omega: int, gap_factor: float = 3.0
) -> WindowSlices:
    """Cut a tool's matrix into non-overlapping windows of length ``omega``.

    The remainder columns at the end are dropped, as is any window whose
    internal timestamp gaps exceed ``gap_factor`` median spacings (those
    windows would straddle missing data).
    """
    if omega < 2:
        raise ShapeError(f"window length must be >= 2, got {omega}")
    p = tool.n_points
    out = WindowSlices(windows=[], dropped_tail=p % omega)
    if p < omega:
        out.dropped_tail = p
        return out
    limit = _gap_limit(tool.timestamps, gap_factor)
    gaps = np.diff(tool.timestamps.astype(float))
    for w, start in enumerate(range(0, p - omega + 1, omega)):
        if np.any(gaps[start : start + omega - 1] > limit):
            out.dropped_gap += 1
            continue
        target = None
        nxt = start + omega
        if nxt < p and gaps[nxt - 1] <= limit:
            target = tool.values[:, nxt].copy()
        out.windows.append(
            WindowBatch(
                tool=tool.tool,
                index=w,
                start=start,
                values=tool.values[:, start : start + omega].copy(),
                target=target,
            )
        )
    return out


def lift_to_sensors(tool: TsumMatrix, sensors: list[str]) -> TsumMatrix:
    """Re-index a tool's matrix onto a shared sensor list, zero-filling gaps."""
    missing = set(tool.sensors) - set(sensors)
    if missing:
        raise ShapeError(f"tool {tool.tool} has sensors outside the shared index: {sorted(missing)}")
    values = np.zeros((len(sensors), tool.n_points))
    for i, sensor in enumerate(sensors):
        if sensor in tool.sensors:
            values[i] = tool.row(sensor)
    return replace(tool, sensors=list(sensors), values=values)


# ---------------------------------------------------------------------------
# parameters


def _param_shapes(hyper: GnnHyperParams, n_sensors: int) -> list[tuple[str, tuple, int]]:
    """(name, shape, fan_in) in the fixed creation order used by the seed."""
    n, w = n_sensors, hyper.omega
    z, hid, head = hyper.feat_dim, hyper.gru_units, hyper.head_units
    shapes: list[tuple[str, tuple, int]] = [
        ("conv_kernel", (hyper.kernel,), hyper.kernel),
        ("att_w", (z, w), w),
        ("att_a", (2 * z,), 2 * z),
    ]
    if hyper.arch == "gdn":
        shapes.append(("embed", (n, z), z))
    in_dim = 2 * n
    for layer in range(hyper.gru_layers):
        shapes += [
            (f"gru{layer}_wi", (3 * hid, in_dim), in_dim),
            (f"gru{layer}_wh", (3 * hid, hid), hid),
            (f"gru{layer}_bi", (3 * hid,), in_dim),
            (f"gru{layer}_bh", (3 * hid,), hid),
        ]
        in_dim = hid
    shapes += [
        ("fc_w1", (head, hid), hid),
        ("fc_b1", (head,), hid),
        ("fc_w2", (n, head), head),
        ("fc_b2", (n,), head),
    ]
    if hyper.arch == "mtad_gat":
        shapes += [
            ("rec_w1", (head, hid), hid),
            ("rec_b1", (head,), hid),
            ("rec_w2", (n * w, head), head),
            ("rec_b2", (n * w,), head),
        ]
    return shapes


def init_params(
    hyper: GnnHyperParams, sensors: list[str], rng: np.random.Generator | None = None
) -> ModelParams:
    """Seeded uniform init, bound +-1/sqrt(fan_in), in fixed parameter order."""
    if rng is None:
        rng = np.random.default_rng(hyper.seed)
    arrays: dict[str, np.ndarray] = {}
    for name, shape, fan_in in _param_shapes(hyper, len(sensors)):
        bound = 1.0 / np.sqrt(fan_in)
        arrays[name] = rng.uniform(-bound, bound, size=shape)
    return ModelParams(arch=hyper.arch, sensors=list(sensors), arrays=arrays, hyper=hyper)


def _leaves(params: ModelParams, trainable: bool = True) -> dict[str, ad.Tensor]:
    wrap = ad.leaf if trainable else ad.const
    return {name: wrap(arr) for name, arr in params.arrays.items()}


# ---------------------------------------------------------------------------
# forward graph


def _conv_columns(values: np.ndarray, kernel_size: int) -> np.ndarray:
    """Stacked shifted copies so the conv becomes one (N*w, k) matmul."""
    n, w = values.shape
    pad = (kernel_size - 1) // 2
    padded = np.pad(values, ((0, 0), (pad, pad)), mode="edge")
    cols = np.empty((n * w, kernel_size))
    for m in range(kernel_size):
        cols[:, m] = padded[:, m : m + w].ravel()
    return cols


def conv_features(values: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Per-sensor temporal convolution with edge-replicated same padding.

    One shared kernel slides along each row; the output keeps the window
    shape, so features stay aligned with timesteps.
    """
    values = np.asarray(values, dtype=float)
    kernel = np.asarray(kernel, dtype=float)
    if values.ndim != 2:
        raise ShapeError(f"window must be 2-D, got shape {values.shape}")
    if kernel.ndim != 1 or kernel.size % 2 == 0:
        raise ShapeError(f"kernel must be 1-D with odd length, got shape {kernel.shape}")
    cols = _conv_columns(values, kernel.size)
    return (cols @ kernel).reshape(values.shape)


def _attention_block(
    leaves: dict[str, ad.Tensor],
    feats: ad.Tensor,
    hyper: GnnHyperParams,
    drop_mask: np.ndarray | None = None,
) -> tuple[ad.Tensor, ad.Tensor, ad.Tensor]:
    """Feature-oriented attention over sensors: (attention, hidden, attended).

    Energies come from a shared linear transform of each node's features
    (the embedding variant adds a per-sensor learned vector first), a
    leaky-relu scoring vector, and a row softmax that excludes self
    attention. ``hidden`` is the tanh of attention-combined transformed
    features; ``attended`` applies the same weights to the raw conv
    features so the recurrent stage can consume them per timestep.
    """
    n, w = feats.shape
    nodes = feats @ ad.transpose(leaves["att_w"])  # (N, z)
    if hyper.arch == "gdn":
        if leaves["embed"].shape[0] != n:
            raise ShapeError(
                f"{n} feature rows vs {leaves['embed'].shape[0]} sensor embeddings"
            )
        nodes = nodes + leaves["embed"]

    if n < 2:
        # a single sensor has no one to attend to
        return (
            ad.const(np.zeros((n, n))),
            ad.const(np.zeros((n, hyper.feat_dim))),
            ad.const(np.zeros((n, w))),
        )

    a_col = ad.reshape(leaves["att_a"], (2 * hyper.feat_dim, 1))
    s_src = nodes @ a_col[: hyper.feat_dim]  # (N, 1)
    s_dst = nodes @ a_col[hyper.feat_dim :]
    energy = ad.leaky_relu(s_src + ad.transpose(s_dst), hyper.leaky_slope)
    mask = np.zeros((n, n))
    np.fill_diagonal(mask, _MASK)
    attention = ad.softmax_rows(energy + ad.const(mask))
    if drop_mask is not None:
        attention = attention * ad.const(drop_mask)
    hidden = ad.tanh(attention @ nodes)  # (N, z)
    attended = attention @ feats  # (N, w)
    return attention, hidden, attended


def _forward(
    leaves: dict[str, ad.Tensor],
    values: np.ndarray,
    hyper: GnnHyperParams,
    drop_mask: np.ndarray | None = None,
):
    """Build the tape for one window; returns the named intermediate tensors."""
    n, w = values.shape
    if w != hyper.omega:
        raise ShapeError(f"window length {w} != omega {hyper.omega}")

    kern = ad.reshape(leaves["conv_kernel"], (hyper.kernel, 1))
    cols = ad.const(_conv_columns(values, hyper.kernel))
    feats = ad.reshape(cols @ kern, (n, w))  # (N, w)

    attention, hidden, attended = _attention_block(leaves, feats, hyper, drop_mask)

    hid_units = hyper.gru_units
    states = [ad.const(np.zeros((hid_units, 1))) for _ in range(hyper.gru_layers)]
    for t in range(w):
        inp = ad.concat([feats[:, t : t + 1], attended[:, t : t + 1]], axis=0)
        for layer in range(hyper.gru_layers):
            wi, wh = leaves[f"gru{layer}_wi"], leaves[f"gru{layer}_wh"]
            bi = ad.reshape(leaves[f"gru{layer}_bi"], (3 * hid_units, 1))
            bh = ad.reshape(leaves[f"gru{layer}_bh"], (3 * hid_units, 1))
            gi = wi @ inp + bi
            gh = wh @ states[layer] + bh
            r = ad.sigmoid(gi[:hid_units] + gh[:hid_units])
            znew = ad.sigmoid(
                gi[hid_units : 2 * hid_units] + gh[hid_units : 2 * hid_units]
            )
            cand = ad.tanh(gi[2 * hid_units :] + r * gh[2 * hid_units :])
            states[layer] = (1.0 - znew) * cand + znew * states[layer]
            inp = states[layer]
    final = states[-1]  # (H, 1)

    fc_hid = ad.tanh(leaves["fc_w1"] @ final + ad.reshape(leaves["fc_b1"], (-1, 1)))
    forecast = leaves["fc_w2"] @ fc_hid + ad.reshape(leaves["fc_b2"], (-1, 1))  # (N, 1)

    if hyper.arch == "mtad_gat":
        rec_hid = ad.tanh(leaves["rec_w1"] @ final + ad.reshape(leaves["rec_b1"], (-1, 1)))
        recon_flat = leaves["rec_w2"] @ rec_hid + ad.reshape(leaves["rec_b2"], (-1, 1))
        recon = ad.reshape(recon_flat, (n, w))
    else:
        recon = ad.const(values)  # defined as the input; loss term is zero

    return {
        "features": feats,
        "attention": attention,
        "hidden": hidden,
        "forecast": forecast,
        "recon": recon,
    }


def gat_forward(
    features: np.ndarray, params: ModelParams
) -> tuple[np.ndarray, np.ndarray]:
    """Attention layer alone: (node features H, attention weights).

    For two or more sensors each attention row sums to 1 over the other
    sensors; a lone sensor gets zero features and zero weights.
    """
    features = np.asarray(features, dtype=float)
    hyper = params.hyper
    if features.ndim != 2 or features.shape[1] != hyper.omega:
        raise ShapeError(f"features must be (N, {hyper.omega}), got {features.shape}")
    leaves = _leaves(params, trainable=False)
    attention, hidden, _ = _attention_block(leaves, ad.const(features), hyper)
    return hidden.value, attention.value


def model_forward(
    window: np.ndarray, params: ModelParams
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Full forward pass in eval mode: (forecast, reconstruction, node features)."""
    values = np.asarray(window, dtype=float)
    named = _forward(_leaves(params, trainable=False), values, params.hyper)
    return (
        named["forecast"].value[:, 0],
        named["recon"].value,
        named["hidden"].value,
    )


def loss(
    forecast: np.ndarray,
    recon: np.ndarray,
    window: np.ndarray,
    target: np.ndarray | None,
) -> float:
    """Mean squared forecast error plus mean squared reconstruction error."""
    total = 0.0
    if target is not None:
        total += float(np.mean((np.asarray(forecast) - np.asarray(target)) ** 2))
    total += float(np.mean((np.asarray(recon) - np.asarray(window)) ** 2))
    return total


# ---------------------------------------------------------------------------
# training


def _batch_loss(
    leaves: dict[str, ad.Tensor],
    batch: list[WindowBatch],
    hyper: GnnHyperParams,
    rng: np.random.Generator | None,
) -> ad.Tensor:
    """Tape for one minibatch: mean recon MSE plus mean forecast MSE.

    Windows without a successor stay in the reconstruction average but
    are excluded from the forecast average. ``rng`` enables attention
    dropout (training mode); pass None for eval-mode loss.
    """
    recon_terms: list[ad.Tensor] = []
    forecast_terms: list[ad.Tensor] = []
    keep = 1.0 - hyper.dropout
    for win in batch:
        n = win.values.shape[0]
        drop_mask = None
        if rng is not None and hyper.dropout > 0 and n >= 2:
            drop_mask = (rng.random((n, n)) < keep).astype(float) / keep
        named = _forward(leaves, win.values, hyper, drop_mask=drop_mask)
        if hyper.arch == "mtad_gat":
            diff = named["recon"] - ad.const(win.values)
            recon_terms.append(ad.mean_all(ad.square(diff)))
        if win.target is not None:
            diff = named["forecast"] - ad.const(win.target.reshape(-1, 1))
            forecast_terms.append(ad.mean_all(ad.square(diff)))

    total: ad.Tensor = ad.const(0.0)
    if recon_terms:
        acc = recon_terms[0]
        for term in recon_terms[1:]:
            acc = acc + term
        total = total + acc / ad.const(float(len(batch)))
    if forecast_terms:
        acc = forecast_terms[0]
        for term in forecast_terms[1:]:
            acc = acc + term
        total = total + acc / ad.const(float(len(forecast_terms)))
    return total


def fleet_windows(fleet: FleetDataset, hyper: GnnHyperParams) -> tuple[list[str], WindowSlices]:
    """Window every tool on the shared sensor index; order is tool order."""
    sensors = union_sensors(fleet)
    merged = WindowSlices(windows=[])
    for tool in fleet.tools:
        lifted = lift_to_sensors(tool, sensors)
        sliced = window_slice(lifted, hyper.omega, hyper.gap_factor)
        merged.windows.extend(sliced.windows)
        merged.dropped_gap += sliced.dropped_gap
        merged.dropped_tail += sliced.dropped_tail
    return sensors, merged


def train(fleet: FleetDataset, hyper: GnnHyperParams) -> TrainResult:
    """SGD training over all tools' windows; bitwise reproducible per seed.

    Raises :class:`InsufficientDataError` when the fleet yields fewer
    windows than one batch, and :class:`TrainingDivergedError` the moment
    the epoch loss stops being finite.
    """
    sensors, sliced = fleet_windows(fleet, hyper)
    windows = sliced.windows
    if len(windows) < hyper.batch_size:
        raise InsufficientDataError(
            f"{len(windows)} windows but batch size {hyper.batch_size}"
        )
    rng = np.random.default_rng(hyper.seed)
    params = init_params(hyper, sensors, rng)
    trace: list[float] = []
    lr = hyper.learning_rate
    for epoch in range(hyper.epochs):
        order = rng.permutation(len(windows))
        losses = []
        for lo in range(0, len(order), hyper.batch_size):
            chunk = [windows[i] for i in order[lo : lo + hyper.batch_size]]
            leaves = _leaves(params)
            total = _batch_loss(leaves, chunk, hyper, rng)
            losses.append(float(total.value))
            if not total.needs_grad:
                continue  # batch contributed no trainable loss term
            ad.backward(total)
            for name, tensor in leaves.items():
                if tensor.grad is not None:
                    params.arrays[name] = params.arrays[name] - lr * tensor.grad
        epoch_loss = float(np.mean(losses))
        if not np.isfinite(epoch_loss):
            raise TrainingDivergedError(epoch, epoch_loss)
        trace.append(epoch_loss)
    return TrainResult(params=params, loss_trace=trace)


# ---------------------------------------------------------------------------
# graph extraction


def _cosine_matrix(h: np.ndarray) -> tuple[np.ndarray, bool]:
    """Pairwise cosine similarity of rows; zero rows yield zero similarity."""
    norms = np.linalg.norm(h, axis=1)
    sim = h @ h.T
    sim = (sim + sim.T) / 2.0  # enforce exact symmetry
    denom = np.outer(norms, norms)
    has_zero = bool(np.any(norms == 0))
    out = np.zeros_like(sim)
    nz = denom > 0
    out[nz] = sim[nz] / denom[nz]
    return out, has_zero


def window_node_features(tool: TsumMatrix, params: ModelParams) -> list[np.ndarray]:
    """Eval-mode attention output features per window, on the shared index."""
    lifted = lift_to_sensors(tool, params.sensors)
    sliced = window_slice(lifted, params.hyper.omega, params.hyper.gap_factor)
    leaves = _leaves(params, trainable=False)
    feats = []
    for win in sliced.windows:
        named = _forward(leaves, win.values, params.hyper)
        feats.append(named["hidden"].value)
    return feats


def extract_graph(
    tool: TsumMatrix,
    params: ModelParams,
    tau_g: float,
    dropout_rng: np.random.Generator | None = None,
) -> ToolGraph:
    """Mean thresholded cosine-similarity graph over a tool's windows.

    Per window, sensors i and j (i != j) are connected when their
    attention-output features have cosine similarity >= ``tau_g``; the
    adjacency is the mean of those binary graphs, so every entry is the
    fraction of windows exhibiting the edge. ``dropout_rng`` re-enables
    attention dropout during extraction for resampling studies.
    """
    if not (-1.0 <= tau_g <= 1.0):
        raise ValueError(f"tau_g must be within [-1, 1], got {tau_g}")
    hyper = params.hyper
    lifted = lift_to_sensors(tool, params.sensors)
    sliced = window_slice(lifted, hyper.omega, hyper.gap_factor)
    n = len(params.sensors)
    flags: list[str] = []
    if not sliced.windows:
        return ToolGraph(
            tool=tool.tool,
            sensors=list(params.sensors),
            adjacency=np.zeros((n, n)),
            window_count=0,
            flags=["no_windows"],
        )
    leaves = _leaves(params, trainable=False)
    keep = 1.0 - hyper.dropout
    acc = np.zeros((n, n))
    saw_zero_feature = False
    for win in sliced.windows:
        drop_mask = None
        if dropout_rng is not None and hyper.dropout > 0 and n >= 2:
            drop_mask = (dropout_rng.random((n, n)) < keep).astype(float) / keep
        named = _forward(leaves, win.values, hyper, drop_mask=drop_mask)
        sim, had_zero = _cosine_matrix(named["hidden"].value)
        saw_zero_feature = saw_zero_feature or had_zero
        adj = (sim >= tau_g).astype(float)
        np.fill_diagonal(adj, 0.0)
        acc += adj
    adjacency = acc / len(sliced.windows)
    if saw_zero_feature:
        flags.append("zero_feature_rows")
    if sliced.dropped_gap:
        flags.append("gap_windows_dropped")
    if not np.all(np.isfinite(adjacency)):
        raise NumericError(f"non-finite adjacency for tool {tool.tool}")
    return ToolGraph(
        tool=tool.tool,
        sensors=list(params.sensors),
        adjacency=adjacency,
        window_count=len(sliced.windows),
        flags=flags,
    )


# ---------------------------------------------------------------------------
# model file format


def save_model(params: ModelParams, path: str) -> None:
    """Write a versioned binary blob: json header plus raw float64 arrays.

    The byte stream is fully determined by the model content, so equal
    models produce equal files.
    """
    header = {
        "version": _MODEL_VERSION,
        "arch": params.arch,
        "sensors": params.sensors,
        "hyper": asdict(params.hyper),
        "arrays": [
            {"name": name, "shape": list(arr.shape)} for name, arr in params.arrays.items()
        ],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(_MODEL_MAGIC)
        fh.write(struct.pack("<I", _MODEL_VERSION))
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for name in header["arrays"]:
            arr = np.ascontiguousarray(params.arrays[name["name"]], dtype="<f8")
            fh.write(arr.tobytes())


def load_model(path: str) -> ModelParams:
    with open(path, "rb") as fh:
        magic = fh.read(len(_MODEL_MAGIC))
        if magic != _MODEL_MAGIC:
            raise SchemaError(f"{path}: not a model file")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != _MODEL_VERSION:
            raise SchemaError(f"{path}: unsupported model version {version}")
        (header_len,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(header_len).decode())
        hyper = GnnHyperParams(**header["hyper"])
        arrays: dict[str, np.ndarray] = {}
        for spec in header["arrays"]:
            shape = tuple(spec["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(count * 8)
            if len(buf) != count * 8:
                raise SchemaError(f"{path}: truncated array {spec['name']}")
            arrays[spec["name"]] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
    return ModelParams(
        arch=header["arch"], sensors=list(header["sensors"]), arrays=arrays, hyper=hyper
    )


def save_graph_csv(graph: ToolGraph, path: str, digits: int = 6) -> None:
    """Write one tool's adjacency as CSV: header of sensor ids, N value rows."""
    if graph.adjacency.shape != (len(graph.sensors), len(graph.sensors)):
        raise ShapeError(
            f"tool {graph.tool}: adjacency {graph.adjacency.shape} "
            f"vs {len(graph.sensors)} sensors"
        )
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(graph.sensors)
        for row in graph.adjacency:
            writer.writerow([format(float(v), f".{digits}g") for v in row])


def load_graph_csv(path: str, tool: str | None = None) -> ToolGraph:
    """Read an adjacency CSV back; the tool id defaults to the file stem.

    A loaded graph carries ``window_count=-1`` since the CSV does not
    record how many windows produced it.
    """
    with open(path, newline="") as fh:
        rows = [row for row in csv.reader(fh) if row]
    if not rows:
        raise SchemaError(f"{path}: empty graph file")
    sensors = [c.strip() for c in rows[0]]
    if len(rows) != len(sensors) + 1:
        raise ShapeError(f"{path}: {len(sensors)} sensors but {len(rows) - 1} value rows")
    try:
        adjacency = np.array([[float(c) for c in row] for row in rows[1:]], dtype=float)
    except ValueError as exc:
        raise SchemaError(f"{path}: non-numeric adjacency entry ({exc})") from None
    if adjacency.shape != (len(sensors), len(sensors)):
        raise ShapeError(f"{path}: ragged adjacency rows")
    if tool is None:
        stem = path.replace("\\", "/").rsplit("/", 1)[-1]
        tool = stem[:-4] if stem.endswith(".csv") else stem
    return ToolGraph(
        tool=tool, sensors=sensors, adjacency=adjacency, window_count=-1
    )
