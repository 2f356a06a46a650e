"""Modular reconstruction pipeline: background handling, processors, inverter.

A pipeline is background mode -> pre-processor -> camera inverter ->
post-processor, with small convolutional processors standing in for large
denoisers at desk scale. Background modes:

``none``
    Use the raw measurement.
``direct_sub``
    Subtract the background estimate; negatives are preserved so the
    subtraction stays exactly linear (clamping happens only at the output).
``learned_sub``
    Subtract a learned transformation of the background estimate.
``concatenate``
    Stack measurement and estimate channel-wise ([y, b_hat] order) so the
    pre-processor learns how to combine them (six channels in for RGB).

Everything composes through :mod:`lenslesskit.autodiff`, so the whole
pipeline is differentiable end to end with respect to every learnable
parameter and to the measurement itself.
"""

import json
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import arrayio
from . import autodiff as ad
from . import solvers
from .errors import InvalidParamsError, MissingBackgroundError, ShapeMismatchError

BACKGROUND_MODES = ("none", "direct_sub", "learned_sub", "concatenate")
INVERTERS = ("wiener", "admm", "le_admm", "train_inv")


@dataclass
class Measurement:
    """Raw capture plus (optionally) its background-illumination estimate."""

    y: object
    b_hat: object = None


class TinyCnn:
    """Small 3x3-conv stack with leaky-ReLU (slope 0.1) between layers.

    ``widths`` are the per-layer output channels; a residual skip from input
    to output is active when the channel counts match. Hidden layers use
    He-uniform initialization. When the skip applies, the final layer starts
    at zero so the net is the identity at initialization; without a skip a
    zero output would park the whole pipeline in the dead zone of the
    downstream projections (zero gradients), so the final layer is He-uniform
    there too.
    """

    def __init__(self, in_channels, widths, seed=0, slope=0.1):
        if not widths:
            raise InvalidParamsError("TinyCnn needs at least one layer")
        self.in_channels = int(in_channels)
        self.widths = tuple(int(w) for w in widths)
        self.seed = int(seed)
        self.slope = float(slope)
        self.layers = []
        skip = self.in_channels == self.widths[-1]
        cin = self.in_channels
        for i, cout in enumerate(self.widths):
            rng = np.random.default_rng(np.random.SeedSequence([self.seed, i]))
            if skip and i == len(self.widths) - 1:
                w = np.zeros((3, 3, cin, cout))
            else:
                bound = np.sqrt(6.0 / (9.0 * cin))
                w = rng.uniform(-bound, bound, size=(3, 3, cin, cout))
            self.layers.append((ad.leaf(w), ad.leaf(np.zeros(cout))))
            cin = cout

    @property
    def out_channels(self):
        return self.widths[-1]

    @property
    def residual(self):
        return self.in_channels == self.out_channels

    @property
    def param_count(self):
        return sum(w.value.size + b.value.size for w, b in self.layers)

    def parameters(self, prefix="cnn"):
        out = OrderedDict()
        for i, (w, b) in enumerate(self.layers):
            out[f"{prefix}.layer{i}.weight"] = w
            out[f"{prefix}.layer{i}.bias"] = b
        return out

    def to_config(self):
        return {
            "in_channels": self.in_channels,
            "widths": list(self.widths),
            "seed": self.seed,
            "slope": self.slope,
        }

    @classmethod
    def from_config(cls, d):
        return cls(d["in_channels"], d["widths"], seed=d.get("seed", 0), slope=d.get("slope", 0.1))


def tiny_cnn_forward(net, t):
    """Forward pass; differentiable for all weights and the input."""
    if ad.value_of(t).shape[-1] != net.in_channels:
        raise ShapeMismatchError(
            f"input has {ad.value_of(t).shape[-1]} channels, net expects {net.in_channels}"
        )
    h = t
    last = len(net.layers) - 1
    for i, (w, b) in enumerate(net.layers):
        h = ad.conv3x3(h, w, b)
        if i != last:
            h = ad.leaky_relu(h, net.slope)
    if net.residual:
        h = ad.add(h, t)
    return h


def apply_background_mode(y, b_hat, mode, net=None):
    """Combine measurement and background estimate per the selected mode."""
    if mode not in BACKGROUND_MODES:
        raise InvalidParamsError(f"unknown background mode {mode!r}")
    if mode == "none":
        return y
    if b_hat is None:
        raise MissingBackgroundError(f"mode {mode!r} requires a background estimate")
    if ad.value_of(y).shape != ad.value_of(b_hat).shape:
        raise ShapeMismatchError(
            f"measurement {ad.value_of(y).shape} != background {ad.value_of(b_hat).shape}"
        )
    if mode == "direct_sub":
        return ad.sub(y, b_hat)
    if mode == "learned_sub":
        if net is None:
            raise InvalidParamsError("learned_sub requires a background net")
        return ad.sub(y, tiny_cnn_forward(net, b_hat))
    return ad.concat_channels(y, b_hat)


@dataclass
class PipelineSpec:
    """Architecture plus all learnable parameters of one pipeline."""

    background_mode: str = "none"
    background_net: TinyCnn | None = None
    pre: TinyCnn | None = None
    inverter: str = "admm"
    solver_cfg: solvers.SolverConfig = field(default_factory=solvers.SolverConfig)
    le_admm: solvers.LeAdmmParams | None = None
    train_inv: solvers.TrainInvParams | None = None
    post: TinyCnn | None = None
    clamp_output: bool = False

    def validate(self, channels=3):
        """Check the channel chain; raises InvalidParamsError on any break."""
        if self.background_mode not in BACKGROUND_MODES:
            raise InvalidParamsError(f"unknown background mode {self.background_mode!r}")
        if self.inverter not in INVERTERS:
            raise InvalidParamsError(f"unknown inverter {self.inverter!r}")
        if self.background_mode == "learned_sub":
            if self.background_net is None:
                raise InvalidParamsError("learned_sub requires background_net")
            if (
                self.background_net.in_channels != channels
                or self.background_net.out_channels != channels
            ):
                raise InvalidParamsError(
                    "background_net must map measurement channels to themselves"
                )
        into_pre = 2 * channels if self.background_mode == "concatenate" else channels
        if self.pre is not None:
            if self.pre.in_channels != into_pre:
                raise InvalidParamsError(
                    f"pre-processor expects {self.pre.in_channels} channels, "
                    f"background mode provides {into_pre}"
                )
            into_inverter = self.pre.out_channels
        else:
            into_inverter = into_pre
        if into_inverter != channels:
            raise InvalidParamsError(
                f"inverter needs {channels} channels, chain provides {into_inverter}"
            )
        if self.inverter == "le_admm" and self.le_admm is None:
            raise InvalidParamsError("le_admm inverter requires le_admm parameters")
        if self.inverter == "train_inv" and self.train_inv is None:
            raise InvalidParamsError("train_inv inverter requires train_inv parameters")
        if self.post is not None and (
            self.post.in_channels != channels or self.post.out_channels != channels
        ):
            raise InvalidParamsError("post-processor must map scene channels to themselves")
        return self

    def parameters(self):
        """Ordered name -> leaf map of every learnable parameter."""
        out = OrderedDict()
        if self.background_mode == "learned_sub" and self.background_net is not None:
            out.update(self.background_net.parameters("background_net"))
        if self.pre is not None:
            out.update(self.pre.parameters("pre"))
        if self.inverter == "le_admm" and self.le_admm is not None:
            out.update(self.le_admm.parameters("inverter"))
        if self.inverter == "train_inv" and self.train_inv is not None:
            out.update(self.train_inv.parameters("inverter"))
        if self.post is not None:
            out.update(self.post.parameters("post"))
        return out


def run_pipeline(spec, op, m):
    """Run the full pipeline on one measurement; differentiable end to end."""
    spec.validate(channels=op.channels)
    z = apply_background_mode(m.y, m.b_hat, spec.background_mode, spec.background_net)
    if spec.pre is not None:
        z = tiny_cnn_forward(spec.pre, z)
    if spec.inverter == "wiener":
        x = solvers.wiener_inverse(op, z, spec.solver_cfg.tik_eps)
    elif spec.inverter == "admm":
        x, _ = solvers.admm(op, z, spec.solver_cfg)
    elif spec.inverter == "le_admm":
        x = solvers.unrolled_admm_forward(op, z, spec.le_admm)
    else:
        x = solvers.train_inv_forward(op, spec.train_inv, z)
    if spec.post is not None:
        x = tiny_cnn_forward(spec.post, x)
    if spec.clamp_output:
        x = ad.clamp01(x)
    return x


# ---------------------------------------------------------------------------
# defaults (desk-scale stand-ins for the large denoisers)


def default_background_net(channels=3, seed=0):
    return TinyCnn(channels, (8, 8, channels), seed=seed)


def default_pre(channels=3, concatenate=False, seed=1):
    cin = 2 * channels if concatenate else channels
    return TinyCnn(cin, (16, 16, 16, channels), seed=seed)


def passthrough_concat_pre(channels=3, seed=1):
    """Single-layer 2C -> C pre-processor initialized as measurement pass-through.

    At initialization the concatenate pipeline therefore equals the
    no-background pipeline (its classical counterpart); training discovers
    how to fold the stacked background estimate in.
    """
    net = TinyCnn(2 * channels, (channels,), seed=seed)
    w = np.zeros((3, 3, 2 * channels, channels))
    for c in range(channels):
        w[1, 1, c, c] = 1.0  # center tap on the measurement channels
    net.layers[0][0].value = w
    return net


def default_post(channels=3, seed=2):
    return TinyCnn(channels, (16, 16, 16, channels), seed=seed)


# ---------------------------------------------------------------------------
# serialization: JSON architecture + binary parameter blobs


def _cnn_or_none(cfg):
    return None if cfg is None else TinyCnn.from_config(cfg)


def build_pipeline(config, op=None, channels=3):
    """Instantiate a pipeline from an architecture config (fresh parameters).

    ``op`` is required for the train_inv inverter (its filter lives on the
    operator's padded grid).
    """
    config = dict(config)
    inv = dict(config.get("inverter", {"kind": "admm"}))
    kind = inv.pop("kind", "admm")
    if kind not in INVERTERS:
        raise InvalidParamsError(f"unknown inverter {kind!r}")
    n_unrolled = inv.pop("n_unrolled", 5)
    cfg_fields = {k: inv[k] for k in ("n_iter", "mu1", "mu2", "mu3", "tau", "tik_eps", "nonneg") if k in inv}
    solver_cfg = solvers.SolverConfig(**cfg_fields)
    le_admm = None
    train_inv = None
    if kind == "le_admm":
        le_admm = solvers.LeAdmmParams.from_config(solver_cfg, n_iter=n_unrolled)
    if kind == "train_inv":
        if op is None:
            raise InvalidParamsError("train_inv pipelines need the camera operator")
        train_inv = solvers.TrainInvParams.from_operator(op, solver_cfg.tik_eps)
    spec = PipelineSpec(
        background_mode=config.get("background_mode", "none"),
        background_net=_cnn_or_none(config.get("background_net")),
        pre=_cnn_or_none(config.get("pre")),
        inverter=kind,
        solver_cfg=solver_cfg,
        le_admm=le_admm,
        train_inv=train_inv,
        post=_cnn_or_none(config.get("post")),
        clamp_output=config.get("clamp_output", False),
    )
    return spec.validate(channels=channels)


def _spec_architecture(spec):
    inv = {"kind": spec.inverter}
    inv.update(
        n_iter=spec.solver_cfg.n_iter,
        mu1=spec.solver_cfg.mu1,
        mu2=spec.solver_cfg.mu2,
        mu3=spec.solver_cfg.mu3,
        tau=spec.solver_cfg.tau,
        tik_eps=spec.solver_cfg.tik_eps,
        nonneg=spec.solver_cfg.nonneg,
    )
    if spec.inverter == "le_admm":
        inv["n_unrolled"] = spec.le_admm.n_iter
    arch = {
        "background_mode": spec.background_mode,
        "clamp_output": spec.clamp_output,
        "concat_order": ["y", "b_hat"],
        "inverter": inv,
    }
    for name in ("background_net", "pre", "post"):
        net = getattr(spec, name)
        arch[name] = None if net is None else net.to_config()
    if spec.inverter == "train_inv":
        arch["train_inv_shape"] = list(spec.train_inv.shape)
    return arch


def save_pipeline(spec, out_dir, extra=None):
    """Write ``spec.json`` plus one float64 blob per learnable parameter."""
    out_dir = Path(out_dir)
    params_dir = out_dir / "params"
    params_dir.mkdir(parents=True, exist_ok=True)
    blob_map = {}
    for name, var in spec.parameters().items():
        fname = name.replace(".", "_") + ".llia"
        value = var.value
        blob_map[name] = {"file": f"params/{fname}", "shape": list(value.shape)}
        arrayio.write_array(params_dir / fname, value.reshape(_blob_shape(value.shape)), dtype="float64")
    doc = {"architecture": _spec_architecture(spec), "parameters": blob_map}
    if extra:
        doc.update(extra)
    with open(out_dir / "spec.json", "w") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")
    return out_dir / "spec.json"


def _blob_shape(shape):
    # array files are 3D; fold trailing axes and pad leading ones
    if len(shape) == 3:
        return shape
    if len(shape) == 4:
        return (shape[0], shape[1], shape[2] * shape[3])
    if len(shape) == 1:
        return (1, 1, shape[0])
    if len(shape) == 0:
        return (1, 1, 1)
    raise ShapeMismatchError(f"cannot store parameter of shape {shape}")


def load_pipeline(path, op=None, channels=3):
    """Load a saved pipeline (architecture + parameter blobs)."""
    path = Path(path)
    if path.is_dir():
        path = path / "spec.json"
    with open(path) as f:
        doc = json.load(f)
    spec = build_pipeline(doc["architecture"], op=op, channels=channels)
    params = spec.parameters()
    blob_map = doc.get("parameters", {})
    if set(blob_map) != set(params):
        raise InvalidParamsError(
            f"parameter blobs {sorted(blob_map)} do not match architecture "
            f"parameters {sorted(params)}"
        )
    for name, entry in blob_map.items():
        arr = arrayio.read_array(path.parent / entry["file"])
        params[name].value = arr.reshape(tuple(entry["shape"]))
    return spec
