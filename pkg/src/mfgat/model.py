"""Full two-branch network: source-domain branch, transform-domain branch,
attention fusion with a final graph-attention distillation, and the
classifier, plus the reduced ablation variants.

Variants:
  SDFE_ONLY  source branch -> classifier
  STDFE      both branches, fused by channel concatenation -> GAT -> classifier
  MF_GAT     both branches, fused by learned per-node attention -> GAT -> classifier
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field, replace
from enum import Enum

import numpy as np

from .layers import (
    ATTENTION_SLOPE,
    FuseParams,
    GatParams,
    LstmParams,
    attention_fuse,
    gat_layer,
    glorot_uniform,
    leaky_relu,
    lstm_sequence,
    mhgat_layer,
)
from .seeding import child_rng
from .tensor import Tensor, affine, concat, cross_entropy, dft_magnitude, reshape, softmax

CHECKPOINT_MAGIC = b"MFGATCK1"
CHECKPOINT_VERSION = 1


class ModelVariant(str, Enum):
    SDFE_ONLY = "sdfe_only"
    STDFE = "stdfe"
    MF_GAT = "mfgat"


@dataclass(frozen=True)
class ModelDims:
    """Dimension chain of the network.

    window is both the sequence length seen by the LSTM and the width of the
    magnitude spectrum (the transform branch keeps all window bins so the two
    branches share input width).
    """

    n_radars: int = 9
    window: int = 200
    lstm_hidden: int = 128
    heads: int = 8
    head_width: int = 16
    branch_width: int = 64
    ffate_width: int = 64
    classes: int = 3
    tdfe_lstm: bool = True  # transform branch has its own LSTM (symmetric branches)

    def validate(self):
        for name in ("n_radars", "window", "lstm_hidden", "heads", "head_width",
                     "branch_width", "ffate_width", "classes"):
            if getattr(self, name) < 1:
                raise ValueError(f"dims.{name} must be >= 1")
        if self.classes not in (2, 3):
            raise ValueError("dims.classes must be 2 or 3")


class BranchParams:
    """One feature-extraction branch: LSTM -> multi-head GAT -> GAT."""

    def __init__(self, lstm, mhgat: GatParams, gat: GatParams):
        self.lstm = lstm
        self.mhgat = mhgat
        self.gat = gat

    @classmethod
    def init(cls, rng, dims: ModelDims, with_lstm: bool = True) -> "BranchParams":
        lstm = LstmParams.init(rng, 1, dims.lstm_hidden) if with_lstm else None
        mh_in = dims.lstm_hidden if with_lstm else dims.window
        mhgat = GatParams.init(rng, mh_in, dims.head_width, dims.heads)
        gat = GatParams.init(rng, dims.heads * dims.head_width, dims.branch_width, 1)
        return cls(lstm, mhgat, gat)

    def named(self, prefix: str):
        if self.lstm is not None:
            yield from self.lstm.named(f"{prefix}.lstm")
        yield from self.mhgat.named(f"{prefix}.mhgat")
        yield from self.gat.named(f"{prefix}.gat")


class DenseParams:
    def __init__(self, w: Tensor, b: Tensor):
        self.W, self.b = w, b

    @classmethod
    def init(cls, rng, d_in: int, d_out: int) -> "DenseParams":
        return cls(glorot_uniform(rng, d_in, d_out, (d_in, d_out)), Tensor(np.zeros(d_out)))

    def named(self, prefix: str):
        yield f"{prefix}.W", self.W
        yield f"{prefix}.b", self.b


class MfGatModel:
    """Parameter container plus the forward graph for one variant."""

    def __init__(self, variant: ModelVariant, dims: ModelDims, seed: int,
                 sdfe: BranchParams, tdfe, fuse, ffate_gat, classifier: DenseParams):
        dims.validate()
        self.variant = variant
        self.dims = dims
        self.seed = seed
        self.sdfe = sdfe
        self.tdfe = tdfe
        self.fuse = fuse
        self.ffate_gat = ffate_gat
        self.classifier = classifier

    # -- parameter plumbing ------------------------------------------------
    def named_parameters(self):
        yield from self.sdfe.named("sdfe")
        if self.tdfe is not None:
            yield from self.tdfe.named("tdfe")
        if self.fuse is not None:
            yield from self.fuse.named("ffate.fuse")
        if self.ffate_gat is not None:
            yield from self.ffate_gat.named("ffate.gat")
        yield from self.classifier.named("classifier")

    def parameters(self):
        return [t for _, t in self.named_parameters()]

    def parameter_count(self) -> int:
        return sum(t.size for t in self.parameters())

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def state_arrays(self):
        return {name: t.data.copy() for name, t in self.named_parameters()}

    def load_state_arrays(self, state):
        for name, t in self.named_parameters():
            src = state[name]
            if src.shape != t.data.shape:
                raise ValueError(f"parameter {name}: shape {src.shape} != {t.data.shape}")
            t.data = np.array(src, dtype=np.float64)

    # -- forward -----------------------------------------------------------
    def _branch(self, branch: BranchParams, x: Tensor, adjacency, drop_p, training, rng):
        b, n, w = x.shape
        if branch.lstm is not None:
            seq = reshape(x, (b * n, w, 1))
            emb = reshape(lstm_sequence(seq, branch.lstm), (b, n, branch.lstm.hidden))
        else:
            emb = x
        hidden, _ = mhgat_layer(emb, adjacency, branch.mhgat,
                                activation=lambda t: leaky_relu(t, ATTENTION_SLOPE),
                                drop_p=drop_p, training=training, rng=rng)
        out, _ = gat_layer(hidden, adjacency, branch.gat, activation=None,
                           drop_p=drop_p, training=training, rng=rng)
        return out

    def forward_detail(self, x, adjacency, drop_p: float = 0.0, training: bool = False,
                       rng=None, fuse_override=None) -> dict:
        """Run the variant's graph; returns logits plus branch internals.

        x: [batch, N, window] or [N, window] raw (already normalized) node
        features. Returns dict with 'logits' (Tensor [batch, classes]) and,
        when present, 'h_t', 'h_f', 'fused', 'fuse_weights'.
        """
        arr = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[None]
        if arr.ndim != 3:
            raise ValueError("expected [batch, nodes, window] features")
        b, n, w = arr.shape
        if n != self.dims.n_radars or w != self.dims.window:
            raise ValueError(f"features [{n}, {w}] do not match dims "
                             f"[{self.dims.n_radars}, {self.dims.window}]")
        xt = Tensor(arr)
        detail = {}

        h_t = self._branch(self.sdfe, xt, adjacency, drop_p, training, rng)
        detail["h_t"] = h_t
        if self.variant is ModelVariant.SDFE_ONLY:
            feats = h_t
        else:
            spectrum = dft_magnitude(xt)
            h_f = self._branch(self.tdfe, spectrum, adjacency, drop_p, training, rng)
            detail["h_f"] = h_f
            if self.variant is ModelVariant.STDFE:
                fused = concat([h_t, h_f], axis=-1)
            else:
                fused, weights = attention_fuse(h_t, h_f, self.fuse, force_weights=fuse_override)
                detail["fuse_weights"] = weights
            detail["fused"] = fused
            feats, _ = gat_layer(fused, adjacency, self.ffate_gat,
                                 activation=lambda t: leaky_relu(t, ATTENTION_SLOPE),
                                 drop_p=drop_p, training=training, rng=rng)
        readout = reshape(feats, (b, feats.shape[-2] * feats.shape[-1]))
        detail["logits"] = affine(readout, self.classifier.W, self.classifier.b)
        return detail

    def forward_logits(self, x, adjacency, drop_p: float = 0.0, training: bool = False,
                       rng=None, fuse_override=None) -> Tensor:
        return self.forward_detail(x, adjacency, drop_p, training, rng, fuse_override)["logits"]

    def forward(self, x, adjacency) -> np.ndarray:
        """Class probabilities [batch, classes] (rows sum to one), eval mode."""
        return softmax(self.forward_logits(x, adjacency), axis=-1).data


def build_variant(variant: ModelVariant, dims: ModelDims = ModelDims(), seed: int = 0) -> MfGatModel:
    """Construct and initialize exactly the components the variant needs.

    All weights draw from one child stream of ``seed`` in a fixed order, so
    two builds with the same seed are identical, and shared components of
    different variants start from identical values.
    """
    variant = ModelVariant(variant)
    dims.validate()
    rng = child_rng(seed, "init")
    sdfe = BranchParams.init(rng, dims)
    tdfe = fuse = ffate_gat = None
    readout_width = dims.branch_width
    if variant is not ModelVariant.SDFE_ONLY:
        tdfe = BranchParams.init(rng, dims, with_lstm=dims.tdfe_lstm)
        ffate_in = dims.branch_width if variant is ModelVariant.MF_GAT else 2 * dims.branch_width
        if variant is ModelVariant.MF_GAT:
            fuse = FuseParams.init(rng, dims.branch_width)
        ffate_gat = GatParams.init(rng, ffate_in, dims.ffate_width, 1)
        readout_width = dims.ffate_width
    classifier = DenseParams.init(rng, dims.n_radars * readout_width, dims.classes)
    return MfGatModel(variant, dims, seed, sdfe, tdfe, fuse, ffate_gat, classifier)


# ---------------------------------------------------------------------------
# Gradient audit
# ---------------------------------------------------------------------------


def model_gradient_audit(model: MfGatModel, x, adjacency, labels, eps: float = 1e-5,
                         coords_per_tensor: int = 4, seed: int = 0) -> dict:
    """Finite-difference audit of every parameter tensor of the model.

    Backpropagates the cross-entropy loss once, then probes
    ``coords_per_tensor`` randomly chosen coordinates of each parameter with
    central differences. Returns {'max_rel_error': float, 'per_tensor':
    {name: err}}; relative error uses |a - n| / max(|a|, |n|, 1e-8).
    """
    labels = np.asarray(labels)

    def loss_value() -> float:
        return cross_entropy(model.forward_logits(x, adjacency), labels).item()

    model.zero_grad()
    loss = cross_entropy(model.forward_logits(x, adjacency), labels)
    loss.backward()

    rng = child_rng(seed, "audit")
    per_tensor = {}
    for name, p in model.named_parameters():
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        aflat = analytic.reshape(-1)
        k = min(coords_per_tensor, flat.size)
        idx = rng.choice(flat.size, size=k, replace=False)
        worst = 0.0
        for j in idx:
            orig = flat[j]
            flat[j] = orig + eps
            fp = loss_value()
            flat[j] = orig - eps
            fm = loss_value()
            flat[j] = orig
            numeric = (fp - fm) / (2 * eps)
            denom = max(abs(aflat[j]), abs(numeric), 1e-8)
            worst = max(worst, abs(aflat[j] - numeric) / denom)
        per_tensor[name] = worst
    return {"max_rel_error": max(per_tensor.values()), "per_tensor": per_tensor}


# ---------------------------------------------------------------------------
# Checkpoint serialization
# ---------------------------------------------------------------------------


def save_checkpoint(model: MfGatModel, path, extra: dict | None = None):
    """Write magic, version, JSON header, then little-endian float64 blobs.

    Header records carry (name, shape) for every parameter in declaration
    order; ``extra`` (e.g. config hash) is stored verbatim in the header.
    """
    records = [{"name": name, "shape": list(t.shape)} for name, t in model.named_parameters()]
    header = {
        "version": CHECKPOINT_VERSION,
        "variant": model.variant.value,
        "dims": asdict(model.dims),
        "seed": model.seed,
        "records": records,
        "extra": extra or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for _, t in model.named_parameters():
            fh.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[MfGatModel, dict]:
    """Rebuild a model from a checkpoint; returns (model, header)."""
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"not a checkpoint file (magic {magic!r})")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("utf8"))
        if header["version"] != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {header['version']}")
        dims = ModelDims(**header["dims"])
        model = build_variant(ModelVariant(header["variant"]), dims, header["seed"])
        for rec, (name, t) in zip(header["records"], model.named_parameters()):
            if rec["name"] != name or tuple(rec["shape"]) != t.shape:
                raise ValueError(f"checkpoint record mismatch at {rec['name']}")
            raw = fh.read(t.data.size * 8)
            t.data = np.frombuffer(raw, dtype="<f8").reshape(t.shape).astype(np.float64)
    return model, header
