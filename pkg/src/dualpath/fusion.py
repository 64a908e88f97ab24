"""Full model: both pathways assembled into one prediction head.

The consensus pathway summarizes agreement; the reasoning pathway
re-weights private features by trust. A per-sample gate in (0, 1) mixes
the two, leaning on reasoning when perceived conflict is high. Ablations
clamp the gate instead of deleting branches, so parameter counts stay
comparable across variants.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from dualpath.decoupler import Decoupler, DecoupledFeatures
from dualpath.functional import softmax
from dualpath.intuition import IntuitionPath
from dualpath.layers import Affine
from dualpath.perception import ConflictReport, Perception
from dualpath.rng import Rng
from dualpath.synthdata import MODALITIES
from dualpath.tensor import Tensor

CHECKPOINT_MAGIC = b"DPCK"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    feature_dim: int = 16
    num_classes: int = 4
    hidden_dim: int = 16
    temperature: float = 1.0
    dropout: float = 0.2
    share_shared_encoder: bool = False
    init_seed: int = 0

    def validate(self) -> None:
        if self.feature_dim < 1 or self.hidden_dim < 1:
            raise ValueError("dims must be positive")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if self.temperature <= 0:
            raise ValueError("temperature must be > 0")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")


@dataclass(frozen=True)
class Ablation:
    """Variant switches. Gate clamping severs one pathway's influence on
    the output while leaving the graph shape intact."""

    no_int: bool = False   # clamp gate to 1: reasoning only
    no_rea: bool = False   # clamp gate to 0: consensus only

    def __post_init__(self):
        if self.no_int and self.no_rea:
            raise ValueError("cannot ablate both pathways")

    @property
    def gate_override(self) -> float | None:
        if self.no_int:
            return 1.0
        if self.no_rea:
            return 0.0
        return None


@dataclass
class ModelOutput:
    intuition_repr: Tensor   # (N, d_h)
    reasoning_repr: Tensor   # (N, d_h)
    fused: Tensor            # (N, d_h)
    logits: Tensor           # (N, C)
    probs: Tensor            # (N, C)
    rea_logits: Tensor       # (N, C) auxiliary head on the reasoning repr
    report: ConflictReport
    features: DecoupledFeatures


def reasoning_aggregate(trust: Tensor, private: dict[str, Tensor]) -> Tensor:
    """Trust-weighted sum of the private features, (N, d_h)."""
    out = None
    for i, m in enumerate(MODALITIES):
        term = trust[:, i:i + 1] * private[m]
        out = term if out is None else out + term
    return out


def final_fuse(intuition_repr: Tensor, reasoning_repr: Tensor, gate: Tensor) -> Tensor:
    """Convex combination of the two pathway representations."""
    return (1.0 - gate) * intuition_repr + gate * reasoning_repr


class Model:
    def __init__(self, config: ModelConfig):
        config.validate()
        self.config = config
        rng = Rng(config.init_seed, "init")
        self.decoupler = Decoupler(rng.child("decoupler"), config.feature_dim,
                                   config.hidden_dim, dropout=config.dropout,
                                   share_weights=config.share_shared_encoder)
        self.intuition = IntuitionPath(rng.child("intuition"), config.feature_dim,
                                       config.hidden_dim)
        self.perception = Perception(rng.child("perception"), config.hidden_dim,
                                     config.num_classes, config.temperature)
        self.head = Affine(rng.child("head"), config.hidden_dim, config.num_classes,
                           "head")
        self.rea_head = Affine(rng.child("rea_head"), config.hidden_dim,
                               config.num_classes, "rea_head")

    def forward_batch(self, text, video, audio, train: bool = False,
                      rng: Rng | None = None,
                      ablation: Ablation | None = None) -> ModelOutput:
        text = text if isinstance(text, Tensor) else Tensor(text)
        video = video if isinstance(video, Tensor) else Tensor(video)
        audio = audio if isinstance(audio, Tensor) else Tensor(audio)
        if text.data.ndim != 2:
            raise ValueError("forward_batch expects (N, d) inputs")
        feats = self.decoupler(text, video, audio, train=train, rng=rng)
        intuition_repr = self.intuition(text, video, audio, feats)
        report = self.perception(feats)
        private = {m: feats.private(m) for m in MODALITIES}
        reasoning_repr = reasoning_aggregate(report.trust, private)
        gate = report.gate
        if ablation is not None and ablation.gate_override is not None:
            gate = Tensor(np.full_like(report.gate.data, ablation.gate_override))
            report.gate = gate
        fused = final_fuse(intuition_repr, reasoning_repr, gate)
        logits = self.head(fused)
        probs = softmax(logits, axis=-1)
        rea_logits = self.rea_head(reasoning_repr)
        return ModelOutput(intuition_repr=intuition_repr,
                           reasoning_repr=reasoning_repr, fused=fused,
                           logits=logits, probs=probs, rea_logits=rea_logits,
                           report=report, features=feats)

    def forward(self, bundle, ablation: Ablation | None = None) -> ModelOutput:
        """Single-sample eval-mode forward."""
        return self.forward_batch(bundle.text[None, :], bundle.video[None, :],
                                  bundle.audio[None, :], train=False,
                                  ablation=ablation)

    def params(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        out.update(self.decoupler.params())
        out.update(self.intuition.params())
        out.update(self.perception.params())
        out.update(self.head.params())
        out.update(self.rea_head.params())
        return out

    def zero_grad(self) -> None:
        for p in self.params().values():
            p.grad = None

    def set_params(self, values: dict[str, np.ndarray]) -> None:
        params = self.params()
        for name, arr in values.items():
            if name not in params:
                raise KeyError(f"unknown parameter {name!r}")
            if params[name].data.shape != arr.shape:
                raise ValueError(f"shape mismatch for {name!r}")
            params[name].data = np.array(arr, dtype=np.float64)

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.params().items()}


# -- checkpoint serialization ----------------------------------------------
#
# Layout (little-endian):
#   magic b"DPCK"; version u16
#   config: u32 length + UTF-8 JSON of ModelConfig
#   u32 section count, then per section:
#     u16 name length + UTF-8 name; u8 ndim; u32 per dim; float64 data.

_CK_HEAD = struct.Struct("<4sH")


def save_checkpoint(path, model: Model) -> None:
    cfg_blob = json.dumps(asdict(model.config), sort_keys=True).encode("utf-8")
    params = model.params()
    with open(path, "wb") as fh:
        fh.write(_CK_HEAD.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(cfg_blob)))
        fh.write(cfg_blob)
        fh.write(struct.pack("<I", len(params)))
        for name in sorted(params):
            blob = name.encode("utf-8")
            data = params[name].data
            fh.write(struct.pack("<H", len(blob)))
            fh.write(blob)
            fh.write(struct.pack("<B", data.ndim))
            for dim in data.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(data.astype("<f8").tobytes())


def load_checkpoint(path) -> Model:
    with open(path, "rb") as fh:
        magic, version = _CK_HEAD.unpack(fh.read(_CK_HEAD.size))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError("not a checkpoint file (bad magic)")
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        (cfg_len,) = struct.unpack("<I", fh.read(4))
        config = ModelConfig(**json.loads(fh.read(cfg_len).decode("utf-8")))
        (count,) = struct.unpack("<I", fh.read(4))
        values: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", fh.read(2))
            name = fh.read(name_len).decode("utf-8")
            (ndim,) = struct.unpack("<B", fh.read(1))
            shape = tuple(struct.unpack("<I", fh.read(4))[0] for _ in range(ndim))
            n = int(np.prod(shape)) if shape else 1
            arr = np.frombuffer(fh.read(8 * n), dtype="<f8").reshape(shape)
            values[name] = arr.astype(np.float64)
    model = Model(config)
    expected = set(model.params())
    if set(values) != expected:
        raise ValueError("checkpoint parameter names do not match the config")
    model.set_params(values)
    return model
