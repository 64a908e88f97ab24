"""Shared/private subspace projection.

Each modality's feature vector is passed through two small MLPs: one
producing its shared component (the part meant to align in distribution
across modalities) and one producing its private component (the part
carrying modality-unique cues). The alignment and orthogonality losses
act on these outputs; the encoders themselves impose no constraint.
"""

from __future__ import annotations

from dataclasses import dataclass

from dualpath.layers import TanhMlp
from dualpath.rng import Rng
from dualpath.synthdata import MODALITIES
from dualpath.tensor import Tensor


@dataclass
class DecoupledFeatures:
    """Batched shared and private projections, each (N, hidden_dim)."""

    shared_text: Tensor
    shared_video: Tensor
    shared_audio: Tensor
    private_text: Tensor
    private_video: Tensor
    private_audio: Tensor

    def shared(self, m: str) -> Tensor:
        return getattr(self, f"shared_{m}")

    def private(self, m: str) -> Tensor:
        return getattr(self, f"private_{m}")


class Decoupler:
    """Six encoders (three modalities x shared/private), or four when
    ``share_weights`` reuses one shared encoder across modalities."""

    def __init__(self, rng: Rng, feature_dim: int, hidden_dim: int,
                 dropout: float = 0.0, share_weights: bool = False,
                 activation=None):
        self.share_weights = share_weights
        self.shared_enc: dict[str, TanhMlp] = {}
        self.private_enc: dict[str, TanhMlp] = {}
        if share_weights:
            common = TanhMlp(rng.child("shared"), feature_dim, hidden_dim,
                             hidden_dim, "decoupler.shared", dropout, activation)
            for m in MODALITIES:
                self.shared_enc[m] = common
        else:
            for m in MODALITIES:
                self.shared_enc[m] = TanhMlp(
                    rng.child(f"shared/{m}"), feature_dim, hidden_dim, hidden_dim,
                    f"decoupler.shared_{m}", dropout, activation)
        for m in MODALITIES:
            self.private_enc[m] = TanhMlp(
                rng.child(f"private/{m}"), feature_dim, hidden_dim, hidden_dim,
                f"decoupler.private_{m}", dropout, activation)

    def __call__(self, text: Tensor, video: Tensor, audio: Tensor,
                 train: bool = False, rng: Rng | None = None) -> DecoupledFeatures:
        feats = {"text": text, "video": video, "audio": audio}
        out = {}
        for m in MODALITIES:
            srng = rng.child(f"drop/shared/{m}") if rng is not None else None
            prng = rng.child(f"drop/private/{m}") if rng is not None else None
            out[f"shared_{m}"] = self.shared_enc[m](feats[m], train, srng)
            out[f"private_{m}"] = self.private_enc[m](feats[m], train, prng)
        return DecoupledFeatures(**out)

    def params(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        seen = set()
        for enc in list(self.shared_enc.values()) + list(self.private_enc.values()):
            if id(enc) in seen:
                continue
            seen.add(id(enc))
            out.update(enc.params())
        return out
