"""Reservoir replay buffer and feature-constrained replay losses.

The buffer keeps a fixed number of past cases sampled uniformly from the
whole stream (reservoir discipline). Each stored case carries the three
feature representations (patch, genomic, fused) frozen at insertion time;
training later penalises the current model's drift from those features with
squared L2 distances, and replays the stored cases through the survival loss.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .data import CaseRecord
from .survival import SurvLossConfig, nll_survival_loss

_MAGIC = b"SVRB"
_VERSION = 1


@dataclass(frozen=True)
class CLLossConfig:
    """Weights of the combined continual-learning objective."""

    alpha: float = 2.4e-3   # feature-constraint weight
    beta: float = 0.5       # replay weight
    zeta: float = 0.0       # generic forgetting weight for non-replay methods
    replay_count: int = 1   # items sampled per training step

    def __post_init__(self):
        if min(self.alpha, self.beta, self.zeta) < 0:
            raise ValueError("loss weights must be nonnegative")
        if self.replay_count < 1:
            raise ValueError("replay_count must be positive")


@dataclass
class ReplayItem:
    case: CaseRecord
    task_id: int
    f_patch: np.ndarray   # frozen (1, d)
    f_genomic: np.ndarray
    f_fused: np.ndarray
    logits: np.ndarray | None = None  # stored hazard logits (distillation methods)


class ReplayBuffer:
    """Fixed-capacity reservoir over the training stream."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.items: list[ReplayItem] = []
        self.seen_count = 0

    def __len__(self) -> int:
        return len(self.items)

    def reservoir_update(self, item: ReplayItem, rng: np.random.Generator) -> None:
        """Insert during the fill phase, then replace a random slot with
        probability capacity / seen_count."""
        self.seen_count += 1
        if len(self.items) < self.capacity:
            self.items.append(item)
            return
        slot = int(rng.integers(0, self.seen_count))
        if slot < self.capacity:
            self.items[slot] = item

    def sample_replay(self, count: int, rng: np.random.Generator) -> list[ReplayItem]:
        """Uniform with replacement; empty buffer yields an empty batch."""
        if not self.items:
            return []
        idx = rng.integers(0, len(self.items), size=count)
        return [self.items[i] for i in idx]

    # ------------------------------------------------------------ serialization

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(struct.pack("<BIQ", _VERSION, self.capacity, self.seen_count))
            fh.write(struct.pack("<I", len(self.items)))
            for it in self.items:
                _write_item(fh, it)

    @classmethod
    def load(cls, path) -> "ReplayBuffer":
        with open(path, "rb") as fh:
            if fh.read(4) != _MAGIC:
                raise ValueError(f"{path}: not a replay-buffer file")
            version, capacity, seen = struct.unpack("<BIQ", fh.read(13))
            if version != _VERSION:
                raise ValueError(f"{path}: unsupported version {version}")
            buf = cls(capacity)
            buf.seen_count = seen
            (n,) = struct.unpack("<I", fh.read(4))
            buf.items = [_read_item(fh) for _ in range(n)]
            return buf


def _write_arr(fh, arr: np.ndarray) -> None:
    a = np.ascontiguousarray(arr, dtype="<f8")
    fh.write(struct.pack("<II", *a.shape if a.ndim == 2 else (1, a.size)))
    fh.write(a.tobytes())


def _read_arr(fh) -> np.ndarray:
    r, c = struct.unpack("<II", fh.read(8))
    return np.frombuffer(fh.read(8 * r * c), dtype="<f8").reshape(r, c).copy()


def _write_item(fh, it: ReplayItem) -> None:
    cid = it.case.case_id.encode()
    fh.write(struct.pack("<H", len(cid)))
    fh.write(cid)
    fh.write(struct.pack("<idBi", it.task_id, it.case.time,
                         it.case.censored, it.case.label))
    _write_arr(fh, it.case.patches)
    fh.write(struct.pack("<B", len(it.case.groups)))
    for g in it.case.groups:
        _write_arr(fh, g.reshape(1, -1))
    for f in (it.f_patch, it.f_genomic, it.f_fused):
        _write_arr(fh, f)
    has_logits = it.logits is not None
    fh.write(struct.pack("<B", has_logits))
    if has_logits:
        _write_arr(fh, it.logits)


def _read_item(fh) -> ReplayItem:
    (idlen,) = struct.unpack("<H", fh.read(2))
    cid = fh.read(idlen).decode()
    task_id, time, censored, label = struct.unpack("<idBi", fh.read(17))
    patches = _read_arr(fh)
    (ng,) = struct.unpack("<B", fh.read(1))
    groups = tuple(_read_arr(fh).reshape(-1) for _ in range(ng))
    case = CaseRecord(cid, patches, groups, time, int(censored), label=label)
    f_p, f_g, f_f = (_read_arr(fh) for _ in range(3))
    (has_logits,) = struct.unpack("<B", fh.read(1))
    logits = _read_arr(fh) if has_logits else None
    return ReplayItem(case, task_id, f_p, f_g, f_f, logits)


# ---------------------------------------------------------------------------
# losses

def feature_constraint_loss(model, items: list[ReplayItem]) -> ad.Tensor:
    """Mean squared drift of the three feature maps from their frozen values.

    Frozen features are constants; gradients flow only through the current
    model's recomputation of each stored case.
    """
    if not items:
        return ad.constant(0.0)
    total = None
    for it in items:
        _, f_p, f_g, f_f = model.forward(it.case, it.task_id)
        term = ad.add(
            ad.add(ad.sum_all(ad.square(ad.sub(ad.constant(it.f_patch), f_p))),
                   ad.sum_all(ad.square(ad.sub(ad.constant(it.f_genomic), f_g)))),
            ad.sum_all(ad.square(ad.sub(ad.constant(it.f_fused), f_f))))
        total = term if total is None else ad.add(total, term)
    return ad.scale(total, 1.0 / len(items))


def replay_loss(model, items: list[ReplayItem],
                survcfg: SurvLossConfig = SurvLossConfig()) -> ad.Tensor:
    """Mean survival NLL over replayed cases, each through its own task head."""
    if not items:
        return ad.constant(0.0)
    total = None
    for it in items:
        hazards, _, _, _ = model.forward(it.case, it.task_id)
        term = nll_survival_loss(hazards, it.case.label, it.case.censored, survcfg)
        total = term if total is None else ad.add(total, term)
    return ad.scale(total, 1.0 / len(items))


def total_loss(current: ad.Tensor, feature_term: ad.Tensor, replay_term: ad.Tensor,
               cfg: CLLossConfig) -> ad.Tensor:
    """current + alpha * feature constraint + beta * replay."""
    return ad.add(current, ad.add(ad.scale(feature_term, cfg.alpha),
                                  ad.scale(replay_term, cfg.beta)))
