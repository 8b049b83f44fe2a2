"""Training losses as pure map-to-scalar functions."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .hafm_codec import AttractionFieldMap, ResidualMap
from .junction_codec import JunctionMaps

EPS = 1e-7


@dataclass(frozen=True)
class LossConfig:
    lambda_msk: float = 8.0
    lambda_off: float = 0.25

    def __post_init__(self):
        if self.lambda_msk < 0 or self.lambda_off < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass(frozen=True)
class LossReport:
    l_ls: float
    l_junc: float
    l_ver: float
    total: float

    def to_text(self) -> str:
        return "".join(f"{k}={v!r}\n" for k, v in asdict(self).items())

    @classmethod
    def from_text(cls, text: str) -> "LossReport":
        kv = dict(line.split("=", 1) for line in text.splitlines() if line.strip())
        return cls(**{k: float(v) for k, v in kv.items()})


def _bce(p, y):
    p = np.clip(np.asarray(p, float), EPS, 1 - EPS)
    y = np.asarray(y, float)
    return -(y * np.log(p) + (1 - y) * np.log1p(-p))


def loss_ls(gt_afm: AttractionFieldMap, pred_afm: AttractionFieldMap,
            gt_res: ResidualMap, pred_res: ResidualMap) -> float:
    """Channel-summed l1 on GT-foreground pixels, averaged, for the field and the residual."""
    specs = {gt_afm.spec, pred_afm.spec, gt_res.spec, pred_res.spec}
    if len(specs) != 1:
        raise ValueError("spec mismatch between loss inputs")
    fg = gt_afm.foreground
    if not fg.any():
        return 0.0
    field = np.abs(gt_afm.channels[:, fg] - pred_afm.channels[:, fg]).sum(axis=0).mean()
    res = np.abs(gt_res.values[fg] - pred_res.values[fg]).mean()
    return float(field + res)


def loss_junc(gt: JunctionMaps, pred: JunctionMaps, cfg: LossConfig | None = None) -> float:
    cfg = cfg or LossConfig()
    if gt.spec != pred.spec:
        raise ValueError("spec mismatch between junction maps")
    mask_term = _bce(pred.mask, gt.mask).mean()
    pos = gt.mask > 0.5
    if pos.any():
        off_term = np.abs(gt.offset[:, pos] - pred.offset[:, pos]).sum(axis=0).mean()
    else:
        off_term = 0.0
    return float(cfg.lambda_msk * mask_term + cfg.lambda_off * off_term)


def loss_ver(scores, labels) -> float:
    scores = np.asarray(scores, float).reshape(-1)
    labels = np.asarray(labels, float).reshape(-1)
    if len(scores) == 0:
        raise ValueError("empty score list")
    if len(scores) != len(labels):
        raise ValueError("scores and labels differ in length")
    return float(_bce(scores, labels).mean())


def total_loss(l_ls: float, l_junc: float, l_ver: float) -> LossReport:
    parts = (float(l_ls), float(l_junc), float(l_ver))
    if min(parts) < 0:
        raise ValueError("loss components must be non-negative")
    return LossReport(*parts, total=sum(parts))
