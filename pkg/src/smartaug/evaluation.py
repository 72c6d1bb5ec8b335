"""Segmentation metrics and trial evaluators.

An evaluator is any callable ``(config, seed) -> float`` returning a
validation mIoU in [0, 1]. Failures are signalled by raising; the search
loop records them as failed trials.
"""
from __future__ import annotations

import json
import logging
import math
import shlex
import subprocess
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Sequence

import numpy as np

from .raster import IGNORE_INDEX, apply_plan
from .strategy import EpochClock, StrategyConfig, plan_rng, sample_plan

if TYPE_CHECKING:
    from .dataset import SegDataset

log = logging.getLogger(__name__)


class EvaluatorError(RuntimeError):
    """A trial evaluation failed; ``diagnostics`` holds captured output."""

    def __init__(self, message: str, diagnostics: str = ""):
        super().__init__(message)
        self.diagnostics = diagnostics


@dataclass(frozen=True)
class EvalResult:
    miou: float
    per_class_iou: list[float | None]
    pixels_scored: int


def confusion_matrix(
    preds: Sequence[np.ndarray],
    gts: Sequence[np.ndarray],
    k: int,
    ignore_index: int = IGNORE_INDEX,
) -> np.ndarray:
    """Dataset-level ``k x k`` counts; rows are ground truth, columns prediction."""
    if len(preds) != len(gts):
        raise ValueError(f"got {len(preds)} predictions for {len(gts)} ground truths")
    if len(gts) == 0:
        raise ValueError("empty input")
    cm = np.zeros((k, k), dtype=np.int64)
    for i, (p, g) in enumerate(zip(preds, gts)):
        p = np.asarray(p)
        g = np.asarray(g)
        if p.shape != g.shape:
            raise ValueError(f"shape mismatch at item {i}: pred {p.shape} vs gt {g.shape}")
        keep = g != ignore_index
        gv = g[keep].astype(np.int64)
        pv = p[keep].astype(np.int64)
        if gv.size and (gv.max() >= k or pv.max() >= k or pv.min() < 0 or gv.min() < 0):
            raise ValueError(f"labels at item {i} fall outside [0, {k})")
        cm += np.bincount(gv * k + pv, minlength=k * k).reshape(k, k)
    return cm


def iou_from_confusion(cm: np.ndarray) -> EvalResult:
    scored = int(cm.sum())
    if scored == 0:
        raise ValueError("no scored pixels")
    tp = np.diag(cm)
    union = cm.sum(axis=0) + cm.sum(axis=1) - tp
    per_class: list[float | None] = [
        (int(t) / int(u)) if u > 0 else None for t, u in zip(tp, union)
    ]
    present = [v for v in per_class if v is not None]
    return EvalResult(math.fsum(present) / len(present), per_class, scored)


def miou(
    preds: Sequence[np.ndarray],
    gts: Sequence[np.ndarray],
    k: int,
    ignore_index: int = IGNORE_INDEX,
) -> EvalResult:
    """Mean IoU over classes present in ground truth or prediction."""
    return iou_from_confusion(confusion_matrix(preds, gts, k, ignore_index))


def class_weights(
    masks: Sequence[np.ndarray], k: int, ignore_index: int = IGNORE_INDEX
) -> np.ndarray:
    """Inverse pixel-frequency weights ``total / (n_present * count_c)``.

    Classes with no pixels get weight 0.
    """
    if len(masks) == 0:
        raise ValueError("empty input")
    counts = np.zeros(k, dtype=np.int64)
    for m in masks:
        labels = np.asarray(m)
        labels = labels[labels != ignore_index].astype(np.int64)
        if labels.size and labels.max() >= k:
            raise ValueError(f"mask label {labels.max()} outside [0, {k})")
        counts += np.bincount(labels, minlength=k)
    total = int(counts.sum())
    if total == 0:
        raise ValueError("no scored pixels")
    present = counts > 0
    weights = np.zeros(k, dtype=np.float64)
    weights[present] = total / (int(present.sum()) * counts[present])
    return weights


# ---------------------------------------------------------------------------
# external evaluator


@dataclass
class ExternalEvaluator:
    """Runs ``<command> <input.json>`` per trial.

    The input file holds ``{"config": ..., "seed": ..., "out": path}``; the
    command must write ``{"miou": x}`` to ``out`` and exit 0.
    """

    command: str | Sequence[str]
    timeout: float | None = None

    def __call__(self, cfg: StrategyConfig, seed: int) -> float:
        argv = shlex.split(self.command) if isinstance(self.command, str) else list(self.command)
        if not argv:
            raise EvaluatorError("external evaluator command is empty")
        with tempfile.TemporaryDirectory(prefix="smartaug-trial-") as tmp:
            tmp = Path(tmp)
            out = tmp / "result.json"
            inp = tmp / "input.json"
            inp.write_text(
                json.dumps({"config": cfg.to_dict(), "seed": int(seed), "out": str(out)}),
                encoding="utf-8",
            )
            try:
                proc = subprocess.run(
                    argv + [str(inp)], capture_output=True, text=True, timeout=self.timeout
                )
            except subprocess.TimeoutExpired as exc:
                raise EvaluatorError(
                    f"evaluator timed out after {self.timeout}s", _tail(exc.stderr)
                ) from None
            except OSError as exc:
                raise EvaluatorError(f"could not start evaluator: {exc}") from None
            if proc.returncode != 0:
                raise EvaluatorError(
                    f"evaluator exited with status {proc.returncode}", _tail(proc.stderr)
                )
            try:
                result = json.loads(out.read_text(encoding="utf-8"))
            except (OSError, json.JSONDecodeError) as exc:
                raise EvaluatorError(f"malformed evaluator result: {exc}", _tail(proc.stderr)) from None
        score = result.get("miou") if isinstance(result, dict) else None
        if isinstance(score, bool) or not isinstance(score, (int, float)) or not 0 <= score <= 1:
            raise EvaluatorError(f"evaluator result has no miou in [0, 1]: {result!r}")
        return float(score)


def _tail(text, n: int = 2000) -> str:
    if not text:
        return ""
    if isinstance(text, bytes):
        text = text.decode(errors="replace")
    return text[-n:]


def evaluate_external(cfg: StrategyConfig, command, seed: int = 0, timeout: float | None = None) -> float:
    return ExternalEvaluator(command, timeout)(cfg, seed)


# ---------------------------------------------------------------------------
# proxy evaluator

def pixel_features(image: np.ndarray) -> np.ndarray:
    """Per-pixel features: channels, normalized (x, y), 3x3 channel means, bias."""
    img = image.astype(np.float64) / 255.0
    if img.ndim == 2:
        img = img[:, :, None]
    h, w, c = img.shape
    padded = np.pad(img, ((1, 1), (1, 1), (0, 0)), mode="edge")
    local = sum(padded[dy:dy + h, dx:dx + w] for dy in range(3) for dx in range(3)) / 9.0
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    xx /= max(w - 1, 1)
    yy /= max(h - 1, 1)
    feats = np.concatenate(
        [img, xx[..., None], yy[..., None], local, np.ones((h, w, 1))], axis=2
    )
    return feats.reshape(h * w, -1)


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


@dataclass
class ProxyEvaluator:
    """Desk-scale stand-in for network training.

    Trains a class-weighted multinomial linear pixel classifier on augmented
    training images for a few epochs (fixed full-batch gradient steps per
    epoch), then scores mIoU on the unaugmented validation split.
    """

    dataset: "SegDataset"
    epochs: int = 4
    steps_per_epoch: int = 40
    learning_rate: float = 1.0

    def __call__(self, cfg: StrategyConfig, seed: int) -> float:
        return self.evaluate(cfg, seed).miou

    def evaluate(self, cfg: StrategyConfig, seed: int) -> EvalResult:
        ds = self.dataset
        if not ds.train or not ds.val:
            raise ValueError("proxy evaluation needs non-empty train and val splits")
        k = ds.k
        weights = class_weights([m for _, m in ds.train], k, ds.ignore_index)
        n_feat = pixel_features(ds.train[0][0][:1, :1]).shape[1]
        coef = np.zeros((n_feat, k))
        for epoch in range(self.epochs):
            clock = EpochClock(epoch, self.epochs)
            xs, ys = [], []
            for index, (image, mask) in enumerate(ds.train):
                plan = sample_plan(cfg, plan_rng(seed, epoch, index), clock)
                aug_img, aug_mask = apply_plan(plan, image, mask, ds.ignore_index)
                keep = aug_mask.ravel() != ds.ignore_index
                xs.append(pixel_features(aug_img)[keep])
                ys.append(aug_mask.ravel()[keep].astype(np.int64))
            x = np.concatenate(xs)
            y = np.concatenate(ys)
            if y.size == 0:
                continue
            onehot = np.eye(k)[y]
            sample_w = weights[y]
            norm = sample_w.sum()
            for _ in range(self.steps_per_epoch):
                prob = _softmax(x @ coef)
                grad = x.T @ ((prob - onehot) * sample_w[:, None]) / norm
                coef -= self.learning_rate * grad
        preds = []
        for image, mask in ds.val:
            scores = pixel_features(image) @ coef
            preds.append(scores.argmax(axis=1).reshape(mask.shape).astype(np.uint8))
        return miou(preds, [m for _, m in ds.val], k, ds.ignore_index)


def evaluate_proxy(cfg: StrategyConfig, dataset, seed: int, **kwargs) -> float:
    return ProxyEvaluator(dataset, **kwargs)(cfg, seed)

