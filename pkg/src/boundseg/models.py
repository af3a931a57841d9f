"""The three-stage pipeline: encoder -> boundary-distance regression
head -> pixel classifier, trained end-to-end with a shifting loss weight.

The encoder downsamples by 8 (three stride-2 ceil-mode pools) and keeps
resolution through two atrous blocks; each head upsamples with exactly
three stride-2 transposed convolutions and is center-cropped back to the
input size.  The classifier consumes the regression head's output (not
the image), so both losses drive the encoder and regression head.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import (
    DivergedTraining,
    InvalidParams,
    IoFailure,
    ShapeMismatch,
)
from .imgio import read_fmap, read_pgm_image, read_pgm_mask
from .nn import checkpoint as ckpt
from .nn import ops
from .nn.layers import (
    Conv2d,
    MaxPool2d,
    Param,
    ReLU,
    Sequential,
    TransposedConv2d,
    sgd_step,
)
from .nn.ops import ConvSpec, DeconvSpec
from .phantom import read_manifest

DOWNSAMPLE_FACTOR = 8
DECONV_KERNEL = 4  # k=4, s=2, p=1 doubles the spatial size exactly


# ---------------------------------------------------------------------------
# configuration

@dataclass(frozen=True)
class EncoderSpec:
    """Stack of 3x3 conv blocks; pooled blocks halve resolution (ceil),
    later blocks keep it with atrous dilation."""

    in_channels: int = 3
    widths: tuple[int, ...] = (16, 32, 64, 64, 64)
    pools: tuple[bool, ...] = (True, True, True, False, False)
    dilations: tuple[int, ...] = (1, 1, 1, 2, 4)

    def __post_init__(self):
        if not (len(self.widths) == len(self.pools) == len(self.dilations)):
            raise InvalidParams("encoder widths/pools/dilations lengths differ")
        if sum(self.pools) != 3:
            raise InvalidParams(
                f"encoder needs exactly 3 pooling stages for the x{DOWNSAMPLE_FACTOR} "
                f"downsampling factor, got {sum(self.pools)}")
        if any(d < 1 for d in self.dilations) or any(w < 1 for w in self.widths):
            raise InvalidParams("encoder widths and dilations must be >= 1")


@dataclass(frozen=True)
class HeadSpec:
    """1x1 projection, three stride-2 deconvs, 1x1 linear output."""

    project: int = 128
    deconv_widths: tuple[int, int, int] = (64, 32, 16)
    out_channels: int = 1

    def __post_init__(self):
        if len(self.deconv_widths) != 3:
            raise InvalidParams(
                f"head needs exactly 3 stride-2 deconv layers, "
                f"got {len(self.deconv_widths)}")
        if self.project < 1 or self.out_channels < 1 or min(self.deconv_widths) < 1:
            raise InvalidParams("head widths must be >= 1")


@dataclass(frozen=True)
class ClassifierSpec:
    """Two 3x3 conv layers (ReLU) then 1x1 conv to 2 channels, run at
    full resolution on the predicted map; `mirror` swaps in the full
    encoder+head architecture instead."""

    widths: tuple[int, ...] = (16, 16)
    dilations: tuple[int, ...] | None = None
    mirror: bool = False

    def __post_init__(self):
        if self.dilations is not None and len(self.dilations) != len(self.widths):
            raise InvalidParams("classifier dilations must match widths")
        if min(self.widths, default=1) < 1:
            raise InvalidParams("classifier widths must be >= 1")


@dataclass(frozen=True)
class PipelineConfig:
    input_size: tuple[int, int] = (64, 64)
    encoder: EncoderSpec = EncoderSpec()
    head: HeadSpec = HeadSpec()
    classifier: ClassifierSpec = ClassifierSpec()

    def __post_init__(self):
        h, w = self.input_size
        if h < 16 or w < 16:
            raise InvalidParams(f"input size {h}x{w} too small (need >= 16)")

    def feature_size(self) -> tuple[int, int]:
        h, w = self.input_size
        return (math.ceil(h / DOWNSAMPLE_FACTOR), math.ceil(w / DOWNSAMPLE_FACTOR))


@dataclass(frozen=True)
class LossSchedule:
    """Per-epoch loss weight: lambda * l2 + (1 - lambda) * cross-entropy,
    interpolated linearly from start to end over the run."""

    lambda_start: float = 0.9
    lambda_end: float = 0.1
    total_epochs: int = 60

    def __post_init__(self):
        for v in (self.lambda_start, self.lambda_end):
            if not 0.0 <= v <= 1.0:
                raise InvalidParams(f"lambda {v} outside [0, 1]")
        if self.lambda_start < self.lambda_end:
            raise InvalidParams("lambda must not increase over training")
        if self.total_epochs < 1:
            raise InvalidParams("need at least one epoch")

    def lambda_at(self, epoch: int) -> float:
        if self.total_epochs == 1:
            return self.lambda_start
        t = epoch / (self.total_epochs - 1)
        lam = self.lambda_start + (self.lambda_end - self.lambda_start) * t
        return min(1.0, max(0.0, lam))


def desk_config() -> PipelineConfig:
    """Small configuration that trains in minutes on a CPU."""
    return PipelineConfig()


def reference_config() -> PipelineConfig:
    """Full-scale topology: 321x321 inputs, 41x41x1024 features, and a
    mirrored classifier."""
    return PipelineConfig(
        input_size=(321, 321),
        encoder=EncoderSpec(widths=(64, 128, 256, 512, 1024)),
        head=HeadSpec(project=256, deconv_widths=(128, 64, 32)),
        classifier=ClassifierSpec(mirror=True),
    )


def brn_training_schedule(total_epochs: int = 60) -> LossSchedule:
    """Regression-only training (lambda pinned at 1): the standalone
    boundary regression network used as the BRN baseline."""
    return LossSchedule(1.0, 1.0, total_epochs)


def shape_plan(config: PipelineConfig) -> dict:
    """Spatial sizes at each pipeline stage, from pure shape arithmetic."""
    h, w = config.input_size

    def pooled(s: int) -> int:
        return math.ceil((s - 2) / 2) + 1  # window 2, stride 2, ceil mode

    stages = [(h, w)]
    for pool in config.encoder.pools:
        if pool:
            h, w = pooled(h), pooled(w)
        stages.append((h, w))
    feats = (h, w)
    deconvs = []
    for _ in range(3):
        h, w = 2 * h, 2 * w  # k=4, s=2, p=1
        deconvs.append((h, w))
    return {"encoder": stages, "features": feats, "deconvs": deconvs,
            "head_raw": deconvs[-1], "output": config.input_size}


# ---------------------------------------------------------------------------
# model assembly

def _build_encoder(spec: EncoderSpec, rng, dtype, name: str) -> Sequential:
    layers = []
    c = spec.in_channels
    for width, pool, dil in zip(spec.widths, spec.pools, spec.dilations):
        layers.append(Conv2d(ConvSpec(c, width, (3, 3), padding=dil, dilation=dil),
                             rng, dtype))
        layers.append(ReLU())
        if pool:
            layers.append(MaxPool2d(2, 2, ceil_mode=True))
        c = width
    return Sequential(layers, name=name)


def _build_head(in_channels: int, spec: HeadSpec, rng, dtype, name: str) -> Sequential:
    layers = [Conv2d(ConvSpec(in_channels, spec.project, (1, 1)), rng, dtype), ReLU()]
    c = spec.project
    for width in spec.deconv_widths:
        layers.append(TransposedConv2d(
            DeconvSpec(c, width, (DECONV_KERNEL, DECONV_KERNEL), stride=2, padding=1),
            rng, dtype))
        layers.append(ReLU())
        c = width
    layers.append(Conv2d(ConvSpec(c, spec.out_channels, (1, 1)), rng, dtype))
    return Sequential(layers, name=name)


def _build_conv_classifier(spec: ClassifierSpec, rng, dtype, name: str) -> Sequential:
    dilations = spec.dilations or tuple(1 for _ in spec.widths)
    layers = []
    c = 1
    for width, dil in zip(spec.widths, dilations):
        layers.append(Conv2d(ConvSpec(c, width, (3, 3), padding=dil, dilation=dil),
                             rng, dtype))
        layers.append(ReLU())
        c = width
    layers.append(Conv2d(ConvSpec(c, 2, (1, 1)), rng, dtype))
    return Sequential(layers, name=name)


class _CropToInput:
    """Differentiable center crop from the head's raw output down to the
    input size; backward scatters the gradient back into a zero frame."""

    def __init__(self, target: tuple[int, int]):
        self.target = target
        self._raw_shape = None
        self._offset = None

    def forward(self, raw: np.ndarray) -> np.ndarray:
        th, tw = self.target
        rh, rw = raw.shape[2], raw.shape[3]
        if rh < th or rw < tw:
            raise ShapeMismatch(f"head output {rh}x{rw} smaller than input {th}x{tw}")
        t, l = (rh - th) // 2, (rw - tw) // 2
        self._raw_shape = raw.shape
        self._offset = (t, l)
        return raw[:, :, t : t + th, l : l + tw]

    def backward(self, gy: np.ndarray) -> np.ndarray:
        t, l = self._offset
        th, tw = self.target
        g = np.zeros(self._raw_shape, dtype=gy.dtype)
        g[:, :, t : t + th, l : l + tw] = gy
        return g


class SegmentationModel:
    """Encoder, regression head, and classifier with shared backprop."""

    def __init__(self, config: PipelineConfig, seed: int = 0, dtype=np.float32):
        self.config = config
        self.dtype = dtype
        rng = np.random.default_rng(seed)
        self.encoder = _build_encoder(config.encoder, rng, dtype, "encoder")
        self.head = _build_head(config.encoder.widths[-1], config.head, rng,
                                dtype, "head")
        self._crop = _CropToInput(config.input_size)
        if config.classifier.mirror:
            cls_encoder = EncoderSpec(
                in_channels=1,
                widths=config.encoder.widths,
                pools=config.encoder.pools,
                dilations=config.encoder.dilations)
            self.classifier = Sequential(
                _build_encoder(cls_encoder, rng, dtype, "cls_enc").layers
                + _build_head(config.encoder.widths[-1],
                              HeadSpec(project=config.head.project,
                                       deconv_widths=config.head.deconv_widths,
                                       out_channels=2),
                              rng, dtype, "cls_head").layers,
                name="classifier")
            self._cls_crop = _CropToInput(config.input_size)
        else:
            self.classifier = _build_conv_classifier(config.classifier, rng,
                                                     dtype, "classifier")
            self._cls_crop = None

    # -- parameters ---------------------------------------------------------

    def named_params(self) -> list[tuple[str, Param]]:
        return self.encoder.params() + self.head.params() + self.classifier.params()

    def regression_params(self) -> list[tuple[str, Param]]:
        return self.encoder.params() + self.head.params()

    def zero_grads(self) -> None:
        for _, p in self.named_params():
            p.grad = np.zeros_like(p.data)

    # -- forward / backward -------------------------------------------------

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """x is (n, in_channels, h, w); returns (pred_dmap, logits)."""
        h, w = self.config.input_size
        if x.ndim != 4 or x.shape[1] != self.config.encoder.in_channels \
                or x.shape[2:] != (h, w):
            raise ShapeMismatch(
                f"input {x.shape} does not match config "
                f"(n, {self.config.encoder.in_channels}, {h}, {w})")
        feats = self.encoder.forward(x)
        pred = self._crop.forward(self.head.forward(feats))
        logits = self.classifier.forward(pred)
        if self._cls_crop is not None:
            logits = self._cls_crop.forward(logits)
        return pred, logits

    def backward(self, g_pred: np.ndarray | None,
                 g_logits: np.ndarray | None) -> None:
        """Accumulate parameter gradients; either cotangent may be None.
        Gradients from the classifier flow through the predicted map into
        the regression head and encoder (end-to-end)."""
        if g_pred is None and g_logits is None:
            raise ShapeMismatch("backward needs at least one cotangent")
        total = None
        if g_logits is not None:
            gl = g_logits
            if self._cls_crop is not None:
                gl = self._cls_crop.backward(gl)
            total = self.classifier.backward(gl)
        if g_pred is not None:
            total = g_pred if total is None else total + g_pred
        g_feats = self.head.backward(self._crop.backward(total))
        self.encoder.backward(g_feats)  # input gradient is discarded


def pseudo_color(img: np.ndarray, dtype=np.float32) -> np.ndarray:
    """Duplicate a grayscale image (h, w) or batch (k, h, w) into three
    identical channels: (k, 3, h, w)."""
    arr = np.asarray(img, dtype=dtype)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise ShapeMismatch(f"expected (h, w) or (k, h, w), got {arr.shape}")
    return np.repeat(arr[:, None, :, :], 3, axis=1)


def combined_loss(pred_dmap: np.ndarray, gt_dmap: np.ndarray,
                  logits: np.ndarray, gt_mask: np.ndarray,
                  lam: float) -> float:
    """lambda * l2(pred, gt map) + (1 - lambda) * softmax CE(logits, mask)."""
    if not 0.0 <= lam <= 1.0:
        raise InvalidParams(f"lambda {lam} outside [0, 1]")
    l2 = ops.l2_loss(pred_dmap, gt_dmap) if lam > 0.0 else 0.0
    ce = ops.softmax_ce_loss(logits, gt_mask) if lam < 1.0 else 0.0
    return lam * l2 + (1.0 - lam) * ce


# ---------------------------------------------------------------------------
# training

class EpochRecord(NamedTuple):
    epoch: int
    lam: float
    l2: float | None       # None when lambda == 0 for the whole epoch
    ce: float | None       # None when lambda == 1 for the whole epoch
    val_dice: float | None  # None when the manifest has no test split


def _mask_dice(a: np.ndarray, b: np.ndarray) -> float:
    a = a.astype(bool)
    b = b.astype(bool)
    total = int(a.sum()) + int(b.sum())
    return 1.0 if total == 0 else 2.0 * int((a & b).sum()) / total


def _load_split(records, split: str, dtype, with_dmaps: bool):
    imgs, masks, dmaps = [], [], []
    for r in records:
        if r.split != split:
            continue
        imgs.append(read_pgm_image(r.image).astype(dtype))
        masks.append(read_pgm_mask(r.mask))
        if with_dmaps:
            dmaps.append(read_fmap(r.dmap).astype(dtype))
    return imgs, masks, dmaps


def _batch_indices(n: int, batch_size: int):
    return [range(i, min(i + batch_size, n)) for i in range(0, n, batch_size)]


def train(manifest, config: PipelineConfig, schedule: LossSchedule, lr: float,
          *, momentum: float = 0.9, batch_size: int = 8, seed: int = 0,
          checkpoint_path=None, log_path=None,
          ) -> tuple[SegmentationModel, list[EpochRecord]]:
    """Seeded-shuffled minibatch SGD on the combined loss.

    Trains on the manifest's `train` split; the `test` split, when
    present, is scored (Dice) after every epoch for the log.  Ground
    truth distance maps are only ever read when some epoch has
    lambda > 0.  Bit-reproducible given (seed, single-thread numpy).
    """
    records = manifest if isinstance(manifest, list) else read_manifest(manifest)
    model = SegmentationModel(config, seed=seed)
    dtype = model.dtype

    lambdas = [schedule.lambda_at(e) for e in range(schedule.total_epochs)]
    needs_dmaps = any(lam > 0.0 for lam in lambdas)
    imgs, masks, dmaps = _load_split(records, "train", dtype, needs_dmaps)
    if not imgs:
        raise InvalidParams("manifest has no train samples")
    val_imgs, val_masks, _ = _load_split(records, "test", dtype, False)

    n = len(imgs)
    x_all = pseudo_color(np.stack(imgs), dtype)
    m_all = np.stack(masks).astype(np.int64)
    d_all = np.stack(dmaps)[:, None, :, :] if needs_dmaps else None

    params = [p for _, p in model.named_params()]
    rng = np.random.default_rng(seed)
    log: list[EpochRecord] = []

    for epoch in range(schedule.total_epochs):
        lam = lambdas[epoch]
        order = rng.permutation(n)
        l2_sum = ce_sum = 0.0
        for batch in _batch_indices(n, batch_size):
            idx = order[list(batch)]
            x = x_all[idx]
            pred, logits = model.forward(x)
            model.zero_grads()
            g_pred = g_logits = None
            l2 = ce = 0.0
            if lam > 0.0:
                gt = d_all[idx]
                l2 = ops.l2_loss(pred, gt)
                g_pred = (lam * ops.l2_loss_grad(pred, gt)).astype(dtype)
                l2_sum += l2 * len(idx)
            if lam < 1.0:
                labels = m_all[idx]
                ce = ops.softmax_ce_loss(logits, labels)
                g_logits = ((1.0 - lam) * ops.softmax_ce_grad(logits, labels)
                            ).astype(dtype)
                ce_sum += ce * len(idx)
            total = lam * l2 + (1.0 - lam) * ce
            if not math.isfinite(total):
                raise DivergedTraining(
                    f"non-finite loss {total} at epoch {epoch}")
            model.backward(g_pred, g_logits)
            sgd_step(params, lr, momentum)

        val_dice = None
        if val_imgs:
            preds = segment_batch(np.stack(val_imgs), model)
            val_dice = float(np.mean([_mask_dice(p, m)
                                      for p, m in zip(preds, val_masks)]))
        log.append(EpochRecord(
            epoch=epoch,
            lam=lam,
            l2=(l2_sum / n) if lam > 0.0 else None,
            ce=(ce_sum / n) if lam < 1.0 else None,
            val_dice=val_dice,
        ))

    if log_path is not None:
        write_training_log(log_path, log)
    if checkpoint_path is not None:
        save_model(checkpoint_path, model)
    return model, log


def write_training_log(path, records: list[EpochRecord]) -> None:
    """One structured record per epoch: epoch, lambda, l2, ce, val_dice."""
    def fmt(v):
        return "na" if v is None else repr(v)

    try:
        with open(path, "w") as f:
            f.write("# epoch\tlambda\tl2\tce\tval_dice\n")
            for r in records:
                f.write(f"{r.epoch}\t{r.lam!r}\t{fmt(r.l2)}\t{fmt(r.ce)}"
                        f"\t{fmt(r.val_dice)}\n")
    except OSError as e:
        raise IoFailure(f"cannot write training log {path}: {e}") from e


def read_training_log(path) -> list[EpochRecord]:
    def parse(v):
        return None if v == "na" else float(v)

    out = []
    try:
        with open(path) as f:
            for line in f:
                line = line.rstrip("\n")
                if not line or line.startswith("#"):
                    continue
                e, lam, l2, ce, vd = line.split("\t")
                out.append(EpochRecord(int(e), float(lam), parse(l2),
                                       parse(ce), parse(vd)))
    except OSError as e:
        raise IoFailure(f"cannot read training log {path}: {e}") from e
    return out


# ---------------------------------------------------------------------------
# inference

def _as_model(model_or_path) -> SegmentationModel:
    if isinstance(model_or_path, SegmentationModel):
        return model_or_path
    return load_model(model_or_path)


def segment_batch(imgs: np.ndarray, model) -> np.ndarray:
    """Segment a (k, h, w) stack; argmax over logits, ties -> background."""
    model = _as_model(model)
    _, logits = model.forward(pseudo_color(imgs, model.dtype))
    return (logits[:, 1] > logits[:, 0]).astype(np.uint8)


def segment(img: np.ndarray, model) -> np.ndarray:
    """Per-pixel argmax over the two logit channels for one image."""
    if np.asarray(img).ndim != 2:
        raise ShapeMismatch(f"expected a single (h, w) image, got {np.asarray(img).shape}")
    return segment_batch(np.asarray(img)[None], model)[0]


def predict_dmap(img: np.ndarray, model, raw: bool = False) -> np.ndarray:
    """Regression-head output for one image, clamped to [0, 1] unless
    `raw` asks for the unclamped values."""
    if np.asarray(img).ndim != 2:
        raise ShapeMismatch(f"expected a single (h, w) image, got {np.asarray(img).shape}")
    model = _as_model(model)
    pred, _ = model.forward(pseudo_color(np.asarray(img)[None], model.dtype))
    out = pred[0, 0]
    return out if raw else np.clip(out, 0.0, 1.0)


# ---------------------------------------------------------------------------
# persistence

def _config_to_dict(config: PipelineConfig) -> dict:
    return {
        "input_size": list(config.input_size),
        "encoder": {
            "in_channels": config.encoder.in_channels,
            "widths": list(config.encoder.widths),
            "pools": list(config.encoder.pools),
            "dilations": list(config.encoder.dilations),
        },
        "head": {
            "project": config.head.project,
            "deconv_widths": list(config.head.deconv_widths),
            "out_channels": config.head.out_channels,
        },
        "classifier": {
            "widths": list(config.classifier.widths),
            "dilations": (None if config.classifier.dilations is None
                          else list(config.classifier.dilations)),
            "mirror": config.classifier.mirror,
        },
    }


def _config_from_dict(d: dict) -> PipelineConfig:
    enc = d["encoder"]
    head = d["head"]
    cls = d["classifier"]
    return PipelineConfig(
        input_size=tuple(d["input_size"]),
        encoder=EncoderSpec(
            in_channels=enc["in_channels"],
            widths=tuple(enc["widths"]),
            pools=tuple(bool(p) for p in enc["pools"]),
            dilations=tuple(enc["dilations"])),
        head=HeadSpec(
            project=head["project"],
            deconv_widths=tuple(head["deconv_widths"]),
            out_channels=head["out_channels"]),
        classifier=ClassifierSpec(
            widths=tuple(cls["widths"]),
            dilations=(None if cls["dilations"] is None
                       else tuple(cls["dilations"])),
            mirror=cls["mirror"]),
    )


def _sidecar(path) -> Path:
    return Path(path).with_suffix(".json")


def save_model(path, model: SegmentationModel) -> None:
    """Write parameters in the checkpoint format plus a JSON config
    sidecar next to it, both byte-deterministic."""
    ckpt.save_checkpoint(path, [(n, p.data) for n, p in model.named_params()])
    try:
        _sidecar(path).write_text(
            json.dumps({"config": _config_to_dict(model.config)},
                       sort_keys=True, separators=(",", ":")) + "\n")
    except OSError as e:
        raise IoFailure(f"cannot write config sidecar for {path}: {e}") from e


def load_model(path, dtype=np.float32) -> SegmentationModel:
    """Rebuild a model from a checkpoint and its config sidecar."""
    sidecar = _sidecar(path)
    try:
        meta = json.loads(sidecar.read_text())
    except OSError as e:
        raise IoFailure(f"cannot read config sidecar {sidecar}: {e}") from e
    except json.JSONDecodeError as e:
        raise IoFailure(f"malformed config sidecar {sidecar}: {e}") from e
    model = SegmentationModel(_config_from_dict(meta["config"]), seed=0, dtype=dtype)
    arrays = ckpt.load_checkpoint(path)
    for name, p in model.named_params():
        if name not in arrays:
            raise ShapeMismatch(f"checkpoint missing parameter {name!r}")
        arr = arrays.pop(name)
        if arr.size != p.data.size:
            raise ShapeMismatch(
                f"checkpoint parameter {name!r} has {arr.size} values, "
                f"model expects {p.data.size}")
        p.data = arr.reshape(p.data.shape).astype(dtype)
    if arrays:
        raise ShapeMismatch(f"checkpoint has extra parameters {sorted(arrays)}")
    return model
