"""Optimization loop, sliding-window whole-volume inference, evaluation
and checkpointing.

Set ``UADSN_DETERMINISTIC=1`` to force deterministic torch kernels; all
other randomness flows from the configured seed.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch

from .grid import BinaryMask, ShapeError, Volume, binarize, largest_component
from .losses import LossWeights, StreamOutputs, total_loss
from .metrics import MetricsReport, aggregate_reports, compute_case_metrics
from .nets import UNet2d, UNet3d, UNetConfig
from .phantom import Sample, augment, sample_block
from .skeleton import skeletonize_array


class TrainingDivergedError(RuntimeError):
    """The loss went non-finite; carries the offending term and iteration."""


@dataclass(frozen=True)
class TrainConfig:
    """Every knob of a training run.

    ``block_size`` follows the (X, Y, Z) convention, i.e. (W, H, D) of the
    array layout; the default (64, 64, 32) means blocks of array shape
    (32, 64, 64).
    """

    learning_rate: float = 1e-3
    adamw_betas: tuple[float, float] = (0.9, 0.999)
    weight_decay: float = 5e-4
    batch_size: int = 4
    t_max: int = 5000
    alpha: float = 0.5
    beta_max: float = 0.1
    epsilon: float = 1e-5
    binarize_threshold: float = 0.5
    soft_skeleton_iterations: int = 5
    block_size: tuple[int, int, int] = (64, 64, 32)
    seed: int = 0
    checkpoint_every: int = 1000
    base_channels: int = 8
    levels_3d: int = 3
    levels_2d: int = 4
    use_sse: bool = True
    dual_stream: bool = True
    aug_crop_fraction: tuple[float, float] = (0.9, 1.0)
    aug_scale_range: tuple[float, float] = (0.9, 1.1)
    aug_rotate_deg: float = 15.0
    aug_mirror_prob: float = 0.5

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.t_max < 1:
            raise ValueError("t_max must be >= 1")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if not 0.0 < self.binarize_threshold < 1.0:
            raise ValueError("binarize_threshold must lie in (0, 1)")
        if self.soft_skeleton_iterations < 1:
            raise ValueError("soft_skeleton_iterations must be >= 1")
        if self.checkpoint_every < 1:
            raise ValueError("checkpoint_every must be >= 1")

    @property
    def block_shape_dhw(self) -> tuple[int, int, int]:
        bx, by, bz = self.block_size
        return (bz, by, bx)


def apply_determinism_env() -> None:
    if os.environ.get("UADSN_DETERMINISTIC", "0") == "1":
        torch.use_deterministic_algorithms(True)


def build_models(cfg: TrainConfig) -> tuple[UNet3d, UNet2d | None]:
    """Instantiate the streams and validate their pooling against the block.

    Raises ValueError at construction when a pooled axis of the block is
    not divisible by the pooling factor.
    """
    cfg3 = UNetConfig(
        "3d", levels=cfg.levels_3d, base_channels=cfg.base_channels, use_sse=cfg.use_sse
    )
    cfg3.check_extent(cfg.block_shape_dhw)
    net3d = UNet3d(cfg3).to(memory_format=torch.channels_last_3d)
    net2d = None
    if cfg.dual_stream:
        cfg2 = UNetConfig(
            "2d", levels=cfg.levels_2d, base_channels=cfg.base_channels,
            use_sse=cfg.use_sse,
        )
        cfg2.check_extent(cfg.block_shape_dhw[1:])
        net2d = UNet2d(cfg2)
    return net3d, net2d


def save_checkpoint(path, net3d: UNet3d, net2d: UNet2d | None, cfg: TrainConfig,
                    iteration: int) -> Path:
    """Single-archive checkpoint: parameters under their hierarchical module
    names, plus the network and training configuration used."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format_version": 1,
        "iteration": iteration,
        "train_config": asdict(cfg),
        "model_3d": net3d.state_dict(),
        "unet3d_config": asdict(net3d.config),
        "model_2d": net2d.state_dict() if net2d is not None else None,
        "unet2d_config": asdict(net2d.config) if net2d is not None else None,
    }
    torch.save(payload, path)
    return path


@dataclass
class Checkpoint:
    train_config: TrainConfig
    net3d: UNet3d
    net2d: UNet2d | None
    iteration: int


def load_checkpoint(path) -> Checkpoint:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    tc = dict(payload["train_config"])
    for key in ("adamw_betas", "block_size", "aug_crop_fraction", "aug_scale_range"):
        tc[key] = tuple(tc[key])
    cfg = TrainConfig(**tc)
    net3d = UNet3d(UNetConfig(**payload["unet3d_config"]))
    net3d.load_state_dict(payload["model_3d"])
    net3d.eval()
    net2d = None
    if payload["model_2d"] is not None:
        net2d = UNet2d(UNetConfig(**payload["unet2d_config"]))
        net2d.load_state_dict(payload["model_2d"])
        net2d.eval()
    return Checkpoint(cfg, net3d, net2d, payload["iteration"])


def _slices_through_2d(net2d: UNet2d, blocks: torch.Tensor) -> torch.Tensor:
    """(B, 1, D, H, W) -> per-slice 2D predictions reassembled to blocks."""
    b, _, d, h, w = blocks.shape
    flat = blocks.permute(0, 2, 1, 3, 4).reshape(b * d, 1, h, w)
    out = net2d(flat)
    return out.reshape(b, d, 1, h, w).permute(0, 2, 1, 3, 4)


def _assemble_batch(train_samples, cfg: TrainConfig, rng):
    """Sample, augment and block-crop one batch; labels come with their
    exact thinned skeletons for the topology loss.

    One case is drawn and augmented per batch and all blocks are sampled
    from it, which amortizes the augmentation resampling cost.
    """
    images, labels, skels = [], [], []
    block = cfg.block_shape_dhw
    case = train_samples[int(rng.integers(len(train_samples)))]
    aug = augment(
        case, rng,
        crop_fraction=cfg.aug_crop_fraction,
        scale_range=cfg.aug_scale_range,
        max_rotate_deg=cfg.aug_rotate_deg,
        mirror_prob=cfg.aug_mirror_prob,
        min_size=block,
    )
    if any(a < b for a, b in zip(aug.image.shape, block)):
        aug = case  # scaling shrank a near-block-sized volume below the block
    for _ in range(cfg.batch_size):
        piece = sample_block(aug, rng, block_shape=block)
        images.append(piece.image.data)
        labels.append(piece.label.data)
        if cfg.alpha > 0:
            skels.append(skeletonize_array(piece.label.data))
    x = torch.from_numpy(np.stack(images))[:, None]
    y = torch.from_numpy(np.stack(labels).astype(np.float32))[:, None]
    skel = (
        torch.from_numpy(np.stack(skels).astype(np.float32))[:, None]
        if skels else None
    )
    return x, y, skel


@dataclass
class TrainResult:
    checkpoint_path: Path
    log_path: Path
    iterations: int
    final_loss: float


def train(train_samples, cfg: TrainConfig, out_dir) -> TrainResult:
    """Run the optimization loop and write checkpoints plus a JSONL log.

    One AdamW instance updates both streams jointly. Fully reproducible
    from (dataset, cfg.seed). Aborts with TrainingDivergedError naming the
    offending term if the loss goes non-finite.
    """
    if not train_samples:
        raise ValueError("empty training dataset")
    apply_determinism_env()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    net3d, net2d = build_models(cfg)
    net3d.train()
    params = list(net3d.parameters())
    if net2d is not None:
        net2d.train()
        params += list(net2d.parameters())
    opt = torch.optim.AdamW(
        params, lr=cfg.learning_rate, betas=cfg.adamw_betas,
        weight_decay=cfg.weight_decay,
    )
    log_path = out_dir / "train_log.jsonl"
    ckpt_path = out_dir / "checkpoint_final.pt"
    final_loss = float("nan")
    # flush denormals only around the loop: sigmoid/erosion tails near
    # 1e-38 cost disproportionate CPU time and are irrelevant at training
    # precision. The flag MUST be restored afterwards: with
    # denormals-are-zero set, scipy's KD-tree build (used by the distance
    # metrics) stops making progress and overflows the stack.
    torch.set_flush_denormal(True)
    try:
        with log_path.open("w") as log:
            for t in range(1, cfg.t_max + 1):
                x, y, skel = _assemble_batch(train_samples, cfg, rng)
                x = x.to(memory_format=torch.channels_last_3d)
                prob_3d = net3d(x)
                prob_2d = _slices_through_2d(net2d, x) if net2d is not None else None
                weights = LossWeights(
                    alpha=cfg.alpha, t=t, t_max=cfg.t_max,
                    beta_max=cfg.beta_max, epsilon=cfg.epsilon,
                )
                loss, breakdown = total_loss(
                    StreamOutputs(prob_3d=prob_3d, prob_2d=prob_2d), y, weights,
                    skeleton_iterations=cfg.soft_skeleton_iterations,
                    label_skeleton=skel, threshold=cfg.binarize_threshold,
                )
                final_loss = float(loss.item())
                if not np.isfinite(final_loss):
                    bad = [k for k, v in breakdown.items() if not np.isfinite(v)]
                    raise TrainingDivergedError(
                        f"non-finite loss at iteration {t}: "
                        f"offending terms {bad or ['total']}"
                    )
                opt.zero_grad(set_to_none=True)
                loss.backward()
                opt.step()
                record = {"iter": t, "total": final_loss, **breakdown}
                log.write(json.dumps(record) + "\n")
                if t % cfg.checkpoint_every == 0 and t != cfg.t_max:
                    save_checkpoint(
                        out_dir / f"checkpoint_{t:06d}.pt", net3d, net2d, cfg, t
                    )
    finally:
        torch.set_flush_denormal(False)
    net3d.eval()
    if net2d is not None:
        net2d.eval()
    save_checkpoint(ckpt_path, net3d, net2d, cfg, cfg.t_max)
    return TrainResult(ckpt_path, log_path, cfg.t_max, final_loss)


def _window_starts(extent: int, window: int, overlap: float) -> list[int]:
    if window > extent:
        raise ShapeError(f"volume extent {extent} smaller than window {window}")
    step = max(1, int(round(window * (1.0 - overlap))))
    starts = list(range(0, extent - window + 1, step))
    if starts[-1] != extent - window:
        starts.append(extent - window)
    return starts


def sliding_window_predict(
    net3d: UNet3d,
    volume: Volume,
    overlap: float = 0.5,
    block_shape: tuple[int, int, int] = (32, 64, 64),
    net2d: UNet2d | None = None,
    combine_streams: bool = False,
) -> Volume:
    """Tile the volume with overlapping blocks and average probabilities.

    Overlapped voxels are blended with uniform weights; every voxel is
    covered at least once. With ``combine_streams`` the per-window
    prediction is the mean of the 3D stream and the reassembled 2D stream.
    """
    if not 0.0 <= overlap < 1.0:
        raise ValueError(f"overlap must lie in [0, 1), got {overlap}")
    d, h, w = volume.shape
    bd, bh, bw = block_shape
    acc = np.zeros(volume.shape, dtype=np.float64)
    cover = np.zeros(volume.shape, dtype=np.float64)
    data = volume.data
    net3d.eval()
    if net2d is not None:
        net2d.eval()
    with torch.no_grad():
        for z0 in _window_starts(d, bd, overlap):
            for y0 in _window_starts(h, bh, overlap):
                for x0 in _window_starts(w, bw, overlap):
                    tile = data[z0:z0 + bd, y0:y0 + bh, x0:x0 + bw]
                    x = torch.from_numpy(np.array(tile))[None, None]
                    x = x.to(memory_format=torch.channels_last_3d)
                    prob = net3d(x)
                    if combine_streams and net2d is not None:
                        prob = (prob + _slices_through_2d(net2d, x)) / 2.0
                    acc[z0:z0 + bd, y0:y0 + bh, x0:x0 + bw] += prob[0, 0].numpy()
                    cover[z0:z0 + bd, y0:y0 + bh, x0:x0 + bw] += 1.0
    return Volume(acc / cover, volume.spacing)


def predict_case(
    ckpt: Checkpoint,
    volume: Volume,
    overlap: float = 0.5,
    combine_streams: bool = False,
    postprocess: bool = True,
) -> tuple[Volume, BinaryMask]:
    """Whole-volume probability map and binarized (optionally post-processed)
    mask for one case."""
    cfg = ckpt.train_config
    prob = sliding_window_predict(
        ckpt.net3d, volume, overlap=overlap, block_shape=cfg.block_shape_dhw,
        net2d=ckpt.net2d, combine_streams=combine_streams,
    )
    mask = binarize(prob, cfg.binarize_threshold)
    if postprocess:
        mask = largest_component(mask)
    return prob, mask


def evaluate(
    ckpt: Checkpoint,
    eval_samples,
    postprocess: bool = True,
    overlap: float = 0.5,
    combine_streams: bool = False,
    return_predictions: bool = False,
):
    """Predict and score every evaluation case.

    Returns (reports, aggregate) or (reports, aggregate, masks) when
    ``return_predictions`` is set.
    """
    reports: list[MetricsReport] = []
    masks: list[BinaryMask] = []
    for sample in eval_samples:
        _, mask = predict_case(
            ckpt, sample.image, overlap=overlap,
            combine_streams=combine_streams, postprocess=postprocess,
        )
        reports.append(compute_case_metrics(sample.case_id, mask, sample.label))
        if return_predictions:
            masks.append(mask)
    agg = aggregate_reports(reports)
    if return_predictions:
        return reports, agg, masks
    return reports, agg
