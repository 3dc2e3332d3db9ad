"""Training loop, evaluation, and the splittable randomness scheme.

One seed drives everything through independent named streams, so any
piece of the run can be reproduced in isolation:

  stream 0  parameter init
  stream 1  training degradations, keyed (img_idx, spec_idx)
  stream 2  epoch shuffles, keyed (epoch,)
  stream 3  evaluation degradations, keyed (img_idx,)

Resuming from a checkpoint re-derives the same streams, so a resumed run
is bit-identical to an uninterrupted one.
"""

from __future__ import annotations

import os

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig
from .metrics import MetricsReport, psnr, ssim
from .network import MemNet, multi_loss
from .optim import clip_gradients, lr_at, sgd_step
from .pipeline import DegradationSpec, PatchSet, apply_degradation, build_training_set
from .tensor import NonFiniteError, Tensor, backward, mse_half, no_grad

STREAM_INIT = 0
STREAM_DEGRADE = 1
STREAM_SHUFFLE = 2
STREAM_EVAL = 3


def stream_rng(seed: int, stream: int, *ids: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(stream, *ids)))


def build_network(cfg: RunConfig) -> MemNet:
    return MemNet(cfg.arch, stream_rng(cfg.train.seed, STREAM_INIT))


def training_patches(cfg: RunConfig, images: list[np.ndarray]) -> PatchSet:
    def make_rng(img_idx: int, spec_idx: int) -> np.random.Generator:
        return stream_rng(cfg.train.seed, STREAM_DEGRADE, img_idx, spec_idx)

    return build_training_set(images, cfg.task, make_rng)


def _loss_tensor(net: MemNet, x: Tensor, target: Tensor) -> Tensor:
    n = x.shape[0]
    if net.config.multi_supervised:
        final, preds = net.forward_multi(x, "train")
        return multi_loss(preds, final, target, net.config.alpha, n)
    out = net.forward(x, "train")
    return mse_half(out, target, scale_factor=1.0 / (2.0 * n))


def run_training(cfg: RunConfig, patches: PatchSet,
                 log_path=None, checkpoint_dir=None, resume_from=None,
                 max_iterations: int | None = None, stop_loss: float | None = None,
                 progress=None) -> tuple[MemNet, list[tuple[int, int, float, float]]]:
    """Train on a prepared patch set.

    Returns the network and the loss history as (iteration, epoch, lr, loss)
    rows, matching the CSV log.  ``resume_from`` restarts after the stored
    epoch; ``max_iterations``/``stop_loss`` end the run early (the overfit
    and budget-limited modes).
    """
    tcfg = cfg.train
    p_total = len(patches)
    if p_total == 0:
        raise ValueError("empty patch set")
    n_batches = max(p_total // tcfg.batch_size, 1)

    net = build_network(cfg)
    start_epoch = 0
    if resume_from is not None:
        _, start_epoch = load_checkpoint(resume_from, net)
        if start_epoch >= tcfg.epochs:
            raise ValueError(
                f"checkpoint already at epoch {start_epoch} of {tcfg.epochs}")
    params = net.parameters()

    history: list[tuple[int, int, float, float]] = []
    iteration = start_epoch * n_batches
    log = None
    if log_path is not None:
        fresh = resume_from is None or not os.path.exists(log_path)
        log = open(log_path, "a" if not fresh else "w")
        if fresh:
            log.write("iteration,epoch,lr,loss\n")

    def emit(epoch_1b: int, lr: float, loss: float) -> None:
        history.append((iteration, epoch_1b, lr, loss))
        if log is not None:
            log.write(f"{iteration},{epoch_1b},{lr!r},{loss!r}\n")

    try:
        stop = False
        for epoch in range(start_epoch, tcfg.epochs):
            lr = lr_at(epoch, tcfg)
            perm = stream_rng(tcfg.seed, STREAM_SHUFFLE, epoch).permutation(p_total)
            for b in range(n_batches):
                # with fewer patches than one batch this slice is the whole set
                idx = perm[b * tcfg.batch_size:(b + 1) * tcfg.batch_size]
                iteration += 1
                try:
                    x = Tensor(patches.degraded[idx])
                    target = Tensor(patches.clean[idx])
                    loss_t = _loss_tensor(net, x, target)
                    loss = loss_t.item()
                    backward(loss_t)
                    if tcfg.clip_norm is not None:
                        clip_gradients(params, tcfg.clip_norm)
                    sgd_step(params, lr, tcfg)
                except NonFiniteError as err:
                    if log is not None:
                        log.write(f"# aborted at iteration {iteration}: {err}\n")
                    raise RuntimeError(
                        f"non-finite loss at iteration {iteration}: {err}") from err
                emit(epoch + 1, lr, loss)
                if progress is not None:
                    progress(iteration, epoch + 1, lr, loss)
                if stop_loss is not None and loss < stop_loss:
                    stop = True
                if max_iterations is not None and iteration >= max_iterations:
                    stop = True
                if stop:
                    break
            # an early stop on the last batch still completes the epoch
            epoch_done = not stop or b == n_batches - 1
            if checkpoint_dir is not None and epoch_done:
                save_checkpoint(net, epoch + 1,
                                os.path.join(checkpoint_dir, f"epoch_{epoch + 1:04d}.memn"))
            if stop:
                break
    finally:
        if log is not None:
            log.close()
    return net, history


def infer_image(net: MemNet, img: np.ndarray) -> np.ndarray:
    """Restore one full image (inference mode, clipped to [0, 1])."""
    x = Tensor(np.asarray(img, dtype=np.float32)[None, None, :, :])
    with no_grad():
        out = net.forward(x, "eval")
    return np.clip(out.data[0, 0], 0.0, 1.0).astype(np.float32)


def infer_intermediates(net: MemNet, img: np.ndarray) -> list[np.ndarray]:
    """Per-block predictions y_1..y_M for one image (inference mode)."""
    x = Tensor(np.asarray(img, dtype=np.float32)[None, None, :, :])
    with no_grad():
        blocks = net._run_blocks(x, "eval")
        preds = [net.reconnet(b) + x for b in blocks]
    return [np.clip(p.data[0, 0], 0.0, 1.0).astype(np.float32) for p in preds]


def evaluate(images: list[np.ndarray], spec: DegradationSpec, seed: int,
             net: MemNet | None = None, shave: int = 0,
             names: list[str] | None = None) -> MetricsReport:
    """PSNR/SSIM over a test set.

    With ``net`` the degraded images are restored first; without it the
    report scores the degraded inputs themselves (the baseline).  Noise
    draws come from the evaluation stream keyed by image index, so the
    baseline and the restored run see identical inputs.
    """
    if names is None:
        names = [f"image_{i:02d}" for i in range(len(images))]
    rows = []
    for idx, img in enumerate(images):
        degraded, clean = apply_degradation(
            img, spec, stream_rng(seed, STREAM_EVAL, idx))
        candidate = infer_image(net, degraded) if net is not None else degraded
        rows.append((names[idx], psnr(candidate, clean, shave),
                     ssim(candidate, clean, shave)))
    return MetricsReport(task=spec.label(), rows=rows)
