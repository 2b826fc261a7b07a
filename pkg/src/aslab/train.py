"""Adversarial training loop: alternating discriminator and segmenter steps.

Per batch (adversarial mode) the discriminator takes one BCE step on
real-vs-predicted maps, then the segmenter takes one step on
alpha * pixel_mse + beta * score_mse with the discriminator frozen.
"""

from __future__ import annotations

import contextlib
import os
from dataclasses import dataclass, field

import numpy as np

from .checkpoint import Checkpoint, save_checkpoint
from .models import SegmentationModel, ShapeDiscriminator, sd_forward, segment_forward
from .optim import Adam
from .tensor import Tape, Tensor, UsageError, backward, loss_bce, loss_mse, no_grad, sigmoid


@dataclass
class TrainConfig:
    alpha: float = 5.0
    beta: float = 1.0
    lr_seg: float = 2e-4
    lr_disc: float = 1e-4
    batch_size: int = 8
    epochs: int = 30
    seed: int = 0
    binarize_threshold: float = 0.5
    adversarial: bool = True
    augment_flips: bool = True

    def __post_init__(self):
        if self.alpha <= 0 or self.beta < 0:
            raise ValueError("alpha must be > 0 and beta >= 0")
        if not 0.0 < self.binarize_threshold < 1.0:
            raise ValueError("binarize_threshold must lie in (0,1)")
        if self.seed < 0:
            raise ValueError("seed must be a non-negative 64-bit integer")


LOG_HEADER = "epoch,loss_dis,loss_pix,loss_shape,loss_seg"


def binarize(prob_map: np.ndarray, threshold: float) -> np.ndarray:
    """Threshold a probability map; ties (value == threshold) go foreground."""
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0,1)")
    return (np.asarray(prob_map) >= threshold).astype(np.uint8)


@contextlib.contextmanager
def frozen(net):
    """Temporarily stop a net's parameters from collecting gradients."""
    params = net.parameters()
    saved = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad = False
    try:
        yield
    finally:
        for p, s in zip(params, saved):
            p.requires_grad = s


def discriminator_step(model: SegmentationModel, disc: ShapeDiscriminator,
                       images: Tensor, labels: Tensor, opt_d: Adam) -> float:
    """One BCE step on the discriminator; the segmenter stays untouched."""
    with no_grad():
        fake = sigmoid(segment_forward(model, images))
    with Tape():
        s_real = sigmoid(sd_forward(disc, labels))
        s_fake = sigmoid(sd_forward(disc, fake))
        loss = loss_bce(s_real, Tensor(np.ones(s_real.shape))) \
            + loss_bce(s_fake, Tensor(np.zeros(s_fake.shape)))
        backward(loss)
    opt_d.step()
    return loss.item()


def segmenter_step(model: SegmentationModel, disc, images: Tensor,
                   labels: Tensor, cfg: TrainConfig, opt_s: Adam):
    """One step on alpha*L_pix + beta*L_shape with frozen discriminator.

    Returns (loss_total, loss_pix, loss_shape) as floats.
    """
    use_shape = cfg.adversarial and cfg.beta != 0.0 and disc is not None
    with Tape():
        prob = sigmoid(segment_forward(model, images))
        lpix = loss_mse(prob, labels)
        if use_shape:
            with no_grad():
                score_real = sd_forward(disc, labels)
            # freeze spans backward: the closures consult requires_grad then
            with frozen(disc):
                score_fake = sd_forward(disc, prob)
                lshape = loss_mse(score_real.detach(), score_fake)
                total = lpix * cfg.alpha + lshape * cfg.beta
                backward(total)
        else:
            lshape = Tensor(0.0)
            total = lpix * cfg.alpha
            backward(total)
    opt_s.step()
    return total.item(), lpix.item(), lshape.item()


def _adversarial_batch(model, disc, images, labels, cfg, opt_s, opt_d):
    """One discriminator step then one segmenter step, sharing the taped
    segmenter forward (the discriminator update cannot change sigma(P), so
    the result is bit-identical to calling the two steps separately)."""
    with Tape():
        prob = sigmoid(segment_forward(model, images))
        prob_const = prob.detach()
        with Tape():
            s_real = sigmoid(sd_forward(disc, labels))
            s_fake = sigmoid(sd_forward(disc, prob_const))
            d_loss = loss_bce(s_real, Tensor(np.ones(s_real.shape))) \
                + loss_bce(s_fake, Tensor(np.zeros(s_fake.shape)))
            backward(d_loss)
        opt_d.step()

        lpix = loss_mse(prob, labels)
        if cfg.beta != 0.0:
            with no_grad():
                score_real = sd_forward(disc, labels)
            with frozen(disc):
                score_fake = sd_forward(disc, prob)
                lshape = loss_mse(score_real.detach(), score_fake)
                total = lpix * cfg.alpha + lshape * cfg.beta
                backward(total)
        else:
            lshape = Tensor(0.0)
            total = lpix * cfg.alpha
            backward(total)
    opt_s.step()
    return d_loss.item(), total.item(), lpix.item(), lshape.item()


def _epoch_rng(seed: int, epoch: int):
    return np.random.default_rng([seed, epoch])


def _assemble_batch(samples, idxs, rng, flips: bool):
    imgs, lbls = [], []
    for i in idxs:
        img = samples[i].image
        lbl = samples[i].label.astype(np.float64)
        if flips:
            if rng.random() < 0.5:
                img, lbl = img[:, :, ::-1], lbl[:, ::-1]
            if rng.random() < 0.5:
                img, lbl = img[:, ::-1, :], lbl[::-1, :]
        imgs.append(img)
        lbls.append(lbl[None])
    return Tensor(np.stack(imgs)), Tensor(np.stack(lbls))


def train(model: SegmentationModel, disc, dataset, cfg: TrainConfig,
          out_dir: str = None, log_fn=None):
    """Run the training loop; returns (final Checkpoint, per-epoch log rows).

    Writes one checkpoint per epoch into out_dir (keeping the last two) plus
    ckpt_final.asln. Log rows are (epoch, loss_dis, loss_pix, loss_shape,
    loss_seg) epoch means.
    """
    if not dataset:
        raise UsageError("train() needs a non-empty dataset")
    opt_s = Adam(model.parameters(), lr=cfg.lr_seg)
    opt_d = Adam(disc.parameters(), lr=cfg.lr_disc) if disc is not None else None

    rows = []
    written = []

    def _write_ckpt(epoch):
        if out_dir is None:
            return
        ckpt = Checkpoint.capture(model, disc, opt_s, opt_d, epoch, cfg.seed)
        path = os.path.join(out_dir, f"ckpt_ep{epoch:04d}.asln")
        save_checkpoint(ckpt, path)
        written.append(path)
        while len(written) > 2:
            old = written.pop(0)
            if os.path.exists(old):
                os.remove(old)
        return ckpt

    if cfg.epochs == 0:
        _write_ckpt(0)
        final = Checkpoint.capture(model, disc, opt_s, opt_d, 0, cfg.seed)
        if out_dir is not None:
            save_checkpoint(final, os.path.join(out_dir, "ckpt_final.asln"))
        return final, rows

    n = len(dataset)
    for epoch in range(cfg.epochs):
        rng = _epoch_rng(cfg.seed, epoch)
        order = rng.permutation(n)
        sums = np.zeros(4)
        batches = 0
        for start in range(0, n, cfg.batch_size):
            idxs = order[start:start + cfg.batch_size]
            images, labels = _assemble_batch(dataset, idxs, rng,
                                             cfg.augment_flips)
            if cfg.adversarial and disc is not None:
                ld, ls, lp, lsh = _adversarial_batch(model, disc, images,
                                                     labels, cfg, opt_s,
                                                     opt_d)
            else:
                ld = 0.0
                ls, lp, lsh = segmenter_step(model, disc, images, labels,
                                             cfg, opt_s)
            sums += (ld, lp, lsh, ls)
            batches += 1
        means = sums / batches
        rows.append((epoch, means[0], means[1], means[2], means[3]))
        if log_fn:
            log_fn(rows[-1])
        _write_ckpt(epoch + 1)

    final = Checkpoint.capture(model, disc, opt_s, opt_d, cfg.epochs, cfg.seed)
    if out_dir is not None:
        save_checkpoint(final, os.path.join(out_dir, "ckpt_final.asln"))
    return final, rows


def format_log_rows(rows) -> str:
    lines = [LOG_HEADER]
    for epoch, ld, lp, lsh, ls in rows:
        lines.append(f"{epoch},{ld:.10g},{lp:.10g},{lsh:.10g},{ls:.10g}")
    return "\n".join(lines) + "\n"
