"""
Cross-modal localization GAN

Training data flows:
    vision window v --BiLSTM--> e_v --.
                                       L_emb = ||e_v - e_p||
    phone window p  --BiLSTM--> e_p --'--> generator --> c_hat
                                                       |
    discriminator(v, p, c_gnd | c_hat) --> LSGAN score <'

Each batch runs one discriminator step on real and detached generated
coordinates, then one step of encoders + generator on
L_emb + L_adv + L_reg. Inference needs only the phone window.

Inputs are z-scored per channel with training-set statistics (Normalizer);
coordinates stay in camera-frame meters.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from errors import CheckpointError, DataError, DivergenceDetected, EmptyInput
from logger import get_logger
from models import FeatureMask, LossReport, TrainConfig
from src.dataset import VISION_WIDTH, Correspondence, stack_batch, stack_phone
from src.nn import (
    Adam,
    BatchNorm1d,
    BiLSTM,
    Dropout,
    LeakyReLU,
    Linear,
    Module,
    Parameter,
    Sequential,
    frozen_statistics,
)
from src.seeding import derive_rng
from storage import load_checkpoint, save_checkpoint

logger = get_logger(__name__)

CHECKPOINT_FORMAT = "viloc-gan"
CHECKPOINT_VERSION = 1

EMBED_DIM = 64
GENERATOR_DIMS = (64, 64, 64, 32)
DISCRIMINATOR_EMBED_DIM = 8
DISCRIMINATOR_DIMS = (8, 4)
MIN_STD = 1e-8


# ==================== Loss Functions ====================

def embedding_loss(e_v: np.ndarray, e_p: np.ndarray) -> float:
    """Batch mean of ||e_v - e_p||"""
    return float(np.mean(np.linalg.norm(e_v - e_p, axis=-1)))


def embedding_loss_grad(e_v: np.ndarray, e_p: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    diff = e_v - e_p
    norm = np.linalg.norm(diff, axis=1, keepdims=True)
    grad = np.divide(diff, norm * len(diff), out=np.zeros_like(diff), where=norm > 0)
    return grad, -grad


def regularizer(c_gnd: np.ndarray, c_hat: np.ndarray) -> float:
    """Batch mean of L1 + L2 distance between target and generated coordinates"""
    diff = np.atleast_2d(c_gnd - c_hat)
    return float(np.mean(np.abs(diff).sum(axis=1) + np.linalg.norm(diff, axis=1)))


def regularizer_grad(c_gnd: np.ndarray, c_hat: np.ndarray) -> np.ndarray:
    """Gradient with respect to c_hat"""
    diff = c_gnd - c_hat
    norm = np.linalg.norm(diff, axis=1, keepdims=True)
    unit = np.divide(diff, norm, out=np.zeros_like(diff), where=norm > 0)
    return -(np.sign(diff) + unit) / len(diff)


def lsgan_from_scores(real: np.ndarray, fake: np.ndarray) -> Tuple[float, float]:
    """
    Returns:
        (d_loss, g_adv_loss) = (mean (D_real - 1)^2 + mean D_fake^2, mean (D_fake - 1)^2)
    """
    d_loss = float(np.mean((real - 1.0) ** 2) + np.mean(fake ** 2))
    g_adv = float(np.mean((fake - 1.0) ** 2))
    return d_loss, g_adv


# ==================== Normalization ====================

@dataclass
class Normalizer:
    """Per-channel z-scoring of vision and phone windows"""
    v_mean: np.ndarray
    v_std: np.ndarray
    p_mean: np.ndarray
    p_std: np.ndarray

    @classmethod
    def fit(cls, V: np.ndarray, P: np.ndarray) -> "Normalizer":
        def stats(X):
            flat = X.reshape(-1, X.shape[-1])
            std = flat.std(axis=0)
            return flat.mean(axis=0), np.where(std > MIN_STD, std, 1.0)

        v_mean, v_std = stats(V)
        p_mean, p_std = stats(P)
        return cls(v_mean=v_mean, v_std=v_std, p_mean=p_mean, p_std=p_std)

    def vision(self, V: np.ndarray) -> np.ndarray:
        return (V - self.v_mean) / self.v_std

    def phone(self, P: np.ndarray) -> np.ndarray:
        return (P - self.p_mean) / self.p_std

    def to_dict(self) -> Dict[str, list]:
        return {name: getattr(self, name).tolist() for name in ("v_mean", "v_std", "p_mean", "p_std")}

    @classmethod
    def from_dict(cls, data: Dict[str, list]) -> "Normalizer":
        return cls(**{name: np.array(data[name], dtype=np.float64) for name in ("v_mean", "v_std", "p_mean", "p_std")})


# ==================== Model ====================

@dataclass
class GeneratorPass:
    """Cached forward results of encoders + generator for one batch"""
    e_v: np.ndarray
    e_p: np.ndarray
    c_hat: np.ndarray


class GanModel(Module):
    """
    Encoders, generator and discriminator plus their two Adam optimizers

    The generator side (encoder_v, encoder_p, generator) and the
    discriminator side (disc_v, disc_p, disc_head) never share parameters.
    Layer widths default to the full-size network; smaller widths are
    accepted for gradient checks.
    """

    def __init__(
        self,
        mask: Optional[FeatureMask] = None,
        config: Optional[TrainConfig] = None,
        embed_dim: int = EMBED_DIM,
        generator_dims: Sequence[int] = GENERATOR_DIMS,
        disc_embed_dim: int = DISCRIMINATOR_EMBED_DIM,
        disc_dims: Sequence[int] = DISCRIMINATOR_DIMS,
    ):
        super().__init__()
        self.mask = mask or FeatureMask()
        self.config = config or TrainConfig()
        self.dims = {
            "embed_dim": embed_dim,
            "generator_dims": list(generator_dims),
            "disc_embed_dim": disc_embed_dim,
            "disc_dims": list(disc_dims),
        }
        init_rng = derive_rng(self.config.seed, "gan", "init")
        self.dropout_rng = derive_rng(self.config.seed, "gan", "dropout")
        slope = self.config.leaky_slope
        width = self.mask.width

        self.encoder_v = BiLSTM(VISION_WIDTH, embed_dim, init_rng)
        self.encoder_p = BiLSTM(width, embed_dim, init_rng)

        layers: List[Module] = []
        previous = embed_dim
        for k, size in enumerate(generator_dims):
            layers += [Linear(previous, size, init_rng, slope), BatchNorm1d(size), LeakyReLU(slope)]
            # the narrowing last hidden layer has no dropout
            if k < len(generator_dims) - 1:
                layers.append(Dropout(self.config.dropout_rate, self.dropout_rng))
            previous = size
        layers.append(Linear(previous, 3, init_rng, slope))
        self.generator = Sequential(*layers)

        self.disc_v = BiLSTM(VISION_WIDTH, disc_embed_dim, init_rng)
        self.disc_p = BiLSTM(width, disc_embed_dim, init_rng)
        head: List[Module] = []
        previous = 2 * disc_embed_dim + 3
        for size in disc_dims:
            head += [Linear(previous, size, init_rng, slope), BatchNorm1d(size), LeakyReLU(slope)]
            previous = size
        head.append(Linear(previous, 1, init_rng, slope))
        self.disc_head = Sequential(*head)

        self.normalizer: Optional[Normalizer] = None
        self.epochs_trained = 0
        self.opt_g = Adam(self.generator_parameters(), lr=self.config.lr)
        self.opt_d = Adam(self.discriminator_parameters(), lr=self.config.lr)

    # ---------- parameter partition ----------

    def generator_parameters(self) -> List[Parameter]:
        return self.encoder_v.parameters() + self.encoder_p.parameters() + self.generator.parameters()

    def discriminator_parameters(self) -> List[Parameter]:
        return self.disc_v.parameters() + self.disc_p.parameters() + self.disc_head.parameters()

    # ---------- forward passes ----------

    def prepare(self, V: Optional[np.ndarray], P: np.ndarray) -> Tuple[Optional[np.ndarray], np.ndarray]:
        """Apply the fitted normalizer (identity before the first fit)"""
        if self.normalizer is None:
            return V, P
        return (None if V is None else self.normalizer.vision(V)), self.normalizer.phone(P)

    def embed(self, V: np.ndarray, P: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        return self.encoder_v.forward(V), self.encoder_p.forward(P)

    def generate(self, e_p: np.ndarray) -> np.ndarray:
        return self.generator.forward(e_p)

    def forward_generator(self, V: np.ndarray, P: np.ndarray) -> GeneratorPass:
        e_v, e_p = self.embed(V, P)
        return GeneratorPass(e_v=e_v, e_p=e_p, c_hat=self.generate(e_p))

    def discriminate(self, V: np.ndarray, P: np.ndarray, c: np.ndarray) -> np.ndarray:
        """Raw (B,) scores for prepared windows and camera-frame coordinates"""
        features = np.concatenate([self.disc_v.forward(V), self.disc_p.forward(P), c], axis=1)
        return self.disc_head.forward(features)[:, 0]

    def discriminate_backward(self, grad_scores: np.ndarray, through_encoders: bool = True) -> np.ndarray:
        """Backpropagate score gradients; returns the gradient with respect to c"""
        grad = self.disc_head.backward(grad_scores[:, None])
        width = self.dims["disc_embed_dim"]
        if through_encoders:
            self.disc_v.backward(grad[:, :width])
            self.disc_p.backward(grad[:, width:2 * width])
        return grad[:, 2 * width:]

    def generator_backward(self, grad_c: np.ndarray, grad_e_v: np.ndarray, grad_e_p: np.ndarray):
        grad_e_p = grad_e_p + self.generator.backward(grad_c)
        self.encoder_p.backward(grad_e_p)
        self.encoder_v.backward(grad_e_v)


# ==================== Objectives ====================

def discriminator_objective(model: GanModel, V: np.ndarray, P: np.ndarray, C: np.ndarray, c_hat: np.ndarray) -> float:
    """
    LSGAN discriminator loss; accumulates gradients into the discriminator

    c_hat is treated as a constant.
    """
    n = len(C)
    real = model.discriminate(V, P, C)
    model.discriminate_backward(2.0 * (real - 1.0) / n)
    fake = model.discriminate(V, P, c_hat)
    model.discriminate_backward(2.0 * fake / n)
    return float(np.mean((real - 1.0) ** 2) + np.mean(fake ** 2))


def generator_objective(
    model: GanModel,
    V: np.ndarray,
    P: np.ndarray,
    C: np.ndarray,
    forward: Optional[GeneratorPass] = None,
) -> Dict[str, float]:
    """
    Embedding + adversarial + regularizer losses; accumulates gradients into
    encoders and generator

    Discriminator parameters receive gradients too but are never stepped
    from here, and its batch-norm running statistics are left unchanged.
    Pass the cached forward of the current batch to reuse it.
    """
    if forward is None:
        forward = model.forward_generator(V, P)
    n = len(C)
    with frozen_statistics(model.disc_head):
        fake = model.discriminate(V, P, forward.c_hat)
    grad_c = model.discriminate_backward(2.0 * (fake - 1.0) / n, through_encoders=False)
    grad_c = grad_c + regularizer_grad(C, forward.c_hat)
    grad_e_v, grad_e_p = embedding_loss_grad(forward.e_v, forward.e_p)
    model.generator_backward(grad_c, grad_e_v, grad_e_p)

    l_emb = embedding_loss(forward.e_v, forward.e_p)
    l_g_adv = float(np.mean((fake - 1.0) ** 2))
    l_reg = regularizer(C, forward.c_hat)
    return {"l_emb": l_emb, "l_g_adv": l_g_adv, "l_reg": l_reg, "l_total": l_emb + l_g_adv + l_reg}


def lsgan_losses(model: GanModel, V: np.ndarray, P: np.ndarray, C: np.ndarray) -> Tuple[float, float]:
    """(d_loss, g_adv_loss) for prepared windows, without touching gradients"""
    e_p = model.encoder_p.forward(P)
    c_hat = model.generate(e_p)
    return lsgan_from_scores(model.discriminate(V, P, C), model.discriminate(V, P, c_hat))


# ==================== Training ====================

def train_batch(model: GanModel, V: np.ndarray, P: np.ndarray, C: np.ndarray, lr: float) -> Dict[str, float]:
    """One discriminator step then one generator step on a prepared batch"""
    forward = model.forward_generator(V, P)

    model.opt_d.zero_grad()
    l_d = discriminator_objective(model, V, P, C, forward.c_hat)
    model.opt_d.step(lr)

    model.opt_g.zero_grad()
    losses = generator_objective(model, V, P, C, forward)
    model.opt_g.step(lr)
    model.opt_d.zero_grad()

    losses["l_d"] = l_d
    return losses


def _check_records(records: Sequence[Correspondence]):
    if not records:
        raise EmptyInput("Training set is empty")
    unlabeled = sum(1 for r in records if not r.labeled)
    if unlabeled:
        raise DataError(f"Training set contains {unlabeled} phone-only records")
    if len(records) < 2:
        raise DataError("Training needs at least 2 records to form a batch")


def train(
    model: GanModel,
    records: Sequence[Correspondence],
    epochs: Optional[int] = None,
    lr: Optional[float] = None,
) -> Tuple[GanModel, List[LossReport]]:
    """
    Adversarial training over labeled correspondences

    A fresh model fits its normalizer and the generator's output bias on
    this set first. lr defaults to the config's schedule; a fixed lr is used
    for fine-tuning. Trailing batches with fewer than 2 samples are dropped.
    Epochs are numbered over the model's lifetime, so a resumed or
    fine-tuned model continues the schedule where it stopped.

    Returns:
        (model, one LossReport per epoch)

    Raises:
        EmptyInput: no records
        DataError: phone-only records or fewer than 2 records
        DivergenceDetected: a loss became non-finite
    """
    cfg = model.config
    epochs = cfg.epochs if epochs is None else epochs
    if epochs == 0:
        return model, []
    _check_records(records)

    V_raw, P_raw, C = stack_batch(records, model.mask)
    if model.normalizer is None:
        model.normalizer = Normalizer.fit(V_raw, P_raw)
        model.generator.layers[-1].bias.value = C.mean(axis=0)
    V, P = model.prepare(V_raw, P_raw)

    n = len(records)
    history: List[LossReport] = []
    model.train()
    for _ in range(epochs):
        epoch = model.epochs_trained + 1
        epoch_lr = cfg.lr_at(epoch) if lr is None else lr
        order = derive_rng(cfg.seed, "gan", "shuffle", model.epochs_trained).permutation(n)
        sums = {"l_emb": 0.0, "l_d": 0.0, "l_g_adv": 0.0, "l_reg": 0.0, "l_total": 0.0}
        batches = 0
        for start in range(0, n, cfg.batch_size):
            index = order[start:start + cfg.batch_size]
            if len(index) < 2:
                continue
            losses = train_batch(model, V[index], P[index], C[index], epoch_lr)
            if not all(np.isfinite(value) for value in losses.values()):
                raise DivergenceDetected(epoch, losses)
            for key in sums:
                sums[key] += losses[key]
            batches += 1
            logger.debug("Batch trained", epoch=epoch, batch=batches, **losses)

        model.epochs_trained += 1
        report = LossReport(epoch=epoch, lr=epoch_lr, **{k: v / batches for k, v in sums.items()})
        history.append(report)
        logger.info("Epoch complete", **report.model_dump())

    model.eval()
    return model, history


# ==================== Inference ====================

def infer(model: GanModel, P: np.ndarray) -> np.ndarray:
    """
    Camera-frame coordinates from raw masked phone windows

    Accepts one (10, w) window or a (B, 10, w) batch; runs in eval mode and
    restores the previous mode.
    """
    single = P.ndim == 2
    batch = P[None] if single else P
    was_training = model.training
    model.eval()
    _, prepared = model.prepare(None, batch)
    c_hat = model.generate(model.encoder_p.forward(prepared))
    model.train(was_training)
    return c_hat[0] if single else c_hat


def predict(model: GanModel, records: Sequence[Correspondence], batch_size: int = 256) -> np.ndarray:
    """(N, 3) estimates for any records, labeled or phone-only"""
    if not records:
        return np.zeros((0, 3))
    chunks = [
        infer(model, stack_phone(records[start:start + batch_size], model.mask))
        for start in range(0, len(records), batch_size)
    ]
    return np.concatenate(chunks, axis=0)


# ==================== Checkpoints ====================

def checkpoint_data(model: GanModel) -> dict:
    state = model.state_dict()
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "mask": model.mask.model_dump(),
        "train_config": model.config.model_dump(),
        "dims": model.dims,
        "epochs_trained": model.epochs_trained,
        "parameters": state["parameters"],
        "buffers": state["buffers"],
        "normalizer": None if model.normalizer is None else model.normalizer.to_dict(),
        "optimizers": {"generator": model.opt_g.state_dict(), "discriminator": model.opt_d.state_dict()},
        "rng": model.dropout_rng.bit_generator.state,
    }


def model_from_checkpoint(data: dict) -> GanModel:
    """
    Raises:
        CheckpointError: missing or inconsistent fields
    """
    try:
        model = GanModel(
            mask=FeatureMask.model_validate(data["mask"]),
            config=TrainConfig.model_validate(data["train_config"]),
            **data["dims"],
        )
        model.load_state_dict({"parameters": data["parameters"], "buffers": data["buffers"]})
        model.opt_g.load_state_dict(data["optimizers"]["generator"])
        model.opt_d.load_state_dict(data["optimizers"]["discriminator"])
        model.dropout_rng.bit_generator.state = data["rng"]
        model.normalizer = None if data["normalizer"] is None else Normalizer.from_dict(data["normalizer"])
        model.epochs_trained = int(data["epochs_trained"])
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointError(f"Invalid checkpoint contents: {e}") from e
    model.eval()
    return model


def save_model(model: GanModel, path: Path) -> Path:
    return save_checkpoint(checkpoint_data(model), path)


def load_model(path: Path) -> GanModel:
    return model_from_checkpoint(load_checkpoint(path, CHECKPOINT_FORMAT, CHECKPOINT_VERSION))
