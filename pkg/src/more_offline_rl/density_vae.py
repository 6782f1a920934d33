"""
State-action VAE whose evidence lower bound scores how typical a (s, a) pair is of the logged data.

The encoder maps a normalized pair to ``[mu (latent_dim), log_var (latent_dim)]``; the decoder maps
a latent sample back to the normalized pair. The reconstruction likelihood is a unit-variance
Gaussian, so the score of a perfectly reconstructed d-dimensional input is ``-d/2 * log(2 pi)``
minus the KL term.
"""
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

import more_offline_rl.consts as consts
from more_offline_rl.build_events import build_epoch_event
from more_offline_rl.dataset import NormalizationStats, OfflineDataset
from more_offline_rl.errors import DivergenceError, NonFiniteError, PreconditionError
from more_offline_rl.nn_core import MlpSpec, Network, concat_inputs
from more_offline_rl.training_monitoring import record_event

logger = logging.getLogger("more_offline_rl")

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class VaeConfig:
    latent_dim: Optional[int] = None
    encoder_hidden: Tuple[int, ...] = (750, 750)
    decoder_hidden: Tuple[int, ...] = (750, 750)
    learning_rate: float = 1e-4
    training_epochs: int = 50
    batch_size: int = 256

    def __post_init__(self):
        object.__setattr__(self, "encoder_hidden", tuple(int(d) for d in self.encoder_hidden))
        object.__setattr__(self, "decoder_hidden", tuple(int(d) for d in self.decoder_hidden))
        if self.latent_dim is not None and self.latent_dim < 1:
            raise PreconditionError(f"latent_dim must be >= 1, got {self.latent_dim}")
        if self.learning_rate <= 0:
            raise PreconditionError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.training_epochs < 1 or self.batch_size < 1:
            raise PreconditionError("training_epochs and batch_size must be >= 1")

    def resolved_latent_dim(self, action_dim: int) -> int:
        return self.latent_dim if self.latent_dim is not None else 2 * action_dim

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["encoder_hidden"] = list(self.encoder_hidden)
        data["decoder_hidden"] = list(self.decoder_hidden)
        return data


@dataclass
class VaeReport:
    epochs: List[Dict[str, float]] = field(default_factory=list)

    def rows(self) -> List[Dict[str, float]]:
        return [dict(row) for row in self.epochs]


class DensityModel:
    def __init__(self, encoder: Network, decoder: Network, normalization: NormalizationStats):
        input_dim = normalization.state_mean.shape[0] + normalization.action_mean.shape[0]
        latent_dim = decoder.spec.input_dim
        if encoder.spec.input_dim != input_dim or decoder.spec.output_dim != input_dim:
            raise PreconditionError(f"VAE networks do not match the {input_dim}-dimensional state-action input")
        if encoder.spec.output_dim != 2 * latent_dim:
            raise PreconditionError(
                f"encoder emits {encoder.spec.output_dim} values, expected 2 * latent_dim = {2 * latent_dim}"
            )
        self.encoder = encoder
        self.decoder = decoder
        self.normalization = normalization
        self.input_dim = input_dim
        self.latent_dim = latent_dim

    @classmethod
    def initialize(
        cls, normalization: NormalizationStats, config: VaeConfig, rng: np.random.Generator
    ) -> "DensityModel":
        action_dim = normalization.action_mean.shape[0]
        input_dim = normalization.state_mean.shape[0] + action_dim
        latent_dim = config.resolved_latent_dim(action_dim)
        encoder = Network.initialize(MlpSpec(input_dim, config.encoder_hidden, 2 * latent_dim), rng, config.learning_rate)
        decoder = Network.initialize(MlpSpec(latent_dim, config.decoder_hidden, input_dim), rng, config.learning_rate)
        return cls(encoder, decoder, normalization)

    def network_inputs(self, states, actions) -> np.ndarray:
        return concat_inputs(self.normalization.normalize_state(states), self.normalization.normalize_action(actions))

    def encode(self, inputs) -> Tuple[np.ndarray, np.ndarray]:
        out = self.encoder(np.atleast_2d(inputs))
        mu = out[:, : self.latent_dim]
        log_var = np.clip(out[:, self.latent_dim :], consts.LOG_VAR_MIN, consts.LOG_VAR_MAX)
        return mu, log_var


def gaussian_kl(mu, log_var) -> np.ndarray:
    """KL[N(mu, exp(log_var)) || N(0, I)] summed over the last axis."""
    mu = np.asarray(mu, dtype=np.float64)
    log_var = np.asarray(log_var, dtype=np.float64)
    return 0.5 * np.sum(mu * mu + np.exp(log_var) - 1.0 - log_var, axis=-1)


def gaussian_log_likelihood(inputs, means) -> np.ndarray:
    diff = np.asarray(inputs, dtype=np.float64) - np.asarray(means, dtype=np.float64)
    return -0.5 * np.sum(diff * diff, axis=-1) - 0.5 * diff.shape[-1] * LOG_2PI


def elbo_batch(model: DensityModel, inputs, noise) -> np.ndarray:
    """ELBO of normalized inputs (rows, d) given standard-normal draws of shape (rows, S, latent_dim)."""
    inputs = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    noise = np.asarray(noise, dtype=np.float64)
    rows = inputs.shape[0]
    if noise.ndim != 3 or noise.shape[0] != rows or noise.shape[2] != model.latent_dim:
        raise PreconditionError(f"noise must have shape ({rows}, S, {model.latent_dim}), got {noise.shape}")
    samples = noise.shape[1]
    mu, log_var = model.encode(inputs)
    kl = gaussian_kl(mu, log_var)
    if np.any(kl < 0):
        raise NonFiniteError("KL term went negative", int(np.flatnonzero(kl < 0)[0]))
    z = mu[:, None, :] + np.exp(0.5 * log_var)[:, None, :] * noise
    recon = model.decoder(z.reshape(rows * samples, model.latent_dim)).reshape(rows, samples, -1)
    log_likelihood = gaussian_log_likelihood(inputs[:, None, :], recon).mean(axis=1)
    return log_likelihood - kl


def elbo_density_batch(model: DensityModel, states, actions, noise) -> np.ndarray:
    return elbo_batch(model, model.network_inputs(states, actions), noise)


def elbo_density(model: DensityModel, s, a, num_z_samples: int = 1, seed: int = 0) -> float:
    """Monte-Carlo ELBO of one state-action pair; deterministic per seed."""
    if num_z_samples < 1:
        raise PreconditionError(f"num_z_samples must be >= 1, got {num_z_samples}")
    noise = np.random.default_rng(seed).standard_normal((1, num_z_samples, model.latent_dim))
    return float(elbo_density_batch(model, s, a, noise)[0])


def negative_elbo_and_gradient(
    model: DensityModel, inputs: np.ndarray, noise: np.ndarray
) -> Tuple[float, np.ndarray, np.ndarray]:
    """Mean negative ELBO with one latent draw per row (``noise`` is (rows, latent_dim)).

    Returns ``(loss, encoder gradient, decoder gradient)``.
    """
    rows = inputs.shape[0]
    latent = model.latent_dim
    enc_out, enc_cache = model.encoder.forward_with_cache(inputs)
    mu = enc_out[:, :latent]
    raw_log_var = enc_out[:, latent:]
    log_var = np.clip(raw_log_var, consts.LOG_VAR_MIN, consts.LOG_VAR_MAX)
    std = np.exp(0.5 * log_var)
    z = mu + std * noise
    recon, dec_cache = model.decoder.forward_with_cache(z)

    diff = inputs - recon
    loss = float(
        np.mean(0.5 * np.sum(diff * diff, axis=1) + 0.5 * inputs.shape[1] * LOG_2PI + gaussian_kl(mu, log_var))
    )

    grad_dec, grad_z = model.decoder.backward(dec_cache, -diff / rows)
    grad_mu = grad_z + mu / rows
    grad_log_var = grad_z * noise * 0.5 * std + 0.5 * (np.exp(log_var) - 1.0) / rows
    inside = (raw_log_var > consts.LOG_VAR_MIN) & (raw_log_var < consts.LOG_VAR_MAX)
    grad_enc, _ = model.encoder.backward(enc_cache, np.concatenate([grad_mu, grad_log_var * inside], axis=1))
    return loss, grad_enc, grad_dec


def train_vae(dataset: OfflineDataset, config: VaeConfig, seed: int) -> Tuple[DensityModel, VaeReport]:
    rng = np.random.default_rng(seed)
    model = DensityModel.initialize(dataset.normalization, config, rng)
    inputs = model.network_inputs(dataset.states, dataset.actions)
    report = VaeReport()
    for epoch in range(1, config.training_epochs + 1):
        order = rng.permutation(len(dataset))
        total = 0.0
        try:
            for start in range(0, order.size, config.batch_size):
                idx = order[start : start + config.batch_size]
                noise = rng.standard_normal((idx.size, model.latent_dim))
                loss, grad_enc, grad_dec = negative_elbo_and_gradient(model, inputs[idx], noise)
                if not np.isfinite(loss):
                    raise NonFiniteError(f"negative ELBO is {loss!r}")
                model.encoder.apply_gradient(grad_enc)
                model.decoder.apply_gradient(grad_dec)
                total += loss * idx.size
        except NonFiniteError as err:
            raise DivergenceError("VAE training", epoch, str(err)) from err

        train_loss = total / order.size
        row = {"epoch": epoch, "train_loss": train_loss, "elbo": -train_loss}
        report.epochs.append(row)
        record_event(build_epoch_event("vae", row), consts.ModelEpochEventName)
        logger.debug(f"vae epoch {epoch}: mean ELBO {-train_loss:.6g}")

    logger.info(
        f"VAE trained for {config.training_epochs} epochs: mean ELBO "
        f"{report.epochs[0]['elbo']:.4f} -> {report.epochs[-1]['elbo']:.4f}"
    )
    return model, report
