"""Joint training of circuit angles and mitigation rates.

The forward pass propagates a batch of encoded states through the noisy
(or inline-mitigated) layer chain, computes the block forward-backward
losses and the softmax task loss, and the backward pass pushes adjoint
matrices through the same graph: conjugations, Pauli channel factors,
inverse-channel factors (with per-rate derivatives), and the conditioned
fidelity head.  Gradients are exact derivatives of the implemented loss;
the test suite holds every component to a central finite-difference oracle.

Optimizer: SGD with momentum; mitigation rates are projected to ``>= 0``
after every step.  A single seeded RNG stream per training run is consumed
in a documented order: parameter initialization first, then one shuffle per
epoch.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .data import Dataset
from .errors import ConfigError, TrainingError, ValidationError
from .losses import LossWeights, _fb_pair_backward, _fb_pair_forward
from .noise import (
    MitigationModel,
    NoiseModel,
    _pauli_conj_tables,
    default_generators,
    load_noise_layers,
    rate_to_weight,
)
from .pqc import (
    DESIGN_AXES,
    CircuitSpec,
    EncoderSpec,
    LayerSpec,
    encode,
    layer_unitary_and_gradients,
)
from .qsim import hermitize

NOISE_SEED_STREAM = 0xA11CE  # noise rates come from (seed, this tag), fixed across repeats
DIVERGENCE_ABORT = 1e4


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of one training run."""

    n_qubits: int = 4
    layers: int = 4
    design: str = "U2"
    step_size: int = 1
    mode: str = "loss_only"
    alpha_fb: float = 1.0
    alpha_task: float = 1.0
    num_classes: int = 4
    epochs: int = 50
    batch_size: int = 32
    learning_rate: float = 0.05
    momentum: float = 0.9
    rate_lr_scale: float = 1.0
    rate_cap: float = 0.3
    seed: int = 0
    noise_source: str = "seeded"
    noise_low: float = 0.002
    noise_high: float = 0.02
    noise_path: str | None = None

    def __post_init__(self):
        if self.design not in DESIGN_AXES:
            raise ConfigError(f"unknown design {self.design!r}")
        if self.mode not in ("loss_only", "cascaded"):
            raise ConfigError(f"unknown execution mode {self.mode!r}")
        if self.layers < 1:
            raise ConfigError("layer count must be >= 1")
        if self.step_size not in (1, 2, 4):
            raise ConfigError(f"step size must be 1, 2 or 4, got {self.step_size}")
        if self.layers % self.step_size != 0:
            raise ConfigError(
                f"step size {self.step_size} does not divide layer count {self.layers}"
            )
        if not 1 <= self.n_qubits <= 10:
            raise ConfigError(f"qubit count {self.n_qubits} out of range")
        if not 2 <= self.num_classes <= self.n_qubits:
            raise ConfigError(
                f"class count {self.num_classes} must be in [2, n_qubits={self.n_qubits}]"
            )
        if self.learning_rate < 0.0:
            raise ConfigError("learning rate must be nonnegative")
        if self.rate_lr_scale < 0.0:
            raise ConfigError("rate learning-rate scale must be nonnegative")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must be in [0, 1)")
        if self.batch_size < 1:
            raise ConfigError("batch size must be >= 1")
        if self.epochs < 1:
            raise ConfigError("epoch count must be >= 1")
        if self.noise_source not in ("seeded", "file"):
            raise ConfigError(f"noise source must be 'seeded' or 'file', got {self.noise_source!r}")
        if self.noise_source == "file" and not self.noise_path:
            raise ConfigError("noise source 'file' requires noise_path")
        if not 0.0 <= self.noise_low <= self.noise_high:
            raise ConfigError(f"invalid noise range [{self.noise_low}, {self.noise_high}]")
        self.weights  # validates the pair

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.alpha_fb, self.alpha_task)

    @property
    def theta_shape(self) -> tuple[int, int]:
        return (self.n_qubits, len(DESIGN_AXES[self.design]))


@dataclass
class TrainState:
    """Learnable parameters plus optimizer and RNG state."""

    theta: list[np.ndarray]
    rates: np.ndarray
    vel_theta: list[np.ndarray]
    vel_rates: np.ndarray
    epoch: int
    rng: np.random.Generator
    generators: tuple

    def snapshot(self) -> dict:
        return {
            "theta": [t.copy() for t in self.theta],
            "rates": self.rates.copy(),
            "epoch": self.epoch,
        }


def noise_models_from_config(config: TrainConfig) -> list[NoiseModel]:
    """Per-layer true noise: seeded synthetic calibration or a JSON file."""
    if config.noise_source == "file":
        models = load_noise_layers(config.noise_path)
        if len(models) != config.layers:
            raise ConfigError(
                f"noise file has {len(models)} layers, config wants {config.layers}"
            )
        return models
    from .noise import draw_noise_models

    return draw_noise_models(
        config.n_qubits,
        config.layers,
        seed=[config.seed, NOISE_SEED_STREAM],
        low=config.noise_low,
        high=config.noise_high,
    )


def init_state(config: TrainConfig) -> TrainState:
    """Angles uniform in [-0.1, 0.1]; rates start at zero (identity mitigation)."""
    rng = np.random.default_rng(config.seed)
    n, p = config.theta_shape
    theta = [rng.uniform(-0.1, 0.1, size=(n, p)) for _ in range(config.layers)]
    gens = default_generators(config.n_qubits)
    rates = np.zeros((config.layers, len(gens)))
    return TrainState(
        theta=theta,
        rates=rates,
        vel_theta=[np.zeros((n, p)) for _ in range(config.layers)],
        vel_rates=np.zeros_like(rates),
        epoch=0,
        rng=rng,
        generators=gens,
    )


def circuit_from_theta(theta: list[np.ndarray], config: TrainConfig) -> CircuitSpec:
    layers = [LayerSpec(config.design, config.n_qubits, t) for t in theta]
    return CircuitSpec(config.n_qubits, EncoderSpec(config.n_qubits), layers)


def mitigation_from_state(state: TrainState, config: TrainConfig) -> MitigationModel:
    return MitigationModel(config.n_qubits, state.generators, np.maximum(state.rates, 0.0))


def encode_dataset(dataset: Dataset, n: int) -> np.ndarray:
    """Precompute the encoded pure states of every sample, shape (N, d, d)."""
    spec = EncoderSpec(n)
    return np.stack([encode(f, spec).data for f in dataset.features])


# ---------------------------------------------------------------------------
# Gradient engine
# ---------------------------------------------------------------------------


def _conj(x: np.ndarray, perm: np.ndarray, phase: np.ndarray) -> np.ndarray:
    return x[..., perm[:, None], perm[None, :]] * phase


def _channel_factor(x, w, perm, phase):
    return w * x + (1.0 - w) * _conj(x, perm, phase)


def _inverse_factor(x, rate, perm, phase):
    w = float(rate_to_weight(rate))
    gamma = math.exp(2.0 * float(rate))
    return gamma * (w * x - (1.0 - w) * _conj(x, perm, phase))


def _noise_tables(models: list[NoiseModel]):
    tables = []
    for model in models:
        layer = []
        for gen, w in zip(model.generators, model.weights):
            perm, phase = _pauli_conj_tables(gen.letters)
            layer.append((float(w), perm, phase))
        tables.append(layer)
    return tables


def _generator_tables(generators):
    return [_pauli_conj_tables(g.letters) for g in generators]


def _apply_noise_layer(x, table):
    for w, perm, phase in table:
        if w != 1.0:
            x = _channel_factor(x, w, perm, phase)
    return x


def _noise_layer_adjoint(g, table):
    for w, perm, phase in reversed(table):
        if w != 1.0:
            g = _channel_factor(g, w, perm, phase)
    return g


def _inverse_stack_forward(x, rate_row, gen_tables):
    """Apply every inverse factor, caching each stage input for the adjoint."""
    stages = [x]
    for rate, (perm, phase) in zip(rate_row, gen_tables):
        x = _inverse_factor(x, rate, perm, phase)
        stages.append(x)
    return x, stages


def _inverse_stack_backward(g, rate_row, gen_tables, stages, grad_row):
    """Adjoint of the inverse stack; accumulates per-rate derivatives.

    Per factor ``Psi(x) = gamma (w x - (1-w) P x P)`` the rate derivative is
    ``dPsi/dlambda (x) = 2 Psi(x) - x - P x P``.
    """
    for g_idx in range(len(gen_tables) - 1, -1, -1):
        perm, phase = gen_tables[g_idx]
        x_pre = stages[g_idx]
        x_post = stages[g_idx + 1]
        deriv = 2.0 * x_post - x_pre - _conj(x_pre, perm, phase)
        grad_row[g_idx] += float(np.einsum("bij,bji->", g, deriv).real)
        g = _inverse_factor(g, rate_row[g_idx], perm, phase)
    return g


def _theta_grad_forward_conj(g_out, x_in, u, du_flat, out_vec):
    """Contribution of ``y = U x U^dagger`` to every angle of the layer."""
    k = (x_in @ u.conj().T @ g_out).sum(axis=0)
    for p, du in enumerate(du_flat):
        out_vec[p] += 2.0 * np.einsum("ij,ji->", du, k).real


def _theta_grad_backward_conj(g_out, x_in, u, du_flat, out_vec):
    """Contribution of the pullback ``y = U^dagger x U``."""
    a = (x_in @ u @ g_out).sum(axis=0)
    for p, du in enumerate(du_flat):
        out_vec[p] += 2.0 * np.vdot(du, a).real


def _sign_table(n: int) -> np.ndarray:
    idx = np.arange(1 << n)
    return np.stack([1.0 - 2.0 * ((idx >> (n - 1 - i)) & 1) for i in range(n)])


@dataclass
class BatchResult:
    """Loss terms, gradients and diagnostics of one batch pass."""

    total: float
    fb: float
    task: float
    grad_theta: list[np.ndarray] | None
    grad_rates: np.ndarray | None
    predictions: np.ndarray
    clamped_mass: float


def _run_batch(
    rho0: np.ndarray,
    labels: np.ndarray,
    theta: list[np.ndarray],
    rates: np.ndarray,
    config: TrainConfig,
    noise_tables,
    gen_tables,
    want_grads: bool,
) -> BatchResult:
    depth = config.layers
    step = config.step_size
    num_blocks = depth // step
    batch = rho0.shape[0]
    n = config.n_qubits
    c = config.num_classes
    cascaded = config.mode == "cascaded"

    layer_data = [
        layer_unitary_and_gradients(LayerSpec(config.design, n, theta[i])) for i in range(depth)
    ]
    units = [ld[0] for ld in layer_data]
    du_flat = [[ld[1][q][a] for q in range(n) for a in range(len(DESIGN_AXES[config.design]))]
               for ld in layer_data]

    # Forward chain: chain[i] is the propagated state after layer i.
    chain = [rho0]
    chain_inv_stages = [None] * depth  # cascaded mode only
    cur = rho0
    for i in range(depth):
        cur = units[i] @ cur @ units[i].conj().T
        cur = _apply_noise_layer(cur, noise_tables[i])
        if cascaded:
            cur, stages = _inverse_stack_forward(cur, rates[i], gen_tables)
            chain_inv_stages[i] = stages
        chain.append(cur)

    # Forward-backward blocks.
    block_caches = []
    fb_per_sample = np.zeros(batch)
    clamped = 0.0
    for b in range(num_blocks):
        start = b * step
        end = start + step
        x = chain[end]
        layer_caches = []
        for j in range(end - 1, start - 1, -1):
            inv_stages = None
            if not cascaded:
                x, inv_stages = _inverse_stack_forward(x, rates[j], gen_tables)
            conj_input = x
            x = units[j].conj().T @ x @ units[j]
            layer_caches.append((j, inv_stages, conj_input))
        loss_vec, fid_cache = _fb_pair_forward(chain[start], hermitize(x))
        fb_per_sample += loss_vec / num_blocks
        clamped += fid_cache["neg_mass"]
        block_caches.append((start, end, layer_caches, loss_vec, fid_cache))

    # Task head.
    if cascaded:
        rho_hat_final = chain[depth]
        task_stages = None
    else:
        rho_hat_final, task_stages = _inverse_stack_forward(chain[depth], rates[-1], gen_tables)
    signs = _sign_table(n)
    diag = np.real(np.diagonal(rho_hat_final, axis1=-2, axis2=-1))
    z = diag @ signs.T  # (batch, n)
    logits = z[:, :c]
    shifted = logits - logits.max(axis=1, keepdims=True)
    expd = np.exp(shifted)
    probs = expd / expd.sum(axis=1, keepdims=True)
    ce_per_sample = -np.log(probs[np.arange(batch), labels])
    predictions = np.argmax(probs, axis=1)

    fb_mean = float(fb_per_sample.mean())
    task_mean = float(ce_per_sample.mean())
    total = config.alpha_fb * fb_mean + config.alpha_task * task_mean

    if not want_grads:
        return BatchResult(total, fb_mean, task_mean, None, None, predictions, clamped)

    num_params = n * len(DESIGN_AXES[config.design])
    grad_theta_flat = [np.zeros(num_params) for _ in range(depth)]
    grad_rates = np.zeros_like(rates)
    g_chain = [np.zeros_like(rho0) for _ in range(depth + 1)]

    # Task head adjoint.
    if config.alpha_task != 0.0:
        g_logits = probs.copy()
        g_logits[np.arange(batch), labels] -= 1.0
        g_logits *= config.alpha_task / batch
        diag_vals = g_logits @ signs[:c]  # (batch, dim)
        g_task = np.zeros_like(rho0)
        idx = np.arange(rho0.shape[-1])
        g_task[:, idx, idx] = diag_vals.astype(complex)
        if cascaded:
            g_chain[depth] += g_task
        else:
            g = _inverse_stack_backward(
                g_task, rates[-1], gen_tables, task_stages, grad_rates[-1]
            )
            g_chain[depth] += g

    # Block adjoints.
    if config.alpha_fb != 0.0:
        g_loss = np.full(batch, config.alpha_fb / (num_blocks * batch))
        for start, end, layer_caches, _loss_vec, fid_cache in block_caches:
            g_target, g_back = _fb_pair_backward(fid_cache, g_loss)
            g_chain[start] += g_target
            g = g_back
            for j, inv_stages, conj_input in reversed(layer_caches):
                _theta_grad_backward_conj(g, conj_input, units[j], du_flat[j], grad_theta_flat[j])
                g = units[j] @ g @ units[j].conj().T
                if not cascaded:
                    g = _inverse_stack_backward(
                        g, rates[j], gen_tables, inv_stages, grad_rates[j]
                    )
            g_chain[end] += g

    # Chain adjoint.
    for i in range(depth - 1, -1, -1):
        g = g_chain[i + 1]
        if cascaded:
            g = _inverse_stack_backward(
                g, rates[i], gen_tables, chain_inv_stages[i], grad_rates[i]
            )
        g = _noise_layer_adjoint(g, noise_tables[i])
        _theta_grad_forward_conj(g, chain[i], units[i], du_flat[i], grad_theta_flat[i])
        g_chain[i] += units[i].conj().T @ g @ units[i]

    p = len(DESIGN_AXES[config.design])
    grad_theta = [vec.reshape(n, p) for vec in grad_theta_flat]
    return BatchResult(total, fb_mean, task_mean, grad_theta, grad_rates, predictions, clamped)


# ---------------------------------------------------------------------------
# Public training API
# ---------------------------------------------------------------------------


def _batch_arrays(batch) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(batch, Dataset):
        return batch.features, batch.labels
    if isinstance(batch, tuple) and len(batch) == 2:
        return np.asarray(batch[0], dtype=float), np.asarray(batch[1], dtype=np.int64)
    features = np.stack([s.features for s in batch])
    labels = np.array([s.label for s in batch], dtype=np.int64)
    return features, labels


@dataclass
class LossAndGrads:
    total: float
    fb: float
    task: float
    grad_theta: list[np.ndarray]
    grad_rates: np.ndarray
    clamped_mass: float


def _prepare(circuit: CircuitSpec, mitigation: MitigationModel, noise_true, config: TrainConfig):
    if circuit.depth != config.layers or circuit.n != config.n_qubits:
        raise ValidationError("circuit shape does not match the config")
    if any(layer.design != config.design for layer in circuit.layers):
        raise ValidationError("circuit layer design does not match the config")
    if len(noise_true) != config.layers:
        raise ValidationError("need one true-noise model per layer")
    if mitigation.layers != config.layers:
        raise ValidationError("mitigation model layer count does not match the config")
    theta = [layer.theta for layer in circuit.layers]
    return theta, _noise_tables(noise_true), _generator_tables(mitigation.generators)


def loss_and_gradients(
    batch,
    circuit: CircuitSpec,
    mitigation: MitigationModel,
    noise_true: list[NoiseModel],
    config: TrainConfig,
) -> LossAndGrads:
    """Mean batch loss and exact gradients for every angle and rate."""
    features, labels = _batch_arrays(batch)
    theta, noise_tables, gen_tables = _prepare(circuit, mitigation, noise_true, config)
    rho0 = np.stack([encode(f, circuit.encoder).data for f in features])
    result = _run_batch(
        rho0, labels, theta, mitigation.rates, config, noise_tables, gen_tables, True
    )
    if not np.isfinite(result.total):
        raise TrainingError(
            f"non-finite loss: total={result.total} fb={result.fb} task={result.task}"
        )
    return LossAndGrads(
        result.total,
        result.fb,
        result.task,
        result.grad_theta,
        result.grad_rates,
        result.clamped_mass,
    )


def batch_loss(
    batch,
    circuit: CircuitSpec,
    mitigation: MitigationModel,
    noise_true: list[NoiseModel],
    config: TrainConfig,
) -> float:
    """Loss only; the evaluation path used by finite-difference oracles."""
    features, labels = _batch_arrays(batch)
    theta, noise_tables, gen_tables = _prepare(circuit, mitigation, noise_true, config)
    rho0 = np.stack([encode(f, circuit.encoder).data for f in features])
    result = _run_batch(
        rho0, labels, theta, mitigation.rates, config, noise_tables, gen_tables, False
    )
    return result.total


@dataclass
class EpochMetrics:
    epoch: int
    fb: float
    task: float
    train_accuracy: float
    clamped_mass: float


def train_epoch(
    state: TrainState,
    dataset: Dataset,
    config: TrainConfig,
    noise_true: list[NoiseModel] | None = None,
    encoded: np.ndarray | None = None,
) -> EpochMetrics:
    """One shuffled pass of SGD with momentum; rates projected to >= 0."""
    if len(dataset) == 0:
        raise ValidationError("dataset is empty")
    if noise_true is None:
        noise_true = noise_models_from_config(config)
    if encoded is None:
        encoded = encode_dataset(dataset, config.n_qubits)
    noise_tables = _noise_tables(noise_true)
    gen_tables = _generator_tables(state.generators)
    order = state.rng.permutation(len(dataset))
    lr = config.learning_rate
    mom = config.momentum

    fb_sum = task_sum = clamp_sum = 0.0
    correct = 0
    for lo in range(0, len(order), config.batch_size):
        sel = order[lo : lo + config.batch_size]
        result = _run_batch(
            encoded[sel],
            dataset.labels[sel],
            state.theta,
            state.rates,
            config,
            noise_tables,
            gen_tables,
            True,
        )
        if not np.isfinite(result.total) or result.total > DIVERGENCE_ABORT:
            raise TrainingError(
                f"training diverged at epoch {state.epoch}, batch offset {lo}: "
                f"total={result.total:.6g} fb={result.fb:.6g} task={result.task:.6g}, "
                f"max|theta|={max(float(np.max(np.abs(t))) for t in state.theta):.3g}, "
                f"max rate={float(np.max(state.rates)):.3g}"
            )
        weight = sel.size
        fb_sum += result.fb * weight
        task_sum += result.task * weight
        clamp_sum += result.clamped_mass
        correct += int(np.sum(result.predictions == dataset.labels[sel]))

        for i in range(config.layers):
            state.vel_theta[i] = mom * state.vel_theta[i] - lr * result.grad_theta[i]
            state.theta[i] = state.theta[i] + state.vel_theta[i]
        # Rates live on a much smaller scale than angles; the multiplier lets
        # one optimizer serve both parameter groups.
        state.vel_rates = mom * state.vel_rates - lr * config.rate_lr_scale * result.grad_rates
        state.rates = np.maximum(state.rates + state.vel_rates, 0.0)

    state.epoch += 1
    size = len(dataset)
    return EpochMetrics(
        epoch=state.epoch,
        fb=fb_sum / size,
        task=task_sum / size,
        train_accuracy=correct / size,
        clamped_mass=clamp_sum / size,
    )


@dataclass
class EvalResult:
    accuracy: float
    per_class_correct: np.ndarray
    per_class_total: np.ndarray


def evaluate(
    state_or_params,
    dataset: Dataset,
    config: TrainConfig,
    noise_true: list[NoiseModel] | None = None,
    encoded: np.ndarray | None = None,
    chunk: int = 256,
) -> EvalResult:
    """Deterministic argmax accuracy of the mitigated readout."""
    if isinstance(state_or_params, TrainState):
        theta = state_or_params.theta
        rates = np.maximum(state_or_params.rates, 0.0)
        generators = state_or_params.generators
    else:
        theta, rates = state_or_params
        rates = np.maximum(np.asarray(rates, dtype=float), 0.0)
        generators = default_generators(config.n_qubits)
    if noise_true is None:
        noise_true = noise_models_from_config(config)
    if encoded is None:
        encoded = encode_dataset(dataset, config.n_qubits)
    noise_tables = _noise_tables(noise_true)
    gen_tables = _generator_tables(generators)
    c = config.num_classes
    correct = np.zeros(c, dtype=np.int64)
    total = np.zeros(c, dtype=np.int64)
    for lo in range(0, len(dataset), chunk):
        sel = slice(lo, lo + chunk)
        result = _run_batch(
            encoded[sel],
            dataset.labels[sel],
            theta,
            rates,
            config,
            noise_tables,
            gen_tables,
            False,
        )
        labels = dataset.labels[sel]
        for k in range(c):
            mask = labels == k
            total[k] += int(mask.sum())
            correct[k] += int(np.sum(result.predictions[mask] == k))
    return EvalResult(float(correct.sum() / max(total.sum(), 1)), correct, total)


def recover_rates(
    config: TrainConfig,
    theta: list[np.ndarray],
    noise_true: list[NoiseModel],
    rho0_batch: np.ndarray,
    steps: int = 200,
    lr: float = 2.0,
    momentum: float = 0.9,
) -> np.ndarray:
    """Fit mitigation rates alone on the forward-backward loss.

    Angles stay frozen; the task term is switched off.  Because the inverse
    channel is the exact inverse of the forward channel, the loss has its
    global minimum at the true rates, making this an identifiability probe.
    """
    fb_cfg = replace(config, alpha_fb=1.0, alpha_task=0.0)
    noise_tables = _noise_tables(noise_true)
    gen_tables = _generator_tables(default_generators(config.n_qubits))
    rates = np.zeros((config.layers, len(gen_tables)))
    vel = np.zeros_like(rates)
    labels = np.zeros(rho0_batch.shape[0], dtype=np.int64)
    for _ in range(steps):
        result = _run_batch(
            rho0_batch, labels, theta, rates, fb_cfg, noise_tables, gen_tables, True
        )
        vel = momentum * vel - lr * result.grad_rates
        rates = np.maximum(rates + vel, 0.0)
    return rates


def recover_rates_report(
    seed: int = 0, states: int = 64, steps: int = 200, lr: float = 2.0
) -> dict:
    """Run the rate-identifiability probe on random encoded states."""
    config = TrainConfig(n_qubits=4, layers=4, design="U2", step_size=1, num_classes=2, seed=seed)
    rng = np.random.default_rng(seed)
    theta = [rng.uniform(-math.pi, math.pi, size=config.theta_shape) for _ in range(config.layers)]
    noise_true = noise_models_from_config(config)
    spec = EncoderSpec(config.n_qubits)
    rho0 = np.stack([encode(rng.uniform(0.0, 1.0, 64), spec).data for _ in range(states)])
    fitted = recover_rates(config, theta, noise_true, rho0, steps=steps, lr=lr)
    truth = np.stack([m.rates for m in noise_true])
    rel_err = np.abs(fitted - truth) / truth
    return {
        "fitted": fitted,
        "truth": truth,
        "rel_err": rel_err,
        "max_rel_err": float(rel_err.max()),
    }


# ---------------------------------------------------------------------------
# Experiments
# ---------------------------------------------------------------------------


@dataclass
class ExperimentResult:
    per_seed_accuracy: list[float]
    mean_accuracy: float
    std_accuracy: float
    metrics_rows: list[dict]
    checkpoints: list[dict]


def _run_single_repeat(config: TrainConfig, repeat: int, train_set, test_set, noise_true,
                       encoded_train, encoded_test) -> tuple[list[dict], dict, float]:
    cfg_r = replace(config, seed=config.seed + repeat)
    state = init_state(cfg_r)
    rows = []
    best_acc = -1.0
    best_snapshot = state.snapshot()
    for _ in range(config.epochs):
        metrics = train_epoch(state, train_set, cfg_r, noise_true, encoded_train)
        val = evaluate(state, test_set, cfg_r, noise_true, encoded_test).accuracy
        rows.append(
            {
                "repeat": repeat,
                "epoch": metrics.epoch,
                "fb_loss": metrics.fb,
                "task_loss": metrics.task,
                "train_acc": metrics.train_accuracy,
                "val_acc": val,
                "clamped_mass": metrics.clamped_mass,
            }
        )
        if val > best_acc:
            best_acc = val
            best_snapshot = state.snapshot()
    checkpoint = checkpoint_payload(best_snapshot, cfg_r, state.generators)
    return rows, checkpoint, best_acc


def run_experiment(
    config: TrainConfig,
    train_set: Dataset,
    test_set: Dataset,
    repeats: int = 1,
) -> ExperimentResult:
    """Train ``repeats`` times with seeds ``seed + r``; report mean and std.

    The true noise is drawn once from the base seed (a fixed simulated
    device); repeats vary initialization and shuffling only.  The reported
    accuracy per repeat is the best-epoch validation accuracy.
    """
    if repeats < 1:
        raise ValidationError("repeats must be >= 1")
    noise_true = noise_models_from_config(config)
    encoded_train = encode_dataset(train_set, config.n_qubits)
    encoded_test = encode_dataset(test_set, config.n_qubits)

    workers_env = os.environ.get("QMIT_THREADS", "1")
    try:
        workers = int(workers_env)
    except ValueError as exc:
        raise ConfigError(f"QMIT_THREADS must be an integer, got {workers_env!r}") from exc
    if workers == 0:
        workers = min(repeats, os.cpu_count() or 1)
    workers = max(1, min(workers, repeats))

    def job(r: int):
        return _run_single_repeat(
            config, r, train_set, test_set, noise_true, encoded_train, encoded_test
        )

    if workers == 1:
        outcomes = [job(r) for r in range(repeats)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(job, range(repeats)))

    rows = [row for out in outcomes for row in out[0]]
    checkpoints = [out[1] for out in outcomes]
    accs = [out[2] for out in outcomes]
    mean = float(np.mean(accs))
    std = 0.0 if repeats == 1 else float(np.std(accs, ddof=1))
    return ExperimentResult(accs, mean, std, rows, checkpoints)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def checkpoint_payload(snapshot: dict, config: TrainConfig, generators) -> dict:
    from . import __version__

    mitigation = MitigationModel(
        config.n_qubits, generators, np.maximum(snapshot["rates"], 0.0)
    )
    return {
        "version": __version__,
        "config": config_to_json(config),
        "epoch": snapshot["epoch"],
        "theta": [t.tolist() for t in snapshot["theta"]],
        "mitigation": mitigation.to_json(),
        "seed": config.seed,
    }


def save_checkpoint(path, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)


def load_checkpoint(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def config_to_json(config: TrainConfig) -> dict:
    return {
        "n_qubits": config.n_qubits,
        "layers": config.layers,
        "design": config.design,
        "step_size": config.step_size,
        "mode": config.mode,
        "alpha_fb": config.alpha_fb,
        "alpha_task": config.alpha_task,
        "num_classes": config.num_classes,
        "epochs": config.epochs,
        "batch_size": config.batch_size,
        "learning_rate": config.learning_rate,
        "momentum": config.momentum,
        "rate_lr_scale": config.rate_lr_scale,
        "seed": config.seed,
        "noise_source": config.noise_source,
        "noise_low": config.noise_low,
        "noise_high": config.noise_high,
        "noise_path": config.noise_path,
    }


def config_from_json(payload: dict) -> TrainConfig:
    try:
        return TrainConfig(**payload)
    except TypeError as exc:
        raise ConfigError(f"malformed train config: {exc}") from exc
