"""Variational Monte Carlo training loop and energy evaluation.

One optimization step: advance every Markov chain by the thinning interval,
take the chain states as the batch, compute local energies through one
batched wave-function evaluation, and descend the stochastic energy gradient

    g = (2/B) * sum_c [ Re(E~_c) d log_amp(c)/dw + Im(E~_c) d phase(c)/dw ],

where E~_c is the local energy centered by the batch mean.  The gradient is
realized by backpropagating the surrogate scalar
(2/B) * sum_c [Re(E~_c) log_amp(c) + Im(E~_c) phase(c)] with E~ held
constant.  Updates use Adam with a step-decay learning-rate schedule and
optional global gradient-norm clipping.

The checkpoint kept is the one with the lowest *stable* training energy:
lowest mean over a trailing window whose variance is at or below the median
of all window variances seen so far.

Evaluation estimates the energy from fresh equilibrated chains; chains are
grouped into bins and the error bar is the standard deviation of the bin
means (a standard-error variant divides by sqrt(n_bins)).
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, DivergenceError
from .hamiltonian import local_energies
from .lattice import Lattice
from .sampler import init_chains, run as run_chains


@dataclass
class TrainConfig:
    batch_size: int = 500
    lr: float = 1e-3
    decay_steps: tuple = ()
    grad_clip: float | None = None
    clip_after_first_decay: bool = False
    max_steps: int = 30000
    seed: int = 0
    burn_in_sweeps: int = 100
    thinning: int | None = None  # defaults to N
    smooth_window: int = 50
    eval_samples: int = 200000
    eval_bins: int = 100

    def validate(self) -> None:
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if list(self.decay_steps) != sorted(set(self.decay_steps)):
            raise ConfigError("decay_steps must be strictly increasing")
        if self.max_steps < 1:
            raise ConfigError("max_steps must be >= 1")


@dataclass
class EnergyEstimate:
    energy_per_site: float
    error_bar: float
    n_samples: int
    n_bins: int


@dataclass
class TrainResult:
    best_energy_per_site: float
    best_step: int
    steps_run: int
    final_lr: float
    best_params: dict
    diverged: bool = False


def estimate_energy(e_loc: np.ndarray) -> tuple[complex, float]:
    """Batch mean of E_loc and its population variance (zero-variance signal)."""
    if len(e_loc) == 0:
        raise ConfigError("estimate_energy needs a nonempty batch")
    mean = complex(e_loc.mean())
    var = float(np.mean(np.abs(e_loc - mean) ** 2))
    return mean, var


def estimate_gradient(ansatz, configs: np.ndarray, e_loc: np.ndarray) -> dict:
    """Centered log-derivative gradient estimate over a sampled batch."""
    b = len(configs)
    centered = e_loc - e_loc.mean()
    w_re = ad.tensor(2.0 * centered.real / b)
    w_im = ad.tensor(2.0 * centered.imag / b)
    ad.zero_grads(ansatz.params.values())
    log_amp, phase = ansatz.forward_batch(configs)
    loss = ad.add(ad.sum_(ad.mul(log_amp, w_re)), ad.sum_(ad.mul(phase, w_im)))
    ad.backward(loss)
    return {
        name: (p.grad if p.grad is not None else np.zeros_like(p.data))
        for name, p in ansatz.params.items()
    }


def grad_norm(grads: dict) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def clip_gradients(grads: dict, max_norm: float) -> dict:
    """Scale the whole gradient so its global norm is at most ``max_norm``."""
    norm = grad_norm(grads)
    if norm <= max_norm or norm == 0.0:
        return grads
    scale = max_norm / norm
    return {k: g * scale for k, g in grads.items()}


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(
    params: dict,
    grads: dict,
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    state.t += 1
    t = state.t
    for name, p in params.items():
        g = grads[name]
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            state.m[name] = m
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * g * g
        mhat = m / (1 - beta1**t)
        vhat = v / (1 - beta2**t)
        p.data -= lr * mhat / (np.sqrt(vhat) + eps)


class _BestTracker:
    """Lowest smoothed training energy with below-median window variance."""

    def __init__(self, window: int):
        self.window = window
        self.energies: list[float] = []
        self.window_vars: list[float] = []
        self.best_value = np.inf
        self.best_step = -1

    def update(self, step: int, energy_per_site: float) -> bool:
        self.energies.append(energy_per_site)
        if len(self.energies) < self.window:
            return False
        tail = np.array(self.energies[-self.window :])
        smoothed = float(tail.mean())
        var = float(tail.var())
        self.window_vars.append(var)
        stable = var <= float(np.median(self.window_vars))
        if stable and smoothed < self.best_value:
            self.best_value = smoothed
            self.best_step = step
            return True
        return False


def train(
    ansatz,
    lattice: Lattice,
    config: TrainConfig,
    log_path: str | None = None,
    checkpoint_cb=None,
    threads: int = 1,
) -> TrainResult:
    """Optimize the ansatz on the lattice Hamiltonian; returns the best state.

    ``checkpoint_cb(params_dict, meta_dict)`` is invoked whenever the best
    checkpoint improves and once at the end.  A NaN energy aborts with
    DivergenceError after the callback has preserved the last good state.
    """
    config.validate()
    n = lattice.n_sites
    rng_offset = 1000003  # chain seeds live in their own stream, away from init
    chains = init_chains(config.batch_size, n, config.seed + rng_offset)
    chains.attach(ansatz)
    burn = run_chains(
        chains, ansatz, burn_in_sweeps=config.burn_in_sweeps, n_collect=0, threads=threads
    )
    del burn

    adam = AdamState()
    tracker = _BestTracker(config.smooth_window)
    lr = config.lr
    decays = list(config.decay_steps)
    clip_active = config.grad_clip is not None and not config.clip_after_first_decay
    best_params = ansatz.param_arrays()
    best_meta = {"step": 0, "energy_per_site": float("nan")}
    log_fh = open(log_path, "w") if log_path else None

    try:
        steps_run = 0
        for step in range(1, config.max_steps + 1):
            batch = run_chains(chains, ansatz, n_collect=1, thinning=config.thinning, threads=threads)
            e_loc = local_energies(batch.configs, lattice, ansatz)
            e_mean, e_var = estimate_energy(e_loc)
            energy_per_site = e_mean.real / n

            if not np.isfinite(energy_per_site):
                raise DivergenceError(
                    f"training energy diverged at step {step}; "
                    f"best checkpoint from step {best_meta['step']} retained"
                )

            grads = estimate_gradient(ansatz, batch.configs, e_loc)
            raw_norm = grad_norm(grads)
            if decays and step >= decays[0]:
                decays.pop(0)
                lr *= 0.1
                if config.grad_clip is not None and config.clip_after_first_decay:
                    clip_active = True
            if clip_active:
                grads = clip_gradients(grads, config.grad_clip)
            adam_step(ansatz.params, grads, adam, lr)
            steps_run = step

            if log_fh:
                log_fh.write(
                    json.dumps(
                        {
                            "step": step,
                            "energy_per_site": energy_per_site,
                            "e_loc_variance": e_var,
                            "acceptance_rate": batch.acceptance_rate,
                            "lr": lr,
                            "grad_norm": raw_norm,
                        }
                    )
                    + "\n"
                )

            if tracker.update(step, energy_per_site):
                best_params = ansatz.param_arrays()
                best_meta = {
                    "step": step,
                    "energy_per_site": tracker.best_value,
                }
                if checkpoint_cb:
                    checkpoint_cb(best_params, dict(best_meta))
    finally:
        if log_fh:
            log_fh.close()

    if tracker.best_step < 0:
        # Run shorter than the smoothing window: keep the final parameters.
        best_params = ansatz.param_arrays()
        best_meta = {
            "step": steps_run,
            "energy_per_site": float(np.mean(tracker.energies[-10:])) if tracker.energies else float("nan"),
        }
    if checkpoint_cb:
        checkpoint_cb(best_params, dict(best_meta))
    return TrainResult(
        best_energy_per_site=best_meta["energy_per_site"],
        best_step=best_meta["step"],
        steps_run=steps_run,
        final_lr=lr,
        best_params=best_params,
    )


def evaluate(
    ansatz,
    lattice: Lattice,
    n_samples: int = 200000,
    n_bins: int = 100,
    n_chains: int = 200,
    seed: int = 1,
    burn_in_sweeps: int = 100,
    thinning: int | None = None,
    threads: int = 1,
    standard_error: bool = False,
    chunk: int = 4096,
) -> EnergyEstimate:
    """Estimate the energy per site from fresh equilibrated chains.

    Chains are grouped into ``n_bins`` bins; the error bar is the standard
    deviation of the per-bin mean energies (divided by sqrt(n_bins) when
    ``standard_error`` is set).
    """
    if n_chains < n_bins:
        n_bins = n_chains
        warnings.warn(f"fewer chains than bins; using n_bins={n_bins}")
    if n_chains % n_bins != 0:
        warnings.warn("chains not divisible by bins; bin sizes rounded down")
    per_chain = n_samples // n_chains
    if per_chain * n_chains != n_samples:
        warnings.warn(
            f"n_samples={n_samples} not divisible by {n_chains} chains; "
            f"collecting {per_chain} per chain"
        )
    if per_chain < 1:
        raise ConfigError("n_samples too small for the chain count")

    chains = init_chains(n_chains, lattice.n_sites, seed)
    chains.attach(ansatz)
    batch = run_chains(
        chains,
        ansatz,
        burn_in_sweeps=burn_in_sweeps,
        n_collect=per_chain,
        thinning=thinning,
        threads=threads,
    )
    e_loc = np.empty(len(batch.configs), dtype=complex)
    for lo in range(0, len(batch.configs), chunk):
        hi = min(len(batch.configs), lo + chunk)
        e_loc[lo:hi] = local_energies(batch.configs[lo:hi], lattice, ansatz)

    n = lattice.n_sites
    chains_per_bin = n_chains // n_bins
    bin_of_chain = np.minimum(
        np.arange(n_chains) // chains_per_bin, n_bins - 1
    )
    sample_bins = bin_of_chain[batch.chain_ids]
    e_site = e_loc.real / n
    bin_means = np.array([e_site[sample_bins == k].mean() for k in range(n_bins)])
    error = float(bin_means.std())
    if standard_error:
        error /= np.sqrt(n_bins)
    return EnergyEstimate(
        energy_per_site=float(e_site.mean()),
        error_bar=error,
        n_samples=len(e_loc),
        n_bins=n_bins,
    )


def sector_expectation(ansatz, lattice: Lattice, basis) -> tuple[complex, np.ndarray, np.ndarray]:
    """Exact variational energy by full enumeration of the S^z = 0 sector.

    Returns (energy, probabilities, local energies); the sampling-free
    reference the stochastic estimators are tested against.
    """
    configs = basis.configs
    log_amp, _ = ansatz.log_amp_phase(configs)
    w = np.exp(2.0 * (log_amp - log_amp.max()))
    probs = w / w.sum()
    e_loc = local_energies(configs, lattice, ansatz)
    energy = complex(np.sum(probs * e_loc))
    return energy, probs, e_loc


def sector_energy_gradient(ansatz, lattice: Lattice, basis) -> tuple[float, dict]:
    """Exact gradient of the sector-enumerated variational energy."""
    energy, probs, e_loc = sector_expectation(ansatz, lattice, basis)
    centered = e_loc - energy
    w_re = ad.tensor(2.0 * probs * centered.real)
    w_im = ad.tensor(2.0 * probs * centered.imag)
    ad.zero_grads(ansatz.params.values())
    log_amp, phase = ansatz.forward_batch(basis.configs)
    loss = ad.add(ad.sum_(ad.mul(log_amp, w_re)), ad.sum_(ad.mul(phase, w_im)))
    ad.backward(loss)
    grads = {
        name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
        for name, p in ansatz.params.items()
    }
    return energy.real, grads
