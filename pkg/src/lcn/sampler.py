"""Metropolis-Hastings sampling of |psi|^2 in the zero-magnetization sector.

Chains hold configurations with equal numbers of up and down spins; each
proposal exchanges the values of one uniformly chosen up site and one
uniformly chosen down site, a symmetric move that keeps the sector fixed and
is ergodic within it.  Acceptance uses min(1, exp(2 * (log_amp' - log_amp))),
evaluated in log space so amplitudes never overflow.  Every chain owns its
seeded generator (base_seed + chain index), so a chain's trajectory is
reproducible regardless of how chains are batched or sharded over threads.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, LcnError


@dataclass
class SampleBatch:
    """Thinned samples pooled over chains, with per-config log amplitudes."""

    configs: np.ndarray  # (B * n_collect, N)
    log_amp: np.ndarray  # (B * n_collect,)
    chain_ids: np.ndarray  # (B * n_collect,) which chain produced each row
    acceptance_rate: float
    n_nonfinite: int  # proposals rejected because log_amp' was not finite


class Chains:
    """State of a bank of independent Metropolis chains."""

    def __init__(self, configs, up_pos, down_pos, rngs):
        self.configs = configs  # (B, N) int8
        self.up_pos = up_pos  # (B, N/2) site indices currently +1
        self.down_pos = down_pos
        self.rngs = rngs
        self.log_amp = None  # (B,) cache, filled by attach()
        self.accepted = 0
        self.proposed = 0
        self.nonfinite = 0

    @property
    def n_chains(self) -> int:
        return len(self.rngs)

    @property
    def n_sites(self) -> int:
        return self.configs.shape[1]

    def reset_counters(self) -> None:
        self.accepted = 0
        self.proposed = 0
        self.nonfinite = 0

    @property
    def acceptance_rate(self) -> float:
        return self.accepted / self.proposed if self.proposed else 0.0

    def attach(self, ansatz, max_tries: int = 1000) -> None:
        """Fill the log-amplitude cache; re-draw any chain that starts on a
        zero-amplitude configuration (possible with lookup wave functions)."""
        la = ansatz.log_amp(self.configs)
        for _ in range(max_tries):
            bad = np.nonzero(~np.isfinite(la))[0]
            if len(bad) == 0:
                break
            for b in bad:
                self.configs[b] = _random_sector_config(self.n_sites, self.rngs[b])
                self.up_pos[b] = np.nonzero(self.configs[b] > 0)[0]
                self.down_pos[b] = np.nonzero(self.configs[b] < 0)[0]
            la[bad] = ansatz.log_amp(self.configs[bad])
        else:
            raise LcnError("could not find finite-amplitude initial configurations")
        self.log_amp = la

    def shard(self, n_shards: int) -> list["Chains"]:
        """Views of this bank split by chain ranges (state stays shared)."""
        bounds = np.linspace(0, self.n_chains, n_shards + 1).astype(int)
        shards = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            if lo == hi:
                continue
            sub = Chains(
                self.configs[lo:hi],
                self.up_pos[lo:hi],
                self.down_pos[lo:hi],
                self.rngs[lo:hi],
            )
            sub.log_amp = self.log_amp[lo:hi] if self.log_amp is not None else None
            shards.append(sub)
        return shards


def _random_sector_config(n_sites: int, rng: np.random.Generator) -> np.ndarray:
    base = np.concatenate(
        [np.ones(n_sites // 2, dtype=np.int8), -np.ones(n_sites // 2, dtype=np.int8)]
    )
    return rng.permutation(base)


def init_chains(n_chains: int, n_sites: int, base_seed: int) -> Chains:
    """B chains at random equal-up-down configurations, seeds base_seed + i."""
    if n_sites % 2 != 0:
        raise ConfigError(f"zero-magnetization sampling needs even N, got {n_sites}")
    rngs = [np.random.default_rng(base_seed + i) for i in range(n_chains)]
    configs = np.stack([_random_sector_config(n_sites, rng) for rng in rngs])
    up_pos = np.stack([np.nonzero(c > 0)[0] for c in configs])
    down_pos = np.stack([np.nonzero(c < 0)[0] for c in configs])
    return Chains(configs, up_pos, down_pos, np.asarray(rngs, dtype=object))


def metropolis_step(chains: Chains, ansatz) -> None:
    """One exchange proposal per chain, batched through the wave function."""
    if chains.log_amp is None:
        chains.attach(ansatz)
    b = chains.n_chains
    half = chains.n_sites // 2
    draws = np.empty((b, 3))
    for i, rng in enumerate(chains.rngs):
        draws[i] = rng.random(3)
    slot_u = (draws[:, 0] * half).astype(np.int64)
    slot_d = (draws[:, 1] * half).astype(np.int64)
    rows = np.arange(b)
    site_u = chains.up_pos[rows, slot_u]
    site_d = chains.down_pos[rows, slot_d]

    proposal = chains.configs.copy()
    proposal[rows, site_u] = -1
    proposal[rows, site_d] = 1
    la_new = ansatz.log_amp(proposal)

    finite = np.isfinite(la_new)
    with np.errstate(invalid="ignore"):
        log_ratio = np.where(finite, 2.0 * (la_new - chains.log_amp), -np.inf)
    accept = finite & (draws[:, 2] < np.exp(np.minimum(0.0, log_ratio)))

    chains.proposed += b
    chains.accepted += int(accept.sum())
    chains.nonfinite += int((~finite).sum())

    idx = np.nonzero(accept)[0]
    if len(idx):
        chains.configs[idx] = proposal[idx]
        chains.log_amp[idx] = la_new[idx]
        chains.up_pos[idx, slot_u[idx]] = site_d[idx]
        chains.down_pos[idx, slot_d[idx]] = site_u[idx]


def run(
    chains: Chains,
    ansatz,
    burn_in_sweeps: int = 0,
    n_collect: int = 1,
    thinning: int | None = None,
    threads: int = 1,
) -> SampleBatch:
    """Burn in, then retain one configuration per chain every ``thinning`` steps.

    ``thinning`` defaults to the system size N.  Burn-in runs
    ``burn_in_sweeps * N`` steps.  With ``threads > 1`` the chain bank is
    sharded; per-chain generators make the retained samples identical to the
    single-threaded run chain by chain.
    """
    n = chains.n_sites
    thinning = n if thinning is None else thinning
    if thinning < 1:
        raise ConfigError("thinning must be >= 1")
    if chains.log_amp is None:
        chains.attach(ansatz)

    if threads > 1:
        shards = chains.shard(threads)
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = [
                pool.submit(_run_serial, s, ansatz, burn_in_sweeps, n_collect, thinning)
                for s in shards
            ]
            parts = [f.result() for f in futures]
        chains.accepted = sum(s.accepted for s in shards)
        chains.proposed = sum(s.proposed for s in shards)
        chains.nonfinite = sum(s.nonfinite for s in shards)
        offset = np.cumsum([0] + [s.n_chains for s in shards[:-1]])
        configs = np.concatenate([p.configs for p in parts])
        log_amp = np.concatenate([p.log_amp for p in parts])
        chain_ids = np.concatenate([p.chain_ids + off for p, off in zip(parts, offset)])
        total_prop = sum(s.proposed for s in shards)
        total_acc = sum(s.accepted for s in shards)
        return SampleBatch(
            configs=configs,
            log_amp=log_amp,
            chain_ids=chain_ids,
            acceptance_rate=total_acc / total_prop if total_prop else 0.0,
            n_nonfinite=sum(s.nonfinite for s in shards),
        )
    return _run_serial(chains, ansatz, burn_in_sweeps, n_collect, thinning)


def _run_serial(chains, ansatz, burn_in_sweeps, n_collect, thinning) -> SampleBatch:
    n = chains.n_sites
    for _ in range(burn_in_sweeps * n):
        metropolis_step(chains, ansatz)
    chains.reset_counters()
    if n_collect < 1:
        empty = np.zeros((0, n), dtype=chains.configs.dtype)
        return SampleBatch(empty, np.zeros(0), np.zeros(0, dtype=np.int64), 0.0, 0)
    kept_c, kept_la, kept_id = [], [], []
    for _ in range(n_collect):
        for _ in range(thinning):
            metropolis_step(chains, ansatz)
        kept_c.append(chains.configs.copy())
        kept_la.append(chains.log_amp.copy())
        kept_id.append(np.arange(chains.n_chains))
    return SampleBatch(
        configs=np.concatenate(kept_c),
        log_amp=np.concatenate(kept_la),
        chain_ids=np.concatenate(kept_id),
        acceptance_rate=chains.acceptance_rate,
        n_nonfinite=chains.nonfinite,
    )
