"""Wave-function ansatz: lattice-conv embedding, SE + non-local layers, MLP.

The network maps a spin configuration (values +-1 scattered onto the grid)
to two real outputs: the natural log of the amplitude and the phase of the
wave function.  Each trunk layer runs

    LayerNorm -> ReLU -> LatticeConv -> SE block -> residual add -> Non-local

with the normalization/activation prefix dropped when ``pre_activation`` is
off (triangular lattices).  The final feature map is flattened whole, so
every lattice cell contributes to the MLP head.

Masking discipline: when the embedding masks alignment cells, they are
re-zeroed after every sub-operation that could write into them (the
normalization offset, convolutions, the non-local residual), so padded cells
can never influence the outputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from . import autodiff as ad
from .conv import ConvPlan, build_conv_plan, lattice_conv, scatter, special_weight_groups
from .errors import ConfigError, ShapeError
from .lattice import Lattice, embed_for


class WaveAmplitude(NamedTuple):
    log_amp: float
    phase: float


@dataclass(frozen=True)
class AnsatzConfig:
    channels: int = 32
    n_layers: int = 2
    se_reduction: int = 4
    mlp_hidden: int = 128
    pre_activation: bool = True
    pad_virtual: bool = True
    mask_enabled: bool = True
    padding_mode: str = "periodic"
    kernel_mode: str = "regular"

    def validate(self) -> None:
        if self.channels < 1 or self.channels % self.se_reduction != 0:
            raise ConfigError(
                f"channels ({self.channels}) must be a positive multiple of "
                f"se_reduction ({self.se_reduction})"
            )
        if self.n_layers < 1:
            raise ConfigError("n_layers must be >= 1")
        if self.mlp_hidden < 1:
            raise ConfigError("mlp_hidden must be >= 1")


def _uniform_init(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


class Ansatz:
    """LCN wave function for one lattice; owns its parameters and conv plan."""

    def __init__(self, lattice: Lattice, config: AnsatzConfig, seed: int = 0):
        config.validate()
        self.lattice = lattice
        self.config = config
        ring = 2 if config.kernel_mode == "special-2hop" else 1
        self.embedding = embed_for(
            lattice, config.pad_virtual, config.mask_enabled, ring_width=ring
        )
        self.plan: ConvPlan = build_conv_plan(
            self.embedding, lattice, config.padding_mode, config.kernel_mode
        )
        self.params: dict[str, ad.Tensor] = {}
        self._init_params(np.random.default_rng(seed))

    # -- parameters ---------------------------------------------------------

    def _add(self, name: str, value: np.ndarray) -> None:
        if name in self.params:
            raise ConfigError(f"duplicate parameter name {name}")
        self.params[name] = ad.param(value)

    def _init_params(self, rng: np.random.Generator) -> None:
        cfg = self.config
        d = cfg.channels
        k = self.plan.kernel_h
        groups = special_weight_groups(self.plan)

        def conv_weights(prefix: str, d_in: int, d_out: int) -> None:
            fan_in, fan_out = k * k * d_in, k * k * d_out
            for g in range(groups):
                suffix = f".w{g}" if groups > 1 else ".w"
                self._add(
                    prefix + suffix,
                    _uniform_init(rng, (k, k, d_out, d_in), fan_in, fan_out),
                )

        conv_weights("embed.conv", 1, d)
        for i in range(cfg.n_layers):
            p = f"layer{i}"
            if cfg.pre_activation:
                self._add(f"{p}.ln.scale", np.ones(d))
                self._add(f"{p}.ln.offset", np.zeros(d))
            conv_weights(f"{p}.conv", d, d)
            dr = d // cfg.se_reduction
            self._add(f"{p}.se.w1", _uniform_init(rng, (d, dr), d, dr))
            self._add(f"{p}.se.w2", _uniform_init(rng, (dr, d), dr, d))
            for nm in ("theta", "phi", "g", "z"):
                self._add(f"{p}.nl.{nm}", _uniform_init(rng, (d, d), d, d))
        n_flat = self.embedding.height * self.embedding.width * d
        self._add("mlp.w1", _uniform_init(rng, (n_flat, cfg.mlp_hidden), n_flat, cfg.mlp_hidden))
        self._add("mlp.b1", np.zeros(cfg.mlp_hidden))
        self._add("mlp.w2", _uniform_init(rng, (cfg.mlp_hidden, 2), cfg.mlp_hidden, 2))
        self._add("mlp.b2", np.zeros(2))

    @property
    def n_sites(self) -> int:
        return self.lattice.n_sites

    @property
    def n_params(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def param_arrays(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.params.items()}

    def load_param_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        missing = set(self.params) ^ set(arrays)
        if missing:
            raise ConfigError(f"parameter names do not match checkpoint: {sorted(missing)}")
        for name, value in arrays.items():
            if self.params[name].data.shape != value.shape:
                raise ConfigError(
                    f"parameter {name}: shape {value.shape} != {self.params[name].data.shape}"
                )
            self.params[name].data = np.asarray(value, dtype=np.float64).copy()

    # -- building blocks ----------------------------------------------------

    def _conv_weight(self, prefix: str):
        groups = special_weight_groups(self.plan)
        if groups == 1 and self.plan.kernel_mode == "regular":
            return self.params[prefix + ".w"]
        if groups == 1:
            return [self.params[prefix + ".w"]]
        return [self.params[f"{prefix}.w{g}"] for g in range(groups)]

    def se_block(self, u: ad.Tensor, layer: int) -> ad.Tensor:
        """Squeeze (spatial mean) then excitation (gated bottleneck) rescale."""
        w1 = self.params[f"layer{layer}.se.w1"]
        w2 = self.params[f"layer{layer}.se.w2"]
        z = ad.mean(u, axes=(1, 2))
        gate = ad.sigmoid(ad.matmul(ad.relu(ad.matmul(z, w1)), w2))
        return ad.scale_channels(u, gate)

    def nonlocal_block(self, u: ad.Tensor, layer: int) -> ad.Tensor:
        """Embedded-gaussian attention over all grid positions, residual out."""
        p = f"layer{layer}.nl"
        b, h, w, d = u.data.shape
        x = ad.reshape(u, (b, h * w, d))
        theta = ad.matmul(x, self.params[f"{p}.theta"])
        phi = ad.matmul(x, self.params[f"{p}.phi"])
        g = ad.matmul(x, self.params[f"{p}.g"])
        scores = ad.add(ad.matmul(theta, ad.transpose_last(phi)), ad.tensor(self.plan.attn_bias))
        attn = ad.softmax(scores, axis=-1)
        z = ad.matmul(ad.matmul(attn, g), self.params[f"{p}.z"])
        if self.plan.mask_enabled:
            z = ad.mask_mul(z, self.plan.active_mask.reshape(h * w, 1))
        return ad.reshape(ad.add(x, z), (b, h, w, d))

    def se_nonlocal_layer(self, u: ad.Tensor, layer: int) -> ad.Tensor:
        v = u
        if self.config.pre_activation:
            v = ad.layer_norm(
                u, self.params[f"layer{layer}.ln.scale"], self.params[f"layer{layer}.ln.offset"]
            )
            if self.plan.mask_enabled:
                v = ad.mask_mul(v, self.plan.active_mask)
            v = ad.relu(v)
        c = lattice_conv(v, self._conv_weight(f"layer{layer}.conv"), self.plan)
        s = self.se_block(c, layer)
        r = ad.add(u, s)
        return self.nonlocal_block(r, layer)

    # -- forward ------------------------------------------------------------

    def forward_grid(self, grid: ad.Tensor) -> tuple[ad.Tensor, ad.Tensor]:
        """Network from an already-scattered (B,H,W,1) grid to (log_amp, phase)."""
        u = lattice_conv(grid, self._conv_weight("embed.conv"), self.plan)
        for i in range(self.config.n_layers):
            u = self.se_nonlocal_layer(u, i)
        flat = ad.flatten(u)
        hidden = ad.relu(ad.add(ad.matmul(flat, self.params["mlp.w1"]), self.params["mlp.b1"]))
        out = ad.add(ad.matmul(hidden, self.params["mlp.w2"]), self.params["mlp.b2"])
        return ad.index_last(out, 0), ad.index_last(out, 1)

    def forward_batch(self, configs: np.ndarray) -> tuple[ad.Tensor, ad.Tensor]:
        """Graph-building forward over a (B,N) batch of +-1 configurations."""
        configs = np.asarray(configs)
        if configs.ndim != 2 or configs.shape[1] != self.n_sites:
            raise ShapeError("forward_batch", configs.shape, (None, self.n_sites))
        grid = ad.tensor(scatter(configs.astype(np.float64), self.embedding))
        return self.forward_grid(grid)

    def log_amp_phase(self, configs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        with ad.no_grad():
            la, ph = self.forward_batch(configs)
        return la.data, ph.data

    def log_amp(self, configs: np.ndarray) -> np.ndarray:
        return self.log_amp_phase(configs)[0]

    def forward(self, config: np.ndarray) -> WaveAmplitude:
        la, ph = self.log_amp_phase(np.asarray(config)[None, :])
        return WaveAmplitude(float(la[0]), float(ph[0]))

    def log_psi_ratio(self, c_from: np.ndarray, c_to: np.ndarray) -> complex:
        """log(psi(c_to) / psi(c_from)) as a complex number."""
        la, ph = self.log_amp_phase(np.stack([np.asarray(c_from), np.asarray(c_to)]))
        return complex(la[1] - la[0], ph[1] - ph[0])
