"""Decay-aware GRU over (values, mask, delta) triples, plus the plain-GRU
ablation cell.

Two trainable exponential decays drive the cell: a per-feature input decay
that interpolates a missing value between its last observation and the
feature's empirical mean, and a hidden decay that relaxes the carried state
toward zero as observations age.  Observation masks can additionally be
injected into the gate pre-activations (the default; switch off for the
gates-on-masked-values-only variant).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import NonFiniteError, ParamStore, Tensor

__all__ = ["decay", "impute", "GrudState", "GrudCell", "GruCell"]


def decay(delta, w: Tensor, b: Tensor) -> Tensor:
    """gamma = exp(-max(0, w.delta + b)), always in (0, 1].

    A 1-D weight acts per feature (input decay); a 2-D weight maps the
    interval vector into the hidden width (hidden decay).
    """
    delta = ad.as_tensor(delta)
    if w.ndim == 2:
        pre = ad.add(ad.matmul(delta, w), b)
    else:
        pre = ad.add(ad.mul(delta, w), b)
    return ad.exp_neg_relu(pre)


def impute(d_t, i_t, gamma_x: Tensor, last_observed, empirical_mean) -> Tensor:
    """Observed entries pass through; missing ones decay toward the mean:
    gamma * last_observed + (1 - gamma) * mean."""
    d_t = np.asarray(d_t, dtype=np.float64)
    i_t = np.asarray(i_t, dtype=np.float64)
    faded = ad.add(
        ad.mul(gamma_x, last_observed),
        ad.mul(ad.sub(1.0, gamma_x), empirical_mean),
    )
    return ad.add(Tensor(i_t * d_t), ad.mul(Tensor(1.0 - i_t), faded))


@dataclass
class GrudState:
    """Carried recurrence state for a batch of sequences."""

    h: Tensor  # (batch, hidden)
    last_observed: np.ndarray  # (batch, features); starts at the empirical means
    empirical_mean: np.ndarray  # (features,)


def _glorot(rng, n_in, n_out):
    limit = np.sqrt(6.0 / (n_in + n_out))
    return rng.uniform(-limit, limit, size=(n_in, n_out))


class GrudCell:
    """GRU-D cell; parameters live in the given store under `prefix`."""

    def __init__(
        self,
        store: ParamStore,
        prefix: str,
        n_features: int,
        hidden_size: int,
        rng: np.random.Generator,
        mask_injection: bool = True,
    ):
        self.n_features = n_features
        self.hidden_size = hidden_size
        self.mask_injection = mask_injection
        n, h = n_features, hidden_size

        self.gamma_x_w = store.add(f"{prefix}.gamma_x_w", rng.uniform(0.0, 0.1, size=n))
        self.gamma_x_b = store.add(f"{prefix}.gamma_x_b", np.zeros(n))
        self.gamma_h_w = store.add(f"{prefix}.gamma_h_w", rng.uniform(0.0, 0.1, size=(n, h)))
        self.gamma_h_b = store.add(f"{prefix}.gamma_h_b", np.zeros(h))

        self.gates = {}
        for gate in ("z", "r", "h"):
            self.gates[gate] = {
                "W": store.add(f"{prefix}.W_{gate}", _glorot(rng, n, h)),
                "U": store.add(f"{prefix}.U_{gate}", _glorot(rng, h, h)),
                "b": store.add(f"{prefix}.b_{gate}", np.zeros(h)),
            }
            if mask_injection:
                self.gates[gate]["V"] = store.add(f"{prefix}.V_{gate}", _glorot(rng, n, h))

    def initial_state(self, batch_size: int, empirical_mean: np.ndarray) -> GrudState:
        mean = np.asarray(empirical_mean, dtype=np.float64)
        return GrudState(
            h=Tensor(np.zeros((batch_size, self.hidden_size))),
            last_observed=np.tile(mean, (batch_size, 1)),
            empirical_mean=mean,
        )

    def _gate_pre(self, gate, d_hat: Tensor, h_dec: Tensor, i_t: np.ndarray) -> Tensor:
        p = self.gates[gate]
        pre = ad.add(ad.add(ad.matmul(d_hat, p["W"]), ad.matmul(h_dec, p["U"])), p["b"])
        if self.mask_injection:
            pre = ad.add(pre, ad.matmul(Tensor(i_t), p["V"]))
        return pre

    def step(self, state: GrudState, d_t, i_t, delta_t) -> GrudState:
        """One recurrence step over a (batch, features) slice."""
        d_t = np.atleast_2d(np.asarray(d_t, dtype=np.float64))
        i_t = np.atleast_2d(np.asarray(i_t, dtype=np.float64))
        delta_t = np.atleast_2d(np.asarray(delta_t, dtype=np.float64))

        gamma_x = decay(delta_t, self.gamma_x_w, self.gamma_x_b)
        gamma_h = decay(delta_t, self.gamma_h_w, self.gamma_h_b)
        d_hat = impute(d_t, i_t, gamma_x, state.last_observed, state.empirical_mean)

        h_dec = ad.mul(gamma_h, state.h)
        z = ad.sigmoid(self._gate_pre("z", d_hat, h_dec, i_t))
        r = ad.sigmoid(self._gate_pre("r", d_hat, h_dec, i_t))
        p = self.gates["h"]
        cand_pre = ad.add(
            ad.add(ad.matmul(d_hat, p["W"]), ad.matmul(ad.mul(r, h_dec), p["U"])), p["b"]
        )
        if self.mask_injection:
            cand_pre = ad.add(cand_pre, ad.matmul(Tensor(i_t), p["V"]))
        h_tilde = ad.tanh(cand_pre)
        h_new = ad.add(ad.mul(ad.sub(1.0, z), h_dec), ad.mul(z, h_tilde))

        if not np.all(np.isfinite(h_new.data)):
            raise NonFiniteError("hidden state went non-finite")
        last = i_t * d_t + (1.0 - i_t) * state.last_observed
        return GrudState(h=h_new, last_observed=last, empirical_mean=state.empirical_mean)

    def encode_sequence(self, values, mask, delta, empirical_mean) -> Tensor:
        """Fold the cell over t = 0..T-1 from a zero state; returns final h.

        Accepts (T, N) arrays for one episode or (B, T, N) for a batch.
        """
        values = np.asarray(values, dtype=np.float64)
        if values.ndim == 2:
            values, mask, delta = (np.asarray(a)[None] for a in (values, mask, delta))
        mask = np.asarray(mask, dtype=np.float64)
        delta = np.asarray(delta, dtype=np.float64)
        if values.shape[1] < 1:
            raise ValueError("need at least one time step")

        state = self.initial_state(values.shape[0], empirical_mean)
        for t in range(values.shape[1]):
            try:
                state = self.step(state, values[:, t], mask[:, t], delta[:, t])
            except NonFiniteError as exc:
                raise NonFiniteError(f"{exc} at time step {t}") from exc
        return state.h


class GruCell:
    """Standard GRU consuming mean-imputed values: the no-decay ablation."""

    def __init__(
        self,
        store: ParamStore,
        prefix: str,
        n_features: int,
        hidden_size: int,
        rng: np.random.Generator,
    ):
        self.n_features = n_features
        self.hidden_size = hidden_size
        self.gates = {}
        for gate in ("z", "r", "h"):
            self.gates[gate] = {
                "W": store.add(f"{prefix}.W_{gate}", _glorot(rng, n_features, hidden_size)),
                "U": store.add(f"{prefix}.U_{gate}", _glorot(rng, hidden_size, hidden_size)),
                "b": store.add(f"{prefix}.b_{gate}", np.zeros(hidden_size)),
            }

    def step(self, h: Tensor, x_t) -> Tensor:
        x = Tensor(np.atleast_2d(np.asarray(x_t, dtype=np.float64)))
        gz, gr, gh = self.gates["z"], self.gates["r"], self.gates["h"]
        z = ad.sigmoid(ad.add(ad.add(ad.matmul(x, gz["W"]), ad.matmul(h, gz["U"])), gz["b"]))
        r = ad.sigmoid(ad.add(ad.add(ad.matmul(x, gr["W"]), ad.matmul(h, gr["U"])), gr["b"]))
        h_tilde = ad.tanh(
            ad.add(ad.add(ad.matmul(x, gh["W"]), ad.matmul(ad.mul(r, h), gh["U"])), gh["b"])
        )
        h_new = ad.add(ad.mul(ad.sub(1.0, z), h), ad.mul(z, h_tilde))
        if not np.all(np.isfinite(h_new.data)):
            raise NonFiniteError("hidden state went non-finite")
        return h_new

    def encode_sequence(self, values, mask, delta, empirical_mean) -> Tensor:
        """Missing entries are frozen at the empirical mean; delta is unused."""
        values = np.asarray(values, dtype=np.float64)
        if values.ndim == 2:
            values, mask = values[None], np.asarray(mask)[None]
        mask = np.asarray(mask, dtype=np.float64)
        mean = np.asarray(empirical_mean, dtype=np.float64)
        filled = mask * values + (1.0 - mask) * mean

        h = Tensor(np.zeros((values.shape[0], self.hidden_size)))
        for t in range(values.shape[1]):
            try:
                h = self.step(h, filled[:, t])
            except NonFiniteError as exc:
                raise NonFiniteError(f"{exc} at time step {t}") from exc
        return h
