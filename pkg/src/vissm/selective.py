"""Selective (input-dependent) state space scans over multi-channel tokens.

Tokens are rows: x has shape (..., L, C) with C channels. Each channel
carries its own length-N hidden state. Per token, the input projections
produce a shared state-injection vector B_t (N,), a shared readout C_t (N,),
and a per-channel positive timescale dt (C,). The recurrence is

    h_t = exp(dt_t * A) (*) h_{t-1}  +  outer(dt_t * x_t, B_t)
    y_t = h_t @ C_t + D (*) x_t

with (*) elementwise over the (C, N) state. A holds negative reals so the
decay factors stay inside (0, 1); callers parameterize it as -exp(A_log).

Three evaluation routes are provided: a step-by-step loop, a chunk-parallel
form built on composing affine maps h -> a (*) h + b, and the non-causal
variant that collapses the recurrence into one global state shared by all
tokens (order cannot matter there, by construction).

All routes are differentiable through the tensor graph.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import NumericError, ShapeError, Tensor


@dataclass
class SelectiveProjection:
    """Input-to-parameter maps.

    The timescale path is factored through a low-rank bottleneck
    (C -> rank -> C) and softened by softplus so dt stays positive:
    dt = softplus(x @ w_dt_down @ w_dt_up + delta_base). The B/C paths are
    plain affine maps into the N-dimensional state space; their biases
    default to zero and exist so that constant-parameter (time-invariant)
    configurations are expressible.
    """

    w_b: Tensor        # (C, N)
    w_c: Tensor        # (C, N)
    w_dt_down: Tensor  # (C, rank)
    w_dt_up: Tensor    # (rank, C)
    delta_base: Tensor  # (C,)
    b_b: Tensor        # (N,)
    b_c: Tensor        # (N,)

    @property
    def channels(self) -> int:
        return self.w_b.shape[0]

    @property
    def state_dim(self) -> int:
        return self.w_b.shape[1]

    def tensors(self) -> dict:
        return {
            "w_b": self.w_b, "w_c": self.w_c, "w_dt_down": self.w_dt_down,
            "w_dt_up": self.w_dt_up, "delta_base": self.delta_base,
            "b_b": self.b_b, "b_c": self.b_c,
        }


def constant_projection(channels: int, state_dim: int, b_const, c_const,
                        delta_const) -> SelectiveProjection:
    """Projection with zero input weights: B, C, dt are the same every step.

    delta_const is the desired positive timescale; the stored bias is its
    softplus preimage.
    """
    delta_const = np.broadcast_to(np.asarray(delta_const, dtype=np.float64), (channels,))
    base = np.log(np.expm1(delta_const))  # softplus^{-1}
    rank = 1
    return SelectiveProjection(
        w_b=Tensor(np.zeros((channels, state_dim))),
        w_c=Tensor(np.zeros((channels, state_dim))),
        w_dt_down=Tensor(np.zeros((channels, rank))),
        w_dt_up=Tensor(np.zeros((rank, channels))),
        delta_base=Tensor(base.copy()),
        b_b=Tensor(np.broadcast_to(np.asarray(b_const, dtype=np.float64), (state_dim,)).copy()),
        b_c=Tensor(np.broadcast_to(np.asarray(c_const, dtype=np.float64), (state_dim,)).copy()),
    )


def project_params(x, proj: SelectiveProjection):
    """(B_t, C_t, dt) for every token: shapes (..., L, N), (..., L, N), (..., L, C)."""
    x = T.as_tensor(x)
    if x.shape[-1] != proj.channels:
        raise ShapeError(
            f"token dim {x.shape[-1]} does not match projection input dim {proj.channels}"
        )
    b = T.add(T.matmul(x, proj.w_b), proj.b_b)
    c = T.add(T.matmul(x, proj.w_c), proj.b_c)
    dt_pre = T.add(T.matmul(T.matmul(x, proj.w_dt_down), proj.w_dt_up), proj.delta_base)
    dt = T.softplus(dt_pre)
    return b, c, dt


def _step_terms(x, proj, a):
    """Shared precomputation: decay factors and injections for every step.

    Returns (a_exp, binj, c_proj, L) with a_exp and binj shaped
    (..., L, C, N) and c_proj shaped (..., L, N).
    """
    x = T.as_tensor(x)
    a = T.as_tensor(a)
    b_proj, c_proj, dt = project_params(x, proj)
    a_exp = T.exp(T.mul(T.unsqueeze(dt, -1), a))          # (..., L, C, N)
    dtx = T.mul(dt, x)                                    # (..., L, C)
    binj = T.mul(T.unsqueeze(b_proj, -2), T.unsqueeze(dtx, -1))  # (..., L, C, N)
    return a_exp, binj, c_proj, x.shape[-2]


def selective_scan_sequential(x, proj: SelectiveProjection, a, d) -> Tensor:
    """Exact step-by-step evaluation of the selective recurrence."""
    x = T.as_tensor(x)
    d = T.as_tensor(d)
    a_exp, binj, c_proj, length = _step_terms(x, proj, a)
    lead = x.shape[:-2]
    h = Tensor(np.zeros(lead + (proj.channels, proj.state_dim)))
    a_steps = T.unstack(a_exp, -3)
    b_steps = T.unstack(binj, -3)
    c_steps = T.unstack(c_proj, -2)
    ys = []
    for t in range(length):
        h = T.add(T.mul(a_steps[t], h), b_steps[t])
        if not np.all(np.isfinite(h.data)):
            raise NumericError(f"non-finite hidden state at step {t}")
        y_t = T.sum_(T.mul(h, T.unsqueeze(c_steps[t], -2)), axis=-1)
        ys.append(y_t)
    y = T.stack(ys, axis=-2)
    return T.add(y, T.mul(d, x))


def compose_affine(a2, b2, a1, b1):
    """Composition of h -> a2 (*) h + b2 after h -> a1 (*) h + b1."""
    return T.mul(a2, a1), T.add(T.mul(a2, b1), b2)


def selective_scan_parallel(x, proj: SelectiveProjection, a, d, chunk: int) -> Tensor:
    """Chunked evaluation: sequential within chunks (vectorized across them),
    then a short sequential pass over chunk-boundary states.

    Semantically identical to the sequential route; with chunk >= L it
    degenerates to the plain recurrence.
    """
    if chunk < 1:
        raise ValueError(f"chunk must be >= 1, got {chunk}")
    x = T.as_tensor(x)
    d = T.as_tensor(d)
    a_exp, binj, c_proj, length = _step_terms(x, proj, a)
    lead = x.shape[:-2]
    ch, n = proj.channels, proj.state_dim

    k = -(-length // chunk)  # ceil
    padded = k * chunk
    if padded > length:
        # identity affine maps in the tail keep the recurrence unchanged
        pad_shape = lead + (padded - length, ch, n)
        a_exp = T.concat([a_exp, Tensor(np.ones(pad_shape))], axis=-3)
        binj = T.concat([binj, Tensor(np.zeros(pad_shape))], axis=-3)
        c_proj = T.concat([c_proj, Tensor(np.zeros(lead + (padded - length, n)))], axis=-2)
    a_exp = T.reshape(a_exp, lead + (k, chunk, ch, n))
    binj = T.reshape(binj, lead + (k, chunk, ch, n))
    c_proj = T.reshape(c_proj, lead + (k, chunk, n))

    # within-chunk prefix compositions, vectorized over the k chunks
    a_steps = T.unstack(a_exp, -3)
    b_steps = T.unstack(binj, -3)
    a_pref = [a_steps[0]]
    b_pref = [b_steps[0]]
    for j in range(1, chunk):
        pa, pb = compose_affine(a_steps[j], b_steps[j], a_pref[-1], b_pref[-1])
        a_pref.append(pa)
        b_pref.append(pb)

    # chunk-boundary states: s_{k+1} = A_last[k] (*) s_k + B_last[k]
    a_last = T.unstack(a_pref[-1], -3)
    b_last = T.unstack(b_pref[-1], -3)
    states = [Tensor(np.zeros(lead + (ch, n)))]
    for kk in range(1, k):
        states.append(T.add(T.mul(a_last[kk - 1], states[-1]), b_last[kk - 1]))
    s = T.stack(states, axis=-3)  # (..., k, ch, n)

    # reconstruct every hidden state and read it out
    hs = [T.add(T.mul(a_pref[j], s), b_pref[j]) for j in range(chunk)]
    h = T.stack(hs, axis=-3)  # (..., k, chunk, ch, n)
    if not np.all(np.isfinite(h.data)):
        raise NumericError("non-finite hidden state in chunked scan")
    y = T.sum_(T.mul(h, T.unsqueeze(c_proj, -2)), axis=-1)  # (..., k, chunk, ch)
    y = T.reshape(y, lead + (padded, ch))
    if padded > length:
        y = T.slice_axis(y, -2, 0, length)
    return T.add(y, T.mul(d, x))


def nc_ssd(x, proj: SelectiveProjection, d) -> Tensor:
    """Non-causal variant: one global state shared by every token.

    The per-step decay is dropped entirely; the state is the plain sum of
    all token injections, so the result is exactly equivariant to token
    permutations:

        H = sum_t outer(dt_t * x_t, B_t)      (per channel, length-N)
        y_t = H @ C_t + D (*) x_t
    """
    x = T.as_tensor(x)
    d = T.as_tensor(d)
    b_proj, c_proj, dt = project_params(x, proj)
    dtx = T.mul(dt, x)  # (..., L, C)
    terms = T.mul(T.unsqueeze(b_proj, -2), T.unsqueeze(dtx, -1))  # (..., L, C, N)
    # canonical-order reduction over tokens makes the shared state, and
    # therefore the whole map, bit-exactly equivariant to permutations
    big_h = T.ordered_sum(terms, axis=-3)                         # (..., C, N)
    read = T.mul(T.unsqueeze(c_proj, -2), T.unsqueeze(big_h, -3))  # (..., L, C, N)
    y = T.sum_(read, axis=-1)                                      # (..., L, C)
    return T.add(y, T.mul(d, x))


def neg_exp_init(channels: int, state_dim: int) -> np.ndarray:
    """A_log values whose -exp spans {1, ..., N} on every channel."""
    row = np.log(np.arange(1, state_dim + 1, dtype=np.float64))
    return np.tile(row, (channels, 1))
