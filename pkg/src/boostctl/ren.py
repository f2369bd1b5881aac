"""Recurrent equilibrium network with a free (unconstrained) parametrization.

Explicit form with strictly lower-triangular ``D11``::

    ξ_{t+1} = A ξ_t + B1 w_t + B2 ŷ_t
    ζ_t     = C1 ξ_t + D11 w_t + D12 ŷ_t,     w_t = tanh(ζ_t)
    û_t     = C2 ξ_t + D21 w_t + D22 ŷ_t + b_t

Every ``θ`` yields a network that is contractive with rate ``α`` in the
metric ``V(ξ) = ξᵀ Eᵀ P⁻¹ E ξ``.  Construction: ``H = XᵀX + εI`` over the
blocks ``(ξ, w, ξ⁺)`` is read as::

    [[α²(E + Eᵀ - P), -C1ᵀ,              Fᵀ ],
     [-C1,             2Λ - D11 - D11ᵀ,  B1ᵀ],
     [F,               B1,               P  ]]

which is the Schur form of ``V(Δξ⁺) - α² V(Δξ) + 2Δwᵀ Λ(Δζ - Δw) ≤ 0``.
The gain-bounded variant (``β`` given, ``D22 = 0``) first adds
``(1/β)[C2 D21 0]ᵀ[C2 D21 0] + (1/β)[0 -D12ᵀ B2ᵀ]ᵀ[0 -D12ᵀ B2ᵀ]`` to ``H``,
which certifies ``|Δû|² ≤ β²|Δŷ|² + β V(Δξ_0)`` summed over time.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .operators import C, S, CausalOperator

EPS_H = 1e-4


@dataclass(frozen=True)
class RenDims:
    q1: int      # state
    q2: int      # nonlinear layer width
    q_in: int
    q_out: int


@dataclass
class RenParams:
    """Unconstrained parameters of a REN.

    ``bias_mode`` is ``"time_varying"`` (one trainable vector per step for
    ``t <= bias_horizon``, zero afterwards), ``"constant"`` or ``"none"``.
    """

    dims: RenDims
    theta: np.ndarray
    alpha: float = 0.9
    beta: float | None = None
    bias_mode: str = "time_varying"
    bias_horizon: int = 0
    eps: float = EPS_H

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=np.float64)
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("contraction rate must lie in (0, 1]")
        if self.beta is not None and self.beta <= 0:
            raise ValueError("gain bound must be positive")
        if self.bias_mode not in ("time_varying", "constant", "none"):
            raise ValueError(f"unknown bias mode {self.bias_mode!r}")
        if self.theta.shape != (n_params(self.dims, self.beta is not None, self.bias_mode, self.bias_horizon),):
            raise ValueError("theta has the wrong length for these dimensions")

    def with_theta(self, theta) -> "RenParams":
        return replace(self, theta=np.asarray(theta, dtype=np.float64))


def _layout(dims: RenDims, gain_bounded: bool, bias_mode: str, bias_horizon: int) -> list[tuple[str, tuple]]:
    n, q, m, p = dims.q1, dims.q2, dims.q_in, dims.q_out
    blocks = [
        ("X", (2 * n + q, 2 * n + q)),
        ("Y", (n, n)),
        ("B2", (n, m)),
        ("C2", (p, n)),
        ("D21", (p, q)),
        ("D12", (q, m)),
    ]
    if not gain_bounded:
        blocks.append(("D22", (p, m)))
    if bias_mode == "time_varying":
        blocks.append(("bias", (bias_horizon + 1, p)))
    elif bias_mode == "constant":
        blocks.append(("bias", (1, p)))
    return blocks


def n_params(dims: RenDims, gain_bounded: bool = False, bias_mode: str = "time_varying",
             bias_horizon: int = 0) -> int:
    return int(sum(np.prod(s) for _, s in _layout(dims, gain_bounded, bias_mode, bias_horizon)))


def init_params(dims: RenDims, seed: int = 0, alpha: float = 0.9, beta: float | None = None,
                bias_mode: str = "time_varying", bias_horizon: int = 0, std: float = 0.1,
                bias_std: float = 0.0) -> RenParams:
    """Random Gaussian initialization; the bias starts at zero unless ``bias_std > 0``."""
    rng = np.random.default_rng(seed)
    parts = []
    for name, shape in _layout(dims, beta is not None, bias_mode, bias_horizon):
        s = bias_std if name == "bias" else std
        parts.append(rng.normal(scale=s, size=int(np.prod(shape))) if s > 0 else np.zeros(int(np.prod(shape))))
    theta = np.concatenate(parts) if parts else np.zeros(0)
    return RenParams(dims, theta, alpha, beta, bias_mode, bias_horizon)


def _unpack(params: RenParams, theta) -> dict:
    out = {}
    k = 0
    for name, shape in _layout(params.dims, params.beta is not None, params.bias_mode, params.bias_horizon):
        size = int(np.prod(shape))
        out[name] = ad.reshape(ad.getitem(theta, slice(k, k + size)), shape)
        k += size
    return out


@dataclass
class RenMatrices:
    A: object
    B1: object
    B2: object
    C1: object
    D11: object
    D12: object
    C2: object
    D21: object
    D22: object
    bias: object | None = None
    bias_mode: str = "none"
    extras: dict = field(default_factory=dict)

    def bias_at(self, t: int):
        if self.bias_mode == "none" or self.bias is None:
            return None
        if self.bias_mode == "constant":
            return self.bias[0]
        n_b = self.bias.shape[0]
        return self.bias[t] if t < n_b else None

    def values(self) -> "RenMatrices":
        """Copy with plain arrays in place of tape variables."""
        conv = {k: (ad.value_of(v) if v is not None else None) for k, v in self.__dict__.items()
                if k not in ("bias_mode", "extras")}
        return RenMatrices(**conv, bias_mode=self.bias_mode,
                           extras={k: ad.value_of(v) for k, v in self.extras.items()})


def materialize(params: RenParams, theta=None) -> RenMatrices:
    """Smooth map from ``θ`` (array or tape variable) to explicit REN matrices."""
    theta = params.theta if theta is None else theta
    dims = params.dims
    n, q = dims.q1, dims.q2
    blk = _unpack(params, theta)
    X = blk["X"]
    H = ad.add(ad.matmul(ad.transpose(X), X), params.eps * np.eye(2 * n + q))
    B2, C2, D21, D12 = blk["B2"], blk["C2"], blk["D21"], blk["D12"]
    if params.beta is not None:
        b = params.beta
        top = ad.concatenate([C2, D21, np.zeros((dims.q_out, n))], axis=1)
        side = ad.concatenate([np.zeros((dims.q_in, n)), ad.neg(ad.transpose(D12)), ad.transpose(B2)], axis=1)
        H = ad.add(H, ad.mul(1.0 / b, ad.add(ad.matmul(ad.transpose(top), top),
                                             ad.matmul(ad.transpose(side), side))))
        D22 = np.zeros((dims.q_out, dims.q_in))
    else:
        D22 = blk["D22"]
    H11 = ad.getitem(H, (slice(0, n), slice(0, n)))
    H21 = ad.getitem(H, (slice(n, n + q), slice(0, n)))
    H22 = ad.getitem(H, (slice(n, n + q), slice(n, n + q)))
    H31 = ad.getitem(H, (slice(n + q, 2 * n + q), slice(0, n)))
    H32 = ad.getitem(H, (slice(n + q, 2 * n + q), slice(n, n + q)))
    P = ad.getitem(H, (slice(n + q, 2 * n + q), slice(n + q, 2 * n + q)))
    Y = blk["Y"]
    a2 = params.alpha ** 2
    E = ad.mul(0.5, ad.add(ad.add(ad.mul(1.0 / a2, H11), P), ad.sub(Y, ad.transpose(Y))))
    lam = ad.mul(0.5, ad.diag(H22))
    inv_lam = ad.reciprocal(lam)
    D11_imp = ad.neg(ad.tril(H22, -1))
    C1_imp = ad.neg(H21)
    rhs = ad.concatenate([H31, H32, B2], axis=1)
    sol = ad.solve(E, rhs)
    A = ad.getitem(sol, (slice(None), slice(0, n)))
    B1 = ad.getitem(sol, (slice(None), slice(n, n + q)))
    B2e = ad.getitem(sol, (slice(None), slice(n + q, None)))
    col = ad.reshape(inv_lam, (q, 1))
    C1 = ad.mul(col, C1_imp)
    D11 = ad.mul(col, D11_imp)
    D12e = ad.mul(col, D12)
    bias = blk.get("bias")
    return RenMatrices(A, B1, B2e, C1, D11, D12e, C2, D21, D22, bias,
                       params.bias_mode if bias is not None else "none",
                       extras={"E": E, "P": P, "Lambda": lam})


def ren_forward(mats: RenMatrices, xi, y_hat, t: int):
    """One step: returns ``(û_t, ξ_{t+1})``.  ``ζ`` is solved layer by layer."""
    q = np.shape(ad.value_of(mats.D11))[0]
    base = ad.add(ad.matmul(xi, ad.transpose(mats.C1)), ad.matmul(y_hat, ad.transpose(mats.D12)))
    d11 = mats.D11
    ws = []
    acc = base
    for i in range(q):
        zeta_i = ad.getitem(acc, (Ellipsis, i))
        w_i = ad.tanh(zeta_i)
        ws.append(w_i)
        if i + 1 < q:
            col = ad.getitem(d11, (slice(None), i))
            acc = ad.add(acc, ad.mul(ad.reshape(w_i, np.shape(ad.value_of(w_i)) + (1,)), col))
    w = ad.stack(ws, axis=-1)
    xi_next = ad.add(ad.add(ad.matmul(xi, ad.transpose(mats.A)), ad.matmul(w, ad.transpose(mats.B1))),
                     ad.matmul(y_hat, ad.transpose(mats.B2)))
    u_hat = ad.add(ad.matmul(xi, ad.transpose(mats.C2)), ad.matmul(w, ad.transpose(mats.D21)))
    if not _is_zero(mats.D22):
        u_hat = ad.add(u_hat, ad.matmul(y_hat, ad.transpose(mats.D22)))
    b = mats.bias_at(t)
    if b is not None:
        u_hat = ad.add(u_hat, b)
    return u_hat, xi_next


def _is_zero(m) -> bool:
    return not ad.is_var(m) and not np.any(m)


@dataclass
class RenState:
    xi: object
    t: int = 0


def ren_step(params: RenParams | RenMatrices, state: RenState, y_hat_t):
    mats = materialize(params) if isinstance(params, RenParams) else params
    u, xi = ren_forward(mats, state.xi, y_hat_t, state.t)
    return u, RenState(xi, state.t + 1)


class RenOperator(CausalOperator):
    """The REN ``ŷ -> û`` as a causal operator with ``ξ_0 = 0`` (or a given ``xi0``)."""

    def __init__(self, params: RenParams, mats: RenMatrices | None = None, xi0=None):
        d = params.dims
        super().__init__((d.q_in,), d.q_out, (C,))
        self.params = params
        self.mats = materialize(params) if mats is None else mats
        self.xi0 = np.zeros(d.q1) if xi0 is None else np.asarray(xi0, dtype=float)
        self.xi = self.xi0

    def _reset(self):
        self.xi = self.xi0

    def _step(self, y_hat):
        xi = self.xi
        if np.ndim(ad.value_of(y_hat)) > 1 and np.ndim(ad.value_of(xi)) == 1:
            xi = np.broadcast_to(xi, np.shape(ad.value_of(y_hat))[:-1] + xi.shape).copy()
        u, self.xi = ren_forward(self.mats, xi, y_hat, self.t)
        return u


class RenTwoPort(CausalOperator):
    """REN fed ``(β_t; δ_{t-1})``: causal in the first slot, strictly causal in the second."""

    def __init__(self, params: RenParams, split: int, mats: RenMatrices | None = None):
        d = params.dims
        if not 0 < split < d.q_in:
            raise ValueError("split must divide the REN input into two non-empty slots")
        super().__init__((split, d.q_in - split), d.q_out, (C, S))
        self.inner = RenOperator(params, mats)

    def _reset(self):
        self.inner.reset()

    def _step(self, beta, delta_prev):
        return self.inner.step(ad.concatenate([beta, delta_prev], axis=-1))


def as_stable_operator(params: RenParams, two_port_split: int | None = None,
                       mats: RenMatrices | None = None) -> CausalOperator:
    if two_port_split is None:
        return RenOperator(params, mats)
    return RenTwoPort(params, two_port_split, mats)


def contraction_lmi_margin(params: RenParams) -> float:
    """Smallest eigenvalue of the certificate matrix (positive by construction)."""
    mats = materialize(params).values()
    E, P, lam = mats.extras["E"], mats.extras["P"], mats.extras["Lambda"]
    a2 = params.alpha ** 2
    L = np.diag(lam)
    C1i = L @ mats.C1
    D11i = L @ mats.D11
    F = E @ mats.A
    B1i = E @ mats.B1
    W = 2 * L - D11i - D11i.T
    H = np.block([[a2 * (E + E.T - P), -C1i.T, F.T], [-C1i, W, B1i.T], [F, B1i, P]])
    return float(np.linalg.eigvalsh(0.5 * (H + H.T)).min())
