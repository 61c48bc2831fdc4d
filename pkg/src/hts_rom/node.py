"""Structured neural ODE: a learned reduced resistance evaluated at the previous step.

Each step solves the linear saddle system

    [[dt R_psi(|i_n|) + L_r, dt G_q^T], [G_q, 0]] [i_{n+1}; q] = [L_r i_n + dt e_{n+1}; 0]

so no Newton iterations are needed. Gradients are exact reverse-mode through
the unrolled steps: for A x = b with cotangent xbar, lam = A^{-T} xbar gives
bbar = lam and Abar = -lam x^T.

Everything is batched over a leading segment axis; a single trajectory is a
batch of one, so inference and training share the same step code.
"""
import csv
import logging
import math
import time
from dataclasses import dataclass, field, asdict, replace

import numpy as np

from .errors import ConfigError, DimensionError, DomainError, HtsRomError, StepFailure, UsageError

log = logging.getLogger(__name__)

SELU_LAMBDA = 1.0507009873554805
SELU_ALPHA = 1.6732632423543772
OUTPUT_MODES = ("dense", "symmetric", "spd")


class TrainingDiverged(HtsRomError):
    def __init__(self, epoch):
        super().__init__(f"training loss became non-finite at epoch {epoch}")
        self.epoch = epoch


def selu(z):
    return SELU_LAMBDA * np.where(z > 0, z, SELU_ALPHA * np.expm1(np.minimum(z, 0)))


def selu_grad(z):
    return SELU_LAMBDA * np.where(z > 0, 1.0, SELU_ALPHA * np.exp(np.minimum(z, 0)))


def n_outputs(r, output):
    return r * r if output == "dense" else r * (r + 1) // 2


@dataclass(eq=False)
class MlpParams:
    weights: list            # W_k with shape (n_out, n_in)
    biases: list
    in_mean: np.ndarray      # (r_i,) normalisation of |i_r|
    in_scale: np.ndarray
    out_scale: float         # [ohm]
    output: str = "dense"
    activation: str = "selu"
    meta: dict = field(default_factory=dict)

    @property
    def r_i(self):
        return len(self.in_mean)

    @property
    def layer_sizes(self):
        return [self.weights[0].shape[1]] + [W.shape[0] for W in self.weights]

    def validate(self):
        if self.output not in OUTPUT_MODES:
            raise ConfigError([("node.output", f"must be one of {OUTPUT_MODES}")])
        if self.activation != "selu":
            raise ConfigError([("node.activation", "only 'selu' is supported")])
        if self.weights[0].shape[1] != self.r_i or self.weights[-1].shape[0] != n_outputs(self.r_i, self.output):
            raise DimensionError("network shape inconsistent with r_i")
        if np.any(self.in_scale <= 0) or not self.out_scale > 0:
            raise DomainError("normalisation scales must be positive")
        if not all(np.all(np.isfinite(a)) for a in self.arrays()):
            raise DomainError("non-finite network parameters")

    def arrays(self):
        """Trainable arrays in a fixed order (W_1, b_1, W_2, b_2, ...)."""
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def with_arrays(self, arrays):
        return replace(self, weights=[a.copy() for a in arrays[0::2]],
                       biases=[a.copy() for a in arrays[1::2]], meta=dict(self.meta))

    def copy(self):
        return self.with_arrays(self.arrays())

    @property
    def n_params(self):
        return sum(a.size for a in self.arrays())


def init_params(r_i, hidden=(140, 140, 140, 140), in_mean=None, in_scale=None, out_scale=1.0,
                output="dense", seed=0, out_init=1e-2) -> MlpParams:
    """LeCun-normal weights, zero biases, output layer scaled by ``out_init``."""
    rng = np.random.default_rng(seed)
    sizes = [r_i, *hidden, n_outputs(r_i, output)]
    weights, biases = [], []
    for k, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        W = rng.standard_normal((b, a)) / math.sqrt(a)
        if k == len(sizes) - 2:
            W *= out_init
        weights.append(W)
        biases.append(np.zeros(b))
    p = MlpParams(weights, biases,
                  np.zeros(r_i) if in_mean is None else np.asarray(in_mean, dtype=float),
                  np.ones(r_i) if in_scale is None else np.asarray(in_scale, dtype=float),
                  float(out_scale), output, meta={"seed": seed})
    p.validate()
    return p


# ---------------------------------------------------------------- network


def _to_matrix(y, r, output):
    if output == "dense":
        return y.reshape(y.shape[0], r, r)
    iu = np.triu_indices(r) if output == "symmetric" else np.tril_indices(r)
    M = np.zeros((y.shape[0], r, r))
    M[:, iu[0], iu[1]] = y
    if output == "symmetric":
        return M + np.transpose(np.triu(M, 1), (0, 2, 1))
    return M @ np.transpose(M, (0, 2, 1))


def _from_matrix_grad(Rbar, y, r, output):
    """Cotangent of the network output given the cotangent of the unscaled matrix."""
    if output == "dense":
        return Rbar.reshape(Rbar.shape[0], r * r)
    if output == "symmetric":
        S = Rbar + np.transpose(Rbar, (0, 2, 1))
        S[:, np.arange(r), np.arange(r)] *= 0.5
        iu = np.triu_indices(r)
        return S[:, iu[0], iu[1]]
    il = np.tril_indices(r)
    M = np.zeros((y.shape[0], r, r))
    M[:, il[0], il[1]] = y
    G = (Rbar + np.transpose(Rbar, (0, 2, 1))) @ M
    return G[:, il[0], il[1]]


def mlp_forward(params: MlpParams, I, cache=False):
    """Batched R_psi for reduced currents I (B, r). Returns (B, r, r) [and the cache]."""
    I = np.asarray(I, dtype=float)
    if not np.all(np.isfinite(I)):
        raise DomainError("non-finite reduced current fed to the network")
    a = (np.abs(I) - params.in_mean) / params.in_scale
    acts, pre = [a], []
    n_layers = len(params.weights)
    for k, (W, b) in enumerate(zip(params.weights, params.biases)):
        z = a @ W.T + b
        pre.append(z)
        a = selu(z) if k < n_layers - 1 else z
        acts.append(a)
    R = params.out_scale * _to_matrix(a, params.r_i, params.output)
    if cache:
        return R, (I, acts, pre)
    return R


def mlp_backward(params: MlpParams, cache, Rbar):
    """Cotangents of the trainable arrays and of the input currents, given dLoss/dR (B, r, r)."""
    I, acts, pre = cache
    n_layers = len(params.weights)
    g = params.out_scale * _from_matrix_grad(Rbar, acts[-1], params.r_i, params.output)
    grads = [None] * (2 * n_layers)
    for k in range(n_layers - 1, -1, -1):
        if k < n_layers - 1:
            g = g * selu_grad(pre[k])
        grads[2 * k] = g.T @ acts[k]
        grads[2 * k + 1] = g.sum(axis=0)
        g = g @ params.weights[k]
    Ibar = g / params.in_scale * np.sign(I)
    return grads, Ibar


def r_psi_forward(params: MlpParams, i_r):
    """Reduced resistance matrix (r_i, r_i) for one reduced current vector."""
    i_r = np.asarray(i_r, dtype=float)
    if i_r.shape != (params.r_i,):
        raise DimensionError(f"expected reduced current of length {params.r_i}, got {i_r.shape}")
    return mlp_forward(params, i_r[None, :])[0]


# ---------------------------------------------------------------- time stepping


def _block_matrices(rom, R, dt):
    B, r = R.shape[0], rom.r_i
    m = rom.G_q.shape[0]
    A = np.zeros((B, r + m, r + m))
    A[:, :r, :r] = dt * R + rom.L_r
    A[:, :r, r:] = dt * rom.G_q.T
    A[:, r:, :r] = rom.G_q
    return A


def _solve(A, b, transpose=False, step=None):
    if transpose:
        A = np.transpose(A, (0, 2, 1))
    try:
        x = np.linalg.solve(A, b[..., None])[..., 0]
    except np.linalg.LinAlgError as exc:
        raise StepFailure("singular reduced step matrix", step=step) from exc
    if not np.all(np.isfinite(x)):
        raise StepFailure("non-finite reduced step solution", step=step)
    return x


def step_batch(rom, params, I, E_next, dt, step=None, cache=False):
    """Batched node step: I (B, r_i), E_next (B, r_i) -> (I_next, Phi_next) [, cache]."""
    r = rom.r_i
    R, mcache = mlp_forward(params, I, cache=True)
    A = _block_matrices(rom, R, dt)
    b = np.zeros((I.shape[0], A.shape[1]))
    b[:, :r] = I @ rom.L_r.T + dt * E_next
    x = _solve(A, b, step=step)
    out = x[:, :r], x[:, r:] @ rom.Q.T
    if cache:
        return out, (A, x, mcache)
    return out


def node_step(rom, params, state, e_next, dt):
    """One structured step from (i_r, phi_r); returns (i_r, phi_r) at the next time."""
    i_r = np.asarray(state[0], dtype=float)
    if i_r.shape != (rom.r_i,):
        raise DimensionError(f"state has length {i_r.shape}, rom expects {rom.r_i}")
    I, P = step_batch(rom, params, i_r[None, :], np.asarray(e_next, dtype=float)[None, :], dt)
    return I[0], P[0]


def unroll(rom, params, i0, sources, dt, n_steps=None, cache=False):
    """Roll the model forward from i0 (B, r_i) or (r_i,) over sources (B, r_i, N) or (r_i, N).

    Returns currents (…, r_i, N+1) and potentials (…, r_phi, N+1) with the
    initial state in column 0 (its potential is reported as zero).
    """
    single = np.ndim(i0) == 1
    I = np.atleast_2d(np.asarray(i0, dtype=float))
    E = np.asarray(sources, dtype=float)
    if single:
        E = E[None]
    N = E.shape[2] if n_steps is None else n_steps
    if E.shape[2] < N:
        raise DimensionError(f"source sequence has {E.shape[2]} steps, {N} requested")
    Is = np.zeros((I.shape[0], rom.r_i, N + 1))
    Ps = np.zeros((I.shape[0], rom.r_phi, N + 1))
    Is[:, :, 0] = I
    caches = []
    for n in range(N):
        try:
            res = step_batch(rom, params, I, E[:, :, n], dt, step=n + 1, cache=cache)
        except StepFailure as exc:
            log.warning("node step %d failed at |i_r| = %.3e", n + 1, np.linalg.norm(I))
            raise exc
        if cache:
            (I, P), c = res
            caches.append(c)
        else:
            I, P = res
        Is[:, :, n + 1], Ps[:, :, n + 1] = I, P
    if single:
        Is, Ps = Is[0], Ps[0]
    return (Is, Ps, caches) if cache else (Is, Ps)


# ---------------------------------------------------------------- loss and gradient


def loss_mse(pred_i, ref_i, pred_phi=None, ref_phi=None, w_i=1.0, w_phi=1.0,
             scale_i=1.0, scale_phi=1.0):
    """(w_i sum di^2 / s_i^2 + w_phi sum dphi^2 / s_phi^2) / (n_steps * (r_i + r_phi)).

    Arrays are (..., r, N); all leading and time axes count as steps.
    """
    pred_i, ref_i = np.asarray(pred_i, dtype=float), np.asarray(ref_i, dtype=float)
    if pred_i.shape != ref_i.shape:
        raise DimensionError(f"current shapes differ: {pred_i.shape} vs {ref_i.shape}")
    r_i = pred_i.shape[-2]
    n_steps = pred_i.size // r_i
    total = w_i * np.sum(((pred_i - ref_i) / scale_i) ** 2)
    r_phi = 0
    if pred_phi is not None:
        pred_phi, ref_phi = np.asarray(pred_phi, dtype=float), np.asarray(ref_phi, dtype=float)
        if pred_phi.shape != ref_phi.shape:
            raise DimensionError(f"potential shapes differ: {pred_phi.shape} vs {ref_phi.shape}")
        r_phi = pred_phi.shape[-2]
        total += w_phi * np.sum(((pred_phi - ref_phi) / scale_phi) ** 2)
    return float(total / (n_steps * (r_i + r_phi)))


@dataclass(eq=False)
class Segment:
    """Teacher-started segments: i0 (B, r_i), sources (B, r_i, S), references over steps 1..S."""
    i0: np.ndarray
    sources: np.ndarray
    ref_i: np.ndarray        # (B, r_i, S)
    ref_phi: np.ndarray      # (B, r_phi, S)

    @property
    def length(self):
        return self.sources.shape[2]

    def take(self, idx):
        return Segment(self.i0[idx], self.sources[idx], self.ref_i[idx], self.ref_phi[idx])


@dataclass(frozen=True)
class LossWeights:
    w_i: float = 1.0
    w_phi: float = 1.0
    scale_i: float = 1.0
    scale_phi: float = 1.0


def segment_loss(rom, params, seg: Segment, dt, weights=LossWeights()):
    I, P = unroll(rom, params, seg.i0, seg.sources, dt)
    return loss_mse(I[:, :, 1:], seg.ref_i, P[:, :, 1:], seg.ref_phi, weights.w_i, weights.w_phi,
                    weights.scale_i, weights.scale_phi)


def backward(rom, params, seg: Segment, dt, weights=LossWeights(), forward=None):
    """Loss and its exact gradient w.r.t. the trainable arrays (same order as params.arrays()).

    ``forward`` may hold the (currents, potentials, caches) of a previous unroll
    with ``cache=True``; otherwise the forward pass is run here.
    """
    if forward is None:
        forward = unroll(rom, params, seg.i0, seg.sources, dt, cache=True)
    I, P, caches = forward
    if len(caches) != seg.length:
        raise UsageError("forward cache does not match the segment")
    r = rom.r_i
    B, S = seg.i0.shape[0], seg.length
    dI = I[:, :, 1:] - seg.ref_i
    dP = P[:, :, 1:] - seg.ref_phi
    denom = B * S * (r + rom.r_phi)
    loss = (weights.w_i * np.sum((dI / weights.scale_i) ** 2)
            + weights.w_phi * np.sum((dP / weights.scale_phi) ** 2)) / denom
    gI = 2 * weights.w_i / (weights.scale_i ** 2 * denom) * dI
    gP = 2 * weights.w_phi / (weights.scale_phi ** 2 * denom) * dP
    grads = [np.zeros_like(a) for a in params.arrays()]
    ibar = np.zeros((B, r))
    for n in range(S - 1, -1, -1):
        A, x, mcache = caches[n]
        xbar = np.concatenate([ibar + gI[:, :, n], gP[:, :, n] @ rom.Q], axis=1)
        lam = _solve(A, xbar, transpose=True, step=n + 1)
        # through b = [L_r i_n + dt e; 0]
        ibar = lam[:, :r] @ rom.L_r
        # through A: Abar = -lam x^T, and d(A[:r,:r])/dR = dt
        Rbar = -dt * lam[:, :r, None] * x[:, None, :r]
        g, Iin = mlp_backward(params, mcache, Rbar)
        for k in range(len(grads)):
            grads[k] += g[k]
        ibar = ibar + Iin
    return float(loss), grads


def gradient_check(rom, params, seg: Segment, dt, weights=LossWeights(), n_check=25,
                   steps=(1e-3, 1e-4, 1e-5), seed=0):
    """Largest relative mismatch between ``backward`` and finite differences.

    Checks ``n_check`` randomly chosen scalar parameters with the fourth-order
    central stencil. Each parameter is differenced at every relative step in
    ``steps`` (scaled by max(|theta|, 1)) and the closest agreement counts, so
    neither activation kinks crossed by a large step nor round-off on a small
    one is mistaken for a gradient error. The mismatch of one parameter is
    |g - fd| / max(|g|, |fd|, 1e-6 max|g|).
    """
    if n_check == 0:
        return 0.0
    _, grads = backward(rom, params, seg, dt, weights)
    flat_g = np.concatenate([g.ravel() for g in grads])
    arrays = params.arrays()
    sizes = np.cumsum([0] + [a.size for a in arrays])
    rng = np.random.default_rng(seed)
    picks = rng.choice(sizes[-1], size=min(n_check, sizes[-1]), replace=False)
    gmax = np.max(np.abs(flat_g))
    worst = 0.0
    for p in picks:
        k = int(np.searchsorted(sizes, p, side="right") - 1)
        j = p - sizes[k]
        base = arrays[k].ravel()[j]
        g = flat_g[p]
        best = math.inf
        for eps in steps:
            h = eps * max(abs(base), 1.0)
            vals = []
            for mult in (2, 1, -1, -2):
                trial = [a.copy() for a in arrays]
                trial[k].ravel()[j] = base + mult * h
                vals.append(segment_loss(rom, params.with_arrays(trial), seg, dt, weights))
            fd = (-vals[0] + 8 * vals[1] - 8 * vals[2] + vals[3]) / (12 * h)
            denom = max(abs(g), abs(fd), 1e-6 * gmax, 1e-300)
            best = min(best, abs(g - fd) / denom)
        worst = max(worst, best)
    return float(worst)


# ---------------------------------------------------------------- training


@dataclass(frozen=True)
class TrainConfig:
    seq_len: int = 32
    stride: int = 0               # 0: same as seq_len
    batch_size: int = 0           # 0: all segments in one batch
    lr: float = 1e-3
    lr_final: float = 1e-5        # cosine decay target
    epochs: int = 2000
    seed: int = 0
    w_i: float = 1.0
    w_phi: float = 1.0
    hidden: tuple = (140, 140, 140, 140)
    output: str = "dense"
    val_every: int = 25
    curriculum: tuple = ()        # ((epoch, seq_len), ...) shorter segments early on
    clip: float = 0.0             # global gradient-norm clipping threshold, 0: off

    def validate(self):
        errs = []
        if self.seq_len < 2:
            errs.append(("node.seq_len", f"must be >= 2, got {self.seq_len}"))
        if not self.lr >= 0:
            errs.append(("node.lr", f"must be >= 0, got {self.lr}"))
        if self.lr_final < 0:
            errs.append(("node.lr_final", "must be >= 0"))
        if self.epochs < 0:
            errs.append(("node.epochs", "must be >= 0"))
        if self.batch_size < 0:
            errs.append(("node.batch_size", "must be >= 0"))
        if self.stride < 0:
            errs.append(("node.stride", "must be >= 0"))
        if self.output not in OUTPUT_MODES:
            errs.append(("node.output", f"must be one of {OUTPUT_MODES}"))
        if self.val_every < 1:
            errs.append(("node.val_every", "must be >= 1"))
        if not self.clip >= 0:
            errs.append(("node.clip", "must be >= 0"))
        if errs:
            raise ConfigError(errs)

    def to_dict(self):
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        d["curriculum"] = [list(c) for c in self.curriculum]
        return d


@dataclass(eq=False)
class ReducedReference:
    """A restricted FOM transient: currents (r_i, N+1), potentials (r_phi, N+1), sources (r_i, N)."""
    currents: np.ndarray
    potentials: np.ndarray
    sources: np.ndarray
    label: str = ""


def identifiable(rom, data):
    """References with potentials projected onto the range the reduced model can represent.

    The reduced step determines phi_r only within span(Q); the remaining
    component is unobservable from the current dynamics and is dropped.
    """
    return [replace(d, potentials=rom.Q @ (rom.Q.T @ d.potentials)) for d in data]


def make_segments(data, seq_len, stride=0) -> Segment:
    stride = stride or seq_len
    i0, src, ri, rp = [], [], [], []
    for d in data:
        N = d.sources.shape[1]
        if N < seq_len:
            raise DimensionError(f"transient '{d.label}' shorter than the segment length")
        starts = list(range(0, N - seq_len + 1, stride))
        if starts[-1] != N - seq_len:
            starts.append(N - seq_len)
        for s in starts:
            i0.append(d.currents[:, s])
            src.append(d.sources[:, s:s + seq_len])
            ri.append(d.currents[:, s + 1:s + seq_len + 1])
            rp.append(d.potentials[:, s + 1:s + seq_len + 1])
    return Segment(np.array(i0), np.array(src), np.array(ri), np.array(rp))


def normalisation(data):
    A = np.abs(np.hstack([d.currents for d in data]))
    mean = A.mean(axis=1)
    scale = A.std(axis=1)
    scale = np.where(scale > 1e-12 * max(scale.max(), 1e-300), scale, 1.0)
    return mean, scale


def loss_scales(data):
    I = np.hstack([d.currents for d in data])
    P = np.hstack([d.potentials for d in data])
    s_i = float(np.sqrt(np.mean(I ** 2))) or 1.0
    s_p = float(np.sqrt(np.mean(P ** 2))) or 1.0
    return s_i, s_p


def rollout_loss(rom, params, data, dt, weights):
    """Mean full-horizon free-running loss over transients (inf if a rollout fails)."""
    vals = []
    for d in data:
        try:
            I, P = unroll(rom, params, d.currents[:, 0], d.sources, dt)
        except (StepFailure, DomainError):
            return math.inf
        v = loss_mse(I[:, 1:], d.currents[:, 1:], P[:, 1:], d.potentials[:, 1:], weights.w_i,
                     weights.w_phi, weights.scale_i, weights.scale_phi)
        vals.append(v if np.isfinite(v) else math.inf)
    return float(np.mean(vals))


@dataclass(eq=False)
class TrainResult:
    params: MlpParams
    log: list                     # rows (epoch, train_loss, val_loss, wall_time_s)
    best_epoch: int
    best_val: float

    def write_log(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_loss", "val_loss", "wall_time_s"])
            for row in self.log:
                w.writerow([row[0], repr(row[1]), repr(row[2]), f"{row[3]:.3f}"])


class Adam:
    def __init__(self, arrays, beta1=0.9, beta2=0.999, eps=1e-8):
        self.m = [np.zeros_like(a) for a in arrays]
        self.v = [np.zeros_like(a) for a in arrays]
        self.b1, self.b2, self.eps = beta1, beta2, eps
        self.t = 0

    def update(self, arrays, grads, lr):
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        out = []
        for a, g, m, v in zip(arrays, grads, self.m, self.v):
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            out.append(a - lr * (m / c1) / (np.sqrt(v / c2) + self.eps))
        return out


def _lr_at(cfg, epoch):
    if cfg.epochs <= 1 or cfg.lr == 0:
        return cfg.lr
    frac = epoch / (cfg.epochs - 1)
    return cfg.lr_final + 0.5 * (cfg.lr - cfg.lr_final) * (1 + math.cos(math.pi * frac))


def train(rom, data, cfg: TrainConfig, dt, params=None, val_data=None, clock=time.perf_counter):
    """Adam on teacher-started segments; validation is a full-horizon rollout of ``val_data``
    (defaults to the training transients). Returns the best-validation parameters."""
    cfg.validate()
    if not data:
        raise UsageError("empty training dataset")
    data = identifiable(rom, data)
    val_data = data if val_data is None else identifiable(rom, val_data)
    if params is None:
        mean, scale = normalisation(data)
        out_scale = float(np.median(np.diag(rom.L_r)) / dt)
        params = init_params(rom.r_i, cfg.hidden, mean, scale, out_scale, cfg.output, cfg.seed)
    s_i, s_p = loss_scales(data)
    weights = LossWeights(cfg.w_i, cfg.w_phi, s_i, s_p)
    rng = np.random.default_rng(cfg.seed)
    stages = sorted(cfg.curriculum) + [(cfg.epochs, cfg.seq_len)]

    def seq_len_at(epoch):
        for until, length in stages:
            if epoch < until:
                return length
        return cfg.seq_len

    seg_cache = {}
    arrays = params.arrays()
    opt = Adam(arrays)
    best = (rollout_loss(rom, params, val_data, dt, weights), params.copy(), 0)
    t0 = clock()
    log_rows = [(0, math.nan, best[0], 0.0)]
    for epoch in range(1, cfg.epochs + 1):
        S = seq_len_at(epoch - 1)
        if S not in seg_cache:
            seg_cache[S] = make_segments(data, S, cfg.stride if S == cfg.seq_len else 0)
        segs = seg_cache[S]
        order = rng.permutation(segs.i0.shape[0])
        bs = cfg.batch_size or len(order)
        lr = _lr_at(cfg, epoch - 1)
        total, count = 0.0, 0
        for start in range(0, len(order), bs):
            batch = segs.take(order[start:start + bs])
            try:
                loss, grads = backward(rom, params, batch, dt, weights)
            except (StepFailure, DomainError):
                loss, grads = math.nan, None
            if not np.isfinite(loss):
                raise TrainingDiverged(epoch)
            if cfg.clip > 0:
                norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
                if norm > cfg.clip:
                    grads = [g * (cfg.clip / norm) for g in grads]
            arrays = opt.update(arrays, grads, lr)
            params = params.with_arrays(arrays)
            total += loss * len(batch.i0)
            count += len(batch.i0)
        train_loss = total / count
        val = math.nan
        if epoch % cfg.val_every == 0 or epoch == cfg.epochs:
            val = rollout_loss(rom, params, val_data, dt, weights)
            if val < best[0]:
                best = (val, params.copy(), epoch)
        log_rows.append((epoch, train_loss, val, clock() - t0))
    best_params = best[1]
    best_params.meta.update({"best_epoch": best[2], "train_config": cfg.to_dict()})
    return TrainResult(best_params, log_rows, best[2], best[0])
