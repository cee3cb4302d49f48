"""Trainable unrolled variant of the reweighted decomposition solver.

Each solver iteration becomes one network layer with two learnable pieces:
the blood penalty scalar and the diagonal column-weight matrix of the factor
updates (the column penalty weight is absorbed into the latter). Layers run
the same update chain as the baseline solver, so with parameters frozen to a
recorded baseline run the network reproduces it exactly. Training minimizes
the layer-averaged data-consistency loss

    (1/K) * sum_k ||D - B_k - U_k V_k^H||_F^2

with a bias-corrected adaptive-moment optimizer. No autodiff framework is
used: gradients come from central finite differences (reference mode) or a
hand-derived adjoint pass through the layer equations (fast mode).

Positivity of both learnable groups is enforced by parameterizing them
through softplus; the unconstrained values are what the optimizer sees and
what the model file stores.
"""

import copy
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from . import irls
from .casorati import hermitian_solve
from .irls import Decomposition


def softplus(x):
    """Smooth positive map log(1 + exp(x)), overflow-safe."""
    x = np.asarray(x, dtype=float)
    return np.log1p(np.exp(-np.abs(x))) + np.maximum(x, 0.0)


def inv_softplus(y):
    """Inverse of softplus; targets at or near zero clamp to a floor of -50.

    softplus(-50) is about 2e-22, small enough that 1 + 2*lambda*W rounds to
    exactly 1.0 for any weight this package produces.
    """
    y = np.asarray(y, dtype=float)
    if np.any(y < 0):
        raise ValueError("positive-map targets must be nonnegative")
    with np.errstate(divide="ignore"):
        theta = np.where(y > 30.0, y, np.log(np.expm1(np.minimum(y, 30.0))))
    return np.maximum(theta, -50.0)


@dataclass
class LayerParams:
    """Unconstrained per-layer parameters.

    Attributes:
        theta_lambda: scalar; blood penalty is softplus(theta_lambda).
        theta_w: (d,) array; factor weight diagonal is softplus(theta_w).
    """

    theta_lambda: float
    theta_w: np.ndarray

    @classmethod
    def from_values(cls, lambda_b, w_c):
        """Build from the positive-domain values themselves."""
        return cls(float(inv_softplus(lambda_b)), inv_softplus(np.asarray(w_c, dtype=float)))

    @property
    def lambda_b(self):
        return float(softplus(self.theta_lambda))

    @property
    def w_c(self):
        return softplus(self.theta_w)


@dataclass
class UnfoldedNetwork:
    """K layers of solver updates with learnable penalties.

    Attributes:
        layers: LayerParams per layer.
        d: inner dimension of the factorization.
        epsilon: regularizer for the elementwise blood weights.
        seu: optional hook mapping each layer's blood matrix to the version
            fed into the factor updates; None means identity.
        normalize: scale inputs by 1/max|D| inside forward passes and scale
            outputs back (mirrors the baseline solver's setting).
        n_space: row count the network was initialized with, when known;
            infer() rejects inputs whose row count differs.
    """

    layers: list
    d: int
    epsilon: float
    seu: object = None
    normalize: bool = True
    n_space: int | None = None


@dataclass
class ForwardTrace:
    """Per-layer outputs of a forward pass, in input units.

    residual[k] is the data-consistency norm ||D - B_k - U_k V_k^H||_F.
    scale is the normalization factor that was divided out internally.
    """

    basis: list
    coeffs: list
    blood: list
    residual: list
    scale: float


@dataclass
class TrainConfig:
    """Optimizer settings.

    Args:
        learning_rate: step size for the blood-penalty parameters.
        wc_learning_rate: step size for the weight diagonals; defaults to
            learning_rate / 100 (the conventional pairing).
        batch_frames: frames per training batch.
        max_epochs: epoch cap.
        patience: early stopping after this many epochs without validation
            improvement.
        seed: batch-order shuffle seed.
        grad_mode: "finite_difference" or "analytic".
    """

    learning_rate: float = 0.01
    batch_frames: int = 200
    max_epochs: int = 50
    patience: int = 5
    seed: int = 0
    grad_mode: str = "finite_difference"
    wc_learning_rate: float | None = None

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be nonnegative")
        if self.batch_frames < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ValueError("batch_frames, max_epochs and patience must be at least 1")
        if self.grad_mode not in ("finite_difference", "analytic"):
            raise ValueError(f"unknown grad_mode {self.grad_mode!r}")


@dataclass
class TrainHistory:
    """Loss curves: train_loss per epoch, val_loss with entry 0 pre-training."""

    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    best_epoch: int = 0


def init_network(d_mat, k, d, lambda_b_init, cfg):
    """Build a network whose layers start at the baseline initialization.

    Args:
        d_mat: representative data matrix (provides the factor init).
        k: layer count.
        d: inner dimension.
        lambda_b_init: initial blood penalty for every layer.
        cfg: IrlsConfig supplying lambda_c, epsilon, rho and normalize; the
            initial weight diagonal is 2*lambda_c*W_c(U0, V0).

    Returns:
        UnfoldedNetwork.
    """
    d_mat = np.asarray(d_mat, dtype=np.complex128)
    if d_mat.ndim != 2:
        raise ValueError("expected a 2-d Casorati matrix")
    if k < 1:
        raise ValueError("need at least one layer")
    if not 1 <= d <= min(d_mat.shape):
        raise ValueError(f"d={d} outside [1, {min(d_mat.shape)}]")
    if lambda_b_init < 0:
        raise ValueError("lambda_b_init must be nonnegative")
    work = d_mat
    if cfg.normalize:
        peak = float(np.abs(d_mat).max())
        if peak > 0:
            work = d_mat / peak
    u0, v0 = irls._init_state(work, d)
    w_init = 2.0 * cfg.lambda_c * irls.lowrank_weights(u0, v0, cfg.epsilon, cfg.rho)
    layers = [LayerParams.from_values(lambda_b_init, w_init) for _ in range(k)]
    return UnfoldedNetwork(layers=layers, d=d, epsilon=cfg.epsilon,
                           normalize=cfg.normalize, n_space=d_mat.shape[0])


def layer_forward(state, params, d_mat, epsilon=1e-8, seu=None):
    """One layer: refresh blood weights, update B, then V, then U.

    Args:
        state: (u, v, b) triple entering the layer.
        params: LayerParams.
        d_mat: data matrix (same scaling as the state).
        epsilon: blood-weight regularizer.
        seu: optional hook applied to the fresh blood matrix before the
            factor updates.

    Returns:
        (u, v, b) leaving the layer.
    """
    u, v, b = state
    w_b = irls.sparse_weights(b, epsilon)
    b_new = irls.update_blood(d_mat, u, v, w_b, params.lambda_b)
    z = b_new if seu is None else seu(b_new)
    r = d_mat - z
    w_c = params.w_c
    gram_v = u.conj().T @ u + np.diag(w_c)
    v_new = hermitian_solve(gram_v, u.conj().T @ r).conj().T
    gram_u = v_new.conj().T @ v_new + np.diag(w_c)
    u_new = hermitian_solve(gram_u, (r @ v_new).conj().T).conj().T
    return u_new, v_new, b_new


def _normalized(net, d_mat):
    d_mat = np.asarray(d_mat, dtype=np.complex128)
    if d_mat.ndim != 2:
        raise ValueError("expected a 2-d Casorati matrix")
    if not 1 <= net.d <= min(d_mat.shape):
        raise ValueError(f"network d={net.d} does not fit data shape {d_mat.shape}")
    scale = 1.0
    work = d_mat
    if net.normalize:
        peak = float(np.abs(d_mat).max())
        if peak > 0:
            scale = peak
            work = d_mat / peak
    return work, scale


def _forward_internal(net, work, init_state=None):
    """All layer states in the normalized domain: list of (u_in, v_in, b_in, u, v, b)."""
    if init_state is None:
        u, v = irls._init_state(work, net.d)
    else:
        u, v = init_state
    b = np.zeros_like(work)
    states = []
    for params in net.layers:
        u_new, v_new, b_new = layer_forward((u, v, b), params, work,
                                            epsilon=net.epsilon, seu=net.seu)
        states.append((u, v, b, u_new, v_new, b_new))
        u, v, b = u_new, v_new, b_new
    return states


def _stream_forward(net, work):
    """Yield per-layer normalized (u, v, b), holding only the current state."""
    u, v = irls._init_state(work, net.d)
    b = np.zeros_like(work)
    for params in net.layers:
        u, v, b = layer_forward((u, v, b), params, work,
                                epsilon=net.epsilon, seu=net.seu)
        yield u, v, b


def _mean_data_loss(net, d_mat):
    """Layer-averaged data-consistency loss without retaining the trace."""
    d_mat = np.asarray(d_mat, dtype=np.complex128)
    work, scale = _normalized(net, d_mat)
    vals = [np.linalg.norm(d_mat - b * scale - u @ (v * scale).conj().T) ** 2
            for u, v, b in _stream_forward(net, work)]
    return float(np.mean(vals))


def network_forward(net, d_mat, init_state=None):
    """Run all layers from the baseline initialization.

    Args:
        net: UnfoldedNetwork.
        d_mat: data matrix.
        init_state: optional (u0, v0) override, interpreted in the network's
            normalized domain.

    Returns:
        ForwardTrace with per-layer outputs rescaled to input units.
    """
    d_mat = np.asarray(d_mat, dtype=np.complex128)
    work, scale = _normalized(net, d_mat)
    states = _forward_internal(net, work, init_state)
    basis = [s[3] for s in states]
    coeffs = [s[4] * scale for s in states]
    blood = [s[5] * scale for s in states]
    residual = [float(np.linalg.norm(d_mat - b - u @ v.conj().T))
                for u, v, b in zip(basis, coeffs, blood)]
    return ForwardTrace(basis=basis, coeffs=coeffs, blood=blood,
                        residual=residual, scale=scale)


def loss(trace, d_mat):
    """Layer-averaged squared data-consistency error of a forward trace."""
    d_mat = np.asarray(d_mat)
    vals = [np.linalg.norm(d_mat - b - u @ v.conj().T) ** 2
            for u, v, b in zip(trace.basis, trace.coeffs, trace.blood)]
    return float(np.mean(vals))


def pack_parameters(net):
    """Flatten all unconstrained parameters in layer order (lambda, then w)."""
    parts = []
    for layer in net.layers:
        parts.append([layer.theta_lambda])
        parts.append(layer.theta_w)
    return np.concatenate(parts).astype(float)


def param_index(net, layer, kind, j=0):
    """Position of one parameter inside the packed vector."""
    base = layer * (1 + net.d)
    return base if kind == "lambda_b" else base + 1 + j


def _with_parameters(net, theta):
    """Copy of the network with its packed parameter vector replaced."""
    layers = []
    stride = 1 + net.d
    for k in range(len(net.layers)):
        chunk = theta[k * stride:(k + 1) * stride]
        layers.append(LayerParams(float(chunk[0]), np.array(chunk[1:], dtype=float)))
    return UnfoldedNetwork(layers=layers, d=net.d, epsilon=net.epsilon, seu=net.seu,
                           normalize=net.normalize, n_space=net.n_space)


def _analytic_loss_grad(net, d_mat, init_state=None):
    """Loss and its gradient via the adjoint of the layer equations.

    The pass runs in the normalized domain; since the loss is quadratic in
    the data scale, the gradient (and loss) are multiplied by scale**2.
    """
    d_mat = np.asarray(d_mat, dtype=np.complex128)
    work, scale = _normalized(net, d_mat)
    states = _forward_internal(net, work, init_state)
    n_layers = len(states)
    c = 1.0 / n_layers

    loss_norm = 0.0
    g_theta = np.zeros(n_layers * (1 + net.d))
    g_u_next = None
    g_v_next = None
    g_b_next = None
    stride = 1 + net.d
    for k in range(n_layers - 1, -1, -1):
        u_in, v_in, b_in, u, v, b = states[k]
        states[k] = None
        params = net.layers[k]
        lam = params.lambda_b
        w_b = irls.sparse_weights(b_in, net.epsilon)
        den = 1.0 + 2.0 * lam * w_b
        r = work - b
        e = work - b - u @ v.conj().T
        loss_norm += np.linalg.norm(e) ** 2

        g_u = -c * (e @ v)
        g_v = -c * (e.conj().T @ u)
        g_b = -c * e
        if g_u_next is not None:
            g_u = g_u + g_u_next
            g_v = g_v + g_v_next
            g_b = g_b + g_b_next

        # basis update U = R V inv(M_U)
        q_u = np.linalg.inv(v.conj().T @ v + np.diag(params.w_c))
        g_r = (g_u @ q_u) @ v.conj().T
        g_p = r.conj().T @ g_u
        g_m_u = -q_u @ (v.conj().T @ g_p) @ q_u
        g_v = g_v + g_p @ q_u + v @ (g_m_u + g_m_u.conj().T)
        g_w = 2.0 * np.real(np.diag(g_m_u))

        # coefficient update V = R^H U_in inv(M_V)
        q_v = np.linalg.inv(u_in.conj().T @ u_in + np.diag(params.w_c))
        g_p2 = r @ g_v
        g_r = g_r + u_in @ (q_v @ g_v.conj().T)
        g_m_v = -q_v @ (u_in.conj().T @ g_p2) @ q_v
        g_u_in = g_p2 @ q_v + u_in @ (g_m_v + g_m_v.conj().T)
        g_w = g_w + 2.0 * np.real(np.diag(g_m_v))

        # R = D - B, then B = (D - U_in V_in^H) / den
        g_b_tot = g_b - g_r
        g_r0 = g_b_tot / den
        tmp = np.real(np.conj(g_b_tot) * b) / den
        g_lam = -4.0 * float(np.sum(tmp * w_b))
        g_b_in = (2.0 * lam) * (tmp * w_b ** 3) * b_in
        g_u_in = g_u_in - g_r0 @ v_in
        g_v_in = -(g_r0.conj().T @ u_in)

        g_theta[k * stride] = g_lam * expit(params.theta_lambda)
        g_theta[k * stride + 1:(k + 1) * stride] = g_w * expit(params.theta_w)
        g_u_next, g_v_next, g_b_next = g_u_in, g_v_in, g_b_in

    return c * loss_norm * scale ** 2, g_theta * scale ** 2


def parameter_gradient(net, d_mat, cfg, init_state=None, fd_step=None):
    """Gradient of the forward loss with respect to all packed parameters.

    Args:
        net: UnfoldedNetwork.
        d_mat: data matrix.
        cfg: TrainConfig; cfg.grad_mode selects the method.
        init_state: optional (u0, v0) override, forwarded to the passes.
        fd_step: base step for the finite-difference mode; the per-parameter
            step is fd_step * (1 + |theta|). Default 1e-5.

    Returns:
        Real gradient vector aligned with pack_parameters(net).
    """
    if cfg.grad_mode == "analytic":
        return _analytic_loss_grad(net, d_mat, init_state)[1]
    base = 1e-5 if fd_step is None else float(fd_step)
    theta0 = pack_parameters(net)
    grad = np.zeros_like(theta0)
    for i in range(theta0.size):
        h = base * (1.0 + abs(theta0[i]))
        probe = theta0.copy()
        probe[i] = theta0[i] + h
        lp = loss(network_forward(_with_parameters(net, probe), d_mat, init_state), d_mat)
        probe[i] = theta0[i] - h
        lm = loss(network_forward(_with_parameters(net, probe), d_mat, init_state), d_mat)
        if not (np.isfinite(lp) and np.isfinite(lm)):
            raise RuntimeError(f"non-finite loss while perturbing parameter {i}")
        grad[i] = (lp - lm) / (2.0 * h)
    return grad


def _batch_loss_grad(net, theta, batch, cfg):
    cand = _with_parameters(net, theta)
    if cfg.grad_mode == "analytic":
        return _analytic_loss_grad(cand, batch)
    val = loss(network_forward(cand, batch), batch)
    return val, parameter_gradient(cand, batch, cfg)


def train(net, train_data, val_data, cfg, verbose=False):
    """Optimize the layer parameters on batches of frames.

    Args:
        net: starting UnfoldedNetwork.
        train_data: (n_space, n_frames) matrix, split into consecutive
            batches of cfg.batch_frames (remainder frames are dropped).
        val_data: validation matrix, or None to hold out the last 20% of
            train_data.
        cfg: TrainConfig.
        verbose: print per-epoch losses.

    Returns:
        (trained network with the best-validation parameters, TrainHistory).

    Raises:
        RuntimeError: when any loss turns non-finite; the partial history is
            attached to the exception as .history.
    """
    data = np.asarray(train_data, dtype=np.complex128)
    if data.ndim != 2:
        raise ValueError("expected a 2-d training matrix")
    if val_data is None:
        n_val = max(1, int(round(0.2 * data.shape[1])))
        if data.shape[1] - n_val < 1:
            raise ValueError("not enough frames to split off a validation set")
        val = data[:, data.shape[1] - n_val:]
        fit = data[:, :data.shape[1] - n_val]
    else:
        val = np.asarray(val_data, dtype=np.complex128)
        fit = data
    n_batches = fit.shape[1] // cfg.batch_frames
    if n_batches < 1:
        raise ValueError(
            f"batch_frames={cfg.batch_frames} exceeds the {fit.shape[1]} training frames")
    batches = [fit[:, i * cfg.batch_frames:(i + 1) * cfg.batch_frames]
               for i in range(n_batches)]

    theta = pack_parameters(net)
    wc_lr = cfg.learning_rate / 100.0 if cfg.wc_learning_rate is None else cfg.wc_learning_rate
    lr_vec = np.concatenate([[cfg.learning_rate] + [wc_lr] * net.d
                             for _ in range(len(net.layers))])
    beta1, beta2, adam_eps = 0.9, 0.999, 1e-8
    moment1 = np.zeros_like(theta)
    moment2 = np.zeros_like(theta)
    steps = 0

    history = TrainHistory()

    def abort(stage):
        err = RuntimeError(f"training aborted: non-finite loss during {stage}")
        err.history = history
        raise err

    def validation_loss(th):
        return _mean_data_loss(_with_parameters(net, th), val)

    v0 = validation_loss(theta)
    history.val_loss.append(v0)
    if not np.isfinite(v0):
        abort("initial validation")
    best = v0
    best_theta = theta.copy()
    stall = 0
    rng = np.random.default_rng(cfg.seed)

    for epoch in range(1, cfg.max_epochs + 1):
        batch_losses = []
        for bi in rng.permutation(n_batches):
            bloss, grad = _batch_loss_grad(net, theta, batches[bi], cfg)
            if not (np.isfinite(bloss) and np.all(np.isfinite(grad))):
                abort(f"epoch {epoch}")
            batch_losses.append(bloss)
            steps += 1
            moment1 = beta1 * moment1 + (1 - beta1) * grad
            moment2 = beta2 * moment2 + (1 - beta2) * grad * grad
            m_hat = moment1 / (1 - beta1 ** steps)
            v_hat = moment2 / (1 - beta2 ** steps)
            theta = theta - lr_vec * m_hat / (np.sqrt(v_hat) + adam_eps)
        history.train_loss.append(float(np.mean(batch_losses)))
        vl = validation_loss(theta)
        if not np.isfinite(vl):
            abort(f"epoch {epoch} validation")
        history.val_loss.append(vl)
        if verbose:
            print(f"epoch {epoch:3d}  train {history.train_loss[-1]:.6e}  val {vl:.6e}")
        if vl < best:
            best = vl
            best_theta = theta.copy()
            history.best_epoch = epoch
            stall = 0
        else:
            stall += 1
        if stall >= cfg.patience:
            break

    return _with_parameters(net, best_theta), history


def infer(net, d_mat_new):
    """Frozen-parameter forward pass; returns the final-layer decomposition."""
    d_mat_new = np.asarray(d_mat_new, dtype=np.complex128)
    if net.n_space is not None and d_mat_new.shape[0] != net.n_space:
        raise ValueError(
            f"input has {d_mat_new.shape[0]} rows, network expects {net.n_space}")
    work, scale = _normalized(net, d_mat_new)
    for u, v, b in _stream_forward(net, work):
        pass
    return Decomposition(basis_u=u, coeffs_v=v * scale, blood_b=b * scale)
