"""Loss, Adam, the training loop and the least-squares linear premodel."""

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.linalg

from .neuralnet import (
    ParamVector,
    _backward,
    _forward,
    context_matrix,
    count_params,
    default_arch,
    forward,
    init_params,
    input_features,
    mse_and_grad,
    param_layout,
    zero_output_params,
)
from .rng import derive_seed
from .signal import as_array

log = logging.getLogger(__name__)


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite; ``params`` holds the last finite state."""

    def __init__(self, message, params=None, epoch=None):
        super().__init__(message)
        self.params = params
        self.epoch = epoch


class NonFiniteGradientError(FloatingPointError):
    pass


class NumericalError(ArithmeticError):
    pass


@dataclass(frozen=True)
class AdamConfig:
    """Adam hyperparameters and the training budget.

    ``lr`` decays geometrically to ``lr_final`` over the epoch budget (constant
    when ``lr_final`` is None).  ``batch_len`` of None means full-batch.
    """

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 500
    batch_len: int | None = None
    seed: int = 0
    lr_final: float | None = None
    restarts: int = 1
    eval_every: int = 10

    def __post_init__(self):
        if not self.lr >= 0:
            raise ValueError("lr must be nonnegative")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in (0, 1)")
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.epochs < 1 or self.restarts < 1 or self.eval_every < 1:
            raise ValueError("epochs, restarts and eval_every must be positive")
        if self.batch_len is not None and self.batch_len < 1:
            raise ValueError("batch_len must be positive")
        if self.lr_final is not None and not self.lr_final > 0:
            raise ValueError("lr_final must be positive")

    def lr_at(self, epoch):
        if self.lr_final is None or self.epochs == 1:
            return self.lr
        frac = epoch / (self.epochs - 1)
        return self.lr * (self.lr_final / self.lr) ** frac


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray

    @classmethod
    def zeros(cls, n):
        return cls(np.zeros(n), np.zeros(n))


@dataclass
class TrainReport:
    loss_curve: list
    final_train_mse: float
    final_test_mse: float
    epochs_run: int
    wall_time_s: float
    best_epoch: int = 0
    seed: int = 0
    restart_test_mse: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)


def mse_loss(pred, target):
    p, t = as_array(pred), as_array(target)
    if p.shape != t.shape:
        raise ValueError(f"length mismatch: {p.size} vs {t.size}")
    e = t - p
    return float(np.mean(e.real**2 + e.imag**2))


def adam_step(params, grads, state, cfg, t, lr=None):
    """One bias-corrected Adam update; returns new (params, state), inputs untouched."""
    if t < 1:
        raise ValueError("Adam step index starts at 1")
    grads = np.asarray(grads, dtype=np.float64)
    if not np.all(np.isfinite(grads)):
        bad = np.flatnonzero(~np.isfinite(grads))
        raise NonFiniteGradientError(f"non-finite gradient at step {t}, indices {bad[:10].tolist()}")
    lr = cfg.lr if lr is None else lr
    m = cfg.beta1 * state.m + (1 - cfg.beta1) * grads
    v = cfg.beta2 * state.v + (1 - cfg.beta2) * grads**2
    m_hat = m / (1 - cfg.beta1**t)
    v_hat = v / (1 - cfg.beta2**t)
    new = np.asarray(params, dtype=np.float64) - lr * m_hat / (np.sqrt(v_hat) + cfg.eps)
    return new, AdamState(m, v)


def _batches(n_train, batch_len, rng):
    if batch_len is None or batch_len >= n_train:
        yield n_train
        return
    # contiguous prefixes keep the causal context intact; order shuffled per epoch
    stops = np.arange(batch_len, n_train + batch_len, batch_len).clip(max=n_train)
    for stop in rng.permutation(stops):
        yield int(stop)


def _train_once(arch, dataset, cfg, seed, init):
    x = dataset.input.samples
    t = dataset.target.samples
    train, test = dataset.split_train, dataset.split_test
    n_train = train.stop
    feats = input_features(arch, x)
    if init is None:
        params = init_params(arch, seed)
    elif callable(init):
        params = init(arch, seed)
    else:
        params = init.copy()
    state = AdamState.zeros(len(params))
    rng = np.random.default_rng(seed)

    def test_mse(p):
        y = forward(arch, p, x, feats)
        return mse_loss(y[test.start: test.stop], t[test.start: test.stop])

    best = params.copy()
    best_mse = test_mse(params)
    best_epoch = 0
    curve = []
    step = 0
    for epoch in range(cfg.epochs):
        lr = cfg.lr_at(epoch)
        total, count = 0.0, 0
        for stop in _batches(n_train, cfg.batch_len, rng):
            start = 0 if cfg.batch_len is None else max(0, stop - cfg.batch_len)
            loss, grad = _window_loss(arch, params, x, t, feats, start, stop)
            if not np.isfinite(loss):
                raise TrainingDivergedError(f"loss diverged in epoch {epoch + 1}", best, epoch + 1)
            total, count = total + loss * (stop - start), count + (stop - start)
            step += 1
            values, state = adam_step(params.values, grad, state, cfg, step, lr)
            params = ParamVector(values, params.layout)
        # epoch loss: sample-weighted mean of the mini-batch losses seen during the epoch
        curve.append((epoch + 1, total / count))
        if (epoch + 1) % cfg.eval_every == 0 or epoch + 1 == cfg.epochs:
            mse = test_mse(params)
            if mse < best_mse:
                best, best_mse, best_epoch = params.copy(), mse, epoch + 1
    return best, best_mse, best_epoch, curve


def _window_loss(arch, params, x, t, feats, start, stop):
    """Loss over outputs ``[start, stop)``; earlier samples still feed the context."""
    if start == 0:
        return mse_and_grad(arch, params, x, t, stop, feats)
    lo = max(0, start - arch.context_len + 1)
    y, tape = _forward(arch, params, x[lo:stop], None if feats is None else feats[lo:stop])
    e = (y - t[lo:stop])[start - lo:]
    loss = float(np.mean(e.real**2 + e.imag**2))
    g = np.zeros_like(y)
    g[start - lo:] = (2.0 / e.size) * e
    return loss, _backward(arch, params, tape, g)


def train(arch, dataset, cfg=AdamConfig(), init=None):
    """Fit ``arch`` on the training range with Adam + MSE.

    Runs ``cfg.restarts`` independent initializations (seeds derived from
    ``cfg.seed``) and returns the parameters with the lowest test MSE seen at any
    evaluated epoch (the initial point included), together with a TrainReport
    of the winning run.  ``init`` is a ParamVector used for the first run, or a
    callable ``init(arch, seed)`` used for every run.
    """
    if dataset.split_train.stop <= arch.context_len:
        raise ValueError("training range shorter than the model context")
    t0 = time.perf_counter()
    runs = []
    for r in range(cfg.restarts):
        seed = cfg.seed if r == 0 else derive_seed(cfg.seed, f"restart{r}")
        start = init if (r == 0 or callable(init)) else None
        runs.append((*_train_once(arch, dataset, cfg, seed, start), seed))
        log.debug("%s restart %d: test mse %.3e", arch.kind, r, runs[-1][1])
    best, best_mse, best_epoch, curve, seed = min(runs, key=lambda run: run[1])
    y = forward(arch, best, dataset.input.samples)
    tr = dataset.split_train
    report = TrainReport(
        loss_curve=curve,
        final_train_mse=mse_loss(y[tr.start: tr.stop], dataset.target.samples[tr.start: tr.stop]),
        final_test_mse=float(best_mse),
        epochs_run=len(curve),
        wall_time_s=time.perf_counter() - t0,
        best_epoch=best_epoch,
        seed=seed,
        restart_test_mse=[float(run[1]) for run in runs],
    )
    return best, report


def fit_linear_ls(dataset, context_len=13, ridge=1e-9):
    """Least-squares complex FIR over the training range, as a ``linear`` ParamVector.

    Solves the normal equations with ``ridge * mean(diag(Gram))`` added to the
    Gram diagonal.
    """
    tr = dataset.split_train
    if tr.stop - tr.start <= context_len:
        raise ValueError("training range must be longer than context_len")
    X = context_matrix(dataset.input.samples[: tr.stop], context_len)[tr.start:]
    y = dataset.target.samples[tr.start: tr.stop]
    gram = X.conj().T @ X
    gram[np.diag_indices(context_len)] += ridge * max(np.real(np.trace(gram)) / context_len, np.finfo(float).tiny)
    rhs = X.conj().T @ y
    try:
        taps = scipy.linalg.solve(gram, rhs, assume_a="pos")
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as err:
        raise NumericalError(f"normal equations not solvable: {err}") from None
    if not np.all(np.isfinite(taps)):
        raise NumericalError("normal equations produced non-finite taps")
    arch = default_arch("linear", context_len)
    values = np.empty(2 * context_len)
    values[0::2], values[1::2] = taps.real, taps.imag
    return ParamVector(values, param_layout(arch))


def linear_predict(lin, x):
    context_len = lin.layout["fir.taps"].shape[0]
    return forward(default_arch("linear", context_len), lin, as_array(x))


def two_stage(arch, dataset, cfg=AdamConfig()):
    """Linear LS premodel followed by ``arch`` trained on the residual.

    The combined canceller is ``linear_predict(lin, x) + forward(arch, params, x)``.
    Stage 2 starts from zeroed output weights, i.e. from the premodel alone.
    """
    lin = fit_linear_ls(dataset, arch.context_len)
    residual = dataset.target.samples - linear_predict(lin, dataset.input.samples)
    residual_ds = dataset.with_target(dataset.target.with_samples(residual))
    params, report = train(arch, residual_ds, cfg, init=zero_output_params)
    return lin, params, report


def predict(arch, params, x, lin=None):
    y = forward(arch, params, as_array(x))
    return y if lin is None else y + linear_predict(lin, x)


def gradient_check(arch, n=64, seed=0, h=1e-6, floor=1e-8):
    """Max elementwise relative error of the analytic gradient vs. central differences."""
    rng = np.random.default_rng(seed)
    x = (rng.standard_normal(n) + 1j * rng.standard_normal(n)) / np.sqrt(2)
    t = (rng.standard_normal(n) + 1j * rng.standard_normal(n)) / np.sqrt(2)
    params = init_params(arch, seed)
    params.values += 0.1 * rng.standard_normal(len(params))
    _, grad = mse_and_grad(arch, params, x, t)
    numeric = np.empty_like(grad)
    for i in range(len(params)):
        up, down = params.copy(), params.copy()
        up.values[i] += h
        down.values[i] -= h
        numeric[i] = (mse_and_grad(arch, up, x, t)[0] - mse_and_grad(arch, down, x, t)[0]) / (2 * h)
    denom = np.maximum(np.maximum(np.abs(grad), np.abs(numeric)), floor)
    assert count_params(arch) == grad.size
    return float(np.max(np.abs(grad - numeric) / denom))
