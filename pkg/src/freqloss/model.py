"""Dense generator ``G(c)`` mapping scene parameters to a velocity field.

The network is a tanh MLP trained with Adam on any :class:`LossConfig`.
Two output heads are available:

``"direct"``
    ``H * W * 2`` outputs reshaped to the velocity field.
``"curl"``
    ``H * W`` outputs form a stream function ``psi`` and the velocity is its
    forward-difference curl ``(H * Dy psi, -W * Dx psi)``. Forward-difference
    divergence of that field is zero up to rounding because the two
    difference operators commute.

Parameters live in one flat vector; each layer stores its weight matrix
``(fan_in, fan_out)`` row-major followed by its bias.
"""

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import InvalidInputError, check_fields, check_params
from .diagnostics import band_mre
from .fields import decode_array, discrete_curl, encode_array
from .loss import LossConfig, loss_terms, total_loss_grad
from .spectral import make_partition

HEADS = ("direct", "curl")
CHECKPOINT_FORMAT = "freqloss-checkpoint-1"


class NonFiniteLossError(FloatingPointError):
    """Training produced a NaN or infinite loss."""

    def __init__(self, step, terms):
        self.step = step
        self.terms = terms
        detail = ", ".join(f"{k}={v!r}" for k, v in terms.items())
        super().__init__(f"non-finite loss at step {step}: {detail}")


@dataclass
class TrainLog:
    """Per-epoch mean losses over the training samples seen in that epoch."""

    epoch: list = field(default_factory=list)
    total: list = field(default_factory=list)
    baseline: list = field(default_factory=list)
    fourier: list = field(default_factory=list)
    seconds: list = field(default_factory=list)
    final_mre: np.ndarray = None

    def __len__(self):
        return len(self.epoch)

    def append(self, epoch, total, baseline, fourier, seconds):
        self.epoch.append(int(epoch))
        self.total.append(float(total))
        self.baseline.append(float(baseline))
        self.fourier.append(float(fourier))
        self.seconds.append(float(seconds))

    def to_csv(self, path, include_time=False):
        """Write ``epoch,total,baseline,fourier[,seconds]``.

        Wall time is left out by default so the file is reproducible.
        """
        cols = ["epoch", "total", "baseline", "fourier"] + (["seconds"] if include_time else [])
        with open(path, "w") as fh:
            fh.write(",".join(cols) + "\n")
            for i in range(len(self)):
                row = [str(self.epoch[i]), repr(self.total[i]), repr(self.baseline[i]),
                       repr(self.fourier[i])]
                if include_time:
                    row.append(repr(self.seconds[i]))
                fh.write(",".join(row) + "\n")


class Adam:
    """Adam on a flat parameter vector, updated in place."""

    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = None
        self.v = None
        self.t = 0

    def step(self, params, grad):
        if self.m is None:
            self.m = np.zeros_like(params)
            self.v = np.zeros_like(params)
        self.t += 1
        self.m *= self.beta1
        self.m += (1 - self.beta1) * grad
        self.v *= self.beta2
        self.v += (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1 ** self.t)
        v_hat = self.v / (1 - self.beta2 ** self.t)
        params -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def _curl_adjoint(g, h, w):
    gx, gy = g[..., 0] * h, g[..., 1] * w
    return (np.roll(gx, 1, axis=1) - gx) - (np.roll(gy, 1, axis=2) - gy)


class FluidGenerator(BaseEstimator):
    """Tanh MLP generator trained on a band-aware loss.

    Parameters
    ----------
    hidden_sizes : tuple of int, default=(128, 128)
    head : {"direct", "curl"}, default="direct"
    loss : LossConfig, optional
        Defaults to the baseline-only loss.
    learning_rate : float, default=1e-3
    beta1, beta2, adam_epsilon : float
        Adam moment decay rates and denominator floor.
    batch_size : int, default=16
    n_epochs : int, default=200
    random_state : int, default=0
        Seeds the Glorot-uniform initialisation and the batch shuffling.
    standardize : bool, default=True
        Centre and scale the inputs with statistics of the training set.
    warm_start : bool, default=False
        Continue from the current parameters instead of re-initialising.

    Attributes
    ----------
    coef_ : ndarray
        Flat parameter vector.
    layer_sizes_ : list of int
    grid_shape_ : (H, W)
    log_ : TrainLog
    """

    def __init__(self, hidden_sizes=(128, 128), head="direct", loss=None,
                 learning_rate=1e-3, beta1=0.9, beta2=0.999, adam_epsilon=1e-8,
                 batch_size=16, n_epochs=200, random_state=0, standardize=True,
                 warm_start=False):
        self.hidden_sizes = hidden_sizes
        self.head = head
        self.loss = loss
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.adam_epsilon = adam_epsilon
        self.batch_size = batch_size
        self.n_epochs = n_epochs
        self.random_state = random_state
        self.standardize = standardize
        self.warm_start = warm_start

    # -- structure ---------------------------------------------------------

    def _output_size(self, grid_shape):
        h, w = grid_shape
        return h * w * (2 if self.head == "direct" else 1)

    def _layers(self):
        sizes = self.layer_sizes_
        offset = 0
        layers = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            w_sl = slice(offset, offset + fan_in * fan_out)
            offset += fan_in * fan_out
            b_sl = slice(offset, offset + fan_out)
            offset += fan_out
            layers.append((fan_in, fan_out, w_sl, b_sl))
        return layers

    @property
    def n_params_(self):
        s = self.layer_sizes_
        return sum(a * b + b for a, b in zip(s[:-1], s[1:]))

    def initialize(self, n_features, grid_shape, X=None):
        """Allocate and Glorot-initialise parameters for the given shapes."""
        if self.head not in HEADS:
            raise InvalidInputError(f"head must be one of {HEADS}, got {self.head!r}")
        if self.learning_rate <= 0:
            raise InvalidInputError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise InvalidInputError("batch_size must be >= 1")
        self.n_features_in_ = int(n_features)
        self.grid_shape_ = tuple(int(s) for s in grid_shape)
        self.layer_sizes_ = [self.n_features_in_, *map(int, self.hidden_sizes),
                             self._output_size(self.grid_shape_)]
        rng = np.random.default_rng([self.random_state, 0])
        coef = np.zeros(self.n_params_)
        for fan_in, fan_out, w_sl, _ in self._layers():
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            coef[w_sl] = rng.uniform(-bound, bound, size=fan_in * fan_out)
        self.coef_ = coef
        if self.standardize and X is not None:
            self.input_offset_ = X.mean(axis=0)
            scale = X.std(axis=0)
            self.input_scale_ = np.where(scale > 0, scale, 1.0)
        else:
            self.input_offset_ = np.zeros(self.n_features_in_)
            self.input_scale_ = np.ones(self.n_features_in_)
        self.log_ = TrainLog()
        return self

    # -- forward / backward ------------------------------------------------

    def _forward(self, X, coef=None):
        coef = self.coef_ if coef is None else coef
        a = (X - self.input_offset_) / self.input_scale_
        acts = [a]
        layers = self._layers()
        for i, (fan_in, fan_out, w_sl, b_sl) in enumerate(layers):
            z = a @ coef[w_sl].reshape(fan_in, fan_out) + coef[b_sl]
            a = np.tanh(z) if i < len(layers) - 1 else z
            acts.append(a)
        h, w = self.grid_shape_
        out = acts[-1]
        if self.head == "direct":
            fields = out.reshape(-1, h, w, 2)
        else:
            fields = discrete_curl(out.reshape(-1, h, w))
        return fields, acts

    def _backward(self, acts, upstream, coef=None):
        coef = self.coef_ if coef is None else coef
        h, w = self.grid_shape_
        if self.head == "direct":
            g = upstream.reshape(upstream.shape[0], -1)
        else:
            g = _curl_adjoint(upstream, h, w).reshape(upstream.shape[0], -1)
        grad = np.zeros_like(coef)
        layers = self._layers()
        for i in range(len(layers) - 1, -1, -1):
            fan_in, fan_out, w_sl, b_sl = layers[i]
            a_in = acts[i]
            grad[w_sl] = (a_in.T @ g).ravel()
            grad[b_sl] = g.sum(axis=0)
            if i > 0:
                g = (g @ coef[w_sl].reshape(fan_in, fan_out).T) * (1 - a_in * a_in)
        return grad

    def predict(self, X):
        """Generated velocity fields, shape (N, H, W, 2)."""
        check_is_fitted(self, "coef_")
        X = check_params(X, self.n_features_in_, "X")
        return self._forward(X)[0]

    # -- training ----------------------------------------------------------

    def _loss_config(self):
        return LossConfig.baseline() if self.loss is None else self.loss

    def fit(self, X, y, eval_set=None):
        """Train on parameter vectors ``X`` (N, p) and fields ``y`` (N, H, W, 2).

        ``eval_set=(X_val, y_val)`` computes the final per-band MRE on a
        held-out split and stores it in ``log_.final_mre``.
        """
        X = check_params(X, name="X")
        y = check_fields(y, "y")
        if X.shape[0] != y.shape[0]:
            raise InvalidInputError(f"X has {X.shape[0]} samples but y has {y.shape[0]}")
        if y.shape[3] != 2:
            raise InvalidInputError(f"y must hold 2-channel velocity fields, got C={y.shape[3]}")
        if not (self.warm_start and hasattr(self, "coef_")):
            self.initialize(X.shape[1], y.shape[1:3], X)
        elif y.shape[1:3] != self.grid_shape_ or X.shape[1] != self.n_features_in_:
            raise InvalidInputError("warm start with mismatched shapes")
        cfg = self._loss_config()
        opt = Adam(self.learning_rate, self.beta1, self.beta2, self.adam_epsilon)
        shuffle_rng = np.random.default_rng([self.random_state, 1])
        n = X.shape[0]
        log = TrainLog()
        step = 0
        for epoch in range(self.n_epochs):
            t0 = time.perf_counter()
            order = shuffle_rng.permutation(n)
            sums = np.zeros(3)
            for start in range(0, n, self.batch_size):
                idx = order[start:start + self.batch_size]
                with np.errstate(over="ignore", invalid="ignore"):
                    pred, acts = self._forward(X[idx])
                    total, base, fol = loss_terms(y[idx], pred, cfg)
                terms = np.array([total.sum(), base.sum(), fol.sum()])
                if not np.all(np.isfinite(terms)):
                    raise NonFiniteLossError(step, dict(zip(("total", "baseline", "fourier"),
                                                            (terms / len(idx)).tolist())))
                sums += terms
                upstream = total_loss_grad(y[idx], pred, cfg) / len(idx)
                opt.step(self.coef_, self._backward(acts, upstream))
                step += 1
            log.append(epoch, *(sums / n), time.perf_counter() - t0)
        if eval_set is not None:
            Xv, yv = eval_set
            yv = check_fields(yv, "y_val")
            part = (cfg.partition(*yv.shape[1:3]) if cfg.weights is not None
                    else make_partition(*yv.shape[1:3]))
            log.final_mre = band_mre(self.predict(Xv), yv, part)
        self.log_ = log
        return self

    def score(self, X, y):
        """Negative mean total loss; larger is better."""
        pred = self.predict(X)
        total, _, _ = loss_terms(check_fields(y, "y"), pred, self._loss_config())
        return -float(np.mean(total))


def forward(model, c):
    """Generated field(s) for parameter vector(s) ``c``."""
    c = np.asarray(c, dtype=np.float64)
    out = model.predict(c)
    return out[0] if c.ndim == 1 else out


def backward(model, c, upstream):
    """Gradient of ``<forward(model, c), upstream>`` with respect to ``model.coef_``."""
    check_is_fitted(model, "coef_")
    c = check_params(c, model.n_features_in_, "c")
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.ndim == 3:
        upstream = upstream[None]
    h, w = model.grid_shape_
    if upstream.shape != (c.shape[0], h, w, 2):
        raise InvalidInputError(
            f"upstream shape {upstream.shape} does not match output {(c.shape[0], h, w, 2)}"
        )
    _, acts = model._forward(c)
    return model._backward(acts, upstream)


def train(model, dataset, eval_set=None):
    """Fit ``model`` on a :class:`~freqloss.fields.Dataset`; returns ``(model, log)``."""
    if eval_set is not None and hasattr(eval_set, "params"):
        eval_set = (eval_set.params, eval_set.fields)
    model.fit(dataset.params, dataset.fields, eval_set=eval_set)
    return model, model.log_


# ---------------------------------------------------------------- checkpoints


def _header(model):
    params = model.get_params()
    loss = params.pop("loss")
    params["hidden_sizes"] = list(params["hidden_sizes"])
    return {
        "format": CHECKPOINT_FORMAT,
        "layer_sizes": model.layer_sizes_,
        "head": model.head,
        "grid_shape": list(model.grid_shape_),
        "seed": model.random_state,
        "input_offset": model.input_offset_.tolist(),
        "input_scale": model.input_scale_.tolist(),
        "estimator": params,
        "loss": None if loss is None else loss.to_dict(),
    }


def save_checkpoint(model, path, extra=None):
    """JSON header line followed by an FBF1 record (1 x P x 1) of float32 parameters."""
    check_is_fitted(model, "coef_")
    header = _header(model)
    if extra:
        header["extra"] = extra
    blob = json.dumps(header, sort_keys=True).encode() + b"\n"
    blob += encode_array(1, model.n_params_, 1, model.coef_)
    Path(path).write_bytes(blob)


def load_checkpoint(path):
    """Rebuild a :class:`FluidGenerator` from :func:`save_checkpoint` output.

    Returns ``(model, header)``.
    """
    buf = Path(path).read_bytes()
    cut = buf.index(b"\n")
    header = json.loads(buf[:cut])
    if header.get("format") != CHECKPOINT_FORMAT:
        raise InvalidInputError(f"unsupported checkpoint format {header.get('format')!r}")
    coef, _ = decode_array(buf, cut + 1)
    est = dict(header["estimator"])
    est["hidden_sizes"] = tuple(est["hidden_sizes"])
    loss = None if header["loss"] is None else LossConfig.from_dict(header["loss"])
    model = FluidGenerator(loss=loss, **est)
    model.n_features_in_ = header["layer_sizes"][0]
    model.grid_shape_ = tuple(header["grid_shape"])
    model.layer_sizes_ = header["layer_sizes"]
    model.input_offset_ = np.array(header["input_offset"])
    model.input_scale_ = np.array(header["input_scale"])
    model.coef_ = coef.ravel().astype(np.float64)
    if model.coef_.size != model.n_params_:
        raise InvalidInputError("checkpoint parameter count does not match its layer sizes")
    model.log_ = TrainLog()
    return model, header
