"""Independence conditional autoencoder: model, objective, trainer, conversion."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DataError, NumericError, ShapeError, TrainingError
from .genproc import FrameDataset
from .numkit import AdamState, DenseNet, adam_step, make_rng, net_backward, net_forward


@dataclass(frozen=True)
class LabelScale:
    """Strictly increasing map from 0-based unit labels to regression targets.

    Label ``j`` is treated as the 1-based unit ``k = j + 1`` and mapped to
    ``(k - offset) * scale``. ``for_units`` centers the labels with
    ``offset = (K+1)/2`` and keeps unit spacing by default; ``spacing=1/K``
    squeezes the targets into (-1/2, 1/2).
    """

    offset: float
    scale: float

    @classmethod
    def for_units(cls, k: int, spacing: float = 1.0) -> "LabelScale":
        return cls((k + 1) / 2.0, float(spacing))

    def __call__(self, labels) -> np.ndarray:
        return (np.asarray(labels, dtype=np.float64) + 1.0 - self.offset) * self.scale

    def inverse(self, targets) -> np.ndarray:
        return np.asarray(targets, dtype=np.float64) / self.scale + self.offset - 1.0


@dataclass
class IcaeModel:
    encoder: DenseNet
    decoder: DenseNet
    label_scale: LabelScale
    k: int

    def __post_init__(self):
        if self.decoder.d_in != self.d_latent + self.d_c:
            raise ShapeError("decoder input must be latent width plus condition width")
        if self.decoder.d_out != self.encoder.d_in:
            raise ShapeError("decoder output width must equal encoder input width")
        if self.label_scale.scale <= 0:
            raise ValueError("label scale must be positive (strictly increasing map)")

    @property
    def d_x(self) -> int:
        return self.encoder.d_in

    @property
    def d_latent(self) -> int:
        return self.encoder.d_out

    @property
    def d_c(self) -> int:
        return self.decoder.d_in - self.encoder.d_out

    @classmethod
    def init(
        cls,
        d_x: int,
        d_c: int,
        k: int,
        seed: int,
        d_latent: int = 1,
        hidden: Sequence[int] = (64, 64),
        activation: str = "tanh",
        label_scale: LabelScale | None = None,
    ) -> "IcaeModel":
        rng = make_rng(seed)
        enc = DenseNet.init([d_x, *hidden, d_latent], rng, activation)
        dec = DenseNet.init([d_latent + d_c, *hidden, d_x], rng, activation)
        return cls(enc, dec, label_scale or LabelScale.for_units(k), k)

    def copy(self) -> "IcaeModel":
        return IcaeModel(self.encoder.copy(), self.decoder.copy(), self.label_scale, self.k)

    def targets(self, proxy_s) -> np.ndarray:
        t = self.label_scale(proxy_s)
        return np.repeat(t[:, None], self.d_latent, axis=1)

    def encode(self, x) -> np.ndarray:
        return net_forward(self.encoder, x)

    def decode(self, s_hat, c) -> np.ndarray:
        s_hat = np.asarray(s_hat, dtype=np.float64)
        c = np.asarray(c, dtype=np.float64)
        if s_hat.ndim == 1 and c.ndim == 1:
            return net_forward(self.decoder, np.concatenate([s_hat, c]))
        s_hat, c = np.atleast_2d(s_hat), np.atleast_2d(c)
        if s_hat.shape[0] != c.shape[0]:
            s_hat, c = _broadcast_rows(s_hat, c)
        return net_forward(self.decoder, np.concatenate([s_hat, c], axis=1))


def _broadcast_rows(a, b):
    if a.shape[0] == 1:
        a = np.repeat(a, b.shape[0], axis=0)
    elif b.shape[0] == 1:
        b = np.repeat(b, a.shape[0], axis=0)
    else:
        raise ShapeError(f"cannot pair {a.shape[0]} latents with {b.shape[0]} conditions")
    return a, b


def encode(model, x) -> np.ndarray:
    return model.encode(x)


def decode(model, s_hat, c) -> np.ndarray:
    return model.decode(s_hat, c)


def convert(model, x_src, c_tgt) -> np.ndarray:
    """Content of ``x_src`` rendered under condition ``c_tgt``."""
    return model.decode(model.encode(x_src), c_tgt)


def reconstruct(model, x, c) -> np.ndarray:
    return convert(model, x, c)


@dataclass
class TrainConfig:
    lam: float = 1.0
    lr: float = 5e-3
    batch_size: int = 64
    epochs: int = 200
    seed: int = 0
    shuffle: bool = True
    lr_schedule: str = "cosine"
    lr_floor: float = 0.01

    def __post_init__(self):
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValueError(f"unknown lr_schedule {self.lr_schedule!r}")
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.lr <= 0 or self.batch_size < 1 or self.epochs < 0:
            raise ValueError("lr > 0, batch_size >= 1 and epochs >= 0 are required")


@dataclass
class Loss:
    total: float
    recon: float
    indep: float


def _require_proxy(ds: FrameDataset):
    if ds.proxy_s is None:
        raise DataError("dataset has no proxy_s labels; run the units stage first")


def loss_eval(model: IcaeModel, x, c, proxy_s, lam: float = 1.0) -> Loss:
    """Batch means of |x - d(e(x), c)|^2 and |e(x) - t(proxy)|^2, combined with weight lam."""
    if proxy_s is None:
        raise DataError("proxy labels are required")
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    s_hat = model.encode(x)
    x_hat = model.decode(s_hat, c)
    recon = float(((x - x_hat) ** 2).sum(1).mean())
    indep = float(((s_hat - model.targets(proxy_s)) ** 2).sum(1).mean())
    return Loss(recon + lam * indep, recon, indep)


def _step_grads(model: IcaeModel, x, c, t, lam):
    b = x.shape[0]
    s_hat = net_forward(model.encoder, x)
    dec_in = np.concatenate([s_hat, c], axis=1)
    x_hat = net_forward(model.decoder, dec_in)
    resid = x_hat - x
    lat = s_hat - t
    recon = (resid**2).sum() / b
    indep = (lat**2).sum() / b
    g_dec = net_backward(model.decoder, dec_in, 2.0 * resid / b)
    g_lat = g_dec.input[:, : model.d_latent] + lam * 2.0 * lat / b
    g_enc = net_backward(model.encoder, x, g_lat)
    return recon, indep, g_enc.params() + g_dec.params()


@dataclass
class TrainResult:
    model: IcaeModel
    trace: list = field(default_factory=list)


def train(model: IcaeModel, ds: FrameDataset, cfg: TrainConfig, verbose=None) -> TrainResult:
    """Minibatch Adam on the reconstruction + lambda * proxy-regression objective.

    Returns a trained copy of ``model`` and a per-epoch trace of
    ``(epoch, recon, indep, total)``; epoch losses are sample-weighted means
    of the minibatch losses seen during that epoch.
    """
    _require_proxy(ds)
    if ds.d_x != model.d_x or ds.d_c != model.d_c:
        raise ShapeError("dataset dimensions do not match the model")
    if cfg.batch_size > ds.n:
        raise ValueError(f"batch_size {cfg.batch_size} exceeds dataset size {ds.n}")
    model = model.copy()
    params = model.encoder.params() + model.decoder.params()
    names = [f"encoder {n}" for n in model.encoder.param_names()] + [
        f"decoder {n}" for n in model.decoder.param_names()
    ]
    opt = AdamState.for_params(params, lr=cfg.lr)
    rng = make_rng(cfg.seed)
    targets = model.targets(ds.proxy_s)
    trace = []
    n_batches = -(-ds.n // cfg.batch_size)
    total_steps = max(cfg.epochs * n_batches, 1)
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(ds.n) if cfg.shuffle else np.arange(ds.n)
        r_sum = i_sum = 0.0
        for bi, lo in enumerate(range(0, ds.n, cfg.batch_size)):
            idx = order[lo : lo + cfg.batch_size]
            recon, indep, grads = _step_grads(model, ds.x[idx], ds.c[idx], targets[idx], cfg.lam)
            if not np.isfinite(recon + cfg.lam * indep):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {bi}")
            if cfg.lr_schedule == "cosine":
                frac = opt.step_count / total_steps
                opt.lr = cfg.lr * (cfg.lr_floor + (1 - cfg.lr_floor) * 0.5 * (1 + np.cos(np.pi * frac)))
            try:
                adam_step(opt, params, grads, names)
            except NumericError as exc:
                raise TrainingError(f"epoch {epoch}, batch {bi}: {exc}") from exc
            r_sum += recon * len(idx)
            i_sum += indep * len(idx)
        recon_e, indep_e = r_sum / ds.n, i_sum / ds.n
        trace.append((epoch, recon_e, indep_e, recon_e + cfg.lam * indep_e))
        if verbose:
            verbose(epoch, recon_e, indep_e)
    return TrainResult(model, trace)
