"""CSM-to-CSM GAN: encoder/decoder generator, discriminator, losses and training.

The generator maps a noisy CSM tensor to a Hermitian CSM tensor through a
full-kernel convolution, dense bottleneck layers and a transposed convolution.
Its loss adds a transformation term (the slice-weighted CSM distance to the
target) to the usual non-saturating adversarial term.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .csm import KAPPA, csm_distance_batch, csm_distance_grad, hermitianize
from .cxnn import (
    ActivationSpec,
    Adam,
    ComplexLinear,
    ComplexTensor,
    FullConv,
    FullConvTranspose,
    Hermitianize,
    Sequential,
    SplitSigmoidMean,
    load_checkpoint,
    make_activation,
    save_checkpoint,
)

log = logging.getLogger(__name__)

N_GEN_GRID = (32, 64)
N_DIS_GRID = (16, 32)
N_DEN_GRID = (512, 1024)
N_LAY_GRID = (1, 2, 3, 4)
LR_GRID = (2e-4, 2e-5)
ACTIVATION_GRID = (
    ActivationSpec("modrelu", b=-1 / 8),
    ActivationSpec("modrelu", b=-1 / 4),
    ActivationSpec("cardioid", alpha=0.0),
    ActivationSpec("cardioid", alpha=0.5),
)


@dataclass(frozen=True)
class GanArchitecture:
    n_gen: int = 64
    n_dis: int = 16
    n_den: int = 512
    n_lay: int = 1
    activation: ActivationSpec = field(default_factory=lambda: ActivationSpec("cardioid", alpha=0.5))
    in_shape: tuple[int, int, int] = (48, 48, 16)

    def __post_init__(self):
        if min(self.n_gen, self.n_dis, self.n_den, self.n_lay) < 1:
            raise ValueError("layer sizes must be positive")
        n0, n1, _ = self.in_shape
        if n0 != n1:
            raise ValueError("CSM slices must be square")

    def in_grid(self) -> bool:
        return (self.n_gen in N_GEN_GRID and self.n_dis in N_DIS_GRID
                and self.n_den in N_DEN_GRID and self.n_lay in N_LAY_GRID
                and self.activation in ACTIVATION_GRID)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["activation"] = self.activation.to_dict()
        d["in_shape"] = list(self.in_shape)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GanArchitecture":
        d = dict(d)
        d["activation"] = ActivationSpec.from_dict(d["activation"])
        d["in_shape"] = tuple(d["in_shape"])
        return cls(**d)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 16
    lam: float = 200.0
    kappa: float = KAPPA
    lr_gen: float = 2e-5
    lr_dis: float = 2e-5
    noise_sigma: float = 1e-2
    epochs: int = 100
    seed: int = 0
    d_clamp: float = 1e-7
    eval_every: int = 1

    def __post_init__(self):
        if self.lam <= 0:
            raise ValueError("lambda must be positive")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if not 0.0 <= self.kappa <= 1.0:
            raise ValueError("kappa must lie in [0, 1]")
        if self.noise_sigma < 0:
            raise ValueError("noise sigma must be >= 0")


class GanModel:
    """Generator ``G = decoder . encoder`` (with Hermitianize) and discriminator ``D``."""

    def __init__(self, arch: GanArchitecture, lr_gen: float = 2e-5, lr_dis: float = 2e-5, seed: int = 0):
        self.arch = arch
        rng = np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(0,)))
        act = lambda: make_activation(arch.activation)  # noqa: E731
        shape = tuple(arch.in_shape)

        enc = [FullConv(shape, arch.n_gen, rng, name="enc/conv"), act()]
        width = arch.n_gen
        for i in range(arch.n_lay):
            enc += [ComplexLinear(width, arch.n_den, rng, name=f"enc/dense{i + 1}"), act()]
            width = arch.n_den
        dec = []
        for i in range(arch.n_lay):
            out = arch.n_gen if i == arch.n_lay - 1 else arch.n_den
            dec += [ComplexLinear(arch.n_den, out, rng, name=f"dec/dense{i + 1}"), act()]
        dec += [FullConvTranspose(arch.n_gen, shape, rng, name="dec/convT"), act(), Hermitianize()]
        self.encoder = Sequential(enc, name="encoder")
        self.decoder = Sequential(dec, name="decoder")
        self.generator = Sequential(enc + dec, name="generator")
        self.discriminator = Sequential(
            [FullConv(shape, arch.n_dis, rng, name="dis/conv"), act(), SplitSigmoidMean()],
            name="discriminator",
        )
        self.opt_gen = Adam(lr_gen)
        self.opt_dis = Adam(lr_dis)
        self.epoch = 0

    def shape_trace(self) -> list[tuple[int, ...]]:
        """Encoder shape chain followed by the decoder's, as in the layer diagrams."""
        z = ComplexTensor.zeros((1,) + tuple(self.arch.in_shape))
        self.decoder.forward(self.encoder.forward(z))
        chain = []
        for net in (self.encoder, self.decoder):
            chain.append(net.trace[0])
            chain += [s for layer, s in zip(net.layers, net.trace[1:]) if layer.params]
        return chain

    # --- persistence -----------------------------------------------------

    def _blobs(self) -> dict:
        blobs = {}
        for net, prefix in ((self.generator, "gen"), (self.discriminator, "dis")):
            for layer in net.layers:
                if layer.params:
                    blobs[f"param/{layer.name}"] = (layer.params["p_r"], layer.params["p_i"])
        for opt, prefix in ((self.opt_gen, "gen"), (self.opt_dis, "dis")):
            names = sorted({k.rsplit("/", 1)[0] for k in opt.first_moment})
            for name in names:
                blobs[f"adam/{prefix}/m/{name}"] = (opt.first_moment[f"{name}/p_r"], opt.first_moment[f"{name}/p_i"])
                blobs[f"adam/{prefix}/v/{name}"] = (opt.second_moment[f"{name}/p_r"], opt.second_moment[f"{name}/p_i"])
        return blobs

    def save(self, path, extra: dict | None = None) -> None:
        meta = {
            "architecture": self.arch.to_dict(),
            "opt_gen": self.opt_gen.state_dict(),
            "opt_dis": self.opt_dis.state_dict(),
            "epoch": self.epoch,
        }
        if extra:
            meta.update(extra)
        save_checkpoint(path, self._blobs(), meta)

    @classmethod
    def load(cls, path) -> tuple["GanModel", dict]:
        blobs, meta = load_checkpoint(path)
        arch = GanArchitecture.from_dict(meta["architecture"])
        model = cls(arch, meta["opt_gen"]["lr"], meta["opt_dis"]["lr"])
        for net in (model.generator, model.discriminator):
            for layer in net.layers:
                if layer.params:
                    re, im = blobs[f"param/{layer.name}"]
                    layer.params["p_r"][...] = re
                    layer.params["p_i"][...] = im
        for opt, prefix, key in ((model.opt_gen, "gen", "opt_gen"), (model.opt_dis, "dis", "opt_dis")):
            st = meta[key]
            opt.beta1, opt.beta2, opt.epsilon = st["beta1"], st["beta2"], st["epsilon"]
            opt.step_count = st["step_count"]
            for name, (re, im) in blobs.items():
                parts = name.split("/")
                if parts[0] != "adam" or parts[1] != prefix:
                    continue
                lname = "/".join(parts[3:])
                store = opt.first_moment if parts[2] == "m" else opt.second_moment
                store[f"{lname}/p_r"] = re.copy()
                store[f"{lname}/p_i"] = im.copy()
        model.epoch = int(meta.get("epoch", 0))
        return model, meta


# ---------------------------------------------------------------------------
# forward passes
# ---------------------------------------------------------------------------


def _batched(c) -> tuple[np.ndarray, bool]:
    c = np.asarray(c, dtype=complex)
    if c.ndim == 3:
        return c[None], True
    return c, False


def generator_forward(model: GanModel, z) -> np.ndarray:
    """``G(z)`` for one CSM tensor or a batch; output is Hermitian per slice."""
    z, single = _batched(z)
    if tuple(z.shape[1:]) != tuple(model.arch.in_shape):
        raise ValueError(f"expected CSM shape {model.arch.in_shape}, got {z.shape[1:]}")
    out = model.generator.forward(ComplexTensor.from_complex(z)).to_complex()
    return out[0] if single else out


def discriminator_forward(model: GanModel, c):
    """``D(c)`` in [0, 1] for one tensor (float) or a batch (array)."""
    c, single = _batched(c)
    if tuple(c.shape[1:]) != tuple(model.arch.in_shape):
        raise ValueError(f"expected CSM shape {model.arch.in_shape}, got {c.shape[1:]}")
    out = model.discriminator.forward(ComplexTensor.from_complex(c))
    return float(out[0]) if single else out


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def _clamp(d, eps: float) -> np.ndarray:
    return np.clip(np.asarray(d, dtype=float), eps, 1.0 - eps)


def loss_discriminator(D_real, D_fake, clamp: float = 1e-7) -> float:
    """``-mean log D(x) - mean log(1 - D(G(z)))`` with outputs clamped away from 0 and 1."""
    return float(-np.mean(np.log(_clamp(D_real, clamp))) - np.mean(np.log(1.0 - _clamp(D_fake, clamp))))


def loss_generator(D_fake_x, G_zx, G_zy, y, lam: float, kappa: float = KAPPA,
                   clamp: float = 1e-7) -> float:
    """Adversarial term on ``D(G(z_x))`` plus ``lam/2N * sum(eps(y, G(z_x)) + eps(y, G(z_y)))``."""
    D_fake_x = np.asarray(D_fake_x, dtype=float)
    n = len(D_fake_x)
    adv = -np.mean(np.log(_clamp(D_fake_x, clamp)))
    trafo = csm_distance_batch(y, G_zx, kappa).sum() + csm_distance_batch(y, G_zy, kappa).sum()
    return float(adv + lam / (2 * n) * trafo)


def make_noisy(c, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """Add complex Gaussian noise scaled per slice, then Hermitianize.

    Entry standard deviation is ``sigma * |slice|_F / n_mics``, so the noise
    matrix has Frobenius norm about ``sigma`` times the slice's.
    """
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    c = np.asarray(c, dtype=complex)
    if sigma == 0:
        return hermitianize(c)
    n = c.shape[-2]
    norms = np.sqrt((c.real**2 + c.imag**2).sum(axis=(-3, -2)))
    std = sigma * norms / n
    noise = rng.standard_normal(c.shape) + 1j * rng.standard_normal(c.shape)
    return hermitianize(c + noise * (std / math.sqrt(2.0))[..., None, None, :])


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


def _ct(g: np.ndarray) -> ComplexTensor:
    return ComplexTensor(g.real.copy(), g.imag.copy())


def discriminator_gradients(model: GanModel, x, fake, clamp: float = 1e-7) -> float:
    """Backpropagate ``L_D`` into the discriminator's ``grads``; returns ``L_D``."""
    n_real, n_fake = len(x), len(fake)
    d = model.discriminator.forward(ComplexTensor.from_complex(np.concatenate([x, fake])))
    d_real, d_fake = d[:n_real], d[n_real:]
    loss = loss_discriminator(d_real, d_fake, clamp)
    g = np.empty_like(d)
    cr, cf = _clamp(d_real, clamp), _clamp(d_fake, clamp)
    g[:n_real] = np.where(cr == d_real, -1.0 / (n_real * cr), 0.0)
    g[n_real:] = np.where(cf == d_fake, 1.0 / (n_fake * (1.0 - cf)), 0.0)
    model.discriminator.backward(g)
    return loss


def generator_gradients(model: GanModel, z_x, z_y, y, lam: float, kappa: float = KAPPA,
                        clamp: float = 1e-7) -> tuple[float, float]:
    """Backpropagate ``L_G`` into the generator's ``grads``.

    Returns ``(L_G, mean transformation distance)``. The discriminator's own
    gradients are overwritten as a side effect but not used.
    """
    n = len(z_x)
    out = model.generator.forward(ComplexTensor.from_complex(np.concatenate([z_x, z_y])))
    g_all = out.to_complex()
    g_zx, g_zy = g_all[:n], g_all[n:]
    d = model.discriminator.forward(ComplexTensor.from_complex(g_zx))
    loss = loss_generator(d, g_zx, g_zy, y, lam, kappa, clamp)
    cd = _clamp(d, clamp)
    gd = np.where(cd == d, -1.0 / (n * cd), 0.0)
    grad_adv = model.discriminator.backward(gd)
    coef = lam / (2 * n)
    grad = np.concatenate([csm_distance_grad(y, g_zx, kappa), csm_distance_grad(y, g_zy, kappa)]) * coef
    grad_ct = _ct(grad)
    grad_ct.re[:n] += grad_adv.re
    grad_ct.im[:n] += grad_adv.im
    model.generator.backward(grad_ct)
    trafo = 0.5 * (csm_distance_batch(y, g_zx, kappa).mean() + csm_distance_batch(y, g_zy, kappa).mean())
    return loss, float(trafo)


def train_step(model: GanModel, X, Y, config: TrainConfig, rng: np.random.Generator) -> dict:
    """One discriminator update followed by one generator update on a mini-batch."""
    X = np.asarray(X, dtype=complex)
    Y = np.asarray(Y, dtype=complex)
    if len(X) != len(Y):
        raise ValueError("batch X and Y must have equal length")
    z_x = make_noisy(X, config.noise_sigma, rng)
    z_y = make_noisy(Y, config.noise_sigma, rng)

    fake = generator_forward(model, z_x)
    loss_d = discriminator_gradients(model, X, fake, config.d_clamp)
    model.opt_dis.step(model.discriminator.named_params(), model.discriminator.named_grads())

    loss_g, trafo = generator_gradients(model, z_x, z_y, Y, config.lam, config.kappa, config.d_clamp)
    model.opt_gen.step(model.generator.named_params(), model.generator.named_grads())
    if not (np.isfinite(loss_d) and np.isfinite(loss_g)):
        raise FloatingPointError("non-finite loss during training")
    return {"loss_d": loss_d, "loss_g": loss_g, "trafo": trafo}


def evaluate_accuracy(model: GanModel, X, Y, kappa: float = KAPPA, batch: int = 64) -> np.ndarray:
    """Per-sample ``1 - eps(y, G(x))`` on clean inputs."""
    X = np.asarray(X, dtype=complex)
    Y = np.asarray(Y, dtype=complex)
    out = []
    for s in range(0, len(X), batch):
        g = generator_forward(model, X[s:s + batch])
        out.append(1.0 - csm_distance_batch(Y[s:s + batch], g, kappa))
    return np.concatenate(out) if out else np.zeros(0)


def train_rng(config: TrainConfig) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(config.seed), spawn_key=(1,)))


def train_loop(model: GanModel, X, Y, config: TrainConfig, X_test=None, Y_test=None,
               rng: np.random.Generator | None = None, on_epoch=None) -> list[dict]:
    """Run ``config.epochs`` epochs of shuffled mini-batch training.

    Returns one record per epoch with mean ``L_D``, ``L_G``, transformation
    distance, batch count, and test ``g_acc`` when a test set is given.
    ``on_epoch(model, record, rng)`` is called after every epoch (checkpointing).
    """
    X = np.asarray(X, dtype=complex)
    Y = np.asarray(Y, dtype=complex)
    if len(X) == 0:
        raise ValueError("empty training set")
    rng = train_rng(config) if rng is None else rng
    n_batches = math.ceil(len(X) / config.batch_size)
    history = []
    for _ in range(config.epochs):
        order = rng.permutation(len(X))
        sums = np.zeros(3)
        for b in range(n_batches):
            idx = order[b * config.batch_size:(b + 1) * config.batch_size]
            rep = train_step(model, X[idx], Y[idx], config, rng)
            sums += (rep["loss_d"], rep["loss_g"], rep["trafo"])
        model.epoch += 1
        rec = {"epoch": model.epoch, "loss_d": sums[0] / n_batches, "loss_g": sums[1] / n_batches,
               "trafo": sums[2] / n_batches, "batches": n_batches}
        if X_test is not None and config.eval_every and model.epoch % config.eval_every == 0:
            rec["g_acc"] = float(evaluate_accuracy(model, X_test, Y_test, config.kappa).mean())
        history.append(rec)
        log.info("epoch %d  L_D=%.4f  L_G=%.4f  eps=%.4f  g_acc=%s", rec["epoch"], rec["loss_d"],
                 rec["loss_g"], rec["trafo"], rec.get("g_acc", "-"))
        if on_epoch is not None:
            on_epoch(model, rec, rng)
    return history
