"""Conditional latent diffusion: noising, denoiser, training loss, DDIM.

The noise schedule stores the *cumulative* signal coefficient alpha_bar[t]
(product of per-step 1-beta), so the single-shot corruption
``z_t = sqrt(alpha_bar) z0 + sqrt(1-alpha_bar) eps`` is the marginal of the
chain. The denoiser is a residual MLP over the concatenation of the noisy
latent, the condition features, and a sinusoidal time embedding.
"""

from __future__ import annotations

import numpy as np

from .engine import Tensor, concat, sinusoidal_embed
from .nn import Linear, MLP


class ScheduleError(ValueError):
    pass


class NoiseSchedule:
    def __init__(self, steps=100, beta_start=1e-4, beta_end=0.02):
        if steps < 1:
            raise ScheduleError("schedule needs at least one step")
        self.steps = steps
        self.beta = np.linspace(beta_start, beta_end, steps)
        if np.any(self.beta <= 0) or np.any(self.beta >= 1):
            raise ScheduleError("beta values must lie in (0, 1)")
        self.alpha_bar = np.cumprod(1.0 - self.beta)
        if not (np.all(np.diff(self.alpha_bar) < 0) and self.alpha_bar[0] < 1):
            raise ScheduleError("alpha_bar must be strictly decreasing below 1")

    def check_t(self, t):
        if not 0 <= t < self.steps:
            raise ScheduleError(f"timestep {t} outside [0, {self.steps})")
        return int(t)


def forward_noise(z0, t, eps, schedule):
    """Single-shot corruption of a clean latent to noise level t."""
    t = schedule.check_t(t)
    ab = schedule.alpha_bar[t]
    z0 = np.asarray(z0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    return np.sqrt(ab) * z0 + np.sqrt(1.0 - ab) * eps


def latent_from_noise(z_t, eps_hat, t, schedule):
    """Invert the corruption using a (predicted) noise vector.

    Exact inverse of ``forward_noise`` when eps_hat is the true noise.
    Accepts numpy arrays or Tensors; Tensors keep gradients flowing.
    """
    t = schedule.check_t(t)
    ab = schedule.alpha_bar[t]
    if isinstance(z_t, Tensor) or isinstance(eps_hat, Tensor):
        zt = z_t if isinstance(z_t, Tensor) else Tensor(z_t)
        eh = eps_hat if isinstance(eps_hat, Tensor) else Tensor(eps_hat)
        return (zt - float(np.sqrt(1.0 - ab)) * eh) * float(1.0 / np.sqrt(ab))
    return (np.asarray(z_t) - np.sqrt(1.0 - ab) * np.asarray(eps_hat)) / np.sqrt(ab)


class DenoiserNet:
    """Residual-MLP noise predictor conditioned on features and timestep."""

    def __init__(self, latent_dim=64, cond_dim=192, hidden=128, blocks=4,
                 time_dim=32, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.latent_dim = latent_dim
        self.time_dim = time_dim
        self.inp = Linear(latent_dim + cond_dim + time_dim, hidden, rng)
        self.blocks = [MLP([hidden, hidden, hidden], rng) for _ in range(blocks)]
        self.out = Linear(hidden, latent_dim, rng)

    def __call__(self, z_t, cond, t):
        zt = z_t if isinstance(z_t, Tensor) else Tensor(np.asarray(z_t))
        c = cond if isinstance(cond, Tensor) else Tensor(np.asarray(cond))
        emb = sinusoidal_embed(t, self.time_dim)
        h = self.inp(concat([zt, c, emb], axis=-1)).relu()
        for blk in self.blocks:
            h = h + blk(h)
        return self.out(h)

    def params(self):
        out = self.inp.params() + self.out.params()
        for blk in self.blocks:
            out.extend(blk.params())
        return out


def ldm_loss(batch, denoiser, schedule, rng):
    """Noise-prediction objective over a batch of (z0, condition) pairs.

    Per sample: draw uniform t and Gaussian eps, corrupt, and penalize the
    squared norm of the prediction error; mean over the batch.
    """
    total = None
    for z0, cond in batch:
        t = int(rng.integers(schedule.steps))
        eps = rng.standard_normal(len(np.asarray(z0)))
        z_t = forward_noise(np.asarray(z0), t, eps, schedule)
        err = denoiser(z_t, cond, t) - Tensor(eps)
        term = (err * err).sum()
        total = term if total is None else total + term
    return total * (1.0 / len(batch))


def ddim_subschedule(total_steps, sample_steps):
    """Uniformly strided timesteps, descending from T-1 to 0."""
    if sample_steps > total_steps:
        raise ScheduleError("cannot take more DDIM steps than schedule steps")
    ts = np.unique(np.linspace(0, total_steps - 1, sample_steps).round().astype(int))
    return ts[::-1]


def ddim_sample(cond, denoiser, schedule, steps=20, eta=0.0, seed=0, z_init=None):
    """Deterministic (eta=0) DDIM sampling; returns the final clean latent."""
    if not 0.0 <= eta <= 1.0:
        raise ScheduleError("eta must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    ts = ddim_subschedule(schedule.steps, steps)
    z = (np.asarray(z_init, dtype=np.float64) if z_init is not None
         else rng.standard_normal(denoiser.latent_dim))
    for i, t in enumerate(ts):
        ab_t = schedule.alpha_bar[t]
        ab_prev = schedule.alpha_bar[ts[i + 1]] if i + 1 < len(ts) else 1.0
        eps_hat = denoiser(z, cond, int(t))
        eps_hat = eps_hat.data if isinstance(eps_hat, Tensor) else np.asarray(eps_hat)
        z0_pred = (z - np.sqrt(1.0 - ab_t) * eps_hat) / np.sqrt(ab_t)
        sigma = eta * np.sqrt((1.0 - ab_prev) / (1.0 - ab_t)) * np.sqrt(1.0 - ab_t / ab_prev)
        z = (np.sqrt(ab_prev) * z0_pred
             + np.sqrt(max(1.0 - ab_prev - sigma ** 2, 0.0)) * eps_hat)
        if eta > 0:
            z = z + sigma * rng.standard_normal(len(z))
    return z


def diffusion_train(denoiser, cond_encoder, dataset, schedule, epochs=40,
                    lr=1e-3, batch_size=8, seed=0, train_encoder=True,
                    lr_decay=1.0):
    """Minimize the noise-prediction loss; returns the per-epoch loss curve.

    ``dataset``: sequence of (z0, instruction, obj_points, afford_points4).
    Conditions are re-encoded each step so encoder weights can train jointly.
    With train_encoder=False the conditions are encoded once up front and
    minibatches run through the denoiser as stacked matrices, lr_decay
    multiplies the learning rate each epoch.

    The curve records, after every epoch, the loss on a fixed probe set of
    (sample, timestep, noise) triples drawn once from the seed. That keeps
    the curve a deterministic function of the weights (lr = 0 is flat) while
    training still draws fresh timesteps and noise every step.
    """
    from .affordance import TrainingError
    from .engine import Adam

    if not dataset:
        raise TrainingError("empty training set")
    rng = np.random.default_rng(seed)
    params = denoiser.params() + (cond_encoder.params() if train_encoder else [])
    opt = Adam(params, lr)
    if not train_encoder:
        return _diffusion_train_batched(denoiser, cond_encoder, dataset,
                                        schedule, epochs, batch_size, rng, opt,
                                        lr, lr_decay)

    probe = _probe_triples(dataset, schedule, denoiser.latent_dim, rng)

    def probe_loss():
        batch = []
        for i, _, _ in probe:
            z0, instr, obj_pts, aff_pts = dataset[i]
            bundle = cond_encoder(instr, obj_pts, aff_pts)
            batch.append((z0, bundle.concat()))
        total = 0.0
        for (z0, cond), (_, t, eps) in zip(batch, probe):
            z_t = forward_noise(np.asarray(z0, dtype=np.float64), t, eps, schedule)
            err = denoiser(z_t, cond, t).data - eps
            total += float(err @ err)
        return total / len(probe)

    curve = []
    for epoch in range(epochs):
        opt.lr = lr * lr_decay ** epoch
        order = rng.permutation(len(dataset))
        for b0 in range(0, len(order), batch_size):
            batch = []
            for i in order[b0:b0 + batch_size]:
                z0, instr, obj_pts, aff_pts = dataset[i]
                bundle = cond_encoder(instr, obj_pts, aff_pts)
                batch.append((z0, bundle.concat()))
            loss = ldm_loss(batch, denoiser, schedule, rng)
            if not np.isfinite(loss.item()):
                raise TrainingError("diffusion training diverged (non-finite loss)")
            loss.backward()
            opt.step()
        curve.append(probe_loss())
    return curve


def _probe_triples(dataset, schedule, latent_dim, rng, n=8):
    """Fixed probe set for the loss curve: evenly spread timesteps."""
    count = min(n, len(dataset))
    idxs = list(range(count))
    ts = [(i * schedule.steps) // max(1, count) for i in range(count)]
    eps = [rng.standard_normal(latent_dim) for _ in range(count)]
    return list(zip(idxs, ts, eps))


def _diffusion_train_batched(denoiser, cond_encoder, dataset, schedule,
                             epochs, batch_size, rng, opt, lr, lr_decay):
    from .affordance import TrainingError

    conds = np.stack([cond_encoder(instr, obj, aff).concat().data
                      for _, instr, obj, aff in dataset])
    z0s = np.stack([np.asarray(z0, dtype=np.float64) for z0, _, _, _ in dataset])
    embeds = np.stack([sinusoidal_embed(t, denoiser.time_dim).data
                       for t in range(schedule.steps)])
    probe = _probe_triples(dataset, schedule, denoiser.latent_dim, rng)
    p_idx = np.array([i for i, _, _ in probe])
    p_ts = np.array([t for _, t, _ in probe])
    p_eps = np.stack([e for _, _, e in probe])
    p_ab = schedule.alpha_bar[p_ts][:, None]
    p_zt = np.sqrt(p_ab) * z0s[p_idx] + np.sqrt(1.0 - p_ab) * p_eps
    p_in = np.concatenate([p_zt, conds[p_idx], embeds[p_ts]], axis=-1)

    def probe_loss():
        h = denoiser.inp(Tensor(p_in)).relu()
        for blk in denoiser.blocks:
            h = h + blk(h)
        err = denoiser.out(h).data - p_eps
        return float((err * err).sum() / len(probe))

    curve = []
    for epoch in range(epochs):
        opt.lr = lr * lr_decay ** epoch
        order = rng.permutation(len(dataset))
        for b0 in range(0, len(order), batch_size):
            idxs = order[b0:b0 + batch_size]
            ts = rng.integers(schedule.steps, size=len(idxs))
            eps = rng.standard_normal((len(idxs), denoiser.latent_dim))
            ab = schedule.alpha_bar[ts][:, None]
            z_t = np.sqrt(ab) * z0s[idxs] + np.sqrt(1.0 - ab) * eps
            h = denoiser.inp(concat([Tensor(z_t), Tensor(conds[idxs]),
                                     Tensor(embeds[ts])], axis=-1)).relu()
            for blk in denoiser.blocks:
                h = h + blk(h)
            err = denoiser.out(h) - Tensor(eps)
            loss = (err * err).sum() * (1.0 / len(idxs))
            if not np.isfinite(loss.item()):
                raise TrainingError("diffusion training diverged (non-finite loss)")
            loss.backward()
            opt.step()
        curve.append(probe_loss())
    return curve
