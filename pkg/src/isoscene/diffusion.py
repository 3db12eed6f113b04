"""Desk-scale diffusion math: schedules, inpainting objectives, masks and the
step-unrolled training step, plus closed-form Gaussian oracles.

Samples are channel-first arrays ``(C, ...)``; a 1-D array is a single channel.
Masks carry no channel axis and broadcast over channels. The latent encoder is the
identity, so the masked context is the masked image itself.

An epsilon predictor is any callable ``predictor(x_t, m, context, t, cond)`` that
returns an array shaped like ``x_t``; ``t`` is an integer schedule index.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class DiffusionSchedule:
    alpha_bar: np.ndarray

    def __post_init__(self):
        ab = np.asarray(self.alpha_bar, dtype=float)
        if ab.ndim != 1 or len(ab) < 1:
            raise ValueError("alpha_bar must be a non-empty 1-D sequence")
        if np.any(ab < 0) or np.any(ab > 1):
            raise ValueError("alpha_bar values must lie in [0, 1]")
        if np.any(np.diff(ab) > 0):
            raise ValueError("alpha_bar must be non-increasing")
        object.__setattr__(self, "alpha_bar", ab)

    @classmethod
    def linear(cls, T=200, start=0.9999, end=1e-4):
        return cls(np.linspace(start, end, T))

    @property
    def T(self):
        return len(self.alpha_bar)

    def __getitem__(self, t):
        return self.alpha_bar[self.check_t(t)]

    def check_t(self, t):
        t = int(t)
        if not 0 <= t < self.T:
            raise ValueError(f"t={t} outside [0, {self.T})")
        return t

    def index_from_unit(self, u):
        """Snap u in [0, 1] to the nearest discrete step."""
        return int(np.clip(np.rint(u * (self.T - 1)), 0, self.T - 1))


def _channels(x):
    x = np.asarray(x, dtype=float)
    return x[None] if x.ndim == 1 else x


def _bmask(m, x):
    """Broadcast a channel-less mask against a channel-first sample."""
    m = np.asarray(m, dtype=float)
    x = np.asarray(x)
    if m.shape == x.shape:
        return m
    if m.shape == x.shape[1:]:
        return m[None]
    raise ValueError(f"mask shape {m.shape} incompatible with sample shape {x.shape}")


def forward_diffuse(x0, t, eps, schedule: DiffusionSchedule):
    x0 = np.asarray(x0, dtype=float)
    eps = np.asarray(eps, dtype=float)
    if x0.shape != eps.shape:
        raise ValueError("eps must match x0 in shape")
    ab = schedule[t]
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def assemble_inpaint_input(x_t, m, context):
    """Concatenate (x_t, m, context) along the channel axis: 2C + 1 channels."""
    x_t = _channels(x_t)
    context = _channels(context)
    if x_t.shape != context.shape:
        raise ValueError("x_t and context must share a shape")
    m = np.asarray(m, dtype=float)
    if m.shape != x_t.shape[1:]:
        raise ValueError(f"mask shape {m.shape} does not match spatial shape {x_t.shape[1:]}")
    return np.concatenate([x_t, m[None], context], axis=0)


def split_inpaint_input(y, channels):
    return y[:channels], y[channels], y[channels + 1 :]


def inpaint_context(x0, m):
    """Known-pixel context (1 - m) * x0 used by the full objective."""
    return (1.0 - _bmask(m, x0)) * np.asarray(x0, dtype=float)


def partial_noised(x0, m, t, eps, schedule: DiffusionSchedule):
    """Noise inside ``m``, keep x0 outside."""
    x0 = np.asarray(x0, dtype=float)
    mb = _bmask(m, x0)
    return mb * forward_diffuse(x0, t, eps, schedule) + (1.0 - mb) * x0


def _masked_mean_sq(diff, m):
    mb = np.broadcast_to(_bmask(m, diff), diff.shape)
    count = np.count_nonzero(mb)
    if count == 0:
        raise ValueError("empty supervision region")
    return float(np.sum((mb * diff) ** 2) / count)


def inpaint_loss(predictor, x0, m, t, eps, cond, schedule: DiffusionSchedule):
    """Full objective: plain MSE of the noise prediction from (x_t, m, (1-m) x0)."""
    x_t = forward_diffuse(x0, t, eps, schedule)
    pred = predictor(x_t, np.asarray(m, dtype=float), inpaint_context(x0, m), int(t), cond)
    return float(np.mean((np.asarray(eps, dtype=float) - pred) ** 2))


def partial_loss(predictor, x0, m, t, eps, cond, schedule: DiffusionSchedule):
    """Background-only objective: noise only inside m, supervise only inside m.

    The context block is ``m * x0`` as in the partial-data formulation.
    """
    x0 = np.asarray(x0, dtype=float)
    x_hat = partial_noised(x0, m, t, eps, schedule)
    context = _bmask(m, x0) * x0
    pred = predictor(x_hat, np.asarray(m, dtype=float), context, int(t), cond)
    return _masked_mean_sq(np.asarray(eps, dtype=float) - pred, m)


# ---------------------------------------------------------------------------
# masks


def make_training_mask(m_pfg, m_random, m_bg):
    """Intersection of pseudo-foreground, random-shape and background masks."""
    a, b, c = (np.asarray(v) for v in (m_pfg, m_random, m_bg))
    if not (a.shape == b.shape == c.shape):
        raise ValueError("mask factors must share a shape")
    return ((a != 0) & (b != 0) & (c != 0)).astype(np.uint8)


def random_blob_mask(shape, rng, n_blobs=(1, 4), radius=(0.15, 0.4)):
    """Union of random axis-aligned ellipsoids (intervals in 1-D)."""
    shape = tuple(int(s) for s in shape)
    grids = np.meshgrid(*[np.arange(s) + 0.5 for s in shape], indexing="ij")
    out = np.zeros(shape, dtype=bool)
    for _ in range(int(rng.integers(n_blobs[0], n_blobs[1] + 1))):
        center = [rng.uniform(0, s) for s in shape]
        radii = [max(rng.uniform(*radius) * s, 0.5) for s in shape]
        r2 = sum(((g - c) / r) ** 2 for g, c, r in zip(grids, center, radii))
        out |= r2 <= 1.0
    return out.astype(np.uint8)


@dataclass
class PseudoForegroundLibrary:
    """Foreground-shaped masks harvested from labelled frames."""

    masks: list = field(default_factory=list)

    def add(self, mask):
        self.masks.append(np.asarray(mask, dtype=np.uint8))

    def sample(self, rng, shape=None):
        if not self.masks:
            if shape is None:
                raise ValueError("empty mask library")
            return np.ones(shape, dtype=np.uint8)
        m = self.masks[int(rng.integers(len(self.masks)))]
        if shape is not None and m.shape != tuple(shape):
            raise ValueError(f"library mask {m.shape} does not match {tuple(shape)}")
        return m

    @classmethod
    def from_instances(cls, frames):
        """Union of foreground instance masks of each frame."""
        lib = cls()
        for frame in frames:
            if frame.instances:
                lib.add(np.any([inst.mask for inst in frame.instances], axis=0))
        return lib


# ---------------------------------------------------------------------------
# step-unrolled training step


def sud_training_step(predictor, x0, m_bg, cond, seed, schedule: DiffusionSchedule, unroll=False,
                      mask_library: PseudoForegroundLibrary | None = None, first_pass=None,
                      t_index=None):
    """One inpainting training step, optionally with the unrolled denoising pass.

    ``first_pass`` defaults to ``predictor``; its output is a constant (no parameters
    are fitted through it). Returns ``(loss, diagnostics)``.
    """
    x0 = np.asarray(x0, dtype=float)
    m_bg = np.asarray(m_bg)
    rng = np.random.default_rng(seed)
    mask_shape = m_bg.shape
    u = rng.uniform(0.0, 1.0)
    t = schedule.check_t(t_index) if t_index is not None else schedule.index_from_unit(u)
    eps = rng.standard_normal(x0.shape)
    lib = mask_library if mask_library is not None else PseudoForegroundLibrary()
    m_pfg = lib.sample(rng, mask_shape)
    m_random = random_blob_mask(mask_shape, rng)
    m = make_training_mask(m_pfg, m_random, m_bg)
    ab = schedule.alpha_bar[t]
    x_t = forward_diffuse(x0, t, eps, schedule)
    diag = {"t": t, "alpha_bar": float(ab), "eps": eps, "m": m, "x_t": x_t}

    if unroll:
        if ab <= 0.0 or ab >= 1.0:
            raise ValueError("degenerate schedule step")
        f = first_pass if first_pass is not None else predictor
        m_hat = m_pfg.astype(np.uint8)
        # first pass omits the text condition
        eps_hat_pred = np.asarray(f(x_t, m_hat, inpaint_context(x0, m_hat), t, None), dtype=float)
        sa, sb = np.sqrt(ab), np.sqrt(1.0 - ab)
        x_pred_hat = (x_t - sb * eps_hat_pred) / sa
        x_t_hat = sa * x_pred_hat + sb * eps
        eps_bar = (x_t_hat - sa * x0) / sb
        eps_bar_pred = np.asarray(predictor(x_t_hat, m, inpaint_context(x0, m), t, cond), dtype=float)
        loss = float(np.mean((eps_bar - eps_bar_pred) ** 2))
        diag.update(m_hat=m_hat, eps_hat_pred=eps_hat_pred, x_pred_hat=x_pred_hat,
                    x_t_hat=x_t_hat, eps_bar=eps_bar, eps_bar_pred=eps_bar_pred)
    else:
        eps_pred = np.asarray(predictor(x_t, m, inpaint_context(x0, m), t, cond), dtype=float)
        loss = float(np.mean((eps - eps_pred) ** 2))
        diag.update(eps_pred=eps_pred)
    return loss, diag


# ---------------------------------------------------------------------------
# Gaussian oracles and linear predictors


def posterior_mean(x_t, ab, mu, sigma2):
    """E[x0 | x_t] for scalar x0 ~ N(mu, sigma2)."""
    return mu + (np.sqrt(ab) * sigma2 / (ab * sigma2 + 1.0 - ab)) * (x_t - np.sqrt(ab) * mu)


def analytic_gaussian_predictor(mu, sigma2, schedule: DiffusionSchedule):
    """Bayes-optimal epsilon predictor for scalar data x0 ~ N(mu, sigma2)."""
    if sigma2 < 0:
        raise ValueError("sigma2 must be non-negative")

    def predict(x_t, m=None, context=None, t=0, cond=None):
        ab = schedule[t]
        x_t = np.asarray(x_t, dtype=float)
        return (x_t - np.sqrt(ab) * posterior_mean(x_t, ab, mu, sigma2)) / np.sqrt(1.0 - ab)

    predict.mu = mu
    predict.sigma2 = sigma2
    return predict


def time_bins(T, t_bins):
    if not 1 <= t_bins <= T:
        raise ValueError(f"t_bins={t_bins} leaves empty bins for T={T}")
    return np.linspace(0, T, t_bins + 1).round().astype(int)


@dataclass
class LinearEpsPredictor:
    """Per-time-bin affine predictor eps = a * x_t + b."""

    edges: np.ndarray
    a: np.ndarray
    b: np.ndarray

    def bin_of(self, t):
        return int(np.searchsorted(self.edges, t, side="right") - 1)

    def __call__(self, x_t, m=None, context=None, t=0, cond=None):
        k = self.bin_of(t)
        return self.a[k] * np.asarray(x_t, dtype=float) + self.b[k]

    def to_dict(self):
        return {"edges": self.edges.tolist(), "a": self.a.tolist(), "b": self.b.tolist()}


def _lstsq_affine(x, y):
    n = len(x)
    if n < 2:
        raise ValueError("degenerate time bin")
    X = np.column_stack([x, np.ones(n)])
    (a, b), *_ = np.linalg.lstsq(X, y, rcond=None)
    return float(a), float(b)


def _bin_draws(rng, dataset, lo, hi, n):
    t = rng.integers(lo, hi, size=n)
    x0 = rng.choice(dataset, size=n, replace=True)
    eps = rng.standard_normal(n)
    return t, x0, eps


def fit_linear_predictor(dataset, schedule: DiffusionSchedule, t_bins=10, n_samples=100_000, seed=0):
    """Closed-form least squares eps ~ a x_t + b per time bin over Monte Carlo draws.

    Each bin draws from its own child seed, so the result does not depend on how bins
    are distributed across workers.
    """
    dataset = np.asarray(dataset, dtype=float).ravel()
    if dataset.size == 0:
        raise ValueError("empty dataset")
    edges = time_bins(schedule.T, t_bins)
    a = np.empty(t_bins)
    b = np.empty(t_bins)
    for k, child in enumerate(np.random.SeedSequence(seed).spawn(t_bins)):
        rng = np.random.default_rng(child)
        t, x0, eps = _bin_draws(rng, dataset, edges[k], edges[k + 1], n_samples)
        ab = schedule.alpha_bar[t]
        x_t = np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps
        a[k], b[k] = _lstsq_affine(x_t, eps)
    return LinearEpsPredictor(edges, a, b)


def linear_oracle_coefficients(mu, sigma2, schedule: DiffusionSchedule, t_bins):
    """Best affine predictor per bin for N(mu, sigma2) data, from exact moments."""
    edges = time_bins(schedule.T, t_bins)
    a = np.empty(t_bins)
    b = np.empty(t_bins)
    for k in range(t_bins):
        ab = schedule.alpha_bar[edges[k] : edges[k + 1]]
        mean_x = np.mean(np.sqrt(ab)) * mu
        second_x = np.mean(ab * (sigma2 + mu**2) + 1.0 - ab)
        cov = np.mean(np.sqrt(1.0 - ab))
        a[k] = cov / (second_x - mean_x**2)
        b[k] = -a[k] * mean_x
    return a, b


def train_linear_predictor(dataset, schedule: DiffusionSchedule, t_bins=10, rounds=8, batch=20_000,
                           unroll=False, unroll_start=0.5, unroll_prob=0.5, seed=0):
    """Iterated closed-form training of a LinearEpsPredictor.

    Each round draws a batch per bin, builds regression pairs with the current predictor
    and refits. In rounds at or after ``unroll_start * rounds`` a fraction ``unroll_prob``
    of the pairs use the unrolled targets (x_t_hat, eps_bar) where the first pass is the
    current predictor, held constant. Scalar samples are single-pixel images, so the
    masks reduce to per-sample supervision flags.

    Returns the predictor and a history of per-round losses: ``train`` on the round's
    own targets and ``standard`` on fresh non-unrolled pairs.
    """
    dataset = np.asarray(dataset, dtype=float).ravel()
    edges = time_bins(schedule.T, t_bins)
    pred = LinearEpsPredictor(edges, np.zeros(t_bins), np.zeros(t_bins))
    history = []
    root = np.random.SeedSequence(seed)
    for r, round_seq in enumerate(root.spawn(rounds)):
        active = unroll and r >= int(np.ceil(unroll_start * rounds))
        new_a = np.empty(t_bins)
        new_b = np.empty(t_bins)
        train_sq = 0.0
        std_sq = 0.0
        count = 0
        for k, child in enumerate(round_seq.spawn(t_bins)):
            rng = np.random.default_rng(child)
            t, x0, eps = _bin_draws(rng, dataset, edges[k], edges[k + 1], batch)
            supervised = make_training_mask(np.ones(batch), rng.random(batch) < 0.9, np.ones(batch)).astype(bool)
            ab = schedule.alpha_bar[t]
            sa, sb = np.sqrt(ab), np.sqrt(1.0 - ab)
            x_t = sa * x0 + sb * eps
            inputs, targets = x_t.copy(), eps.copy()
            if active:
                sel = rng.random(batch) < unroll_prob
                first = pred.a[k] * x_t[sel] + pred.b[k]
                x_pred_hat = (x_t[sel] - sb[sel] * first) / sa[sel]
                x_t_hat = sa[sel] * x_pred_hat + sb[sel] * eps[sel]
                inputs[sel] = x_t_hat
                targets[sel] = (x_t_hat - sa[sel] * x0[sel]) / sb[sel]
            resid = targets - (pred.a[k] * inputs + pred.b[k])
            train_sq += np.sum(resid[supervised] ** 2)
            std_sq += np.sum((eps - (pred.a[k] * x_t + pred.b[k]))[supervised] ** 2)
            count += int(supervised.sum())
            new_a[k], new_b[k] = _lstsq_affine(inputs[supervised], targets[supervised])
        history.append({"round": r, "unroll": bool(active), "train": train_sq / count, "standard": std_sq / count})
        pred = LinearEpsPredictor(edges, new_a, new_b)
    return pred, history


def standard_loss(predictor, dataset, schedule: DiffusionSchedule, n=100_000, seed=0):
    """Monte Carlo estimate of E||eps - predictor(x_t, t)||^2 with t uniform."""
    rng = np.random.default_rng(seed)
    dataset = np.asarray(dataset, dtype=float).ravel()
    t = rng.integers(0, schedule.T, size=n)
    x0 = rng.choice(dataset, size=n)
    eps = rng.standard_normal(n)
    ab = schedule.alpha_bar[t]
    x_t = np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps
    pred = np.empty(n)
    for tt in np.unique(t):
        sel = t == tt
        pred[sel] = predictor(x_t[sel], None, None, int(tt), None)
    return float(np.mean((eps - pred) ** 2))


def ancestral_sample(predictor, schedule: DiffusionSchedule, seed, n):
    """DDPM reverse process from pure noise with posterior-variance noise."""
    rng = np.random.default_rng(seed)
    ab = schedule.alpha_bar
    x = rng.standard_normal(n)
    for t in range(schedule.T - 1, -1, -1):
        prev = ab[t - 1] if t > 0 else 1.0
        alpha = ab[t] / prev
        beta = 1.0 - alpha
        eps = np.asarray(predictor(x, None, None, t, None), dtype=float)
        x = (x - beta / np.sqrt(1.0 - ab[t]) * eps) / np.sqrt(alpha)
        if t > 0:
            var = beta * (1.0 - prev) / (1.0 - ab[t])
            x = x + np.sqrt(var) * rng.standard_normal(n)
    return x
