"""Margin, ranking, clamping and gradient-penalty losses plus GAN baselines.

Score arguments are critic outputs of shape ``(batch,)`` or ``(batch, 1)``.
Hinges are applied per paired sample and then averaged, except the clamp
penalty which hinges on batch means.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Node
from .nn import ConfigError


@dataclass(frozen=True)
class MarginPair:
    m_high: float
    m_low: float

    def __post_init__(self):
        if self.m_high < self.m_low:
            warnings.warn(
                f"high margin {self.m_high:.6g} is below low margin {self.m_low:.6g}",
                RuntimeWarning,
                stacklevel=2,
            )


@dataclass(frozen=True)
class LossWeights:
    lambda_gp: float = 10.0
    lambda_clamp: float = 1000.0
    epsilon_margin: float = 1.0

    def __post_init__(self):
        for name in ("lambda_gp", "lambda_clamp", "epsilon_margin"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")


def _flat(x) -> Node:
    x = ad.as_node(x)
    return ad.reshape(x, (-1,))


def _paired(a, b, op: str) -> tuple[Node, Node]:
    a, b = _flat(a), _flat(b)
    if a.shape != b.shape:
        raise ad.ShapeError(f"{op}: batch sizes differ ({a.shape[0]} vs {b.shape[0]})")
    return a, b


def hinge_mean(x) -> Node:
    return ad.mean(ad.relu(x))


def margin_loss(d_fake, d_real, epsilon: float = 1.0) -> Node:
    """mean [D(G(z)) + eps - D(x)]_+"""
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    d_fake, d_real = _paired(d_fake, d_real, "margin_loss")
    return hinge_mean(d_fake + epsilon - d_real)


def disc_rank_loss(d_fake_i, d_fake_prev, paired: bool = True) -> Node:
    """mean [D_i(G_i(z)) - D_i(G_{i-1}(z))]_+

    With ``paired=False`` (independent latent draws) the hinge is taken on
    the batch means instead.
    """
    if paired:
        a, b = _paired(d_fake_i, d_fake_prev, "disc_rank_loss")
        return hinge_mean(a - b)
    return ad.relu(ad.mean(_flat(d_fake_i)) - ad.mean(_flat(d_fake_prev)))


def gen_rank_loss(d_real, d_fake_i, paired: bool = True) -> Node:
    """mean [D_i(x) - D_i(G_i(z))]_+"""
    if paired:
        a, b = _paired(d_real, d_fake_i, "gen_rank_loss")
        return hinge_mean(a - b)
    return ad.relu(ad.mean(_flat(d_real)) - ad.mean(_flat(d_fake_i)))


def gradient_penalty(critic: Callable[[Node], Node], x_real, x_fake, u) -> Node:
    """E[(||grad_xhat D(xhat)||_2 - 1)^2] at xhat = u * x_real + (1 - u) * x_fake.

    ``critic`` maps a ``(batch, features)`` node to scores and must close over
    the parameter nodes the penalty should be differentiable against. One
    uniform per sample is broadcast across features.
    """
    x_real = np.asarray(x_real.value if isinstance(x_real, Node) else x_real, dtype=np.float64)
    x_fake = np.asarray(x_fake.value if isinstance(x_fake, Node) else x_fake, dtype=np.float64)
    if x_real.shape != x_fake.shape:
        raise ad.ShapeError(f"gradient_penalty: real shape {x_real.shape} != fake shape {x_fake.shape}")
    u = np.asarray(u, dtype=np.float64).reshape(-1, 1)
    if u.shape[0] != x_real.shape[0]:
        raise ad.ShapeError(f"gradient_penalty: {u.shape[0]} uniforms for batch of {x_real.shape[0]}")
    x_hat = ad.variable(u * x_real + (1.0 - u) * x_fake)
    scores = critic(x_hat)
    (g,) = ad.grad(ad.sum_(scores), [x_hat], create_graph=True)
    norms = ad.l2_norm(g, axis=1)
    return ad.mean(ad.square(norms - 1.0))


def clamp_loss(d_real, d_fake_prev, margins: MarginPair) -> Node:
    """[m_high - mean D(x)]_+ + [mean D(G_{i-1}(z)) - m_low]_+"""
    return ad.relu(margins.m_high - ad.mean(_flat(d_real))) + ad.relu(
        ad.mean(_flat(d_fake_prev)) - margins.m_low
    )


def disc_total_loss(rank, gp, clamp, weights: LossWeights = LossWeights()) -> Node:
    return ad.as_node(rank) + weights.lambda_gp * ad.as_node(gp) + weights.lambda_clamp * ad.as_node(clamp)


BASELINES = ("gan", "wgan", "lsgan")


def baseline_loss(kind: str, d_real, d_fake, role: str) -> Node:
    """Critic-output based GAN, WGAN and LSGAN objectives.

    ``gan`` applies the sigmoid internally; its generator uses the
    non-saturating form -log sigmoid(D(G(z))).
    """
    if kind not in BASELINES:
        raise ConfigError(f"unknown baseline loss {kind!r}; expected one of {BASELINES}")
    if role not in ("disc", "gen"):
        raise ConfigError(f"unknown role {role!r}")
    d_fake = _flat(d_fake)
    if role == "disc":
        d_real, d_fake = _paired(d_real, d_fake, f"{kind} disc loss")
        if kind == "gan":
            return ad.mean(ad.softplus(-d_real)) + ad.mean(ad.softplus(d_fake))
        if kind == "wgan":
            return ad.mean(d_fake) - ad.mean(d_real)
        return 0.5 * (ad.mean(ad.square(d_real - 1.0)) + ad.mean(ad.square(d_fake)))
    if kind == "gan":
        return ad.mean(ad.softplus(-d_fake))
    if kind == "wgan":
        return -ad.mean(d_fake)
    return 0.5 * ad.mean(ad.square(d_fake - 1.0))
