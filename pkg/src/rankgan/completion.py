"""Image completion by searching the generator's latent space.

For a corrupted image ``y`` with visibility mask ``M`` the latent code is
optimized to minimize ``||M*G(z) - M*y||_1 - lam * D(G(z))`` and the result
is blended back as ``M*y + (1 - M)*G(z_hat)``.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .config import CompletionConfig
from .nn import AdamState, adam_step, ModelParams


class CompletionError(FloatingPointError):
    def __init__(self, iteration: int, value: float):
        self.iteration = iteration
        super().__init__(f"non-finite completion loss ({value}) at iteration {iteration}")


def _rows(x: ad.Node) -> ad.Node:
    return x if x.ndim == 2 else ad.reshape(x, (1, -1))


def contextual_loss(gen_out, y, mask, reduce: bool = True) -> ad.Node:
    """L1 distance on visible pixels, one value per image (summed if ``reduce``)."""
    gen_out = _rows(ad.as_node(gen_out))
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    if gen_out.shape != y.shape and gen_out.shape[1:] != y.shape[1:]:
        raise ad.ShapeError(f"contextual_loss: generated shape {gen_out.shape} vs target {y.shape}")
    mask = np.asarray(mask, dtype=np.float64)
    per_image = ad.sum_(ad.abs_((gen_out - y) * mask), axis=1)
    return ad.sum_(per_image) if reduce else per_image


def perceptual_loss(critic, gen_out, reduce: bool = True) -> ad.Node:
    """-D(G(z)), averaged over the batch when ``reduce``."""
    scores = ad.reshape(critic(_rows(ad.as_node(gen_out))), (-1,))
    return ad.mean(-scores) if reduce else -scores


@dataclass
class CompletionResult:
    z_hat: np.ndarray
    trajectory: list[tuple[int, float]] = field(default_factory=list)
    steps: int = 0
    final_contextual: np.ndarray | None = None
    final_perceptual: np.ndarray | None = None
    initial_loss: float = float("nan")
    final_loss: float = float("nan")


def optimize_latent(generator, critic, y, mask, config: CompletionConfig, z0) -> CompletionResult:
    """Adam on the latent codes only; ``generator``/``critic`` map nodes to nodes.

    The step size starts at ``config.step_size`` and is cosine-annealed to 0
    over the iteration budget.

    ``y`` is ``(n, pixels)``; every image owns one row of ``z0``. The
    objective is summed over images, so each row is optimized independently.
    The trajectory holds the mean per-image loss at iteration 1, every
    ``config.log_every`` iterations and at the last iteration.
    """
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    z = np.array(z0, dtype=np.float64, ndmin=2)
    if len(z) != len(y):
        raise ad.ShapeError(f"optimize_latent: {len(z)} latent rows for {len(y)} images")
    state = AdamState(lr=config.step_size, beta1=0.9, beta2=0.999)
    holder = ModelParams([("z", z)])
    result = CompletionResult(z_hat=z)

    def objective(zn):
        g = generator(zn)
        ctx = contextual_loss(g, y, mask, reduce=False)
        perc = perceptual_loss(critic, g, reduce=False)
        return ad.sum_(ctx + config.lam * perc), ctx, perc

    for it in range(1, config.iterations + 1):
        # cosine-annealed step: constant-step Adam keeps oscillating on the L1 term
        state.lr = 0.5 * config.step_size * (1 + np.cos(np.pi * (it - 1) / config.iterations))
        nodes = holder.nodes()
        total, _, _ = objective(nodes["z"])
        value = total.item()
        if not np.isfinite(value):
            raise CompletionError(it, value)
        if it == 1:
            result.initial_loss = value / len(y)
        if it == 1 or it % config.log_every == 0:
            result.trajectory.append((it, value / len(y)))
        (gz,) = ad.grad(total, [nodes["z"]])
        adam_step(state, holder, {"z": gz.value})
        result.steps += 1

    with ad.no_grad():
        total, ctx, perc = objective(ad.constant(holder["z"]))
    if not np.isfinite(total.item()):
        raise CompletionError(config.iterations + 1, total.item())
    result.final_loss = total.item() / len(y)
    if not result.trajectory or result.trajectory[-1][0] != config.iterations:
        result.trajectory.append((config.iterations, result.final_loss))
    result.z_hat = holder["z"].copy()
    result.final_contextual = ctx.value.copy()
    result.final_perceptual = perc.value.copy()
    return result


def blend(y, mask, g_of_z_hat) -> np.ndarray:
    """Visible pixels from ``y`` (bit-exact), hidden ones from the generator."""
    y = np.asarray(y, dtype=np.float64)
    g = np.asarray(g_of_z_hat, dtype=np.float64)
    if y.shape != g.shape:
        raise ad.ShapeError(f"blend: image shape {y.shape} vs generated {g.shape}")
    return np.where(np.asarray(mask) == 1, y, g)


def params_digest(*params: ModelParams) -> str:
    h = hashlib.sha256()
    for p in params:
        h.update(p.digest().encode())
    return h.hexdigest()
