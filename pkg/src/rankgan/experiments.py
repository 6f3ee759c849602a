"""Experiment drivers: score-shape comparison, per-stage evaluation, completion."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import losses as L
from . import metrics
from .completion import blend, optimize_latent, params_digest
from .config import ExperimentConfig
from .data import Dataset, apply_mask, make_mask, ring8_centers, RING_SIGMA, sample_real
from .nn import AdamState, MlpSpec, adam_step, encoder_forward, init_mlp, param_grads, sample_latent
from .stagewise import Net, StageState

FIG2_COLUMNS = ("x", "d_gan_sigmoid", "d_wgan", "d_lsgan", "d_margin")
FIG2_LOSSES = ("gan", "wgan", "lsgan", "margin")
METRIC_COLUMNS = ("stage", "name", "value", "n_a", "n_b", "seed")
COMPLETION_COLUMNS = (
    "image_id", "mask_kind", "stage", "psnr", "ssim",
    "final_contextual", "final_perceptual", "iterations",
)


def fig2_grid(cfg: ExperimentConfig) -> np.ndarray:
    f = cfg.fig2
    n = int(round((f.grid_max - f.grid_min) / f.grid_step)) + 1
    return f.grid_min + f.grid_step * np.arange(n)


def train_fig2_critic(kind: str, fake: np.ndarray, real: np.ndarray, cfg: ExperimentConfig,
                      seed: int) -> Net:
    """Fit one critic to separate two fixed 1D sample sets under ``kind``."""
    f = cfg.fig2
    rng = np.random.default_rng(seed)
    spec = MlpSpec((1, *f.hidden, 1))
    net = Net(init_mlp(spec, rng), spec)
    opt = AdamState(lr=f.lr, beta1=cfg.beta1, beta2=cfg.beta2)
    b = min(f.batch_size, len(fake), len(real))
    for _ in range(f.steps):
        xr = real[rng.integers(0, len(real), b)]
        xf = fake[rng.integers(0, len(fake), b)]
        nodes = net.params.nodes()
        scores = net.forward(np.concatenate([xr, xf]), nodes)
        d_real, d_fake = scores[:b], scores[b:]
        if kind == "margin":
            loss = L.margin_loss(d_fake, d_real, cfg.weights.epsilon_margin)
        else:
            loss = L.baseline_loss(kind, d_real, d_fake, "disc")
        if kind in ("wgan", "margin"):
            gp = L.gradient_penalty(lambda h: net.forward(h, nodes), xr, xf, rng.uniform(size=b))
            loss = loss + f.lambda_gp * gp
        adam_step(opt, net.params, param_grads(loss, nodes))
    return net


def fig2_scores(cfg: ExperimentConfig) -> list[tuple]:
    """Critic scores over a 1D grid for four losses trained on the same pair.

    The left normal plays the generated distribution, the right one the data.
    The GAN column is reported after the sigmoid.
    """
    samples = sample_real("gauss1d-pair", cfg.fig2.n_samples, cfg.subseed("data"))
    half = len(samples) // 2
    fake, real = samples[:half], samples[half:]
    grid = fig2_grid(cfg)
    cols = {}
    seeds = np.random.SeedSequence(cfg.subseed("train")).spawn(len(FIG2_LOSSES))
    for kind, ss in zip(FIG2_LOSSES, seeds):
        net = train_fig2_critic(kind, fake, real, cfg, int(ss.generate_state(1)[0]))
        out = net.predict(grid.reshape(-1, 1)).ravel()
        cols[kind] = 1.0 / (1.0 + np.exp(-out)) if kind == "gan" else out
    return [(float(x), *(float(cols[k][i]) for k in FIG2_LOSSES)) for i, x in enumerate(grid)]


def encode_mean(encoder: Net, x: np.ndarray) -> np.ndarray:
    with ad.no_grad():
        return encoder_forward(encoder.params, encoder.spec, x).mu.value


def encode_sample(encoder: Net, x: np.ndarray, noise: np.ndarray) -> np.ndarray:
    with ad.no_grad():
        return sample_latent(encoder_forward(encoder.params, encoder.spec, x), noise).value


def evaluate_stage(state: StageState, encoder: Net, dataset: Dataset, cfg: ExperimentConfig) -> list[metrics.MetricReport]:
    """Distance of generated samples to the held-out split, plus critic score stats.

    Latent codes come from the encoder on the test images and from the prior,
    with noise drawn from a fixed evaluation stream so every stage sees the
    same codes.
    """
    test = dataset.test
    rng = np.random.default_rng(cfg.subseed("train") + 1)
    z_enc = encode_sample(encoder, test, rng.normal(size=(len(test), cfg.latent_dim)))
    z_prior = rng.normal(size=(len(test), cfg.latent_dim))
    seed = cfg.seed
    g_enc, g_prior = state.G.predict(z_enc), state.G.predict(z_prior)
    reports = [
        metrics.MetricReport("sw_encoder", metrics.sliced_wasserstein(g_enc, test, cfg.n_proj, seed), len(g_enc), len(test), seed),
        metrics.MetricReport("sw_prior", metrics.sliced_wasserstein(g_prior, test, cfg.n_proj, seed), len(g_prior), len(test), seed),
    ]
    if cfg.dataset == "ring8":
        for name, g in (("coverage_encoder", g_enc), ("coverage_prior", g_prior)):
            reports.append(metrics.MetricReport(
                name, metrics.mode_coverage(g, ring8_centers(), 3 * RING_SIGMA), len(g), 8, seed))
    mean, std = metrics.score_stats(lambda x: state.D.forward(x), test)
    reports += [
        metrics.MetricReport("d_real_mean", mean, len(test), 0, seed),
        metrics.MetricReport("d_real_std", std, len(test), 0, seed),
    ]
    return reports


def complete_images(G: Net, D: Net, encoder: Net | None, images: np.ndarray, mask_kind: str,
                    cfg: ExperimentConfig, z_init: str | None = None, seed: int | None = None):
    """Complete ``images`` under one mask; returns (completed, corrupted, result).

    The encoder initialization encodes the zero-filled corrupted image and
    starts from its posterior mean.
    """
    ccfg = cfg.completion
    z_init = z_init or ccfg.z_init
    mask = make_mask(mask_kind)
    corrupted = apply_mask(images, mask, fill=0.0)
    if z_init == "encoder":
        if encoder is None:
            raise ValueError("z_init='encoder' needs a trained encoder")
        z0 = encode_mean(encoder, corrupted)
    else:
        rng = np.random.default_rng(cfg.subseed("completion") if seed is None else seed)
        z0 = rng.normal(size=(len(images), G.spec.in_dim))
    before = params_digest(G.params, D.params)
    result = optimize_latent(lambda z: G.forward(z), lambda x: D.forward(x), corrupted, mask, ccfg, z0)
    if params_digest(G.params, D.params) != before:
        raise RuntimeError("latent optimization modified generator or critic parameters")
    completed = blend(corrupted, mask, G.predict(result.z_hat))
    return completed, corrupted, result


def completion_rows(stage: int, G: Net, D: Net, encoder: Net | None, images: np.ndarray,
                    mask_kind: str, cfg: ExperimentConfig) -> tuple[list[tuple], np.ndarray]:
    completed, _, result = complete_images(G, D, encoder, images, mask_kind, cfg)
    rows = []
    for k in range(len(images)):
        rows.append((
            k, mask_kind, stage,
            metrics.psnr(images[k], completed[k]),
            metrics.ssim(images[k], completed[k]),
            float(result.final_contextual[k]),
            float(result.final_perceptual[k]),
            result.steps,
        ))
    return rows, completed
