"""Stage-wise ranking GAN training engine.

Stage 1 trains a VAE (its encoder is frozen afterwards and its decoder seeds
the first generator), warm-starts the first critic with the WGAN loss plus
gradient penalty, and optionally runs a margin-loss adversarial phase.
Every later stage clones the previous pair, freezes the originals, measures
the high/low margins on held-out data and then alternates critic updates
(ranking + gradient penalty + clamping) with generator updates.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import autodiff as ad
from . import losses as L
from .config import ExperimentConfig, TrainSchedule
from .data import Dataset, data_dim, make_dataset
from .nn import (
    AdamState,
    MlpSpec,
    ModelParams,
    adam_step,
    encoder_forward,
    init_mlp,
    mlp_forward,
    param_grads,
    sample_latent,
    vae_loss,
)

log = logging.getLogger(__name__)

HISTORY_COLUMNS = (
    "stage", "epoch", "mean_d_real", "mean_d_fake_i", "mean_d_fake_prev",
    "loss_disc", "loss_gen", "gp", "clamp", "wall_ms",
)


class TrainingError(FloatingPointError):
    def __init__(self, stage: int, epoch: int, step: int, component: str, value: float):
        self.stage, self.epoch, self.step, self.component = stage, epoch, step, component
        super().__init__(
            f"non-finite {component} loss ({value}) at stage {stage}, epoch {epoch}, step {step}"
        )


@dataclass
class Net:
    params: ModelParams
    spec: MlpSpec

    def forward(self, x, nodes=None) -> ad.Node:
        return mlp_forward(self.params if nodes is None else nodes, self.spec, x)

    def predict(self, x) -> np.ndarray:
        with ad.no_grad():
            return mlp_forward(self.params, self.spec, x).value

    def clone(self, frozen: bool = False) -> "Net":
        return Net(self.params.clone(frozen=frozen), self.spec)


@dataclass
class HistoryRow:
    stage: int
    epoch: int
    mean_d_real: float
    mean_d_fake_i: float
    mean_d_fake_prev: float
    loss_disc: float
    loss_gen: float
    gp: float
    clamp: float
    wall_ms: float = 0.0

    @property
    def gap(self) -> float:
        return self.mean_d_real - self.mean_d_fake_i

    def as_tuple(self) -> tuple:
        return tuple(getattr(self, c) for c in HISTORY_COLUMNS)


@dataclass
class StageState:
    index: int
    G: Net
    D: Net
    G_prev: Net | None = None
    D_prev: Net | None = None
    margins: L.MarginPair | None = None
    epoch: int = 0
    history: list[HistoryRow] = field(default_factory=list)
    critic_steps: int = 0
    gen_steps: int = 0
    margin_computations: int = 0
    pending_critic: int = 0
    frozen_digests: dict = field(default_factory=dict)
    stop_reason: str = ""


def build_specs(cfg: ExperimentConfig) -> tuple[MlpSpec, MlpSpec, MlpSpec]:
    dim = data_dim(cfg.dataset)
    g_out = "tanh" if cfg.dataset == "toy-faces" else "identity"
    g = MlpSpec((cfg.latent_dim, *cfg.hidden, dim), output=g_out)
    d = MlpSpec((dim, *cfg.hidden, 1))
    e = MlpSpec((dim, *cfg.encoder_hidden, 2 * cfg.latent_dim))
    return g, d, e


def stage_should_terminate(
    history: list[HistoryRow], schedule: TrainSchedule, threshold: float | None = None
) -> tuple[bool, str]:
    """Stop on the epoch cap or when the critic gap has settled.

    The gap is mean D(x) - mean D(G_i(z)); it counts as settled when its
    standard deviation over the trailing window drops below ``threshold``
    (default: 2% of the first recorded gap).
    """
    if not history:
        return False, "continue"
    if history[-1].epoch >= schedule.max_stage_epochs:
        return True, "max-epochs"
    if threshold is None:
        threshold = schedule.gap_threshold
    if threshold is None:
        threshold = 0.02 * abs(history[0].gap)
    if len(history) >= schedule.gap_window:
        gaps = np.array([r.gap for r in history[-schedule.gap_window:]])
        if np.std(gaps) < threshold:
            return True, "stable"
    return False, "continue"


def compute_stage_margins(D_prev: Net, G_prev: Net, x_val: np.ndarray, z: np.ndarray) -> L.MarginPair:
    """High margin = mean D_prev(x_val); low margin = mean D_prev(G_prev(z))."""
    x_val = np.asarray(x_val, dtype=np.float64)
    if x_val.size == 0:
        raise ValueError("validation set is empty")
    m_high = float(D_prev.predict(x_val).mean())
    m_low = float(D_prev.predict(G_prev.predict(z)).mean())
    return L.MarginPair(m_high, m_low)


class Trainer:
    """Shared state for one pipeline run: data, encoder, RNG and callbacks."""

    def __init__(self, cfg: ExperimentConfig, dataset: Dataset | None = None,
                 on_epoch: Callable[[HistoryRow], None] | None = None):
        self.cfg = cfg
        self.dataset = dataset or make_dataset(cfg.dataset, cfg.n_samples, cfg.subseed("data"))
        self.g_spec, self.d_spec, self.e_spec = build_specs(cfg)
        self.init_rng = np.random.default_rng(cfg.subseed("init"))
        self.rng = np.random.default_rng(cfg.subseed("train"))
        self.encoder: Net | None = None
        self.on_epoch = on_epoch
        self.aware = cfg.encoder_mode == "sample-aware"
        self.vae_history: list[tuple[int, float]] = []

    # -- latent sources ---------------------------------------------------

    def prior(self, n: int) -> np.ndarray:
        return self.rng.normal(size=(n, self.cfg.latent_dim))

    def latents(self, x: np.ndarray) -> np.ndarray:
        """z ~ E(x) in sample-aware mode, otherwise the standard normal prior."""
        if not self.aware or self.encoder is None:
            return self.prior(len(x))
        with ad.no_grad():
            enc = encoder_forward(self.encoder.params, self.encoder.spec, x)
            return sample_latent(enc, self.prior(len(x))).value

    def _opt(self, lr: float) -> AdamState:
        return AdamState(lr=lr, beta1=self.cfg.beta1, beta2=self.cfg.beta2)

    def _batches(self):
        train = self.dataset.train
        bs = min(self.cfg.batch_size, len(train))
        perm = self.rng.permutation(len(train))
        for b in range(len(train) // bs):
            yield train[perm[b * bs:(b + 1) * bs]]

    # -- stage zero -------------------------------------------------------

    def vae_mse(self, E: Net, G: Net, x: np.ndarray) -> float:
        """Reconstruction MSE through the posterior mean."""
        with ad.no_grad():
            mu = encoder_forward(E.params, E.spec, x).mu
            return float(np.mean((G.predict(mu.value) - x) ** 2))

    def run_stage_zero(self) -> StageState:
        cfg = self.cfg
        E = Net(init_mlp(self.e_spec, self.init_rng), self.e_spec)
        G = Net(init_mlp(self.g_spec, self.init_rng), self.g_spec)
        D = Net(init_mlp(self.d_spec, self.init_rng), self.d_spec)
        opt_e, opt_g = self._opt(cfg.lr_e), self._opt(cfg.lr_e)
        self.vae_history = [(0, self.vae_mse(E, G, self.dataset.val))]
        for epoch in range(1, cfg.vae_epochs + 1):
            for x in self._batches():
                en, gn = E.params.nodes(), G.params.nodes()
                enc = encoder_forward(en, E.spec, x)
                z = sample_latent(enc, self.prior(len(x)))
                loss = vae_loss(x, mlp_forward(gn, G.spec, z), enc, cfg.vae_kl_weight)
                if not np.isfinite(loss.item()):
                    raise TrainingError(1, epoch, 0, "vae", loss.item())
                grads = param_grads(loss, {**{f"E.{k}": v for k, v in en.items()},
                                           **{f"G.{k}": v for k, v in gn.items()}})
                adam_step(opt_e, E.params, {k: grads[f"E.{k}"] for k in en})
                adam_step(opt_g, G.params, {k: grads[f"G.{k}"] for k in gn})
            self.vae_history.append((epoch, self.vae_mse(E, G, self.dataset.val)))
            log.debug("vae epoch %d mse %.5f", epoch, self.vae_history[-1][1])
        E.params.freeze()
        self.encoder = E

        opt_d = self._opt(cfg.lr_d)
        for epoch in range(1, cfg.d1_warm_epochs + 1):
            for x in self._batches():
                fake = G.predict(self.latents(x))
                dn = D.params.nodes()
                scores = D.forward(np.concatenate([x, fake]), dn)
                b = len(x)
                loss = L.baseline_loss("wgan", scores[:b], scores[b:], "disc")
                gp = L.gradient_penalty(lambda h: D.forward(h, dn), x, fake, self.rng.uniform(size=b))
                total = loss + cfg.weights.lambda_gp * gp
                if not np.isfinite(total.item()):
                    raise TrainingError(1, epoch, 0, "warm-start", total.item())
                adam_step(opt_d, D.params, param_grads(total, dn))
        return StageState(index=1, G=G, D=D)

    # -- shared epoch loop -----------------------------------------------

    def _eval_z(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        val = self.dataset.val
        z = self.latents(val)
        z_prev = z if self.aware else self.prior(n)
        return z, z_prev

    def _evaluate(self, state: StageState, z: np.ndarray, z_prev: np.ndarray) -> tuple[float, float, float]:
        val = self.dataset.val
        d_real = float(state.D.predict(val).mean())
        d_fi = float(state.D.predict(state.G.predict(z)).mean())
        prev = state.G_prev if state.G_prev is not None else None
        d_fp = float(state.D.predict(prev.predict(z_prev)).mean()) if prev is not None else float("nan")
        return d_real, d_fi, d_fp

    def _run_epochs(self, state: StageState, schedule: TrainSchedule,
                    critic_step: Callable, gen_step: Callable) -> StageState:
        z_eval, z_prev_eval = self._eval_z(len(self.dataset.val))
        while state.epoch < schedule.max_stage_epochs:
            state.epoch += 1
            t0 = time.perf_counter()
            sums = {"disc": 0.0, "gen": 0.0, "gp": 0.0, "clamp": 0.0}
            n_c = n_g = 0
            for x in self._batches():
                comps, ctx = critic_step(x)
                for name, value in comps.items():
                    if not np.isfinite(value):
                        raise TrainingError(state.index, state.epoch, state.critic_steps, name, value)
                    sums[name] += value
                state.critic_steps += 1
                state.pending_critic += 1
                n_c += 1
                if state.pending_critic == schedule.critic_steps:
                    g_loss = gen_step(ctx)
                    if not np.isfinite(g_loss):
                        raise TrainingError(state.index, state.epoch, state.critic_steps, "gen", g_loss)
                    sums["gen"] += g_loss
                    state.gen_steps += 1
                    state.pending_critic = 0
                    n_g += 1
            d_real, d_fi, d_fp = self._evaluate(state, z_eval, z_prev_eval)
            wall = (time.perf_counter() - t0) * 1e3 if self.cfg.record_wall_time else 0.0
            row = HistoryRow(
                state.index, state.epoch, d_real, d_fi, d_fp,
                sums["disc"] / max(n_c, 1), sums["gen"] / max(n_g, 1),
                sums["gp"] / max(n_c, 1), sums["clamp"] / max(n_c, 1), wall,
            )
            state.history.append(row)
            if self.on_epoch is not None:
                self.on_epoch(row)
            log.info("stage %d epoch %d: D(x)=%.4f D(G_i)=%.4f D(G_prev)=%.4f",
                     state.index, state.epoch, d_real, d_fi, d_fp)
            stop, reason = stage_should_terminate(state.history, schedule)
            if stop:
                state.stop_reason = reason
                break
        if not state.stop_reason:
            state.stop_reason = "max-epochs"
        return state

    # -- stage 1 adversarial phase ---------------------------------------

    def train_stage_one(self, state: StageState, schedule: TrainSchedule) -> StageState:
        """Adversarial phase for the first generator under the configured base loss."""
        cfg = self.cfg
        kind = "margin" if cfg.loss == "rankgan" else cfg.loss
        state.G_prev = state.G.clone(frozen=True)
        opt_d, opt_g = self._opt(cfg.lr_d), self._opt(cfg.lr_g)
        use_gp = kind in ("margin", "wgan")
        D, G = state.D, state.G

        def critic_step(x):
            z = self.latents(x)
            fake = G.predict(z)
            dn = D.params.nodes()
            b = len(x)
            scores = D.forward(np.concatenate([x, fake]), dn)
            if kind == "margin":
                base = L.margin_loss(scores[b:], scores[:b], cfg.weights.epsilon_margin)
            else:
                base = L.baseline_loss(kind, scores[:b], scores[b:], "disc")
            total, gp_v = base, 0.0
            if use_gp:
                gp = L.gradient_penalty(lambda h: D.forward(h, dn), x, fake, self.rng.uniform(size=b))
                total = base + cfg.weights.lambda_gp * gp
                gp_v = gp.item()
            adam_step(opt_d, D.params, param_grads(total, dn))
            return {"disc": total.item(), "gp": gp_v, "clamp": 0.0}, (x, z)

        def gen_step(ctx):
            x, z = ctx
            gn = G.params.nodes()
            d_fake = D.forward(G.forward(z, gn))
            if kind == "margin":
                loss = L.gen_rank_loss(D.predict(x), d_fake, paired=self.aware)
            else:
                loss = L.baseline_loss(kind, None, d_fake, "gen")
            adam_step(opt_g, G.params, param_grads(loss, gn))
            return loss.item()

        return self._run_epochs(state, schedule, critic_step, gen_step)

    # -- ranking stages ---------------------------------------------------

    def next_stage(self, prev: StageState) -> StageState:
        """Clone the previous pair, freeze the originals and fix the margins."""
        G_prev = prev.G.clone(frozen=True)
        D_prev = prev.D.clone(frozen=True)
        state = StageState(index=prev.index + 1, G=prev.G.clone(), D=prev.D.clone(),
                           G_prev=G_prev, D_prev=D_prev)
        val = self.dataset.val
        state.margins = compute_stage_margins(D_prev, G_prev, val, self.latents(val))
        state.margin_computations += 1
        state.frozen_digests = {"G_prev": G_prev.params.digest(), "D_prev": D_prev.params.digest()}
        return state

    def train_stage(self, state: StageState, schedule: TrainSchedule) -> StageState:
        if state.index < 2 or state.G_prev is None or state.margins is None:
            raise ValueError("train_stage needs a stage >= 2 prepared by next_stage()")
        cfg = self.cfg
        opt_d, opt_g = self._opt(cfg.lr_d), self._opt(cfg.lr_g)
        D, G, G_prev = state.D, state.G, state.G_prev
        margins, weights, aware = state.margins, cfg.weights, self.aware

        def critic_step(x):
            b = len(x)
            z = self.latents(x)
            z_prev = z if aware else self.prior(b)
            fake_i, fake_prev = G.predict(z), G_prev.predict(z_prev)
            dn = D.params.nodes()
            scores = D.forward(np.concatenate([x, fake_i, fake_prev]), dn)
            d_real, d_fi, d_fp = scores[:b], scores[b:2 * b], scores[2 * b:]
            rank = L.disc_rank_loss(d_fi, d_fp, paired=aware)
            gp = L.gradient_penalty(lambda h: D.forward(h, dn), x, fake_i, self.rng.uniform(size=b))
            clamp = L.clamp_loss(d_real, d_fp, margins)
            total = L.disc_total_loss(rank, gp, clamp, weights)
            adam_step(opt_d, D.params, param_grads(total, dn))
            return {"disc": total.item(), "gp": gp.item(), "clamp": clamp.item()}, (x, z)

        def gen_step(ctx):
            x, z = ctx
            gn = G.params.nodes()
            d_fake = D.forward(G.forward(z, gn))
            loss = L.gen_rank_loss(D.predict(x), d_fake, paired=aware)
            adam_step(opt_g, G.params, param_grads(loss, gn))
            return loss.item()

        state = self._run_epochs(state, schedule, critic_step, gen_step)
        after = {"G_prev": state.G_prev.params.digest(), "D_prev": state.D_prev.params.digest()}
        if after != state.frozen_digests:
            raise RuntimeError(f"frozen models changed during stage {state.index}")
        return state


@dataclass
class PipelineResult:
    states: list[StageState]
    encoder: Net
    dataset: Dataset
    vae_history: list[tuple[int, float]]


def run_pipeline(cfg: ExperimentConfig, on_epoch=None, on_stage=None,
                 dataset: Dataset | None = None) -> PipelineResult:
    """Stage zero (VAE + critic warm start), optional stage-1 adversarial
    phase, then ranking stages 2..nstages.

    ``on_stage(state, encoder)`` is called after each finished stage, e.g. to
    write checkpoints.
    """
    trainer = Trainer(cfg, dataset=dataset, on_epoch=on_epoch)
    state = trainer.run_stage_zero()
    if cfg.stage1_adversarial:
        state = trainer.train_stage_one(state, cfg.schedule)
    states = [state]
    if on_stage is not None:
        on_stage(state, trainer.encoder)
    for _ in range(2, cfg.nstages + 1):
        state = trainer.train_stage(trainer.next_stage(state), cfg.schedule)
        states.append(state)
        if on_stage is not None:
            on_stage(state, trainer.encoder)
    return PipelineResult(states, trainer.encoder, trainer.dataset, trainer.vae_history)
