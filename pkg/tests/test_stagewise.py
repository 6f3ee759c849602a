import numpy as np
import pytest

from rankgan.config import TrainSchedule, from_dict
from rankgan.data import Dataset, split
from rankgan.nn import AdamState, FrozenParamsError, MlpSpec, ModelParams, adam_step, init_mlp
from rankgan.stagewise import (
    HistoryRow,
    Net,
    Trainer,
    TrainingError,
    compute_stage_margins,
    run_pipeline,
    stage_should_terminate,
)


def rows(gaps):
    return [HistoryRow(2, e + 1, g, 0.0, 0.0, 0, 0, 0, 0) for e, g in enumerate(gaps)]


# -- termination -----------------------------------------------------------

def test_terminate_stable():
    assert stage_should_terminate(rows([1.0] * 15), TrainSchedule()) == (True, "stable")


def test_terminate_max_epochs_with_oscillation():
    sched = TrainSchedule(max_stage_epochs=20)
    assert stage_should_terminate(rows([(-1) ** e for e in range(20)]), sched) == (True, "max-epochs")


def test_continue_short_history():
    assert stage_should_terminate(rows([1.0, 2.0, 3.0]), TrainSchedule()) == (False, "continue")


def test_oscillating_gap_continues_before_cap():
    assert stage_should_terminate(rows([(-1) ** e for e in range(16)]), TrainSchedule())[0] is False


def test_explicit_threshold():
    gaps = [1.0 + 0.01 * (-1) ** e for e in range(15)]
    assert stage_should_terminate(rows(gaps), TrainSchedule(gap_threshold=0.05))[1] == "stable"
    assert stage_should_terminate(rows(gaps), TrainSchedule(gap_threshold=0.005))[1] == "continue"


# -- margins ---------------------------------------------------------------

def _net(W, b):
    W = np.asarray(W, dtype=float)
    spec = MlpSpec((W.shape[0], W.shape[1]))
    return Net(ModelParams([("W0", W), ("b0", np.asarray(b, dtype=float))]), spec)


def test_margins_zero_critic():
    D = _net(np.zeros((2, 1)), [0.0])
    G = _net(np.zeros((2, 2)), [0.0, 0.0])
    m = compute_stage_margins(D, G, np.ones((4, 2)), np.ones((4, 2)))
    assert (m.m_high, m.m_low) == (0.0, 0.0)


def test_margins_first_coordinate():
    D = _net([[1.0], [0.0]], [0.0])
    G = _net(np.zeros((2, 2)), [2.0, 0.0])
    m = compute_stage_margins(D, G, np.array([[1.0, 0.0], [3.0, 0.0]]), np.zeros((2, 2)))
    assert (m.m_high, m.m_low) == (2.0, 2.0)


def test_margins_empty_validation():
    D = _net(np.zeros((2, 1)), [0.0])
    with pytest.raises(ValueError):
        compute_stage_margins(D, D, np.zeros((0, 2)), np.zeros((0, 2)))


# -- pipeline pieces on small locked-seed runs ------------------------------

SMALL = {"dataset": "gauss2d", "n_samples": 400, "vae_epochs": 2, "schedule": {"max_stage_epochs": 2}}


def test_vae_epochs_zero_keeps_encoder_init():
    cfg = from_dict({**SMALL, "vae_epochs": 0, "nstages": 2})
    res = run_pipeline(cfg)
    t = Trainer(cfg)
    E0 = init_mlp(t.e_spec, np.random.default_rng(cfg.subseed("init")))
    assert res.encoder.params.digest() == E0.digest()
    assert len(res.states) == 2 and len(res.vae_history) == 1


def test_vae_reduces_reconstruction_error_on_ring():
    cfg = from_dict({"dataset": "ring8", "n_samples": 1000, "vae_epochs": 10, "lr_e": 1e-3})
    t = Trainer(cfg)
    t.run_stage_zero()
    assert t.vae_history[-1][1] < t.vae_history[0][1]


def test_encoder_frozen_after_stage_zero():
    t = Trainer(from_dict(SMALL))
    t.run_stage_zero()
    assert t.encoder.params.frozen
    with pytest.raises(FrozenParamsError):
        adam_step(AdamState(lr=0.1), t.encoder.params, {k: np.zeros_like(v) for k, v in t.encoder.params.items()})


def test_nstages_one():
    res = run_pipeline(from_dict({**SMALL, "nstages": 1, "stage1_adversarial": False}))
    assert len(res.states) == 1 and res.states[0].history == []


def test_max_stage_epochs_zero_leaves_state():
    cfg = from_dict({**SMALL, "nstages": 2})
    t = Trainer(cfg)
    st = t.next_stage(t.run_stage_zero())
    g, d = st.G.params.digest(), st.D.params.digest()
    out = t.train_stage(st, TrainSchedule(max_stage_epochs=0))
    assert out.history == [] and out.epoch == 0 and out.critic_steps == 0
    assert (out.G.params.digest(), out.D.params.digest()) == (g, d)


def test_train_stage_needs_prepared_state():
    t = Trainer(from_dict(SMALL))
    with pytest.raises(ValueError):
        t.train_stage(t.run_stage_zero(), TrainSchedule())


def test_next_stage_clones_and_freezes():
    t = Trainer(from_dict({**SMALL, "nstages": 2}))
    s1 = t.run_stage_zero()
    s2 = t.next_stage(s1)
    assert s2.index == 2 and s2.margin_computations == 1
    assert s2.G_prev.params.frozen and s2.D_prev.params.frozen
    assert not s2.G.params.frozen and not s2.D.params.frozen
    assert s2.G.params.digest() == s1.G.params.digest() and s2.G.params is not s1.G.params


def test_non_finite_data_aborts_with_location():
    cfg = from_dict(SMALL)
    samples = np.full((400, 2), np.nan)
    ds = Dataset("gauss2d", samples, split(400, 0))
    with pytest.raises(TrainingError) as info:
        run_pipeline(cfg, dataset=ds)
    assert (info.value.stage, info.value.epoch, info.value.component) == (1, 1, "vae")


@pytest.fixture(scope="module")
def gauss2d_run():
    cfg = from_dict({"dataset": "gauss2d", "nstages": 2, "seed": 0, "lr_e": 1e-3, "lr_d": 1e-3, "lr_g": 1e-5,
                     "schedule": {"max_stage_epochs": 30, "gap_threshold": 1e-9}})
    return cfg, run_pipeline(cfg)


def test_stage_one_margins_ordered(gauss2d_run):
    _, res = gauss2d_run
    m = res.states[1].margins
    assert m.m_high > m.m_low


def test_gauss2d_ordering_and_clamping(gauss2d_run):
    _, res = gauss2d_run
    st = res.states[1]
    assert len(st.history) == 30 and [r.epoch for r in st.history] == list(range(1, 31))
    last = st.history[-1]
    assert last.mean_d_real >= last.mean_d_fake_i - 0.1
    assert last.mean_d_fake_i >= last.mean_d_fake_prev - 0.1
    for r in st.history[10:]:
        assert abs(r.mean_d_real - st.margins.m_high) < 0.5
        assert abs(r.mean_d_fake_prev - st.margins.m_low) < 0.5


def test_critic_generator_ratio(gauss2d_run):
    cfg, res = gauss2d_run
    for st in res.states:
        assert st.critic_steps == cfg.schedule.critic_steps * st.gen_steps + st.pending_critic
        assert 0 <= st.pending_critic < cfg.schedule.critic_steps


def test_frozen_models_untouched(gauss2d_run):
    _, res = gauss2d_run
    st = res.states[1]
    assert st.G_prev.params.digest() == st.frozen_digests["G_prev"]
    assert st.D_prev.params.digest() == st.frozen_digests["D_prev"]
    assert st.G_prev.params.digest() == res.states[0].G.params.digest()


def test_rerun_identical_history():
    cfg = from_dict({**SMALL, "nstages": 2})
    a, b = run_pipeline(cfg), run_pipeline(cfg)
    assert [r.as_tuple() for s in a.states for r in s.history] == [r.as_tuple() for s in b.states for r in s.history]
    assert a.states[-1].G.params.digest() == b.states[-1].G.params.digest()
