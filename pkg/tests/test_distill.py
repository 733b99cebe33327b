import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import central_difference, scaled_error
from privset import distill as Dl
from privset import nn
from privset.fixtures import blob_datasets
from privset.privacy import Accountant, BudgetExhausted


@pytest.fixture(scope="module")
def blobs():
    return blob_datasets(120, 60, 3, 6, seed=0)


def _cfg(**kw):
    base = dict(spc=2, runs=1, outer_iters=1, inner_iters=1, batches=1, batch_size=32,
                arch="mlp", hidden=(8,), private=False, epsilon=None)
    base.update(kw)
    return Dl.DistillConfig(**base)


@pytest.mark.parametrize("spc,expected", [(1, (1, 1)), (10, (10, 50)), (20, (20, 25)),
                                          (50, (50, 10)), (5, (1, 1)), (15, (10, 50)),
                                          (30, (20, 25)), (200, (50, 10))])
def test_schedule(spc, expected):
    assert Dl.default_iterations(spc) == expected
    cfg = Dl.DistillConfig(spc=spc)
    assert (cfg.outer_iters, cfg.inner_iters) == expected


def test_default_hyperparameters():
    cfg = Dl.DistillConfig()
    assert (cfg.batch_size, cfg.clip, cfg.batches, cfg.delta) == (256, 0.1, 10, 1e-5)
    assert (cfg.lr_theta, cfg.lr_syn, cfg.momentum_theta, cfg.momentum_syn) == (0.01, 0.1, 0.5, 0.5)
    assert cfg.total_steps == 1000 * 10 * 10


def test_sigma_and_epsilon_are_exclusive():
    with pytest.raises(ValueError):
        Dl.DistillConfig(sigma=1.0, epsilon=10.0)
    with pytest.raises(ValueError):
        Dl.DistillConfig(sigma=None, epsilon=None)
    Dl.DistillConfig(sigma=1.0, epsilon=None)


def test_zero_row_counts_one_with_zero_gradient():
    a = np.zeros((2, 3))
    a[1] = [1.0, 2.0, 3.0]
    b = np.ones((2, 3))
    assert Dl.layer_cosine_distance(a, b) == pytest.approx(1 + (1 - 6 / np.sqrt(14 * 3)))
    _, g = Dl.matching_loss_and_grad([a], [b])
    assert not g[0][0].any()


def test_bias_is_one_row():
    a, b = np.array([1.0, 0.0]), np.array([0.0, 1.0])
    assert Dl.layer_cosine_distance(a, b) == pytest.approx(1.0)


def test_shape_mismatch():
    with pytest.raises(ValueError):
        Dl.matching_loss([np.ones((2, 2))], [np.ones((2, 3))])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_matching_loss_gradient(seed):
    rng = np.random.default_rng(seed)
    a = [rng.standard_normal((3, 2, 2)), rng.standard_normal(4)]
    b = [rng.standard_normal((3, 2, 2)), rng.standard_normal(4)]
    _, g = Dl.matching_loss_and_grad(a, b)
    numeric = [central_difference(lambda: Dl.matching_loss(a, b), t) for t in a]
    assert scaled_error(g, numeric) <= 1e-6


@pytest.mark.parametrize("arch", ["mlp", "convnet"])
def test_input_gradient_of_matching_loss(arch):
    if arch == "mlp":
        spec = nn.NetworkSpec("mlp", (5,), 3, hidden=(6,))
    else:
        spec = nn.NetworkSpec("convnet", (1, 4, 4), 3, width=2, depth=1)
    rng = np.random.default_rng(1)
    params = nn.init_params(spec, 0, np.float64)
    x = rng.standard_normal((6,) + spec.input_shape)
    y = np.repeat(np.arange(3), 2)
    g_real = [rng.standard_normal(p.shape) for p in params]
    loss, gx = Dl.matching_input_grad(params, spec, x, y, g_real)

    def f():
        return Dl.matching_loss(nn.loss_and_grad(params, spec, x, y)[1], g_real)

    assert loss == pytest.approx(f())
    assert scaled_error([gx], [central_difference(f, x)]) <= 1e-5


def test_init_synthetic():
    syn = Dl.init_synthetic(3, 4, (1, 2, 2), 0)
    assert syn.features.shape == (12, 1, 2, 2)
    assert syn.labels.tolist() == [0, 0, 0, 1, 1, 1, 2, 2, 2, 3, 3, 3]


def test_single_step_accounting(blobs):
    tr, _ = blobs
    cfg = _cfg(private=True, sigma=1.0, inner_iters=0)
    syn, state, report = Dl.psg_train(tr, cfg)
    assert state.steps == 1 == report["steps"] == report["expected_steps"]
    assert len(syn) == 6 and syn.role == "synthetic"


def test_step_count_is_runs_outer_batches(blobs):
    tr, _ = blobs
    cfg = _cfg(runs=3, outer_iters=2, batches=4, inner_iters=2, private=True, epsilon=50.0)
    _, state, report = Dl.psg_train(tr, cfg)
    assert state.steps == 24
    assert report["epsilon"] <= 50.0
    assert len(report["loss_curve"]) == 6 == len(report["epsilon_curve"])


def test_determinism(blobs):
    tr, _ = blobs
    cfg = _cfg(runs=2, outer_iters=2, batches=2, private=True, sigma=0.8, seed=11)
    a, sa, ra = Dl.psg_train(tr, cfg)
    b, sb, rb = Dl.psg_train(tr, cfg)
    assert a.features.tobytes() == b.features.tobytes()
    ra.pop("timing")
    rb.pop("timing")
    assert ra == rb
    c, _, _ = Dl.psg_train(tr, _cfg(runs=2, outer_iters=2, batches=2, private=True,
                                    sigma=0.8, seed=12))
    assert c.features.tobytes() != a.features.tobytes()


def test_non_private_loss_decreases_with_frozen_network(blobs):
    tr, _ = blobs
    cfg = _cfg(spc=3, outer_iters=10, inner_iters=0, batches=5, batch_size=64, hidden=(16,))
    curve = Dl.psg_train(tr, cfg)[2]["loss_curve"]
    assert curve[-1] < curve[0]


def test_budget_exhausted(blobs):
    tr, _ = blobs
    cfg = _cfg(private=True, epsilon=1.0)
    acct = Accountant(0.5, 0.5)
    acct.record(1000)
    with pytest.raises(BudgetExhausted):
        Dl.psg_train(tr, cfg, accountant=acct)


class _Exploding:
    """Synthetic-set stand-in whose features become NaN after one update."""

    def __init__(self, syn):
        self.x, self.labels = syn.features.copy(), syn.labels

    def features(self):
        return self.x

    def step(self, grad):
        self.x = np.full_like(self.x, np.nan)

    def checksum(self):
        return 0


def test_non_finite_abort(blobs):
    tr, _ = blobs
    cfg = _cfg(batches=2)
    spec = cfg.network_spec(tr.data_shape, tr.num_classes)
    syn = Dl.init_synthetic(cfg.spc, 3, tr.data_shape, 0)
    with pytest.raises(Dl.NonFiniteLoss):
        Dl._psg_loop(tr, cfg, spec, _Exploding(syn), Accountant(0.2, 0.0), 0.0, 0.2)


class _Drifting:
    """Synthetic-set stand-in whose checksum changes on every call."""

    def __init__(self, syn):
        self.x, self.labels, self.calls = syn.features.copy(), syn.labels, 0

    def features(self):
        return self.x

    def step(self, grad):
        pass

    def checksum(self):
        self.calls += 1
        return self.calls


def test_isolation_check(blobs):
    tr, _ = blobs
    cfg = _cfg()
    spec = cfg.network_spec(tr.data_shape, tr.num_classes)
    syn = Dl.init_synthetic(cfg.spc, 3, tr.data_shape, 0)
    with pytest.raises(Dl.IsolationError):
        Dl._psg_loop(tr, cfg, spec, _Drifting(syn), Accountant(0.2, 0.0), 0.0, 0.2)


def test_report_contents(blobs):
    tr, _ = blobs
    _, _, report = Dl.psg_train(tr, _cfg(private=True, sigma=2.0))
    for key in ("config", "network", "sigma", "steps", "epsilon", "delta", "best_order",
                "loss_curve", "seeds", "accountant", "sampling_rate"):
        assert key in report
    assert report["prior"] is False
    assert report["config"]["clip"] == 0.1
    assert report["sampling_rate"] == pytest.approx(32 / 120)
