import numpy as np
import pytest

from vadmil.errors import InsufficientBags, NonFiniteLoss
from vadmil.evaluator import evaluate
from vadmil.features import Bag, Label, load_bags
from vadmil.objective import ObjectiveConfig
from vadmil.scorer import ScoringNetwork, encode_checkpoint, init_network, zero_network
from vadmil.trainer import (
    CHECKPOINT_NAME,
    LOG_NAME,
    OPTIMIZER_NAME,
    TrainConfig,
    sample_batch,
    train,
    train_bags,
)

NO_REG = ObjectiveConfig(1.0, 0.0, 0.0)


def _bags(n_abnormal, n_normal, dim=3):
    rng = np.random.default_rng(0)
    return ([Bag(f"a{i}", Label.ABNORMAL, rng.normal(size=(32, dim)), 64) for i in range(n_abnormal)],
            [Bag(f"n{i}", Label.NORMAL, rng.normal(size=(32, dim)), 64) for i in range(n_normal)])


class TestSampleBatch:
    def test_exhausts_equal_sized_pools(self):
        ab, no = _bags(30, 30)
        pairs = sample_batch(ab, no, 30, np.random.default_rng(0))
        assert sorted(a.video_id for a, _ in pairs) == sorted(b.video_id for b in ab)
        assert sorted(n.video_id for _, n in pairs) == sorted(b.video_id for b in no)
        assert all(a.label == Label.ABNORMAL and n.label == Label.NORMAL for a, n in pairs)

    def test_seeded(self):
        ab, no = _bags(10, 12)
        ids = [[(a.video_id, n.video_id) for a, n in sample_batch(ab, no, 5, np.random.default_rng(3))]
               for _ in range(2)]
        assert ids[0] == ids[1]

    def test_insufficient(self):
        ab, no = _bags(30, 40)
        with pytest.raises(InsufficientBags):
            sample_batch(ab, no, 31, np.random.default_rng(0))


def test_zero_iterations_returns_initial_network(tiny_data):
    cfg = TrainConfig(batch_pairs=4, iterations=0, seed=2)
    net, log = train(tiny_data["train"], cfg)
    assert len(log) == 0
    assert encode_checkpoint(net) == encode_checkpoint(init_network(8, 0.6, 2))


def test_zero_network_loss_is_exactly_one():
    ab, no = _bags(5, 5)
    net = zero_network(3)
    cfg = TrainConfig(batch_pairs=5, iterations=4, objective=NO_REG)
    net, log = train_bags(ab + no, cfg, network=net)
    assert [r.total for r in log.records] == [1.0] * 4
    assert all(not p.any() for p in net.parameters().values())


def test_inactive_hinge_leaves_parameters_unchanged():
    # abnormal bags carry one strongly activating segment; normal bags are all zero
    ab = []
    for i in range(4):
        seg = np.zeros((32, 2))
        seg[i, 0] = 10.0
        ab.append(Bag(f"a{i}", Label.ABNORMAL, seg, 64))
    no = [Bag(f"n{i}", Label.NORMAL, np.zeros((32, 2)), 64) for i in range(4)]
    net = ScoringNetwork(
        W1=np.array([[1.0, 0.0], [0.0, 1.0]]), b1=np.zeros(2),
        W2=np.array([[1.0, 0.0]]).repeat(2, axis=0), b2=np.zeros(2),
        W3=np.array([[1.0, 1.0]]), b3=np.array([-5.0]), dropout_rate=0.0,
    )
    before = {k: v.copy() for k, v in net.parameters().items()}
    cfg = TrainConfig(batch_pairs=4, iterations=3, objective=ObjectiveConfig(0.5, 0.0, 0.0), dropout_rate=0.0)
    net, log = train_bags(ab + no, cfg, network=net)
    assert all(r.hinge == 0.0 and r.total == 0.0 for r in log.records)
    for k, v in net.parameters().items():
        assert np.array_equal(v, before[k])


def test_log_is_complete(tiny_data):
    cfg = TrainConfig(batch_pairs=6, iterations=25, seed=1)
    _, log = train(tiny_data["train"], cfg)
    assert [r.iteration for r in log.records] == list(range(25))
    for r in log.records:
        assert np.isfinite(r.total)
        assert abs(r.total - (r.hinge + r.sparsity + r.smoothness)) < 1e-9


def test_loss_trend_on_separable_data(tiny_data):
    cfg = TrainConfig(batch_pairs=10, iterations=200, seed=0)
    net, log = train(tiny_data["train"], cfg)
    totals = log.totals
    assert np.median(totals[-20:]) < np.median(totals[:20])
    roc, _ = evaluate(net, tiny_data["test"])
    assert roc.auc > 0.7


def test_reproducible(tiny_data, tmp_path):
    cfg = TrainConfig(batch_pairs=6, iterations=15, seed=4, optimizer="adam", lr=0.01)
    train(tiny_data["train"], cfg, out_dir=tmp_path / "a")
    train(tiny_data["train"], cfg, out_dir=tmp_path / "b")
    for name in (CHECKPOINT_NAME, OPTIMIZER_NAME):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def losses(d):
        return [line.rsplit(",", 1)[0] for line in (d / LOG_NAME).read_text().splitlines()]
    assert losses(tmp_path / "a") == losses(tmp_path / "b")


def test_outputs_and_checkpoint_cadence(tiny_data, tmp_path):
    cfg = TrainConfig(batch_pairs=4, iterations=7, checkpoint_every=3)
    train(tiny_data["train"], cfg, out_dir=tmp_path)
    lines = (tmp_path / LOG_NAME).read_text().splitlines()
    assert lines[0] == "iteration,total,hinge,sparsity,smoothness,ms"
    assert len(lines) == 8
    assert (tmp_path / CHECKPOINT_NAME).exists() and (tmp_path / OPTIMIZER_NAME).exists()


def test_resume_continues_where_it_stopped(tiny_data, tmp_path):
    cfg10 = TrainConfig(batch_pairs=4, iterations=10, seed=3)
    cfg20 = TrainConfig(batch_pairs=4, iterations=20, seed=3)
    train(tiny_data["train"], cfg10, out_dir=tmp_path / "r")
    resumed, log = train(tiny_data["train"], cfg10, out_dir=tmp_path / "r", resume=True)
    assert [r.iteration for r in log.records] == list(range(10, 20))
    straight, _ = train(tiny_data["train"], cfg20)
    # the checkpoint stores float32, so the resumed run differs only by that rounding
    for k, v in straight.parameters().items():
        np.testing.assert_allclose(resumed.parameters()[k], v, atol=1e-5)


def test_insufficient_bags_for_batch(tiny_data):
    with pytest.raises(InsufficientBags):
        train(tiny_data["train"], TrainConfig(batch_pairs=13, iterations=1))


def test_non_finite_loss_reports_iteration():
    ab, no = _bags(2, 2)
    net = init_network(3, seed=0)
    net.b3[0] = np.nan
    with pytest.raises(NonFiniteLoss) as err:
        train_bags(ab + no, TrainConfig(batch_pairs=2, iterations=3), network=net)
    assert err.value.iteration == 0


def test_stream_modes_change_input_width(tiny_data):
    for stream, dim in (("rgb", 4), ("flow", 4), ("fused", 8)):
        net, _ = train(tiny_data["train"], TrainConfig(batch_pairs=2, iterations=1, stream_mode=stream))
        assert net.dim == dim
    assert load_bags(tiny_data["train"], "rgb")[0].dim == 4
