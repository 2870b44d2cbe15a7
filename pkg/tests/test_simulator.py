import copy
import warnings

import numpy as np
import pytest

from fairpatrol import simulator
from fairpatrol.allocator import FALLBACK, allocate_all, minority_mask
from fairpatrol.graph import build_graph
from fairpatrol.metrics import metric_bundle
from fairpatrol.predictor.model import CrimeModel, StgnnConfig
from fairpatrol.predictor.train import TrainConfig, TrainingError
from fairpatrol.simulator import (
    DetectionModel,
    SimConfig,
    SimData,
    detection_probability,
    load_history,
    observe,
    run_cycle,
    run_simulation,
)
from fairpatrol.tensor import SynthConfig, build_features, chrono_split, synth_generate

T_SMALL = 480  # test range of 72 steps, enough for one retraining window


def small_data(seed=3, zero=False):
    zones, counts = synth_generate(SynthConfig(nx=3, ny=2, T=T_SMALL), seed)
    if zero:
        counts.values[:] = 0
    feats = build_features(counts, zones)
    mask = minority_mask([z.pct_minority for z in zones])
    return SimData(feats, counts.values.copy(), chrono_split(T_SMALL), mask, build_graph(zones).a_combined)


def small_model(n=6):
    return CrimeModel(StgnnConfig(hidden=4, embed=4, history=24), n, seed=0).eval()


SIM = SimConfig(cycles=2, retrain_epochs=2)
TRAIN = TrainConfig(epochs=1, batch=16, seed=11)


def history_dicts(history):
    return [r.to_dict() for r in history]


def test_detection_probability_examples():
    assert detection_probability(0.0) == pytest.approx(0.30)
    assert detection_probability(60.0) == pytest.approx(0.90)
    assert detection_probability(30.0) == pytest.approx(0.60)
    assert detection_probability(90.0) == pytest.approx(0.90)


def test_detection_probability_strictly_monotone_until_clip():
    d = detection_probability(np.linspace(0, 60, 121))
    assert np.all(np.diff(d) > 0)


def test_detection_model_validation():
    with pytest.raises(ValueError):
        DetectionModel(p_base=0.95, p_max=0.9)


def test_observe_examples():
    assert observe(np.zeros((2, 3)), np.full((3, 2), 0.5)).sum() == 0
    assert observe([[10.0]], [[0.30]])[0, 0] == pytest.approx(3.0)
    with pytest.raises(ValueError):
        observe(np.zeros((2, 3)), np.zeros((2, 3)))


def test_two_group_hand_calculation_gives_minority_gap():
    # Minority: two zones at twice the rate, patrol on one of them.
    # Majority: one active zone at the same rate, patrol on it, one idle zone.
    mask = np.array([True, True, False, False])
    y = np.array([[2.0], [2.0], [2.0], [0.0]])
    P = np.array([[30.0, 0.0, 30.0, 0.0]])
    obs = observe(y, detection_probability(P))
    m = metric_bundle(P, np.ones((1, 4)), y, obs, mask)
    assert m.det_min == pytest.approx((0.6 * 2 + 0.3 * 2) / 4)
    assert m.det_maj == pytest.approx(0.6)
    assert m.det_min < m.det_maj


def test_zero_risk_cascade():
    mask = np.array([True, True, False, False])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        series = allocate_all(np.zeros((5, 4)), mask)
    assert set(series.status) == {FALLBACK}
    np.testing.assert_array_equal(series.P, np.full((5, 4), 15.0))
    y = np.zeros((4, 5))
    obs = observe(y, detection_probability(series.P))
    m = metric_bundle(series.P, np.zeros((5, 4)), y, obs, mask)
    assert m.det_degenerate and m.coverage == 1.0


def test_zero_crime_city_flags_degenerate_detection():
    data = small_data(zero=True)
    _, record, stream, art = run_cycle(small_model(), data, SIM, TRAIN, 1, data.counts.astype(float))
    assert record.metrics.det_degenerate
    assert not art["y_obs"].any() and not stream.any()


def test_cycle_outputs_respect_bounds_and_band():
    data = small_data()
    _, record, _, art = run_cycle(small_model(), data, SIM, TRAIN, 1, data.counts.astype(float))
    test = data.splits.test
    y = data.counts[:, test.start : test.stop].astype(float)
    pos = y > 0
    ratio = art["y_obs"][pos] / y[pos]
    assert ratio.min() >= 0.30 - 1e-12 and ratio.max() <= 0.90 + 1e-12
    assert record.metrics.det_cell_min == ratio.min() and record.metrics.det_cell_max == ratio.max()
    P = art["P"]
    assert P.min() >= -1e-6 and np.all(P.sum(axis=1) <= 60 + 1e-6)
    m = record.metrics
    assert m.optimal_fraction >= 0.95
    assert 0.95 - 1e-6 <= m.dir_mean <= 1.05 + 1e-6
    assert len(record.retrain_losses) == SIM.retrain_epochs


def test_cycle_writes_observed_counts_and_patrol_channel():
    data = small_data()
    before = data.features.values[:, :, -1].copy()
    _, _, stream, art = run_cycle(small_model(), data, SIM, TRAIN, 1, data.counts.astype(float))
    test = data.splits.test
    np.testing.assert_array_equal(stream[:, test.start : test.stop], art["y_obs"])
    np.testing.assert_array_equal(stream[:, : test.start], data.counts[:, : test.start])
    after = data.features.values[:, :, -1]
    np.testing.assert_array_equal(after[:, : test.start], before[:, : test.start])
    np.testing.assert_allclose(after[:, test.start], art["P"].mean(axis=0) / 60)


def test_single_cycle_simulation_equals_run_cycle():
    data_a, data_b = small_data(), small_data()
    one = SimConfig(cycles=1, retrain_epochs=2)
    hist = run_simulation(small_model(), data_a, one, TRAIN)
    _, record, _, _ = run_cycle(small_model(), data_b, one, TRAIN, 1, data_b.counts.astype(float))
    assert history_dicts(hist) == [record.to_dict()]


def test_same_seed_gives_identical_histories():
    a = run_simulation(small_model(), small_data(), SIM, TRAIN)
    b = run_simulation(small_model(), small_data(), SIM, TRAIN)
    assert history_dicts(a) == history_dicts(b)
    assert [r.cycle for r in a] == [1, 2]
    for r in a:
        assert r.retrain_loss_final < 2 * a[0].retrain_loss_final


def test_resume_matches_uninterrupted_run(tmp_path):
    three = SimConfig(cycles=3, retrain_epochs=2)
    straight = run_simulation(small_model(), small_data(), three, TRAIN)

    run_simulation(small_model(), small_data(), SIM, TRAIN, out_dir=tmp_path)
    assert sorted(p.name for p in tmp_path.glob("sim_state_*.npz")) == ["sim_state_2.npz"]
    resumed = run_simulation(small_model(), small_data(), three, TRAIN, out_dir=tmp_path)
    assert history_dicts(resumed) == history_dicts(straight)
    assert history_dicts(load_history(tmp_path / "history.json")) == history_dicts(straight)


def test_retraining_failure_names_cycle(monkeypatch):
    def boom(*args, **kwargs):
        raise TrainingError("non-finite loss")

    monkeypatch.setattr(simulator, "fit", boom)
    data = small_data()
    with pytest.raises(TrainingError, match="cycle 3"):
        run_cycle(small_model(), data, SIM, TRAIN, 3, data.counts.astype(float))


def test_sim_config_validation():
    with pytest.raises(ValueError):
        SimConfig(cycles=0)
    cfg = SimConfig(detection={"p_base": 0.2, "p_max": 0.8, "budget": 60.0})
    assert isinstance(cfg.detection, DetectionModel)
    assert copy.deepcopy(cfg) == cfg
