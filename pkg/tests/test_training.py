import warnings

import numpy as np
import pytest

from pifnet.errors import ConfigError
from pifnet.model import Network
from pifnet.tensor import Rng
from pifnet.training import (RunReport, TrainConfig, balanced_accuracy, early_stopping_check, parameter_balance,
                             run_experiment, summarize, train_one)

from oracles import tiny_data, tiny_specs


def test_balanced_accuracy_examples():
    labels = [1] * 5 + [0] * 5
    preds = [0.9, 0.8, 0.7, 0.6, 0.1] + [0.2, 0.3, 0.1, 0.6, 0.9]
    assert balanced_accuracy(preds, labels) == pytest.approx(0.7)
    assert balanced_accuracy([1, 0, 1], [1, 0, 1]) == 1.0
    assert balanced_accuracy([0.9] * 10, [1] * 9 + [0]) == 0.5
    assert balanced_accuracy([0.5, 0.49], [1, 0]) == 1.0


def test_balanced_accuracy_errors():
    with pytest.raises(ConfigError):
        balanced_accuracy([0.1, 0.2], [1, 1])
    with pytest.raises(ConfigError):
        balanced_accuracy([0.1], [1, 0])


def test_early_stopping_examples():
    h = [0.60, 0.70, 0.65, 0.66, 0.69]
    assert not early_stopping_check(h[:4], 3)
    assert early_stopping_check(h, 3)
    rising = list(np.linspace(0.5, 0.9, 30))
    assert not any(early_stopping_check(rising[:i], 3) for i in range(1, 31))
    flat = [0.5] * 10
    assert [early_stopping_check(flat[:i], 4) for i in range(1, 7)] == [False] * 4 + [True, True]


def test_train_config_validation():
    for bad in (dict(patience=0), dict(lr=-1.0), dict(metric="loss"), dict(augment="spin")):
        with pytest.raises(ConfigError):
            TrainConfig(**bad).validate()


def test_zero_learning_rate_keeps_parameters():
    base, _ = tiny_specs()
    data = tiny_data()
    cfg = TrainConfig(lr=0.0, max_epochs=3, patience=5)
    result = train_one(base, data, cfg, seed=4)
    fresh = Network(base, Rng(4).child(0)).get_state()
    assert all(np.array_equal(a, b) for a, b in zip(result.best_state, fresh))
    assert len({e.val_bacc for e in result.epochs}) == 1
    assert result.stop_epoch == 3


def test_same_seed_same_result_and_single_test_read():
    _, pif = tiny_specs()
    data = tiny_data()
    cfg = TrainConfig(max_epochs=4, patience=2, augment="translate")
    a = train_one(pif, data, cfg, seed=1)
    b = train_one(pif, data, cfg, seed=1)
    assert a.epochs == b.epochs and a.test_bacc == b.test_bacc and a.stop_epoch == b.stop_epoch
    assert data.test_reads == 2
    assert 1 <= a.best_epoch <= a.stop_epoch <= 4


def test_flip_refused_for_pif():
    _, pif = tiny_specs()
    with pytest.raises(ConfigError, match="only translation"):
        train_one(pif, tiny_data(), TrainConfig(augment="flip", max_epochs=1), seed=0)


def test_run_experiment_report():
    base, pif = tiny_specs()
    data = tiny_data()
    cfg = TrainConfig(max_epochs=3, patience=2, repeats=2)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        report = run_experiment(base, pif, data, cfg)
    assert list(report.results) == ["tiny-base", "tiny-pif"]
    assert [r.seed for r in report.results["tiny-pif"]] == [0, 1]
    for rs, s in zip(report.results.values(), report.summaries()):
        acc = [r.test_bacc for r in rs]
        assert s.bacc_mean == pytest.approx(np.mean(acc), abs=1e-12)
        assert s.bacc_std == pytest.approx(np.std(acc), abs=1e-12)
    lines = report.table().splitlines()
    assert lines[0].split()[:2] == ["Model", "Params"] and len(lines) == 4
    assert len(report.log_lines()) == 5


def test_single_repeat_has_zero_std():
    base, _ = tiny_specs()
    result = train_one(base, tiny_data(), TrainConfig(max_epochs=2, patience=1), seed=0)
    s = summarize([result])
    assert s.bacc_std == 0.0 and s.stop_std == 0.0
    table = RunReport({"tiny-base": [result]}).table()
    assert "(0.00)" in table


def test_imbalanced_pair_warns():
    base, pif = tiny_specs()
    assert abs(parameter_balance(base, pif)) > 0.1
    with pytest.warns(UserWarning, match="limit 10%"):
        run_experiment(base, pif, tiny_data(), TrainConfig(max_epochs=1, repeats=1))
