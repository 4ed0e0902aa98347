import os

import numpy as np
import pandas as pd
import pytest
from sklearn.metrics import accuracy_score
from sklearn.metrics import matthews_corrcoef as sklearn_mcc

from src.config.config_definitions import ModelConfig, PreprocessConfig, RunConfig
from src.config.enums import Split, Task, Variant
from src.errors import ConfigError, DataValidationError
from src.evaluation.analysis import (
    activity_distribution, collection_breakdown, fit_power_law_exponent, power_law_ks_distance,
)
from src.evaluation.experiment import REPORT_COLUMNS, Cell, MetricReport, report_frame
from src.evaluation.importance import importance_table, permute_feature, window_days
from src.evaluation.matrix import matrix_cells, run_matrix, summarize
from src.evaluation.metrics import (
    binary_cross_entropy, confusion_counts, matthews_corrcoef, metrics_classification, metrics_regression,
)
from src.evaluation.report import markdown_table, read_reports, render_report
from src.evaluation.split import split_lengths, split_series
from src.graph.schema import fit_schema
from src.graph.snapshot import NodeUniverse, node_universe
from src.ingest.market import load_market
from src.model.baselines import MajorityBaseline, get_collection_baseline, window_steps
from src.model.comet import CometModel
from src.model.datasets import (
    CollectionSample, TokenScaler, build_collection_samples, build_token_samples, collection_batches, token_batch,
    trend_label,
)
from src.preprocessor.aggregation import SERIES_COLUMNS, CollectionDailySeries
from src.preprocessor.pipeline import clean_market
from src.synthetic.generator import sample_power_law

from tests.conftest import DAY0, records, ts, write_market_dir
from tests.test_model import CONFIG, STATIC_DIM, toy_inputs


def price_series(collection: str, prices, first_day: int = DAY0) -> CollectionDailySeries:
    days = pd.Index(np.arange(first_day, first_day + len(prices)), name="day")
    frame = pd.DataFrame(0, index=days, columns=list(SERIES_COLUMNS))
    frame["median_price_eth"] = np.asarray(prices, dtype=np.float64)
    frame["interpolated"] = False
    frame["sale_count"] = 1
    frame["sale_volume_eth"] = frame["median_price_eth"]
    frame["eth_usd"] = 2000.0
    return CollectionDailySeries(collection, frame)


# metrics

def test_classification_metrics_match_sklearn():
    rng = np.random.default_rng(0)
    for _ in range(20):
        probabilities = rng.random(30)
        labels = rng.integers(0, 2, 30)
        acc, mcc = metrics_classification(probabilities, labels)
        predicted = (probabilities > 0.5).astype(int)
        assert acc == pytest.approx(accuracy_score(labels, predicted))
        assert mcc == pytest.approx(sklearn_mcc(labels, predicted))


def test_threshold_is_strict():
    assert confusion_counts([0.5, 0.51], [1, 1]) == (1, 0, 0, 1)


def test_mcc_is_zero_when_undefined():
    assert matthews_corrcoef(5, 0, 0, 0) == 0.0
    acc, mcc = metrics_classification([0.9, 0.8, 0.7], [1, 1, 1])
    assert acc == 1.0 and mcc == 0.0


def test_regression_metrics_and_bce():
    mae, mse = metrics_regression([1.0, 2.0, 4.0], [1.0, 3.0, 2.0])
    assert mae == pytest.approx(1.0)
    assert mse == pytest.approx(5.0 / 3.0)
    assert binary_cross_entropy([0.5, 0.5], [0, 1]) == pytest.approx(np.log(2.0))
    with pytest.raises(DataValidationError, match="empty"):
        metrics_regression([], [])
    with pytest.raises(DataValidationError):
        metrics_classification([0.1, 0.2], [1])


# splits and samples

def test_split_lengths_of_a_hundred_days():
    assert split_lengths(100, 0.7, 0.15) == (70, 15, 15)


def test_split_ranges_are_chronological_and_short_series_excluded():
    series = {"c1": price_series("c1", np.arange(1, 101)), "c2": price_series("c2", np.ones(20))}
    plan = split_series(series, history=14, step=1, min_extra_days=10)
    assert plan.excluded == ("c2",)
    ranges = plan.ranges["c1"]
    assert ranges.train == (DAY0, DAY0 + 69)
    assert ranges.validation == (DAY0 + 70, DAY0 + 84)
    assert ranges.test == (DAY0 + 85, DAY0 + 99)
    assert plan.training_window_end() == DAY0 + 69

    with pytest.raises(ConfigError):
        split_series(series, ratios=(0.8, 0.3, -0.1))
    with pytest.raises(DataValidationError):
        split_series({"c2": series["c2"]}).training_window_end()


@pytest.mark.parametrize("step", [1, 3, 5])
def test_collection_samples_never_cross_a_split_boundary(step):
    rng = np.random.default_rng(step)
    series = {
        "c1": price_series("c1", rng.uniform(1, 2, 100)),
        "c2": price_series("c2", rng.uniform(1, 2, 80), DAY0 + 20),
    }
    plan = split_series(series, history=14, step=step)
    universe = NodeUniverse(("w",), ("c1", "c2"))
    samples = build_collection_samples(series, plan, universe)
    assert all(samples[split] for split in Split)
    for split, items in samples.items():
        for s in items:
            first, last = plan.ranges[s.collection].range_of(split)
            assert first <= s.day and s.day + step <= last
            assert s.day - 14 >= series[s.collection].first_day
            prices = series[s.collection]
            assert s.label == trend_label(prices.price(s.day), prices.price(s.day + step))
            assert s.position == universe.collection_position(s.collection)


def test_random_split_plans_never_leak_across_boundaries():
    rng = np.random.default_rng(2024)
    for _ in range(200):
        ratios = tuple(float(r) for r in rng.dirichlet([2.0, 2.0, 2.0]))
        history = int(rng.integers(1, 21))
        step = int(rng.integers(1, 11))
        series = {
            f"c{i}": price_series(f"c{i}", rng.uniform(1, 2, int(rng.integers(20, 121))), DAY0 + int(rng.integers(0, 30)))
            for i in range(3)
        }
        plan = split_series(series, ratios=ratios, history=history, step=step, min_extra_days=2)
        samples = build_collection_samples(series, plan, NodeUniverse((), tuple(sorted(series))))

        for collection, ranges in plan.ranges.items():
            s = series[collection]
            assert ranges.train[0] == s.first_day and ranges.test[1] == s.last_day
            assert ranges.validation[0] == ranges.train[1] + 1
            assert ranges.test[0] == ranges.validation[1] + 1
        for split, items in samples.items():
            for sample in items:
                first, last = plan.ranges[sample.collection].range_of(split)
                assert first <= sample.day and sample.day + step <= last, (ratios, history, step)
                assert sample.day - history >= series[sample.collection].first_day
        seen = [(s.collection, s.day) for items in samples.values() for s in items]
        assert len(seen) == len(set(seen))


def test_collection_sample_counts_and_labels():
    series = {"c1": price_series("c1", np.arange(1, 101))}
    plan = split_series(series, history=14, step=1)
    samples = build_collection_samples(series, plan, NodeUniverse((), ("c1",)))
    assert [len(samples[split]) for split in Split] == [55, 14, 14]
    assert all(s.label == 1 for items in samples.values() for s in items)
    assert trend_label(2.0, 2.0) == 0


def test_collection_batches_group_by_day():
    samples = [CollectionSample("c", p, day, 0, Split.TRAIN) for day in (5, 3, 4) for p in (1, 0)]
    batches = collection_batches(samples, 2)
    assert [[s.day for s in b] for b in batches] == [[3, 3], [4, 4], [5, 5]]
    shuffled = collection_batches(samples, 2, np.random.default_rng(0))
    assert sorted(s.day for b in shuffled for s in b) == [3, 3, 4, 4, 5, 5]


@pytest.fixture
def token_market(tmp_path, trading_lines):
    directory = write_market_dir(str(tmp_path / "data"), trading_lines, {"c1": 10, "c2": 6}, DAY0, 12)
    config = PreprocessConfig(embedding_dim=4)
    market = load_market(directory, config)
    clean = clean_market(market, config)
    plan = split_series(clean.series, history=1, step=1, min_extra_days=0)
    universe = node_universe(market.records, clean.series, (market.first_day, market.last_day))
    return market, clean, plan, universe


def test_token_samples_read_only_the_past(token_market):
    market, clean, plan, universe = token_market
    samples = build_token_samples(market, clean, plan, universe)
    c1 = {split: [s for s in items if s.collection == "c1"] for split, items in samples.items()}
    assert [len(c1[split]) for split in Split] == [12, 0, 3]

    sample = next(s for s in c1[Split.TRAIN] if s.token == "0" and s.day == DAY0 + 4)
    assert sample.reference_day == DAY0 + 3
    assert sample.events.shape == (3, 3)
    assert sample.global_features.tolist() == [0.0, 1.0, 3.0, 0.0, 0.0]
    assert sample.target == pytest.approx(np.log1p(sample.price_eth))
    for items in samples.values():
        for s in items:
            assert s.reference_day == s.day - 1
            assert s.events.shape[0] <= s.day - market.first_day


def test_token_scaler_and_padding(token_market):
    market, clean, plan, universe = token_market
    samples = build_token_samples(market, clean, plan, universe)
    train = samples[Split.TRAIN]
    scaler = TokenScaler.fit(train)
    restored = TokenScaler.from_dict(scaler.to_dict())
    np.testing.assert_array_equal(restored.events.mean, scaler.events.mean)

    batch = token_batch(train[:4], scaler)
    lengths = [len(s.events) for s in train[:4]]
    assert batch.events.shape == (4, max(lengths + [1]), 3)
    assert batch.valid.sum(axis=1).tolist() == lengths
    assert not batch.events[~batch.valid].any()


# baselines

def test_majority_and_window_baselines():
    rising = price_series("c1", np.arange(1, 101, dtype=float))
    plan = split_series({"c1": rising}, history=14, step=1)
    samples = build_collection_samples({"c1": rising}, plan, NodeUniverse((), ("c1",)))

    majority = MajorityBaseline().fit(samples)
    assert majority.predict_proba(samples[Split.TEST]).tolist() == [1.0] * 14

    # single-class training labels fall back to the constant class
    logreg = get_collection_baseline(Variant.LOGREG, {"c1": rising}, ModelConfig(), 0).fit(samples)
    assert logreg.predict_proba(samples[Split.TEST]).tolist() == [1.0] * 14

    steps = window_steps({"c1": rising}, samples[Split.TEST][:1], 14)
    assert steps.shape == (1, 15, 3)
    assert steps[0, -1, 0] == 0.0

    with pytest.raises(ValueError):
        get_collection_baseline(Variant.FULL, {"c1": rising}, ModelConfig(), 0)
    with pytest.raises(DataValidationError):
        MajorityBaseline().fit({})


def test_random_forest_learns_an_alternating_trend():
    prices = np.tile([1.0, 2.0], 100)
    series = {"c1": price_series("c1", prices)}
    plan = split_series(series, history=4, step=1)
    samples = build_collection_samples(series, plan, NodeUniverse((), ("c1",)))
    forest = get_collection_baseline(Variant.RANDOM_FOREST, series, ModelConfig(history=4), 0).fit(samples)
    test = samples[Split.TEST]
    acc, _ = metrics_classification(forest.predict_proba(test), [s.label for s in test])
    assert acc == 1.0


# importance

def test_permute_feature_only_touches_the_chosen_column():
    inputs = toy_inputs()
    rng = np.random.default_rng(0)
    permuted = permute_feature(inputs, [2, 3], "collection_dynamic", [0], rng)
    for day in (2, 3):
        before, after = inputs.snapshots[day].collection_dynamic, permuted.snapshots[day].collection_dynamic
        np.testing.assert_array_equal(before[:, 1:], after[:, 1:])
    before = np.concatenate([inputs.snapshots[d].collection_dynamic[:, 0] for d in (2, 3)])
    after = np.concatenate([permuted.snapshots[d].collection_dynamic[:, 0] for d in (2, 3)])
    np.testing.assert_array_equal(np.sort(before), np.sort(after))
    np.testing.assert_array_equal(permuted.snapshots[0].collection_dynamic, inputs.snapshots[0].collection_dynamic)

    static = permute_feature(inputs, [2], "collection_static", [0, 1], rng)
    for day in inputs.snapshots:
        np.testing.assert_array_equal(static.snapshots[day].collection_static[:, 2:], inputs.snapshots[day].collection_static[:, 2:])
    assert window_days([CollectionSample("c1", 0, 5, 1, Split.TEST)], 2) == [3, 4, 5]


def test_importance_table(market_schema):
    inputs = toy_inputs()
    model = CometModel(inputs.universe, STATIC_DIM, CONFIG, seed=0)
    samples = [CollectionSample(c, p, day, day % 2, Split.TEST) for day in (3, 4, 5) for p, c in enumerate(("c1", "c2"))]
    features = ["collection.daily_price", "wallet.asset_value", "collection.visual_embedding"]
    table = importance_table(model, inputs, samples, market_schema, features, seed=0, repeats=2)
    assert table["feature"].tolist() == features
    assert table["score"].between(-1.0, 1.0).all()
    with pytest.raises(ConfigError, match="unknown feature"):
        importance_table(model, inputs, samples, market_schema, ["wallet.nothing"], seed=0)


@pytest.fixture
def market_schema():
    inputs = toy_inputs()
    return fit_schema(inputs.snapshots, inputs.snapshots, embedding_dim=2)


# matrix, report and analysis

def report_rows():
    reports = []
    for seed, acc in ((0, 0.6), (1, 0.8)):
        reports.append(MetricReport(Cell(Task.COLLECTION, 1, Variant.FULL, seed), acc=acc, mcc=0.1 * seed))
    reports.append(MetricReport(Cell(Task.COLLECTION, 1, Variant.FULL, 2), status="failed", error="boom"))
    reports.append(MetricReport(Cell(Task.COLLECTION, 1, Variant.MAJORITY, 0), acc=0.5, mcc=0.0))
    return report_frame(reports)


def test_summarize_excludes_failed_cells():
    summary = summarize(report_rows()).set_index("variant")
    assert list(report_rows().columns) == REPORT_COLUMNS
    assert summary.at["full", "n_seeds"] == 2
    assert summary.at["full", "n_failed"] == 1
    assert summary.at["full", "acc_mean"] == pytest.approx(0.7)
    assert summary.at["full", "acc_std"] == pytest.approx(0.1)
    assert np.isnan(summary.at["full", "mae_mean"])


def test_matrix_cells_and_failure_isolation():
    config = RunConfig()
    settings = config.run.model_copy(update={"steps": [1, 3], "variants": [Variant.FULL, Variant.MAJORITY], "seeds": [0]})
    cells = matrix_cells(settings)
    assert [c.cell_id for c in cells] == [
        "collection-N1-full-s0", "collection-N1-majority-s0", "collection-N3-full-s0", "collection-N3-majority-s0",
    ]
    frame = run_matrix(lambda: None, config, cells[:2])
    assert frame["status"].tolist() == ["failed", "failed"]
    assert frame["error"].str.startswith("AttributeError").all()


def test_render_report(tmp_path):
    report = report_rows()
    importance = pd.DataFrame({"feature": ["a", "b"], "score": [0.1, 0.0], "std": [0.01, 0.02]})
    breakdown = pd.DataFrame({"collection": ["c1"], "transactions": [10], "full_acc": [0.5]})
    written = render_report(report, str(tmp_path), importance, breakdown, notes=["synthetic run"])
    for name in ("summary.csv", "reference.csv", "ablation_acc.png", "ablation_mcc.png",
                 "importance.csv", "importance.png", "breakdown.csv", "report.md"):
        assert name in written
        assert os.path.exists(tmp_path / name)
    assert "ablation_mae.png" not in written
    text = (tmp_path / "report.md").read_text()
    assert "- synthetic run" in text
    assert "## Failed cells" in text and "boom" in text
    assert "## Per-collection results" in text

    report.to_csv(tmp_path / "report.csv", index=False)
    again = read_reports({"eval": str(tmp_path / "report.csv"), "missing": str(tmp_path / "none.csv")})
    assert len(again) == len(report)
    assert read_reports({}).empty


def test_markdown_table_blanks_nan():
    table = markdown_table(pd.DataFrame({"a": [1.0, np.nan], "b": ["x", "y"]}), digits=2)
    assert table.splitlines()[2] == "| 1.00 | x |"
    assert table.splitlines()[3] == "|  | y |"


def test_power_law_fit_recovers_the_exponent():
    counts = sample_power_law(np.random.default_rng(0), 20000, 2.5, 12)
    alpha = fit_power_law_exponent(counts, 12)
    assert alpha == pytest.approx(2.5, abs=0.1)
    assert power_law_ks_distance(counts, alpha, 12) < 0.05
    assert power_law_ks_distance(counts, 4.0, 12) > 0.1
    with pytest.raises(DataValidationError):
        fit_power_law_exponent([1, 2], xmin=5)


def test_activity_distribution_and_breakdown():
    events = records(
        f"m1,{ts(0)},mint,,a,c1,1,",
        f"s1,{ts(1)},sale,a,b,c1,1,1.0",
        f"s2,{ts(2)},sale,b,c,c1,1,1.0",
        f"m2,{ts(2)},mint,,a,c2,1,",
    )
    activity = activity_distribution(events)
    assert activity.wallet_counts.to_dict() == {"a": 3, "b": 2, "c": 1}
    assert activity.token_counts.to_dict() == {"c1/1": 3, "c2/1": 1}
    frame = activity.to_frame()
    assert set(frame["kind"]) == {"wallet", "token"}
    assert frame["frequency"].sum() == 5

    samples = [
        CollectionSample("c1", 0, DAY0, 1, Split.TEST),
        CollectionSample("c1", 0, DAY0 + 1, 0, Split.TEST),
        CollectionSample("c2", 1, DAY0, 1, Split.TEST),
    ]
    breakdown = collection_breakdown(samples, {"full": [0.9, 0.1, 0.2]}, events)
    assert breakdown["collection"].tolist() == ["c2", "c1"]
    assert breakdown["transactions"].tolist() == [1, 3]
    assert breakdown["full_acc"].tolist() == [0.0, 1.0]
