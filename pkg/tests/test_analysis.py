"""Metrics, per-layer contribution summaries, pair distances, report writers."""

from __future__ import annotations

import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ksat.analysis import (
    DistanceReport,
    LayerContribution,
    Metrics,
    PairDistance,
    accuracy_score,
    all_pairs,
    auc_roc,
    binary_auc,
    compute_metrics,
    confusion_matrix,
    contribution_report,
    distance_report,
    final_layer_outputs,
    score_posts,
    within_class_kcls_distance,
    write_contributions_csv,
    write_distances_csv,
    write_metrics_json,
)
from ksat.corpus import Dataset, Post, default_synthetic_spec, generate_synthetic
from ksat.errors import DataFormatError
from ksat.knowledge import LAYER_ORDER, N_OUTCOMES, Outcome
from ksat.model import clone_model, forward, normalize_probs, predict


@pytest.fixture(scope="module")
def corpus() -> Dataset:
    return generate_synthetic(default_synthetic_spec(n_posts=12, seed=9))


@pytest.fixture()
def model(make_model):
    return make_model(dimension=8, seed=1, value_scale=0.25, epsilon=1.0)


class TestAccuracy:
    def test_exact_fractions(self):
        assert accuracy_score([0, 1, 2, 3], [0, 1, 2, 3]) == 1.0
        assert accuracy_score([0, 1, 2, 3], [1, 2, 3, 0]) == 0.0
        assert accuracy_score([0, 1, 2, 3], [0, 1, 2, 0]) == 0.75

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            accuracy_score([0, 1], [0])

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            accuracy_score([], [])


class TestConfusionMatrix:
    def test_counts_with_gold_rows(self):
        out = confusion_matrix([0, 0, 1, 3], [0, 2, 1, 3])
        expected = np.zeros((4, 4), dtype=np.int64)
        expected[0, 0] = 1
        expected[0, 2] = 1
        expected[1, 1] = 1
        expected[3, 3] = 1
        np.testing.assert_array_equal(out, expected)
        assert out.sum() == 4

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            confusion_matrix([4], [0])
        with pytest.raises(ValueError):
            confusion_matrix([0], [-1])


class TestBinaryAuc:
    def test_perfect_separation(self):
        scores = np.array([0.9, 0.8, 0.2, 0.1])
        positives = np.array([True, True, False, False])
        assert binary_auc(scores, positives) == 1.0

    def test_all_tied_scores_give_half(self):
        scores = np.array([0.5, 0.5, 0.5, 0.5])
        positives = np.array([True, False, True, False])
        assert binary_auc(scores, positives) == 0.5

    def test_single_inversion_fixture(self):
        # positives 0.9 and 0.4 versus negatives 0.6 and 0.1: three of the
        # four positive/negative pairs are ordered correctly
        scores = np.array([0.9, 0.4, 0.6, 0.1])
        positives = np.array([True, True, False, False])
        assert binary_auc(scores, positives) == 0.75

    def test_tie_across_classes_counts_half(self):
        scores = np.array([0.7, 0.7])
        positives = np.array([True, False])
        assert binary_auc(scores, positives) == 0.5

    def test_needs_both_classes(self):
        with pytest.raises(ValueError):
            binary_auc(np.array([0.1, 0.2]), np.array([True, True]))
        with pytest.raises(ValueError):
            binary_auc(np.array([0.1, 0.2]), np.array([False, False]))

    @given(
        st.lists(st.integers(min_value=-500, max_value=500), min_size=4, max_size=12),
        st.data(),
    )
    def test_invariant_under_order_preserving_transforms(self, raw, data):
        # integer-valued scores keep the cube map exactly order-preserving
        # (general floats can underflow into fresh ties when cubed)
        n = len(raw)
        flags = data.draw(
            st.lists(st.booleans(), min_size=n, max_size=n).filter(
                lambda f: any(f) and not all(f)
            )
        )
        scores = np.array(raw, dtype=np.float64)
        base = binary_auc(scores, np.array(flags))
        cubed = binary_auc(scores**3, np.array(flags))
        assert cubed == pytest.approx(base, abs=1e-12)


class TestMacroAuc:
    def test_macro_average_over_present_classes(self):
        # class 0: positive 0.9 vs negatives 0.2 and 0.5 -> one inversion, 0.5
        # class 2: positive 0.9 vs negatives 0.1 and 0.2 -> clean, 1.0
        # classes 1 and 3 have no gold examples and are skipped
        gold = [0, 0, 2]
        scores = np.array(
            [
                [0.9, 0.0, 0.1, 0.0],
                [0.2, 0.0, 0.2, 0.0],
                [0.5, 0.0, 0.9, 0.0],
            ]
        )
        # class 0 positives are rows 0 and 1: 0.9 beats 0.5, 0.2 loses -> 0.5
        assert auc_roc(gold, scores) == pytest.approx((0.5 + 1.0) / 2.0)

    def test_all_labels_identical_rejected(self):
        scores = np.full((3, N_OUTCOMES), 0.25)
        with pytest.raises(DataFormatError):
            auc_roc([1, 1, 1], scores)

    def test_shape_validation(self):
        with pytest.raises(ValueError):
            auc_roc([0, 1], np.zeros((2, 3)))
        with pytest.raises(ValueError):
            auc_roc([0, 1, 2], np.zeros((2, N_OUTCOMES)))


class TestScorePosts:
    def test_rows_are_normalized_and_match_predict(self, model, corpus):
        gold, predicted, scores = score_posts(model, corpus)
        assert len(gold) == len(corpus.posts)
        assert scores.shape == (len(corpus.posts), N_OUTCOMES)
        np.testing.assert_allclose(scores.sum(axis=1), 1.0, rtol=1e-12)
        for post, g, p in zip(corpus.posts, gold, predicted):
            assert LAYER_ORDER[g] is post.gold
            assert LAYER_ORDER[p] is predict(model, post)

    def test_empty_dataset_rejected(self, model):
        with pytest.raises(ValueError):
            score_posts(model, Dataset(posts=[]))

    def test_unlabeled_post_rejected(self, model):
        ds = Dataset(
            posts=[Post(id="u", sentences=["x."], sentence_presence=[(0, 0, 0)])]
        )
        with pytest.raises(DataFormatError):
            score_posts(model, ds)

    def test_compute_metrics_consistency(self, model, corpus):
        metrics = compute_metrics(model, corpus)
        assert isinstance(metrics, Metrics)
        assert 0.0 <= metrics.accuracy <= 1.0
        assert 0.0 <= metrics.auc <= 1.0
        assert metrics.n_posts == len(corpus.posts)
        assert metrics.confusion.sum() == metrics.n_posts
        assert np.trace(metrics.confusion) == round(
            metrics.accuracy * metrics.n_posts
        )


class TestContributionReport:
    def test_neutral_gate_reports_half_alpha(self, model, corpus):
        rows = contribution_report(model, corpus)
        assert [r.layer for r in rows] == [0, 1, 2, 3]
        for row in rows:
            assert row.alpha == 0.5

    def test_zero_readout_zeroes_both_logit_means(self, make_model, corpus):
        model = make_model(dimension=8, seed=1, value_scale=0.25, epsilon=1.0)
        for layer in model.layers:
            layer.w_out[:] = 0.0
        rows = contribution_report(model, corpus)
        for row in rows:
            assert row.knowledge_logit_mean == 0.0
            assert row.data_logit_mean == 0.0

    def test_logit_means_scale_linearly_with_the_readout(self, model, corpus):
        doubled = clone_model(model)
        for layer in doubled.layers:
            layer.w_out *= 2.0
        base = contribution_report(model, corpus)
        scaled = contribution_report(doubled, corpus)
        for a, b in zip(base, scaled):
            assert b.knowledge_logit_mean == 2.0 * a.knowledge_logit_mean
            assert b.data_logit_mean == 2.0 * a.data_logit_mean
            assert b.kg_bias_mean == a.kg_bias_mean

    def test_zero_value_projection_zeroes_the_bias_mean(self, make_model, corpus):
        model = make_model(dimension=8, seed=1, value_scale=0.0)
        rows = contribution_report(model, corpus)
        for row in rows:
            assert row.kg_bias_mean == 0.0

    def test_bias_mean_is_never_positive(self, model, corpus):
        for row in contribution_report(model, corpus):
            assert row.kg_bias_mean <= 0.0

    def test_empty_dataset_rejected(self, model):
        with pytest.raises(ValueError):
            contribution_report(model, Dataset(posts=[]))


class TestDistanceReport:
    def test_identical_posts_sit_at_zero_distance(self, model):
        post = Post(
            id="p",
            sentences=["wish to be dead."],
            sentence_presence=[(1, 0, 0)],
        )
        twin = Post(
            id="q",
            sentences=["wish to be dead."],
            sentence_presence=[(1, 0, 0)],
        )
        report = distance_report(model, [(post, twin)], epsilon_report=0.5)
        assert report.threshold == 0.5
        (pair,) = report.pairs
        assert pair.d_cls == 0.0
        assert pair.d_kcls == 0.0
        assert pair.close is True
        assert report.close_fraction == 1.0

    def test_distances_are_symmetric_in_pair_order(self, model, corpus):
        a, b = corpus.posts[0], corpus.posts[1]
        fwd = distance_report(model, [(a, b)], epsilon_report=1.0).pairs[0]
        rev = distance_report(model, [(b, a)], epsilon_report=1.0).pairs[0]
        assert fwd.d_cls == rev.d_cls
        assert fwd.d_kcls == rev.d_kcls

    def test_default_threshold_is_the_lower_quartile(self, model, corpus):
        report = distance_report(model, all_pairs(corpus))
        observed = [p.d_kcls for p in report.pairs]
        assert report.threshold == float(np.percentile(observed, 25.0))
        for pair in report.pairs:
            assert pair.close == (pair.d_kcls < report.threshold)

    def test_threshold_comparison_is_strict(self, model):
        post = Post(id="p", sentences=["a gun nearby."], sentence_presence=[(0, 0, 1)])
        twin = Post(id="q", sentences=["a gun nearby."], sentence_presence=[(0, 0, 1)])
        report = distance_report(model, [(post, twin)], epsilon_report=0.0)
        assert report.pairs[0].d_kcls == 0.0
        assert report.pairs[0].close is False

    def test_matches_direct_output_recomputation(self, model, corpus):
        a, b = corpus.posts[2], corpus.posts[5]
        cls_a, kcls_a = final_layer_outputs(model, a)
        cls_b, kcls_b = final_layer_outputs(model, b)
        pair = distance_report(model, [(a, b)], epsilon_report=1.0).pairs[0]
        assert pair.d_cls == float(np.linalg.norm(cls_a - cls_b))
        assert pair.d_kcls == float(np.linalg.norm(kcls_a - kcls_b))

    def test_empty_pair_list_rejected(self, model):
        with pytest.raises(ValueError):
            distance_report(model, [])

    def test_all_pairs_enumerates_each_unordered_pair_once(self, corpus):
        pairs = all_pairs(corpus)
        n = len(corpus.posts)
        assert len(pairs) == n * (n - 1) // 2
        seen = {(a.id, b.id) for a, b in pairs}
        assert len(seen) == len(pairs)
        for a, b in pairs:
            assert a.id < b.id or corpus.posts.index(a) < corpus.posts.index(b)

    def test_all_pairs_needs_two_posts(self):
        with pytest.raises(ValueError):
            all_pairs(Dataset(posts=[Post(id="only", sentences=["x."], sentence_presence=[(0, 0, 0)])]))


class TestWithinClassDistance:
    def test_single_same_class_pair(self, model):
        posts = [
            Post(id="a", sentences=["wish to be dead."], gold=Outcome.IDEATION_1,
                 sentence_presence=[(1, 0, 0)]),
            Post(id="b", sentences=["ending my life."], gold=Outcome.IDEATION_1,
                 sentence_presence=[(0, 1, 0)]),
            Post(id="c", sentences=["rain fell late."], gold=Outcome.INDICATION_OR_NONE,
                 sentence_presence=[(0, 0, 0)]),
        ]
        ds = Dataset(posts=posts)
        value = within_class_kcls_distance(model, ds)
        _, ka = final_layer_outputs(model, posts[0])
        _, kb = final_layer_outputs(model, posts[1])
        assert value == pytest.approx(float(np.linalg.norm(ka - kb)), rel=1e-12)

    def test_no_same_class_pair_rejected(self, model):
        posts = [
            Post(id="a", sentences=["x."], gold=Outcome.IDEATION_1,
                 sentence_presence=[(0, 0, 0)]),
            Post(id="b", sentences=["y."], gold=Outcome.IDEATION_2,
                 sentence_presence=[(0, 0, 0)]),
        ]
        with pytest.raises(ValueError):
            within_class_kcls_distance(model, Dataset(posts=posts))

    def test_unlabeled_post_rejected(self, model):
        ds = Dataset(posts=[Post(id="u", sentences=["x."], sentence_presence=[(0, 0, 0)])])
        with pytest.raises(DataFormatError):
            within_class_kcls_distance(model, ds)


class TestReportWriters:
    def test_contributions_csv_header_and_round_trip(self, tmp_path):
        rows = [
            LayerContribution(
                layer=0,
                alpha=0.5,
                knowledge_logit_mean=0.125,
                data_logit_mean=1.0 / 3.0,
                kg_bias_mean=-2.5e-3,
            )
        ]
        path = tmp_path / "contributions.csv"
        write_contributions_csv(rows, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "layer,alpha,knowledge_logit_mean,data_logit_mean,kg_bias_mean"
        with open(path, newline="") as fh:
            (record,) = list(csv.DictReader(fh))
        assert int(record["layer"]) == 0
        assert float(record["alpha"]) == 0.5
        assert float(record["knowledge_logit_mean"]) == 0.125
        assert float(record["data_logit_mean"]) == 1.0 / 3.0
        assert float(record["kg_bias_mean"]) == -2.5e-3

    def test_distances_csv_header_and_flags(self, tmp_path):
        report = DistanceReport(
            pairs=[
                PairDistance(post_a="a", post_b="b", d_cls=0.25, d_kcls=0.0625, close=True),
                PairDistance(post_a="a", post_b="c", d_cls=1.5, d_kcls=2.75, close=False),
            ],
            threshold=0.1,
        )
        path = tmp_path / "distances.csv"
        write_distances_csv(report, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "post_a,post_b,d_zcls,d_zkcls,close_flag"
        with open(path, newline="") as fh:
            records = list(csv.DictReader(fh))
        assert [r["close_flag"] for r in records] == ["1", "0"]
        assert float(records[0]["d_zkcls"]) == 0.0625
        assert float(records[1]["d_zcls"]) == 1.5

    def test_metrics_json_round_trip(self, tmp_path, model, corpus):
        metrics = compute_metrics(model, corpus)
        path = tmp_path / "metrics.json"
        write_metrics_json(metrics, path)
        payload = json.loads(path.read_text())
        assert payload["accuracy"] == metrics.accuracy
        assert payload["auc"] == metrics.auc
        assert payload["n_posts"] == metrics.n_posts
        assert payload["outcome_order"] == [o.value for o in LAYER_ORDER]
        assert payload["confusion"] == metrics.confusion.astype(int).tolist()
        assert all(
            isinstance(v, int) for row in payload["confusion"] for v in row
        )
