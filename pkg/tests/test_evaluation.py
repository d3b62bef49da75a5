"""Micro-F1, the error taxonomy, and run comparison."""
import pytest

from typelink.data import Candidate, Document, Mention
from typelink.evaluation import (ErrorThresholds, Prediction, categorize_errors,
                                 compare_runs, micro_f1, read_run,
                                 render_error_table, write_run)


def _mention(mid, cands, gold, priors=None):
    priors = priors or [0.5] * len(cands)
    return Mention(id=mid, surface=("x",), left_ctx=(), right_ctx=(), long_ctx=(),
                   candidates=tuple(Candidate(e, p) for e, p in zip(cands, priors)),
                   gold=gold)


def _pred(mid, predicted, cands, gold, local=None, final=None, log_prior=None):
    breakdown = {
        "long_ctx": tuple(0.0 for _ in cands),
        "sim": None,
        "log_prior": tuple(log_prior or (0.0 for _ in cands)),
        "jaccard": None,
        "local": tuple(local if local is not None else (0.0 for _ in cands)),
        "max_marginal": None if final is None else tuple(0.0 for _ in cands),
        "final": None if final is None else tuple(final),
    }
    return Prediction(mention_id=mid, predicted=predicted, candidates=tuple(cands),
                      gold=gold, breakdown=breakdown)


@pytest.fixture
def four_mention_dataset():
    return [Document(id="d0", mentions=(
        _mention("m0", ["A", "B"], "A"),
        _mention("m1", ["A", "B"], "B"),
        _mention("m2", ["A", "C"], "C"),
        _mention("m3", ["B", "C"], "B"),
    ))]


class TestMicroF1:
    def test_all_correct(self, four_mention_dataset):
        preds = [_pred(f"m{i}", g, ["A", "B", "C"], g)
                 for i, g in enumerate(["A", "B", "C", "B"])]
        assert micro_f1(preds, four_mention_dataset) == 1.0

    def test_all_wrong(self, four_mention_dataset):
        preds = [_pred(f"m{i}", w, ["A", "B", "C"], g)
                 for i, (g, w) in enumerate([("A", "B"), ("B", "A"), ("C", "A"), ("B", "C")])]
        assert micro_f1(preds, four_mention_dataset) == 0.0

    def test_three_of_four(self, four_mention_dataset):
        preds = [_pred("m0", "A", ["A", "B"], "A"),
                 _pred("m1", "B", ["A", "B"], "B"),
                 _pred("m2", "C", ["A", "C"], "C"),
                 _pred("m3", "C", ["B", "C"], "B")]
        assert micro_f1(preds, four_mention_dataset) == 0.75

    def test_unknown_mention_rejected(self, four_mention_dataset):
        preds = [_pred(f"m{i}", "A", ["A"], "A") for i in range(4)]
        preds.append(_pred("ghost", "A", ["A"], "A"))
        with pytest.raises(ValueError, match="unknown mention"):
            micro_f1(preds, four_mention_dataset)

    def test_missing_prediction_rejected(self, four_mention_dataset):
        preds = [_pred("m0", "A", ["A", "B"], "A")]
        with pytest.raises(ValueError, match="missing predictions"):
            micro_f1(preds, four_mention_dataset)

    def test_nil_mentions_excluded(self):
        docs = [Document(id="d", mentions=(
            _mention("m0", ["A"], "A"),
            _mention("m1", ["A"], None),  # not in-KB
        ))]
        assert micro_f1([_pred("m0", "A", ["A"], "A")], docs) == 1.0

    def test_candidate_miss_counts_as_wrong(self):
        docs = [Document(id="d", mentions=(
            _mention("m0", ["A", "B"], "Z"),
            _mention("m1", ["A", "B"], "A"),
        ))]
        preds = [_pred("m0", "A", ["A", "B"], "Z"), _pred("m1", "A", ["A", "B"], "A")]
        assert micro_f1(preds, docs) == 0.5

    def test_document_permutation_invariant(self, four_mention_dataset):
        preds = [_pred("m0", "A", ["A", "B"], "A"),
                 _pred("m1", "B", ["A", "B"], "B"),
                 _pred("m2", "A", ["A", "C"], "C"),
                 _pred("m3", "B", ["B", "C"], "B")]
        base = micro_f1(preds, four_mention_dataset)
        doc = four_mention_dataset[0]
        shuffled = [Document(id="d1", mentions=doc.mentions[2:]),
                    Document(id="d0", mentions=doc.mentions[:2])]
        assert micro_f1(list(reversed(preds)), shuffled) == base


class TestPrediction:
    def test_predicted_must_be_candidate(self):
        with pytest.raises(ValueError, match="not in candidates"):
            _pred("m0", "Z", ["A", "B"], "A")

    def test_run_file_round_trip(self, tmp_path):
        preds = [_pred("m0", "A", ["A", "B"], "A", local=[0.5, 0.1]),
                 _pred("m1", "B", ["A", "B"], "B", local=[0.1, 0.2],
                       final=[0.3, 0.9])]
        write_run(preds, tmp_path / "run.ndjson")
        back = read_run(tmp_path / "run.ndjson")
        assert back == preds


class TestCategorize:
    def test_planted_categories(self):
        docs = [Document(id="d", mentions=(
            # gold prior tiny, predicted prior dominant -> due_to_prior
            _mention("m0", ["G", "P"], "G", priors=[0.001, 0.9]),
            # gold wins local but loses final -> due_to_global
            _mention("m1", ["G", "P"], "G", priors=[0.4, 0.4]),
            # local itself prefers the prediction -> due_to_local_context
            _mention("m2", ["G", "P"], "G", priors=[0.4, 0.4]),
            # gold missing from candidates -> candidate_miss
            _mention("m3", ["A", "B"], "Z"),
            # local-only run, gold wins local yet prediction differs -> other
            _mention("m4", ["G", "P"], "G", priors=[0.4, 0.4]),
            # correct prediction: not an error
            _mention("m5", ["G", "P"], "G"),
        ))]
        preds = [
            _pred("m0", "P", ["G", "P"], "G", local=[1.0, 0.2]),
            _pred("m1", "P", ["G", "P"], "G", local=[1.0, 0.2], final=[0.1, 0.9]),
            _pred("m2", "P", ["G", "P"], "G", local=[0.2, 1.0]),
            _pred("m3", "A", ["A", "B"], "Z", local=[0.5, 0.4]),
            _pred("m4", "P", ["G", "P"], "G", local=[1.0, 0.2]),
            _pred("m5", "G", ["G", "P"], "G", local=[1.0, 0.2]),
        ]
        report = categorize_errors(None, preds, docs)
        assert report.counts == {"candidate_miss": 1, "due_to_prior": 1,
                                 "due_to_global": 1, "due_to_local_context": 1,
                                 "other": 1}
        assert report.total_errors == 5
        assert sum(report.counts.values()) == report.total_errors
        by_id = {r.mention_id: r.category for r in report.rows}
        assert by_id == {"m0": "due_to_prior", "m1": "due_to_global",
                         "m2": "due_to_local_context", "m3": "candidate_miss",
                         "m4": "other"}

    def test_type_error_flags_need_type_map(self):
        docs = [Document(id="d", mentions=(
            _mention("m0", ["G", "P"], "G", priors=[0.4, 0.4]),
            _mention("m1", ["G", "Q"], "G", priors=[0.4, 0.4]),
        ))]
        preds = [_pred("m0", "P", ["G", "P"], "G", local=[0.2, 1.0]),
                 _pred("m1", "Q", ["G", "Q"], "G", local=[0.2, 1.0])]
        no_types = categorize_errors(None, preds, docs)
        assert no_types.type_errors is None
        tmap = {"G": frozenset({"city"}), "P": frozenset({"team"}),
                "Q": frozenset({"city"})}
        with_types = categorize_errors(None, preds, docs, type_map=tmap)
        assert with_types.type_errors == 1  # P differs in type, Q does not
        flags = {r.mention_id: r.is_type_error for r in with_types.rows}
        assert flags == {"m0": True, "m1": False}

    def test_baseline_context_recorded(self):
        docs = [Document(id="d", mentions=(
            _mention("m0", ["G", "P"], "G", priors=[0.4, 0.4]),))]
        model = [_pred("m0", "P", ["G", "P"], "G", local=[0.2, 1.0])]
        base_wrong = [_pred("m0", "P", ["G", "P"], "G", local=[0.0, 0.0])]
        base_right = [_pred("m0", "G", ["G", "P"], "G", local=[0.0, 0.0])]
        assert categorize_errors(base_wrong, model, docs).rows[0].baseline_also_wrong
        assert not categorize_errors(base_right, model, docs).rows[0].baseline_also_wrong

    def test_threshold_knobs(self):
        docs = [Document(id="d", mentions=(
            _mention("m0", ["G", "P"], "G", priors=[0.05, 0.9]),))]
        preds = [_pred("m0", "P", ["G", "P"], "G", local=[1.0, 0.2], final=[0.0, 1.0])]
        strict = categorize_errors(None, preds, docs,
                                   ErrorThresholds(low_prior=0.01, dominant_prior=0.1))
        loose = categorize_errors(None, preds, docs,
                                  ErrorThresholds(low_prior=0.10, dominant_prior=0.1))
        assert strict.counts["due_to_prior"] == 0
        assert strict.counts["due_to_global"] == 1
        assert loose.counts["due_to_prior"] == 1

    def test_table_rendering(self):
        docs = [Document(id="d", mentions=(
            _mention("m0", ["G", "P"], "G", priors=[0.001, 0.9]),))]
        preds = [_pred("m0", "P", ["G", "P"], "G", local=[1.0, 0.2])]
        table = render_error_table(categorize_errors(None, preds, docs))
        assert "Due to prior" in table and "100.00" in table
        assert "Error Type" in table and "# Cases" in table


class TestCompareRuns:
    def test_identical_runs_no_deltas(self, four_mention_dataset):
        preds = [_pred("m0", "A", ["A", "B"], "A"), _pred("m1", "A", ["A", "B"], "B"),
                 _pred("m2", "C", ["A", "C"], "C"), _pred("m3", "B", ["B", "C"], "B")]
        report = compare_runs(preds, preds, four_mention_dataset)
        assert report.fixed == [] and report.regressed == []
        assert report.net_f1_delta == 0.0

    def test_planted_fixes_and_regressions(self, four_mention_dataset):
        run_a = [_pred("m0", "B", ["A", "B"], "A"),   # wrong
                 _pred("m1", "B", ["A", "B"], "B"),   # right
                 _pred("m2", "A", ["A", "C"], "C"),   # wrong
                 _pred("m3", "B", ["B", "C"], "B")]   # right
        run_b = [_pred("m0", "A", ["A", "B"], "A"),   # fixed
                 _pred("m1", "A", ["A", "B"], "B"),   # regressed
                 _pred("m2", "C", ["A", "C"], "C"),   # fixed
                 _pred("m3", "B", ["B", "C"], "B")]   # still right
        report = compare_runs(run_a, run_b, four_mention_dataset)
        assert report.fixed == ["m0", "m2"]
        assert report.regressed == ["m1"]
        assert report.net_f1_delta == pytest.approx(
            micro_f1(run_b, four_mention_dataset) - micro_f1(run_a, four_mention_dataset))
        assert report.net_f1_delta == pytest.approx(0.25)

    def test_mismatched_mention_sets_rejected(self, four_mention_dataset):
        run_a = [_pred(f"m{i}", "A", ["A"], "A") for i in range(4)]
        run_b = run_a[:3]
        with pytest.raises(ValueError, match="different mention sets"):
            compare_runs(run_a, run_b, four_mention_dataset)
