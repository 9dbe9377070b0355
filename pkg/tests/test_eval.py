"""Eval tests: metric identities against hand values, tendon-space scoring
for both variants, study caching/resume semantics, OOD bin construction, and
the timing bench contract."""

import dataclasses
import json
import math
import os

import numpy as np
import pytest

import tdcrop.eval as ev
from tdcrop.dataset import DEFAULT_RANGES, generate_dataset, split_dataset
from tdcrop.errors import (
    DegenerateFrameError,
    InputDomainError,
    NonconvergenceError,
    TrainingAbortedError,
    UndefinedMetricError,
)
from tdcrop.eval import (
    DEFAULT_OOD_BINS,
    StudyConfig,
    TimingRow,
    convergence_study,
    dropout_study,
    evaluate_model,
    ood_generate,
    ood_study,
    predictions_tendon_space,
    read_study_rows,
    relative_l2,
    run_cell,
    summarize_study,
    timing_bench,
    write_study_rows,
    write_study_summary,
    _flat_bounds,
    _nested_subset,
)
from tdcrop.neuralops import (
    init_model,
    model_predictions,
    pose_output,
    pose_to_tendons,
)
from tdcrop.rodmodel import design_from_flat, solve_equilibrium

TINY_FNO = dict(width=6, modes=2, n_layers=2)


@pytest.fixture(scope="module")
def master20():
    return split_dataset(generate_dataset(20, seed=123), 0.2, seed=0)


def tiny_config(master, tmp, **kw):
    defaults = dict(
        master=master,
        seeds=(0, 1),
        architectures=("deeponet", "fno"),
        batch_size=8,
        deeponet_epochs=3,
        fno_epochs=2,
        cache_dir=str(tmp),
    )
    defaults.update(kw)
    return StudyConfig(**defaults)


def perturbed(kind, seed, **overrides):
    model = init_model(kind, seed=seed, **overrides)
    rng = np.random.default_rng(seed + 100)
    for t in model.params.values():
        t.data += rng.normal(0.0, 0.3, t.data.shape)
    return model


class TestRelativeL2:
    def test_identity_is_zero(self):
        assert relative_l2([3.0, 4.0], [3.0, 4.0]) == 0.0

    def test_zero_prediction_is_one(self):
        assert relative_l2([[3.0], [4.0]], [[0.0], [0.0]]) == 1.0

    def test_hand_value(self):
        assert relative_l2([3.0, 4.0], [3.0, 0.0]) == 0.8

    def test_scale_invariance(self):
        rng = np.random.default_rng(0)
        y, yh = rng.normal(0, 1, 12), rng.normal(0, 1, 12)
        base = relative_l2(y, yh)
        assert relative_l2(4.0 * y, 4.0 * yh) == base  # power of two: exact
        assert relative_l2(3.7 * y, 3.7 * yh) == pytest.approx(base, rel=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(InputDomainError):
            relative_l2(np.zeros(3), np.zeros(4))

    def test_zero_norm_target_undefined(self):
        with pytest.raises(UndefinedMetricError):
            relative_l2(np.zeros(3), np.ones(3))


class TestTendonSpacePredictions:
    def test_tendon_variant_passthrough(self, master20):
        model = perturbed("fno", 0, **TINY_FNO)
        D, S = master20.normalized_designs, master20.arclengths
        got = predictions_tendon_space(model, D, S, master20.designs)
        assert np.array_equal(got, model_predictions(model, D, S))

    def test_pose_variant_matches_per_node_reconstruction(self, master20):
        model = perturbed("fno_pose", 1, **TINY_FNO)
        idx = [0, 3, 7]
        D = master20.normalized_designs[idx]
        S = master20.arclengths[idx]
        flat = master20.designs[idx]
        got = predictions_tendon_space(model, D, S, flat)
        raw = model_predictions(model, D, S)
        for b in range(len(idx)):
            design = design_from_flat(flat[b])
            for k in (0, 17, 41):
                want = pose_to_tendons(
                    pose_output(raw[b, k]), design, S[b, k]
                ).ravel()
                assert np.allclose(got[b, k], want, rtol=0, atol=1e-15)

    def test_degenerate_frame_carries_sample_index(self, master20):
        model = init_model("fno_pose", seed=0, **TINY_FNO)
        for t in model.params.values():
            t.data[:] = 0.0  # raw outputs all zero -> zero frame columns
        with pytest.raises(DegenerateFrameError) as ei:
            predictions_tendon_space(
                model,
                master20.normalized_designs[:2],
                master20.arclengths[:2],
                master20.designs[:2],
            )
        assert ei.value.sample_index == 0


class TestEvaluateModel:
    def test_exact_predictions_score_zero(self, master20):
        model = perturbed("fno", 2, **TINY_FNO)
        preds = model_predictions(
            model, master20.normalized_designs, master20.arclengths
        )
        ds = dataclasses.replace(master20, targets=np.ascontiguousarray(preds))
        rep = evaluate_model(model, ds, subset="test")
        assert rep.mean_error == 0.0
        assert rep.accuracy_pct == 100.0

    def test_zero_output_scores_one(self, master20):
        model = init_model("deeponet", seed=0)
        for t in model.params.values():
            t.data[:] = 0.0
        rep = evaluate_model(model, master20)
        assert rep.mean_error == 1.0
        assert rep.accuracy_pct == 0.0

    def test_pose_reconstruction_scores_zero(self, master20):
        model = perturbed("fno_pose", 3, **TINY_FNO)
        pred12 = predictions_tendon_space(
            model, master20.normalized_designs, master20.arclengths,
            master20.designs,
        )
        ds = dataclasses.replace(master20, targets=np.ascontiguousarray(pred12))
        rep = evaluate_model(model, ds, subset="test")
        assert rep.mean_error == 0.0

    def test_multi_seed_mean_is_arithmetic(self, master20):
        models = [perturbed("fno", s, **TINY_FNO) for s in (0, 1, 2)]
        singles = [evaluate_model(m, master20).mean_error for m in models]
        rep = evaluate_model(models, master20)
        assert rep.per_seed_errors == tuple(singles)
        assert rep.mean_error == sum(singles) / 3.0
        assert rep.accuracy_pct == (1.0 - rep.mean_error) * 100.0
        assert rep.seed_count == 3

    def test_against_per_sample_oracle(self, master20):
        model = perturbed("fno", 4, **TINY_FNO)
        rep = evaluate_model(model, master20, subset="test")
        idx = master20.split["test"]
        pred = model_predictions(
            model, master20.normalized_designs[idx], master20.arclengths[idx]
        )
        manual = [
            relative_l2(master20.targets[j], pred[i])
            for i, j in enumerate(idx)
        ]
        assert rep.mean_error == pytest.approx(np.mean(manual), rel=1e-14)

    def test_mixed_kinds_rejected(self, master20):
        with pytest.raises(InputDomainError):
            evaluate_model(
                [init_model("fno", 0, **TINY_FNO), init_model("fno_pose", 0, **TINY_FNO)],
                master20,
            )

    def test_subset_requires_split(self, master20):
        unsplit = generate_dataset(4, seed=9)
        with pytest.raises(InputDomainError):
            evaluate_model(perturbed("fno", 0, **TINY_FNO), unsplit, subset="test")
        rep = evaluate_model(perturbed("fno", 0, **TINY_FNO), unsplit, subset=None)
        assert math.isfinite(rep.mean_error)

    def test_empty_model_list_rejected(self, master20):
        with pytest.raises(InputDomainError):
            evaluate_model([], master20)


class TestStudyCells:
    def test_nested_subsets(self, master20):
        small, large = _nested_subset(master20, 4), _nested_subset(master20, 9)
        assert np.array_equal(large.designs[:4], small.designs)
        train_idx = np.asarray(master20.split["train"])
        assert np.array_equal(small.designs, master20.designs[train_idx[:4]])
        assert small.split is None

    def test_subset_size_validated(self, master20):
        with pytest.raises(InputDomainError):
            _nested_subset(master20, 17)  # only 16 train rows
        with pytest.raises(InputDomainError):
            _nested_subset(master20, 0)

    def test_cell_cached_and_not_recomputed(self, master20, tmp_path, monkeypatch):
        cfg = tiny_config(master20, tmp_path)
        calls = []
        real = ev.train
        monkeypatch.setattr(ev, "train", lambda *a, **k: calls.append(1) or real(*a, **k))
        first = run_cell(cfg, "fno", 8, 0.0, 0)
        assert calls == [1]
        again = run_cell(cfg, "fno", 8, 0.0, 0)
        assert calls == [1]
        assert again == first
        assert first["reason"] == "max_epochs"
        assert 0.0 < first["error"] < 10.0

    def test_cache_shared_across_configs(self, master20, tmp_path, monkeypatch):
        cfg = tiny_config(master20, tmp_path)
        run_cell(cfg, "deeponet", 4, 0.0, 1)
        calls = []
        monkeypatch.setattr(ev, "train", lambda *a, **k: calls.append(1))
        cfg2 = tiny_config(master20, tmp_path)
        cell = run_cell(cfg2, "deeponet", 4, 0.0, 1)
        assert calls == []
        assert cell["model"] == "deeponet" and cell["seed"] == 1

    def test_cache_dir_from_environment(self, master20, tmp_path, monkeypatch):
        monkeypatch.setenv("TDCROP_CACHE", str(tmp_path / "envcache"))
        cfg = tiny_config(master20, tmp_path)
        cfg.cache_dir = None
        run_cell(cfg, "fno", 4, 0.0, 0)
        assert (tmp_path / "envcache" / "cells").is_dir()
        assert any((tmp_path / "envcache" / "cells").iterdir())

    def test_failed_cell_recorded_not_fatal(self, master20, tmp_path, monkeypatch):
        cfg = tiny_config(master20, tmp_path)

        def boom(*a, **k):
            raise TrainingAbortedError("non-finite loss at epoch 1")

        monkeypatch.setattr(ev, "train", boom)
        rows = convergence_study([4], tiny_config(master20, tmp_path,
                                                  architectures=("fno",),
                                                  seeds=(0,)))
        assert len(rows) == 1
        assert math.isnan(rows[0]["error"])
        monkeypatch.undo()
        rows2 = convergence_study([4], tiny_config(master20, tmp_path,
                                                   architectures=("fno",),
                                                   seeds=(0,)))
        assert math.isnan(rows2[0]["error"])  # failure is cached, not retried


class TestConvergenceStudy:
    def test_rows_cover_grid(self, master20, tmp_path):
        cfg = tiny_config(master20, tmp_path)
        rows = convergence_study([4, 8, 4], cfg)  # duplicate N deduplicated
        assert len(rows) == 2 * 2 * 2
        assert {r["value"] for r in rows} == {4, 8}
        assert all(r["study"] == "convergence" and r["param"] == "N" for r in rows)
        assert all(math.isfinite(r["error"]) for r in rows)

    def test_invalid_n(self, master20, tmp_path):
        cfg = tiny_config(master20, tmp_path)
        with pytest.raises(InputDomainError):
            convergence_study([0, 4], cfg)
        with pytest.raises(InputDomainError):
            convergence_study([], cfg)


class TestDropoutStudy:
    def test_q_zero_shares_convergence_cells(self, master20, tmp_path, monkeypatch):
        cfg = tiny_config(master20, tmp_path, architectures=("deeponet",), seeds=(0,))
        convergence_study([8], cfg)
        calls = []
        monkeypatch.setattr(ev, "train", lambda *a, **k: calls.append(1))
        rows = dropout_study([0.0], cfg, n=8)
        assert calls == []
        assert rows[0]["param"] == "q" and rows[0]["value"] == 0.0

    def test_q_grid_and_validation(self, master20, tmp_path):
        cfg = tiny_config(master20, tmp_path, architectures=("fno",), seeds=(0,))
        rows = dropout_study([0.2, 0.0], cfg, n=4)
        assert [r["value"] for r in rows] == [0.0, 0.2]
        with pytest.raises(InputDomainError):
            dropout_study([0.6], cfg, n=4)
        with pytest.raises(InputDomainError):
            dropout_study([], cfg, n=4)


class TestOodGenerate:
    def test_reference_bin_within_ranges(self):
        ds = ood_generate(6, seed=3, bins=((-5.0, 0.0),))[(-5.0, 0.0)]
        lo, hi = _flat_bounds(DEFAULT_RANGES)
        assert np.all(ds.designs >= lo) and np.all(ds.designs <= hi)

    def test_far_bin_exceeds_ranges_everywhere(self):
        ds = ood_generate(6, seed=3, bins=((15.0, 20.0),))[(15.0, 20.0)]
        lo, hi = _flat_bounds(DEFAULT_RANGES)
        outside = (ds.designs > hi) | (ds.designs < lo)
        assert outside.any(axis=1).all()  # every sample leaves the ranges
        assert outside.all()              # construction: every parameter does

    def test_pitch_extends_both_ends(self):
        ds = ood_generate(30, seed=11, bins=((15.0, 20.0),))[(15.0, 20.0)]
        pitches = ds.designs[:, 4:8]
        assert (pitches > 20.0).any() and (pitches < -20.0).any()
        assert np.all(np.abs(pitches) > 20.0)

    def test_reproducible_and_position_independent(self):
        full = ood_generate(5, seed=3, bins=((-5.0, 0.0), (15.0, 20.0)))
        alone = ood_generate(5, seed=3, bins=((15.0, 20.0),))
        assert np.array_equal(
            full[(15.0, 20.0)].designs, alone[(15.0, 20.0)].designs
        )
        again = ood_generate(5, seed=3, bins=((-5.0, 0.0), (15.0, 20.0)))
        for key in full:
            assert np.array_equal(full[key].designs, again[key].designs)

    def test_targets_are_solver_ground_truth(self):
        ds = ood_generate(3, seed=5, bins=((0.0, 5.0),))[(0.0, 5.0)]
        cfg = solve_equilibrium(design_from_flat(ds.designs[1]))
        want = cfg.tendon_curves.transpose(1, 0, 2).reshape(42, 12)
        assert np.array_equal(ds.targets[1], want)
        assert np.array_equal(ds.arclengths[1], cfg.arclengths)

    def test_normalization_consistent(self):
        ds = ood_generate(4, seed=6, bins=((10.0, 15.0),))[(10.0, 15.0)]
        from tdcrop.dataset import normalize_rows

        assert np.array_equal(ds.normalized_designs, normalize_rows(ds.designs))
        assert ds.manifest["ood_bin"] == [10.0, 15.0]

    def test_bin_width_enforced(self):
        with pytest.raises(InputDomainError):
            ood_generate(2, seed=0, bins=((0.0, 4.0),))

    def test_count_validated(self):
        with pytest.raises(InputDomainError):
            ood_generate(0, seed=0)

    def test_default_bins_shape(self):
        assert DEFAULT_OOD_BINS[0] == (-5.0, 0.0)
        assert DEFAULT_OOD_BINS[-1] == (15.0, 20.0)
        assert all(b - a == 5.0 for a, b in DEFAULT_OOD_BINS)

    def test_pervasive_failure_aborts(self, monkeypatch):
        monkeypatch.setattr(
            ev, "solve_equilibrium_batch",
            lambda designs, **k: [None] * np.asarray(designs).shape[0],
        )
        with pytest.raises(NonconvergenceError):
            ood_generate(5, seed=0, bins=((0.0, 5.0),))


class TestOodStudy:
    def test_rows_and_caching(self, master20, tmp_path):
        cfg = tiny_config(master20, tmp_path, architectures=("fno",), seeds=(0,))
        bins = ((-5.0, 0.0), (15.0, 20.0))
        rows = ood_study(cfg, count_per_bin=4, seed=3, bins=bins, n=8)
        assert len(rows) == 2
        assert {r["value"] for r in rows} == {0.0, 20.0}
        assert all(math.isfinite(r["error"]) for r in rows)
        ood_files = os.listdir(tmp_path / "ood")
        assert len(ood_files) == 2
        rows2 = ood_study(cfg, count_per_bin=4, seed=3, bins=bins, n=8)
        assert [r["error"] for r in rows2] == [r["error"] for r in rows]


class TestTimingBench:
    def test_schema_and_monotonicity(self):
        rows = timing_bench(kinds=("deeponet",), workloads=(1, 200),
                            repeats=3, warmups=1)
        assert all(isinstance(r, TimingRow) for r in rows)
        assert all(r.seconds > 0 for r in rows)
        assert rows[0].hardware and rows[0].hardware == rows[1].hardware
        by_load = {r.workload: r.seconds for r in rows}
        assert by_load[200] >= by_load[1]

    def test_median_stability(self):
        a = timing_bench(kinds=("deeponet",), workloads=(500,),
                         repeats=5, warmups=2)[0].seconds
        b = timing_bench(kinds=("deeponet",), workloads=(500,),
                         repeats=5, warmups=2)[0].seconds
        assert abs(a - b) / max(a, b) < 0.20

    def test_invalid_repeats(self):
        with pytest.raises(InputDomainError):
            timing_bench(kinds=("deeponet",), workloads=(1,), repeats=0)


class TestStudyIO:
    ROWS = [
        {"study": "convergence", "model": "fno", "seed": s, "param": "N",
         "value": 100, "error": e, "seconds": 1.5}
        for s, e in ((0, 0.1), (1, 0.2), (2, 0.3))
    ]

    def test_csv_round_trip(self, tmp_path):
        p = tmp_path / "rows.csv"
        write_study_rows(self.ROWS, str(p))
        assert p.read_text().splitlines()[0] == "study,model,seed,param,value,error,seconds"
        back = read_study_rows(str(p))
        assert [r["error"] for r in back] == [0.1, 0.2, 0.3]
        assert back[0]["model"] == "fno" and back[0]["value"] == 100.0

    def test_nan_error_round_trips(self, tmp_path):
        rows = [dict(self.ROWS[0], error=math.nan)]
        p = tmp_path / "rows.csv"
        write_study_rows(rows, str(p))
        assert math.isnan(read_study_rows(str(p))[0]["error"])

    def test_bad_header_rejected(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("nope\n1,2,3\n")
        with pytest.raises(InputDomainError):
            read_study_rows(str(p))

    def test_summary_means(self):
        summ = summarize_study(self.ROWS)
        assert len(summ) == 1
        assert summ[0]["mean_error"] == pytest.approx(0.2, rel=1e-15)
        assert summ[0]["per_seed_errors"] == [0.1, 0.2, 0.3]
        assert summ[0]["seeds"] == [0, 1, 2]

    def test_summary_skips_failed_cells(self):
        rows = self.ROWS[:2] + [dict(self.ROWS[2], error=math.nan)]
        summ = summarize_study(rows)
        assert summ[0]["mean_error"] == pytest.approx(0.15, rel=1e-12)
        assert summ[0]["per_seed_errors"] == [0.1, 0.2, None]

    def test_summary_json_written(self, tmp_path):
        p = tmp_path / "summary.json"
        write_study_summary(self.ROWS, str(p))
        with open(p) as fh:
            doc = json.load(fh)
        assert doc["summary"][0]["model"] == "fno"
