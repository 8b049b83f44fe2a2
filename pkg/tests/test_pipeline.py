from dataclasses import replace

import numpy as np
import pytest

from wireparse.geom import GridSpec
from wireparse.hafm_codec import encode
from wireparse.junction_codec import JunctionMaps, encode_junctions
from wireparse.pipeline import (
    CONFIG_KEYS,
    PipelineConfig,
    PredictedMaps,
    Predictor,
    config_help,
    parse,
    predict,
    read_config_file,
    run_eval,
    synth_dataset,
    train_scorer,
)
from wireparse.scene_io import load_wireframe, save_wireframe, synth_scene
from wireparse.verify import MLPScorer

SPEC = GridSpec(512, 512, 4)
FAST = PipelineConfig(train_scenes=3, scorer_epochs=100)


@pytest.fixture(scope="module")
def scorer():
    return train_scorer(FAST)


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    d = tmp_path_factory.mktemp("ds")
    for i, wf in enumerate(synth_dataset(FAST, 4, seed=1)):
        save_wireframe(wf, d / f"scene_{i:04d}.json")
    return d


class TestPredict:
    def test_oracle_bit_identical(self):
        wf = synth_scene(0, SPEC, 20)
        m = predict(wf, Predictor(), SPEC)
        assert np.array_equal(m.afm.channels, encode(wf, SPEC).channels)
        j = encode_junctions(wf, SPEC)
        assert np.array_equal(m.junctions.mask, j.mask) and np.array_equal(m.junctions.offset, j.offset)
        assert not m.residual.values.any()

    def test_degenerate_noise_is_oracle(self):
        wf = synth_scene(1, SPEC, 20)
        a = predict(wf, Predictor(), SPEC)
        b = predict(wf, Predictor("noisy", 0.0, 0.0, seed=5), SPEC)
        for x, y in ((a.afm.channels, b.afm.channels), (a.features.channels, b.features.channels),
                     (a.junctions.stack(), b.junctions.stack())):
            assert np.array_equal(x, y)

    def test_noisy_deterministic_and_bounded(self):
        wf = synth_scene(2, SPEC, 20)
        p = Predictor("noisy", 0.1, 0.1, seed=9)
        a, b = predict(wf, p, SPEC, scene_index=3), predict(wf, p, SPEC, scene_index=3)
        assert np.array_equal(a.afm.channels, b.afm.channels)
        c = predict(wf, p, SPEC, scene_index=4)
        assert not np.array_equal(a.afm.channels, c.afm.channels)
        fg = a.afm.foreground
        assert np.all((a.afm.channels[:, fg] >= 0) & (a.afm.channels[:, fg] < 1))
        assert fg.sum() < encode(wf, SPEC).foreground.sum()
        assert np.all((a.junctions.mask >= 0) & (a.junctions.mask <= 1))

    def test_noise_truncated_at_two_sigma(self):
        wf = synth_scene(3, SPEC, 20)
        gt = encode(wf, SPEC)
        m = predict(wf, Predictor("noisy", 0.01, 0.0, seed=1), SPEC)
        fg = gt.foreground
        diff = np.abs(m.afm.channels[:, fg] - gt.channels[:, fg])
        assert diff.max() <= 0.02 + 1e-12 and diff.max() > 0.015

    def test_residual_is_true_abs_error(self):
        wf = synth_scene(3, SPEC, 20)
        gt = encode(wf, SPEC)
        m = predict(wf, Predictor("noisy", 0.05, 0.0, seed=1), SPEC)
        fg = gt.foreground
        assert np.allclose(m.residual.values[fg], np.abs(gt.channels[0][fg] - m.afm.channels[0][fg]), atol=1e-15)

    def test_file_predictor(self, tmp_path):
        wf = synth_scene(4, SPEC, 10)
        predict(wf, Predictor(), SPEC).save(tmp_path)
        back = predict(wf, Predictor("file", maps_dir=str(tmp_path)), SPEC)
        assert np.array_equal(back.afm.channels, encode(wf, SPEC).channels.astype(np.float32))
        with pytest.raises(ValueError):
            predict(wf, Predictor("file", maps_dir=str(tmp_path)), GridSpec(256, 256, 4))

    def test_predictor_validation(self):
        with pytest.raises(ValueError):
            Predictor("cnn")
        with pytest.raises(ValueError):
            Predictor("noisy", drop_rate=1.5)


class TestParse:
    def test_oracle_recovers_gt(self, scorer):
        cfg = replace(FAST, score_threshold=0.0)
        for seed in range(3):
            wf = synth_scene(seed, SPEC, 20)
            out, stats = parse(wf, cfg, scorer)
            got = {frozenset(map(tuple, out.junctions[list(s)])) for s in out.segments}
            want = {frozenset(map(tuple, wf.junctions[list(s)])) for s in wf.segments}
            assert got == want
            assert stats.gt_lines == 20 and stats.verification_proposals == 20
            assert stats.junction_proposals == len(wf.junctions)

    def test_empty_mask(self, scorer):
        wf = synth_scene(0, SPEC, 5)
        m = predict(wf, Predictor(), SPEC)
        m.junctions = JunctionMaps(SPEC, np.zeros(SPEC.shape), m.junctions.offset)
        out, stats = parse(m, FAST, scorer)
        assert len(out.segments) == 0 and len(out.junctions) == 0
        assert stats.junction_proposals == 0 and stats.gt_lines is None

    def test_noisy_deterministic(self, scorer):
        cfg = replace(FAST, predictor=Predictor("noisy", 0.05, seed=2))
        wf = synth_scene(5, SPEC, 20)
        a, _ = parse(wf, cfg, scorer, 1)
        b, _ = parse(wf, cfg, scorer, 1)
        assert np.array_equal(a.junctions, b.junctions) and np.array_equal(a.segment_scores, b.segment_scores)

    def test_threshold_filters(self):
        wf = synth_scene(6, SPEC, 10)
        out, _ = parse(wf, replace(FAST, score_threshold=0.6), MLPScorer.zeros(FAST.verify.s // FAST.verify.pool_window * 7))
        assert len(out.segments) == 0


class TestConfig:
    def test_from_kv(self):
        cfg = PipelineConfig.from_kv({"tau": "7", "predictor": "noisy", "sigma": "0.1", "sap_thresholds": "5,10",
                                      "eval_resolution": "64x64", "junction_w": "none", "predictor_seed": "4"})
        assert cfg.matching.tau == 7 and cfg.predictor == Predictor("noisy", 0.1, seed=4)
        assert cfg.metric.sap_thresholds == (5, 10) and cfg.metric.eval_resolution == (64, 64)
        assert cfg.junction_w is None

    def test_unknown_key(self):
        with pytest.raises(ValueError):
            PipelineConfig.from_kv({"bogus": "1"})

    def test_defaults(self):
        cfg = PipelineConfig()
        assert (cfg.codec.d_max, cfg.matching.tau, cfg.verify.eta, cfg.verify.s, cfg.verify.n) == (5, 10, 1.5, 32, 300)
        assert (cfg.loss.lambda_msk, cfg.loss.lambda_off, cfg.junction_k) == (8.0, 0.25, 300)

    def test_file(self, tmp_path):
        p = tmp_path / "c.cfg"
        p.write_text("# comment\ntau = 8  # inline\n\nsigma=0.2\n")
        assert read_config_file(p) == {"tau": "8", "sigma": "0.2"}
        p.write_text("tau 8\n")
        with pytest.raises(ValueError, match=":1:"):
            read_config_file(p)

    def test_help_lists_every_key(self):
        text = config_help()
        for key in CONFIG_KEYS:
            assert f"  {key} = " in text


class TestRunEval:
    def test_reproducible_reports(self, dataset, scorer, tmp_path):
        a = run_eval(dataset, FAST, tmp_path / "a", scorer, figures=False)
        run_eval(dataset, FAST, tmp_path / "b", scorer, figures=False)
        assert (tmp_path / "a/report.json").read_bytes() == (tmp_path / "b/report.json").read_bytes()
        assert a.report.msap >= 0.98 and not a.failures
        assert sorted(p.name for p in (tmp_path / "a/predictions").iterdir()) == [f"scene_{i:04d}.json" for i in range(4)]
        assert (tmp_path / "a/pr_sap5.csv").exists()

    def test_run_log_counts(self, dataset, scorer, tmp_path):
        run_eval(dataset, FAST, tmp_path, scorer, figures=False)
        lines = (tmp_path / "run.log").read_text().splitlines()
        assert lines[0].split() == ["scene", "junction_proposals", "line_proposals", "verification_proposals", "gt_lines"]
        rows = [l.split() for l in lines[1:-1]]
        assert len(rows) == 4 and all(len(r) == 5 and r[4] == "20" for r in rows)
        assert lines[-1].startswith("mean ")

    def test_parallel_matches_serial(self, dataset, scorer):
        a = run_eval(dataset, FAST, None, scorer, jobs=1, figures=False)
        b = run_eval(dataset, FAST, None, scorer, jobs=2, figures=False)
        assert a.report.to_text() == b.report.to_text()

    def test_unreadable_scene_recorded(self, dataset, scorer, tmp_path):
        d = tmp_path / "ds"
        d.mkdir()
        for p in sorted(dataset.iterdir())[:2]:
            (d / p.name).write_bytes(p.read_bytes())
        (d / "broken.json").write_text("{oops")
        run = run_eval(d, FAST, tmp_path / "out", scorer, figures=False)
        assert [n for n, _ in run.failures] == ["broken"] and run.report.extra["scenes"] == 2
        assert "broken ERROR" in (tmp_path / "out/run.log").read_text()

    def test_file_predictor_eval(self, dataset, scorer, tmp_path):
        for p in sorted(dataset.iterdir()):
            wf = load_wireframe(p)
            predict(wf, Predictor(), SPEC).save(tmp_path / "maps" / p.stem)
        cfg = replace(FAST, predictor=Predictor("file", maps_dir=str(tmp_path / "maps")))
        run = run_eval(dataset, cfg, None, scorer, figures=False)
        assert not run.failures and run.report.msap >= 0.98


def test_saved_maps_round_trip(tmp_path):
    wf = synth_scene(8, SPEC, 20)
    m = predict(wf, Predictor("noisy", 0.05, seed=1), SPEC)
    m.save(tmp_path)
    back = PredictedMaps.load(tmp_path, SPEC)
    want = m.afm.channels.astype(np.float32)
    fg = want[0] >= 0
    want[:, fg] = np.minimum(want[:, fg], np.nextafter(np.float32(1), np.float32(0)))
    assert np.array_equal(back.afm.channels, want)
    assert np.array_equal(back.residual.values, m.residual.values.astype(np.float32))


def test_saved_channels_stay_below_one(tmp_path):
    wf = synth_scene(8, SPEC, 20)
    m = predict(wf, Predictor(), SPEC)
    fg = m.afm.foreground
    m.afm.channels[1][fg] = np.nextafter(1.0, 0.0)  # rounds to 1.0 in float32
    m.save(tmp_path)
    back = PredictedMaps.load(tmp_path, SPEC)
    assert back.afm.channels[:, fg].max() < 1 and back.afm.channels[:, fg].max() > 1 - 1e-7
    assert np.array_equal(back.afm.foreground, fg)
