import json

import numpy as np
import pytest

from tlfault.errors import StageError, ValidationError
from tlfault.harness import (
    ExperimentConfig,
    RepeatError,
    emit_plot_data,
    length_tag,
    load_histories,
    measure_inference_latency,
    read_table,
    run_pipeline,
    stage_seed,
    statistical_repeat,
    strip_timing,
)
from tlfault.nn import CLASSIFY, LOCATE, NetSpec, TrainHistory
from tlfault.powersim import GridAxes
from tlfault.transfer import TARGET_LENGTHS, Mode


# ------------------------------------------------------------------ config


def test_config_rejects_unsupported_length():
    with pytest.raises(ValidationError, match="75"):
        ExperimentConfig(lengths=(75.0, 100.0))


@pytest.mark.parametrize("bad", [dict(repeats=0), dict(split_ratio=1.0), dict(modes=()), dict(tasks=("segment",)),
                                 dict(lengths=(100.0, 100.0)), dict(tasks=(LOCATE,))])
def test_config_validation(bad):
    with pytest.raises(ValidationError):
        ExperimentConfig(**bad)


def test_config_json_round_trip(tmp_path):
    cfg = ExperimentConfig(lengths=(100.0, 12.5), grid="reduced", repeats=3, seed=42,
                           classify={"epochs": 5, "batch_size": 2}, modes=("finetune", "dedicated"))
    assert cfg.lengths == (12.5, 100.0) and cfg.classify.epochs == 5 and cfg.classify.lr == 3e-4
    assert cfg.grid == GridAxes.reduced() and cfg.targets == (12.5,)
    back = ExperimentConfig.from_json(cfg.to_json(tmp_path / "c.json"))
    assert back.to_dict() == cfg.to_dict()
    (tmp_path / "bad.json").write_text(json.dumps({"lenghts": [100]}))
    with pytest.raises(ValidationError, match="lenghts"):
        ExperimentConfig.from_json(tmp_path / "bad.json")
    (tmp_path / "broken.json").write_text("{")
    with pytest.raises(ValidationError):
        ExperimentConfig.from_json(tmp_path / "broken.json")


def test_defaults():
    cfg = ExperimentConfig()
    assert cfg.repeats == 30 and len(cfg.lengths) == 7 and cfg.targets == TARGET_LENGTHS
    assert cfg.classify.epochs == 64 and cfg.locate.epochs == 32


def test_stage_seed_scheme():
    assert stage_seed(10, "simulate") == 11 and stage_seed(10, "report") == 16
    a, b = stage_seed(10, "simulate", 125), stage_seed(10, "simulate", 250)
    assert a != b and a == stage_seed(10, "simulate", 125) and 0 <= a < 2**63
    assert length_tag(12.5) == "12p5" and length_tag(100.0) == "100"


# ----------------------------------------------------------------- repeats


def test_constant_closure_zero_std():
    s = statistical_repeat(lambda seed: 0.5, 5, 0)
    assert s["value"].mean == 0.5 and s["value"].std == 0.0 and s["value"].count == 5


def test_one_two_three():
    s = statistical_repeat(lambda seed: float(seed), 3, 0)
    assert s.seeds == (1, 2, 3)
    assert s["value"].mean == 2.0 and s["value"].std == pytest.approx(1.0)


def test_mapping_closure_and_deterministic_copies():
    s = statistical_repeat(lambda seed: {"a": 0.25, ("b", 1): seed % 2}, 4, 100)
    assert s.seeds == (101, 102, 103, 104)
    assert s["a"].std == 0.0 and s[("b", 1)].mean == 0.5


def test_failure_reports_repeat_index():
    def closure(seed):
        if seed == 13:
            raise RuntimeError("boom")
        return 1.0

    with pytest.raises(RepeatError) as info:
        statistical_repeat(closure, 5, 10)
    assert info.value.repeat == 3 and info.value.seed == 13
    assert isinstance(info.value, StageError)
    with pytest.raises(ValidationError):
        statistical_repeat(lambda s: 1.0, 0, 0)


# ----------------------------------------------------------------- latency


def test_latency_zero_samples():
    with pytest.raises(ValidationError):
        measure_inference_latency(NetSpec().build(0), np.zeros((0, 7, 7)))


def test_latency_classify_vs_locate(rng):
    frames = rng.random((50, 7, 7))
    c = measure_inference_latency(NetSpec(CLASSIFY).build(0), frames, min_inferences=3000)
    r = measure_inference_latency(NetSpec(LOCATE).build(0), frames, min_inferences=3000)
    assert c.n == r.n == 3000
    assert c.mean < 1e-3 and r.mean < 1e-3
    assert 0.5 < c.median / r.median < 2.0
    assert c.p99 >= c.median


# ------------------------------------------------------------------- plots


def test_plot_counts(tmp_path):
    hist = {("classify", 200.0, "finetune"): [TrainHistory("accuracy", list(np.linspace(0.5, 1, 64)), [0.9] * 64)] * 2}
    rows = {"classification": [{"length": L, "mode": m.value, "accuracy_mean": 0.9, "train_time_mean": 1.0}
                               for L in TARGET_LENGTHS for m in Mode]}
    files = emit_plot_data(hist, rows, tmp_path)
    names = {p.name for p in files}
    for part in ("train", "val"):
        lines = (tmp_path / f"curve_classify_L200_finetune_{part}.dat").read_text().splitlines()
        assert len(lines) == 64 and lines[0].split()[0] == "1"
    bars = (tmp_path / "bars_accuracy.dat").read_text().splitlines()
    assert len([l for l in bars if not l.startswith("#")]) == 18
    assert "plots.gp" in names and "bars_mse.dat" not in names
    assert "curve_classify_L200_finetune_train.dat" in (tmp_path / "plots.gp").read_text()


# ---------------------------------------------------------------- pipeline


def _small_cfg(out, **kw):
    base = dict(lengths=(100.0, 200.0), grid="reduced", repeats=2, kmeans_repeats=2, latency_inferences=300,
                classify={"epochs": 3, "batch_size": 16}, locate={"epochs": 2, "batch_size": 16}, seed=7, out=str(out))
    base.update(kw)
    return ExperimentConfig(**base)


@pytest.fixture(scope="module")
def pipeline_runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("pipe")
    first = run_pipeline(_small_cfg(root / "a"))
    again = run_pipeline(_small_cfg(root / "a"))  # cached
    fresh = run_pipeline(_small_cfg(root / "b"))  # recomputed
    return first, again, fresh


def test_pipeline_tables(pipeline_runs):
    bundle = pipeline_runs[0]
    assert set(bundle.tables) == {"classification", "location", "kmeans", "latency"}
    cls = read_table(bundle.tables["classification"])
    # 100 km: dedicated only; 200 km: all three modes
    assert [(float(r["length"]), r["mode"]) for r in cls] == [(100.0, "dedicated"), (200.0, "finetune"),
                                                               (200.0, "frozen"), (200.0, "dedicated")]
    assert all(r["repeats"] == "2" and r["seeds"] == "8 9" for r in cls)
    keys = [(r["length"], r["mode"]) for r in cls]
    assert len(keys) == len(set(keys))
    loc = read_table(bundle.tables["location"])
    assert len(loc) == 4 and "mse_mean" in loc[0]
    km = read_table(bundle.tables["kmeans"])
    assert [float(r["length"]) for r in km] == [100.0, 200.0]
    lat = read_table(bundle.tables["latency"])
    assert [r["task"] for r in lat] == [CLASSIFY, LOCATE] and all(float(r["mean_us"]) < 1000 for r in lat)
    assert bundle.summary.read_text().startswith("#")
    assert len(bundle.histories) == 2 * 8


def test_pipeline_cache_reuse_matches_recompute(pipeline_runs):
    first, again, fresh = pipeline_runs
    assert not first.cache_hits
    assert any(h.startswith("train") for h in again.cache_hits)
    assert any(h.startswith("simulate") for h in again.cache_hits)
    for name in first.tables:
        a = strip_timing(first.tables[name])
        assert a == strip_timing(again.tables[name]) == strip_timing(fresh.tables[name])
    assert (first.out / "cache" / "source_s8.tlxd").read_bytes() == (fresh.out / "cache" / "source_s8.tlxd").read_bytes()


def test_plots_regenerate_from_histories(pipeline_runs, tmp_path):
    bundle = pipeline_runs[0]
    hist = load_histories(bundle.out / "histories")
    assert len(hist[("classify", 200.0, "finetune")]) == 2
    assert len(hist[("classify", 200.0, "finetune")][0].train) == 3
    rows = {n: read_table(p) for n, p in bundle.tables.items()}
    files = emit_plot_data(hist, rows, tmp_path)
    for p in files:
        if p.name.startswith("curve_"):
            assert p.read_text() == (bundle.out / "plots" / p.name).read_text()


def test_corrupted_cache_is_recomputed(pipeline_runs):
    bundle = pipeline_runs[1]
    res = bundle.out / "cache" / "results_s8.json"
    text = res.read_text()
    res.write_text(text.replace("0.", "1.", 1))
    again = run_pipeline(_small_cfg(bundle.out))
    assert "train_s8" not in again.cache_hits and "train_s9" in again.cache_hits
    assert strip_timing(again.tables["classification"]) == strip_timing(bundle.tables["classification"])


def test_stage_failure_names_stage(tmp_path, monkeypatch):
    import tlfault.harness as h

    def broken(*a, **k):
        raise RuntimeError("disk on fire")

    monkeypatch.setattr(h.baselines, "kmeans_repeats", broken)
    cfg = _small_cfg(tmp_path / "x", lengths=(100.0,), tasks=(CLASSIFY,), modes=("dedicated",), repeats=1,
                     classify={"epochs": 1, "batch_size": 32})
    with pytest.raises(StageError, match="kmeans"):
        run_pipeline(cfg)
    assert (tmp_path / "x" / "cache" / "manifest.json").exists()
