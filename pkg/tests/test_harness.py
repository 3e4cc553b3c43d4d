import csv
import os

import pytest

from navtransfer import harness, rl
from navtransfer.errors import ConfigError, StageError
from navtransfer.nncore import load_checkpoint

TINY = dict(seeds="0,1", train_houses="2", val_houses="1", test_houses="1", episodes_per_house="2",
            eval_max_steps="15", sim_steps="20", real_steps="10", ft_steps="10", pm_steps="10", workers="1",
            envs_per_worker="1", unroll="5", max_steps="15", eval_every="0", eval_per_house="1", images="16",
            adapt_iters="3", adapt_batch="8")


def tiny(out_dir, **kw):
    values = dict(TINY, out_dir=str(out_dir))
    values.update({k: str(v) for k, v in kw.items()})
    return harness.PipelineConfig.from_strings(values)


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    cfg = tiny(tmp_path_factory.mktemp("pipe"))
    return cfg, harness.run_pipeline(cfg, log=lambda *_: None)


def test_config_text_roundtrip(tmp_path):
    cfg = tiny(tmp_path, idt_weight=5e-6)
    back = harness.PipelineConfig.parse(cfg.resolved())
    assert back == cfg and back.hash() == cfg.hash()
    path = tmp_path / "c.txt"
    path.write_text("# comment\nsim_steps = 100  # inline\n")
    assert harness.PipelineConfig.load(str(path), {"workers": "2"}).sim_steps == 100
    with pytest.raises(ConfigError):
        harness.PipelineConfig.parse("bogus_key = 1\n")
    with pytest.raises(ConfigError):
        harness.PipelineConfig.parse("sim_steps 3\n")
    with pytest.raises(ConfigError):
        harness.PipelineConfig.from_strings({"sim_steps": "many"})


def test_hash_ignores_output_location(tmp_path):
    assert tiny(tmp_path / "a").hash() == tiny(tmp_path / "b").hash()
    assert tiny(tmp_path).hash() != tiny(tmp_path, mimic_weight=0.2).hash()


def test_sweep_spec_validation():
    with pytest.raises(ConfigError):
        harness.SweepSpec("lr", (1.0,))
    with pytest.raises(ConfigError):
        harness.SweepSpec("idt_weight", (0.1, 0.1))
    with pytest.raises(ConfigError):
        harness.SweepSpec("mimic_weight", (-1.0,))


def test_pipeline_outputs(pipeline):
    cfg, res = pipeline
    assert [r[0] for r in res.rows] == list(harness.MODELS)
    assert all(r[1] == 2 for r in res.rows)
    rows = list(csv.reader(open(os.path.join(cfg.out_dir, "table1.csv"))))
    assert rows[0] == ["method", "seeds", "success_rate", "success_std", "spl", "spl_std"] and len(rows) == 7
    agg = list(csv.reader(open(os.path.join(cfg.out_dir, "aggregate.csv"))))
    assert len(agg) == 1 + 6 * 2
    for seed in (0, 1):
        root = os.path.join(cfg.out_dir, f"seed{seed}")
        assert open(os.path.join(root, "config.txt")).read().endswith(f"# config_hash = {res.config_hash}\n")
        for name in ("sim", "real", "ft", "fa", "fa_pm", "sim_pm"):
            assert os.path.exists(os.path.join(root, "ckpt", f"{name}.ckpt"))
    assert res.train_steps == 2 * (20 + 10 + 10 + 10 + 10)


def test_pipeline_respects_freezing(pipeline):
    cfg, _ = pipeline
    tree = harness.SeedTree(os.path.join(cfg.out_dir, "seed0"))
    sim_digest = harness.read_marker(tree, "train-sim")["outputs"][tree.ckpt("sim")]
    assert harness.file_digest(tree.ckpt("sim")) == sim_digest
    sim, _ = load_checkpoint(tree.ckpt("sim"))
    fa, _ = load_checkpoint(tree.ckpt("fa"))
    fa_pm, _ = load_checkpoint(tree.ckpt("fa_pm"))
    sim_pm, _ = load_checkpoint(tree.ckpt("sim_pm"))
    assert fa_pm.checksum("M.") == fa.checksum("M.")
    assert sim_pm.checksum("M.") == sim.checksum("M.")
    assert fa.checksum("M.") != sim.checksum("M.")


def test_resume_runs_nothing(pipeline):
    cfg, res = pipeline
    again = harness.run_pipeline(cfg, resume=True, log=lambda *_: None)
    assert again.executed == [] and again.train_steps == 0
    assert again.rows == res.rows


def test_single_value_sweep_reproduces_base(pipeline):
    cfg, res = pipeline
    out = harness.sweep(harness.SweepSpec("mimic_weight", (cfg.mimic_weight,)), cfg, log=lambda *_: None)
    base = dict((r[0], r[2]) for r in res.rows)["sim+FA+PM"]
    assert sum(r.success_rate for r in out[cfg.mimic_weight]) / 2 == base
    assert os.path.exists(os.path.join(cfg.out_dir, "sweep_mimic_weight.csv"))


def test_stage_failure_is_tagged(tmp_path, monkeypatch):
    def boom(*a, **k):
        raise ValueError("no good")

    monkeypatch.setattr(rl, "train_baseline", boom)
    with pytest.raises(StageError) as info:
        harness.run_pipeline(tiny(tmp_path, seeds="0"), log=lambda *_: None)
    assert info.value.stage == "train-sim"
