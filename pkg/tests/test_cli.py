import numpy as np
import pytest

from pagdiff import (BoxMask, DenoiserConfig, gen_shapes, init_weights,
                     load_tensor, make_linear_schedule, measure,
                     save_checkpoint, save_tensor)
from pagdiff.cli import _parse_layers, main
from pagdiff.config import RunConfig, parse_config_file
from pagdiff.errors import ConfigError

TRAIN_ARGS = ["--model.token_dim", "8", "--train.steps", "8",
              "--data.n", "64", "--schedule.T", "20"]


@pytest.fixture(scope="module")
def ckpt(tmp_path_factory):
    out = tmp_path_factory.mktemp("train")
    rc = main(["train", "--out", str(out)] + TRAIN_ARGS)
    assert rc == 0
    return str(out / "checkpoint.pagc")


# -- config handling ------------------------------------------------------

def test_config_defaults_and_precedence(tmp_path):
    cfgfile = tmp_path / "run.cfg"
    cfgfile.write_text("# comment line\nseed = 5\nsampler.steps = 7\n")
    rc = RunConfig({"seed": "9"}, str(cfgfile))
    assert rc["seed"] == 9            # flag beats file
    assert rc["sampler.steps"] == 7   # file beats default
    assert rc["sampler.kind"] == "ddim"


def test_config_aliases_map_to_dotted_keys():
    rc = RunConfig({"steps": "12", "n": "3", "guidance": "pag"})
    assert rc["sampler.steps"] == 12
    assert rc["sampler.n"] == 3
    assert rc["guidance.mode"] == "pag"


def test_config_unknown_key_and_bad_value():
    with pytest.raises(ConfigError):
        RunConfig({"sampler.bogus": "1"})
    with pytest.raises(ConfigError):
        RunConfig({"sampler.steps": "many"})


def test_config_file_syntax_error(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("just some words\n")
    with pytest.raises(ConfigError):
        parse_config_file(str(bad))
    with pytest.raises(ConfigError):
        RunConfig({}, str(tmp_path / "missing.cfg"))


def test_parse_layers():
    assert _parse_layers("deepest", 3) == frozenset({3})
    assert _parse_layers("all", 3) == frozenset({1, 2, 3})
    assert _parse_layers("1+3", 3) == frozenset({1, 3})
    assert _parse_layers("1,2", 3) == frozenset({1, 2})
    with pytest.raises(ConfigError):
        _parse_layers("4", 3)


# -- exit codes -----------------------------------------------------------

def test_unknown_config_key_exits_2(tmp_path, capsys):
    cfgfile = tmp_path / "run.cfg"
    cfgfile.write_text("no.such.key = 1\n")
    assert main(["sample", "--config", str(cfgfile)]) == 2
    assert "config error" in capsys.readouterr().err


def test_sample_without_checkpoint_exits_2(capsys):
    assert main(["sample"]) == 2
    assert "ckpt" in capsys.readouterr().err


def test_non_finite_weights_exit_3(tmp_path, capsys):
    cfg = DenoiserConfig(token_dim=8)
    weights = init_weights(cfg, seed=0)
    weights["block1.wq"] = np.full_like(weights["block1.wq"], np.nan)
    sched = make_linear_schedule(20)
    bad = tmp_path / "bad.pagc"
    save_checkpoint(bad, weights, cfg, sched, 1e-4, 0.02)
    rc = main(["sample", "--ckpt", str(bad), "--out", str(tmp_path / "o"),
               "--n", "1", "--steps", "4"])
    assert rc == 3
    assert "numeric abort" in capsys.readouterr().err


# -- train ----------------------------------------------------------------

def test_train_outputs(tmp_path):
    out = tmp_path / "run"
    assert main(["train", "--out", str(out)] + TRAIN_ARGS) == 0
    assert (out / "checkpoint.pagc").exists()
    curve = (out / "loss_curve.txt").read_text().splitlines()
    assert len(curve) == 8
    assert all(float(v) >= 0 for v in curve)


# -- sample ---------------------------------------------------------------

def test_sample_outputs_and_determinism(ckpt, tmp_path):
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        rc = main(["sample", "--ckpt", ckpt, "--out", str(out),
                   "--n", "4", "--steps", "5", "--guidance", "pag",
                   "--guidance.s", "1.5", "--seed", "3"])
        assert rc == 0
        outs.append(out)
    a = (outs[0] / "samples.pagt").read_bytes()
    b = (outs[1] / "samples.pagt").read_bytes()
    assert a == b
    x = load_tensor(outs[0] / "samples.pagt")
    assert x.shape == (4, 8, 8)
    assert (outs[0] / "samples.pgm").read_bytes().startswith(b"P5\n")


def test_sample_trace_stride_writes_trace(ckpt, tmp_path):
    out = tmp_path / "t"
    assert main(["sample", "--ckpt", ckpt, "--out", str(out), "--n", "2",
                 "--steps", "6", "--sampler.trace_stride", "2"]) == 0
    assert (out / "trace.pagc").exists()


def test_scale_flag_sets_both_guidance_scales(ckpt, tmp_path):
    base = ["--ckpt", ckpt, "--n", "2", "--steps", "5",
            "--guidance", "pag", "--seed", "1"]
    out1, out2 = tmp_path / "x", tmp_path / "y"
    assert main(["sample", "--out", str(out1), "--scale", "2.5"] + base) == 0
    assert main(["sample", "--out", str(out2), "--guidance.s", "2.5"]
                + base) == 0
    assert ((out1 / "samples.pagt").read_bytes()
            == (out2 / "samples.pagt").read_bytes())


def test_sample_threads_env_matches_serial(ckpt, tmp_path, monkeypatch):
    base = ["--ckpt", ckpt, "--n", "40", "--steps", "4", "--seed", "2"]
    out1, out2 = tmp_path / "serial", tmp_path / "pool"
    monkeypatch.setenv("PAG_THREADS", "0")
    assert main(["sample", "--out", str(out1)] + base) == 0
    monkeypatch.setenv("PAG_THREADS", "4")
    assert main(["sample", "--out", str(out2)] + base) == 0
    assert ((out1 / "samples.pagt").read_bytes()
            == (out2 / "samples.pagt").read_bytes())


def test_bad_perturb_name_exits_2(ckpt, capsys):
    assert main(["sample", "--ckpt", ckpt, "--guidance", "pag",
                 "--perturb", "bogus"]) == 2
    assert "perturb" in capsys.readouterr().err


# -- trace ----------------------------------------------------------------

def test_trace_writes_panels(ckpt, tmp_path):
    out = tmp_path / "panels"
    assert main(["trace", "--ckpt", ckpt, "--out", str(out), "--n", "2",
                 "--steps", "4", "--guidance", "pag",
                 "--sampler.trace_stride", "2"]) == 0
    panels = sorted(out.glob("trace_t*.pgm"))
    assert len(panels) == 2
    assert (out / "trace.pagc").exists()


# -- ablate ---------------------------------------------------------------

def test_ablate_table(ckpt, tmp_path, capsys):
    out = tmp_path / "ab"
    rc = main(["ablate", "--ckpt", ckpt, "--out", str(out),
               "--ablate.perturbs", "identity,random_mask",
               "--ablate.scales", "0,1", "--ablate.layers", "deepest,all",
               "--ablate.n", "4", "--ablate.ref_n", "16", "--steps", "4"])
    assert rc == 0
    lines = (out / "ablate.txt").read_text().splitlines()
    assert lines[0] == "perturb\tscale\tlayers\tenergy_distance"
    assert len(lines) == 1 + 2 * 2 * 2
    assert "identity\t0\tdeepest" in lines[1]
    assert lines[0] in capsys.readouterr().out


# -- restore --------------------------------------------------------------

def test_restore_inpaint(ckpt, tmp_path):
    clean, _ = gen_shapes(2, 8, seed=9)
    y = measure(clean, BoxMask(rect=(2, 2, 4, 4)))
    y_path = tmp_path / "y.pagt"
    save_tensor(y_path, y)
    out = tmp_path / "restored.pagt"
    rc = main(["restore", "--ckpt", ckpt, "--in", str(y_path),
               "--out", str(out), "--task", "inpaint",
               "--rect", "2,2,4,4", "--eta", "0.5", "--n", "2",
               "--steps", "5"])
    assert rc == 0
    x = load_tensor(out)
    assert x.shape == (2, 8, 8)
    assert np.isfinite(x).all()


def test_restore_directory_output_and_missing_input(ckpt, tmp_path, capsys):
    assert main(["restore", "--ckpt", ckpt, "--out", str(tmp_path)]) == 2
    assert "--in" in capsys.readouterr().err
    clean, _ = gen_shapes(1, 8, seed=10)
    y_path = tmp_path / "y.pagt"
    save_tensor(y_path, measure(clean, BoxMask(rect=(0, 0, 2, 2))))
    out = tmp_path / "dir"
    assert main(["restore", "--ckpt", ckpt, "--in", str(y_path),
                 "--out", str(out), "--n", "1", "--steps", "4"]) == 0
    assert (out / "restored.pagt").exists()
    assert (out / "restored.pgm").exists()


def test_restore_bad_task_exits_2(ckpt, tmp_path, capsys):
    y_path = tmp_path / "y.pagt"
    save_tensor(y_path, np.zeros((1, 8, 8)))
    assert main(["restore", "--ckpt", ckpt, "--in", str(y_path),
                 "--task", "sharpen"]) == 2


# -- eval -----------------------------------------------------------------

def test_eval_report(tmp_path, capsys):
    rng = np.random.default_rng(0)
    sp = tmp_path / "s.pagt"
    rp = tmp_path / "r.pagt"
    save_tensor(sp, rng.standard_normal((8, 8, 8)))
    save_tensor(rp, rng.standard_normal((8, 8, 8)))
    report_path = tmp_path / "report.txt"
    rc = main(["eval", "--samples", str(sp), "--reference", str(rp),
               "--report", str(report_path)])
    assert rc == 0
    text = report_path.read_text()
    assert "energy_distance: " in text
    assert "n_samples: 8" in text
    assert text in capsys.readouterr().out


def test_eval_requires_inputs(capsys):
    assert main(["eval"]) == 2
    assert "samples" in capsys.readouterr().err
