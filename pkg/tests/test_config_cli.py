import json

import numpy as np
import pytest

from rdbounds import io as rio
from rdbounds.cli import dispatch, main
from rdbounds.config import ConfigError, config_from_dict, load_config
from rdbounds.geometry import SpaceTimeGrid


def test_minimal_config_defaults(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("kind: polynomial\nm: 3\nd: 1\n")
    cfg = load_config(p)
    assert cfg.lam == pytest.approx(0.1857, abs=1e-4)
    assert cfg.alpha == 0.49


def test_validation_lists_every_problem():
    with pytest.raises(ConfigError) as exc:
        config_from_dict({"m": 0.5, "ensemble": 0})
    assert "m must exceed 1" in exc.value.problems
    assert "ensemble must be at least 1" in exc.value.problems


def test_unknown_key_named():
    with pytest.raises(ConfigError, match="unknown key 'colour'"):
        config_from_dict({"colour": "red"})


def test_parse_error_has_line(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text("m: 3\nR: [0.1,\n")
    with pytest.raises(ConfigError, match="line"):
        load_config(p)


def test_digest_is_stable():
    assert config_from_dict({}).digest() == config_from_dict({}).digest()
    assert config_from_dict({}).digest() != config_from_dict({"m": 5}).digest()


def test_field_roundtrip(tmp_path, rng):
    g = SpaceTimeGrid(d=1, nx=9)
    vals = rng.standard_normal(g.shape)
    paths = rio.write_field(tmp_path / "f.bin", vals, g, {"seed": 3})
    back, head = rio.read_field(paths[0])
    assert np.array_equal(back, vals)
    assert head == {"version": 1, "d": 1, "nx": 9, "nt": g.nt}
    assert paths[0].stat().st_size == 32 + 8 * vals.size
    side = json.loads(paths[1].read_text())
    assert side["seed"] == 3 and side["grid"]["nx"] == 9


def test_json_handles_non_finite(tmp_path):
    txt = rio.dumps({"a": float("inf"), "b": np.float64("nan"), "c": np.arange(2)})
    assert json.loads(txt) == {"a": "inf", "b": "nan", "c": [0, 1]}


def test_barrier_check_exit_zero(tmp_path):
    status, manifest = dispatch("barrier-check", config_from_dict({"kind": "polynomial", "m": 3, "d": 1}),
                                tmp_path)
    assert status == 0
    for name in manifest["outputs"]:
        assert (tmp_path / name).exists()
    assert manifest["config_hash"] == config_from_dict({}).digest()


def test_coming_down_with_empty_ensemble_exits_two(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("ensemble: 0\n")
    assert main(["coming-down", "--config", str(cfg), "--out", str(tmp_path / "o"), "--quiet"]) == 2
    assert not (tmp_path / "o").exists()


def test_unknown_command_rejected():
    with pytest.raises(SystemExit):
        main(["nope"])


def test_tails_on_sample_file(tmp_path):
    x = np.abs(np.random.default_rng(77).standard_normal(100_000))
    np.save(tmp_path / "s.npy", x)
    cfg = tmp_path / "c.yaml"
    cfg.write_text(f"samples_file: {tmp_path / 's.npy'}\nquantile: 0.55\n")
    out = tmp_path / "o"
    assert main(["tails", "--config", str(cfg), "--out", str(out), "--quiet"]) == 0
    beta = json.loads((out / "summary.json").read_text())["result"]["beta"]
    assert beta == pytest.approx(2.0, abs=0.15)


def test_identical_runs_identical_reports(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("n_fields: 3\nT: [0.125]\n")
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["commutator", "--config", str(cfg), "--out", str(a), "--quiet", "--seed", "9"]) == 0
    assert main(["commutator", "--config", str(cfg), "--out", str(b), "--quiet", "--seed", "9"]) == 0
    assert (a / "reports.csv").read_bytes() == (b / "reports.csv").read_bytes()
    ma = json.loads((a / "manifest.json").read_text())
    mb = json.loads((b / "manifest.json").read_text())
    for k in ("started", "finished"):
        ma.pop(k), mb.pop(k)
    assert ma == mb


def test_seed_override_validated(tmp_path):
    assert main(["barrier-check", "--out", str(tmp_path), "--seed", "-1", "--quiet"]) == 2


def test_coming_down_writes_fields(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("nx: 17\nensemble: 1\nM: [1, 100]\nR: [0.25]\nwrite_fields: true\n")
    out = tmp_path / "o"
    status = main(["coming-down", "--config", str(cfg), "--out", str(out), "--quiet", "--threads", "1"])
    assert status in (0, 1)
    bins = sorted(p.name for p in (out / "fields").glob("*.bin"))
    assert bins and all((out / "fields" / (b + ".json")).exists() for b in bins)
    manifest = json.loads((out / "manifest.json").read_text())
    assert all((out / name).exists() for name in manifest["outputs"])


def test_sklearn_wrappers():
    from sklearn.base import clone

    from rdbounds.estimators import NoiseNormTransformer, TailExponentEstimator
    from rdbounds.noise import CovarianceSpec, sample_noise
    from rdbounds.experiments import estimate_tail_exponent
    x = np.random.default_rng(5).exponential(size=20_000)
    est = clone(TailExponentEstimator(quantile=0.55)).fit(x)
    assert est.beta_ == estimate_tail_exponent(x, 0.55).beta
    assert est.threshold_ == pytest.approx(np.quantile(x, 0.55))
    assert np.isfinite(est.score(x))
    g = SpaceTimeGrid(d=1, nx=17).extended(1.0)
    feats = NoiseNormTransformer().fit_transform([sample_noise(g, CovarianceSpec("white"), s) for s in range(2)])
    assert feats.shape == (2, 2) and np.all(feats > 0)
