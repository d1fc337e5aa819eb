import json
import os

import pytest
import yaml

from shelab import cli
from shelab.config import ConfigError, canonical_digest, config_from_mapping, parse_config
from shelab.persist import MANIFEST_KEYS, read_manifest, to_jsonable

BASE = {
    "grid": {"d": 1, "L": 4.0, "N": 64},
    "model": {"variant": "white"},
    "initial": {"atoms": [{"x": 0.0, "mass": 1.0}]},
    "rho": {"kind": "linear", "lam": 1.0},
    "scheme": {"name": "exp_euler", "dt": 0.02, "T": 0.2},
    "experiment": {"name": "simulate", "params": {"snapshot_times": [0.1, 0.2]}},
    "seed": 1,
    "replicas": 64,
}


def write(tmp_path, data, name="run.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(data))
    return str(path)


def with_(**blocks):
    out = json.loads(json.dumps(BASE))
    for k, v in blocks.items():
        out[k] = v
    return out


def errors_of(data):
    with pytest.raises(ConfigError) as info:
        config_from_mapping(data)
    return info.value.errors


def test_defaults_filled():
    cfg = config_from_mapping(BASE)
    assert cfg.scheme["n_batches"] == 32
    assert cfg.params["x"] == 0.0
    assert cfg.output_dir == "results"


def test_unknown_keys_reported_with_paths():
    errs = errors_of(with_(grid={"d": 1, "L": 4.0, "N": 64, "M": 3}, colour="red"))
    assert "grid.M: unknown key" in errs and "colour: unknown key" in errs


def test_all_errors_collected():
    errs = errors_of(with_(grid={"d": 1, "L": "wide", "N": 100}, rho={"kind": "cubic"}))
    assert any(e.startswith("grid.L: expected") for e in errs)
    assert any(e.startswith("grid.N:") for e in errs)
    assert any(e.startswith("rho.kind:") for e in errs)


def test_grid_n_must_be_power_of_two():
    assert "grid.N: must be a power of two >= 8" in errors_of(with_(grid={"d": 1, "L": 4.0, "N": 100}))


def test_white_noise_needs_one_dimension():
    errs = errors_of(with_(grid={"d": 2, "L": 4.0, "N": 64}))
    assert "model.variant: white noise requires grid.d = 1" in errs


def test_bool_is_not_a_number():
    assert any("replicas" in e for e in errors_of(with_(replicas=True)))


def test_jump_scheme_constraints():
    errs = errors_of(with_(scheme={"name": "jump", "dt": 0.02, "T": 0.2}))
    assert "scheme.eps: required for the jump scheme" in errs
    errs = errors_of(with_(scheme={"name": "jump", "dt": 0.02, "T": 0.2, "eps": 0.01}))
    assert "scheme.dt: the jump scheme needs dt <= eps" in errs


def test_yaml_exponent_strings_are_numbers(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text(yaml.safe_dump(BASE).replace("dt: 0.02", "dt: 2e-2"))
    assert parse_config(str(path)).scheme["dt"] == 0.02


def test_digest_ignores_key_order_and_output_dir():
    a = config_from_mapping(BASE)
    shuffled = dict(reversed(list(BASE.items())))
    shuffled["output_dir"] = "elsewhere"
    b = config_from_mapping(shuffled)
    assert a.digest == b.digest
    assert a.with_overrides(seed=2).digest != a.digest


def test_canonical_digest_sorted():
    assert canonical_digest({"a": 1, "b": [1.5]}) == canonical_digest({"b": [1.5], "a": 1})


def test_to_jsonable_nonfinite():
    assert to_jsonable({"x": float("nan"), "y": [float("inf")]}) == {"x": "nan", "y": ["inf"]}


def test_missing_file_is_config_error(tmp_path):
    with pytest.raises(ConfigError):
        parse_config(str(tmp_path / "absent.yaml"))


def test_cli_simulate_writes_manifest_and_is_byte_stable(tmp_path, capsys):
    cfg = write(tmp_path, BASE)
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert cli.main(["simulate", "--config", cfg, "--out", str(out1)]) == 0
    assert cli.main(["simulate", "--config", cfg, "--out", str(out2)]) == 0
    for name in ("simulate.csv", "simulate.manifest.json"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes()
    man = read_manifest(out1 / "simulate.manifest.json")
    assert set(MANIFEST_KEYS) <= set(man)
    assert man["seed"] == 1 and man["verdicts"] == {"no_blowup": "pass"}
    assert man["config_digest"] == config_from_mapping(BASE).digest
    assert len(man["noise_hash"]) == 64
    header = (out1 / "simulate.csv").read_text().splitlines()[0]
    assert header == "t,mean_u,second_moment,ci_lo,ci_hi,mean_mass,min_u,replicas"
    assert "manifest:" in capsys.readouterr().out


def test_cli_seed_override_changes_noise(tmp_path):
    cfg = write(tmp_path, BASE)
    cli.main(["simulate", "--config", cfg, "--out", str(tmp_path / "a")])
    cli.main(["simulate", "--config", cfg, "--out", str(tmp_path / "b"), "--seed", "9", "--replicas", "32"])
    a = read_manifest(tmp_path / "a" / "simulate.manifest.json")
    b = read_manifest(tmp_path / "b" / "simulate.manifest.json")
    assert a["noise_hash"] != b["noise_hash"] and b["seed"] == 9
    assert b["config"]["replicas"] == 32


def test_cli_exit_code_on_config_error(tmp_path, capsys):
    cfg = write(tmp_path, with_(grid={"d": 1, "L": 4.0, "N": 100}))
    assert cli.main(["simulate", "--config", cfg, "--out", str(tmp_path)]) == 1
    assert "grid.N" in capsys.readouterr().err


def test_cli_subcommand_must_match(tmp_path, capsys):
    cfg = write(tmp_path, BASE)
    assert cli.main(["holder", "--config", cfg, "--out", str(tmp_path)]) == 1
    assert "experiment.name" in capsys.readouterr().err


def test_cli_inconclusive_exit_code(tmp_path):
    data = with_(experiment={"name": "holder", "params": {"lags": [8, 16, 32]}})
    cfg = write(tmp_path, data)
    assert cli.main(["holder", "--config", cfg, "--out", str(tmp_path)]) == 2
    man = read_manifest(tmp_path / "holder.manifest.json")
    assert man["status"] == "inconclusive"


def test_cli_fail_exit_code(tmp_path):
    data = with_(experiment={"name": "weak-trace", "params": {"t_ladder": [0.2, 0.1], "tolerance": 1e-6}},
                 scheme={"name": "exp_euler", "dt": 0.02, "T": 0.2})
    cfg = write(tmp_path, data)
    assert cli.main(["weak-trace", "--config", cfg, "--out", str(tmp_path)]) == 1
    assert os.path.exists(tmp_path / "weak_trace.csv")


def test_cli_unwritable_output(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    cfg = write(tmp_path, BASE)
    assert cli.main(["simulate", "--config", cfg, "--out", str(blocker / "sub")]) == 1


def test_shipped_configs_validate():
    root = os.path.join(os.path.dirname(__file__), os.pardir, "configs")
    names = sorted(f for f in os.listdir(root) if f.endswith(".yaml"))
    assert names
    for f in names:
        parse_config(os.path.join(root, f))
