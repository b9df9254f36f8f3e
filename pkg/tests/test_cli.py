import json
import pathlib

import pytest

from defect_homog import cli
from defect_homog.config import config_hash

from conftest import config_path


def _write_config(tmp_path, name="cubic", **changes):
    doc = json.loads(pathlib.Path(config_path(name)).read_text())
    doc.update(changes)
    path = tmp_path / f"{name}_mod.json"
    path.write_text(json.dumps(doc))
    return str(path)


def _run(capsys, *argv):
    code = cli.run(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_check_cubic_prints_alpha(tmp_path, capsys):
    code, out, _ = _run(capsys, "check", "--config", config_path("cubic"),
                        "--out-dir", str(tmp_path))
    assert code == 0
    assert "alpha = " in out and "degenerate = false" in out


def test_malformed_expression_exit_2(tmp_path, capsys):
    cfg = _write_config(tmp_path, d=["u1^3 + * u1"])
    code, _, err = _run(capsys, "check", "--config", cfg, "--out-dir", str(tmp_path))
    assert code == 2
    assert "ParseError" in err and "[offset 7]" in err
    assert len(err.strip().splitlines()) == 1


def test_unknown_key_exit_2(tmp_path, capsys):
    cfg = _write_config(tmp_path, colour="blue")
    code, _, err = _run(capsys, "homogenize", "--config", cfg, "--out-dir", str(tmp_path))
    assert code == 2 and "ConfigError" in err


def test_missing_config_exit_2(tmp_path, capsys):
    code, _, err = _run(capsys, "check", "--config", str(tmp_path / "nope.json"))
    assert code == 2 and "cannot read" in err


def test_stiff_solve_exit_3_with_trace(tmp_path, capsys):
    code, _, err = _run(capsys, "solve", "--config", config_path("stiff"),
                        "--epsilon", "0.5", "--out-dir", str(tmp_path))
    assert code == 3
    assert "q_k trace written to" in err
    trace = pathlib.Path(err.strip().rsplit(" ", 1)[-1])
    doc = json.loads(trace.read_text())
    assert doc["eps"] == 0.5 and len(doc["contraction_factors"]) > 0


def test_degenerate_check_exit_3(tmp_path, capsys):
    code, out, err = _run(capsys, "check", "--config", config_path("degenerate"),
                          "--out-dir", str(tmp_path))
    assert code == 3 and "Degenerate" in err


def test_cap_exceeded_exit_4(tmp_path, capsys):
    cfg = _write_config(tmp_path, mesh={"N_target": 256, "cap": 64})
    code, _, err = _run(capsys, "solve", "--config", cfg, "--epsilon", "0.125",
                        "--out-dir", str(tmp_path))
    assert code == 4 and "MeshTooFine" in err


def test_oracle_refine_beyond_cap_exit_4(tmp_path, capsys):
    cfg = _write_config(tmp_path, mesh={"N_target": 256, "cap": 600})
    code, _, err = _run(capsys, "oracle-compare", "--config", cfg, "--refine", "4",
                        "--out-dir", str(tmp_path))
    assert code == 4


def test_bad_epsilon_exit_2(tmp_path, capsys):
    code, _, _ = _run(capsys, "solve", "--config", config_path("linear"),
                      "--epsilon", "-1", "--out-dir", str(tmp_path))
    assert code == 2


def _outputs(tmp_path, tag, capsys, seed="3"):
    out = tmp_path / tag
    for argv in (["homogenize"], ["solve", "--epsilon", "0.0625"], ["averaging"]):
        code = cli.run(argv + ["--config", config_path("linear"), "--out-dir", str(out),
                               "--seed", seed])
        assert code == 0
    capsys.readouterr()
    return {p.name: p.read_bytes() for p in sorted(out.iterdir())}


def test_outputs_byte_identical_and_tagged(tmp_path, capsys):
    a = _outputs(tmp_path, "a", capsys)
    b = _outputs(tmp_path, "b", capsys)
    assert a == b and len(a) >= 4
    digest = config_hash(pathlib.Path(config_path("linear")).read_text())
    for name, blob in a.items():
        text = blob.decode()
        assert digest in text, name
        if name.endswith(".json"):
            assert json.loads(text)["seed"] == 3
        else:
            assert "# seed=3" in text


def test_seed_changes_averaging_output(tmp_path, capsys):
    a = _outputs(tmp_path, "a", capsys, seed="3")
    b = _outputs(tmp_path, "b", capsys, seed="4")
    avg = [n for n in a if n.startswith("averaging")]
    assert avg and any(a[n] != b[n] for n in avg)


@pytest.mark.parametrize("command", ["rates", "sweep-defects"])
def test_rate_commands_report_checks(tmp_path, capsys, command):
    cfg = _write_config(tmp_path, name="linear", mesh={"N_target": 64})
    code = cli.run([command, "--config", cfg, "--out-dir", str(tmp_path)]
                   + [f"--epsilon={2.0**-k}" for k in range(3, 7)])
    capsys.readouterr()
    assert code == 0
    docs = [json.loads(p.read_text()) for p in tmp_path.glob("*.json")]
    checks = [d["checks"] for d in docs if "checks" in d]
    assert checks and all(all(c.values()) for c in checks)
