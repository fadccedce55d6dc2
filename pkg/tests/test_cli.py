import csv
import json
from pathlib import Path

import pytest

from sigmaq.cli import (
    EXIT_CONFIG,
    EXIT_FAILED,
    EXIT_OK,
    EXIT_RUNTIME,
    ConfigError,
    load_config,
    main,
    parse_config,
)
from sigmaq.experiments import REGISTRY

CONFIGS = sorted((Path(__file__).resolve().parents[1] / "configs").glob("*.yaml"))

SMALL = """\
experiment: transform_check
master_seed: 7
n_paths: 2000
grid:
  t_end: 4.0
  dt: 0.015625
params:
  times: [1.0, 4.0]
"""


def write(tmp_path, text, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def load_report(path):
    rep = json.loads(Path(path).read_text())
    rep.pop("wall_clock_s")
    return rep


def test_shipped_configs_parse_and_cover_registry():
    names = {load_config(str(p)).experiment for p in CONFIGS}
    assert names == set(REGISTRY)


def test_run_passes_and_writes_json(tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", write(tmp_path, SMALL), "--out-dir", str(out)]) == EXIT_OK
    rep = json.loads((out / "transform_check.json").read_text())
    assert rep["passed"] and rep["n_failed"] == 0
    assert rep["config"]["master_seed"] == 7 and rep["config"]["ci_level"] == 0.99
    t = rep["tests"][0]
    assert {"name", "passed", "z", "allowance", "lhs_ci", "rhs_ci"} <= set(t)
    assert "[PASS]" in capsys.readouterr().out


def test_failing_test_exits_one(tmp_path):
    text = """\
experiment: extension_failure_demo
n_paths: 500
grid: {dt: 0.015625}
params:
  t_list: [1.0, 2.0]
  bracket: [0.0, 0.1]
"""
    assert main(["run", write(tmp_path, text), "--out-dir", str(tmp_path)]) == EXIT_FAILED


@pytest.mark.parametrize("text,line", [
    (SMALL.replace("dt: 0.015625", "dt: 0"), 6),
    (SMALL.replace("dt: 0.015625", "dt: -0.5"), 6),
    (SMALL.replace("n_paths: 2000", "n_paths: 2.5"), 3),
    (SMALL + "  bogus: 1\n", 9),
    (SMALL + "colour: red\n", 9),
    (SMALL.replace("transform_check", "nonexistent"), 1),
])
def test_bad_config_exits_two_with_line(tmp_path, capsys, text, line):
    path = write(tmp_path, text)
    with pytest.raises(ConfigError) as info:
        load_config(path)
    assert info.value.line == line
    assert main(["run", path, "--out-dir", str(tmp_path)]) == EXIT_CONFIG
    assert f"{path}:{line}" in capsys.readouterr().err


def test_config_that_only_fails_inside_the_run_exits_two(tmp_path):
    # dt does not divide t_end
    text = SMALL.replace("dt: 0.015625", "dt: 0.3")
    assert main(["run", write(tmp_path, text), "--out-dir", str(tmp_path)]) == EXIT_CONFIG


def test_misc_config_errors():
    with pytest.raises(ConfigError):
        parse_config("- a list\n")
    with pytest.raises(ConfigError):
        parse_config("experiment: [unclosed\n")
    with pytest.raises(ConfigError):
        parse_config(SMALL + "ci_level: 1.5\n")
    cfg = parse_config(SMALL.replace("master_seed", "seed"))
    assert cfg.master_seed == 7 and cfg.params["t_end"] == 4.0


def test_runtime_error_exits_three(tmp_path):
    blocker = tmp_path / "not_a_dir"
    blocker.write_text("")
    assert main(["run", write(tmp_path, SMALL), "--out-dir", str(blocker / "sub")]) == EXIT_RUNTIME


def test_usage_errors_exit_two(tmp_path):
    assert main(["suite", "medium", "--out-dir", str(tmp_path)]) == EXIT_CONFIG
    assert main(["frobnicate"]) == EXIT_CONFIG
    assert main(["run"]) == EXIT_CONFIG
    assert main(["run", str(tmp_path / "missing.yaml")]) == EXIT_CONFIG
    assert main(["run", write(tmp_path, SMALL), "--threads", "0"]) == EXIT_CONFIG


def test_list_is_sorted_with_anchors(capsys):
    assert main(["list"]) == EXIT_OK
    lines = capsys.readouterr().out.strip().splitlines()
    names = [ln.split()[0] for ln in lines]
    assert names == sorted(REGISTRY)
    for ln, name in zip(lines, names):
        assert ln.rstrip().endswith(f"[{REGISTRY[name].anchor}]")


def test_reports_identical_across_reruns_and_threads(tmp_path):
    path = write(tmp_path, SMALL)
    reps = []
    for i, threads in enumerate(("1", "1", "3")):
        out = tmp_path / f"run{i}"
        assert main(["run", path, "--out-dir", str(out), "--threads", threads]) == EXIT_OK
        reps.append(load_report(out / "transform_check.json"))
    assert reps[0] == reps[1] == reps[2]


def test_seed_flag_overrides_config(tmp_path):
    path = write(tmp_path, SMALL)
    main(["run", path, "--out-dir", str(tmp_path / "a")])
    main(["run", path, "--out-dir", str(tmp_path / "b"), "--seed", "8"])
    a, b = (load_report(tmp_path / d / "transform_check.json") for d in "ab")
    assert b["config"]["master_seed"] == 8 and a["tests"] != b["tests"]


def test_curves_written_as_csv(tmp_path):
    text = """\
experiment: penalisation_curve
n_paths: 2000
grid: {dt: 0.015625}
params:
  t_list: [16.0, 64.0]
"""
    assert main(["run", write(tmp_path, text), "--out-dir", str(tmp_path / "o")]) == EXIT_OK
    files = list((tmp_path / "o").glob("penalisation_curve__*.csv"))
    assert files
    with files[0].open() as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["t", "value", "se"]
    assert [float(r[0]) for r in rows[1:]] == [16.0, 64.0]
