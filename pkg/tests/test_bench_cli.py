import json
import subprocess
import sys
from dataclasses import asdict

import numpy as np
import pytest

from conceptkit import cli
from conceptkit.bench import (FAILURE_STAGES, STAGES, BenchmarkConfig, ConfigError, load_config, make_scene,
                              run_benchmark, run_trial, synth_dataset, trial_seeds)
from conceptkit.dsl import library_files
from conceptkit.geometry import Primitive, PrimitiveAssembly, RigidTransform, sample_surface
from conceptkit.pointio import read_cloud, write_cloud
from conceptkit.sim import synth_object
from oracles import synth_part
from test_dsl import SPHERE

SMALL = dict(trials={"cabinet": 1, "pot": 1}, n_points=4096, candidates=8)


def run(capsys, *argv):
    code = cli.main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


# -- config ------------------------------------------------------------------------

@pytest.mark.parametrize("bad", [
    {"trial": {"cabinet": 1}},
    {"trials": {"fridge": 1}},
    {"trials": {"cabinet": 0}},
    {"oracle_stages": ["pose-ish"]},
    {"modes": ["greedy"]},
    {"elevation_range": [20, 50]},
    {"azimuth_range": [10, -10]},
    {"backend": "cloud"},
    {"n_points": 0},
])
def test_config_fails_fast(bad):
    with pytest.raises(ConfigError):
        BenchmarkConfig.from_json(bad)


def test_config_file(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"trials": {"drawer": 2}, "oracle_stages": ["all", "pose"]}))
    cfg = load_config(p)
    assert cfg.oracle_stages == ("force", "grounding")
    assert BenchmarkConfig.from_json(cfg.to_json()) == cfg
    p.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(p)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")


def test_trial_seeds_independent_of_order():
    a = trial_seeds(0, "cabinet", 3)
    assert a == trial_seeds(0, "cabinet", 3)
    assert a != trial_seeds(0, "cabinet", 4) and a != trial_seeds(1, "cabinet", 3)
    assert a != trial_seeds(0, "drawer", 3)


def test_scene_camera_in_range():
    cfg = BenchmarkConfig(**SMALL)
    for i in range(20):
        _, _, (az, el), view, labels = make_scene("cabinet", i, cfg)
        assert 30 <= el <= 60 and (az <= 80 or az >= 280)
        assert len(view) == cfg.n_points == len(labels)


# -- runs ------------------------------------------------------------------------------

@pytest.fixture(scope="module")
def small_run():
    cfg = BenchmarkConfig(**SMALL, oracle_stages=("none", "grounding"), modes=("estimated", "sampled"))
    return cfg, run_benchmark(cfg)


def test_histogram_sums_to_trials(small_run):
    cfg, (report, trials) = small_run
    assert len(trials) == sum(cfg.trials.values())
    for mode in cfg.modes:
        for stage in cfg.oracle_stages:
            r = report.results[mode][stage]
            assert set(r["histogram"]) == {"success", *FAILURE_STAGES}
            assert sum(r["histogram"].values()) == len(trials)
            for a, v in r["archetypes"].items():
                assert sum(v["histogram"].values()) == v["trials"] == cfg.trials[a]


def test_failures_charged_to_later_stages(small_run):
    _, (_, trials) = small_run
    order = {s: i for i, s in enumerate(FAILURE_STAGES)}
    for t in trials:
        for mode, levels in t["results"].items():
            for k, stage in enumerate(STAGES):
                r = levels.get(stage)
                if r is None or r["success"]:
                    continue
                # only stages after the replaced ones can be blamed
                assert order[r["stage"]] >= k - 1 or r["stage"] == "rollout"


def test_small_run_deterministic(small_run):
    cfg, (report, trials) = small_run
    again, trials2 = run_benchmark(cfg)
    assert again.dumps() == report.dumps()
    assert json.dumps(trials, sort_keys=True) == json.dumps(trials2, sort_keys=True)


def test_report_table(small_run):
    _, (report, _) = small_run
    text = report.table()
    assert "cabinet" in text and "per-arch" in text and "rollout" in text


def test_single_trial_matches_run(small_run):
    cfg, (_, trials) = small_run
    assert json.dumps(run_trial("pot", 0, cfg), sort_keys=True) == \
        json.dumps(next(t for t in trials if t["archetype"] == "pot"), sort_keys=True)


# -- dataset ---------------------------------------------------------------------------

def test_synth_manifest_reproduces(tmp_path):
    m = synth_dataset("drawer", 2, 5, tmp_path / "a", BenchmarkConfig(**SMALL))
    synth_dataset("drawer", 2, 5, tmp_path / "b", BenchmarkConfig(**SMALL))
    for name in ["manifest.json"] + [it[k] for it in m["items"] for k in ("object", "view", "labels")]:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    it = m["items"][1]
    obj = synth_object("drawer", seed=it["seeds"]["object"])
    saved = json.loads((tmp_path / "a" / it["object"]).read_text())
    assert saved["links"] == json.loads(obj.dumps())["links"]
    assert len(read_cloud(tmp_path / "a" / it["view"])) == SMALL["n_points"]


# -- cli ------------------------------------------------------------------------------

def test_cli_version(capsys):
    code, out, _ = run(capsys, "version", "--json")
    assert code == 0 and json.loads(out)["name"] == "artifact"


def test_cli_module_entry():
    r = subprocess.run([sys.executable, "-m", "conceptkit", "version"], capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.startswith("conceptkit ")


def test_cli_validate_shipped(capsys):
    code, out, _ = run(capsys, "validate", "--samples", "100", *map(str, library_files()))
    assert code == 0 and out.count("ok") == len(library_files())


def test_cli_validate_positivity(tmp_path, capsys):
    p = tmp_path / "bad.acon"
    p.write_text(SPHERE.replace("size r at", "size r - 0.2 at"))
    code, _, err = run(capsys, "validate", str(p))
    assert code == 1 and "positivity" in err


def test_cli_validate_parse_error(tmp_path, capsys):
    p = tmp_path / "broken.acon"
    p.write_text("concept\n")
    code, _, err = run(capsys, "validate", str(p))
    assert code == 1 and "broken.acon" in err


def test_cli_validate_missing(tmp_path, capsys):
    code, _, _ = run(capsys, "validate", str(tmp_path / "nope.acon"))
    assert code == 2


def test_cli_usage_error(capsys):
    assert run(capsys, "frobnicate")[0] == 2


def test_cli_ground_and_grasp(tmp_path, capsys):
    P, theta, T = synth_part("U_Handle", 3)
    cloud = tmp_path / "part.ply"
    write_cloud(cloud, P)
    code, out, _ = run(capsys, "ground", str(cloud), "--concept", "U_Handle", "--seed", "1")
    assert code == 0
    assert run(capsys, "ground", str(cloud), "--concept", "U_Handle", "--seed", "1")[1] == out
    g = json.loads(out)
    assert g["concept_id"] == "U_Handle"
    gpath = tmp_path / "g.json"
    gpath.write_text(out)
    code, out, _ = run(capsys, "grasp", str(cloud), "--grounding", str(gpath), "--k", "8")
    assert code == 0 and 0 < json.loads(out)["score"] < 1


def test_cli_ground_by_group(tmp_path, capsys):
    P, _, _ = synth_part("Round_Lid", 1)
    cloud = tmp_path / "lid.xyz"
    write_cloud(cloud, P)
    code, out, _ = run(capsys, "ground", str(cloud), "--group", "lid", "--task", "lift the round lid")
    assert code == 0 and json.loads(out)["concept_id"] in ("Round_Lid", "Box_Lid")


def test_cli_ground_diverges(tmp_path, capsys):
    asm = PrimitiveAssembly((Primitive("Cuboid", [0.4, 0.3, 0.01], RigidTransform()),))
    cloud = tmp_path / "board.ply"
    write_cloud(cloud, sample_surface(asm, 3000, 0))
    assert run(capsys, "ground", str(cloud), "--concept", "Sphere_Cap")[0] == 3


def test_cli_ground_bad_inputs(tmp_path, capsys):
    assert run(capsys, "ground", str(tmp_path / "none.ply"), "--concept", "U_Handle")[0] == 2
    cloud = tmp_path / "c.xyz"
    write_cloud(cloud, synth_part("U_Handle", 0)[0])
    assert run(capsys, "ground", str(cloud), "--concept", "Nope")[0] == 2
    assert run(capsys, "ground", str(cloud), "--group", "nope")[0] == 2


def test_cli_synth(tmp_path, capsys):
    code, out, _ = run(capsys, "synth", "laptop", "-n", "1", "--out", str(tmp_path / "d"), "--json")
    assert code == 0 and json.loads(out)["items"][0]["object"] == "laptop_0000.json"
    assert run(capsys, "synth", "fridge", "--out", str(tmp_path / "e"))[0] == 2


def test_cli_bench(tmp_path, capsys):
    cfg = tmp_path / "b.json"
    cfg.write_text(json.dumps({**SMALL, "trials": {"drawer": 1}}))
    code, out, _ = run(capsys, "bench", "--config", str(cfg), "--json", "--oracle-stage", "all")
    assert code == 0
    rep = json.loads(out)
    assert rep["results"]["estimated"]["force"]["archetypes"]["drawer"]["trials"] == 1
    code, out, _ = run(capsys, "bench", "--config", str(cfg), "--oracle-stage", "all")
    assert code == 0 and "drawer" in out


def test_cli_bench_bad_config(tmp_path, capsys):
    cfg = tmp_path / "b.json"
    cfg.write_text(json.dumps({"trials": {"drawer": 1}, "colour": "red"}))
    assert run(capsys, "bench", "--config", str(cfg))[0] == 2
    assert run(capsys, "bench", "--oracle-stage", "everything")[0] == 2
