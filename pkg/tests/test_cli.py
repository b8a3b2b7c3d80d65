import hashlib
import json
import subprocess
import sys

import pytest

import mmprog.pipeline as pipeline
from mmprog.cli import EXIT_IO, EXIT_NUMERICAL, EXIT_OK, EXIT_VALIDATION, main
from mmprog.cohort import CSV_HEADER, FEATURES, SplitSpec, SyntheticSpec, split, generate_synthetic, load_csv, save_csv, spec_to_text
from mmprog.pipeline import PipelineError, ProtocolConfig, run_protocol
from mmprog.training import TrainConfig

FAST = ["--alphas", "0,8", "--permutations", "20", "--k", "3"]


def sha(path):
    return hashlib.sha256(open(path, "rb").read()).hexdigest()


@pytest.fixture(scope="module")
def small_csv(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "small.csv"
    save_csv(generate_synthetic(SyntheticSpec(n_patients=150, seed=4)), path)
    return path


@pytest.fixture(scope="module")
def aa_run(small_csv, tmp_path_factory):
    run = tmp_path_factory.mktemp("runs") / "aa"
    assert main(["pipeline", "--reg", "aa", "--cohort", str(small_csv), "--run-dir", str(run), *FAST]) == EXIT_OK
    return run


# ---------------------------------------------------------------- generate


def test_generate_default(tmp_path):
    out = tmp_path / "cohort.csv"
    assert main(["generate", "--n", "812", "--seed", "7", "--out", str(out)]) == EXIT_OK
    assert len(out.read_text().splitlines()) == 813
    manifest = json.loads((tmp_path / "cohort.manifest.json").read_text())
    assert manifest["output"]["cohort.csv"] == sha(out)
    out2 = tmp_path / "again.csv"
    main(["generate", "--n", "812", "--seed", "7", "--out", str(out2)])
    assert sha(out) == sha(out2)


def test_generate_errors(tmp_path, capsys):
    assert main(["generate", "--n", "0", "--out", str(tmp_path / "x.csv")]) == EXIT_VALIDATION
    flat = SyntheticSpec(risk_weights={"intercept": 0.0, "age": 0.0, "ldh": 0.0, "b2m": 0.0, "albumin": 0.0})
    spec = tmp_path / "flat.spec"
    spec.write_text(spec_to_text(flat))
    assert main(["generate", "--spec", str(spec), "--out", str(tmp_path / "y.csv")]) == EXIT_NUMERICAL
    assert "stage1" in capsys.readouterr().err
    assert main(["generate", "--n", "5", "--out", str(tmp_path / "no" / "dir.csv")]) == EXIT_IO


def test_generate_spec_file(tmp_path):
    spec = tmp_path / "s.spec"
    spec.write_text("seed = 3\nn_patients = 40\n")
    out = tmp_path / "c.csv"
    assert main(["generate", "--spec", str(spec), "--out", str(out)]) == EXIT_OK
    assert len(load_csv(out)) == 40


# ---------------------------------------------------------------- stage


def _stage_fixture(tmp_path, rows):
    lines = [",".join(CSV_HEADER)]
    for rid, (b2m, ldh, alb, age) in rows:
        vals = {"age": age, "albumin": alb, "ldh": ldh, "b2m": b2m}
        lines.append(",".join([rid, *(str(vals.get(f, "")) for f in FEATURES), "0"]))
    p = tmp_path / "c.csv"
    p.write_text("\n".join(lines) + "\n")
    return p


def test_stage_four_records(tmp_path):
    rows = [("a", (2.0, 200, 40, 60)), ("b", (6.0, 300, 30, 60)), ("c", (2.0, 240, 40, 60)), ("d", (2.0, 240, 40, 75))]
    out = tmp_path / "s.csv"
    assert main(["stage", "--cohort", str(_stage_fixture(tmp_path, rows)), "--out", str(out)]) == EXIT_OK
    assert out.read_text() == "id,stage\na,1\nb,3\nc,2\nd,1\n"


def test_stage_empty_and_negative(tmp_path, capsys):
    out = tmp_path / "s.csv"
    assert main(["stage", "--cohort", str(_stage_fixture(tmp_path, [])), "--out", str(out)]) == EXIT_OK
    assert out.read_text() == "id,stage\n"
    bad = _stage_fixture(tmp_path, [("ok", (2.0, 200, 40, 60)), ("neg7", (2.0, -1, 40, 60))])
    assert main(["stage", "--cohort", str(bad), "--out", str(out)]) != EXIT_OK
    assert "neg7" in capsys.readouterr().err
    assert main(["stage", "--cohort", str(tmp_path / "missing.csv"), "--out", str(out)]) == EXIT_IO


# ---------------------------------------------------------------- pipeline


def test_pipeline_outputs(aa_run):
    names = {p.name for p in aa_run.iterdir()}
    assert {"aa_metr_test.csv", "aa_loss_test.csv", "shap_ranks_aa.csv", "baselines.csv", "manifest.json"} <= names
    manifest = json.loads((aa_run / "manifest.json").read_text())
    assert manifest["status"] == "complete"
    assert manifest["id_flow"]["test_ids_in_training"] == 0
    cohort = load_csv(manifest["input"]["path"])
    _, _, test = split(cohort, SplitSpec(seed=manifest["config"]["split"]["seed"]))
    used = set().union(*map(set, manifest["id_flow"]["ids"].values()))
    assert used and not used & set(test.ids)
    for name, digest in manifest["outputs"].items():
        assert sha(aa_run / name) == digest
    assert (aa_run / "shap_ranks_aa.csv").read_text().startswith("alpha,rank1,rank2,rank3\n")
    assert len((aa_run / "aa_loss_test.csv").read_text().splitlines()) == 3


def test_pipeline_rerun_from_manifest(aa_run, tmp_path):
    rerun = tmp_path / "rerun"
    assert main(["pipeline", "--manifest", str(aa_run / "manifest.json"), "--run-dir", str(rerun)]) == EXIT_OK
    a = json.loads((aa_run / "manifest.json").read_text())["outputs"]
    b = json.loads((rerun / "manifest.json").read_text())["outputs"]
    assert a == b


def test_pipeline_refuses_existing_dir(aa_run, small_csv):
    assert main(["pipeline", "--reg", "aa", "--cohort", str(small_csv), "--run-dir", str(aa_run)]) == EXIT_IO


def test_pipeline_validation_errors(tmp_path, small_csv):
    text = small_csv.read_text().splitlines()
    b2m = CSV_HEADER.index("b2m")
    dropped = "\n".join(",".join(c for j, c in enumerate(line.split(",")) if j != b2m) for line in text) + "\n"
    nob2m = tmp_path / "nob2m.csv"
    nob2m.write_text(dropped)
    run = tmp_path / "r"
    assert main(["pipeline", "--reg", "stage", "--cohort", str(nob2m), "--run-dir", str(run)]) == EXIT_VALIDATION
    assert not run.exists()  # rejected before any output
    assert main(["pipeline", "--reg", "stage", "--cohort", str(small_csv), "--alphas", "3:1:1", "--run-dir", str(run)]) == EXIT_VALIDATION
    assert main(["pipeline", "--cohort", str(small_csv)]) == EXIT_VALIDATION


def test_pipeline_timestamped_dirs(tmp_path, small_csv):
    args = ["pipeline", "--reg", "stage", "--cohort", str(small_csv), "--out-dir", str(tmp_path), "--alphas", "0", "--permutations", "5", "--k", "2"]
    assert main(args) == EXIT_OK
    assert main(args) == EXIT_OK
    runs = sorted(p.name for p in tmp_path.iterdir())
    assert len(runs) == 2 and all(r.startswith("run-") for r in runs)


def test_failed_stage_is_recorded(tmp_path, monkeypatch):
    cohort = generate_synthetic(SyntheticSpec(n_patients=80, seed=1))

    def boom(*a, **k):
        raise FloatingPointError("synthetic failure")

    monkeypatch.setattr(pipeline, "run_sweep", boom)
    config = ProtocolConfig(k=2, grid=[TrainConfig((len(FEATURES), 4, 1), 0.05, 2)], alphas=(0.0,))
    with pytest.raises(PipelineError) as info:
        run_protocol(cohort, config, tmp_path)
    assert info.value.stage == "sweep"
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["status"] == "failed" and manifest["failed_stage"] == "sweep"
    assert "splits" in manifest  # earlier stages are retained


def test_module_entry_point(tmp_path):
    out = tmp_path / "c.csv"
    proc = subprocess.run(
        [sys.executable, "-m", "mmprog", "generate", "--n", "20", "--out", str(out)], capture_output=True, text=True
    )
    assert proc.returncode == 0, proc.stderr
    assert len(out.read_text().splitlines()) == 21
