import csv
import io
import json

import pytest

from polarosd.cli import EXIT_ARTIFACT, EXIT_CONFIG, EXIT_OK, main
from polarosd.pcm import deserialize, pruned_pcm_for
from polarosd.polar import make_code


def write(tmp_path, name, doc):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


BASE = {"n": 5, "m": 10, "channel": "bec", "points": [0.3, 0.45], "decoder": "ml", "trials": 60, "chunk": 30}


def test_build_pcm_then_run(tmp_path):
    art = tmp_path / "p.bin"
    assert main(["build-pcm", "--n", "5", "--m", "10", "--out", str(art)]) == EXIT_OK
    assert deserialize(art.read_bytes()) == pruned_pcm_for(make_code(5, 10))
    cfg = write(tmp_path, "c.json", {**BASE, "pcm_path": str(art)})
    out = tmp_path / "r.csv"
    assert main(["run", "--config", cfg, "--seed", "9", "--workers", "2", "--out", str(out)]) == EXIT_OK
    rows = list(csv.DictReader(io.StringIO(out.read_text())))
    assert [float(r["point"]) for r in rows] == [0.3, 0.45]


def test_build_pcm_from_config(tmp_path):
    cfg = write(tmp_path, "c.json", BASE)
    art = tmp_path / "p.bin"
    assert main(["build-pcm", "--config", cfg, "--out", str(art)]) == EXIT_OK
    assert art.stat().st_size > 0


def test_run_json_to_stdout(tmp_path, capsysbinary):
    cfg = write(tmp_path, "c.json", BASE)
    assert main(["run", "--config", cfg, "--format", "json"]) == EXIT_OK
    doc = json.loads(capsysbinary.readouterr().out)
    assert len(doc["points"]) == 2


def test_seed_override_is_deterministic(tmp_path):
    cfg = write(tmp_path, "c.json", {**BASE, "points": [0.5]})
    outs = []
    for k in range(2):
        out = tmp_path / f"r{k}.json"
        main(["run", "--config", cfg, "--seed", "123", "--format", "json", "--out", str(out)])
        outs.append(json.loads(out.read_text())["points"][0])
    for o in outs:
        o.pop("seconds")
    assert outs[0] == outs[1]


def test_compare(tmp_path, capsysbinary):
    a = write(tmp_path, "a.json", BASE)
    b = write(tmp_path, "b.json", {**BASE, "decoder": "bp"})
    assert main(["compare", "--config", a, "--config", b]) == EXIT_OK
    doc = json.loads(capsysbinary.readouterr().out)
    assert all(p["a_only"] == 0 for p in doc["points"])


def test_compare_needs_two_configs(tmp_path):
    a = write(tmp_path, "a.json", BASE)
    assert main(["compare", "--config", a]) == EXIT_CONFIG


def test_compare_mismatch(tmp_path):
    a = write(tmp_path, "a.json", BASE)
    b = write(tmp_path, "b.json", {**BASE, "m": 12})
    assert main(["compare", "--config", a, "--config", b]) == EXIT_CONFIG


@pytest.mark.parametrize(
    "doc",
    [{**BASE, "points": [2.0]}, {**BASE, "decoder": "magic"}, [1, 2]],
)
def test_invalid_config_exit_code(tmp_path, doc):
    assert main(["run", "--config", write(tmp_path, "c.json", doc)]) == EXIT_CONFIG


def test_malformed_and_missing_config(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["run", "--config", str(bad)]) == EXIT_CONFIG
    assert main(["run", "--config", str(tmp_path / "none.json")]) == EXIT_CONFIG
    assert main(["run"]) == EXIT_CONFIG


def test_missing_and_corrupt_artifact(tmp_path):
    cfg = write(tmp_path, "c.json", {**BASE, "pcm_path": str(tmp_path / "missing.bin")})
    assert main(["run", "--config", cfg]) == EXIT_ARTIFACT
    junk = tmp_path / "junk.bin"
    junk.write_bytes(b"PPCM" + b"\0" * 40)
    cfg = write(tmp_path, "d.json", {**BASE, "pcm_path": str(junk)})
    assert main(["run", "--config", cfg]) == EXIT_ARTIFACT


def test_artifact_for_other_code_is_config_error(tmp_path):
    art = tmp_path / "p.bin"
    main(["build-pcm", "--n", "6", "--m", "26", "--out", str(art)])
    cfg = write(tmp_path, "c.json", {**BASE, "pcm_path": str(art)})
    assert main(["run", "--config", cfg]) == EXIT_CONFIG
