import json
import subprocess
import sys
from importlib import resources

import jsonschema
import pytest

from dualwaf.cli import main


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def small_data(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "corpus.jsonl"
    assert main(["--seed", "3", "gen-corpus", "--size", "250", "--out", str(path)]) == 0
    return str(path)


def schema(name):
    return json.loads(resources.files("dualwaf").joinpath(f"schemas/{name}").read_text())


def test_gen_corpus_reproducible(tmp_path, capsys):
    a, b, c = (tmp_path / n for n in ("a.jsonl", "b.jsonl", "c.jsonl"))
    assert run(capsys, "--seed", "5", "gen-corpus", "--size", "100", "--out", str(a))[0] == 0
    assert run(capsys, "--seed", "5", "gen-corpus", "--size", "100", "--out", str(b))[0] == 0
    assert run(capsys, "--seed", "6", "gen-corpus", "--size", "100", "--out", str(c))[0] == 0
    assert a.read_bytes() == b.read_bytes() != c.read_bytes()
    code, out, err = run(capsys, "gen-corpus", "--out", str(a), "--size", "50")
    assert "seed=42" in err and '"self_test": "pass"' in err


def test_usage_errors(capsys):
    assert run(capsys)[0] == 2
    assert run(capsys, "serve", "--bundle", "x.json")[0] == 2
    assert run(capsys, "train", "--out", "x")[0] == 2
    assert run(capsys, "train", "--data", "d", "--ngram", "3,1", "--out", "x")[0] == 2
    assert run(capsys, "bogus")[0] == 2


def test_train_eval_predict(tmp_path, capsys, small_data):
    bundle = tmp_path / "m.json"
    code, out, err = run(capsys, "--seed", "3", "train", "--data", small_data, "--out", str(bundle),
                         "--ngram", "1,2", "--kfold", "3", "--report", "json")
    assert code == 0, err
    report = json.loads(out)
    assert report["l1_kfold"]["k"] == 3
    assert report["fingerprint"]

    code, out, _ = run(capsys, "eval", "--bundle", str(bundle), "--data", small_data, "--report", "json")
    assert code == 0
    doc = json.loads(out)
    jsonschema.validate(doc, schema("eval_report.schema.json"))
    assert doc["combined"]["confusion"]["fp"] <= doc["l1_only"]["confusion"]["fp"]

    code, out, _ = run(capsys, "eval", "--bundle", str(bundle), "--data", small_data, "--report", "csv")
    assert out.splitlines()[0].startswith("model,tp,fp")
    code, out, _ = run(capsys, "eval", "--bundle", str(bundle), "--data", small_data)
    assert "Dual layer" in out

    req = tmp_path / "req.txt"
    req.write_bytes(b"GET /index.html HTTP/1.1\r\nHost: a\r\n\r\n")
    code, out, _ = run(capsys, "predict", "--bundle", str(bundle), "--file", str(req))
    assert code == 0 and json.loads(out)["action"] == "allow"
    req.write_bytes(b"NOT A REQUEST")
    assert run(capsys, "predict", "--bundle", str(bundle), "--file", str(req))[0] == 2


def test_train_single_class_is_model_error(tmp_path, capsys, small_data):
    from dualwaf.datasets import from_jsonl, to_jsonl
    recs = [r for r in from_jsonl(small_data) if r.attack_class == "valid"]
    p = tmp_path / "valid.jsonl"
    to_jsonl(recs, p)
    code, _, err = run(capsys, "train", "--data", str(p), "--out", str(tmp_path / "m.json"))
    assert code == 3 and "layer" in err


def test_bad_inputs_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.jsonl"
    bad.write_text("{nope\n")
    assert run(capsys, "train", "--data", str(bad), "--out", str(tmp_path / "m"))[0] == 2
    assert run(capsys, "eval", "--bundle", str(bad), "--data", str(bad))[0] == 2
    assert run(capsys, "train", "--data", str(tmp_path / "missing"), "--out", "m")[0] == 2
    empty = tmp_path / "empty.jsonl"
    empty.write_text("")
    assert run(capsys, "eval", "--bundle", str(bad), "--data", str(empty))[0] == 2


def test_eval_unsupported_bundle_version(tmp_path, capsys, small_data, small_bundle_path):
    doc = json.loads(open(small_bundle_path).read())
    doc["format_version"] = "0.0"
    p = tmp_path / "old.json"
    p.write_text(json.dumps(doc))
    assert run(capsys, "eval", "--bundle", str(p), "--data", small_data)[0] == 2


def test_serve_missing_bundle_exit_3(tmp_path, capsys):
    code, _, err = run(capsys, "serve", "--bundle", str(tmp_path / "none.json"),
                       "--upstream", "http://127.0.0.1:9", "--listen", "0")
    assert code == 3


def test_serve_bad_upstream_exit_2(capsys, small_bundle_path):
    assert run(capsys, "serve", "--bundle", small_bundle_path, "--upstream", "ftp://x")[0] == 2


def test_convert(tmp_path, capsys):
    (tmp_path / "p.csv").write_text("payload,label\n\"1' or 1=1\",SQLI\nhello,ok\nhello,ok\n")
    (tmp_path / "n.txt").write_text("GET /a HTTP/1.1\n\nGET /b HTTP/1.1\n\n")
    m = {"sources": [
        {"name": "csv", "path": "p.csv", "format": "payload_csv", "payload_column": "payload",
         "class_column": "label", "label_mapping": {"SQLI": "sqli", "ok": "valid"}},
        {"name": "n", "path": "n.txt", "format": "raw_http_blocks", "l1_label": 0}]}
    (tmp_path / "m.json").write_text(json.dumps(m))
    out = tmp_path / "all.jsonl"
    code, stdout, err = run(capsys, "convert", "--manifest", str(tmp_path / "m.json"), "--out", str(out))
    assert code == 0 and json.loads(stdout)["records"] == 4
    first = out.read_bytes()
    run(capsys, "convert", "--manifest", str(tmp_path / "m.json"), "--out", str(out))
    assert out.read_bytes() == first
    m["sources"][0]["label_mapping"] = {"SQLI": "sqli"}
    (tmp_path / "m.json").write_text(json.dumps(m))
    assert run(capsys, "convert", "--manifest", str(tmp_path / "m.json"), "--out", str(out))[0] == 2


def test_grid(capsys, small_data):
    code, out, err = run(capsys, "grid", "--data", small_data, "--ngrams", "1,1", "1,2",
                         "--kernels", "linear", "--report", "json")
    assert code == 0, err
    doc = json.loads(out)
    assert len(doc["rows"]) == 2
    assert doc["best"]["score"] == max(r["score"] for r in doc["rows"])


def test_config_round_trip(tmp_path, capsys, small_data):
    code, out, _ = run(capsys, "--seed", "3", "--dump-config", "train", "--data", small_data,
                       "--ngram", "1,2", "--out", str(tmp_path / "a.json"), "--report", "json")
    cfg = json.loads(out)
    jsonschema.validate(cfg, schema("config.schema.json"))
    p = tmp_path / "cfg.json"
    p.write_text(out)
    code, out2, _ = run(capsys, "--config", str(p), "--dump-config", "train")
    assert json.loads(out2) == cfg
    code, rep_a, _ = run(capsys, "--seed", "3", "train", "--data", small_data, "--ngram", "1,2",
                         "--out", str(tmp_path / "a.json"), "--report", "json")
    code, rep_b, _ = run(capsys, "--config", str(p), "train")
    assert code == 0 and rep_a == rep_b
    # explicit flags beat config values
    code, out3, _ = run(capsys, "--config", str(p), "--seed", "9", "--dump-config", "train")
    assert json.loads(out3)["seed"] == 9
    p.write_text(json.dumps({"bogus_key": 1}))
    assert run(capsys, "--config", str(p), "train")[0] == 2


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "dualwaf", "serve"], capture_output=True, text=True)
    assert res.returncode == 2 and "--bundle" in res.stderr
    res = subprocess.run([sys.executable, "-m", "dualwaf", "--version"], capture_output=True, text=True)
    assert res.returncode == 0
