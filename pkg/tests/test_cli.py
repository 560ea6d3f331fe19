import json
import subprocess
import sys

import pytest

from flaegis.cli import main


def small_doc(**over):
    doc = {
        "n_clients": 6,
        "rounds": 2,
        "malicious_fraction": 0.2,
        "defense": "flaegis",
        "master_seed": 0,
        "data": {"n": 300, "d": 4, "n_classes": 3},
        "train": {"epochs": 1, "batch_size": 32, "lr": 0.005},
        "attack": {"kind": "lie"},
    }
    doc.update(over)
    return doc


@pytest.fixture
def config_path(tmp_path):
    def write(doc, name="config.json"):
        p = tmp_path / name
        p.write_text(json.dumps(doc))
        return str(p)
    return write


class TestRun:
    def test_valid_config_writes_both_files(self, tmp_path, config_path):
        out = tmp_path / "out"
        code = main(["run", "--config", config_path(small_doc()),
                     "--out", str(out)])
        assert code == 0
        rep = json.loads((out / "report.json").read_text())
        assert len(rep["rounds"]) == 2
        lines = (out / "rounds.csv").read_text().strip().splitlines()
        assert len(lines) == 3  # header + 2 rounds

    def test_missing_attack_kind_exits_2(self, tmp_path, config_path, capsys):
        doc = small_doc()
        del doc["attack"]["kind"]
        code = main(["run", "--config", config_path(doc),
                     "--out", str(tmp_path / "o")])
        assert code == 2
        err = capsys.readouterr().err
        assert "kind" in err and "attack" in err

    def test_malformed_json_exits_2_with_line(self, tmp_path, capsys):
        p = tmp_path / "bad.json"
        p.write_text('{"attack": {"kind": "lie"},}')
        code = main(["run", "--config", str(p), "--out", str(tmp_path / "o")])
        assert code == 2
        assert "line" in capsys.readouterr().err

    def test_unknown_field_exits_2_named(self, tmp_path, config_path, capsys):
        code = main(["run", "--config", config_path(small_doc(bogus=1)),
                     "--out", str(tmp_path / "o")])
        assert code == 2
        assert "bogus" in capsys.readouterr().err

    def test_missing_file_exits_2(self, tmp_path, capsys):
        code = main(["run", "--config", str(tmp_path / "nope.json"),
                     "--out", str(tmp_path / "o")])
        assert code == 2
        assert "not found" in capsys.readouterr().err

    def test_seed_override_changes_bytes_deterministically(self, tmp_path, config_path):
        cfg = config_path(small_doc())
        outs = [tmp_path / n for n in ("a", "b", "c")]
        main(["run", "--config", cfg, "--out", str(outs[0])])
        main(["run", "--config", cfg, "--seed", "7", "--out", str(outs[1])])
        main(["run", "--config", cfg, "--seed", "7", "--out", str(outs[2])])
        a, b, c = [(o / "report.json").read_bytes() for o in outs]
        assert a != b
        assert b == c

    def test_rerun_is_idempotent(self, tmp_path, config_path):
        cfg = config_path(small_doc())
        out = tmp_path / "out"
        main(["run", "--config", cfg, "--out", str(out)])
        first = (out / "report.json").read_bytes()
        main(["run", "--config", cfg, "--out", str(out)])
        assert (out / "report.json").read_bytes() == first


class TestSweep:
    def test_grid_product_and_index(self, tmp_path, config_path):
        doc = small_doc(rounds=1)
        doc["grid"] = {"defenses": ["fedavg", "flaegis"],
                       "attacks": ["lie", "statopt"],
                       "fractions": [0.0, 0.2, 0.4]}
        out = tmp_path / "sweep"
        code = main(["sweep", "--config", config_path(doc), "--out", str(out)])
        assert code == 0
        cells = [d for d in out.iterdir() if d.is_dir()]
        assert len(cells) == 12
        assert all((d / "report.json").is_file() for d in cells)
        index = (out / "index.csv").read_text().strip().splitlines()
        assert len(index) == 13  # header + 12 cells

    def test_resume_skips_completed_cells(self, tmp_path, config_path):
        doc = small_doc(rounds=1)
        doc["grid"] = {"defenses": ["fedavg"], "attacks": ["lie"],
                       "fractions": [0.0, 0.2]}
        out = tmp_path / "sweep"
        done = out / "fedavg__lie__0.0"
        done.mkdir(parents=True)
        sentinel = json.dumps({"mean_detection_accuracy": 0.0,
                               "final_accuracy": 0.0})
        (done / "report.json").write_text(sentinel)
        code = main(["sweep", "--config", config_path(doc), "--out", str(out)])
        assert code == 0
        assert (done / "report.json").read_text() == sentinel  # untouched
        index = (out / "index.csv").read_text().strip().splitlines()
        assert len(index) == 3

    def test_missing_grid_exits_2(self, tmp_path, config_path, capsys):
        code = main(["sweep", "--config", config_path(small_doc()),
                     "--out", str(tmp_path / "o")])
        assert code == 2
        assert "grid" in capsys.readouterr().err

    def test_empty_axis_exits_2(self, tmp_path, config_path, capsys):
        doc = small_doc()
        doc["grid"] = {"defenses": [], "attacks": ["lie"], "fractions": [0.2]}
        code = main(["sweep", "--config", config_path(doc),
                     "--out", str(tmp_path / "o")])
        assert code == 2
        assert "empty grid" in capsys.readouterr().err

    def test_unknown_grid_key_exits_2(self, tmp_path, config_path, capsys):
        doc = small_doc()
        doc["grid"] = {"defenses": ["fedavg"], "epochs": [1]}
        code = main(["sweep", "--config", config_path(doc),
                     "--out", str(tmp_path / "o")])
        assert code == 2
        assert "epochs" in capsys.readouterr().err

    def test_parallel_jobs_match_serial_bytes(self, tmp_path, config_path):
        doc = small_doc(rounds=1)
        doc["grid"] = {"defenses": ["fedavg", "flaegis"], "attacks": ["lie"],
                       "fractions": [0.2]}
        cfg = config_path(doc)
        serial, parallel = tmp_path / "s", tmp_path / "p"
        main(["sweep", "--config", cfg, "--out", str(serial)])
        main(["sweep", "--config", cfg, "--out", str(parallel), "--jobs", "2"])
        for cell in ("fedavg__lie__0.2", "flaegis__lie__0.2"):
            a = (serial / cell / "report.json").read_bytes()
            b = (parallel / cell / "report.json").read_bytes()
            assert a == b


class TestAblate:
    def test_three_variants_per_cell(self, tmp_path, config_path):
        doc = small_doc(rounds=1)
        doc["grid"] = {"attacks": ["lie", "statopt"], "fractions": [0.4]}
        out = tmp_path / "abl"
        code = main(["ablate", "--config", config_path(doc), "--out", str(out)])
        assert code == 0
        names = sorted(d.name for d in out.iterdir() if d.is_dir())
        assert names == sorted(
            f"{d}__{a}__0.4"
            for d in ("flaegis", "flaegis_no_sax", "flaegis_no_fft")
            for a in ("lie", "statopt"))

    def test_mimic_cell_gets_omniscience(self, tmp_path, config_path):
        doc = small_doc(rounds=1)
        doc["grid"] = {"attacks": ["mimic"], "fractions": [0.2]}
        out = tmp_path / "abl"
        main(["ablate", "--config", config_path(doc), "--out", str(out)])
        rep = json.loads((out / "flaegis__mimic__0.2" / "report.json").read_text())
        assert rep["config"]["attack"]["omniscient"] is True


class TestReport:
    def test_single_run_table(self, tmp_path, config_path, capsys):
        out = tmp_path / "out"
        main(["run", "--config", config_path(small_doc()), "--out", str(out)])
        code = main(["report", "--out", str(out)])
        assert code == 0
        table = capsys.readouterr().out
        assert "flaegis" in table and "lie" in table
        summary = (out / "summary.csv").read_text().strip().splitlines()
        assert len(summary) == 2

    def test_no_reports_exits_1(self, tmp_path, capsys):
        empty = tmp_path / "empty"
        empty.mkdir()
        assert main(["report", "--out", str(empty)]) == 1
        assert "no report" in capsys.readouterr().err

    def test_summary_rederivable_from_rounds_csv(self, tmp_path, config_path):
        doc = small_doc(rounds=5)
        out = tmp_path / "out"
        main(["run", "--config", config_path(doc), "--out", str(out)])
        main(["report", "--out", str(out)])

        rep = json.loads((out / "report.json").read_text())
        warmup = rep["config"]["warmup_rounds"]
        rows = (out / "rounds.csv").read_text().strip().splitlines()
        header = rows[0].split(",")
        det_i = header.index("detection_accuracy")
        acc_i = header.index("model_accuracy")
        rnd_i = header.index("round")
        dets = [float(r.split(",")[det_i]) for r in rows[1:]
                if int(r.split(",")[rnd_i]) >= warmup]
        final = float(rows[-1].split(",")[acc_i])

        summary = (out / "summary.csv").read_text().strip().splitlines()
        cols = summary[0].split(",")
        vals = summary[1].split(",")
        got_det = float(vals[cols.index("detection_accuracy")])
        got_acc = float(vals[cols.index("final_accuracy")])
        assert got_det == pytest.approx(sum(dets) / len(dets), abs=1e-12)
        assert got_acc == pytest.approx(final, abs=1e-12)


class TestLogging:
    def test_debug_level_emits_round_lines(self, tmp_path, config_path,
                                           capsys, monkeypatch):
        monkeypatch.setenv("FLAEGIS_LOG", "debug")
        main(["run", "--config", config_path(small_doc()),
              "--out", str(tmp_path / "o")])
        assert "round 0" in capsys.readouterr().err

    def test_unknown_level_warns_and_continues(self, tmp_path, config_path,
                                               capsys, monkeypatch):
        monkeypatch.setenv("FLAEGIS_LOG", "chatty")
        code = main(["run", "--config", config_path(small_doc()),
                     "--out", str(tmp_path / "o")])
        assert code == 0
        assert "FLAEGIS_LOG" in capsys.readouterr().err


class TestEntryPoint:
    def test_installed_script_runs(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps(small_doc(rounds=1)))
        out = tmp_path / "o"
        proc = subprocess.run(
            [sys.executable, "-m", "flaegis.cli", "run",
             "--config", str(cfg), "--out", str(out)],
            capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
        assert (out / "report.json").is_file()
