"""End-to-end tests of the command-line interface.

Everything runs through cli.main() with small synthetic corpora:
4 devices x 50 sessions, 2 probe epochs, 32 hidden units.  These runs
are too small for high accuracy -- semantic accuracy floors live in the
acceptance suite -- so the checks here cover artifact layout, manifest
chains, exit codes, and bit-for-bit rerun determinism.
"""

import hashlib
import json
import os
from pathlib import Path

import numpy as np
import pytest

from iotprint import cli
from iotprint.errors import UnknownDevice
from iotprint.fixtures import session_payload, tcp_frame, write_pcap, default_devices
from iotprint.manifest import read_manifest, verify_manifest

FAST_TRAIN = ["--epochs", "2", "--hidden", "32"]


def dir_digest(root: Path) -> dict[str, str]:
    """Relative path -> sha256, for whole-tree byte comparisons."""
    digest = {}
    for path in sorted(Path(root).rglob("*")):
        if path.is_file():
            digest[path.relative_to(root).as_posix()] = \
                hashlib.sha256(path.read_bytes()).hexdigest()
    return digest


@pytest.fixture(scope="module")
def fixture_dir(tmp_path_factory) -> Path:
    out = tmp_path_factory.mktemp("pcaps")
    assert cli.main(["make-fixtures", str(out), "--devices", "4",
                     "--sessions", "50", "--seed", "3"]) == 0
    return out


@pytest.fixture(scope="module")
def corpus_dir(tmp_path_factory, fixture_dir) -> Path:
    out = tmp_path_factory.mktemp("corpus")
    assert cli.main(["preprocess", str(fixture_dir), str(fixture_dir / "macs.tsv"),
                     str(out), "--min-sessions", "30", "--seed", "3"]) == 0
    return out


class TestResolveSeed:
    def test_explicit_wins(self, monkeypatch):
        monkeypatch.setenv("IOTPRINT_SEED", "5")
        assert cli.resolve_seed(9) == 9

    def test_env_fallback(self, monkeypatch):
        monkeypatch.setenv("IOTPRINT_SEED", "5")
        assert cli.resolve_seed(None) == 5

    def test_default_zero(self, monkeypatch):
        monkeypatch.delenv("IOTPRINT_SEED", raising=False)
        assert cli.resolve_seed(None) == 0

    def test_bad_env_is_usage_error(self, monkeypatch):
        monkeypatch.setenv("IOTPRINT_SEED", "banana")
        with pytest.raises(cli._UsageError):
            cli.resolve_seed(None)


class TestReadMacMap:
    def test_parses_skipping_comments_and_blanks(self, tmp_path):
        path = tmp_path / "map.tsv"
        path.write_text("# heading\n"
                        "\n"
                        "AA:BB:CC:00:00:01\tAmazon Echo\tIoT\n"
                        "aa:bb:cc:00:00:02\tDesktop\tnon-iot\n")
        mapping = cli.read_mac_map(path)
        assert mapping == {"aa:bb:cc:00:00:01": ("Amazon Echo", "iot"),
                           "aa:bb:cc:00:00:02": ("Desktop", "non-iot")}

    def test_bad_kind(self, tmp_path):
        path = tmp_path / "map.tsv"
        path.write_text("aa:bb:cc:00:00:01\tEcho\tgadget\n")
        with pytest.raises(UnknownDevice):
            cli.read_mac_map(path)

    def test_wrong_column_count(self, tmp_path):
        path = tmp_path / "map.tsv"
        path.write_text("aa:bb:cc:00:00:01\tEcho\n")
        with pytest.raises(UnknownDevice):
            cli.read_mac_map(path)

    def test_empty_map(self, tmp_path):
        path = tmp_path / "map.tsv"
        path.write_text("# nothing here\n")
        with pytest.raises(UnknownDevice):
            cli.read_mac_map(path)


class TestMakeFixtures:
    def test_writes_pcaps_and_map(self, fixture_dir):
        names = {p.name for p in fixture_dir.iterdir()}
        assert names == {"workstation-01.pcap", "sensor-01.pcap",
                         "sensor-02.pcap", "sensor-03.pcap", "macs.tsv"}

    def test_seed_env_matches_flag(self, tmp_path, monkeypatch):
        monkeypatch.setenv("IOTPRINT_SEED", "3")
        assert cli.main(["make-fixtures", str(tmp_path / "env"),
                         "--devices", "2", "--sessions", "4"]) == 0
        monkeypatch.delenv("IOTPRINT_SEED")
        assert cli.main(["make-fixtures", str(tmp_path / "flag"),
                         "--devices", "2", "--sessions", "4", "--seed", "3"]) == 0
        assert dir_digest(tmp_path / "env") == dir_digest(tmp_path / "flag")

    def test_spec_file(self, tmp_path):
        spec = tmp_path / "devices.json"
        spec.write_text(json.dumps([
            {"name": "cam one", "kind": "iot", "sessions": 3},
            {"name": "desk", "kind": "non-iot", "sessions": 2},
        ]))
        out = tmp_path / "out"
        assert cli.main(["make-fixtures", str(out), "--spec", str(spec),
                         "--seed", "1"]) == 0
        assert (out / "cam-one.pcap").exists()
        assert (out / "desk.pcap").exists()
        assert "cam one" in (out / "macs.tsv").read_text()


class TestPreprocess:
    def test_corpus_layout_and_counts(self, corpus_dir):
        entries = verify_manifest(corpus_dir / "corpus.manifest")
        assert entries["device.count"] == "4"
        names = {entries[f"device.{i}.name"] for i in range(4)}
        assert names == {"workstation-01", "sensor-01", "sensor-02", "sensor-03"}
        for i in range(4):
            assert entries[f"device.{i}.sessions"] == "50"
            assert entries[f"device.{i}.split"] == "5/4/41"
        assert entries["seed"] == "3"
        assert (corpus_dir / "sensor-01.images.idx").exists()

    def test_summary_table(self, fixture_dir, tmp_path, capsys):
        assert cli.main(["preprocess", str(fixture_dir),
                         str(fixture_dir / "macs.tsv"), str(tmp_path / "c"),
                         "--min-sessions", "30"]) == 0
        out = capsys.readouterr().out
        assert "Device" in out and "Validation" in out
        assert "workstation-01" in out and "non-IoT" in out
        lines = [l for l in out.splitlines() if l.startswith("Total")]
        assert lines and lines[0].split()[-1] == "200"

    def test_rerun_byte_identical(self, fixture_dir, tmp_path):
        args = ["preprocess", str(fixture_dir), str(fixture_dir / "macs.tsv")]
        tail = ["--min-sessions", "30", "--seed", "3"]
        assert cli.main(args + [str(tmp_path / "a")] + tail) == 0
        assert cli.main(args + [str(tmp_path / "b")] + tail) == 0
        digest = dir_digest(tmp_path / "a")
        assert digest == dir_digest(tmp_path / "b")
        assert len(digest) == 5  # 4 idx + manifest

    def test_min_sessions_filter_is_strict(self, fixture_dir, tmp_path, capsys):
        # every device has exactly 50 sessions; "more than 50" keeps none
        code = cli.main(["preprocess", str(fixture_dir),
                         str(fixture_dir / "macs.tsv"), str(tmp_path / "none"),
                         "--min-sessions", "50"])
        assert code == 1
        assert cli.main(["preprocess", str(fixture_dir),
                         str(fixture_dir / "macs.tsv"), str(tmp_path / "all"),
                         "--min-sessions", "49"]) == 0

    def test_unmapped_macs_reported(self, fixture_dir, tmp_path, capsys):
        partial = tmp_path / "partial.tsv"
        kept = [line for line in (fixture_dir / "macs.tsv").read_text().splitlines()
                if "sensor-03" not in line]
        partial.write_text("\n".join(kept) + "\n")
        assert cli.main(["preprocess", str(fixture_dir), str(partial),
                         str(tmp_path / "c"), "--min-sessions", "30"]) == 0
        out = capsys.readouterr().out
        assert "unmapped MAC 02:00:00:00:00:04 with 50 sessions" in out
        entries = read_manifest(tmp_path / "c" / "corpus.manifest")
        assert entries["unmapped.0"] == "02:00:00:00:00:04:50"
        assert entries["device.count"] == "3"

    def test_dump_bins(self, fixture_dir, tmp_path):
        assert cli.main(["preprocess", str(fixture_dir),
                         str(fixture_dir / "macs.tsv"), str(tmp_path / "c"),
                         "--min-sessions", "30", "--dump-bins"]) == 0
        bins = list((tmp_path / "c" / "bins" / "sensor-01").glob("*.bin"))
        assert len(bins) == 50

    def test_empty_pcap_dir(self, tmp_path):
        (tmp_path / "empty").mkdir()
        map_path = tmp_path / "m.tsv"
        map_path.write_text("aa:bb:cc:00:00:01\tEcho\tiot\n")
        assert cli.main(["preprocess", str(tmp_path / "empty"), str(map_path),
                         str(tmp_path / "out")]) == 1


class TestExperiment:
    def test_scheme1_artifacts_and_chain(self, corpus_dir, tmp_path):
        run = tmp_path / "run1"
        assert cli.main(["experiment", str(corpus_dir), str(run),
                         "--scheme", "1", "--seed", "3", *FAST_TRAIN]) == 0
        for name in ("model.iotp", "model.iotp.json", "report.txt",
                     "confusion.csv", "metrics.csv", "history.csv",
                     "training_curves.png", "run.manifest"):
            assert (run / name).exists(), name
        assert (run / "data" / "split.manifest").exists()
        entries = verify_manifest(run / "run.manifest")  # verifies parent chain
        assert entries["scheme"] == "1"
        meta = json.loads((run / "model.iotp.json").read_text())
        assert meta["label_names"] == ["non-IoT", "IoT"]
        assert meta["output_width"] == 1
        assert 1 <= meta["best_epoch"] <= 2
        history = (run / "history.csv").read_text().splitlines()
        assert history[0] == "phase,epoch,val_accuracy,val_loss,train_loss"
        phases = {line.split(",")[0] for line in history[1:]}
        assert phases == {"probe", "final"}

    def test_rerun_byte_identical(self, corpus_dir, tmp_path):
        args = ["experiment", str(corpus_dir), "--scheme", "4",
                "--seed", "11", *FAST_TRAIN]
        a, b = tmp_path / "runs" / "a", tmp_path / "runs" / "b"
        assert cli.main(args[:2] + [str(a)] + args[2:]) == 0
        assert cli.main(args[:2] + [str(b)] + args[2:]) == 0
        assert dir_digest(a) == dir_digest(b)

    def test_scheme_name_accepted(self, corpus_dir, tmp_path):
        assert cli.main(["experiment", str(corpus_dir), str(tmp_path / "r"),
                         "--scheme", "multiclass", "--seed", "3",
                         *FAST_TRAIN]) == 0
        entries = read_manifest(tmp_path / "r" / "run.manifest")
        assert entries["scheme.name"] == "multiclass"
        names = (tmp_path / "r" / "data" / "train.labels.idx.names").read_text()
        assert names.splitlines()[0] == "0\tnon-IoT"

    def test_scheme5_threshold_artifacts(self, corpus_dir, tmp_path, capsys):
        run = tmp_path / "run5"
        assert cli.main(["experiment", str(corpus_dir), str(run),
                         "--scheme", "5", "--exclude", "sensor-02",
                         "--seed", "3", *FAST_TRAIN]) == 0
        meta = json.loads((run / "model.iotp.json").read_text())
        assert meta["excluded"] == "sensor-02"
        assert 0.0 <= meta["threshold"] <= 1.0
        assert meta["label_names"] == ["sensor-01", "sensor-03"]
        assert "unknown" in (run / "report.txt").read_text()
        assert (run / "data" / "unknown-test.images.idx").exists()
        assert "threshold" in capsys.readouterr().out

    def test_rotate_writes_summary(self, corpus_dir, tmp_path, capsys):
        out = tmp_path / "rot"
        assert cli.main(["experiment", str(corpus_dir), str(out),
                         "--scheme", "3", "--rotate", "--seed", "3",
                         "--epochs", "1", "--hidden", "16"]) == 0
        for slug in ("sensor-01", "sensor-02", "sensor-03"):
            assert (out / slug / "model.iotp").exists()
        rows = (out / "summary.csv").read_text().splitlines()
        assert rows[0] == "target_device,best_epoch,test_accuracy"
        assert len(rows) == 4
        assert "mean test accuracy over 3 runs" in capsys.readouterr().out

    def test_missing_target_exit_2(self, corpus_dir, tmp_path):
        assert cli.main(["experiment", str(corpus_dir), str(tmp_path / "r"),
                         "--scheme", "2", *FAST_TRAIN]) == 2

    def test_unknown_target_exit_2(self, corpus_dir, tmp_path):
        assert cli.main(["experiment", str(corpus_dir), str(tmp_path / "r"),
                         "--scheme", "2", "--target", "toaster",
                         *FAST_TRAIN]) == 2

    def test_bad_scheme_exit_2(self, corpus_dir, tmp_path):
        assert cli.main(["experiment", str(corpus_dir), str(tmp_path / "r"),
                         "--scheme", "7", *FAST_TRAIN]) == 2

    def test_missing_corpus_exit_1(self, tmp_path):
        assert cli.main(["experiment", str(tmp_path / "nowhere"),
                         str(tmp_path / "r"), "--scheme", "1",
                         *FAST_TRAIN]) == 1

    def test_tampered_corpus_exit_1(self, corpus_dir, tmp_path):
        import shutil
        broken = tmp_path / "broken"
        shutil.copytree(corpus_dir, broken)
        idx = broken / "sensor-01.images.idx"
        data = bytearray(idx.read_bytes())
        data[-1] ^= 0xFF
        idx.write_bytes(bytes(data))
        assert cli.main(["experiment", str(broken), str(tmp_path / "r"),
                         "--scheme", "1", *FAST_TRAIN]) == 1


@pytest.fixture(scope="module")
def trained_run(tmp_path_factory, corpus_dir) -> Path:
    run = tmp_path_factory.mktemp("model") / "run"
    assert cli.main(["experiment", str(corpus_dir), str(run),
                     "--scheme", "4", "--seed", "3", *FAST_TRAIN]) == 0
    return run


class TestPredict:
    def test_pcap_input_lines(self, trained_run, fixture_dir, capsys):
        assert cli.main(["predict", str(trained_run / "model.iotp"),
                         str(fixture_dir / "sensor-01.pcap")]) == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert len(lines) == 50
        valid_names = {"non-IoT", "sensor-01", "sensor-02", "sensor-03"}
        for line in lines:
            ident, name, posterior = line.split("\t")
            assert "<->" in ident
            assert name in valid_names
            assert 0.0 <= float(posterior) <= 1.0

    def test_bin_directory_input(self, trained_run, tmp_path, capsys):
        bins = tmp_path / "bins"
        bins.mkdir()
        rng = np.random.default_rng(0)
        for i, device in enumerate(default_devices(3, 1, iot=2)):
            (bins / f"s{i}.bin").write_bytes(session_payload(device, rng))
        assert cli.main(["predict", str(trained_run / "model.iotp"),
                         str(bins)]) == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert [line.split("\t")[0] for line in lines] == \
            ["s0.bin", "s1.bin", "s2.bin"]

    def test_threshold_override_rejects_everything(self, trained_run,
                                                   fixture_dir, capsys):
        assert cli.main(["predict", str(trained_run / "model.iotp"),
                         str(fixture_dir / "sensor-02.pcap"),
                         "--threshold", "1.0"]) == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert lines and all(l.split("\t")[1] == "unknown" for l in lines)

    def test_empty_payload_sessions(self, trained_run, tmp_path, capsys):
        # ACK-only session: TCP frames carrying zero payload bytes
        frame = tcp_frame("02:00:00:00:00:01", "02:ff:00:00:00:01",
                          "10.1.1.2", "10.9.9.9", 5000, 443, b"")
        path = tmp_path / "quiet.pcap"
        write_pcap(path, [(1.0, frame)])
        assert cli.main(["predict", str(trained_run / "model.iotp"),
                         str(path)]) == 0
        assert "no classifiable sessions" in capsys.readouterr().out

    def test_missing_model_exit_1(self, tmp_path):
        assert cli.main(["predict", str(tmp_path / "no.iotp"),
                         str(tmp_path / "no.pcap")]) == 1


class TestKfold:
    def test_csv_and_mean(self, corpus_dir, tmp_path, capsys):
        out = tmp_path / "kfold.csv"
        assert cli.main(["kfold", str(corpus_dir), str(out), "--scheme", "1",
                         "--k", "3", "--seed", "3", "--epochs", "1",
                         "--hidden", "16"]) == 0
        rows = out.read_text().splitlines()
        assert rows[0] == ("fold,accuracy,weighted_precision,"
                           "weighted_recall,weighted_f1")
        assert len(rows) == 5  # header + 3 folds + mean
        assert rows[-1].startswith("mean,")
        assert "mean accuracy" in capsys.readouterr().out

    def test_scheme5_rejected(self, corpus_dir, tmp_path):
        assert cli.main(["kfold", str(corpus_dir), str(tmp_path / "k.csv"),
                         "--scheme", "5", "--k", "3"]) == 2

    def test_scheme2_needs_target(self, corpus_dir, tmp_path):
        assert cli.main(["kfold", str(corpus_dir), str(tmp_path / "k.csv"),
                         "--scheme", "2", "--k", "3"]) == 2


class TestParser:
    def test_version_flag(self, capsys):
        with pytest.raises(SystemExit) as exc:
            cli.main(["--version"])
        assert exc.value.code == 0
        assert "iotprint" in capsys.readouterr().out

    def test_no_command_exit_2(self, capsys):
        with pytest.raises(SystemExit) as exc:
            cli.main([])
        assert exc.value.code == 2
