import csv
import json
import socket
import subprocess
import sys
import time
from pathlib import Path

import pytest

from hiobench.cli import build_parser, main, parse_addr
from hiobench.sweep import load_csv
from hiobench.telemetry import fetch_json

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def test_parse_addr():
    assert parse_addr("127.0.0.1:80") == ("127.0.0.1", 80)
    with pytest.raises(Exception):
        parse_addr("nope")


def test_bounds_command(capsys):
    assert main(["bounds", "--bandwidth-bits", "1.4e9", "--slots", "40", "--topology-factor", "2"]) == 0
    rows = list(csv.DictReader(capsys.readouterr().out.splitlines()))
    assert len(rows) == 42
    row = next(r for r in rows if r["message_size_bytes"] == "10000000" and r["cpu_cost_us"] == "0")
    assert float(row["bound_network_hz"]) == pytest.approx(8.75)
    assert row["bound_cpu_hz"] == "inf" and row["regime"] == "B"


def test_bounds_from_config(capsys):
    main(["bounds", "--spec", str(CONFIGS / "desk.yaml")])
    rows = list(csv.DictReader(capsys.readouterr().out.splitlines()))
    assert len(rows) == 6 and float(rows[0]["bound_network_hz"]) == pytest.approx(1e4)


def test_sweep_and_reports(tmp_path, capsys):
    out = tmp_path / "m.csv"
    assert main(["sweep", "--grid", str(CONFIGS / "lab.yaml"), "--adapter", "mock", "--out", str(out)]) == 0
    rows = load_csv(out)
    assert len(rows) == 42 and rows[0].max_hz == 625 and rows[0].regime.value == "C"
    svg = tmp_path / "map.svg"
    table = tmp_path / "map.txt"
    assert main(["report", "--map", str(out), "--out", str(svg), "--table", str(table)]) == 0
    assert svg.read_text().startswith("<svg") and "625" in table.read_text()
    bsvg, bcsv = tmp_path / "b.svg", tmp_path / "b.csv"
    args = ["report", "--bounds", str(out), "--spec", str(CONFIGS / "lab.yaml"), "--out", str(bsvg), "--csv", str(bcsv)]
    assert main(args) == 0
    assert 'class="measured"' in bsvg.read_text()
    assert len(list(csv.DictReader(bcsv.read_text().splitlines()))) == 42


def test_report_requires_mode(tmp_path):
    with pytest.raises(SystemExit):
        main(["report", "--out", str(tmp_path / "x.svg")])


def test_govern_mock(capsys):
    assert main(["govern", "--adapter", "mock", "--mock-max", "321", "--size-bytes", "100", "--cpu-us", "0"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["max_hz"] == 321 and not doc["timed_out"]


def test_calibrate(capsys):
    assert main(["calibrate", "--samples", "1"]) == 0
    assert "overshoot" in capsys.readouterr().out


def test_unknown_adapter():
    with pytest.raises(SystemExit):
        main(["govern", "--adapter", "kafka", "--size-bytes", "1", "--cpu-us", "0"])


def test_parser_has_roles():
    sub = build_parser()._subparsers._group_actions[0].choices
    assert {"master", "worker", "source", "govern", "sweep", "report", "bounds", "calibrate"} <= set(sub)


def _free_port():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def test_roles_as_processes():
    port, http = _free_port(), _free_port()
    cmd = [sys.executable, "-m", "hiobench"]
    master = subprocess.Popen(cmd + ["master", "--listen", f"127.0.0.1:{port}", "--http-port", str(http)], stdout=subprocess.PIPE)
    worker = None
    try:
        assert json.loads(master.stdout.readline())["role"] == "master"
        worker = subprocess.Popen(
            cmd + ["worker", "--master", f"127.0.0.1:{port}", "--slots", "2", "--worker-id", "wx"], stdout=subprocess.PIPE
        )
        assert json.loads(worker.stdout.readline())["worker_id"] == "wx"
        url = f"http://127.0.0.1:{http}"
        deadline = time.monotonic() + 10
        while not fetch_json(url + "/metrics")["workers"]:
            assert time.monotonic() < deadline
            time.sleep(0.05)
        out = subprocess.run(
            cmd + ["source", "--master", f"127.0.0.1:{port}", "--master-http", url,
                   "--rate-hz", "100", "--size-bytes", "1000", "--cpu-us", "1000", "--count", "100"],
            capture_output=True, text=True, timeout=60, check=True,
        )
        doc = json.loads(out.stdout)
        assert doc["sent"] == 100 and doc["reconcile"]["lost"] == 0 and doc["reconcile"]["processed"] == 100
    finally:
        for p in (worker, master):
            if p is not None:
                p.terminate()
                p.wait(5)
