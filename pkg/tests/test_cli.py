"""Command-line interface: argument parsing and end-to-end subcommands."""

import argparse
import signal
import subprocess
import sys
import time

import pytest

from icp import pimage
from icp.bench import generate_pgm_dir, read_report_csv, texture_image
from icp.cli import (
    build_parser,
    main,
    parse_address,
    parse_alpha,
    parse_int_list,
    parse_size,
)
from icp.service import MatchConfig, send_request
from icp.store import BigImage


# --- argument helpers ---


@pytest.mark.parametrize(
    "text,expected",
    [
        ("10", 10),
        ("4k", 4 << 10),
        ("4K", 4 << 10),
        ("2m", 2 << 20),
        ("1g", 1 << 30),
        (" 64k ", 64 << 10),
    ],
)
def test_parse_size(text, expected):
    assert parse_size(text) == expected


@pytest.mark.parametrize("text", ["", "x", "0", "-1", "k", "1.5m"])
def test_parse_size_rejects(text):
    with pytest.raises(argparse.ArgumentTypeError):
        parse_size(text)


def test_parse_int_list():
    assert parse_int_list("1,2,8") == [1, 2, 8]
    assert parse_int_list("5") == [5]
    assert parse_int_list("1, 2") == [1, 2]
    with pytest.raises(argparse.ArgumentTypeError):
        parse_int_list("a,b")


def test_parse_alpha():
    assert parse_alpha("all").mode == "all"
    single = parse_alpha("single:3")
    assert (single.mode, single.k) == ("single", 3)
    custom = parse_alpha("1,0,1")
    assert (custom.mode, custom.alpha) == ("custom", (1, 0, 1))
    for bad in ("single:x", "2,0", "garbage"):
        with pytest.raises(argparse.ArgumentTypeError):
            parse_alpha(bad)


def test_parse_address():
    assert parse_address("127.0.0.1:9000") == ("127.0.0.1", 9000)
    assert parse_address("localhost:1") == ("localhost", 1)
    for bad in ("nohost", ":5", "h:x", "h:"):
        with pytest.raises(argparse.ArgumentTypeError):
            parse_address(bad)


def test_parser_requires_subcommand():
    with pytest.raises(SystemExit):
        build_parser().parse_args([])


# --- pack / inspect / run ---


def _make_pgm_dir(tmp_path, n=3, size=24):
    d = tmp_path / "imgs"
    generate_pgm_dir(d, n, size=size, seed=0)
    return d


def test_pack_and_inspect(tmp_path, capsys):
    d = _make_pgm_dir(tmp_path)
    base = tmp_path / "packed"
    assert main(["pack", str(d), str(base)]) == 0
    out = capsys.readouterr().out
    assert "packed 3 entries" in out
    assert (tmp_path / "packed.bigdata").exists()

    assert main(["inspect", str(base)]) == 0
    out = capsys.readouterr().out
    lines = out.splitlines()
    assert len(lines) == 4                      # 3 entries + summary
    assert lines[0].startswith("tex000000.pgm  id=")
    assert lines[-1].startswith("OK: 3 entries, ")


def test_pack_reports_skipped_files(tmp_path, capsys):
    d = _make_pgm_dir(tmp_path)
    (d / "broken.pgm").write_bytes(b"P5\n9 9\n255\nshort")
    assert main(["pack", str(d), str(tmp_path / "p")]) == 0
    err = capsys.readouterr().err
    assert "skipped broken.pgm" in err


def test_pack_empty_directory_fails(tmp_path, capsys):
    d = tmp_path / "empty"
    d.mkdir()
    assert main(["pack", str(d), str(tmp_path / "p")]) == 1
    assert "no inputs" in capsys.readouterr().err


def test_pack_with_threshold_rolls_over(tmp_path, capsys):
    d = _make_pgm_dir(tmp_path, n=4)
    record = pimage.record_length(texture_image("tex000000.pgm", size=24, seed=0))
    assert main(["pack", str(d), str(tmp_path / "r"), "--threshold", str(record * 2)]) == 0
    out = capsys.readouterr().out
    assert "packed 4 entries" in out
    assert "2 store(s)" in out
    assert (tmp_path / "r.1.bigdata").exists()


def test_inspect_missing_store_fails(tmp_path, capsys):
    assert main(["inspect", str(tmp_path / "absent")]) == 1
    assert "error:" in capsys.readouterr().err


def test_inspect_corrupt_index_fails(tmp_path, capsys):
    (tmp_path / "bad.bigdata").write_bytes(b"")
    (tmp_path / "bad.bigidx").write_bytes(b"JUNKJUNKJUNKJUNK")
    assert main(["inspect", str(tmp_path / "bad")]) == 1
    assert "error:" in capsys.readouterr().err


def test_run_writes_csv_and_descriptors(tmp_path, capsys):
    d = _make_pgm_dir(tmp_path, n=4, size=32)
    base = tmp_path / "store"
    main(["pack", str(d), str(base)])
    capsys.readouterr()
    out_base = tmp_path / "features"
    rc = main(
        [
            "run",
            str(base),
            "--algorithm",
            "harris",
            "--blocksize",
            "2k",
            "--workers",
            "2",
            "--out",
            str(out_base),
        ]
    )
    assert rc == 0
    stdout = capsys.readouterr().out
    assert "4 images" in stdout
    csv_text = (tmp_path / "features.csv").read_text(encoding="utf-8")
    assert csv_text.startswith("filename,keypoint_index,x,y,scale,orientation,response\n")
    assert (tmp_path / "features.desc").exists()


def test_run_single_group_selector(tmp_path, capsys):
    d = _make_pgm_dir(tmp_path, n=2, size=32)
    base = tmp_path / "store"
    main(["pack", str(d), str(base)])
    capsys.readouterr()
    rc = main(
        [
            "run",
            str(base),
            "--algorithm",
            "harris",
            "--alpha",
            "single:1",
            "--out",
            str(tmp_path / "g1"),
        ]
    )
    assert rc == 0
    assert (tmp_path / "g1.csv").exists()


def test_run_rejects_bad_alpha(tmp_path):
    with pytest.raises(SystemExit):
        main(["run", str(tmp_path / "s"), "--alpha", "nonsense"])


# --- benchmark subcommands ---


def test_bench_input_cli_generates_and_reports(tmp_path, capsys):
    rc = main(
        [
            "bench-input",
            str(tmp_path / "data"),
            "--sizes",
            "4,8",
            "--repeats",
            "1",
            "--no-cold",
            "--generate",
            "--size",
            "24",
        ]
    )
    assert rc == 0
    out = capsys.readouterr().out
    assert "# experiment: input" in out
    assert "n,cache,loose_seconds,packed_seconds,ratio" in out
    assert len(list((tmp_path / "data").glob("*.pgm"))) == 8


def test_bench_scaling_cli_with_generated_store(tmp_path, capsys):
    rc = main(
        [
            "bench-scaling",
            str(tmp_path / "store"),
            "--generate",
            "6",
            "--size",
            "32",
            "--algorithm",
            "harris",
            "--workers",
            "1,2",
            "--out",
            str(tmp_path / "scaling.csv"),
        ]
    )
    assert rc == 0
    assert "report written to" in capsys.readouterr().out
    meta, columns, rows = read_report_csv(tmp_path / "scaling.csv")
    assert meta["experiment"] == "scaling"
    assert columns == ["workers", "wall_seconds", "speedup"]
    assert [r[0] for r in rows] == ["1", "2"]


def test_bench_kernels_cli(tmp_path):
    rc = main(
        [
            "bench-kernels",
            "--images",
            "1",
            "--size",
            "48",
            "--repeats",
            "1",
            "--out",
            str(tmp_path / "k.csv"),
        ]
    )
    assert rc == 0
    meta, columns, rows = read_report_csv(tmp_path / "k.csv")
    assert meta["experiment"] == "kernels"
    assert columns == ["backend", "seconds", "keypoints", "speedup_vs_pure"]
    assert {r[0] for r in rows} >= {"pure"}


def test_bench_stability_and_pressure_cli(tmp_path, capsys):
    from icp.service import DicpServer

    cfg = MatchConfig.from_lines(["* pgm harris"])
    with DicpServer(cfg, staging_base=tmp_path / "stage") as srv:
        addr = f"{srv.host}:{srv.port}"
        rc = main(
            ["bench-stability", addr, "--batches", "2", "--batch-size", "2", "--size", "32"]
        )
        assert rc == 0
        out = capsys.readouterr().out
        assert "# experiment: stability" in out
        assert "# cv: " in out

        rc = main(["bench-pressure", addr, "--images", "5", "--size", "32"])
        assert rc == 0
        out = capsys.readouterr().out
        assert "# experiment: pressure" in out
        assert "# failures: 0" in out


# --- serve subcommand (subprocess end to end) ---


def test_serve_subprocess_round_trip(tmp_path):
    conf = tmp_path / "rules.conf"
    conf.write_text("* pgm harris\n", encoding="utf-8")
    proc = subprocess.Popen(
        [
            sys.executable,
            "-m",
            "icp.cli",
            "serve",
            "--config",
            str(conf),
            "--port",
            "0",
            "--staging",
            str(tmp_path / "stage"),
        ],
        stdout=subprocess.PIPE,
        stderr=subprocess.STDOUT,
        text=True,
    )
    try:
        line = proc.stdout.readline()
        assert line.startswith("listening on 127.0.0.1:")
        port = int(line.split()[2].rpartition(":")[2])

        payload = pimage.encode_record(texture_image("s.pgm", size=32, seed=0))
        resp = send_request(("127.0.0.1", port), "shot", "pgm", payload)
        assert resp.status == "OK"

        proc.send_signal(signal.SIGTERM)
        out, _ = proc.communicate(timeout=15)
        assert proc.returncode == 0
        assert "served 1 request(s), 1 completed" in out
    finally:
        if proc.poll() is None:
            proc.kill()
            proc.communicate()
    staged = BigImage.load_base(tmp_path / "stage")
    assert len(staged) == 1
    staged.close()
