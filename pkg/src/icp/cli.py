"""Command-line interface: pack/inspect stores, run jobs, serve, benchmark."""

from __future__ import annotations

import argparse
import signal
import sys
import threading
import time
from pathlib import Path

from . import bench
from .engine import ReduceSpec, run_job
from .errors import IcpError
from .service import DicpServer, MatchConfig
from .store import BigImage, pack_directory


def parse_size(text: str) -> int:
    """Byte count with optional k/m/g suffix (binary units)."""
    text = text.strip().lower()
    mult = 1
    if text and text[-1] in "kmg":
        mult = {"k": 1 << 10, "m": 1 << 20, "g": 1 << 30}[text[-1]]
        text = text[:-1]
    try:
        value = int(text) * mult
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a size: {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError("size must be positive")
    return value


def parse_int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated int list: {text!r}") from None


def parse_alpha(text: str) -> ReduceSpec:
    """all | single:K | comma-separated 0/1 coefficients."""
    if text == "all":
        return ReduceSpec.all_groups()
    if text.startswith("single:"):
        try:
            return ReduceSpec.single_group(int(text.split(":", 1)[1]))
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad group index in {text!r}") from None
    try:
        return ReduceSpec.custom(parse_int_list(text))
    except (ValueError, argparse.ArgumentTypeError):
        raise argparse.ArgumentTypeError(
            f"alpha must be 'all', 'single:K', or 0/1 list, got {text!r}"
        ) from None


def parse_address(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    if not host or not port.isdigit():
        raise argparse.ArgumentTypeError(f"address must be HOST:PORT, got {text!r}")
    return host, int(port)


def _emit_report(report, out: str | None) -> None:
    if out:
        path = report.write(out)
        print(f"report written to {path}")
    else:
        sys.stdout.write(report.to_csv())


# --- subcommands ---


def cmd_pack(args) -> int:
    stores, failures = pack_directory(args.directory, args.out, args.threshold)
    for name, exc in failures:
        print(f"skipped {name}: {exc}", file=sys.stderr)
    if not stores:
        print("no inputs: directory holds no decodable PNM files", file=sys.stderr)
        return 1
    total_entries = 0
    total_bytes = 0
    for data_path, index_path in stores:
        loaded = BigImage.load(data_path, index_path)
        total_entries += len(loaded)
        total_bytes += loaded.data_size
        loaded.close()
        print(f"  {data_path}  +  {index_path}")
    print(f"packed {total_entries} entries, {total_bytes} bytes in {len(stores)} store(s)")
    return 0


def cmd_inspect(args) -> int:
    store = BigImage.load_base(args.store)
    try:
        for e in store.entries:
            print(f"{e.filename}  id={e.id:016x}  offset={e.start_offset}  length={e.record_length}")
        print(f"OK: {len(store)} entries, {store.data_size} bytes")
    finally:
        store.close()
    return 0


def cmd_run(args) -> int:
    store = BigImage.load_base(args.store)
    try:
        output, stats = run_job(
            store, args.blocksize, args.algorithm, args.alpha, workers=args.workers
        )
    finally:
        store.close()
    csv_path = Path(args.out + ".csv")
    desc_path = Path(args.out + ".desc")
    output.save(csv_path, desc_path)
    keypoints = sum(len(r.keypoints) for r in output.records)
    print(
        f"{stats.images} images in {stats.groups} group(s), workers={stats.workers}, "
        f"{keypoints} keypoints, {stats.wall_time:.3f}s -> {csv_path} + {desc_path}"
    )
    return 0


def cmd_serve(args) -> int:
    config = MatchConfig.load(args.config)
    server = DicpServer(
        config,
        host=args.host,
        port=args.port,
        staging_base=args.staging,
        max_inflight=args.max_inflight,
        payload_limit=args.payload_limit,
    )
    stop = threading.Event()
    signal.signal(signal.SIGTERM, lambda *_: stop.set())
    signal.signal(signal.SIGINT, lambda *_: stop.set())
    server.start()
    print(f"listening on {server.host}:{server.port} ({len(config.rules)} rule(s))", flush=True)
    try:
        while not stop.is_set():
            time.sleep(0.5)
    finally:
        server.stop()
        done = sum(1 for r in server.records if r.outcome == "Completed")
        print(f"served {len(server.records)} request(s), {done} completed")
    return 0


def cmd_bench_input(args) -> int:
    directory = Path(args.directory)
    need = max(args.sizes)
    if args.generate:
        have = (
            len([p for p in directory.iterdir() if p.suffix.lower() in bench.PNM_SUFFIXES])
            if directory.is_dir()
            else 0
        )
        if have < need:
            print(f"generating {need} synthetic {args.size}x{args.size} PGMs in {directory}")
            bench.generate_pgm_dir(directory, need, size=args.size, seed=args.seed)
    report = bench.bench_input(
        directory, sizes=args.sizes, repeats=args.repeats, include_cold=not args.no_cold
    )
    _emit_report(report, args.out)
    return 0


def cmd_bench_scaling(args) -> int:
    base = Path(args.store)
    if args.generate and not base.with_name(base.name + ".bigidx").exists():
        print(f"generating {args.generate}-image synthetic store at {base}")
        bench.build_synthetic_store(base, args.generate, size=args.size, seed=args.seed).close()
    report = bench.bench_scaling(
        base, algorithm=args.algorithm, worker_counts=args.workers, blocksize=args.blocksize
    )
    _emit_report(report, args.out)
    return 0


def cmd_bench_stability(args) -> int:
    report = bench.bench_stability(
        args.address,
        batches=args.batches,
        batch_size=args.batch_size,
        size=args.size,
        seed=args.seed,
        identical=not args.random_sizes,
    )
    _emit_report(report, args.out)
    return 0


def cmd_bench_pressure(args) -> int:
    report = bench.bench_pressure(
        args.address,
        n=args.images,
        size=args.size,
        seed=args.seed,
        concurrency=args.concurrency,
    )
    _emit_report(report, args.out)
    return 0


def cmd_bench_kernels(args) -> int:
    report = bench.bench_kernels(
        images=args.images, size=args.size, seed=args.seed, repeats=args.repeats
    )
    _emit_report(report, args.out)
    return 0


# --- parser ---


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="icp", description="Packed image containers, feature pipelines, dispatch service."
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pack", help="pack a directory of PNM files into a store")
    p.add_argument("directory")
    p.add_argument("out", help="output base path (writes <out>.bigdata / <out>.bigidx)")
    p.add_argument("--threshold", type=parse_size, default=None, help="rollover size, e.g. 64m")
    p.set_defaults(fn=cmd_pack)

    p = sub.add_parser("inspect", help="list entries and verify a store")
    p.add_argument("store", help="store base path (without suffix)")
    p.set_defaults(fn=cmd_inspect)

    p = sub.add_parser("run", help="feature-extraction job over a store")
    p.add_argument("store", help="store base path")
    p.add_argument("--blocksize", type=parse_size, default=1 << 20)
    p.add_argument("--algorithm", choices=("harris", "sift"), default="sift")
    p.add_argument("--alpha", type=parse_alpha, default=ReduceSpec.all_groups(),
                   help="all | single:K | 0/1 list (default: all)")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", default="features", help="output base (writes .csv and .desc)")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("serve", help="run the dispatch server")
    p.add_argument("--config", required=True, help="match rule file")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=9471)
    p.add_argument("--staging", default=None, help="staging store base path")
    p.add_argument("--max-inflight", type=int, default=64)
    p.add_argument("--payload-limit", type=parse_size, default=16 << 20)
    p.set_defaults(fn=cmd_serve)

    p = sub.add_parser("bench-input", help="loose files vs packed store input timing")
    p.add_argument("directory", help="directory of same-resolution PNM files")
    p.add_argument("--sizes", type=parse_int_list, default=[100, 500, 1000, 5000, 10000])
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--no-cold", action="store_true", help="skip the drop-cache control rows")
    p.add_argument("--generate", action="store_true",
                   help="synthesize the dataset first if the directory is short")
    p.add_argument("--size", type=int, default=64, help="generated image edge length")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="write report CSV here (default: stdout)")
    p.set_defaults(fn=cmd_bench_input)

    p = sub.add_parser("bench-scaling", help="serial vs parallel job wall time")
    p.add_argument("store", help="store base path")
    p.add_argument("--algorithm", choices=("harris", "sift"), default="sift")
    p.add_argument("--workers", type=parse_int_list, default=[1, 2, 4])
    p.add_argument("--blocksize", type=parse_size, default=None)
    p.add_argument("--generate", type=int, default=0, metavar="N",
                   help="build an N-image synthetic store at the base path if absent")
    p.add_argument("--size", type=int, default=256)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_bench_scaling)

    p = sub.add_parser("bench-stability", help="batched-latency trial against a server")
    p.add_argument("address", type=parse_address, help="HOST:PORT of a running server")
    p.add_argument("--batches", type=int, default=10)
    p.add_argument("--batch-size", type=int, default=10)
    p.add_argument("--random-sizes", action="store_true",
                   help="random batch sizes instead of identical batches")
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_bench_stability)

    p = sub.add_parser("bench-pressure", help="continuous-upload trial against a server")
    p.add_argument("address", type=parse_address)
    p.add_argument("--images", type=int, default=200)
    p.add_argument("--concurrency", type=int, default=8)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_bench_pressure)

    p = sub.add_parser("bench-kernels", help="compiled vs pure kernel backend timing")
    p.add_argument("--images", type=int, default=10)
    p.add_argument("--size", type=int, default=128)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_bench_kernels)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except IcpError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
