"""Benchmark harness: synthetic datasets and the four experiment protocols.

Everything is generated from seeds (no external data): loose-file vs packed
input timing, serial vs parallel scaling, service stability and pressure
trials, and a compiled-vs-pure kernel comparison.  Reports serialize to CSV
with ``#``-prefixed metadata lines so they can be re-run and diffed.
"""

from __future__ import annotations

import csv
import io
import os
import platform
import statistics
import tempfile
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import psutil
from scipy import ndimage

from . import features, service
from .engine import run_job
from .errors import InsufficientFiles
from .features import use_kernel_backend, available_kernel_backends, kernel_backend
from .pimage import ColorMode, PImage, PixelMatrix, decode_pnm, encode_pnm, encode_record
from .store import BigImage

PNM_SUFFIXES = (".pgm", ".ppm", ".pnm")


# --- synthetic images ---


def white_square(size: int = 64, square: int = 20) -> np.ndarray:
    """Black frame with a centered white square: four unambiguous corners."""
    img = np.zeros((size, size), dtype=np.uint8)
    lo = (size - square) // 2
    img[lo : lo + square, lo : lo + square] = 255
    return img


def texture(size: int = 64, seed: int = 0, blur: float = 1.5) -> np.ndarray:
    """Seeded smoothed-noise texture; dense in corners and blobs at all scales."""
    rng = np.random.default_rng(seed)
    img = ndimage.gaussian_filter(rng.random((size, size)), blur)
    img -= img.min()
    peak = img.max()
    if peak > 0:
        img /= peak
    return (img * 255).astype(np.uint8)


def texture_image(name: str, size: int = 64, seed: int = 0, rgb: bool = False) -> PImage:
    if rgb:
        planes = [texture(size, seed * 3 + i) for i in range(3)]
        return PImage(name, PixelMatrix(ColorMode.RGB, np.stack(planes, axis=-1)))
    return PImage(name, PixelMatrix(ColorMode.GREY, texture(size, seed)))


def generate_pgm_dir(directory, n: int, size: int = 64, seed: int = 0) -> list[Path]:
    """Write n seeded loose PGM files into directory; returns their paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(n):
        img = texture_image(f"tex{i:06d}.pgm", size=size, seed=seed + i)
        path = directory / img.filename
        path.write_bytes(encode_pnm(img))
        paths.append(path)
    return paths


def build_synthetic_store(base, n: int, size: int = 256, seed: int = 0) -> BigImage:
    """Pack n seeded texture images into <base>.bigdata/.bigidx and reload."""
    store = BigImage()
    for i in range(n):
        store.append(texture_image(f"tex{i:06d}.pgm", size=size, seed=seed + i))
    store.save(base)
    store.close()
    return BigImage.load_base(base)


# --- reports ---


@dataclass
class BenchReport:
    experiment: str
    params: dict = field(default_factory=dict)
    columns: list = field(default_factory=list)
    rows: list = field(default_factory=list)

    def __post_init__(self):
        self.created = datetime.now(timezone.utc).isoformat(timespec="seconds")
        self.physical_cores = psutil.cpu_count(logical=False) or 1
        self.logical_cores = os.cpu_count() or 1
        self.platform = platform.platform()

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write(f"# experiment: {self.experiment}\n")
        out.write(f"# created: {self.created}\n")
        out.write(
            f"# cores: {self.physical_cores} physical / {self.logical_cores} logical\n"
        )
        out.write(f"# platform: {self.platform}\n")
        for key, value in self.params.items():
            out.write(f"# {key}: {value}\n")
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(self.columns)
        writer.writerows(self.rows)
        return out.getvalue()

    def write(self, path) -> Path:
        path = Path(path)
        path.write_text(self.to_csv(), encoding="utf-8")
        return path


def read_report_csv(path) -> tuple[dict, list, list]:
    """Parse a report file back into (metadata, columns, rows of strings)."""
    meta = {}
    data_lines = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.startswith("#"):
            text = line[1:].strip()
            if ":" in text:
                key, _, value = text.partition(":")
                meta[key.strip()] = value.strip()
        elif line:
            data_lines.append(line)
    rows = list(csv.reader(data_lines))
    return meta, rows[0] if rows else [], rows[1:]


# --- input benchmark (loose files vs packed store) ---


def _drop_cache_hint(paths) -> None:
    """Ask the kernel to drop cached pages for these files (best effort)."""
    if not hasattr(os, "posix_fadvise"):
        return
    for p in paths:
        try:
            fd = os.open(p, os.O_RDONLY)
            try:
                os.posix_fadvise(fd, 0, 0, os.POSIX_FADV_DONTNEED)
            finally:
                os.close(fd)
        except OSError:
            pass


def _time_loose(files) -> float:
    t0 = time.perf_counter()
    for p in files:
        with open(p, "rb") as fh:
            decode_pnm(fh.read(), p.name)
    return time.perf_counter() - t0


def _time_packed(base) -> float:
    t0 = time.perf_counter()
    store = BigImage.load_base(base)
    for _ in store.iterate():
        pass
    store.close()
    return time.perf_counter() - t0


def bench_input(
    directory,
    sizes=(100, 500, 1000, 5000, 10000),
    repeats: int = 3,
    include_cold: bool = True,
    work_dir=None,
) -> BenchReport:
    """Open+decode N loose PNM files vs iterate a pre-packed N-entry store.

    Packing time is excluded: stores are built before the clock starts.
    Each timing is the median of ``repeats`` passes.  Warm rows run against
    the page cache; cold rows first issue a drop-cache hint for every file
    (a best-effort control — on memory-backed filesystems it is a no-op).
    """
    directory = Path(directory)
    files = sorted(
        p for p in directory.iterdir() if p.suffix.lower() in PNM_SUFFIXES
    )
    need = max(sizes)
    if len(files) < need:
        raise InsufficientFiles(
            f"{len(files)} PNM files in {directory}, need {need}"
        )

    report = BenchReport(
        experiment="input",
        params={
            "directory": str(directory),
            "sizes": " ".join(str(n) for n in sizes),
            "repeats": repeats,
            "cold_control": "posix_fadvise DONTNEED hint per file"
            if include_cold
            else "disabled",
        },
        columns=["n", "cache", "loose_seconds", "packed_seconds", "ratio"],
    )

    with tempfile.TemporaryDirectory(dir=work_dir) as tmp:
        bases = {}
        for n in sorted(set(sizes)):
            base = Path(tmp) / f"pack{n}"
            store = BigImage()
            for p in files[:n]:
                store.append(decode_pnm(p.read_bytes(), p.name))
            store.save(base)
            store.close()
            bases[n] = base

        modes = ["warm"] + (["cold"] if include_cold else [])
        for n in sizes:
            subset = files[:n]
            base = bases[n]
            store_files = [
                base.with_name(base.name + ".bigdata"),
                base.with_name(base.name + ".bigidx"),
            ]
            for mode in modes:
                loose_times, packed_times = [], []
                for _ in range(repeats):
                    if mode == "cold":
                        _drop_cache_hint(subset)
                    loose_times.append(_time_loose(subset))
                    if mode == "cold":
                        _drop_cache_hint(store_files)
                    packed_times.append(_time_packed(base))
                loose = statistics.median(loose_times)
                packed = statistics.median(packed_times)
                report.rows.append(
                    (n, mode, round(loose, 6), round(packed, 6), round(loose / packed, 4))
                )
    return report


# --- scaling benchmark (serial vs parallel map) ---


def bench_scaling(
    store_base,
    algorithm: str = "sift",
    worker_counts=(1, 2, 4),
    blocksize: int | None = None,
) -> BenchReport:
    """run_job wall time per worker count over one store; speedup vs serial."""
    store = BigImage.load_base(store_base)
    try:
        if blocksize is None:
            # target ~4 groups per worker slot at the largest count for decent balance
            blocksize = max(1, store.data_size // (max(worker_counts) * 4))
        report = BenchReport(
            experiment="scaling",
            params={
                "store": str(store_base),
                "images": len(store),
                "algorithm": algorithm,
                "blocksize": blocksize,
            },
            columns=["workers", "wall_seconds", "speedup"],
        )
        base_time = None
        for w in worker_counts:
            _, stats = run_job(store, blocksize, algorithm, workers=w)
            if base_time is None:
                base_time = stats.wall_time
            report.rows.append(
                (w, round(stats.wall_time, 4), round(base_time / stats.wall_time, 4))
            )
        return report
    finally:
        store.close()


# --- service benchmarks ---


def _payloads(n: int, size: int, seed: int, extension: str = "pgm"):
    out = []
    for i in range(n):
        img = texture_image(f"up{i:05d}.{extension}", size=size, seed=seed + i)
        out.append((f"up{i:05d}", extension, encode_record(img)))
    return out


def bench_stability(
    address,
    batches: int = 10,
    batch_size: int = 10,
    size: int = 64,
    seed: int = 0,
    identical: bool = True,
    gap: float = 0.05,
) -> BenchReport:
    """Batched uploads to a running server; per-batch mean latency and CV."""
    if identical:
        one = _payloads(1, size, seed)[0]
        batch_list = [[one] * batch_size for _ in range(batches)]
    else:
        rng = np.random.default_rng(seed)
        batch_list = [
            _payloads(int(rng.integers(1, batch_size + 1)), size, seed + 1000 * b)
            for b in range(batches)
        ]
    result = service.run_stability_trial(address, batch_list, gap=gap)
    report = BenchReport(
        experiment="stability",
        params={
            "address": f"{address[0]}:{address[1]}",
            "batches": batches,
            "batch_size": batch_size,
            "identical": identical,
            "image_size": size,
            "cv": round(result.cv, 6),
        },
        columns=["batch", "size", "mean_latency_seconds"],
    )
    for i, (bsize, mean) in enumerate(zip(result.batch_sizes, result.batch_means)):
        report.rows.append((i, bsize, round(mean, 6)))
    return report


def bench_pressure(
    address,
    n: int = 200,
    size: int = 64,
    seed: int = 0,
    concurrency: int = 8,
) -> BenchReport:
    """Continuous upload of n images; completion series and linearity R²."""
    result = service.run_pressure_trial(
        address, _payloads(n, size, seed), concurrency=concurrency
    )
    report = BenchReport(
        experiment="pressure",
        params={
            "address": f"{address[0]}:{address[1]}",
            "images": result.total,
            "concurrency": concurrency,
            "failures": result.failures,
            "r_squared": round(result.r_squared, 6),
        },
        columns=["seconds", "completed"],
    )
    for t, c in result.series:
        report.rows.append((round(t, 6), c))
    return report


# --- kernel backend comparison ---


def bench_kernels(
    images: int = 10, size: int = 128, seed: int = 0, repeats: int = 3
) -> BenchReport:
    """Time the full keypoint pipeline per kernel backend on the same images."""
    mats = [
        PixelMatrix(ColorMode.GREY, texture(size, seed + i)) for i in range(images)
    ]
    report = BenchReport(
        experiment="kernels",
        params={"images": images, "image_size": size, "repeats": repeats},
        columns=["backend", "seconds", "keypoints", "speedup_vs_pure"],
    )
    timings = {}
    counts = {}
    previous = kernel_backend()
    try:
        for name in available_kernel_backends():
            use_kernel_backend(name)
            passes = []
            total_kp = 0
            for _ in range(repeats):
                total_kp = 0
                t0 = time.perf_counter()
                for m in mats:
                    total_kp += len(features.sift_extract(m))
                passes.append(time.perf_counter() - t0)
            timings[name] = statistics.median(passes)
            counts[name] = total_kp
    finally:
        use_kernel_backend(previous)
    pure = timings.get("pure")
    for name in sorted(timings):
        speed = round(pure / timings[name], 4) if pure else float("nan")
        report.rows.append((name, round(timings[name], 4), counts[name], speed))
    return report
