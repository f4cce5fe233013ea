"""Block-partitioned map/reduce feature extraction over a packed store.

A store's index entries are split into groups of roughly ``blocksize`` bytes.
Each group is mapped (decode, grey-convert, extract features) independently —
inline, on a thread pool, or on a process pool — and the per-group feature
sets are reduced into a single ordered output selected by 0/1 coefficients.
Results are keyed by group index and reassembled in ascending order, so the
output is byte-identical regardless of worker count or completion order.
"""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor, ThreadPoolExecutor
from dataclasses import dataclass, field
from io import StringIO
from pathlib import Path

import numpy as np

from . import features, pimage
from .errors import AlphaLengthMismatch, CorruptRecord, EmptyStore, IcpError, NotFound
from .pimage import PImage
from .store import BigImage, FileByteStore, IndexEntry

CSV_HEADER = "filename,keypoint_index,x,y,scale,orientation,response"
DESCRIPTOR_DIM = 128


# --- partitioning ---


@dataclass(frozen=True)
class Group:
    k: int                              # 1-based block index; not always contiguous
    members: tuple[IndexEntry, ...]

    @property
    def total_bytes(self) -> int:
        return sum(e.record_length for e in self.members)


@dataclass(frozen=True)
class PartitionPlan:
    blocksize: int
    num_map_task: int
    groups: tuple[Group, ...]


def partition(store: BigImage, blocksize: int) -> PartitionPlan:
    """Greedy split of the index into consecutive groups of ~blocksize bytes.

    A record whose start offset lies before boundary k*blocksize belongs to
    group k, so records are never split and a group may overshoot its block
    by up to one record. num_map_task keeps the slot count the partition was
    sized for (floor(data_size/blocksize) + 1); trailing or intermediate
    empty slots are not emitted, so group indices can skip values when
    blocksize is much smaller than a single record.
    """
    if blocksize < 1:
        raise ValueError(f"blocksize must be >= 1, got {blocksize}")
    if not store.entries:
        raise EmptyStore("cannot partition an empty store")
    num_map_task = store.data_size // blocksize + 1

    groups: list[Group] = []
    current: list[IndexEntry] = []
    current_k = 1
    for entry in store.entries:
        k = entry.start_offset // blocksize + 1
        if current and k != current_k:
            groups.append(Group(k=current_k, members=tuple(current)))
            current = []
        current_k = k
        current.append(entry)
    groups.append(Group(k=current_k, members=tuple(current)))
    return PartitionPlan(blocksize=blocksize, num_map_task=num_map_task, groups=tuple(groups))


# --- feature containers ---


@dataclass(frozen=True, eq=False)
class ImageFeatures:
    filename: str
    keypoints: tuple[features.Keypoint, ...]
    descriptors: np.ndarray     # float32, shape (n_keypoints, dim); dim 0 when absent

    def __eq__(self, other) -> bool:
        if not isinstance(other, ImageFeatures):
            return NotImplemented
        return (
            self.filename == other.filename
            and self.keypoints == other.keypoints
            and self.descriptors.shape == other.descriptors.shape
            and np.array_equal(self.descriptors, other.descriptors)
        )

    def __hash__(self):
        return hash((self.filename, self.keypoints))


@dataclass(frozen=True, eq=False)
class FeatureSet:
    k: int
    per_image: tuple[ImageFeatures, ...]

    def __eq__(self, other) -> bool:
        if not isinstance(other, FeatureSet):
            return NotImplemented
        return self.k == other.k and self.per_image == other.per_image


def _decode_entry(entry: IndexEntry, read_at) -> PImage:
    raw = read_at(entry.start_offset, entry.record_length)
    try:
        return pimage.decode_record(raw)
    except IcpError as exc:
        raise CorruptRecord(
            f"record for {entry.filename!r} at offset {entry.start_offset}: {exc}",
            offset=entry.start_offset,
            filename=entry.filename,
        ) from exc


def extract_image(img: PImage, extractor: str) -> ImageFeatures:
    """Features of a single image: grey-convert if needed, then extract."""
    matrix = pimage.to_grey(img).matrix
    pairs = features.extract(extractor, matrix)
    kps = tuple(kp for kp, _ in pairs)
    if pairs and pairs[0][1].size:
        desc = np.stack([d for _, d in pairs]).astype(np.float32, copy=False)
    else:
        desc = np.zeros((len(pairs), 0), dtype=np.float32)
    return ImageFeatures(filename=img.filename, keypoints=kps, descriptors=desc)


def map_group(group: Group, store: BigImage, extractor: str) -> FeatureSet:
    """Extract features for every member of one group, preserving order."""
    per_image = tuple(
        extract_image(_decode_entry(e, store.data.read_at), extractor)
        for e in group.members
    )
    return FeatureSet(k=group.k, per_image=per_image)


def _map_group_from_file(
    data_path: str, k: int, members: tuple[IndexEntry, ...], extractor: str
) -> tuple[FeatureSet, float]:
    """Worker-side map: opens its own read handle on the data file."""
    t0 = time.perf_counter()
    data = FileByteStore(data_path)
    try:
        per_image = tuple(
            extract_image(_decode_entry(e, data.read_at), extractor) for e in members
        )
    finally:
        data.close()
    return FeatureSet(k=k, per_image=per_image), time.perf_counter() - t0


# --- reduce ---


@dataclass(frozen=True)
class ReduceSpec:
    """Which groups' features enter the output: 0/1 coefficient per group."""

    mode: str                                # "all" | "single" | "custom"
    k: int | None = None
    alpha: tuple[int, ...] | None = None

    @classmethod
    def all_groups(cls) -> "ReduceSpec":
        return cls(mode="all")

    @classmethod
    def single_group(cls, k: int) -> "ReduceSpec":
        return cls(mode="single", k=k)

    @classmethod
    def custom(cls, alpha) -> "ReduceSpec":
        alpha = tuple(int(a) for a in alpha)
        if any(a not in (0, 1) for a in alpha):
            raise ValueError(f"alpha coefficients must be 0 or 1, got {alpha}")
        return cls(mode="custom", alpha=alpha)

    def resolve(self, group_ks: tuple[int, ...]) -> tuple[int, ...]:
        """Coefficient vector aligned with the given ascending group indices."""
        if self.mode == "all":
            return (1,) * len(group_ks)
        if self.mode == "single":
            if self.k not in group_ks:
                raise NotFound(f"no group with index {self.k} (have {list(group_ks)})")
            return tuple(1 if k == self.k else 0 for k in group_ks)
        if self.alpha is None or len(self.alpha) != len(group_ks):
            got = 0 if self.alpha is None else len(self.alpha)
            raise AlphaLengthMismatch(
                f"{got} coefficients for {len(group_ks)} groups"
            )
        return self.alpha


@dataclass(frozen=True, eq=False)
class ReduceOutput:
    records: tuple[ImageFeatures, ...]

    def __eq__(self, other) -> bool:
        if not isinstance(other, ReduceOutput):
            return NotImplemented
        return self.records == other.records

    def to_csv(self) -> str:
        out = StringIO()
        out.write(CSV_HEADER + "\n")
        for rec in self.records:
            for i, kp in enumerate(rec.keypoints):
                out.write(
                    f"{rec.filename},{i},{kp.x!r},{kp.y!r},{kp.scale!r},"
                    f"{kp.orientation!r},{kp.response!r}\n"
                )
        return out.getvalue()

    def descriptor_bytes(self) -> bytes:
        """Little-endian f32 descriptor rows concatenated in CSV record order."""
        chunks = [
            rec.descriptors.astype("<f4", copy=False).tobytes()
            for rec in self.records
            if rec.descriptors.size
        ]
        return b"".join(chunks)

    def save(self, csv_path, descriptor_path=None) -> None:
        Path(csv_path).write_text(self.to_csv(), encoding="utf-8")
        if descriptor_path is not None:
            Path(descriptor_path).write_bytes(self.descriptor_bytes())


def reduce(sets, spec: ReduceSpec) -> ReduceOutput:
    """Collect per-image records of the selected groups, ascending group order."""
    ordered = sorted(sets, key=lambda s: s.k)
    alpha = spec.resolve(tuple(s.k for s in ordered))
    records: list[ImageFeatures] = []
    for a, fset in zip(alpha, ordered):
        if a:
            records.extend(fset.per_image)
    return ReduceOutput(records=tuple(records))


# --- job driver ---


@dataclass
class JobStats:
    wall_time: float = 0.0
    group_times: dict[int, float] = field(default_factory=dict)
    images: int = 0
    groups: int = 0
    workers: int = 1
    extractor: str = ""
    blocksize: int = 0


def run_job(
    store: BigImage,
    blocksize: int,
    extractor: str,
    spec: ReduceSpec | None = None,
    workers: int = 1,
) -> tuple[ReduceOutput, JobStats]:
    """Partition, map every group on at most ``workers`` tasks, reduce.

    File-backed stores fan out to a process pool (each worker opens its own
    handle on the data file); in-memory stores use threads.  workers=1 runs
    inline.  The reduce keys results by group index, so output does not
    depend on scheduling.
    """
    if workers < 1:
        raise ValueError(f"workers must be >= 1, got {workers}")
    spec = spec or ReduceSpec.all_groups()
    t0 = time.perf_counter()
    plan = partition(store, blocksize)

    results: list[FeatureSet] = []
    times: dict[int, float] = {}
    if workers == 1 or len(plan.groups) == 1:
        for g in plan.groups:
            g0 = time.perf_counter()
            results.append(map_group(g, store, extractor))
            times[g.k] = time.perf_counter() - g0
    elif isinstance(store.data, FileByteStore):
        path = str(store.data.path)
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futs = [
                pool.submit(_map_group_from_file, path, g.k, g.members, extractor)
                for g in plan.groups
            ]
            for fut in futs:
                fset, dt = fut.result()
                results.append(fset)
                times[fset.k] = dt
    else:
        def _one(g: Group) -> tuple[FeatureSet, float]:
            g0 = time.perf_counter()
            return map_group(g, store, extractor), time.perf_counter() - g0

        with ThreadPoolExecutor(max_workers=workers) as pool:
            for fset, dt in pool.map(_one, plan.groups):
                results.append(fset)
                times[fset.k] = dt

    output = reduce(results, spec)
    stats = JobStats(
        wall_time=time.perf_counter() - t0,
        group_times=times,
        images=len(store.entries),
        groups=len(plan.groups),
        workers=workers,
        extractor=extractor,
        blocksize=blocksize,
    )
    return output, stats
