"""TCP dispatch service: store-and-match processing of uploaded images.

One request per connection.  The handler runs two paths concurrently: the
payload is appended to a staging store unconditionally, and in parallel the
(filename, extension) parameters are matched against a rule table that picks
the response algorithm.  Matched requests return extracted features; an
unmatched request gets an explicit NO_MATCH frame (silence would be
untestable and hostile to clients) but its payload is still persisted.

Wire protocol (ASCII header + binary payload, little room for ambiguity):

    request:   ICP/1 PROCESS <filename> <extension> <payload_len>\\n
               + exactly payload_len bytes (an image record, see pimage)
    response:  ICP/1 OK <n_keypoints> <body_len>\\n  + body
               ICP/1 NO_MATCH 0 0\\n
               ICP/1 ERR <code> <msg_len>\\n  + message

The OK body is the engine's CSV (header + one row per keypoint) immediately
followed by the binary descriptor rows; n_keypoints tells the client where
the CSV ends.
"""

from __future__ import annotations

import itertools
import socket
import threading
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import engine, pimage
from .errors import (
    BadFrame,
    ConfigError,
    IcpError,
    PayloadTooLarge,
    UndecodablePayload,
)
from .pimage import PImage
from .store import BigImage, FileByteStore

PROTOCOL = "ICP/1"
DEFAULT_PAYLOAD_LIMIT = 16 * 1024 * 1024
MAX_HEADER = 8192
KNOWN_ALGORITHMS = ("harris", "sift")


# --- matching configuration ---


@dataclass(frozen=True)
class MatchRule:
    fn_pattern: str         # exact filename or "*"
    fe: str                 # extension, lowercase, no leading dot
    algorithm: str


@dataclass(frozen=True)
class MatchConfig:
    rules: tuple[MatchRule, ...] = ()

    def match(self, filename: str, extension: str) -> tuple[int, str] | None:
        """First rule matching (filename, extension): (rule index, algorithm)."""
        ext = extension.lower()
        for i, rule in enumerate(self.rules):
            if (rule.fn_pattern == "*" or rule.fn_pattern == filename) and rule.fe == ext:
                return i, rule.algorithm
        return None

    @classmethod
    def from_lines(cls, lines) -> "MatchConfig":
        rules = []
        for lineno, line in enumerate(lines, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            parts = text.split()
            if len(parts) != 3:
                raise ConfigError(
                    f"line {lineno}: expected '<fn_pattern> <fe> <algorithm>', got {text!r}"
                )
            fn, fe, algo = parts
            fe = fe.lower().lstrip(".")
            if not fe:
                raise ConfigError(f"line {lineno}: empty extension")
            if algo not in KNOWN_ALGORITHMS:
                raise ConfigError(
                    f"line {lineno}: unknown algorithm {algo!r} (known: {KNOWN_ALGORITHMS})"
                )
            rules.append(MatchRule(fn_pattern=fn, fe=fe, algorithm=algo))
        return cls(rules=tuple(rules))

    @classmethod
    def load(cls, path) -> "MatchConfig":
        return cls.from_lines(Path(path).read_text(encoding="utf-8").splitlines())


def match_params(filename: str, extension: str, config: MatchConfig) -> str | None:
    """Algorithm name selected by the first matching rule, or None."""
    hit = config.match(filename, extension)
    return None if hit is None else hit[1]


# --- request framing ---


@dataclass(frozen=True)
class Request:
    request_id: int
    filename: str
    extension: str          # lowercase, no dot
    operation: str | None   # reserved hint; the config decides the algorithm
    payload: bytes
    image: PImage


def _parse_header(line: bytes) -> tuple[str, str, int]:
    try:
        text = line.decode("ascii")
    except UnicodeDecodeError:
        raise BadFrame("header is not ASCII") from None
    parts = text.split(" ")
    if len(parts) != 5:
        raise BadFrame(f"header has {len(parts)} fields, expected 5")
    proto, verb, filename, extension, length = parts
    if proto != PROTOCOL:
        raise BadFrame(f"unknown protocol {proto!r}")
    if verb != "PROCESS":
        raise BadFrame(f"unknown verb {verb!r}")
    if not filename or not extension:
        raise BadFrame("filename and extension must be non-empty")
    try:
        payload_len = int(length)
    except ValueError:
        raise BadFrame(f"payload length {length!r} is not an integer") from None
    if payload_len < 0:
        raise BadFrame(f"negative payload length {payload_len}")
    return filename, extension.lower().lstrip("."), payload_len


def _build_request(
    filename: str, extension: str, payload: bytes, request_id: int
) -> Request:
    try:
        image = pimage.decode_record(payload)
    except IcpError as exc:
        raise UndecodablePayload(f"payload is not a valid image record: {exc}") from exc
    return Request(
        request_id=request_id,
        filename=filename,
        extension=extension,
        operation=None,
        payload=payload,
        image=image,
    )


def parse_frame(
    data: bytes, request_id: int = 0, payload_limit: int = DEFAULT_PAYLOAD_LIMIT
) -> Request:
    """Parse one complete request frame from raw bytes."""
    nl = data.find(b"\n", 0, MAX_HEADER)
    if nl < 0:
        raise BadFrame(
            f"no newline in the first {min(len(data), MAX_HEADER)} bytes"
        )
    filename, extension, payload_len = _parse_header(data[:nl])
    if payload_len > payload_limit:
        raise PayloadTooLarge(f"{payload_len} bytes exceeds limit {payload_limit}")
    payload = data[nl + 1 :]
    if len(payload) < payload_len:
        raise BadFrame(f"declared {payload_len} payload bytes, got {len(payload)}")
    if len(payload) > payload_len:
        raise BadFrame(f"{len(payload) - payload_len} trailing bytes after payload")
    return _build_request(filename, extension, payload, request_id)


def _read_exact(rfile, n: int) -> bytes:
    chunks = []
    remaining = n
    while remaining:
        chunk = rfile.read(remaining)
        if not chunk:
            raise BadFrame(f"connection closed with {remaining} payload bytes missing")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def _read_request(rfile, request_id: int, payload_limit: int) -> Request:
    header = rfile.readline(MAX_HEADER + 1)
    if not header:
        raise BadFrame("connection closed before header")
    if not header.endswith(b"\n"):
        raise BadFrame(f"no newline in the first {len(header)} header bytes")
    filename, extension, payload_len = _parse_header(header[:-1])
    if payload_len > payload_limit:
        raise PayloadTooLarge(f"{payload_len} bytes exceeds limit {payload_limit}")
    payload = _read_exact(rfile, payload_len)
    return _build_request(filename, extension, payload, request_id)


_ERROR_CODES = {
    BadFrame: "BAD_FRAME",
    PayloadTooLarge: "PAYLOAD_TOO_LARGE",
    UndecodablePayload: "UNDECODABLE_PAYLOAD",
}


def _error_code(exc: Exception) -> str:
    return _ERROR_CODES.get(type(exc), "INTERNAL")


# --- dispatch records ---


@dataclass(frozen=True)
class DispatchRecord:
    request_id: int
    rule_index: int | None
    enqueue: float
    start: float
    finish: float
    outcome: str            # "Completed" | "NoMatch" | "Failed"
    error: str | None = None


# --- server ---


class DicpServer:
    """Threaded request server with a bounded algorithm pool.

    One acceptor thread; one handler thread per connection.  Algorithm
    execution is funneled through a FIFO pool of ``max_inflight`` workers,
    so at most that many extractions run at once and excess requests queue.
    Staging-store appends go through a single-worker pool, which serializes
    them (the store is single-writer).  Every request — matched, unmatched,
    or failed — leaves a DispatchRecord.
    """

    def __init__(
        self,
        config: MatchConfig,
        host: str = "127.0.0.1",
        port: int = 0,
        staging_base: str | Path | None = None,
        max_inflight: int = 64,
        payload_limit: int = DEFAULT_PAYLOAD_LIMIT,
    ):
        self.config = config
        self.host = host
        self.port = port
        self.payload_limit = payload_limit
        self.staging_base = Path(staging_base) if staging_base is not None else None
        if self.staging_base is not None:
            data_path = self.staging_base.with_name(self.staging_base.name + ".bigdata")
            data_path.parent.mkdir(parents=True, exist_ok=True)
            data_path.write_bytes(b"")          # staging always starts fresh
            self.staging = BigImage(data_store=FileByteStore(data_path, writable=True))
        else:
            self.staging = BigImage()
        self.records: list[DispatchRecord] = []
        self._records_lock = threading.Lock()
        self._ids = itertools.count(1)
        self._match_pool = ThreadPoolExecutor(
            max_workers=max_inflight, thread_name_prefix="icp-match"
        )
        self._store_pool = ThreadPoolExecutor(
            max_workers=1, thread_name_prefix="icp-store"
        )
        self._listener: socket.socket | None = None
        self._acceptor: threading.Thread | None = None
        self._handlers: list[threading.Thread] = []
        self._shutdown = threading.Event()

    # -- lifecycle --

    def start(self) -> "DicpServer":
        listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        listener.bind((self.host, self.port))
        listener.listen(128)
        listener.settimeout(0.5)    # lets the accept loop notice shutdown
        self.port = listener.getsockname()[1]
        self._listener = listener
        self._acceptor = threading.Thread(
            target=self._accept_loop, name="icp-accept", daemon=True
        )
        self._acceptor.start()
        return self

    @property
    def address(self) -> tuple[str, int]:
        return (self.host, self.port)

    def stop(self) -> None:
        self._shutdown.set()
        if self._listener is not None:
            try:
                # a blocked accept() does not return on close() alone
                self._listener.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            try:
                self._listener.close()
            except OSError:
                pass
        if self._acceptor is not None:
            self._acceptor.join(timeout=5)
        for t in list(self._handlers):
            t.join(timeout=5)
        self._match_pool.shutdown(wait=True)
        self._store_pool.shutdown(wait=True)
        if self.staging_base is not None:
            self.staging.save(self.staging_base)
        self.staging.close()

    def __enter__(self) -> "DicpServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()

    # -- accept / handle --

    def _accept_loop(self) -> None:
        assert self._listener is not None
        while not self._shutdown.is_set():
            try:
                conn, _ = self._listener.accept()
            except socket.timeout:
                continue
            except OSError:
                break
            t = threading.Thread(
                target=self._handle_connection, args=(conn,), daemon=True
            )
            t.start()
            self._handlers.append(t)
            if len(self._handlers) > 256:
                self._handlers = [h for h in self._handlers if h.is_alive()]

    def _handle_connection(self, conn: socket.socket) -> None:
        request_id = next(self._ids)
        enqueue = time.monotonic()
        try:
            with conn:
                conn.settimeout(30)
                rfile = conn.makefile("rb")
                try:
                    req = _read_request(rfile, request_id, self.payload_limit)
                except IcpError as exc:
                    self._send_error(conn, exc)
                    self._record(
                        request_id, None, enqueue, enqueue, "Failed", str(exc)
                    )
                    return
                self._handle_request(conn, req, enqueue)
        except Exception as exc:  # connection-level failures must not kill the server
            self._record(request_id, None, enqueue, enqueue, "Failed", str(exc))

    def _handle_request(self, conn: socket.socket, req: Request, enqueue: float) -> None:
        store_future = self._store_pool.submit(self._store_payload, req)
        hit = self.config.match(req.filename, req.extension)
        rule_index: int | None = None
        algo_error: str | None = None
        start = time.monotonic()
        response: bytes
        outcome: str
        if hit is None:
            response = f"{PROTOCOL} NO_MATCH 0 0\n".encode("ascii")
            outcome = "NoMatch"
        else:
            rule_index, algorithm = hit
            future = self._match_pool.submit(self._run_algorithm, req, algorithm)
            try:
                n_keypoints, body, start = future.result()
                header = f"{PROTOCOL} OK {n_keypoints} {len(body)}\n".encode("ascii")
                response = header + body
                outcome = "Completed"
            except Exception as exc:
                algo_error = f"algorithm failed: {exc}"
                msg = str(exc).encode("utf-8", "replace")
                response = (
                    f"{PROTOCOL} ERR INTERNAL {len(msg)}\n".encode("ascii") + msg
                )
                outcome = "Failed"

        store_error: str | None = None
        try:
            store_future.result()
        except Exception as exc:  # storage failing must not lose the response
            store_error = f"storage failed: {exc}"
            if outcome != "Failed":
                outcome = "Failed"

        try:
            conn.sendall(response)
        except OSError as exc:
            outcome = "Failed"
            algo_error = algo_error or f"send failed: {exc}"
        error = "; ".join(e for e in (algo_error, store_error) if e) or None
        self._record(req.request_id, rule_index, enqueue, start, outcome, error)

    def _store_payload(self, req: Request) -> int:
        """Append the uploaded image to staging under a unique name."""
        name = f"r{req.request_id:08d}_{req.filename}.{req.extension}"
        entry = self.staging.append(PImage(name, req.image.matrix))
        return entry.start_offset

    def _run_algorithm(self, req: Request, algorithm: str) -> tuple[int, bytes, float]:
        start = time.monotonic()
        feat = engine.extract_image(req.image, algorithm)
        out = engine.ReduceOutput(records=(feat,))
        body = out.to_csv().encode("utf-8") + out.descriptor_bytes()
        return len(feat.keypoints), body, start

    def _send_error(self, conn: socket.socket, exc: Exception) -> None:
        msg = str(exc).encode("utf-8", "replace")
        frame = f"{PROTOCOL} ERR {_error_code(exc)} {len(msg)}\n".encode("ascii") + msg
        try:
            conn.sendall(frame)
        except OSError:
            pass

    def _record(
        self,
        request_id: int,
        rule_index: int | None,
        enqueue: float,
        start: float,
        outcome: str,
        error: str | None = None,
    ) -> None:
        rec = DispatchRecord(
            request_id=request_id,
            rule_index=rule_index,
            enqueue=enqueue,
            start=start,
            finish=time.monotonic(),
            outcome=outcome,
            error=error,
        )
        with self._records_lock:
            self.records.append(rec)


# --- client ---


@dataclass(frozen=True)
class Response:
    status: str             # "OK" | "NO_MATCH" | "ERR"
    n_keypoints: int
    code: str | None        # ERR code, else None
    body: bytes
    latency: float


def send_request(
    address: tuple[str, int],
    filename: str,
    extension: str,
    payload: bytes,
    timeout: float = 30.0,
) -> Response:
    """Send one request frame and read the complete response."""
    t0 = time.perf_counter()
    with socket.create_connection(address, timeout=timeout) as sock:
        header = f"{PROTOCOL} PROCESS {filename} {extension} {len(payload)}\n"
        sock.sendall(header.encode("ascii") + payload)
        rfile = sock.makefile("rb")
        status_line = rfile.readline(MAX_HEADER)
        if not status_line.endswith(b"\n"):
            raise BadFrame("response header missing newline")
        parts = status_line[:-1].decode("ascii", "replace").split(" ")
        if len(parts) != 4 or parts[0] != PROTOCOL:
            raise BadFrame(f"malformed response header {status_line!r}")
        _, status, a, b = parts
        if status == "OK":
            n_keypoints, body_len, code = int(a), int(b), None
        elif status == "NO_MATCH":
            n_keypoints, body_len, code = 0, 0, None
        elif status == "ERR":
            n_keypoints, body_len, code = 0, int(b), a
        else:
            raise BadFrame(f"unknown response status {status!r}")
        body = _read_exact(rfile, body_len) if body_len else b""
    return Response(
        status=status,
        n_keypoints=n_keypoints,
        code=code,
        body=body,
        latency=time.perf_counter() - t0,
    )


def split_ok_body(n_keypoints: int, body: bytes) -> tuple[str, bytes]:
    """Split an OK body into (csv text, descriptor bytes).

    The CSV is the header line plus one row per keypoint; everything after
    the (n_keypoints+1)-th newline is binary descriptor data.
    """
    pos = 0
    for _ in range(n_keypoints + 1):
        nl = body.find(b"\n", pos)
        if nl < 0:
            raise BadFrame("OK body shorter than its keypoint count")
        pos = nl + 1
    return body[:pos].decode("utf-8"), body[pos:]


# --- trials ---


@dataclass
class StabilityReport:
    batch_sizes: list[int]
    batch_means: list[float]

    @property
    def cv(self) -> float:
        """Coefficient of variation of the per-batch mean latencies."""
        means = np.asarray(self.batch_means)
        if means.size == 0 or means.mean() == 0.0:
            return 0.0
        return float(means.std() / means.mean())


def run_stability_trial(
    address: tuple[str, int],
    batches,
    gap: float = 0.05,
    timeout: float = 30.0,
) -> StabilityReport:
    """Upload batches sequentially; record mean per-image latency per batch.

    Each batch is an iterable of (filename, extension, payload) triples.
    Empty batches are skipped with a warning.
    """
    report = StabilityReport(batch_sizes=[], batch_means=[])
    for i, batch in enumerate(batches):
        batch = list(batch)
        if not batch:
            warnings.warn(f"stability trial: batch {i} is empty, skipping")
            continue
        latencies = []
        for filename, extension, payload in batch:
            resp = send_request(address, filename, extension, payload, timeout=timeout)
            latencies.append(resp.latency)
        report.batch_sizes.append(len(batch))
        report.batch_means.append(sum(latencies) / len(latencies))
        if gap:
            time.sleep(gap)
    return report


@dataclass
class PressureReport:
    total: int
    failures: int
    series: list[tuple[float, int]]     # (seconds since start, completed count)

    @property
    def r_squared(self) -> float:
        """Least-squares R^2 of completed count vs time."""
        pts = [(t, c) for t, c in self.series]
        if len(pts) < 3:
            return 1.0
        t = np.asarray([p[0] for p in pts])
        c = np.asarray([p[1] for p in pts], dtype=np.float64)
        if np.ptp(c) == 0.0 or np.ptp(t) == 0.0:
            return 1.0
        from scipy import stats

        return float(stats.linregress(t, c).rvalue ** 2)


def run_pressure_trial(
    address: tuple[str, int],
    images,
    concurrency: int = 8,
    sample_interval: float = 0.02,
    timeout: float = 60.0,
) -> PressureReport:
    """Upload every image as fast as the connection pool allows.

    ``images`` is a sequence of (filename, extension, payload) triples.
    Samples the completed-request count until all uploads finish.
    """
    images = list(images)
    if not images:
        return PressureReport(total=0, failures=0, series=[])
    completed = 0
    failures = 0
    lock = threading.Lock()

    def upload(item):
        nonlocal completed, failures
        filename, extension, payload = item
        try:
            resp = send_request(address, filename, extension, payload, timeout=timeout)
            ok = resp.status in ("OK", "NO_MATCH")
        except Exception:
            ok = False
        with lock:
            completed += 1
            if not ok:
                failures += 1

    series: list[tuple[float, int]] = []
    t0 = time.perf_counter()
    with ThreadPoolExecutor(max_workers=concurrency) as pool:
        futures = [pool.submit(upload, item) for item in images]
        while True:
            with lock:
                done = completed
            series.append((time.perf_counter() - t0, done))
            if done >= len(images):
                break
            time.sleep(sample_interval)
        for f in futures:
            f.result()
    return PressureReport(total=len(images), failures=failures, series=series)
