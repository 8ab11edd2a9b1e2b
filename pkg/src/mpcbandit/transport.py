"""Party runtimes, message framing and round accounting.

Every party runs the same deterministic program in its own thread (or
process). All inter-party effects go through :meth:`Channel.exchange`, which
sends one frame to each listed recipient, blocks until one frame from each
listed sender has arrived, and charges one communication round to the
party's :class:`RoundLedger`.

Frame layout (little endian), see ``docs/wire_format.md``::

    magic 4s | version u16 | session u64 | seq u64 | label_hash u64 | n_arrays u32
    then per array: dtype u8 | ndim u8 | dims u32 * ndim | raw data

TCP adds a u32 length prefix in front of each frame.
"""

from __future__ import annotations

import contextlib
import csv
import enum
import hashlib
import io
import queue
import socket
import struct
import threading
import time
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

DEFAULT_TIMEOUT = 30.0

FRAME_MAGIC = b"MPCF"
FRAME_VERSION = 1
_HEADER = struct.Struct("<4sHQQQI")
_ARRAY_HEAD = struct.Struct("<BB")
_DTYPES = {0: np.dtype("<u8"), 1: np.dtype("<i8"), 2: np.dtype("<f8"), 3: np.dtype("u1")}
_DTYPE_CODES = {dt: code for code, dt in _DTYPES.items()}


class TransportError(RuntimeError):
    pass


class TransportTimeout(TransportError):
    pass


class PeerDisconnected(TransportError):
    pass


class ProtocolDesyncError(TransportError):
    """A received frame does not belong to the step the receiver is executing."""


class RoleError(ValueError):
    pass


class Role(enum.Enum):
    COMPUTE = "compute"
    PULLER = "puller"
    REWARDER = "rewarder"


@dataclass(frozen=True)
class PartyId:
    index: int
    role: Role = Role.COMPUTE

    @property
    def is_compute(self) -> bool:
        return self.role is Role.COMPUTE


def make_party_ids(n_compute: int, with_outsiders: bool = True) -> list[PartyId]:
    """Compute parties get indices 0..n-1; the arm puller and reward receiver follow."""
    ids = [PartyId(i) for i in range(n_compute)]
    if with_outsiders:
        ids += [PartyId(n_compute, Role.PULLER), PartyId(n_compute + 1, Role.REWARDER)]
    return ids


def label_hash(label: str) -> int:
    return int.from_bytes(hashlib.blake2b(label.encode(), digest_size=8).digest(), "little")


def encode_frame(session: int, seq: int, label: str, arrays: Sequence[np.ndarray]) -> bytes:
    out = io.BytesIO()
    out.write(_HEADER.pack(FRAME_MAGIC, FRAME_VERSION, session, seq, label_hash(label), len(arrays)))
    for arr in arrays:
        arr = np.asarray(arr)
        dt = arr.dtype.newbyteorder("<") if arr.dtype.itemsize > 1 else arr.dtype
        if dt not in _DTYPE_CODES:
            raise TypeError(f"unsupported payload dtype {arr.dtype}")
        out.write(_ARRAY_HEAD.pack(_DTYPE_CODES[dt], arr.ndim))
        out.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.write(np.ascontiguousarray(arr, dtype=dt).tobytes())
    return out.getvalue()


@dataclass
class Frame:
    session: int
    seq: int
    label_hash: int
    arrays: list[np.ndarray]


def decode_frame(buf: bytes) -> Frame:
    magic, version, session, seq, lhash, n = _HEADER.unpack_from(buf, 0)
    if magic != FRAME_MAGIC or version != FRAME_VERSION:
        raise TransportError("bad frame header")
    off = _HEADER.size
    arrays = []
    for _ in range(n):
        code, ndim = _ARRAY_HEAD.unpack_from(buf, off)
        off += _ARRAY_HEAD.size
        shape = struct.unpack_from(f"<{ndim}I", buf, off)
        off += 4 * ndim
        dt = _DTYPES[code]
        count = int(np.prod(shape)) if ndim else 1
        arrays.append(np.frombuffer(buf, dtype=dt, count=count, offset=off).reshape(shape).copy())
        off += count * dt.itemsize
    if off != len(buf):
        raise TransportError("trailing bytes in frame")
    return Frame(session, seq, lhash, arrays)


class RoundLedger:
    """Rounds and bytes sent, keyed by operation label."""

    def __init__(self):
        self.rounds: dict[str, int] = defaultdict(int)
        self.bytes_sent: dict[str, int] = defaultdict(int)

    def record(self, label: str, nbytes: int) -> None:
        self.rounds[label] += 1
        self.bytes_sent[label] += nbytes

    @property
    def total_rounds(self) -> int:
        return sum(self.rounds.values())

    @property
    def total_bytes(self) -> int:
        return sum(self.bytes_sent.values())

    def rows(self) -> list[tuple[str, int, int]]:
        return [(k, self.rounds[k], self.bytes_sent[k]) for k in sorted(self.rounds)]

    def to_csv(self, path_or_file) -> None:
        with contextlib.ExitStack() as stack:
            fh = path_or_file
            if not hasattr(fh, "write"):
                fh = stack.enter_context(open(path_or_file, "w", newline=""))
            writer = csv.writer(fh)
            writer.writerow(["operation", "rounds", "bytes"])
            writer.writerows(self.rows())


@dataclass
class TranscriptEntry:
    direction: str  # "send" or "recv"
    peer: int
    label: str
    seq: int
    frame: bytes


# -- backends ---------------------------------------------------------------

_ABORT = object()


class LocalNetwork:
    """In-process backend: one FIFO queue per ordered pair of parties."""

    def __init__(self, n_total: int):
        self.n_total = n_total
        self._queues = {(s, d): queue.Queue() for s in range(n_total) for d in range(n_total) if s != d}
        self.aborted = threading.Event()

    def endpoint(self, index: int) -> "LocalEndpoint":
        return LocalEndpoint(self, index)

    def abort(self) -> None:
        self.aborted.set()
        for q in self._queues.values():
            q.put(_ABORT)


class LocalEndpoint:
    def __init__(self, net: LocalNetwork, index: int):
        self.net = net
        self.index = index

    def send(self, dst: int, frame: bytes) -> None:
        if self.net.aborted.is_set():
            raise PeerDisconnected("session aborted")
        self.net._queues[(self.index, dst)].put(frame)

    def recv(self, src: int, timeout: float) -> bytes:
        try:
            item = self.net._queues[(src, self.index)].get(timeout=timeout)
        except queue.Empty:
            raise TransportTimeout(f"party {self.index}: no frame from {src} within {timeout}s") from None
        if item is _ABORT:
            raise PeerDisconnected(f"party {self.index}: session aborted while waiting on {src}")
        return item

    def close(self) -> None:
        pass


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    chunks = bytearray()
    while len(chunks) < n:
        part = sock.recv(n - len(chunks))
        if not part:
            raise PeerDisconnected("connection closed")
        chunks += part
    return bytes(chunks)


class TcpEndpoint:
    """Full-mesh plain TCP backend with one reader thread per peer connection."""

    def __init__(self, index: int, addresses: Sequence[tuple[str, int]], connect_timeout: float = DEFAULT_TIMEOUT):
        self.index = index
        self.addresses = list(addresses)
        self._socks: dict[int, socket.socket] = {}
        self._inbox: dict[int, queue.Queue] = {p: queue.Queue() for p in range(len(addresses)) if p != index}
        self._listener = socket.create_server(self.addresses[index], reuse_port=False)
        self._connect_timeout = connect_timeout
        self._closed = False

    def connect(self) -> None:
        n = len(self.addresses)
        expected = [p for p in range(n) if p < self.index]
        self._listener.settimeout(self._connect_timeout)
        deadline = time.monotonic() + self._connect_timeout
        for peer in range(self.index + 1, n):
            while True:
                try:
                    s = socket.create_connection(self.addresses[peer], timeout=1.0)
                    break
                except OSError:
                    if time.monotonic() > deadline:
                        raise TransportTimeout(f"party {self.index}: cannot reach {peer}") from None
                    time.sleep(0.02)
            s.sendall(struct.pack("<I", self.index))
            self._socks[peer] = s
        for _ in expected:
            s, _addr = self._listener.accept()
            (peer,) = struct.unpack("<I", _recv_exact(s, 4))
            self._socks[peer] = s
        for peer, s in self._socks.items():
            s.settimeout(None)
            s.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            threading.Thread(target=self._reader, args=(peer, s), daemon=True).start()

    def _reader(self, peer: int, s: socket.socket) -> None:
        try:
            while True:
                (length,) = struct.unpack("<I", _recv_exact(s, 4))
                self._inbox[peer].put(_recv_exact(s, length))
        except (OSError, TransportError):
            self._inbox[peer].put(_ABORT)

    def send(self, dst: int, frame: bytes) -> None:
        try:
            self._socks[dst].sendall(struct.pack("<I", len(frame)) + frame)
        except OSError as exc:
            raise PeerDisconnected(f"party {self.index}: send to {dst} failed") from exc

    def recv(self, src: int, timeout: float) -> bytes:
        try:
            item = self._inbox[src].get(timeout=timeout)
        except queue.Empty:
            raise TransportTimeout(f"party {self.index}: no frame from {src} within {timeout}s") from None
        if item is _ABORT:
            raise PeerDisconnected(f"party {self.index}: connection to {src} lost")
        return item

    def close(self) -> None:
        if self._closed:
            return
        self._closed = True
        for s in self._socks.values():
            with contextlib.suppress(OSError):
                s.shutdown(socket.SHUT_RDWR)
            s.close()
        self._listener.close()


def free_tcp_addresses(n: int, host: str = "127.0.0.1") -> list[tuple[str, int]]:
    socks = [socket.socket() for _ in range(n)]
    try:
        for s in socks:
            s.bind((host, 0))
        return [(host, s.getsockname()[1]) for s in socks]
    finally:
        for s in socks:
            s.close()


# -- channel ---------------------------------------------------------------


class Channel:
    """Round-synchronous message plane of one party."""

    def __init__(self, index: int, endpoint, session: int = 0, timeout: float = DEFAULT_TIMEOUT,
                 capture_transcript: bool = False):
        self.index = index
        self.endpoint = endpoint
        self.session = session
        self.timeout = timeout
        self.ledger = RoundLedger()
        self.transcript: list[TranscriptEntry] | None = [] if capture_transcript else None
        self._send_seq: dict[int, int] = defaultdict(int)
        self._recv_seq: dict[int, int] = defaultdict(int)

    def exchange(self, send: Mapping[int, Sequence[np.ndarray]], recv_from: Iterable[int],
                 label: str) -> dict[int, list[np.ndarray]]:
        nbytes = 0
        for dst, arrays in send.items():
            seq = self._send_seq[dst]
            frame = encode_frame(self.session, seq, label, arrays)
            self._send_seq[dst] = seq + 1
            self.endpoint.send(dst, frame)
            nbytes += len(frame)
            if self.transcript is not None:
                self.transcript.append(TranscriptEntry("send", dst, label, seq, frame))
        received = {}
        want = label_hash(label)
        for src in recv_from:
            raw = self.endpoint.recv(src, self.timeout)
            frame = decode_frame(raw)
            expected_seq = self._recv_seq[src]
            if frame.session != self.session or frame.seq != expected_seq or frame.label_hash != want:
                raise ProtocolDesyncError(
                    f"party {self.index}: frame from {src} (seq {frame.seq}) does not match "
                    f"step {expected_seq} of '{label}'")
            self._recv_seq[src] = expected_seq + 1
            received[src] = frame.arrays
            if self.transcript is not None:
                self.transcript.append(TranscriptEntry("recv", src, label, frame.seq, raw))
        self.ledger.record(label, nbytes)
        return received


class Runtime:
    """Per-party execution context: identity, channel, label scope and local randomness."""

    def __init__(self, pid: PartyId, n_compute: int, channel: Channel, rng: np.random.Generator,
                 store=None, cfg=None):
        from .ring import DEFAULT_CONFIG

        self.pid = pid
        self.n_parties = n_compute
        self.channel = channel
        self.rng = rng
        self.store = store
        self.cfg = cfg or DEFAULT_CONFIG
        self._scope: list[str] = []

    @property
    def index(self) -> int:
        return self.pid.index

    @property
    def ledger(self) -> RoundLedger:
        return self.channel.ledger

    @property
    def peers(self) -> list[int]:
        return [p for p in range(self.n_parties) if p != self.index]

    @property
    def is_leader(self) -> bool:
        """Party 0 adds public constants to its share."""
        return self.index == 0

    @contextlib.contextmanager
    def scope(self, name: str):
        self._scope.append(name)
        try:
            yield
        finally:
            self._scope.pop()

    def label(self, leaf: str) -> str:
        return "/".join([*self._scope, leaf])

    def exchange(self, send, recv_from, leaf: str):
        return self.channel.exchange(send, recv_from, self.label(leaf))

    def all_to_all(self, arrays: Sequence[np.ndarray], leaf: str) -> dict[int, list[np.ndarray]]:
        """Send the same arrays to every other compute party and collect theirs."""
        peers = self.peers
        return self.exchange({p: arrays for p in peers}, peers, leaf)


# -- harness ---------------------------------------------------------------


@dataclass
class SessionResult:
    results: dict[int, object]
    ledgers: dict[int, RoundLedger]
    transcripts: dict[int, list[TranscriptEntry] | None] = field(default_factory=dict)
    wall_seconds: float = 0.0


def make_endpoints(n_total: int, transport: str = "local", addresses=None):
    if transport == "local":
        net = LocalNetwork(n_total)
        return [net.endpoint(i) for i in range(n_total)], net.abort
    if transport == "tcp":
        addresses = addresses or free_tcp_addresses(n_total)
        eps = [TcpEndpoint(i, addresses) for i in range(n_total)]
        threads = [threading.Thread(target=ep.connect) for ep in eps]
        for t in threads:
            t.start()
        for t in threads:
            t.join()

        def abort():
            for ep in eps:
                ep.close()

        return eps, abort
    raise ValueError(f"unknown transport {transport!r}")


def run_session(programs: Mapping[PartyId, Callable[[Runtime], object]], n_compute: int, *,
                stores: Mapping[int, object] | None = None, transport: str = "local", seed: int | None = 0,
                cfg=None, timeout: float = DEFAULT_TIMEOUT, capture_transcripts: bool = False,
                session: int = 0, addresses=None, processes: bool = False) -> SessionResult:
    """Run one program per party concurrently (threads) and collect their return values.

    If any party fails, the network is torn down so the others stop waiting,
    and the first failure is re-raised. With ``processes=True`` every party
    runs in a forked OS process over TCP; its store must then be
    self-contained (a material file rather than a shared dealer).
    """
    pids = sorted(programs, key=lambda p: p.index)
    n_total = max(p.index for p in pids) + 1
    if processes:
        return _run_processes(programs, pids, n_compute, stores, seed, cfg, timeout, capture_transcripts,
                              session, addresses or free_tcp_addresses(n_total))
    endpoints, abort = make_endpoints(n_total, transport, addresses)
    seeds = np.random.SeedSequence(seed).spawn(n_total)
    runtimes = {}
    for pid in pids:
        chan = Channel(pid.index, endpoints[pid.index], session=session, timeout=timeout,
                       capture_transcript=capture_transcripts)
        store = (stores or {}).get(pid.index)
        runtimes[pid] = Runtime(pid, n_compute, chan, np.random.default_rng(seeds[pid.index]), store, cfg)

    results: dict[int, object] = {}
    errors: list[BaseException] = []
    lock = threading.Lock()

    def target(pid):
        try:
            # ring arithmetic wraps by design; numpy scalars would warn about it
            with np.errstate(over="ignore"):
                out = programs[pid](runtimes[pid])
            with lock:
                results[pid.index] = out
        except BaseException as exc:  # noqa: BLE001 - re-raised in the caller
            with lock:
                errors.append(exc)
            abort()

    start = time.perf_counter()
    threads = [threading.Thread(target=target, args=(pid,), name=f"party-{pid.index}") for pid in pids]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    elapsed = time.perf_counter() - start
    for ep in endpoints:
        ep.close()
    if errors:
        primary = next((e for e in errors if not isinstance(e, PeerDisconnected)), errors[0])
        raise primary
    return SessionResult(
        results=results,
        ledgers={pid.index: rt.ledger for pid, rt in runtimes.items()},
        transcripts={pid.index: rt.channel.transcript for pid, rt in runtimes.items()},
        wall_seconds=elapsed,
    )


def _process_main(pid, program, n_compute, store, seed_seq, cfg, timeout, capture, session, addresses, out):
    try:
        endpoint = TcpEndpoint(pid.index, addresses, connect_timeout=timeout)
        endpoint.connect()
        chan = Channel(pid.index, endpoint, session=session, timeout=timeout, capture_transcript=capture)
        rt = Runtime(pid, n_compute, chan, np.random.default_rng(seed_seq), store, cfg)
        start = time.perf_counter()
        with np.errstate(over="ignore"):
            result = program(rt)
        out.put((pid.index, "ok", (result, rt.ledger, chan.transcript, time.perf_counter() - start)))
        endpoint.close()
    except BaseException as exc:  # noqa: BLE001 - shipped to the parent
        out.put((pid.index, "error", repr(exc)))


def _run_processes(programs, pids, n_compute, stores, seed, cfg, timeout, capture, session, addresses):
    import multiprocessing as mp

    ctx = mp.get_context("fork")
    out = ctx.Queue()
    seeds = np.random.SeedSequence(seed).spawn(len(addresses))
    procs = [ctx.Process(target=_process_main,
                         args=(pid, programs[pid], n_compute, (stores or {}).get(pid.index), seeds[pid.index], cfg,
                               timeout, capture, session, addresses, out), name=f"party-{pid.index}")
             for pid in pids]
    start = time.perf_counter()
    for proc in procs:
        proc.start()
    results, ledgers, transcripts, errors = {}, {}, {}, []
    for _ in procs:
        try:
            index, status, payload = out.get(timeout=timeout * 10)
        except queue.Empty:
            errors.append("timed out waiting for party results")
            break
        if status == "ok":
            results[index], ledgers[index], transcripts[index], _ = payload
        else:
            errors.append(f"party {index}: {payload}")
    for proc in procs:
        proc.join(timeout=5)
        if proc.is_alive():
            proc.terminate()
    if errors:
        raise TransportError("; ".join(errors))
    return SessionResult(results, ledgers, transcripts, time.perf_counter() - start)


# -- routing between compute parties and outsiders ---------------------------------


def open_to(rt: Runtime, data: np.ndarray, recipient: PartyId, label: str = "open_to") -> None:
    """Send this compute party's share to a party outside the computation.

    Only the recipient receives the shares, so only it can reconstruct.
    """
    if recipient.is_compute:
        raise RoleError("values may only be opened to the arm puller or the reward receiver")
    rt.channel.exchange({recipient.index: [np.asarray(data)]}, [], label)


def receive_opened(rt: Runtime, n_compute: int, label: str = "open_to") -> np.ndarray:
    got = rt.channel.exchange({}, range(n_compute), label)
    total = None
    for arrays in got.values():
        total = arrays[0] if total is None else total + arrays[0]
    return total


def share_to_compute(rt: Runtime, values: Sequence[np.ndarray], n_compute: int, label: str) -> None:
    """An outsider secret-shares ring arrays with all compute parties in one round."""
    from .sharing import share_arithmetic

    shares = [share_arithmetic(v, n_compute, rt.rng) for v in values]
    rt.channel.exchange({q: [sh[q].data for sh in shares] for q in range(n_compute)}, [], label)


def receive_from(rt: Runtime, senders: Iterable[int], label: str) -> dict[int, list[np.ndarray]]:
    """Receive-only round, e.g. a compute party collecting shares from outsiders."""
    return rt.channel.exchange({}, senders, label)
