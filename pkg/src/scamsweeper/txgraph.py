"""Temporal multigraph of accounts and timestamped transfers.

Accounts get dense integer ids in order of first appearance. Parallel edges
between the same pair are kept; every adjacency list is sorted by
``(timestamp, edge id)`` so time windows resolve with binary search.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import re
import struct
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .exceptions import IngestError, InvariantError

__all__ = [
    "LABELS", "CLASS_LABELS", "WEI_PER_ETH", "Account", "Transaction", "TemporalMultigraph",
    "Neighbor", "ingest", "read_graph", "write_graph", "degree_stats", "power_law_mle",
    "normalize_address",
]

LABELS = ("normal", "phishing", "scam", "unknown")
CLASS_LABELS = ("normal", "phishing", "scam")
WEI_PER_ETH = 10 ** 18
_ADDR_RE = re.compile(r"^0x[0-9a-f]{40}$")
_TX_KEYS = ("from", "to", "value", "timestamp", "block")
_U128_MAX = (1 << 128) - 1


def normalize_address(raw: str) -> str:
    addr = str(raw).strip().lower()
    if not addr.startswith("0x"):
        addr = "0x" + addr
    if not _ADDR_RE.match(addr):
        raise ValueError(f"not a 20-byte hex address: {raw!r}")
    return addr


@dataclass(frozen=True)
class Account:
    id: int
    address: str
    label: str = "unknown"


@dataclass(frozen=True)
class Transaction:
    src: int
    dst: int
    value: int
    timestamp: int
    block: int

    @property
    def value_eth(self) -> float:
        return self.value / WEI_PER_ETH


@dataclass(frozen=True)
class Neighbor:
    node: int
    edge: int
    timestamp: int
    value: int


class TemporalMultigraph:
    """Immutable directed temporal multigraph.

    Parameters
    ----------
    accounts : sequence of Account
        ``accounts[i].id`` must equal ``i``.
    edges : sequence of Transaction
        Edge id is the position in this sequence.
    """

    def __init__(self, accounts: Sequence[Account], edges: Sequence[Transaction]):
        self.accounts = tuple(accounts)
        self.edges = tuple(edges)
        seen = set()
        for i, acc in enumerate(self.accounts):
            if acc.id != i:
                raise InvariantError(f"account {acc.address} has id {acc.id}, expected {i}")
            if acc.label not in LABELS:
                raise InvariantError(f"unknown label {acc.label!r} for {acc.address}")
            if acc.address in seen:
                raise InvariantError(f"duplicate address {acc.address}")
            seen.add(acc.address)
        n = len(self.accounts)
        for i, e in enumerate(self.edges):
            if not (0 <= e.src < n and 0 <= e.dst < n):
                raise InvariantError(f"edge {i} references unknown account")
            if e.value < 0 or e.timestamp < 0 or e.block < 0:
                raise InvariantError(f"edge {i} has a negative field")

        m = len(self.edges)
        self.src = np.fromiter((e.src for e in self.edges), dtype=np.int64, count=m)
        self.dst = np.fromiter((e.dst for e in self.edges), dtype=np.int64, count=m)
        self.ts = np.fromiter((e.timestamp for e in self.edges), dtype=np.int64, count=m)
        self.value_eth = np.fromiter((e.value / WEI_PER_ETH for e in self.edges),
                                     dtype=np.float64, count=m)
        self._index = {a.address: a.id for a in self.accounts}
        self._adj = {d: self._build_adj(d) for d in ("out", "in", "both")}

    def _build_adj(self, direction: str):
        n = len(self.accounts)
        ids = np.arange(len(self.edges), dtype=np.int64)
        if direction == "out":
            owner, eids = self.src, ids
        elif direction == "in":
            owner, eids = self.dst, ids
        else:
            owner = np.concatenate([self.src, self.dst])
            eids = np.concatenate([ids, ids])
        order = np.lexsort((eids, self.ts[eids], owner))
        owner, eids = owner[order], eids[order]
        bounds = np.searchsorted(owner, np.arange(n + 1))
        lists = [eids[bounds[v]:bounds[v + 1]] for v in range(n)]
        times = [self.ts[l] for l in lists]
        return lists, times

    # -- basic accessors -------------------------------------------------------

    @property
    def n_nodes(self) -> int:
        return len(self.accounts)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def id_of(self, address: str) -> int:
        return self._index[normalize_address(address)]

    def labels(self) -> list[str]:
        return [a.label for a in self.accounts]

    def _check_node(self, v: int) -> None:
        if not (isinstance(v, (int, np.integer)) and 0 <= v < self.n_nodes):
            raise KeyError(f"unknown account id {v!r}")

    def incident(self, v: int, direction: str = "both"):
        """Edge ids incident to ``v`` and their timestamps, sorted by (time, id)."""
        self._check_node(v)
        lists, times = self._adj[direction]
        return lists[v], times[v]

    def other_end(self, v: int, edge: int) -> int:
        s, d = int(self.src[edge]), int(self.dst[edge])
        return d if s == v else s

    def window_edges(self, v: int, t_lo: int, t_hi: int, direction: str = "both") -> np.ndarray:
        """Edge ids incident to ``v`` with ``t_lo <= timestamp < t_hi``."""
        if t_lo > t_hi:
            raise ValueError(f"empty window needs t_lo <= t_hi, got {t_lo} > {t_hi}")
        eids, times = self.incident(v, direction)
        lo = np.searchsorted(times, t_lo, side="left")
        hi = np.searchsorted(times, t_hi, side="left")
        return eids[lo:hi]

    def neighbors_in_window(self, v: int, t_lo: int, t_hi: int,
                            direction: str = "both") -> list[Neighbor]:
        """Incident edges in ``[t_lo, t_hi)``, ordered by timestamp then edge id."""
        return [Neighbor(self.other_end(v, int(e)), int(e), int(self.ts[e]), self.edges[e].value)
                for e in self.window_edges(v, t_lo, t_hi, direction)]

    def summary(self) -> dict:
        return {
            "nodes": self.n_nodes,
            "edges": self.n_edges,
            "labels": dict(sorted(Counter(self.labels()).items())),
        }

    def mean_inter_event_gap(self) -> float:
        """Mean gap between consecutive transactions of the same account.

        Gaps are pooled over all accounts (each edge counts for both of its
        ends). Returns 1.0 when no account has two transactions at different
        times.
        """
        if self.n_edges < 2:
            return 1.0
        owner = np.concatenate([self.src, self.dst])
        t = np.concatenate([self.ts, self.ts])
        order = np.lexsort((t, owner))
        owner, t = owner[order], t[order]
        same = owner[1:] == owner[:-1]
        gaps = np.diff(t)[same]
        gaps = gaps[gaps > 0]
        return float(gaps.mean()) if gaps.size else 1.0

    def __eq__(self, other) -> bool:
        if not isinstance(other, TemporalMultigraph):
            return NotImplemented
        return self.accounts == other.accounts and self.edges == other.edges

    __hash__ = None

    def digest(self) -> str:
        return hashlib.sha256(to_bytes(self)).hexdigest()

    def __repr__(self) -> str:
        return f"TemporalMultigraph(nodes={self.n_nodes}, edges={self.n_edges})"

    # -- construction -----------------------------------------------------------

    @classmethod
    def from_records(cls, records: Iterable[tuple], labels: Optional[dict] = None,
                     allow_self_loops: bool = False, extra_addresses: Iterable[str] = ()):
        """Build from ``(from_addr, to_addr, value, timestamp, block)`` tuples.

        Ids follow first appearance in ``records``; labelled addresses that
        never transact are appended afterwards in ``labels`` order, then
        ``extra_addresses``.
        """
        labels = labels or {}
        index: dict[str, int] = {}
        order: list[str] = []
        edges = []

        def intern(addr):
            i = index.get(addr)
            if i is None:
                i = index[addr] = len(order)
                order.append(addr)
            return i

        for a, b, value, ts, block in records:
            if a == b and not allow_self_loops:
                continue
            edges.append(Transaction(intern(a), intern(b), int(value), int(ts), int(block)))
        for addr in list(labels) + list(extra_addresses):
            intern(addr)
        accounts = [Account(i, addr, labels.get(addr, "unknown")) for i, addr in enumerate(order)]
        return cls(accounts, edges)


# -- text ingest --------------------------------------------------------------------

def _parse_int(raw, field: str) -> int:
    if isinstance(raw, bool):
        raise ValueError(f"{field} must be an integer")
    if isinstance(raw, int):
        v = raw
    else:
        s = str(raw).strip()
        if not re.fullmatch(r"\d+", s):
            raise ValueError(f"{field} must be a non-negative integer, got {raw!r}")
        v = int(s)
    if v < 0:
        raise ValueError(f"{field} must be non-negative, got {v}")
    return v


def _iter_rows(path: Path, fmt: str):
    """Yield ``(line_number, dict)`` for every data row."""
    with open(path, newline="", encoding="utf-8") as fh:
        if fmt == "csv":
            text = fh.read()
            if not text.strip():
                return
            reader = csv.reader(io.StringIO(text))
            header = [h.strip() for h in next(reader)]
            if sorted(header) != sorted(_TX_KEYS):
                raise IngestError(f"expected header {','.join(_TX_KEYS)}, got {','.join(header)}",
                                  1, str(path))
            for row in reader:
                line = reader.line_num
                if not row or all(not c.strip() for c in row):
                    continue
                if len(row) != len(header):
                    raise IngestError(f"expected {len(header)} fields, got {len(row)}", line, str(path))
                yield line, dict(zip(header, row))
        elif fmt == "jsonl":
            for line, raw in enumerate(fh, start=1):
                if not raw.strip():
                    continue
                try:
                    obj = json.loads(raw)
                except json.JSONDecodeError as exc:
                    raise IngestError(f"invalid JSON: {exc.msg}", line, str(path)) from None
                if not isinstance(obj, dict):
                    raise IngestError("expected a JSON object", line, str(path))
                yield line, obj
        else:
            raise ValueError(f"unsupported format {fmt!r}")


def _read_labels(path: Path) -> dict[str, str]:
    labels: dict[str, str] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        text = fh.read()
    if not text.strip():
        return labels
    reader = csv.reader(io.StringIO(text))
    header = [h.strip() for h in next(reader)]
    if header != ["address", "label"]:
        raise IngestError(f"expected header address,label, got {','.join(header)}", 1, str(path))
    for row in reader:
        line = reader.line_num
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 2:
            raise IngestError(f"expected 2 fields, got {len(row)}", line, str(path))
        try:
            addr = normalize_address(row[0])
        except ValueError as exc:
            raise IngestError(str(exc), line, str(path)) from None
        label = row[1].strip().lower()
        if label not in LABELS:
            raise IngestError(f"unknown label {row[1]!r}", line, str(path))
        prev = labels.get(addr)
        if prev is not None and prev != label:
            raise IngestError(f"conflicting labels for {addr}: {prev} vs {label}", line, str(path))
        labels[addr] = label
    return labels


def ingest(path, format: Optional[str] = None, labels_path=None,
           allow_self_loops: bool = False) -> TemporalMultigraph:
    """Read a transaction file (CSV or JSONL) and optional labels CSV.

    Rows must have timestamps that never decrease as the block number
    increases; the first row breaking this is reported by line number.
    """
    path = Path(path)
    fmt = format or ("jsonl" if path.suffix.lower() in (".jsonl", ".json") else "csv")
    records, lines = [], []
    for line, row in _iter_rows(path, fmt):
        missing = [k for k in _TX_KEYS if k not in row]
        if missing:
            raise IngestError(f"missing field(s) {', '.join(missing)}", line, str(path))
        try:
            a = normalize_address(row["from"])
            b = normalize_address(row["to"])
            value = _parse_int(row["value"], "value")
            if value > _U128_MAX:
                raise ValueError("value exceeds 128 bits")
            ts = _parse_int(row["timestamp"], "timestamp")
            block = _parse_int(row["block"], "block")
        except ValueError as exc:
            raise IngestError(str(exc), line, str(path)) from None
        records.append((a, b, value, ts, block))
        lines.append(line)

    if records:
        blocks = np.array([r[4] for r in records], dtype=np.int64)
        times = np.array([r[3] for r in records], dtype=np.int64)
        order = np.argsort(blocks, kind="stable")
        max_before = -1  # max timestamp over strictly smaller blocks
        cur_block, cur_max = None, -1
        for i in order:
            if blocks[i] != cur_block:
                max_before = max(max_before, cur_max)
                cur_block, cur_max = blocks[i], -1
            if times[i] < max_before:
                raise IngestError(f"timestamp {times[i]} decreases relative to earlier blocks "
                                  f"(block {blocks[i]})", lines[i], str(path))
            cur_max = max(cur_max, int(times[i]))

    labels = _read_labels(Path(labels_path)) if labels_path is not None else {}
    return TemporalMultigraph.from_records(records, labels, allow_self_loops=allow_self_loops)


def export_transactions(g: TemporalMultigraph, path, format: str = "csv") -> None:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if format == "csv":
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(_TX_KEYS)
            for e in g.edges:
                w.writerow((g.accounts[e.src].address, g.accounts[e.dst].address,
                            e.value, e.timestamp, e.block))
        elif format == "jsonl":
            for e in g.edges:
                fh.write(json.dumps({"from": g.accounts[e.src].address,
                                     "to": g.accounts[e.dst].address, "value": str(e.value),
                                     "timestamp": e.timestamp, "block": e.block}) + "\n")
        else:
            raise ValueError(f"unsupported format {format!r}")


def export_labels(g: TemporalMultigraph, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("address", "label"))
        for a in g.accounts:
            if a.label in CLASS_LABELS:
                w.writerow((a.address, a.label))


# -- binary container ----------------------------------------------------------------

_MAGIC = b"SSGR"
_VERSION = 1
_LABEL_CODE = {l: i for i, l in enumerate(LABELS)}


def to_bytes(g: TemporalMultigraph) -> bytes:
    """Serialise as ``SSGR`` magic, u16 version, then ACCT and EDGE sections.

    Each section is a 4-byte tag, a u64 payload length and the payload; all
    integers little-endian. Values are u128 stored as (low u64, high u64).
    """
    n = g.n_nodes
    acct = bytearray(struct.pack("<I", n))
    for a in g.accounts:
        acct += bytes.fromhex(a.address[2:])
        acct += struct.pack("<B", _LABEL_CODE[a.label])

    m = g.n_edges
    vals = [e.value for e in g.edges]
    cols = [
        np.array([e.src for e in g.edges], dtype="<u4"),
        np.array([e.dst for e in g.edges], dtype="<u4"),
        np.array([v & 0xFFFFFFFFFFFFFFFF for v in vals], dtype="<u8"),
        np.array([v >> 64 for v in vals], dtype="<u8"),
        np.array([e.timestamp for e in g.edges], dtype="<u8"),
        np.array([e.block for e in g.edges], dtype="<u8"),
    ]
    edge = struct.pack("<Q", m) + b"".join(c.tobytes() for c in cols)

    out = bytearray(_MAGIC + struct.pack("<H", _VERSION))
    for tag, payload in ((b"ACCT", bytes(acct)), (b"EDGE", edge)):
        out += tag + struct.pack("<Q", len(payload)) + payload
    return bytes(out)


def from_bytes(buf: bytes) -> TemporalMultigraph:
    if buf[:4] != _MAGIC:
        raise InvariantError("not an SSGR graph container (bad magic)")
    (version,) = struct.unpack_from("<H", buf, 4)
    if version != _VERSION:
        raise InvariantError(f"unsupported SSGR version {version}")
    pos = 6
    sections = {}
    while pos < len(buf):
        tag = buf[pos:pos + 4]
        (length,) = struct.unpack_from("<Q", buf, pos + 4)
        sections[tag] = buf[pos + 12:pos + 12 + length]
        pos += 12 + length
    if b"ACCT" not in sections or b"EDGE" not in sections:
        raise InvariantError("SSGR container is missing a section")

    acct = sections[b"ACCT"]
    (n,) = struct.unpack_from("<I", acct, 0)
    accounts = []
    for i in range(n):
        off = 4 + 21 * i
        addr = "0x" + acct[off:off + 20].hex()
        accounts.append(Account(i, addr, LABELS[acct[off + 20]]))

    ed = sections[b"EDGE"]
    (m,) = struct.unpack_from("<Q", ed, 0)
    off = 8
    cols = []
    for dtype in ("<u4", "<u4", "<u8", "<u8", "<u8", "<u8"):
        width = np.dtype(dtype).itemsize
        cols.append(np.frombuffer(ed, dtype=dtype, count=m, offset=off))
        off += width * m
    src, dst, lo, hi, ts, block = cols
    edges = [Transaction(int(src[i]), int(dst[i]), int(lo[i]) | (int(hi[i]) << 64),
                         int(ts[i]), int(block[i])) for i in range(m)]
    return TemporalMultigraph(accounts, edges)


def write_graph(g: TemporalMultigraph, path) -> None:
    Path(path).write_bytes(to_bytes(g))


def read_graph(path) -> TemporalMultigraph:
    return from_bytes(Path(path).read_bytes())


# -- degree statistics -------------------------------------------------------------

def power_law_mle(degrees: Sequence[int], k_min: int = 3) -> float:
    """Discrete power-law exponent by the continuous-approximation MLE.

    ``alpha = 1 + n / sum(ln(k / (k_min - 1/2)))`` over degrees ``>= k_min``.
    """
    k = np.asarray(degrees, dtype=np.float64)
    k = k[k >= k_min]
    if k.size == 0:
        raise InvariantError(f"no degrees >= k_min={k_min}")
    return float(1.0 + k.size / np.sum(np.log(k / (k_min - 0.5))))


def degree_stats(g: TemporalMultigraph, k_min: int = 3) -> dict:
    """Counterparty-degree histogram and fitted power-law exponent.

    Degree counts distinct counterparties, ignoring direction and parallel
    edges.
    """
    if g.n_nodes == 0:
        raise InvariantError("degree_stats needs a non-empty graph")
    pairs = np.stack([np.minimum(g.src, g.dst), np.maximum(g.src, g.dst)], axis=1)
    pairs = pairs[pairs[:, 0] != pairs[:, 1]]
    if pairs.size == 0:
        raise InvariantError("all accounts are isolated")
    pairs = np.unique(pairs, axis=0)
    deg = np.bincount(pairs.ravel(), minlength=g.n_nodes)
    hist = Counter(int(d) for d in deg if d > 0)
    try:
        alpha = power_law_mle(deg, k_min)
    except InvariantError:
        alpha = float("nan")
    return {
        "degrees": deg,
        "histogram": dict(sorted(hist.items())),
        "exponent": alpha,
        "k_min": k_min,
    }
