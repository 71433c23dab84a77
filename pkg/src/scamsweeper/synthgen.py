"""Seeded synthetic transaction networks with labelled phishing and scam accounts.

Background traffic runs on a preferential-attachment topology; each link
carries a handful of transfers with a dominant payer. Two kinds of
malicious principals are added on top, each sized after a randomly drawn
background account (same number of counterparties and transfers) so that
degree and value totals alone say little about the label:

``phishing_funnel``
    Victims pay the collector within a few hours; shortly after, the
    collector forwards nearly everything to a fresh cash-out address.
``mimic_scam``
    Weeks of ordinary-looking two-way traffic with counterparties,
    interleaved with periodic outflows of the accumulated balance that hop
    through 2-4 fresh intermediaries, split into 2-3 transfers per hop,
    before landing at a high-degree account.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .exceptions import ConfigError
from .txgraph import WEI_PER_ETH, TemporalMultigraph, export_labels, export_transactions

__all__ = ["SynthConfig", "MotifRecord", "generate", "export", "write_motif_log",
           "read_motif_log"]

HOUR = 3600
DAY = 86_400


@dataclass(frozen=True)
class SynthConfig:
    n_accounts: int = 2000
    attachment_m: int = 2
    duration_days: int = 90
    phishing_count: int = 60
    scam_count: int = 60
    value_mu: float = -2.0
    value_sigma: float = 1.5
    tx_per_link: float = 3.0
    layer_depth: tuple = (2, 4)
    split_factor: tuple = (2, 3)
    jitter_hours: float = 6.0
    sweep_days: tuple = (3.0, 7.0)
    seed: int = 0
    start_time: int = 1_600_000_000
    start_block: int = 10_000_000
    block_time: int = 12

    def __post_init__(self):
        if self.attachment_m < 1:
            raise ConfigError("attachment_m must be >= 1")
        if self.phishing_count < 0 or self.scam_count < 0:
            raise ConfigError("motif counts must be non-negative")
        if self.phishing_count + self.scam_count >= self.n_accounts:
            raise ConfigError("phishing_count + scam_count must be below n_accounts")
        if self.n_accounts - self.phishing_count - self.scam_count < self.attachment_m + 1:
            raise ConfigError("too few background accounts for the attachment parameter")
        if self.duration_days < 3:
            raise ConfigError("duration_days must be >= 3")
        lo, hi = self.layer_depth
        if not 2 <= lo <= hi:
            raise ConfigError("layer_depth must satisfy 2 <= lo <= hi")
        if not 2 <= self.split_factor[0] <= self.split_factor[1]:
            raise ConfigError("split_factor must satisfy 2 <= lo <= hi")
        if self.tx_per_link < 1:
            raise ConfigError("tx_per_link must be >= 1")
        if not 0 < self.sweep_days[0] <= self.sweep_days[1]:
            raise ConfigError("sweep_days must satisfy 0 < lo <= hi")


@dataclass(frozen=True)
class MotifRecord:
    edge: int
    motif: str  # phishing_funnel | mimic_scam
    role: str
    principal: str
    chain: int = -1
    hop: int = -1


class _Builder:
    def __init__(self, cfg: SynthConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.rng = rng
        self.addresses: list[str] = []
        self._used: set[str] = set()
        self.records: list[tuple] = []  # (ts, seq, src, dst, wei, tag)

    def new_account(self) -> int:
        while True:
            addr = "0x" + self.rng.bytes(20).hex()
            if addr not in self._used:
                self._used.add(addr)
                self.addresses.append(addr)
                return len(self.addresses) - 1

    def value(self) -> float:
        return float(np.exp(self.rng.normal(self.cfg.value_mu, self.cfg.value_sigma)))

    def tx(self, src: int, dst: int, eth: float, ts: float, tag=None) -> None:
        wei = int(round(eth * 1e9)) * (WEI_PER_ETH // 10 ** 9)
        self.records.append((int(ts), len(self.records), src, dst, max(wei, 0), tag))


def _preferential_attachment(n: int, m: int, rng: np.random.Generator) -> list[tuple]:
    links = [(i, j) for i in range(m + 1) for j in range(i + 1, m + 1)]
    ends = [v for l in links for v in l]
    for new in range(m + 1, n):
        chosen: list[int] = []
        while len(chosen) < m:
            t = ends[int(rng.integers(len(ends)))]
            if t not in chosen:
                chosen.append(t)
        for t in chosen:
            links.append((t, new))
            ends.extend((t, new))
    return links


def generate(cfg: SynthConfig):
    """Return ``(graph, motif_log)``; fully determined by ``cfg``."""
    rng = np.random.default_rng(cfg.seed)
    b = _Builder(cfg, rng)
    horizon = cfg.duration_days * DAY
    n_bg = cfg.n_accounts - cfg.phishing_count - cfg.scam_count

    bg = [b.new_account() for _ in range(n_bg)]
    links = _preferential_attachment(n_bg, cfg.attachment_m, rng)
    join = np.arange(n_bg) / n_bg * horizon * 0.5
    in_count = np.zeros(n_bg, dtype=np.int64)
    out_count = np.zeros(n_bg, dtype=np.int64)
    partners = [set() for _ in range(n_bg)]
    for u, v in links:
        if rng.random() < 0.5:
            u, v = v, u
        k = 1 + int(rng.poisson(max(cfg.tx_per_link - 1.0, 0.0)))
        t0 = max(join[u], join[v])
        for t in np.sort(rng.uniform(t0, horizon, size=k)):
            s, d = (u, v) if rng.random() < 0.8 else (v, u)
            b.tx(bg[s], bg[d], b.value(), t)
            out_count[s] += 1
            in_count[d] += 1
        partners[u].add(v)
        partners[v].add(u)
    degree = np.array([len(p) for p in partners])
    hubs = np.argsort(-degree, kind="stable")[:max(5, n_bg // 100)]

    labels = {b.addresses[i]: "normal" for i in bg}

    def template():
        """(counterparties, incoming transfers, outgoing transfers) of a random account."""
        t = int(rng.integers(n_bg))
        return max(int(degree[t]), 1), max(int(in_count[t]), 1), max(int(out_count[t]), 1)

    def spread(n: int, parties: np.ndarray) -> np.ndarray:
        """``n`` picks from ``parties``, covering each at least once when n allows."""
        head = parties[:n]
        tail = rng.choice(parties, size=max(n - len(parties), 0))
        return rng.permutation(np.concatenate([head, tail]).astype(np.int64))

    for _ in range(cfg.phishing_count):
        p = b.new_account()
        addr = b.addresses[p]
        labels[addr] = "phishing"
        k, n_in, _ = template()
        victims = rng.choice(n_bg, size=min(k, n_in, n_bg), replace=False)
        t0 = rng.uniform(0, horizon - 2 * DAY)
        total, last = 0.0, t0
        for v in spread(n_in, victims):
            t = t0 + rng.uniform(0, cfg.jitter_hours * HOUR)
            eth = b.value()
            b.tx(bg[v], p, eth, t, ("phishing_funnel", "victim_transfer", addr, -1, -1))
            total += eth
            last = max(last, t)
        b.tx(p, b.new_account(), total * 0.98, last + rng.uniform(1, 12) * HOUR,
             ("phishing_funnel", "cash_out", addr, -1, -1))

    lo_d, hi_d = cfg.layer_depth
    lo_s, hi_s = cfg.split_factor
    for _ in range(cfg.scam_count):
        s = b.new_account()
        addr = b.addresses[s]
        labels[addr] = "scam"
        k, n_in, n_out = template()
        counterparties = rng.choice(n_bg, size=min(k, n_bg), replace=False)
        span = rng.uniform(30, 45) * DAY
        s0 = rng.uniform(0, max(horizon - span - 2 * DAY, 1.0))
        periodic = max(1, int(span / (rng.uniform(*cfg.sweep_days) * DAY)))
        n_chains = min(periodic, n_out)
        service = [(t, c, True, b.value())
                   for c, t in zip(spread(n_in, counterparties), rng.uniform(s0, s0 + span, n_in))]
        n_pay = n_out - n_chains
        service += [(t, c, False, b.value())
                    for c, t in zip(spread(n_pay, counterparties), rng.uniform(s0, s0 + span, n_pay))]
        service.sort(key=lambda r: (r[0], r[1]))
        for t, c, inbound, eth in service:
            src, dst = (bg[c], s) if inbound else (s, bg[c])
            b.tx(src, dst, eth, t, ("mimic_scam", "service", addr, -1, -1))

        out_times = [s0 + span * (j + 1) / n_chains
                     + rng.uniform(-cfg.jitter_hours, cfg.jitter_hours) * HOUR
                     for j in range(n_chains)]
        prev = -np.inf
        for j, t in enumerate(out_times):
            inflow = sum(e for tt, _, inbound, e in service if inbound and prev < tt <= t)
            amount = max(0.9 * inflow, b.value())
            prev = t
            depth = int(rng.integers(lo_d, hi_d + 1))
            hops = [b.new_account() for _ in range(depth)]
            b.tx(s, hops[0], amount, t, ("mimic_scam", "outflow", addr, j, 0))
            t_cur = t
            chain = hops + [int(bg[int(rng.choice(hubs))])]
            for h in range(depth):
                parts = int(rng.integers(lo_s, hi_s + 1))
                shares = rng.dirichlet(np.ones(parts)) * amount * 0.995
                arrive = t_cur
                for share in shares:
                    tt = t_cur + rng.uniform(0.5, cfg.jitter_hours) * HOUR
                    role = "layer" if h < depth - 1 else "cash_out"
                    b.tx(chain[h], chain[h + 1], float(share), tt,
                         ("mimic_scam", role, addr, j, h + 1))
                    arrive = max(arrive, tt)
                amount *= 0.995
                t_cur = arrive

    return _assemble(b, labels)


def _assemble(b: _Builder, labels: dict):
    cfg = b.cfg
    recs = sorted(b.records, key=lambda r: (r[0], r[1]))
    rows = []
    motif_log = []
    for eid, (ts, _seq, src, dst, wei, tag) in enumerate(recs):
        t_abs = cfg.start_time + ts
        block = cfg.start_block + ts // cfg.block_time
        rows.append((b.addresses[src], b.addresses[dst], wei, t_abs, block))
        if tag is not None:
            motif, role, principal, chain, hop = tag
            motif_log.append(MotifRecord(eid, motif, role, principal, chain, hop))
    g = TemporalMultigraph.from_records(rows, labels, extra_addresses=b.addresses)
    return g, motif_log


def write_motif_log(path, motif_log) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in motif_log:
            fh.write(json.dumps(asdict(r), sort_keys=True) + "\n")


def read_motif_log(path) -> list:
    with open(path, encoding="utf-8") as fh:
        return [MotifRecord(**json.loads(line)) for line in fh if line.strip()]


def export(g: TemporalMultigraph, path, format: str = "csv",
           motif_log: Optional[list] = None) -> dict:
    """Write ``transactions.<fmt>`` and ``labels.csv`` (plus ``motifs.jsonl``) under ``path``."""
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    tx_path = out / f"transactions.{format}"
    export_transactions(g, tx_path, format)
    export_labels(g, out / "labels.csv")
    files = {"transactions": str(tx_path), "labels": str(out / "labels.csv")}
    if motif_log is not None:
        write_motif_log(out / "motifs.jsonl", motif_log)
        files["motifs"] = str(out / "motifs.jsonl")
    return files
