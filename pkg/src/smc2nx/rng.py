"""Seedable, snapshotable random streams and the per-island slice journal.

Each island owns a PCG64 stream keyed by ``(seed, island_id, epoch)``.  The
full particle history of an island is never stored: the journal keeps, for
every time slice generated since the last regeneration pass, the generator
state immediately before the slice was drawn and the step that drew it.
Replaying those records through the same slice functions regenerates the
history bit-for-bit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import pf
from .errors import JournalCorruptionError

_MASK64 = (1 << 64) - 1
# Reserved island id for the sampler-level stream (theta resampling).
MASTER_STREAM = 1 << 32

JOURNAL_FORMAT = "smc2nx-journal"
JOURNAL_VERSION = 1


@dataclass(frozen=True)
class RngState:
    """Immutable PCG64 state: (state_hi, state_lo, inc_hi, inc_lo, has_uint32, uinteger)."""

    state_words: tuple

    def nbytes(self) -> int:
        return 8 * len(self.state_words)


def spawn_stream(seed: int, island_id: int, epoch: int) -> np.random.Generator:
    """Independent deterministic generator for a (seed, island, epoch) triple."""
    ss = np.random.SeedSequence(int(seed) & _MASK64, spawn_key=(int(island_id), int(epoch)))
    return np.random.Generator(np.random.PCG64(ss))


def snapshot(gen: np.random.Generator) -> RngState:
    st = gen.bit_generator.state
    s, inc = st["state"]["state"], st["state"]["inc"]
    return RngState((s >> 64, s & _MASK64, inc >> 64, inc & _MASK64,
                     int(st["has_uint32"]), int(st["uinteger"])))


def restore(state: RngState) -> np.random.Generator:
    """New generator positioned exactly at ``state``."""
    bg = np.random.PCG64()
    bg.state = _as_dict(state)
    return np.random.Generator(bg)


def set_state(gen: np.random.Generator, state: RngState) -> None:
    gen.bit_generator.state = _as_dict(state)


def _as_dict(state: RngState) -> dict:
    s_hi, s_lo, i_hi, i_lo, has32, u32 = state.state_words
    return {"bit_generator": "PCG64",
            "state": {"state": (s_hi << 64) | s_lo, "inc": (i_hi << 64) | i_lo},
            "has_uint32": has32, "uinteger": u32}


class StepTag(str, Enum):
    InitPF = "InitPF"
    ExtendPF = "ExtendPF"
    FreshPF = "FreshPF"
    CsmcRegen = "CsmcRegen"


_RESETS = (StepTag.FreshPF, StepTag.CsmcRegen)


@dataclass(frozen=True)
class SliceRecord:
    rng_before: RngState
    step_tag: StepTag
    n_x: int
    time_index: int

    def __post_init__(self):
        if self.n_x < 1:
            raise JournalCorruptionError(f"n_x must be >= 1, got {self.n_x}")
        if self.time_index < 0:
            raise JournalCorruptionError("time_index must be >= 0")


@dataclass
class SliceJournal:
    """Replay log for one island.

    The first record is either ``InitPF`` (time 0) or a whole-pass record
    (``FreshPF``/``CsmcRegen``) covering times ``0..base_time``; every
    following record is an ``ExtendPF`` for the next time index.
    ``pinned_trajectory`` is present only after a ``CsmcRegen`` pass.
    """

    records: list = field(default_factory=list)
    pinned_trajectory: np.ndarray | None = None
    base_time: int = 0

    @property
    def t(self) -> int:
        if not self.records:
            return -1
        return self.records[-1].time_index

    def __len__(self):
        return len(self.records)

    def copy(self) -> "SliceJournal":
        # records are immutable and the pinned path is never written to
        return SliceJournal(list(self.records), self.pinned_trajectory, self.base_time)

    def nbytes(self) -> int:
        # 4 words of bookkeeping per record beside the generator state
        per = sum(r.rng_before.nbytes() + 4 * 8 for r in self.records)
        pin = 0 if self.pinned_trajectory is None else self.pinned_trajectory.nbytes
        return per + pin + 2 * 8

    def to_json(self) -> str:
        return json.dumps({
            "format": JOURNAL_FORMAT,
            "version": JOURNAL_VERSION,
            "base_time": self.base_time,
            "records": [{"step_tag": r.step_tag.value, "time_index": r.time_index,
                         "n_x": r.n_x, "rng": list(r.rng_before.state_words)}
                        for r in self.records],
            "pinned_trajectory": (None if self.pinned_trajectory is None
                                  else self.pinned_trajectory.tolist()),
        })

    @classmethod
    def from_json(cls, text: str) -> "SliceJournal":
        d = json.loads(text)
        if d.get("format") != JOURNAL_FORMAT or d.get("version") != JOURNAL_VERSION:
            raise JournalCorruptionError("unrecognised journal format/version")
        recs = [SliceRecord(RngState(tuple(r["rng"])), StepTag(r["step_tag"]),
                            r["n_x"], r["time_index"]) for r in d["records"]]
        pin = d["pinned_trajectory"]
        return cls(recs, None if pin is None else np.asarray(pin, dtype=float),
                   d["base_time"])


def record_slice(journal: SliceJournal, record: SliceRecord, pinned=None) -> SliceJournal:
    """Append (``InitPF``/``ExtendPF``) or reset (``FreshPF``/``CsmcRegen``).

    Mutates and returns ``journal``.  ``pinned`` is the conditioning
    trajectory, required for ``CsmcRegen``.
    """
    tag, ti = record.step_tag, record.time_index
    if tag is StepTag.InitPF:
        if journal.records or ti != 0:
            raise JournalCorruptionError("InitPF must open an empty journal at t=0")
        journal.pinned_trajectory, journal.base_time = None, 0
        journal.records.append(record)
    elif tag is StepTag.ExtendPF:
        if not journal.records or ti != journal.t + 1:
            raise JournalCorruptionError(
                f"ExtendPF at t={ti} does not follow journal time {journal.t}")
        if record.n_x != journal.records[-1].n_x:
            raise JournalCorruptionError("ExtendPF cannot change n_x")
        journal.records.append(record)
    else:
        if journal.records and ti < journal.t:
            raise JournalCorruptionError(
                f"{tag.value} at t={ti} precedes journal time {journal.t}")
        if tag is StepTag.CsmcRegen:
            if pinned is None:
                raise JournalCorruptionError("CsmcRegen requires the pinned trajectory")
            pinned = np.asarray(pinned)
            if len(pinned) != ti + 1:
                raise JournalCorruptionError("pinned trajectory length must be t+1")
            journal.pinned_trajectory = pinned
        else:
            journal.pinned_trajectory = None
        journal.records = [record]
        journal.base_time = ti
    return journal


def rebuild_history(journal: SliceJournal, model, theta, data) -> pf.ParticleHistory:
    """Regenerate the island's full particle history from its journal."""
    if not journal.records:
        raise JournalCorruptionError("cannot rebuild from an empty journal")
    data = np.asarray(data)
    if journal.t >= len(data):
        raise JournalCorruptionError(
            f"journal reaches t={journal.t} but data has length {len(data)}")
    first = journal.records[0]
    hist = pf._HistoryBuilder()
    gen = restore(first.rng_before)
    if first.step_tag is StepTag.InitPF:
        fr = pf.pf_init(model, theta, first.n_x, data[0], gen)
        hist.add(None, fr)
    elif first.step_tag in _RESETS:
        pinned = journal.pinned_trajectory if first.step_tag is StepTag.CsmcRegen else None
        if first.step_tag is StepTag.CsmcRegen and pinned is None:
            raise JournalCorruptionError("CsmcRegen record without pinned trajectory")
        pin = (lambda s: None) if pinned is None else (lambda s: pinned[s])
        fr = pf.pf_init(model, theta, first.n_x, data[0], gen, pin(0))
        hist.add(None, fr)
        fr = pf._continue_collect(model, theta, fr, data[:first.time_index + 1], 1,
                                  gen, hist, pin)
    else:
        raise JournalCorruptionError("journal must start with InitPF/FreshPF/CsmcRegen")
    for rec in journal.records[1:]:
        if rec.step_tag is not StepTag.ExtendPF or rec.time_index != fr.t + 1:
            raise JournalCorruptionError("inconsistent record sequence in journal")
        set_state(gen, rec.rng_before)
        fr, a = pf._step_collect(model, theta, fr, data[rec.time_index], gen)
        hist.add(a, fr)
    return hist.build()
