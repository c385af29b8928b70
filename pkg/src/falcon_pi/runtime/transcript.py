"""Session accounting: bytes and frames per phase, rounds, circuit costs, HE operation counts
and wall-clock time, with a CSV form that reimports losslessly."""

from __future__ import annotations

import csv
import io
from collections import Counter
from dataclasses import dataclass, field

from ..gc.circuit import Cost, gate_count

PHASES = ("handshake", "setup", "online")
DIRECTIONS = ("sent", "received")


@dataclass
class CircuitRecord:
    name: str
    simd: dict = field(default_factory=dict)  # lane count -> SIMD units
    subset: int = 0
    and_gates: int = 0
    table_bytes: int = 0

    @property
    def cost(self) -> Cost:
        return Cost(Counter(self.simd), self.subset)

    @classmethod
    def of(cls, circuit, netlist=None) -> "CircuitRecord":
        c = gate_count(circuit).cost
        ands = netlist.and_rows if netlist is not None else 0
        return cls(circuit.name, dict(c.terms()), c.subset, ands, ands * 64)


@dataclass
class Transcript:
    bytes: dict = field(default_factory=dict)  # (phase, direction) -> int
    frames: dict = field(default_factory=dict)
    seconds: dict = field(default_factory=dict)  # phase -> float
    rounds: int = 0
    socket_sent: int = 0
    socket_received: int = 0
    digest: str = ""
    he_ops: dict = field(default_factory=lambda: {"SIMDAdd": 0, "SIMDAddPlain": 0, "SIMDMul": 0, "Rotate": 0})
    circuits: list = field(default_factory=list)
    ct_up: list = field(default_factory=list)  # ciphertexts uploaded per linear layer
    ct_down: list = field(default_factory=list)
    events: list = field(default_factory=list)  # server-side phase markers, in order

    @classmethod
    def from_channel(cls, ch, **kw) -> "Transcript":
        return cls(dict(ch.bytes), dict(ch.frames), rounds=ch.rounds, socket_sent=ch.raw_sent,
                   socket_received=ch.raw_received, digest=ch.digest.hexdigest(), **kw)

    def phase_bytes(self, phase: str) -> int:
        return sum(v for (ph, _), v in self.bytes.items() if ph == phase)

    @property
    def total_bytes(self) -> int:
        return sum(self.bytes.values())

    @property
    def gc_cost(self) -> Cost:
        total = Cost()
        for c in self.circuits:
            total = total + c.cost
        return total

    @property
    def simd_units(self) -> int:
        return self.gc_cost.units

    @property
    def rotations(self) -> int:
        return int(self.he_ops.get("Rotate", 0))

    # -- CSV -------------------------------------------------------------------------

    def rows(self) -> list[tuple]:
        out = [("meta", "rounds", "", self.rounds), ("meta", "socket_sent", "", self.socket_sent),
               ("meta", "socket_received", "", self.socket_received), ("meta", "digest", "", self.digest)]
        for ph in PHASES:
            for d in DIRECTIONS:
                out.append(("bytes", ph, d, self.bytes.get((ph, d), 0)))
                out.append(("frames", ph, d, self.frames.get((ph, d), 0)))
            out.append(("seconds", ph, "", repr(float(self.seconds.get(ph, 0.0)))))
        for k in sorted(self.he_ops):
            out.append(("he", k, "", self.he_ops[k]))
        for i, c in enumerate(self.circuits):
            key = f"{i}:{c.name}"
            out.append(("circuit", key, "subset", c.subset))
            out.append(("circuit", key, "and_gates", c.and_gates))
            out.append(("circuit", key, "table_bytes", c.table_bytes))
            for n in sorted(c.simd):
                out.append(("circuit", key, f"simd{n}", c.simd[n]))
        for i, (u, d) in enumerate(zip(self.ct_up, self.ct_down)):
            out.append(("linear", str(i), "ct_up", u))
            out.append(("linear", str(i), "ct_down", d))
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("section", "key", "field", "value"))
        w.writerows(self.rows())
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "Transcript":
        t = cls(he_ops={})
        circuits: dict[str, CircuitRecord] = {}
        linear: dict[int, list] = {}
        reader = csv.reader(io.StringIO(text))
        if next(reader, None) != ["section", "key", "field", "value"]:
            raise ValueError("not a transcript CSV")
        for section, key, fld, value in reader:
            if section == "meta":
                setattr(t, key, value if key == "digest" else int(value))
            elif section in ("bytes", "frames"):
                if int(value):
                    getattr(t, section)[(key, fld)] = int(value)
            elif section == "seconds":
                if float(value):
                    t.seconds[key] = float(value)
            elif section == "he":
                t.he_ops[key] = int(value)
            elif section == "circuit":
                rec = circuits.setdefault(key, CircuitRecord(key.split(":", 1)[1]))
                if fld.startswith("simd"):
                    rec.simd[int(fld[4:])] = int(value)
                else:
                    setattr(rec, fld, int(value))
            elif section == "linear":
                linear.setdefault(int(key), [0, 0])[0 if fld == "ct_up" else 1] = int(value)
        t.circuits = [circuits[k] for k in sorted(circuits, key=lambda k: int(k.split(":")[0]))]
        t.ct_up = [linear[i][0] for i in sorted(linear)]
        t.ct_down = [linear[i][1] for i in sorted(linear)]
        return t

    def normalized(self) -> "Transcript":
        """Copy without zero entries, for comparisons after a CSV roundtrip."""
        return Transcript(
            {k: v for k, v in self.bytes.items() if v}, {k: v for k, v in self.frames.items() if v},
            {k: float(v) for k, v in self.seconds.items() if v}, self.rounds, self.socket_sent,
            self.socket_received, self.digest, dict(self.he_ops), list(self.circuits), list(self.ct_up),
            list(self.ct_down),
        )


def transcript_report(t: Transcript) -> str:
    """Table-shaped CSV: one row per phase with time and traffic, then totals and costs."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("phase", "seconds", "bytes_sent", "bytes_received", "frames"))
    for ph in PHASES:
        w.writerow((ph, f"{t.seconds.get(ph, 0.0):.6f}", t.bytes.get((ph, "sent"), 0),
                    t.bytes.get((ph, "received"), 0),
                    t.frames.get((ph, "sent"), 0) + t.frames.get((ph, "received"), 0)))
    w.writerow(("total", f"{sum(t.seconds.values()):.6f}", sum(t.bytes.get((p, 'sent'), 0) for p in PHASES),
                sum(t.bytes.get((p, 'received'), 0) for p in PHASES), sum(t.frames.values())))
    w.writerow(())
    w.writerow(("he_op", "count"))
    for k in ("SIMDAdd", "SIMDAddPlain", "SIMDMul", "Rotate"):
        w.writerow((k, t.he_ops.get(k, 0)))
    w.writerow(())
    w.writerow(("circuit", "cost", "simd_units", "and_gates", "table_bytes"))
    for c in t.circuits:
        w.writerow((c.name, c.cost.describe(), c.cost.units, c.and_gates, c.table_bytes))
    w.writerow(("all", t.gc_cost.describe(), t.simd_units, sum(c.and_gates for c in t.circuits),
                sum(c.table_bytes for c in t.circuits)))
    return buf.getvalue()
