from dataclasses import dataclass
from typing import Any, Iterable, Optional

import pandas as pd

from mcpsim.pathdev.device_base import Direction, FiveTuple, PacketContext
from mcpsim.protocol.wire import Packet


@dataclass(frozen=True)
class ScratchSummary:
    pcf_type: int
    integrity_mode: int
    length: int
    value: bytes


@dataclass(frozen=True)
class ObservationRecord:
    """What a tap sees of one packet. Payload bytes are never captured."""

    time: int
    tap: str
    direction: Direction
    tuple5: FiveTuple
    cid: int
    psn: int
    pse: int
    flags: str
    scratch: Optional[ScratchSummary]
    payload_len: int

    @classmethod
    def observe(cls, packet: Packet, ctx: PacketContext, tap: str, now: int) -> "ObservationRecord":
        scratch = None
        if packet.scratch is not None:
            s = packet.scratch
            scratch = ScratchSummary(s.pcf_type, int(s.integrity_mode), s.length, s.value)
        return cls(
            time=now,
            tap=tap,
            direction=ctx.direction,
            tuple5=ctx.tuple5,
            cid=packet.cid,
            psn=packet.psn,
            pse=packet.pse,
            flags=packet.flags.short(),
            scratch=scratch,
            payload_len=len(packet.payload),
        )

    @property
    def lola(self) -> bool:
        return self.flags[0] == "L"

    @property
    def stop(self) -> bool:
        return self.flags[2] == "S"

    def to_dict(self) -> dict[str, Any]:
        t = self.tuple5
        return {
            "time": self.time,
            "tap": self.tap,
            "direction": self.direction.value,
            "tuple": [t.src_addr, t.src_port, t.dst_addr, t.dst_port, t.proto],
            "cid": f"{self.cid:016x}",
            "psn": self.psn,
            "pse": self.pse,
            "flags": self.flags,
            "scratch": None
            if self.scratch is None
            else {
                "type": self.scratch.pcf_type,
                "mode": self.scratch.integrity_mode,
                "length": self.scratch.length,
                "value": self.scratch.value.hex(),
            },
            "payload_len": self.payload_len,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ObservationRecord":
        scratch = data.get("scratch")
        return cls(
            time=int(data["time"]),
            tap=data["tap"],
            direction=Direction(data["direction"]),
            tuple5=FiveTuple(*data["tuple"]),
            cid=int(data["cid"], 16),
            psn=int(data["psn"]),
            pse=int(data["pse"]),
            flags=data["flags"],
            scratch=None
            if scratch is None
            else ScratchSummary(
                scratch["type"], scratch["mode"], scratch["length"], bytes.fromhex(scratch["value"])
            ),
            payload_len=int(data["payload_len"]),
        )


RECORD_COLUMNS = [
    "time",
    "tap",
    "direction",
    "flow_tuple",
    "cid",
    "psn",
    "pse",
    "lola",
    "stop",
    "scratch_type",
    "payload_len",
]


def records_to_frame(
    records: Iterable[ObservationRecord], flows: Optional[Iterable[int]] = None
) -> pd.DataFrame:
    """One row per record; `flows` adds a ground-truth flow column"""
    rows = [
        {
            "time": r.time,
            "tap": r.tap,
            "direction": r.direction.value,
            "flow_tuple": str(r.tuple5.canonical()),
            "cid": r.cid,
            "psn": r.psn,
            "pse": r.pse,
            "lola": r.lola,
            "stop": r.stop,
            "scratch_type": r.scratch.pcf_type if r.scratch else None,
            "payload_len": r.payload_len,
        }
        for r in records
    ]
    frame = pd.DataFrame(rows, columns=RECORD_COLUMNS)
    if flows is not None:
        frame["flow"] = list(flows)
    return frame
