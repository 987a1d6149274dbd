"""Append-only, hash-chained decision ledger.

Each line is a JSON record carrying the sha256 of the previous line's
hash plus its own canonical content, so any historical edit is
detectable by `verify`.
"""
from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import Iterable, Optional

ID_PATTERN = re.compile(r"^D\d{3,}$")
GENESIS = "0" * 64


class LedgerError(ValueError):
    pass


@dataclass(frozen=True)
class DecisionRecord:
    id: str
    text: str
    status: str = "OPEN"  # OPEN | LOCKED
    created_at: str = ""
    evidence_refs: tuple[str, ...] = ()
    supersedes: Optional[str] = None

    def __post_init__(self) -> None:
        if not ID_PATTERN.match(self.id):
            raise LedgerError(f"bad decision id {self.id!r} (want D###)")
        if self.status not in ("OPEN", "LOCKED"):
            raise LedgerError(f"bad status {self.status!r}")


def _canonical(record: DecisionRecord, prev_hash: str) -> str:
    body = asdict(record)
    body["evidence_refs"] = list(record.evidence_refs)
    body["prev"] = prev_hash
    return json.dumps(body, sort_keys=True, separators=(",", ":"))


def _hash(canonical: str) -> str:
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


class Ledger:
    """File-backed append-only ledger; single writer."""

    def __init__(self, path: str | Path):
        self.path = Path(path)

    def _lines(self) -> list[str]:
        if not self.path.exists():
            return []
        return [ln for ln in self.path.read_text(encoding="utf-8").splitlines() if ln.strip()]

    def records(self) -> list[DecisionRecord]:
        out = []
        for ln in self._lines():
            obj = json.loads(ln)
            out.append(DecisionRecord(
                id=obj["id"], text=obj["text"], status=obj["status"],
                created_at=obj["created_at"],
                evidence_refs=tuple(obj["evidence_refs"]),
                supersedes=obj.get("supersedes"),
            ))
        return out

    def _tip_hash(self) -> str:
        lines = self._lines()
        if not lines:
            return GENESIS
        return json.loads(lines[-1])["hash"]

    def append(self, record: DecisionRecord) -> None:
        """Append one record; duplicate ids (unless superseding) are rejected."""
        existing = {r.id: r for r in self.records()}
        if record.id in existing:
            raise LedgerError(f"duplicate decision id {record.id}")
        if record.supersedes is not None:
            if record.supersedes not in existing:
                raise LedgerError(f"supersedes unknown id {record.supersedes}")
        prev = self._tip_hash()
        canonical = _canonical(record, prev)
        obj = json.loads(canonical)
        obj["hash"] = _hash(canonical)
        with self.path.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n")

    def verify(self) -> None:
        """Walk the hash chain; raises LedgerError naming the first bad line."""
        prev = GENESIS
        for i, ln in enumerate(self._lines(), start=1):
            obj = json.loads(ln)
            claimed = obj.pop("hash", None)
            if obj.get("prev") != prev:
                raise LedgerError(f"line {i}: chain break (prev hash mismatch)")
            canonical = json.dumps(obj, sort_keys=True, separators=(",", ":"))
            if _hash(canonical) != claimed:
                raise LedgerError(f"line {i}: content hash mismatch")
            prev = claimed

    def by_status(self, status: str) -> list[DecisionRecord]:
        return [r for r in self.records() if r.status == status]
