"""Telemetry record types, the `.trc` line format, stream merging and trace validation.

One job produces three kinds of monitored data: syscall enter/exit events,
periodic resource-usage samples with cumulative I/O and network counters, and
free-text log lines. All three share a single newline-delimited JSON line
format with a `kind` discriminator and a canonical key order, so serialization
is byte-deterministic and traces can be replayed without external tooling.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Iterable, Sequence, Union

ENTER = "enter"
EXIT = "exit"
DIRECTIONS = (ENTER, EXIT)

SEVERITIES = ("debug", "info", "warn", "error")
LABELS = ("normal", "malicious")

_SYSCALL_NAME_RE = re.compile(r"^[a-z0-9_]+$")

MAX_JOB_ID = 64
MAX_NAME = 32
MAX_ARGS = 256
MAX_SOURCE = 64
MAX_MESSAGE = 4096


class InvalidRecord(ValueError):
    """A record field violates its type invariant."""


class MalformedLine(ValueError):
    """A trace line cannot be decoded.

    ``offset`` is the byte offset of the first offending field's key within
    the line; 0 when the error is not attributable to a specific field
    (missing field, non-object line).
    """

    def __init__(self, message: str, offset: int = 0):
        super().__init__(message)
        self.offset = offset


class UnsortedInput(ValueError):
    """An input sequence violates its time-ordering precondition."""

    def __init__(self, message: str, stream_index: int = 0, position: int = 0):
        super().__init__(message)
        self.stream_index = stream_index
        self.position = position


def _check_int(name: str, value, minimum=None) -> None:
    if not isinstance(value, int) or isinstance(value, bool):
        raise InvalidRecord(f"{name} must be an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise InvalidRecord(f"{name} must be >= {minimum}, got {value}")


def _check_job_id(job_id) -> None:
    if not isinstance(job_id, str) or not job_id or len(job_id) > MAX_JOB_ID:
        raise InvalidRecord(f"job_id must be a non-empty string of at most {MAX_JOB_ID} chars")


@dataclass(frozen=True)
class SyscallEvent:
    """One syscall enter or exit observation. ``retval`` is present iff exit."""

    t_ns: int
    job_id: str
    pid: int
    tid: int
    name: str
    direction: str
    args_digest: str = ""
    retval: int | None = None

    def __post_init__(self):
        _check_int("t_ns", self.t_ns)
        _check_job_id(self.job_id)
        _check_int("pid", self.pid, minimum=1)
        _check_int("tid", self.tid, minimum=1)
        if (
            not isinstance(self.name, str)
            or not 1 <= len(self.name) <= MAX_NAME
            or not _SYSCALL_NAME_RE.match(self.name)
        ):
            raise InvalidRecord(f"syscall name must match [a-z0-9_]+ (1-{MAX_NAME} chars), got {self.name!r}")
        if self.direction not in DIRECTIONS:
            raise InvalidRecord(f"direction must be 'enter' or 'exit', got {self.direction!r}")
        if not isinstance(self.args_digest, str) or len(self.args_digest) > MAX_ARGS:
            raise InvalidRecord(f"args_digest must be a string of at most {MAX_ARGS} chars")
        if self.direction == EXIT:
            if self.retval is None:
                raise InvalidRecord("retval is required on exit events")
            _check_int("retval", self.retval)
        elif self.retval is not None:
            raise InvalidRecord("retval is forbidden on enter events")


def _quantize_real(value: float) -> float:
    """Canonical wire resolution for real fields: 6 decimal places."""
    return round(float(value), 6)


@dataclass(frozen=True)
class ResourceSample:
    """Point-in-time resource usage; byte counters are cumulative since job start.

    ``cpu_pct`` is stored quantized to the wire resolution (6 decimals) so that
    parse(serialize(x)) == x holds field-exactly for every constructed sample.
    """

    t_ns: int
    job_id: str
    cpu_pct: float
    rss_bytes: int
    net_rx_bytes: int
    net_tx_bytes: int
    io_read_bytes: int
    io_write_bytes: int

    def __post_init__(self):
        _check_int("t_ns", self.t_ns)
        _check_job_id(self.job_id)
        if isinstance(self.cpu_pct, bool) or not isinstance(self.cpu_pct, (int, float)):
            raise InvalidRecord(f"cpu_pct must be a real number, got {self.cpu_pct!r}")
        cpu = float(self.cpu_pct)
        if cpu != cpu or cpu in (float("inf"), float("-inf")) or cpu < 0.0:
            raise InvalidRecord(f"cpu_pct must be finite and >= 0, got {self.cpu_pct!r}")
        object.__setattr__(self, "cpu_pct", _quantize_real(cpu))
        _check_int("rss_bytes", self.rss_bytes, minimum=0)
        _check_int("net_rx_bytes", self.net_rx_bytes, minimum=0)
        _check_int("net_tx_bytes", self.net_tx_bytes, minimum=0)
        _check_int("io_read_bytes", self.io_read_bytes, minimum=0)
        _check_int("io_write_bytes", self.io_write_bytes, minimum=0)


@dataclass(frozen=True)
class LogRecord:
    """One log line emitted by the job or a node service."""

    t_ns: int
    job_id: str
    source: str
    severity: str
    message: str

    def __post_init__(self):
        _check_int("t_ns", self.t_ns)
        _check_job_id(self.job_id)
        if not isinstance(self.source, str) or len(self.source) > MAX_SOURCE:
            raise InvalidRecord(f"source must be a string of at most {MAX_SOURCE} chars")
        if self.severity not in SEVERITIES:
            raise InvalidRecord(f"severity must be one of {SEVERITIES}, got {self.severity!r}")
        if not isinstance(self.message, str) or len(self.message) > MAX_MESSAGE:
            raise InvalidRecord(f"message must be a string of at most {MAX_MESSAGE} chars")
        if "\n" in self.message:
            raise InvalidRecord("message must not contain newline characters")


TelemetryRecord = Union[SyscallEvent, ResourceSample, LogRecord]


@dataclass(frozen=True)
class LabeledTrace:
    """A job's full time-ordered telemetry with its ground-truth label.

    ``profile_name`` records generator provenance and is empty for real traces.
    Cross-record invariants (ordering, job_id consistency, counter monotony)
    are checked by :func:`validate_trace`, not at construction.
    """

    job_id: str
    label: str
    profile_name: str
    records: tuple[TelemetryRecord, ...]

    def __post_init__(self):
        _check_job_id(self.job_id)
        if self.label not in LABELS:
            raise InvalidRecord(f"label must be one of {LABELS}, got {self.label!r}")
        if not isinstance(self.profile_name, str):
            raise InvalidRecord("profile_name must be a string")
        object.__setattr__(self, "records", tuple(self.records))


@dataclass(frozen=True)
class TraceViolation:
    """One cross-record invariant violation found by :func:`validate_trace`."""

    kind: str  # "OrderViolation" | "JobIdMismatch" | "CounterRegression"
    index: int
    detail: str


# --- wire format ------------------------------------------------------------

_SYS_FIELDS = ("kind", "t_ns", "job_id", "pid", "tid", "name", "dir", "args", "ret")
_RES_FIELDS = (
    "kind",
    "t_ns",
    "job_id",
    "cpu_pct",
    "rss_bytes",
    "net_rx_bytes",
    "net_tx_bytes",
    "io_read_bytes",
    "io_write_bytes",
)
_LOG_FIELDS = ("kind", "t_ns", "job_id", "source", "severity", "message")


def format_real(x: float) -> str:
    """Canonical real formatting: up to 6 decimals, no trailing zeros, "0" for zero."""
    s = f"{x:.6f}".rstrip("0").rstrip(".")
    if s in ("", "-0", "-"):
        return "0"
    return s


def _dump_str(s: str) -> str:
    return json.dumps(s, ensure_ascii=False)


def serialize_line(record: TelemetryRecord) -> str:
    """Serialize one record to its canonical line (no trailing newline).

    Pure and byte-deterministic: equal records produce identical bytes.
    Raises InvalidRecord if the record's invariants do not hold.
    """
    if not isinstance(record, (SyscallEvent, ResourceSample, LogRecord)):
        raise InvalidRecord(f"not a telemetry record: {type(record).__name__}")
    record.__post_init__()  # re-check invariants; construction normally guarantees them
    if isinstance(record, SyscallEvent):
        parts = [
            '"kind":"sys"',
            f'"t_ns":{record.t_ns}',
            f'"job_id":{_dump_str(record.job_id)}',
            f'"pid":{record.pid}',
            f'"tid":{record.tid}',
            f'"name":"{record.name}"',
            f'"dir":"{record.direction}"',
            f'"args":{_dump_str(record.args_digest)}',
        ]
        if record.direction == EXIT:
            parts.append(f'"ret":{record.retval}')
    elif isinstance(record, ResourceSample):
        parts = [
            '"kind":"res"',
            f'"t_ns":{record.t_ns}',
            f'"job_id":{_dump_str(record.job_id)}',
            f'"cpu_pct":{format_real(record.cpu_pct)}',
            f'"rss_bytes":{record.rss_bytes}',
            f'"net_rx_bytes":{record.net_rx_bytes}',
            f'"net_tx_bytes":{record.net_tx_bytes}',
            f'"io_read_bytes":{record.io_read_bytes}',
            f'"io_write_bytes":{record.io_write_bytes}',
        ]
    else:
        parts = [
            '"kind":"log"',
            f'"t_ns":{record.t_ns}',
            f'"job_id":{_dump_str(record.job_id)}',
            f'"source":{_dump_str(record.source)}',
            f'"severity":"{record.severity}"',
            f'"message":{_dump_str(record.message)}',
        ]
    return "{" + ",".join(parts) + "}"


def _field_offset(line: str, key: str) -> int:
    idx = line.find(f'"{key}"')
    if idx < 0:
        return 0
    return len(line[:idx].encode("utf-8"))


def _fail_field(line: str, key: str, why: str) -> MalformedLine:
    return MalformedLine(f"field {key!r}: {why}", offset=_field_offset(line, key))


def _take_int(obj: dict, line: str, key: str) -> int:
    v = obj[key]
    if not isinstance(v, int) or isinstance(v, bool):
        raise _fail_field(line, key, f"expected integer, got {v!r}")
    return v


def _take_str(obj: dict, line: str, key: str) -> str:
    v = obj[key]
    if not isinstance(v, str):
        raise _fail_field(line, key, f"expected string, got {v!r}")
    return v


def parse_line(line: str) -> TelemetryRecord:
    """Decode one trace line into its record.

    Accepts any key order but requires the exact field set of the record kind
    (``ret`` present iff the event is an exit). Raises MalformedLine with the
    byte offset of the first offending field.
    """
    stripped = line.strip()
    if not stripped:
        raise MalformedLine("empty line")
    try:
        obj = json.loads(stripped)
    except json.JSONDecodeError as exc:
        offset = len(stripped[: exc.pos].encode("utf-8"))
        raise MalformedLine(f"invalid object syntax: {exc.msg}", offset=offset) from None
    if not isinstance(obj, dict):
        raise MalformedLine("line is not an object")
    if "kind" not in obj:
        raise MalformedLine("missing field 'kind'")
    kind = obj["kind"]
    if kind == "sys":
        expected: tuple[str, ...] = _SYS_FIELDS[:-1]
        if "ret" in obj:
            expected = _SYS_FIELDS
    elif kind == "res":
        expected = _RES_FIELDS
    elif kind == "log":
        expected = _LOG_FIELDS
    else:
        raise MalformedLine(f"unknown kind {kind!r}", offset=_field_offset(stripped, "kind"))
    for key in expected:
        if key not in obj:
            raise MalformedLine(f"missing field {key!r}")
    for key in obj:
        if key not in expected:
            raise _fail_field(stripped, key, "unknown field")

    try:
        if kind == "sys":
            # validate in canonical field order so the reported offset is the
            # first offending field
            t_ns = _take_int(obj, stripped, "t_ns")
            job_id = _take_str(obj, stripped, "job_id")
            pid = _take_int(obj, stripped, "pid")
            tid = _take_int(obj, stripped, "tid")
            name = _take_str(obj, stripped, "name")
            direction = _take_str(obj, stripped, "dir")
            if direction not in DIRECTIONS:
                raise _fail_field(stripped, "dir", f"expected 'enter' or 'exit', got {direction!r}")
            args = _take_str(obj, stripped, "args")
            if direction == ENTER and "ret" in obj:
                raise _fail_field(stripped, "ret", "retval forbidden on enter events")
            if direction == EXIT and "ret" not in obj:
                raise MalformedLine("missing field 'ret'")
            return SyscallEvent(
                t_ns=t_ns,
                job_id=job_id,
                pid=pid,
                tid=tid,
                name=name,
                direction=direction,
                args_digest=args,
                retval=_take_int(obj, stripped, "ret") if direction == EXIT else None,
            )
        if kind == "res":
            cpu = obj["cpu_pct"]
            if isinstance(cpu, bool) or not isinstance(cpu, (int, float)):
                raise _fail_field(stripped, "cpu_pct", f"expected real, got {cpu!r}")
            return ResourceSample(
                t_ns=_take_int(obj, stripped, "t_ns"),
                job_id=_take_str(obj, stripped, "job_id"),
                cpu_pct=float(cpu),
                rss_bytes=_take_int(obj, stripped, "rss_bytes"),
                net_rx_bytes=_take_int(obj, stripped, "net_rx_bytes"),
                net_tx_bytes=_take_int(obj, stripped, "net_tx_bytes"),
                io_read_bytes=_take_int(obj, stripped, "io_read_bytes"),
                io_write_bytes=_take_int(obj, stripped, "io_write_bytes"),
            )
        return LogRecord(
            t_ns=_take_int(obj, stripped, "t_ns"),
            job_id=_take_str(obj, stripped, "job_id"),
            source=_take_str(obj, stripped, "source"),
            severity=_take_str(obj, stripped, "severity"),
            message=_take_str(obj, stripped, "message"),
        )
    except InvalidRecord as exc:
        # locate the offending field by matching the invariant message
        key = _invariant_key(str(exc), kind)
        raise MalformedLine(str(exc), offset=_field_offset(stripped, key)) from None


_INVARIANT_KEYS = {
    "t_ns": "t_ns",
    "job_id": "job_id",
    "pid": "pid",
    "tid": "tid",
    "syscall name": "name",
    "direction": "dir",
    "args_digest": "args",
    "retval": "ret",
    "cpu_pct": "cpu_pct",
    "rss_bytes": "rss_bytes",
    "net_rx_bytes": "net_rx_bytes",
    "net_tx_bytes": "net_tx_bytes",
    "io_read_bytes": "io_read_bytes",
    "io_write_bytes": "io_write_bytes",
    "source": "source",
    "severity": "severity",
    "message": "message",
}


def _invariant_key(message: str, kind: str) -> str:
    for marker, key in _INVARIANT_KEYS.items():
        if message.startswith(marker):
            return key
    return "kind"


# --- stream merging and trace validation ------------------------------------

def merge_streams(streams: Sequence[Sequence[TelemetryRecord]]) -> list[TelemetryRecord]:
    """Stable k-way merge of individually time-ordered record sequences.

    Records with equal t_ns keep (stream index, position) order. Raises
    UnsortedInput naming the first inversion found in any input.
    """
    import heapq

    seqs = [list(stream) for stream in streams]
    for si, seq in enumerate(seqs):
        for pos in range(1, len(seq)):
            if seq[pos].t_ns < seq[pos - 1].t_ns:
                raise UnsortedInput(
                    f"stream {si} is unsorted at position {pos}", stream_index=si, position=pos
                )
    heap: list[tuple[int, int, int]] = [(seq[0].t_ns, si, 0) for si, seq in enumerate(seqs) if seq]
    heapq.heapify(heap)
    out: list[TelemetryRecord] = []
    while heap:
        t, si, pos = heapq.heappop(heap)
        out.append(seqs[si][pos])
        nxt = pos + 1
        if nxt < len(seqs[si]):
            heapq.heappush(heap, (seqs[si][nxt].t_ns, si, nxt))
    return out


_COUNTERS = ("net_rx_bytes", "net_tx_bytes", "io_read_bytes", "io_write_bytes")


def validate_trace(trace: LabeledTrace) -> list[TraceViolation]:
    """Report every ordering, job_id and cumulative-counter violation.

    Violations are data, not errors; an empty list means the trace is valid.
    """
    violations: list[TraceViolation] = []
    prev_t = None
    prev_sample: ResourceSample | None = None
    for i, rec in enumerate(trace.records):
        if prev_t is not None and rec.t_ns < prev_t:
            violations.append(
                TraceViolation("OrderViolation", i, f"t_ns {rec.t_ns} < previous {prev_t}")
            )
        prev_t = rec.t_ns
        if rec.job_id != trace.job_id:
            violations.append(
                TraceViolation("JobIdMismatch", i, f"record job_id {rec.job_id!r} != trace {trace.job_id!r}")
            )
        if isinstance(rec, ResourceSample):
            if prev_sample is not None:
                for counter in _COUNTERS:
                    cur, prev = getattr(rec, counter), getattr(prev_sample, counter)
                    if cur < prev:
                        violations.append(
                            TraceViolation("CounterRegression", i, f"{counter} {cur} < previous {prev}")
                        )
            prev_sample = rec
    return violations


# --- trace files -------------------------------------------------------------

def write_trace_file(path, records: Iterable[TelemetryRecord]) -> None:
    """Write records as one canonical line each (UTF-8, trailing newline per line)."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for record in records:
            fh.write(serialize_line(record))
            fh.write("\n")


def read_trace_file(path) -> list[TelemetryRecord]:
    """Parse a `.trc` file; MalformedLine is re-raised with the line number attached."""
    out: list[TelemetryRecord] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                out.append(parse_line(line))
            except MalformedLine as exc:
                err = MalformedLine(f"{path}:{lineno}: {exc}", offset=exc.offset)
                err.lineno = lineno
                raise err from None
    return out


def load_labeled_trace(path, job_id: str, label: str, profile_name: str = "") -> LabeledTrace:
    return LabeledTrace(job_id=job_id, label=label, profile_name=profile_name, records=tuple(read_trace_file(path)))
