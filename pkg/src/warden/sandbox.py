"""Job isolation policies and the two execution backends.

The process backend runs a real command in its own session with a scrubbed
environment, best-effort OS resource limits, per-second resource sampling,
stdout/stderr capture as log records and a sampled view of the current
syscall (via /proc/<pid>/syscall, where available). The replay backend
streams a recorded `.trc` file and is fully deterministic; the detection
pipeline consumes both through the same telemetry-stream interface.

Limit enforcement is split deliberately: a wallclock breach records a
violation and terminates the job here, while CPU/memory/network breaches
only surface as violation records for the detector to weigh.
"""

from __future__ import annotations

import enum
import os
import platform
import queue
import re
import signal
import subprocess
import threading
import time
from dataclasses import dataclass, field

from .records import (
    ENTER,
    LogRecord,
    ResourceSample,
    SyscallEvent,
    TelemetryRecord,
    UnsortedInput,
    read_trace_file,
    serialize_line,
)

KILL_GRACE_S = 2.0


class KillReason(enum.IntEnum):
    POLICY_VIOLATION = 1
    DETECTOR_ACTION = 2
    WALLCLOCK_EXCEEDED = 3
    OPERATOR_REQUEST = 4


class SandboxError(Exception):
    pass


class DuplicateJobId(SandboxError):
    pass


class SpawnFailure(SandboxError):
    pass


class ReplaySourceMissing(SandboxError):
    pass


class InvalidPolicy(SandboxError):
    pass


@dataclass(frozen=True)
class FieldViolation:
    field: str
    detail: str


@dataclass(frozen=True)
class SandboxPolicy:
    """Resource/isolation limits a job runs under. Validate with validate_policy."""

    cpu_limit_pct: float = 100.0
    mem_limit_bytes: int = 2 * 2**30
    net_allowed: bool = True
    max_pids: int = 64
    wallclock_limit_s: float = 3600.0
    fs_hidden_paths: tuple[str, ...] = ()


def validate_policy(policy: SandboxPolicy) -> list[FieldViolation]:
    """Every invariant violation, one entry per offending field; [] iff valid."""
    out: list[FieldViolation] = []
    if not policy.cpu_limit_pct > 0:
        out.append(FieldViolation("cpu_limit_pct", "must be > 0"))
    if not policy.mem_limit_bytes > 0:
        out.append(FieldViolation("mem_limit_bytes", "must be > 0"))
    if not isinstance(policy.net_allowed, bool):
        out.append(FieldViolation("net_allowed", "must be a boolean"))
    if not policy.max_pids >= 1:
        out.append(FieldViolation("max_pids", "must be >= 1"))
    if not policy.wallclock_limit_s > 0:
        out.append(FieldViolation("wallclock_limit_s", "must be > 0"))
    for i, path in enumerate(policy.fs_hidden_paths):
        if not isinstance(path, str) or not path.startswith("/"):
            out.append(FieldViolation(f"fs_hidden_paths[{i}]", "must be an absolute path"))
    return out


_JOB_ID_RE = re.compile(r"^[A-Za-z0-9._-]+$")


@dataclass(frozen=True)
class JobDescriptor:
    job_id: str
    command: tuple[str, ...]
    env: dict = field(default_factory=dict)
    policy: SandboxPolicy = field(default_factory=SandboxPolicy)

    def __post_init__(self):
        if not isinstance(self.job_id, str) or not self.job_id or len(self.job_id) > 64 or not _JOB_ID_RE.match(self.job_id):
            raise ValueError(f"job_id must match [A-Za-z0-9._-]+ and be at most 64 chars, got {self.job_id!r}")
        object.__setattr__(self, "command", tuple(self.command))
        if not self.command:
            raise ValueError("command must be non-empty")


@dataclass(frozen=True)
class JobStatus:
    """Job lifecycle state; Completed/Killed are terminal and never change."""

    phase: str  # "pending" | "running" | "completed" | "killed"
    exit_code: int | None = None
    kill_reason: KillReason | None = None

    @classmethod
    def pending(cls) -> "JobStatus":
        return cls("pending")

    @classmethod
    def running(cls) -> "JobStatus":
        return cls("running")

    @classmethod
    def completed(cls, exit_code: int) -> "JobStatus":
        return cls("completed", exit_code=exit_code)

    @classmethod
    def killed(cls, reason: KillReason) -> "JobStatus":
        return cls("killed", kill_reason=reason)

    @property
    def terminal(self) -> bool:
        return self.phase in ("completed", "killed")


@dataclass(frozen=True)
class PolicyViolation:
    job_id: str
    t_ns: int
    kind: str  # "CpuLimit" | "MemLimit" | "NetForbidden" | "PidLimit" | "Wallclock"
    observed: float
    limit: float


class LimitTracker:
    """Incremental policy check over a job's time-ordered resource samples.

    Mirrors enforce_limits one sample at a time so the detection pipeline can
    raise violations online; the Wallclock kind fires at most once.
    """

    def __init__(self, policy: SandboxPolicy, t_start_ns: int):
        self.policy = policy
        self.t_start_ns = t_start_ns
        self._prev: ResourceSample | None = None
        self._wallclock_fired = False

    def push(self, sample: ResourceSample) -> list[PolicyViolation]:
        if self._prev is not None and sample.t_ns < self._prev.t_ns:
            raise UnsortedInput("resource samples are unsorted")
        out: list[PolicyViolation] = []
        p = self.policy
        if sample.cpu_pct > p.cpu_limit_pct:
            out.append(PolicyViolation(sample.job_id, sample.t_ns, "CpuLimit", sample.cpu_pct, p.cpu_limit_pct))
        if sample.rss_bytes > p.mem_limit_bytes:
            out.append(PolicyViolation(sample.job_id, sample.t_ns, "MemLimit", float(sample.rss_bytes), float(p.mem_limit_bytes)))
        if not p.net_allowed:
            prev_rx = self._prev.net_rx_bytes if self._prev else 0
            prev_tx = self._prev.net_tx_bytes if self._prev else 0
            delta = (sample.net_rx_bytes - prev_rx) + (sample.net_tx_bytes - prev_tx)
            if delta > 0:
                out.append(PolicyViolation(sample.job_id, sample.t_ns, "NetForbidden", float(delta), 0.0))
        if not self._wallclock_fired and sample.t_ns - self.t_start_ns > p.wallclock_limit_s * 1e9:
            self._wallclock_fired = True
            out.append(
                PolicyViolation(
                    sample.job_id,
                    sample.t_ns,
                    "Wallclock",
                    (sample.t_ns - self.t_start_ns) / 1e9,
                    p.wallclock_limit_s,
                )
            )
        self._prev = sample
        return out


def enforce_limits(samples, policy: SandboxPolicy, t_start_ns: int) -> list[PolicyViolation]:
    """Pure scan over samples; violations appear in sample order.

    Net deltas are taken against the previous sample (counters are cumulative
    from job start, so the first sample's delta is its absolute value).
    """
    tracker = LimitTracker(policy, t_start_ns)
    out: list[PolicyViolation] = []
    for sample in samples:
        out.extend(tracker.push(sample))
    return out


class TelemetryStream:
    """Bounded single-producer single-consumer record stream.

    The producer either blocks (default) or drops the oldest buffered record
    when the consumer lags. Iteration ends when the producer closes.
    """

    _SENTINEL = object()

    def __init__(self, maxsize: int = 10000, overflow: str = "block"):
        if overflow not in ("block", "drop_oldest"):
            raise ValueError("overflow must be 'block' or 'drop_oldest'")
        self._q: queue.Queue = queue.Queue(maxsize=maxsize)
        self._overflow = overflow
        self._closed = False

    def put(self, record: TelemetryRecord) -> None:
        if self._closed:
            return
        if self._overflow == "block":
            self._q.put(record)
            return
        while True:
            try:
                self._q.put_nowait(record)
                return
            except queue.Full:
                try:
                    self._q.get_nowait()
                except queue.Empty:
                    pass

    def close(self) -> None:
        if not self._closed:
            self._closed = True
            self._q.put(self._SENTINEL)

    def __iter__(self):
        while True:
            item = self._q.get()
            if item is self._SENTINEL:
                return
            yield item


class JobHandle:
    """Live view of one sandboxed job: status, telemetry, termination.

    Status moves pending -> running -> (completed | killed); the first
    terminal transition wins and later ones are ignored, which makes
    terminate idempotent by construction.
    """

    def __init__(self, job_id: str, stream: TelemetryStream, backend: "ExecutionBackend"):
        self.job_id = job_id
        self.telemetry = stream
        self.violations: list[PolicyViolation] = []
        self._backend = backend
        self._lock = threading.Lock()
        self._cond = threading.Condition(self._lock)
        self._status = JobStatus.pending()

    def status(self) -> JobStatus:
        with self._lock:
            return self._status

    def _set_running(self) -> None:
        with self._cond:
            if self._status.phase == "pending":
                self._status = JobStatus.running()
                self._cond.notify_all()

    def _set_terminal(self, status: JobStatus) -> JobStatus:
        """First terminal status sticks; returns the effective terminal status."""
        with self._cond:
            if not self._status.terminal:
                self._status = status
                self._cond.notify_all()
            return self._status

    def wait(self, timeout: float | None = None) -> JobStatus:
        deadline = None if timeout is None else time.monotonic() + timeout
        with self._cond:
            while not self._status.terminal:
                remaining = None if deadline is None else deadline - time.monotonic()
                if remaining is not None and remaining <= 0:
                    break
                self._cond.wait(timeout=remaining)
            return self._status

    def terminate(self, reason: KillReason) -> JobStatus:
        """Stop the job if it still runs; a finished job keeps its status."""
        return self._backend._terminate(self, reason)


class ExecutionBackend:
    """Common launch bookkeeping: per-node job_id uniqueness and release."""

    def __init__(self):
        self._live: set[str] = set()
        self._live_lock = threading.Lock()

    def launch(self, descriptor: JobDescriptor) -> JobHandle:
        problems = validate_policy(descriptor.policy)
        if problems:
            raise InvalidPolicy(f"policy invalid: {problems}")
        with self._live_lock:
            if descriptor.job_id in self._live:
                raise DuplicateJobId(f"job {descriptor.job_id!r} is already live on this node")
            self._live.add(descriptor.job_id)
        try:
            return self._launch(descriptor)
        except Exception:
            self._release(descriptor.job_id)
            raise

    def _release(self, job_id: str) -> None:
        with self._live_lock:
            self._live.discard(job_id)

    def _launch(self, descriptor: JobDescriptor) -> JobHandle:
        raise NotImplementedError

    def _terminate(self, handle: JobHandle, reason: KillReason) -> JobStatus:
        raise NotImplementedError


class ReplayBackend(ExecutionBackend):
    """Streams a recorded trace file as the job's telemetry, deterministically.

    ``speed`` scales recorded inter-record delays: 0 replays as fast as
    possible, 1 replays in real time. Records are forwarded verbatim (no
    job_id rewriting), so the stream equals the file byte for byte.
    """

    def __init__(self, trace_path, speed: float = 0.0, stream_maxsize: int = 100000, overflow: str = "block"):
        super().__init__()
        self.trace_path = str(trace_path)
        self.speed = speed
        self._stream_maxsize = stream_maxsize
        self._overflow = overflow

    def _launch(self, descriptor: JobDescriptor) -> JobHandle:
        if not os.path.exists(self.trace_path):
            raise ReplaySourceMissing(f"no trace at {self.trace_path}")
        records = read_trace_file(self.trace_path)
        stream = TelemetryStream(maxsize=self._stream_maxsize, overflow=self._overflow)
        handle = JobHandle(descriptor.job_id, stream, self)
        handle._stop = threading.Event()

        def run():
            handle._set_running()
            prev_t = None
            for record in records:
                if handle._stop.is_set():
                    break
                if self.speed > 0 and prev_t is not None and record.t_ns > prev_t:
                    time.sleep((record.t_ns - prev_t) / 1e9 * self.speed)
                prev_t = record.t_ns
                stream.put(record)
            if not handle._stop.is_set():
                handle._set_terminal(JobStatus.completed(0))
            stream.close()
            self._release(descriptor.job_id)

        handle._thread = threading.Thread(target=run, name=f"replay-{descriptor.job_id}", daemon=True)
        handle._thread.start()
        return handle

    def _terminate(self, handle: JobHandle, reason: KillReason) -> JobStatus:
        status = handle.status()
        if status.terminal:
            return status
        handle._stop.set()
        final = handle._set_terminal(JobStatus.killed(reason))
        self._release(handle.job_id)
        return final


# --- process backend ----------------------------------------------------------

_CLK_TCK = os.sysconf("SC_CLK_TCK") if hasattr(os, "sysconf") else 100

# common x86_64 syscall numbers for the sampled /proc/<pid>/syscall probe
_SYSCALL_NAMES_X86_64 = {
    0: "read", 1: "write", 2: "open", 3: "close", 4: "stat", 5: "fstat", 7: "poll",
    8: "lseek", 9: "mmap", 10: "mprotect", 11: "munmap", 12: "brk", 13: "rt_sigaction",
    14: "rt_sigprocmask", 16: "ioctl", 17: "pread64", 18: "pwrite64", 19: "readv",
    20: "writev", 22: "pipe", 23: "select", 24: "sched_yield", 28: "madvise",
    32: "dup", 33: "dup2", 34: "pause", 35: "nanosleep", 39: "getpid", 41: "socket",
    42: "connect", 43: "accept", 44: "sendto", 45: "recvfrom", 46: "sendmsg",
    47: "recvmsg", 56: "clone", 57: "fork", 59: "execve", 60: "exit", 61: "wait4",
    62: "kill", 72: "fcntl", 78: "getdents", 79: "getcwd", 89: "readlink",
    96: "gettimeofday", 102: "getuid", 104: "getgid", 107: "geteuid", 202: "futex",
    228: "clock_gettime", 230: "clock_nanosleep", 231: "exit_group", 232: "epoll_wait",
    257: "openat", 262: "newfstatat", 270: "pselect6", 271: "ppoll", 281: "epoll_pwait",
    318: "getrandom",
}


def _syscall_name(number: int) -> str:
    if platform.machine() == "x86_64":
        return _SYSCALL_NAMES_X86_64.get(number, f"sys_{number}")
    return f"sys_{number}"


def syscall_sampling_supported() -> bool:
    try:
        with open("/proc/self/syscall", "r") as fh:
            fh.read()
        return True
    except OSError:
        return False


class ProcessBackend(ExecutionBackend):
    """Runs the command as a real subprocess under best-effort limits.

    Isolation notes (documented limitations): memory is limited via
    RLIMIT_AS, CPU share is not throttled (breaches surface as violations),
    fs_hidden_paths is advisory (environment scrubbing plus a private working
    directory), and per-process network counters are not observable from
    /proc, so live ResourceSamples carry zero network deltas.
    """

    def __init__(self, sample_interval_ms: int = 1000, syscall_poll_ms: int = 50,
                 stream_maxsize: int = 10000, overflow: str = "block", workdir_root=None):
        super().__init__()
        self.sample_interval_ms = sample_interval_ms
        self.syscall_poll_ms = syscall_poll_ms
        self._stream_maxsize = stream_maxsize
        self._overflow = overflow
        self._workdir_root = workdir_root

    def _launch(self, descriptor: JobDescriptor) -> JobHandle:
        import tempfile

        policy = descriptor.policy
        workdir = tempfile.mkdtemp(prefix=f"warden-{descriptor.job_id}-", dir=self._workdir_root)
        env = dict(descriptor.env)

        def preexec():
            os.setsid()
            try:
                import resource

                resource.setrlimit(resource.RLIMIT_AS, (policy.mem_limit_bytes, policy.mem_limit_bytes))
            except Exception:
                pass  # best-effort: missing permissions must not block the launch

        try:
            proc = subprocess.Popen(
                list(descriptor.command),
                env=env,
                cwd=workdir,
                stdout=subprocess.PIPE,
                stderr=subprocess.PIPE,
                preexec_fn=preexec,
            )
        except (OSError, ValueError) as exc:
            raise SpawnFailure(f"cannot spawn {descriptor.command!r}: {exc}") from None

        stream = TelemetryStream(maxsize=self._stream_maxsize, overflow=self._overflow)
        handle = JobHandle(descriptor.job_id, stream, self)
        handle._proc = proc
        handle._policy = policy
        handle._stop = threading.Event()
        handle._t_start_ns = time.time_ns()
        handle._set_running()

        threads = [
            threading.Thread(target=self._pipe_reader, args=(handle, proc.stdout, "stdout", "info"), daemon=True),
            threading.Thread(target=self._pipe_reader, args=(handle, proc.stderr, "stderr", "error"), daemon=True),
            threading.Thread(target=self._monitor, args=(handle,), daemon=True),
            threading.Thread(target=self._waiter, args=(handle,), daemon=True),
        ]
        handle._threads = threads
        if policy.wallclock_limit_s > 0:
            timer = threading.Timer(policy.wallclock_limit_s, self._wallclock_kill, args=(handle,))
            timer.daemon = True
            timer.start()
            handle._timer = timer
        for t in threads:
            t.start()
        return handle

    def _wallclock_kill(self, handle: JobHandle) -> None:
        if handle.status().terminal:
            return
        now = time.time_ns()
        handle.violations.append(
            PolicyViolation(
                handle.job_id,
                now,
                "Wallclock",
                (now - handle._t_start_ns) / 1e9,
                handle._policy.wallclock_limit_s,
            )
        )
        self._terminate(handle, KillReason.WALLCLOCK_EXCEEDED)

    def _pipe_reader(self, handle: JobHandle, pipe, source: str, severity: str) -> None:
        try:
            for raw in iter(pipe.readline, b""):
                text = raw.decode("utf-8", errors="replace").rstrip("\n").replace("\n", " ")[:4096]
                handle.telemetry.put(
                    LogRecord(t_ns=time.time_ns(), job_id=handle.job_id, source=source, severity=severity, message=text)
                )
        except (OSError, ValueError):
            pass
        finally:
            pipe.close()

    def _read_proc(self, pid: int):
        """(cpu_ticks, rss_bytes, io_read, io_write) or None once the process is gone."""
        try:
            with open(f"/proc/{pid}/stat", "rb") as fh:
                stat = fh.read().decode("ascii", errors="replace")
            fields = stat[stat.rindex(")") + 2 :].split()
            utime, stime = int(fields[11]), int(fields[12])  # fields 14/15, 1-based
            rss_pages = int(fields[21])  # field 24
            rss = rss_pages * os.sysconf("SC_PAGE_SIZE")
        except (OSError, ValueError, IndexError):
            return None
        io_r = io_w = 0
        try:
            with open(f"/proc/{pid}/io", "rb") as fh:
                for line in fh.read().decode("ascii", errors="replace").splitlines():
                    if line.startswith("read_bytes:"):
                        io_r = int(line.split()[1])
                    elif line.startswith("write_bytes:"):
                        io_w = int(line.split()[1])
        except OSError:
            pass
        return utime + stime, rss, io_r, io_w

    def _monitor(self, handle: JobHandle) -> None:
        """Per-interval resource samples plus sampled current-syscall events."""
        pid = handle._proc.pid
        interval = self.sample_interval_ms / 1000.0
        poll = max(self.syscall_poll_ms / 1000.0, 0.005)
        prev_ticks = None
        last_sample = time.monotonic()
        can_sample_syscall = syscall_sampling_supported()
        last_syscall_key = None
        while not handle._stop.is_set() and handle._proc.poll() is None:
            time.sleep(poll)
            now_ns = time.time_ns()
            if can_sample_syscall:
                try:
                    with open(f"/proc/{pid}/syscall", "r") as fh:
                        first = fh.read().split()[0]
                    if first not in ("-1", "running"):
                        number = int(first)
                        handle.telemetry.put(
                            SyscallEvent(
                                t_ns=now_ns,
                                job_id=handle.job_id,
                                pid=pid,
                                tid=pid,
                                name=_syscall_name(number),
                                direction=ENTER,
                                args_digest="",
                            )
                        )
                except (OSError, ValueError, IndexError):
                    pass
            now = time.monotonic()
            if now - last_sample >= interval:
                last_sample = now
                snap = self._read_proc(pid)
                if snap is None:
                    continue
                ticks, rss, io_r, io_w = snap
                cpu_pct = 0.0
                if prev_ticks is not None:
                    cpu_pct = max(0.0, (ticks - prev_ticks) / _CLK_TCK / interval * 100.0)
                prev_ticks = ticks
                handle.telemetry.put(
                    ResourceSample(
                        t_ns=now_ns,
                        job_id=handle.job_id,
                        cpu_pct=cpu_pct,
                        rss_bytes=rss,
                        net_rx_bytes=0,
                        net_tx_bytes=0,
                        io_read_bytes=io_r,
                        io_write_bytes=io_w,
                    )
                )

    def _waiter(self, handle: JobHandle) -> None:
        rc = handle._proc.wait()
        handle._stop.set()
        handle._set_terminal(JobStatus.completed(rc))
        for t in handle._threads[:2]:  # let pipe readers drain
            t.join(timeout=2.0)
        handle.telemetry.close()
        timer = getattr(handle, "_timer", None)
        if timer is not None:
            timer.cancel()
        self._release(handle.job_id)

    def _terminate(self, handle: JobHandle, reason: KillReason) -> JobStatus:
        status = handle.status()
        if status.terminal:
            return status
        final = handle._set_terminal(JobStatus.killed(reason))
        if final.phase != "killed" or final.kill_reason != reason:
            return final  # lost the race to another terminal transition
        handle._stop.set()
        proc = handle._proc
        try:
            pgid = os.getpgid(proc.pid)
        except ProcessLookupError:
            pgid = None
        try:
            if pgid is not None:
                os.killpg(pgid, signal.SIGTERM)
            else:
                proc.terminate()
        except (ProcessLookupError, PermissionError):
            pass
        try:
            proc.wait(timeout=KILL_GRACE_S)
        except subprocess.TimeoutExpired:
            try:
                if pgid is not None:
                    os.killpg(pgid, signal.SIGKILL)
                else:
                    proc.kill()
            except (ProcessLookupError, PermissionError):
                pass
            proc.wait()
        return final


def replay_job(trace_path, job_id: str, speed: float = 0.0, policy: SandboxPolicy | None = None) -> JobHandle:
    """Convenience: launch a replay of one trace file under a default policy."""
    backend = ReplayBackend(trace_path, speed=speed)
    return backend.launch(JobDescriptor(job_id=job_id, command=("replay",), policy=policy or SandboxPolicy()))


def serialize_stream(records) -> list[str]:
    """Canonical lines for a record sequence (used for replay fidelity checks)."""
    return [serialize_line(r) for r in records]
