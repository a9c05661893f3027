"""Online per-job intrusion detection: score windows, smooth alarms, react.

Each job gets one pipeline instance that consumes its telemetry stream,
closes feature windows on watermark (the first record at or past a window's
end), scores them with the deployed model and pushes the decision through a
k-of-n smoother: a window alarms when at least k of the last n threshold
decisions were positive, which suppresses isolated false positives. Runs of
consecutive alarms walk an escalation ladder (alert, then terminate); every
alarm becomes an Alert delivered to the coordinator at least once, with disk
spooling while the coordinator is unreachable.
"""

from __future__ import annotations

import enum
import json
import os
from dataclasses import dataclass, field

from .features import FeatureConfig, FeatureVector, Window, window_vector
from .ml.io import ModelBundle
from .records import ResourceSample, SyscallEvent, format_real
from .sandbox import JobHandle, KillReason, LimitTracker, SandboxPolicy


class ModelMissing(ValueError):
    """The pipeline needs a loaded window-scoring model."""


class FingerprintMismatch(ValueError):
    """Vector schema/dimension does not match what the model was trained on."""


class ResponseAction(enum.IntEnum):
    """Automated reactions, ordered by severity."""

    NONE = 0
    RAISE_ALERT = 1
    TERMINATE = 2

    @property
    def wire(self) -> str:
        return self.name.lower()

    @classmethod
    def from_wire(cls, name: str) -> "ResponseAction":
        try:
            return cls[name.upper()]
        except KeyError:
            raise ValueError(f"unknown action {name!r}") from None


DEFAULT_ACTION_POLICY = ((1, ResponseAction.RAISE_ALERT), (2, ResponseAction.TERMINATE))


@dataclass(frozen=True)
class DetectorConfig:
    tau: float = 0.5
    k: int = 3
    n: int = 5
    action_policy: tuple[tuple[int, ResponseAction], ...] = DEFAULT_ACTION_POLICY
    model_id: str = ""

    def __post_init__(self):
        if not 0.0 < self.tau < 1.0:
            raise ValueError("tau must be in (0, 1)")
        if self.k < 1 or self.n < self.k:
            raise ValueError("need 1 <= k <= n")
        thresholds = [t for t, _ in self.action_policy]
        if any(b <= a for a, b in zip(thresholds, thresholds[1:])):
            raise ValueError("action thresholds must be strictly increasing")
        policy = tuple((int(t), ResponseAction(a)) for t, a in self.action_policy)
        object.__setattr__(self, "action_policy", policy)

    @property
    def rule(self) -> str:
        return f"k-of-n:{self.k}/{self.n}"


@dataclass(frozen=True)
class DetectorState:
    """Ring of the last <= n window decisions plus the consecutive-alarm run."""

    decisions: tuple[bool, ...] = ()
    consecutive_alarms: int = 0
    windows_seen: int = 0


def update(state: DetectorState, config: DetectorConfig, window_score: float) -> tuple[DetectorState, bool]:
    """Pure smoothing transition: push one decision, report whether it alarms."""
    decisions = (state.decisions + (window_score >= config.tau,))[-config.n :]
    alarm = sum(decisions) >= config.k
    return (
        DetectorState(
            decisions=decisions,
            consecutive_alarms=state.consecutive_alarms + 1 if alarm else 0,
            windows_seen=state.windows_seen + 1,
        ),
        alarm,
    )


def decide_action(config: DetectorConfig, consecutive_alarms: int) -> ResponseAction:
    """Highest-severity rule whose threshold the alarm run has reached."""
    best = ResponseAction.NONE
    if consecutive_alarms <= 0:
        return best
    for threshold, action in config.action_policy:
        if threshold <= consecutive_alarms and action > best:
            best = action
    return best


@dataclass(frozen=True)
class Alert:
    """One alarmed window (or forwarded policy violation) and the action taken."""

    alert_id: str
    node_id: str
    job_id: str
    t_ns: int
    window_index: int
    score: float
    model_id: str
    rule: str
    action_taken: ResponseAction

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must be in [0, 1], got {self.score}")
        object.__setattr__(self, "score", round(float(self.score), 6))


_ALERT_KEYS = ("alert_id", "node_id", "job_id", "t_ns", "window_index", "score", "model_id", "rule", "action")


def alert_to_dict(alert: Alert) -> dict:
    return {
        "alert_id": alert.alert_id,
        "node_id": alert.node_id,
        "job_id": alert.job_id,
        "t_ns": alert.t_ns,
        "window_index": alert.window_index,
        "score": alert.score,
        "model_id": alert.model_id,
        "rule": alert.rule,
        "action": alert.action_taken.wire,
    }


def alert_from_dict(data: dict) -> Alert:
    return Alert(
        alert_id=data["alert_id"],
        node_id=data["node_id"],
        job_id=data["job_id"],
        t_ns=data["t_ns"],
        window_index=data["window_index"],
        score=data["score"],
        model_id=data["model_id"],
        rule=data["rule"],
        action_taken=ResponseAction.from_wire(data["action"]),
    )


def serialize_alert_line(alert: Alert) -> str:
    """Canonical `.alog` line (fixed key order, canonical score formatting)."""
    d = alert_to_dict(alert)
    parts = []
    for key in _ALERT_KEYS:
        value = d[key]
        if key == "score":
            parts.append(f'"{key}":{format_real(value)}')
        elif isinstance(value, int):
            parts.append(f'"{key}":{value}')
        else:
            parts.append(f'"{key}":{json.dumps(value, ensure_ascii=False)}')
    return "{" + ",".join(parts) + "}"


def parse_alert_line(line: str) -> Alert:
    return alert_from_dict(json.loads(line))


# --- streaming windowing --------------------------------------------------------

class StreamingWindower:
    """Incremental equivalent of features.make_windows.

    A window closes when a record arrives with t >= the window's end (any
    record kind acts as the watermark) or when the stream finishes; only
    windows holding at least one syscall event are emitted.
    """

    def __init__(self, config: FeatureConfig, job_id: str):
        self.config = config
        self.job_id = job_id
        self._t0: int | None = None
        self._last_t: int | None = None
        self._next_k = 0
        self._events: list[SyscallEvent] = []
        self._samples: list[ResourceSample] = []

    def _window_bounds(self, k: int) -> tuple[int, int]:
        start = self._t0 + k * self.config.hop_ns
        return start, start + self.config.window_ns

    def _close(self, k: int) -> Window | None:
        start, end = self._window_bounds(k)
        events = tuple(e for e in self._events if start <= e.t_ns < end)
        if not events:
            return None
        in_window = [s for s in self._samples if start <= s.t_ns < end]
        before = [s for s in self._samples if s.t_ns < start]
        samples = ([before[-1]] if before else []) + in_window
        return Window(
            job_id=self.job_id,
            index=k,
            t_start_ns=start,
            t_end_ns=end,
            events=events,
            samples=tuple(samples),
        )

    def _prune(self) -> None:
        next_start, _ = self._window_bounds(self._next_k)
        self._events = [e for e in self._events if e.t_ns >= next_start]
        before = [s for s in self._samples if s.t_ns < next_start]
        keep = [s for s in self._samples if s.t_ns >= next_start]
        self._samples = ([before[-1]] if before else []) + keep

    def push(self, record) -> list[Window]:
        if self._t0 is None:
            self._t0 = record.t_ns
        self._last_t = record.t_ns
        closed: list[Window] = []
        while record.t_ns >= self._window_bounds(self._next_k)[1]:
            window = self._close(self._next_k)
            self._next_k += 1
            self._prune()
            if window is not None:
                closed.append(window)
        if isinstance(record, SyscallEvent):
            self._events.append(record)
        elif isinstance(record, ResourceSample):
            self._samples.append(record)
        return closed

    def finish(self) -> list[Window]:
        """Close every window whose start does not exceed the last record time."""
        if self._t0 is None:
            return []
        closed = []
        while self._window_bounds(self._next_k)[0] <= self._last_t:
            window = self._close(self._next_k)
            self._next_k += 1
            if window is not None:
                closed.append(window)
        return closed


# --- scoring and the per-job pipeline --------------------------------------------

def score_window(bundle: ModelBundle, vector: FeatureVector) -> float:
    """Scale and score one window vector; pure."""
    if bundle.scaler is None:
        raise ModelMissing(f"{bundle.kind} bundles cannot score windows (no scaler)")
    if vector.schema_version != bundle.feature_config.schema_version:
        raise FingerprintMismatch(
            f"vector schema {vector.schema_version} != model schema {bundle.feature_config.schema_version}"
        )
    if vector.values.shape[0] != bundle.feature_config.dim:
        raise FingerprintMismatch(
            f"vector dimension {vector.values.shape[0]} != model dimension {bundle.feature_config.dim}"
        )
    scaled = bundle.scaler.transform(vector.values)
    return float(bundle.model.proba(scaled[None, :])[0])


class AlertSpool:
    """Append-only `.alog` spool for alerts that could not be delivered."""

    def __init__(self, path):
        self.path = str(path)

    def append(self, alert: Alert) -> None:
        os.makedirs(os.path.dirname(os.path.abspath(self.path)), exist_ok=True)
        with open(self.path, "a", encoding="utf-8", newline="\n") as fh:
            fh.write(serialize_alert_line(alert) + "\n")

    def drain(self) -> list[Alert]:
        if not os.path.exists(self.path):
            return []
        alerts = []
        with open(self.path, "r", encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    alerts.append(parse_alert_line(line))
        return alerts

    def clear(self) -> None:
        if os.path.exists(self.path):
            os.remove(self.path)


def flush_spool(spool: AlertSpool, client, node_id: str) -> int:
    """Redeliver spooled alerts; server-side id dedup makes retries harmless.

    Returns the number delivered; the spool is cleared only when every alert
    went through.
    """
    alerts = spool.drain()
    if not alerts:
        return 0
    for alert in alerts:
        client.post_alert(node_id, alert)
    spool.clear()
    return len(alerts)


@dataclass
class PipelineResult:
    alerts: list[Alert] = field(default_factory=list)
    windows_scored: int = 0
    terminated: bool = False
    delivery_failures: int = 0


def run_pipeline(
    handle: JobHandle,
    bundle: ModelBundle,
    detector_config: DetectorConfig,
    feature_config: FeatureConfig | None = None,
    client=None,
    node_id: str = "local",
    spool: AlertSpool | None = None,
    policy: SandboxPolicy | None = None,
) -> PipelineResult:
    """Consume one job's telemetry stream to completion.

    Per emitted window: extract, scale, score, smooth, act. A Terminate
    decision stops the job via the sandbox exactly once. When ``policy`` is
    given, CPU/memory/network violations are forwarded as RaiseAlert-severity
    alerts (ids ``<job>/pv<i>``) without terminating. Delivery failures fall
    back to the spool and never crash the pipeline.
    """
    if bundle is None:
        raise ModelMissing("run_pipeline requires a loaded model bundle")
    config = feature_config or bundle.feature_config
    windower = StreamingWindower(config, handle.job_id)
    state = DetectorState()
    result = PipelineResult()
    tracker = LimitTracker(policy, 0) if policy is not None else None
    tracker_started = False
    pv_count = 0

    def deliver(alert: Alert) -> None:
        result.alerts.append(alert)
        if client is not None:
            try:
                client.post_alert(node_id, alert)
                return
            except Exception:
                result.delivery_failures += 1
        if spool is not None:
            spool.append(alert)

    def handle_window(window: Window) -> None:
        nonlocal state
        vector = window_vector(window, config)
        score = score_window(bundle, vector)
        result.windows_scored += 1
        state, alarm = update(state, detector_config, score)
        if not alarm:
            return
        action = decide_action(detector_config, state.consecutive_alarms)
        alert = Alert(
            alert_id=f"{handle.job_id}/{window.index}",
            node_id=node_id,
            job_id=handle.job_id,
            t_ns=window.t_end_ns,
            window_index=window.index,
            score=score,
            model_id=detector_config.model_id or bundle.model_id,
            rule=detector_config.rule,
            action_taken=action,
        )
        deliver(alert)
        if action == ResponseAction.TERMINATE and not result.terminated:
            result.terminated = True
            handle.terminate(KillReason.DETECTOR_ACTION)

    for record in handle.telemetry:
        for window in windower.push(record):
            handle_window(window)
        if tracker is not None and isinstance(record, ResourceSample):
            if not tracker_started:
                tracker.t_start_ns = windower._t0 if windower._t0 is not None else record.t_ns
                tracker_started = True
            for violation in tracker.push(record):
                pv_count += 1
                deliver(
                    Alert(
                        alert_id=f"{handle.job_id}/pv{pv_count - 1}",
                        node_id=node_id,
                        job_id=handle.job_id,
                        t_ns=violation.t_ns,
                        window_index=-1,
                        score=1.0,
                        model_id=detector_config.model_id or bundle.model_id,
                        rule=f"policy:{violation.kind}",
                        action_taken=ResponseAction.RAISE_ALERT,
                    )
                )
    for window in windower.finish():
        handle_window(window)
    return result
