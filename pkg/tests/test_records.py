"""Wire format, merging and trace validation contracts."""

from __future__ import annotations

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from warden.datagen import builtin_profiles, gen_trace
from warden.records import (
    ENTER,
    EXIT,
    InvalidRecord,
    LabeledTrace,
    LogRecord,
    MalformedLine,
    ResourceSample,
    SyscallEvent,
    UnsortedInput,
    merge_streams,
    parse_line,
    serialize_line,
    validate_trace,
)


def sys_event(**kw):
    base = dict(t_ns=100, job_id="j1", pid=7, tid=7, name="read", direction=ENTER, args_digest="")
    base.update(kw)
    return SyscallEvent(**base)


def res_sample(**kw):
    base = dict(
        t_ns=100, job_id="j1", cpu_pct=1.0, rss_bytes=0,
        net_rx_bytes=0, net_tx_bytes=0, io_read_bytes=0, io_write_bytes=0,
    )
    base.update(kw)
    return ResourceSample(**base)


# --- parse_line ------------------------------------------------------------------

def test_parse_enter_event_literal():
    line = '{"kind":"sys","t_ns":100,"job_id":"j1","pid":7,"tid":7,"name":"read","dir":"enter","args":""}'
    rec = parse_line(line)
    assert rec == SyscallEvent(t_ns=100, job_id="j1", pid=7, tid=7, name="read", direction=ENTER, args_digest="")
    assert rec.retval is None


def test_parse_rejects_retval_on_enter():
    line = '{"kind":"sys","t_ns":100,"job_id":"j1","pid":7,"tid":7,"name":"read","dir":"enter","args":"","ret":0}'
    with pytest.raises(MalformedLine) as exc:
        parse_line(line)
    assert exc.value.offset == line.encode().index(b'"ret"')


def test_parse_requires_retval_on_exit():
    line = '{"kind":"sys","t_ns":100,"job_id":"j1","pid":7,"tid":7,"name":"read","dir":"exit","args":""}'
    with pytest.raises(MalformedLine, match="ret"):
        parse_line(line)


def test_parse_unknown_kind():
    with pytest.raises(MalformedLine, match="unknown kind"):
        parse_line('{"kind":"bogus","t_ns":1}')


def test_parse_unknown_field_offset():
    line = '{"kind":"log","t_ns":1,"job_id":"j","source":"s","severity":"info","message":"m","extra":1}'
    with pytest.raises(MalformedLine) as exc:
        parse_line(line)
    assert exc.value.offset == line.encode().index(b'"extra"')


def test_parse_invalid_syntax_reports_offset():
    with pytest.raises(MalformedLine):
        parse_line('{"kind":"sys",')
    with pytest.raises(MalformedLine):
        parse_line("[]")
    with pytest.raises(MalformedLine):
        parse_line("   ")


def test_parse_bad_field_value_offset():
    line = '{"kind":"sys","t_ns":100,"job_id":"j1","pid":0,"tid":7,"name":"read","dir":"enter","args":""}'
    with pytest.raises(MalformedLine) as exc:
        parse_line(line)
    assert exc.value.offset == line.encode().index(b'"pid"')


def test_parse_rejects_non_integer_t_ns():
    with pytest.raises(MalformedLine):
        parse_line('{"kind":"log","t_ns":1.5,"job_id":"j","source":"s","severity":"info","message":"m"}')


# --- serialize_line -------------------------------------------------------------

def test_serialize_canonical_and_deterministic():
    rec = SyscallEvent(t_ns=0, job_id="j", pid=1, tid=1, name="exit", direction=EXIT, args_digest="", retval=0)
    line1 = serialize_line(rec)
    line2 = serialize_line(rec)
    assert line1 == line2
    assert line1 == '{"kind":"sys","t_ns":0,"job_id":"j","pid":1,"tid":1,"name":"exit","dir":"exit","args":"","ret":0}'


def test_serialize_real_formatting():
    assert '"cpu_pct":12.5' in serialize_line(res_sample(cpu_pct=12.5))
    assert '"cpu_pct":0' in serialize_line(res_sample(cpu_pct=0.0))
    assert '"cpu_pct":100' in serialize_line(res_sample(cpu_pct=100.0))
    assert '"cpu_pct":0.333333' in serialize_line(res_sample(cpu_pct=1 / 3))


def test_serialize_rejects_non_record():
    with pytest.raises(InvalidRecord):
        serialize_line({"kind": "sys"})


def test_round_trip_log_with_unicode_and_quotes():
    rec = LogRecord(t_ns=5, job_id="j1", source="stdout", severity="warn", message='café said "hi"\tok')
    assert parse_line(serialize_line(rec)) == rec


def test_invariants_enforced_at_construction():
    with pytest.raises(InvalidRecord):
        sys_event(name="Read")  # uppercase
    with pytest.raises(InvalidRecord):
        sys_event(direction=EXIT)  # missing retval
    with pytest.raises(InvalidRecord):
        sys_event(direction=ENTER, retval=1)
    with pytest.raises(InvalidRecord):
        res_sample(cpu_pct=-1.0)
    with pytest.raises(InvalidRecord):
        res_sample(net_rx_bytes=-5)
    with pytest.raises(InvalidRecord):
        LogRecord(t_ns=1, job_id="j", source="s", severity="info", message="a\nb")
    with pytest.raises(InvalidRecord):
        LogRecord(t_ns=1, job_id="j", source="s", severity="fatal", message="x")


# the round-trip contract over generator output: parse(serialize(x)) == x
# field-exact and serialize(parse(line)) == line byte-exact
def test_round_trip_over_generator_records():
    profiles = builtin_profiles()
    total = 0
    for i, profile in enumerate(profiles):
        trace = gen_trace(profile, 30.0, f"job-{i}", seed=1000 + i)
        for rec in trace.records:
            line = serialize_line(rec)
            back = parse_line(line)
            assert back == rec
            assert serialize_line(back) == line
            total += 1
    assert total >= 10000


# --- hypothesis round-trip over arbitrary valid records ---------------------------

name_st = st.text(alphabet="abcdefghijklmnopqrstuvwxyz0123456789_", min_size=1, max_size=32)
job_st = st.text(min_size=1, max_size=64).filter(lambda s: s.strip() != "")
msg_st = st.text(max_size=200).filter(lambda s: "\n" not in s)


@st.composite
def any_record(draw):
    kind = draw(st.sampled_from(["sys", "res", "log"]))
    t_ns = draw(st.integers(min_value=0, max_value=2**62))
    job = draw(job_st)
    if kind == "sys":
        direction = draw(st.sampled_from([ENTER, EXIT]))
        return SyscallEvent(
            t_ns=t_ns,
            job_id=job,
            pid=draw(st.integers(1, 2**31)),
            tid=draw(st.integers(1, 2**31)),
            name=draw(name_st),
            direction=direction,
            args_digest=draw(st.text(max_size=64)),
            retval=draw(st.integers(-(2**31), 2**31)) if direction == EXIT else None,
        )
    if kind == "res":
        return ResourceSample(
            t_ns=t_ns,
            job_id=job,
            cpu_pct=draw(st.floats(min_value=0, max_value=1e6, allow_nan=False)),
            rss_bytes=draw(st.integers(0, 2**40)),
            net_rx_bytes=draw(st.integers(0, 2**40)),
            net_tx_bytes=draw(st.integers(0, 2**40)),
            io_read_bytes=draw(st.integers(0, 2**40)),
            io_write_bytes=draw(st.integers(0, 2**40)),
        )
    return LogRecord(
        t_ns=t_ns,
        job_id=job,
        source=draw(st.text(max_size=64)),
        severity=draw(st.sampled_from(["debug", "info", "warn", "error"])),
        message=draw(msg_st),
    )


@given(any_record())
@settings(max_examples=300, deadline=None)
def test_round_trip_property(rec):
    line = serialize_line(rec)
    assert "\n" not in line
    assert parse_line(line) == rec
    assert serialize_line(parse_line(line)) == line


# --- merge_streams ---------------------------------------------------------------

def test_merge_empty():
    assert merge_streams([[], []]) == []


def test_merge_two_streams():
    a = [sys_event(t_ns=1), sys_event(t_ns=3)]
    b = [sys_event(t_ns=2)]
    merged = merge_streams([a, b])
    assert [r.t_ns for r in merged] == [1, 2, 3]


def test_merge_unsorted_input_names_position():
    bad = [sys_event(t_ns=5), sys_event(t_ns=3)]
    with pytest.raises(UnsortedInput) as exc:
        merge_streams([[], bad])
    assert exc.value.stream_index == 1
    assert exc.value.position == 1


def test_merge_matches_stable_sort_oracle():
    rng = random.Random(4)
    streams = []
    for si in range(3):
        times = sorted(rng.randrange(0, 500) for _ in range(rng.randrange(1500, 1800)))
        streams.append([sys_event(t_ns=t, pid=si + 1) for t in times])
    merged = merge_streams(streams)
    # oracle: full stable sort over (t_ns, stream index, position)
    tagged = [(rec.t_ns, si, pos, rec) for si, stream in enumerate(streams) for pos, rec in enumerate(stream)]
    oracle = [rec for _, _, _, rec in sorted(tagged, key=lambda x: (x[0], x[1], x[2]))]
    assert len(merged) == sum(len(s) for s in streams)
    assert merged == oracle


def test_merge_stability_on_ties():
    a = [sys_event(t_ns=1, pid=1), sys_event(t_ns=1, pid=2)]
    b = [sys_event(t_ns=1, pid=3)]
    merged = merge_streams([a, b])
    assert [r.pid for r in merged] == [1, 2, 3]


# --- validate_trace ---------------------------------------------------------------

def make_trace(records, job_id="j1"):
    return LabeledTrace(job_id=job_id, label="normal", profile_name="", records=tuple(records))


def test_validate_empty_trace():
    assert validate_trace(make_trace([])) == []


def test_validate_counter_regression():
    a = res_sample(t_ns=1, net_rx_bytes=10)
    b = res_sample(t_ns=2, net_rx_bytes=5)
    violations = validate_trace(make_trace([a, b]))
    assert [v.kind for v in violations] == ["CounterRegression"]
    assert violations[0].index == 1


def test_validate_job_id_mismatch():
    violations = validate_trace(make_trace([sys_event(job_id="other")]))
    assert [v.kind for v in violations] == ["JobIdMismatch"]


def test_validate_shuffled_trace_reports_order_violation():
    profile = builtin_profiles()[0]
    trace = gen_trace(profile, 10.0, "job-s", seed=3)
    records = list(trace.records)[:100]
    rng = random.Random(8)
    for attempt in range(20):
        shuffled = records[:]
        rng.shuffle(shuffled)
        if [r.t_ns for r in shuffled] != sorted(r.t_ns for r in shuffled):
            violations = validate_trace(make_trace(shuffled, job_id="job-s"))
            assert any(v.kind == "OrderViolation" for v in violations)
            return
    pytest.fail("shuffle never produced an unsorted order")


def brute_force_valid(trace) -> bool:
    """O(n^2) oracle: every pairwise ordering / job / counter constraint."""
    recs = trace.records
    for i in range(len(recs)):
        if recs[i].job_id != trace.job_id:
            return False
        for j in range(i + 1, len(recs)):
            if recs[i].t_ns > recs[j].t_ns:
                return False
    samples = [r for r in recs if isinstance(r, ResourceSample)]
    for i in range(len(samples)):
        for j in range(i + 1, len(samples)):
            for counter in ("net_rx_bytes", "net_tx_bytes", "io_read_bytes", "io_write_bytes"):
                if getattr(samples[i], counter) > getattr(samples[j], counter):
                    return False
    return True


def test_validate_agrees_with_brute_force_on_random_traces():
    rng = random.Random(17)
    for _ in range(200):
        records = []
        counters = [0, 0, 0, 0]
        t = 0
        for _ in range(rng.randrange(0, 15)):
            t += rng.randrange(-2, 10)  # occasionally goes backwards
            t = max(t, 0)
            if rng.random() < 0.5:
                records.append(sys_event(t_ns=t, job_id="j1" if rng.random() < 0.9 else "zz"))
            else:
                for k in range(4):
                    counters[k] += rng.randrange(-3, 10)  # occasionally regresses
                    counters[k] = max(counters[k], 0)
                records.append(
                    res_sample(
                        t_ns=t,
                        net_rx_bytes=counters[0],
                        net_tx_bytes=counters[1],
                        io_read_bytes=counters[2],
                        io_write_bytes=counters[3],
                    )
                )
        trace = make_trace(records)
        assert (validate_trace(trace) == []) == brute_force_valid(trace)
