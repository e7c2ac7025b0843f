import itertools
import sys
import textwrap

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from graphshap.oracles import (
    ConstantOracle,
    DomainError,
    LinearSoftmaxOracle,
    LookupOracle,
    OracleError,
    OracleTimeout,
    OrGateOracle,
    ProbabilityError,
    ProtocolError,
    SubprocessOracle,
)
from graphshap.validation import planted_blocks

REFERENCE = [sys.executable, "-m", "graphshap.reference_child"]


def child(tmp_path, body):
    """Write a small oracle process whose request loop runs ``body`` per line."""
    src = textwrap.dedent(
        """
        import json, sys, time
        state = {"n": 0}
        print(json.dumps({"n_features": 2, "n_classes": 2}), flush=True)
        for line in sys.stdin:
            rows = json.loads(line)["instances"]
            state["n"] += 1
        """
    ) + textwrap.indent(textwrap.dedent(body), "    ")
    p = tmp_path / "child.py"
    p.write_text(src)
    return [sys.executable, str(p)]


def test_or_gate_examples():
    o = OrGateOracle(2)
    assert o.predict([1, 1]).tolist() == [0.0, 1.0]
    assert o.predict([0, 0]).tolist() == [1.0, 0.0]


def test_linear_zero_weights_is_uniform():
    o = LinearSoftmaxOracle(np.zeros((4, 3)))
    assert np.allclose(o.predict([1.0, -2.0, 3.0]), 0.25, rtol=0, atol=1e-15)


def test_linear_matches_softmax_formula(rng):
    w = rng.normal(size=(3, 5))
    b = rng.normal(size=3)
    x = rng.normal(size=5)
    z = w @ x + b
    expect = np.exp(z - z.max()) / np.exp(z - z.max()).sum()
    assert np.allclose(LinearSoftmaxOracle(w, b).predict(x), expect, rtol=0, atol=1e-14)


def test_lookup_reproduces_or_gate():
    domain = list(itertools.product([0.0, 1.0], repeat=2))
    orc = OrGateOracle(2)
    table = {x: orc.predict(x) for x in domain}
    lk = LookupOracle(table)
    assert np.array_equal(lk.predict_batch(domain), orc.predict_batch(domain))


def test_lookup_single_entry_and_outside_domain():
    lk = LookupOracle({(0.0,): [0.3, 0.7]})
    assert lk.predict([0]).tolist() == [0.3, 0.7]
    with pytest.raises(DomainError, match="instance 0"):
        lk.predict([1])


def test_planted_lookup_ignores_second_block(rng):
    oracle, cfg, (b1, b2) = planted_blocks(3, 2, rng)
    x = cfg.target.copy()
    base = oracle.predict(x)
    for bits in itertools.product([0.0, 1.0], repeat=len(b2)):
        y = x.copy()
        y[b2] = bits
        assert np.array_equal(oracle.predict(y), base)


def test_invalid_probabilities_rejected():
    with pytest.raises(ProbabilityError):
        ConstantOracle(2, [0.5, 0.6]).predict([0, 0])
    with pytest.raises(ProbabilityError):
        ConstantOracle(2, [1.5, -0.5]).predict([0, 0])


def test_wrong_width_rejected():
    with pytest.raises(ValueError):
        OrGateOracle(2).predict_batch([[0, 0, 0]])


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 40), st.integers(1, 39), st.integers(0, 2**32 - 1))
def test_batch_decomposition_invariance(n, cut, seed):
    rng = np.random.default_rng(seed)
    o = LinearSoftmaxOracle(rng.normal(size=(3, 6)), rng.normal(size=3))
    x = rng.normal(size=(n, 6))
    cut = min(cut, n)
    whole = o.predict_batch(x)
    parts = np.concatenate([o.predict_batch(x[:cut]), o.predict_batch(x[cut:])]) if cut < n else whole
    assert whole.tobytes() == parts.tobytes()


# -- subprocess protocol ------------------------------------------------------


def test_reference_child_matches_builtin():
    xs = [[0, 0], [0, 1], [1, 0], [1, 1]]
    with SubprocessOracle(REFERENCE, n_features=2, n_classes=2) as o:
        assert np.array_equal(o.predict_batch(xs), OrGateOracle(2).predict_batch(xs))


def test_reference_child_large_batch_in_order(rng):
    xs = rng.integers(0, 2, size=(1000, 2)).astype(float)
    with SubprocessOracle(REFERENCE) as o:
        assert np.array_equal(o.predict_batch(xs), OrGateOracle(2).predict_batch(xs))


def test_batch_is_one_request_line(tmp_path, rng):
    log = tmp_path / "requests.log"
    cmd = child(
        tmp_path,
        f"""
        with open({str(log)!r}, "a") as fh:
            fh.write(str(len(rows)) + "\\n")
        print(json.dumps({{"probs": [[0.5, 0.5]] * len(rows)}}), flush=True)
        """,
    )
    with SubprocessOracle(cmd) as o:
        o.predict_batch(rng.integers(0, 2, size=(1000, 2)))
    assert log.read_text().split() == ["1000"]


def test_bad_shape_reply():
    with SubprocessOracle(REFERENCE + ["--model", "bad-shape"]) as o:
        with pytest.raises(ProtocolError) as info:
            o.predict([1, 0])
    assert "0.25" in info.value.payload


def test_handshake_mismatch():
    with pytest.raises(ProtocolError, match="handshake"):
        SubprocessOracle(REFERENCE, n_features=3)


def test_timeout(tmp_path):
    cmd = child(tmp_path, "time.sleep(5)\n")
    o = SubprocessOracle(cmd, timeout_ms=200)
    try:
        with pytest.raises(OracleTimeout):
            o.predict([0, 1])
    finally:
        o._proc.kill()
        o.close()


def test_crash_restarts_once(tmp_path):
    marker = tmp_path / "crashed"
    cmd = child(
        tmp_path,
        f"""
        import os
        if not os.path.exists({str(marker)!r}):
            open({str(marker)!r}, "w").close()
            sys.exit(1)
        print(json.dumps({{"probs": [[0.0, 1.0]] * len(rows)}}), flush=True)
        """,
    )
    with SubprocessOracle(cmd) as o:
        assert o.predict([1, 1]).tolist() == [0.0, 1.0]


def test_second_crash_is_fatal(tmp_path):
    cmd = child(tmp_path, "sys.exit(1)\n")
    with SubprocessOracle(cmd) as o:
        with pytest.raises(OracleError, match="exited"):
            o.predict([1, 1])
