"""Black-box classifiers exposed as probability oracles.

Every oracle maps a batch of instances (rows) to a batch of class
probability vectors. Outputs are validated at the boundary regardless of
the oracle kind.
"""

from __future__ import annotations

import json
import logging
import queue
import subprocess
import threading
from typing import Mapping, Optional, Sequence

import numpy as np

logger = logging.getLogger(__name__)

PROB_TOL = 1e-6


class OracleError(RuntimeError):
    pass


class ProbabilityError(OracleError):
    pass


class DomainError(OracleError):
    pass


class ProtocolError(OracleError):
    def __init__(self, message: str, payload: str = ""):
        self.payload = payload
        super().__init__(f"{message}: {payload[:200]!r}" if payload else message)


class OracleTimeout(OracleError):
    pass


class PredictionOracle:
    kind = "abstract"
    concurrent_safe = True

    def __init__(self, n_features: int, n_classes: int):
        if n_classes < 2:
            raise ValueError("an oracle needs at least 2 classes")
        self.n_features = n_features
        self.n_classes = n_classes

    def _predict(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def predict_batch(self, batch) -> np.ndarray:
        x = np.atleast_2d(np.asarray(batch, dtype=float))
        if x.shape[1] != self.n_features:
            raise ValueError(f"instances have width {x.shape[1]}, oracle expects {self.n_features}")
        if len(x) == 0:
            return np.zeros((0, self.n_classes))
        p = np.asarray(self._predict(x), dtype=float)
        check_probabilities(p, len(x), self.n_classes)
        return p

    def predict(self, instance) -> np.ndarray:
        return self.predict_batch([instance])[0]

    def close(self) -> None:
        pass


def check_probabilities(p: np.ndarray, n_rows: int, n_classes: int) -> None:
    if p.shape != (n_rows, n_classes):
        raise ProbabilityError(f"expected output shape {(n_rows, n_classes)}, got {p.shape}")
    bad = ~np.all(np.isfinite(p), axis=1) | np.any(p < 0, axis=1)
    bad |= np.abs(p.sum(axis=1) - 1) > PROB_TOL
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise ProbabilityError(f"instance {i}: output {p[i].tolist()} is not a probability vector")


class OrGateOracle(PredictionOracle):
    """Two-class oracle with ``p(Y=1 | x) = OR(x)``; any nonzero entry counts as 1."""

    kind = "or"

    def __init__(self, n_features: int = 2):
        super().__init__(n_features, 2)

    def _predict(self, x):
        one = np.any(x != 0, axis=1).astype(float)
        return np.stack([1 - one, one], axis=1)


class ConstantOracle(PredictionOracle):
    kind = "constant"

    def __init__(self, n_features: int, probs: Sequence[float]):
        super().__init__(n_features, len(probs))
        self.probs = np.asarray(probs, dtype=float)

    def _predict(self, x):
        return np.tile(self.probs, (len(x), 1))


class LinearSoftmaxOracle(PredictionOracle):
    """``softmax(W x + b)`` with ``W`` of shape (classes, features)."""

    kind = "linear"

    def __init__(self, weights, bias=None):
        w = np.asarray(weights, dtype=float)
        super().__init__(w.shape[1], w.shape[0])
        self.weights = w
        self.bias = np.zeros(w.shape[0]) if bias is None else np.asarray(bias, dtype=float)

    def _predict(self, x):
        # row-wise reduction keeps each output independent of batch composition
        logits = (x[:, None, :] * self.weights[None, :, :]).sum(axis=-1) + self.bias
        logits -= logits.max(axis=1, keepdims=True)
        e = np.exp(logits)
        return e / e.sum(axis=1, keepdims=True)


class LookupOracle(PredictionOracle):
    """Exact table lookup over a finite domain of instances."""

    kind = "lookup"

    def __init__(self, table: Mapping[tuple, Sequence[float]]):
        if not table:
            raise ValueError("empty lookup table")
        items = [(tuple(float(v) for v in k), np.asarray(p, dtype=float)) for k, p in table.items()]
        widths = {len(k) for k, _ in items}
        classes = {len(p) for _, p in items}
        if len(widths) != 1 or len(classes) != 1:
            raise ValueError("lookup keys and values must have uniform width")
        super().__init__(widths.pop(), classes.pop())
        self.table = dict(items)

    def _predict(self, x):
        out = np.empty((len(x), self.n_classes))
        for i, row in enumerate(x.tolist()):
            try:
                out[i] = self.table[tuple(row)]
            except KeyError:
                raise DomainError(f"instance {i} {row} is outside the lookup domain") from None
        return out


def lookup_oracle(table: Mapping[tuple, Sequence[float]]) -> LookupOracle:
    return LookupOracle(table)


class SubprocessOracle(PredictionOracle):
    """Oracle backed by a child process speaking line-delimited JSON.

    The child first prints ``{"n_features": N, "n_classes": C}``; each
    request is one line ``{"instances": [[...], ...]}`` answered by one line
    ``{"probs": [[...], ...]}``. Requests are serialized through one pipe.
    """

    kind = "subprocess"
    concurrent_safe = False

    def __init__(
        self,
        command: Sequence[str],
        timeout_ms: int = 30000,
        n_features: Optional[int] = None,
        n_classes: Optional[int] = None,
    ):
        self.command = list(command)
        self.timeout = timeout_ms / 1000
        self._lock = threading.Lock()
        self._proc: Optional[subprocess.Popen] = None
        self._lines: queue.Queue = queue.Queue()
        self._restarted = False
        hello = self._start()
        try:
            nf, nc = int(hello["n_features"]), int(hello["n_classes"])
        except (KeyError, TypeError, ValueError):
            self.close()
            raise ProtocolError("bad handshake", json.dumps(hello)) from None
        if (n_features is not None and nf != n_features) or (n_classes is not None and nc != n_classes):
            self.close()
            raise ProtocolError(
                f"handshake declares {nf} features/{nc} classes, expected {n_features}/{n_classes}",
                json.dumps(hello),
            )
        super().__init__(nf, nc)

    def _start(self) -> dict:
        self._proc = subprocess.Popen(
            self.command,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
            encoding="utf-8",
            bufsize=1,
        )
        self._lines = queue.Queue()
        threading.Thread(target=self._pump, args=(self._proc, self._lines), daemon=True).start()
        line = self._readline()
        try:
            return json.loads(line)
        except json.JSONDecodeError:
            raise ProtocolError("malformed handshake", line) from None

    @staticmethod
    def _pump(proc, lines):
        for line in proc.stdout:
            lines.put(line)
        lines.put(None)

    def _readline(self) -> str:
        try:
            line = self._lines.get(timeout=self.timeout)
        except queue.Empty:
            raise OracleTimeout(f"no reply from {self.command[0]} within {self.timeout:g}s") from None
        if line is None:
            code = self._proc.poll() if self._proc else None
            raise OracleError(f"oracle process exited (code {code})")
        return line

    def _roundtrip(self, x: np.ndarray) -> str:
        request = json.dumps({"instances": x.tolist()})
        try:
            self._proc.stdin.write(request + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise OracleError(f"broken pipe to oracle process: {exc}") from None
        return self._readline()

    def _predict(self, x):
        with self._lock:
            try:
                line = self._roundtrip(x)
            except OracleTimeout:
                raise
            except OracleError:
                if self._restarted:
                    raise
                logger.warning("oracle process failed; restarting once")
                self._restarted = True
                self.close()
                self._start()
                line = self._roundtrip(x)
        try:
            probs = json.loads(line)["probs"]
            p = np.array(probs, dtype=float)
        except (json.JSONDecodeError, KeyError, TypeError, ValueError):
            raise ProtocolError("malformed reply", line) from None
        if p.ndim != 2 or p.shape != (len(x), self.n_classes):
            raise ProtocolError(f"reply shape {p.shape} does not match {(len(x), self.n_classes)}", line)
        return p

    def close(self) -> None:
        proc, self._proc = self._proc, None
        if proc is None:
            return
        try:
            proc.stdin.close()
        except OSError:
            pass
        try:
            proc.wait(timeout=2)
        except subprocess.TimeoutExpired:
            proc.kill()
            proc.wait()
        proc.stdout.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def __del__(self):
        try:
            self.close()
        except Exception:
            pass


def subprocess_oracle(command: Sequence[str], timeout_ms: int = 30000, **kw) -> SubprocessOracle:
    return SubprocessOracle(command, timeout_ms, **kw)
