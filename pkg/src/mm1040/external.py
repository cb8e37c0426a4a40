"""Adapter for tax engines that live in another process.

Line protocol, one request per line, replies in order:

* harness -> program (stdin): the record as a single-line JSON object, money
  fields in integer cents, ``sts`` as ``"Single" | "MFJ" | "MFS" | "HOH"``;
* program -> harness (stdout): the federal tax return as a decimal number of
  dollars, e.g. ``-520.00``.

A reply that is not a number, an exited program, or a reply slower than the
per-call timeout raises :class:`SutProtocolError`. The program is restarted
on the next call after an exit or a timeout.
"""
from __future__ import annotations

import json
import os
import selectors
import shlex
import subprocess
import time
from decimal import Decimal, InvalidOperation
from pathlib import Path

from .engine import TaxReturnInput
from .errors import InvalidInputError, SutProtocolError
from .money import cents

CALL_TIMEOUT = 5.0


def check_executable(path) -> Path:
    p = Path(path)
    if not p.is_file() or not os.access(p, os.X_OK):
        raise InvalidInputError(f"{path} is not an executable file")
    return p


class ExternalEngine:
    def __init__(self, command, timeout: float = CALL_TIMEOUT):
        if isinstance(command, (str, os.PathLike)):
            command = [str(check_executable(command))]
        self.command = list(command)
        self.timeout = timeout
        self.name = "external:" + " ".join(shlex.quote(c) for c in self.command)
        self._proc = None
        self._buf = b""

    def __repr__(self):
        return f"<ExternalEngine {self.command!r}>"

    def _ensure(self):
        if self._proc is None or self._proc.poll() is not None:
            self._stop()
            self._proc = subprocess.Popen(self.command, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                                          stderr=subprocess.DEVNULL, bufsize=0)
            self._buf = b""
        return self._proc

    def _stop(self):
        proc, self._proc = self._proc, None
        if proc is None:
            return
        for stream in (proc.stdin, proc.stdout):
            try:
                stream.close()
            except OSError:
                pass
        if proc.poll() is None:
            proc.kill()
        proc.wait()

    close = _stop

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def __del__(self):
        try:
            self._stop()
        except Exception:
            pass

    def _readline(self, proc) -> bytes:
        deadline = time.monotonic() + self.timeout
        fd = proc.stdout.fileno()
        with selectors.DefaultSelector() as sel:
            sel.register(fd, selectors.EVENT_READ)
            while b"\n" not in self._buf:
                left = deadline - time.monotonic()
                if left <= 0 or not sel.select(left):
                    self._stop()
                    raise SutProtocolError(f"no reply within {self.timeout:g}s")
                chunk = os.read(fd, 65536)
                if not chunk:
                    self._stop()
                    raise SutProtocolError("program exited before replying")
                self._buf += chunk
        line, _, self._buf = self._buf.partition(b"\n")
        return line

    def __call__(self, record: TaxReturnInput) -> int:
        proc = self._ensure()
        request = json.dumps(record.to_wire(), separators=(",", ":")) + "\n"
        try:
            proc.stdin.write(request.encode("ascii"))
        except (BrokenPipeError, OSError):
            self._stop()
            raise SutProtocolError("program exited before reading the request") from None
        reply = self._readline(proc).decode("utf-8", "replace").strip()
        return parse_reply(reply)


def parse_reply(text: str) -> int:
    try:
        value = Decimal(text)
    except InvalidOperation:
        raise SutProtocolError(f"non-numeric reply {text[:40]!r}") from None
    if not value.is_finite():
        raise SutProtocolError(f"non-finite reply {text[:40]!r}")
    return cents(value)
