"""Adapters for external matchers and quality scorers.

Both adapters speak a newline protocol over stdin/stdout so commercial or
otherwise unlinkable tools can slot into evaluation:

* matcher adapter: receives two image paths (one per line), answers one
  line holding a float similarity score in [-1, 1]
* quality scorer: receives one image path per request, answers one float
  line (used for external fingerprint-quality tools; no scorer ships here)
"""

from __future__ import annotations

import subprocess


class AdapterError(RuntimeError):
    """The external process violated the adapter protocol."""


class _LineProcess:
    def __init__(self, command):
        self.command = list(command)
        self._proc = None

    def _ensure(self):
        if self._proc is None or self._proc.poll() is not None:
            self._proc = subprocess.Popen(
                self.command,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                bufsize=1,
            )
        return self._proc

    def ask(self, lines) -> str:
        proc = self._ensure()
        try:
            for line in lines:
                proc.stdin.write(line + "\n")
            proc.stdin.flush()
            reply = proc.stdout.readline()
        except (BrokenPipeError, OSError) as exc:
            raise AdapterError(f"adapter process {self.command} died: {exc}") from exc
        if not reply:
            raise AdapterError(f"adapter process {self.command} closed its output")
        return reply.strip()

    def close(self):
        if self._proc is not None and self._proc.poll() is None:
            self._proc.stdin.close()
            self._proc.wait(timeout=10)
        self._proc = None


class SubprocessMatcher:
    """External matcher reached through the two-paths-in, one-score-out protocol."""

    def __init__(self, command, name: str = "external"):
        self.name = name
        self._proc = _LineProcess(command)

    def score_paths(self, path_a, path_b) -> float:
        reply = self._proc.ask([str(path_a), str(path_b)])
        try:
            score = float(reply)
        except ValueError as exc:
            raise AdapterError(f"adapter replied with non-numeric score {reply!r}") from exc
        if not -1.0 <= score <= 1.0:
            raise AdapterError(f"adapter score {score} outside [-1, 1]")
        return score

    def close(self):
        self._proc.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class ExternalQualityScorer:
    """Stub adapter for external quality tools (one path in, one float out)."""

    def __init__(self, command, name: str = "quality"):
        self.name = name
        self._proc = _LineProcess(command)

    def score_path(self, path) -> float:
        reply = self._proc.ask([str(path)])
        try:
            return float(reply)
        except ValueError as exc:
            raise AdapterError(f"quality tool replied with non-numeric value {reply!r}") from exc

    def close(self):
        self._proc.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
