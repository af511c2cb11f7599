"""A directory-backed stand-in for a batch queueing system.

Each job ``<id>`` is a handful of files under the queue root:

* ``<id>.state`` holds one word: queued, running, done, failed or cancelled.
* ``<id>.spec`` holds the submitted command, working directory and queue delay.
* ``<id>.lock`` serializes state transitions (``flock``).

Submission spawns a detached runner process that waits out the queue delay,
runs the command in a private staging directory, and publishes the outputs
into the job's working directory only if the job was not cancelled meanwhile.
No daemon is involved.
"""

from __future__ import annotations

import contextlib
import fcntl
import json
import os
import shutil
import signal
import subprocess
import sys
import time
from pathlib import Path

QUEUED, RUNNING, DONE, FAILED, CANCELLED = "queued", "running", "done", "failed", "cancelled"
TERMINAL = frozenset((DONE, FAILED, CANCELLED))


class UnknownJob(KeyError):
    pass


class SimBatch:
    def __init__(self, root: Path | str) -> None:
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def _file(self, job: str, suffix: str) -> Path:
        if not job or "/" in job:
            raise UnknownJob(job)
        return self.root / f"{job}.{suffix}"

    @contextlib.contextmanager
    def _locked(self, job: str):
        with open(self._file(job, "lock"), "a") as fh:
            fcntl.flock(fh, fcntl.LOCK_EX)
            try:
                yield
            finally:
                fcntl.flock(fh, fcntl.LOCK_UN)

    def _set_state(self, job: str, state: str) -> None:
        path = self._file(job, "state")
        tmp = path.with_suffix(".state.tmp")
        tmp.write_text(state + "\n", encoding="utf-8")
        os.replace(tmp, path)

    def state(self, job: str) -> str:
        try:
            return self._file(job, "state").read_text(encoding="utf-8").strip()
        except FileNotFoundError:
            raise UnknownJob(job) from None

    def jobs(self) -> dict[str, str]:
        return {p.name[: -len(".state")]: self.state(p.name[: -len(".state")]) for p in sorted(self.root.glob("*.state"))}

    def spec(self, job: str) -> dict:
        return json.loads(self._file(job, "spec").read_text(encoding="utf-8"))

    def submit(self, command: list[str], cwd: Path | str, delay: float = 0.0) -> str:
        """Queue ``command`` to run in ``cwd`` after ``delay`` seconds; return the job id."""
        n = 0
        while True:
            job = f"job{os.getpid()}-{n:04d}"
            try:
                fd = os.open(self._file(job, "spec"), os.O_WRONLY | os.O_CREAT | os.O_EXCL)
                break
            except FileExistsError:
                n += 1
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            json.dump({"command": [str(c) for c in command], "cwd": str(cwd), "delay": float(delay)}, fh)
        self._set_state(job, QUEUED)
        subprocess.Popen(
            [sys.executable, "-m", "ddts.sampleapp.simbatch", str(self.root), job],
            stdin=subprocess.DEVNULL,
            stdout=subprocess.DEVNULL,
            stderr=subprocess.DEVNULL,
            start_new_session=True,
            close_fds=True,
        )
        return job

    def cancel(self, job: str) -> bool:
        """Cancel a queued or running job. Returns False if it had already ended."""
        with self._locked(job):
            state = self.state(job)
            if state in TERMINAL:
                return False
            self._set_state(job, CANCELLED)
            pid_file = self._file(job, "pid")
            if state == RUNNING and pid_file.exists():
                with contextlib.suppress(ProcessLookupError, ValueError, PermissionError):
                    os.killpg(int(pid_file.read_text()), signal.SIGKILL)
        return True

    def wait(self, job: str, timeout: float | None = None, poll: float = 0.05) -> str:
        deadline = None if timeout is None else time.monotonic() + timeout
        while True:
            state = self.state(job)
            if state in TERMINAL:
                return state
            if deadline is not None and time.monotonic() > deadline:
                return state
            time.sleep(poll)

    def execute(self, job: str) -> str:
        """Runner body: take a queued job through to a terminal state."""
        spec = self.spec(job)
        release = time.monotonic() + spec["delay"]
        while time.monotonic() < release:
            if self.state(job) != QUEUED:
                return self.state(job)
            time.sleep(min(0.05, max(0.0, release - time.monotonic())))
        staging = self._file(job, "work")
        with self._locked(job):
            if self.state(job) != QUEUED:
                return self.state(job)
            staging.mkdir()
            proc = subprocess.Popen(
                spec["command"],
                cwd=staging,
                stdout=subprocess.DEVNULL,
                stderr=open(self._file(job, "err"), "w"),
                start_new_session=True,
            )
            self._file(job, "pid").write_text(str(proc.pid), encoding="utf-8")
            self._set_state(job, RUNNING)
        code = proc.wait()
        with self._locked(job):
            state = self.state(job)
            if state == RUNNING:
                cwd = Path(spec["cwd"])
                for item in staging.iterdir():
                    os.replace(item, cwd / item.name)
                state = DONE if code == 0 else FAILED
                self._set_state(job, state)
        shutil.rmtree(staging, ignore_errors=True)
        return state


if __name__ == "__main__":
    SimBatch(sys.argv[1]).execute(sys.argv[2])
