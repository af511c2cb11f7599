"""Output equivalence: run-vs-run, run-vs-baseline, and baseline generation.

A comparator is any ``callable(left_path, right_path) -> bool``.  The default
is :func:`bitwise_compare`.  Two output sets are equivalent when they hold
exactly the same relative paths and the comparator accepts every pair.
"""

from __future__ import annotations

import os
import shutil
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

from .errors import BaselineMissing, DestExists

Comparator = Callable[[Path, Path], bool]

_CHUNK = 1 << 16


def bitwise_compare(a: Path | str, b: Path | str) -> bool:
    """True iff the two files hold identical bytes. Metadata is ignored."""
    a, b = Path(a), Path(b)
    if a.stat().st_size != b.stat().st_size:
        return False
    with open(a, "rb") as fa, open(b, "rb") as fb:
        while True:
            ca = fa.read(_CHUNK)
            cb = fb.read(_CHUNK)
            if ca != cb:
                return False
            if not ca:
                return True


def first_difference(a: Path | str, b: Path | str) -> int | None:
    """Offset of the first differing byte, or None when identical.

    A file that is a strict prefix of the other differs at its length.
    """
    offset = 0
    with open(a, "rb") as fa, open(b, "rb") as fb:
        while True:
            ca = fa.read(_CHUNK)
            cb = fb.read(_CHUNK)
            if ca == cb:
                if not ca:
                    return None
                offset += len(ca)
                continue
            for i, (x, y) in enumerate(zip(ca, cb)):
                if x != y:
                    return offset + i
            return offset + min(len(ca), len(cb))


@dataclass(frozen=True)
class OutputSet:
    """Files produced by one run, keyed by relative path."""

    name: str
    files: Mapping[str, Path]

    @classmethod
    def from_entries(cls, name: str, entries: Iterable[tuple[Path | str, str]]) -> "OutputSet":
        return cls(name, {rel: Path(root) / rel for root, rel in entries})

    @classmethod
    def from_directory(cls, name: str, root: Path | str) -> "OutputSet":
        root = Path(root)
        files = {}
        for dirpath, _dirs, names in os.walk(root):
            for fname in names:
                path = Path(dirpath) / fname
                files[path.relative_to(root).as_posix()] = path
        return cls(name, files)


@dataclass
class ComparisonReport:
    scope: str
    left: str
    right: str
    file_verdicts: list[tuple[str, bool]] = field(default_factory=list)
    missing_left: list[str] = field(default_factory=list)
    missing_right: list[str] = field(default_factory=list)
    reason: str | None = None

    @property
    def equivalent(self) -> bool:
        return (
            self.reason is None
            and not self.missing_left
            and not self.missing_right
            and all(ok for _, ok in self.file_verdicts)
        )

    @property
    def differing(self) -> list[str]:
        return [rel for rel, ok in self.file_verdicts if not ok]

    def describe(self) -> str:
        if self.equivalent:
            return f"{self.left} vs {self.right}: equivalent"
        parts = []
        if self.reason:
            parts.append(self.reason)
        if self.differing:
            parts.append("differ: " + ", ".join(self.differing))
        if self.missing_left:
            parts.append(f"missing from {self.left}: " + ", ".join(self.missing_left))
        if self.missing_right:
            parts.append(f"missing from {self.right}: " + ", ".join(self.missing_right))
        return f"{self.left} vs {self.right}: NOT equivalent ({'; '.join(parts)})"


def compare_sets(
    left: OutputSet,
    right: OutputSet,
    comparator: Comparator = bitwise_compare,
    scope: str = "group",
) -> ComparisonReport:
    report = ComparisonReport(scope, left.name, right.name)
    report.missing_left = sorted(set(right.files) - set(left.files))
    report.missing_right = sorted(set(left.files) - set(right.files))
    for rel in sorted(set(left.files) & set(right.files)):
        report.file_verdicts.append((rel, bool(comparator(left.files[rel], right.files[rel]))))
    return report


def compare_runs(
    members: Sequence[OutputSet],
    comparator: Comparator = bitwise_compare,
) -> list[ComparisonReport]:
    """Compare every member against the first-listed one (the master)."""
    if len(members) < 2:
        return []
    master = members[0]
    return [compare_sets(master, other, comparator, "group") for other in members[1:]]


def all_pairs_equivalent(members: Sequence[OutputSet], comparator: Comparator = bitwise_compare) -> bool:
    return all(
        compare_sets(members[i], members[j], comparator).equivalent
        for i in range(len(members))
        for j in range(i + 1, len(members))
    )


def compare_to_baseline(
    run: OutputSet,
    baseline_name: str,
    baseline_root: Path | str,
    comparator: Comparator = bitwise_compare,
) -> ComparisonReport:
    """Compare a run's outputs against ``baseline_root/baseline_name``.

    A missing baseline directory yields an inequivalent report carrying
    the reason rather than an exception.
    """
    directory = Path(baseline_root) / baseline_name
    if not directory.is_dir():
        report = ComparisonReport("baseline", run.name, baseline_name)
        report.reason = str(BaselineMissing(baseline_name, directory))
        return report
    golden = OutputSet.from_directory(baseline_name, directory)
    return compare_sets(run, golden, comparator, "baseline")


@dataclass(frozen=True)
class Baseline:
    name: str
    root: Path
    files: frozenset[str]


def write_baseline(name: str, outputs: OutputSet, dest: Path | str, force: bool = False) -> Baseline:
    """Copy one run's outputs to ``dest/name``, refusing to clobber unless forced."""
    dest = Path(dest)
    target = dest / name
    if target.exists() and not force:
        raise DestExists(name, target)
    dest.mkdir(parents=True, exist_ok=True)
    staging = Path(tempfile.mkdtemp(prefix=f".{name}.", dir=dest))
    try:
        for rel, src in outputs.files.items():
            out = staging / rel
            out.parent.mkdir(parents=True, exist_ok=True)
            shutil.copyfile(src, out)
        if target.exists():
            shutil.rmtree(target)
        os.replace(staging, target)
    except BaseException:
        shutil.rmtree(staging, ignore_errors=True)
        raise
    return Baseline(name, dest, frozenset(outputs.files))


def generate_baseline(
    contributions: Iterable[tuple[str, OutputSet]],
    dest: Path | str,
    force: bool = False,
) -> list[Baseline]:
    """Write one baseline per distinct name; the first contributor of each name wins."""
    written: dict[str, Baseline] = {}
    for name, outputs in contributions:
        if name not in written:
            written[name] = write_baseline(name, outputs, dest, force)
    return list(written.values())
