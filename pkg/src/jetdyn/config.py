"""Sectioned key-value run configuration.

The format is a flat INI-like file:

    # identification sweep, bench rig 2
    rng_seed = 7

    [simulation]
    dt = 0.01
    noise_variance = 7.0

    [segment]
    kind = chirp
    duration = 60
    offset = 55
    amplitude = 20
    f_start = 0.05
    f_end = 0.5

Keys before the first header land in the implicit "global" section.  A
section header may repeat; repeats keep their file order, which is how a
custom excitation lists its [segment] pieces one after another.  There is
no nesting, no quoting, no line continuation.  Parse errors, type errors
and unknown keys all report the offending line number.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .errors import MalformedFile, UnknownKey

__all__ = [
    "ConfigSection",
    "RunConfig",
    "parse_config",
    "load_config",
]

_HEADER_RE = re.compile(r"^\[([A-Za-z0-9_-]+)\]$")
_KEY_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


@dataclass
class ConfigSection:
    """One [section] block: raw string values plus their line numbers."""

    name: str
    line: int
    entries: dict[str, tuple[str, int]] = field(default_factory=dict)

    def _fetch(self, key: str, default):
        if key not in self.entries:
            if default is _REQUIRED:
                raise MalformedFile(
                    f"[{self.name}] (line {self.line}) is missing required "
                    f"key {key!r}", line=self.line)
            return None
        return self.entries[key]

    def get_str(self, key: str, default=None) -> str | None:
        got = self._fetch(key, default)
        return default if got is None else got[0]

    def get_float(self, key: str, default=None) -> float | None:
        got = self._fetch(key, default)
        if got is None:
            return default
        raw, ln = got
        try:
            return float(raw)
        except ValueError:
            raise MalformedFile(
                f"line {ln}: {key} = {raw!r} is not a number", line=ln) from None

    def get_int(self, key: str, default=None) -> int | None:
        got = self._fetch(key, default)
        if got is None:
            return default
        raw, ln = got
        try:
            return int(raw)
        except ValueError:
            raise MalformedFile(
                f"line {ln}: {key} = {raw!r} is not an integer", line=ln) from None

    def get_bool(self, key: str, default=None) -> bool | None:
        got = self._fetch(key, default)
        if got is None:
            return default
        raw, ln = got
        low = raw.lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise MalformedFile(
            f"line {ln}: {key} = {raw!r} is not a boolean", line=ln)

    def get_floats(self, key: str, default=None) -> tuple[float, ...] | None:
        """Comma-separated list of numbers."""
        got = self._fetch(key, default)
        if got is None:
            return default
        raw, ln = got
        try:
            return tuple(float(p) for p in raw.split(","))
        except ValueError:
            raise MalformedFile(
                f"line {ln}: {key} = {raw!r} is not a comma-separated "
                "number list", line=ln) from None

    def reject_unknown(self, known: set[str]) -> None:
        """Raise UnknownKey for the first entry outside the known set."""
        for key, (_, ln) in self.entries.items():
            if key not in known:
                raise UnknownKey(
                    f"line {ln}: unknown key {key!r} in [{self.name}]",
                    line=ln)


_REQUIRED = object()


@dataclass
class RunConfig:
    """Parsed config: sections in file order, duplicates preserved."""

    sections: list[ConfigSection] = field(default_factory=list)

    def first(self, name: str) -> ConfigSection:
        """The first [name] section, or an empty stand-in when absent."""
        for sec in self.sections:
            if sec.name == name:
                return sec
        return ConfigSection(name=name, line=0)

    def all(self, name: str) -> list[ConfigSection]:
        return [sec for sec in self.sections if sec.name == name]


def parse_config(text: str) -> RunConfig:
    """Parse sectioned key-value text; see the module docstring for the
    grammar.  Raises MalformedFile with the line number on any violation."""
    cfg = RunConfig()
    current = ConfigSection(name="global", line=0)
    cfg.sections.append(current)
    for ln, rawline in enumerate(text.splitlines(), start=1):
        line = rawline.split("#", 1)[0].strip()
        if not line:
            continue
        m = _HEADER_RE.match(line)
        if m:
            current = ConfigSection(name=m.group(1), line=ln)
            cfg.sections.append(current)
            continue
        if line.startswith("["):
            raise MalformedFile(
                f"line {ln}: malformed section header {line!r}", line=ln)
        if "=" not in line:
            raise MalformedFile(
                f"line {ln}: expected key = value, got {line!r}", line=ln)
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if not _KEY_RE.match(key):
            raise MalformedFile(f"line {ln}: bad key {key!r}", line=ln)
        if key in current.entries:
            raise MalformedFile(
                f"line {ln}: duplicate key {key!r} in [{current.name}] "
                f"(first at line {current.entries[key][1]})", line=ln)
        current.entries[key] = (value, ln)
    if not cfg.sections[0].entries:
        cfg.sections.pop(0)
    return cfg


def load_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            return parse_config(fh.read())
    except OSError as exc:
        raise MalformedFile(f"cannot read config {path}: {exc}") from exc
