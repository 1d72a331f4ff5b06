"""Plain-text report formats.

Reports are sectioned text: ``# key=value`` provenance lines first, then
sections opened by ``[name]``.  A section holds either ``key=value`` lines
or a CSV block whose first line is a header.  Floats are written with
``repr`` so reruns are byte-identical.
"""

from __future__ import annotations

import csv
import io
import os
import tempfile

import numpy as np

from .errors import ConfigError
from .factor_model import Family, ModelSpec, ParamVector


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if x == float("inf"):
            return "inf"
        if x == float("-inf"):
            return "-inf"
        if x != x:
            return "nan"
        return repr(x)
    return str(x)


def parse_float(text: str) -> float:
    return float(text.strip())


def read_kv(text: str, source: str = "input") -> dict:
    """Parse ``name=value`` lines, skipping blanks and ``#`` comments."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source}: line {lineno}: expected name=value, got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if key in out:
            raise ConfigError(f"{source}: line {lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


class Report:
    """Builder for a sectioned report."""

    def __init__(self, title: str, provenance: dict):
        self.title = title
        self.provenance = dict(provenance)
        self.sections = []

    def kv(self, name: str, values: dict):
        self.sections.append((name, "kv", dict(values)))
        return self

    def table(self, name: str, header, rows):
        self.sections.append((name, "csv", (list(header), [list(r) for r in rows])))
        return self

    def render(self) -> str:
        buf = io.StringIO()
        buf.write(f"# {self.title}\n")
        for key, value in self.provenance.items():
            buf.write(f"# {key}={fmt(value)}\n")
        for name, kind, content in self.sections:
            buf.write(f"[{name}]\n")
            if kind == "kv":
                for key, value in content.items():
                    buf.write(f"{key}={fmt(value)}\n")
            else:
                header, rows = content
                w = csv.writer(buf, lineterminator="\n")
                w.writerow(header)
                for row in rows:
                    w.writerow([fmt(v) for v in row])
        return buf.getvalue()


def parse_report(text: str, source: str = "report"):
    """Return ``(provenance, sections)``; CSV sections become lists of dicts."""
    provenance = {}
    sections = {}
    current = None
    lines = []

    def close():
        if current is None:
            return
        body = [ln for ln in lines if ln.strip()]
        if body and "=" in body[0] and "," not in body[0].split("=", 1)[0]:
            sections[current] = read_kv("\n".join(body), f"{source} [{current}]")
        else:
            sections[current] = list(csv.DictReader(body))

    for raw in text.splitlines():
        if current is None and raw.startswith("#"):
            body = raw[1:].strip()
            if "=" in body:
                key, value = body.split("=", 1)
                provenance[key.strip()] = value.strip()
            continue
        if raw.startswith("[") and raw.rstrip().endswith("]"):
            close()
            current = raw.strip()[1:-1]
            lines = []
            continue
        if current is None:
            if raw.strip():
                raise ConfigError(f"{source}: content before the first section: {raw!r}")
            continue
        lines.append(raw)
    close()
    return provenance, sections


def write_atomic(path, text: str):
    """Write ``text`` to ``path`` through a temporary file and rename."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------------------
# parameter files

def params_to_text(spec: ModelSpec, theta: ParamVector) -> str:
    lines = [f"family={spec.family.value}", f"k={spec.k}", f"labels={','.join(spec.labels)}"]
    lines += [f"{key}={fmt(v)}" for key, v in theta.to_dict(spec).items()]
    return "\n".join(lines) + "\n"


def _labels_from_keys(values: dict, k: int):
    labels = [key[len("mu."):] for key in values if key.startswith("mu.")]
    if len(labels) != k:
        raise ConfigError(f"expected {k} mu.<label> entries, found {len(labels)}")
    return tuple(labels)


def params_from_mapping(values: dict, source: str = "parameters"):
    """``(spec, theta)`` from a parsed parameter mapping."""
    try:
        family = Family(values["family"])
        k = int(values["k"])
    except KeyError as exc:
        raise ConfigError(f"{source}: missing key {exc.args[0]!r}") from None
    except ValueError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    labels = values.get("labels")
    labels = tuple(x.strip() for x in labels.split(",")) if labels else _labels_from_keys(values, k)
    spec = ModelSpec(family, k, labels)
    allowed = {"family", "k", "labels"}
    for name in ("mu", "sigma", family.specific_param):
        if name:
            allowed |= {f"{name}.{label}" for label in labels}
    unknown = sorted(set(values) - allowed)
    if unknown:
        raise ConfigError(f"{source}: unexpected key(s) {', '.join(unknown)}")
    try:
        theta = ParamVector.from_dict(spec, {key: parse_float(v) for key, v in values.items()
                                             if key not in ("family", "k", "labels")})
    except ValueError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    return spec, theta


def params_from_text(text: str, source: str = "parameters"):
    return params_from_mapping(read_kv(text, source), source)
