"""Self-describing UTF-8 document formats and delimited tables.

Every document is a JSON object with ``format``, ``tool_version``,
``seed`` and ``config_digest`` fields so any output can be traced back to
the exact configuration that produced it.  Floats round-trip exactly
(shortest repr, up to 17 significant digits).
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from . import __version__, model

__all__ = [
    "config_digest",
    "read_document",
    "read_event_list",
    "read_spectrum",
    "read_template",
    "spectrum_payload",
    "template_payload",
    "write_csv",
    "write_document",
]


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    return obj


def config_digest(config: dict) -> str:
    """SHA-256 of the canonical JSON encoding of a configuration."""
    canonical = json.dumps(_jsonable(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def write_document(path, kind: str, payload: dict, seed=None, digest: str | None = None):
    """Write one self-describing JSON document."""
    doc = {
        "format": f"bumpbayes/{kind}",
        "tool_version": __version__,
        "seed": seed,
        "config_digest": digest,
    }
    doc.update(payload)
    path = Path(path)
    path.write_text(json.dumps(_jsonable(doc), sort_keys=True, indent=1) + "\n", encoding="utf-8")
    return path


def read_document(path, kind: str | None = None) -> dict:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if kind is not None and doc.get("format") != f"bumpbayes/{kind}":
        raise ValueError(f"{path}: expected format bumpbayes/{kind}, got {doc.get('format')!r}")
    return doc


def spectrum_payload(spectrum: model.BinnedSpectrum) -> dict:
    return {"edges": spectrum.edges, "counts": spectrum.counts}


def read_spectrum(path) -> model.BinnedSpectrum:
    doc = read_document(path, "spectrum")
    return model.BinnedSpectrum(
        edges=np.asarray(doc["edges"], dtype=float),
        counts=np.asarray(doc["counts"]),
    )


def template_payload(template: model.SignalTemplate) -> dict:
    return {
        "anchor_masses": template.anchor_masses,
        "anchor_scales": template.anchor_scales,
        "anchor_widths": template.anchor_widths,
    }


def read_template(path) -> model.SignalTemplate:
    doc = read_document(path, "template")
    return model.SignalTemplate(
        anchor_masses=np.asarray(doc["anchor_masses"], dtype=float),
        anchor_scales=np.asarray(doc["anchor_scales"], dtype=float),
        anchor_widths=np.asarray(doc["anchor_widths"], dtype=float),
    )


def read_event_list(path) -> np.ndarray:
    """Read one invariant mass per line; blank lines and '#' comments skipped."""
    masses = []
    for line_no, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        text = line.strip()
        if not text or text.startswith("#"):
            continue
        try:
            masses.append(float(text))
        except ValueError as exc:
            raise ValueError(f"{path}:{line_no}: not a number: {text!r}") from exc
    return np.asarray(masses, dtype=float)


def write_csv(path, header: list[str], columns: list[np.ndarray]):
    """Delimited table with repr-exact floats, one header line."""
    rows = zip(*[np.asarray(c) for c in columns])
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(repr(float(v)) for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return Path(path)
