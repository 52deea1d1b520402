"""On-disk formats: dataset directories, model files, truth directories.

A dataset directory holds a JSON manifest plus plain-text payloads:
sparse triplet files ("row,col,value" per nonzero, 0-indexed) for
observations and masks, and a topics file with one comma-separated simplex
row per observation.  Model files are JSON with dense matrices.  All float
text uses repr, the shortest representation that round-trips exactly, and
JSON is written with sorted keys, so identical inputs produce identical
bytes.  Loading is total: malformed input raises DataFormatError naming
the file and line, never a stray exception.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .baselines import BaselineModel
from .exceptions import DataFormatError
from .model import Dataset, FactorPair, Observation

FORMAT_VERSION = 1


def _write_text(path: Path, text: str) -> None:
    path.write_text(text, encoding="utf-8")


def write_json(obj, path) -> None:
    _write_text(Path(path), json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _read_json(path: Path) -> dict:
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise DataFormatError(f"{path}: file not found") from None
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from None


def write_csv(rows, path) -> None:
    import csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        csv.writer(fh).writerows(rows)


# ---------------------------------------------------------------------------
# triplet and topics payloads
# ---------------------------------------------------------------------------

def _triplet_text(X: np.ndarray) -> str:
    lines = []
    rows, cols = np.nonzero(X)
    for r, c in zip(rows, cols):
        lines.append(f"{r},{c},{float(X[r, c])!r}")
    return "\n".join(lines) + ("\n" if lines else "")


def _parse_triplets(path: Path, p: int) -> np.ndarray:
    X = np.zeros((p, p))
    seen = set()
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise DataFormatError(f"{path}: file not found") from None
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != 3:
            raise DataFormatError(
                f"{path}:{lineno}: expected 'row,col,value', got {line!r}"
            )
        try:
            r, c = int(parts[0]), int(parts[1])
            v = float(parts[2])
        except ValueError:
            raise DataFormatError(f"{path}:{lineno}: unparsable triplet {line!r}") from None
        if not (0 <= r < p and 0 <= c < p):
            raise DataFormatError(
                f"{path}:{lineno}: index ({r}, {c}) out of range for p={p}"
            )
        if (r, c) in seen:
            raise DataFormatError(f"{path}:{lineno}: duplicate entry ({r}, {c})")
        if not np.isfinite(v):
            raise DataFormatError(f"{path}:{lineno}: non-finite value")
        seen.add((r, c))
        X[r, c] = v
    return X


def _topics_text(M: np.ndarray) -> str:
    lines = [",".join(repr(float(v)) for v in row) for row in M]
    return "\n".join(lines) + "\n"


def _parse_topics(path: Path, n: int, K: int) -> np.ndarray:
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise DataFormatError(f"{path}: file not found") from None
    rows = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != K:
            raise DataFormatError(
                f"{path}:{lineno}: expected {K} values, got {len(parts)}"
            )
        try:
            rows.append([float(v) for v in parts])
        except ValueError:
            raise DataFormatError(f"{path}:{lineno}: unparsable value") from None
    if len(rows) != n:
        raise DataFormatError(f"{path}: expected {n} topic rows, found {len(rows)}")
    return np.asarray(rows)


# ---------------------------------------------------------------------------
# dataset directories
# ---------------------------------------------------------------------------

def save_dataset(ds: Dataset, path, seed_provenance=None) -> Path:
    """Write a dataset directory; returns its path."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    masked = any(obs.mask is not None for obs in ds.observations)
    obs_files = [f"obs_{i:05d}.txt" for i in range(ds.n)]
    mask_files = [f"mask_{i:05d}.txt" for i in range(ds.n)] if masked else None
    for i, obs in enumerate(ds.observations):
        _write_text(root / obs_files[i], _triplet_text(obs.X))
        if masked:
            mask = obs.mask if obs.mask is not None else np.ones((ds.p, ds.p))
            _write_text(root / mask_files[i], _triplet_text(mask))
    M = ds.topic_matrix()
    topics_file = None
    if M is not None:
        topics_file = "topics.txt"
        _write_text(root / topics_file, _topics_text(M))
    manifest = {
        "format_version": FORMAT_VERSION,
        "p": ds.p,
        "K": ds.K,
        "n": ds.n,
        "kind": ds.observations[0].kind,
        "topics_known": ds.topics_known,
        "masked": masked,
        "observation_files": obs_files,
        "mask_files": mask_files,
        "topics_file": topics_file,
        "seed_provenance": seed_provenance,
    }
    write_json(manifest, root / "manifest.json")
    return root


def load_dataset(path) -> Dataset:
    """Read and validate a dataset directory."""
    root = Path(path)
    manifest = _read_json(root / "manifest.json")
    for key in ("format_version", "p", "K", "n", "kind", "topics_known",
                "masked", "observation_files"):
        if key not in manifest:
            raise DataFormatError(f"{root / 'manifest.json'}: missing field {key!r}")
    if manifest["format_version"] != FORMAT_VERSION:
        raise DataFormatError(
            f"{root / 'manifest.json'}: unsupported format_version "
            f"{manifest['format_version']!r}"
        )
    p, K, n = manifest["p"], manifest["K"], manifest["n"]
    if not (isinstance(p, int) and isinstance(K, int) and isinstance(n, int)) or min(p, K, n) <= 0:
        raise DataFormatError(f"{root / 'manifest.json'}: p, K, n must be positive integers")
    kind = manifest["kind"]
    if kind not in ("real", "binary"):
        raise DataFormatError(f"{root / 'manifest.json'}: unknown kind {kind!r}")
    obs_files = manifest["observation_files"]
    if len(obs_files) != n:
        raise DataFormatError(
            f"{root / 'manifest.json'}: {len(obs_files)} observation files for n={n}"
        )
    mask_files = manifest.get("mask_files")
    if manifest["masked"]:
        if not mask_files or len(mask_files) != n:
            raise DataFormatError(
                f"{root / 'manifest.json'}: masked dataset needs {n} mask files"
            )
    topics_file = manifest.get("topics_file")
    if manifest["topics_known"] and not topics_file:
        raise DataFormatError(
            f"{root / 'manifest.json'}: topics_known dataset has no topics_file"
        )

    M = _parse_topics(root / topics_file, n, K) if topics_file else None
    observations = []
    for i in range(n):
        X = _parse_triplets(root / obs_files[i], p)
        if kind == "binary" and not np.all(np.isin(np.unique(X), (0.0, 1.0))):
            raise DataFormatError(
                f"{root / obs_files[i]}: binary observation has entries outside {{0, 1}}"
            )
        mask = None
        if manifest["masked"]:
            mask = _parse_triplets(root / mask_files[i], p)
            if not np.all(np.isin(np.unique(mask), (0.0, 1.0))):
                raise DataFormatError(f"{root / mask_files[i]}: mask must be binary")
        topics = None
        if M is not None:
            row = M[i]
            if np.any(row < 0) or abs(float(row.sum()) - 1.0) > 1e-9:
                raise DataFormatError(
                    f"{root / topics_file}:{i + 1}: row is not on the simplex"
                )
            topics = row
        observations.append(Observation(X, kind=kind, topics=topics, mask=mask))
    return Dataset(p, K, observations, topics_known=manifest["topics_known"])


# ---------------------------------------------------------------------------
# model files
# ---------------------------------------------------------------------------

def save_model(bp: FactorPair, path, meta: dict | None = None) -> Path:
    """Write a factor model as JSON with full round-trip precision."""
    path = Path(path)
    payload = {
        "format_version": FORMAT_VERSION,
        "type": "factors",
        "p": bp.p,
        "K": bp.K,
        "B1": bp.B1.tolist(),
        "B2": bp.B2.tolist(),
        "meta": meta or {},
    }
    write_json(payload, path)
    return path


def load_model(path):
    """Read a model file; returns (FactorPair, meta) or (BaselineModel, meta)."""
    path = Path(path)
    payload = _read_json(path)
    for key in ("format_version", "type", "p", "K"):
        if key not in payload:
            raise DataFormatError(f"{path}: missing field {key!r}")
    if payload["format_version"] != FORMAT_VERSION:
        raise DataFormatError(
            f"{path}: unsupported format_version {payload['format_version']!r}"
        )
    p, K = payload["p"], payload["K"]
    meta = payload.get("meta", {})
    if payload["type"] == "factors":
        B1 = np.asarray(payload.get("B1"), dtype=float)
        B2 = np.asarray(payload.get("B2"), dtype=float)
        if B1.shape != (p, K) or B2.shape != (p, K):
            raise DataFormatError(
                f"{path}: factor shapes {B1.shape}/{B2.shape} do not match "
                f"header p={p}, K={K}"
            )
        return FactorPair(B1, B2), meta
    if payload["type"] == "baseline":
        variant = payload.get("variant")
        if variant == "one_matrix":
            xbar = np.asarray(payload.get("xbar"), dtype=float)
            if xbar.shape != (p, p):
                raise DataFormatError(f"{path}: xbar shape {xbar.shape}, header p={p}")
            return BaselineModel(variant=variant, p=p, K=K, xbar=xbar), meta
        if variant == "k_matrices":
            thetas = np.asarray(payload.get("thetas"), dtype=float)
            if thetas.shape != (K, p, p):
                raise DataFormatError(
                    f"{path}: thetas shape {thetas.shape}, header K={K}, p={p}"
                )
            return BaselineModel(variant=variant, p=p, K=K, thetas=thetas), meta
        raise DataFormatError(f"{path}: unknown baseline variant {variant!r}")
    raise DataFormatError(f"{path}: unknown model type {payload['type']!r}")


def save_baseline(model: BaselineModel, path, meta: dict | None = None) -> Path:
    path = Path(path)
    payload = {
        "format_version": FORMAT_VERSION,
        "type": "baseline",
        "variant": model.variant,
        "p": model.p,
        "K": model.K,
        "meta": meta or {},
    }
    if model.variant == "one_matrix":
        payload["xbar"] = model.xbar.tolist()
    else:
        payload["thetas"] = model.thetas.tolist()
    write_json(payload, path)
    return path


def save_topics(M, path) -> Path:
    """Write topic rows in the dataset topics format."""
    path = Path(path)
    _write_text(path, _topics_text(np.asarray(M, dtype=float)))
    return path


# ---------------------------------------------------------------------------
# truth directories
# ---------------------------------------------------------------------------

def save_truth(bp_star: FactorPair, M_star, path, spec_dict: dict | None = None) -> Path:
    """Write a ground-truth directory: factors, topic rows, generator spec."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    save_model(bp_star, root / "model.json", meta={"source": "synthetic-truth"})
    _write_text(root / "topics.txt", _topics_text(np.asarray(M_star, dtype=float)))
    if spec_dict is not None:
        write_json(spec_dict, root / "spec.json")
    return root


def load_truth(path):
    """Read a ground-truth directory; returns (FactorPair, M_star)."""
    root = Path(path)
    loaded, _ = load_model(root / "model.json")
    if not isinstance(loaded, FactorPair):
        raise DataFormatError(f"{root / 'model.json'}: truth must be a factor model")
    topics_path = root / "topics.txt"
    try:
        text = topics_path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise DataFormatError(f"{topics_path}: file not found") from None
    n = sum(1 for line in text.splitlines() if line.strip())
    M = _parse_topics(topics_path, n, loaded.K)
    return loaded, M
