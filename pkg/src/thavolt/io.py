"""File formats: CSV data, JSON models and ensembles.

Floats are written with ``repr``, the shortest string that round-trips to
the same float64, so save/load is bit-exact.
"""
import csv
import json
import os

import numpy as np

from .ensemble import Ensemble, Head, SubsetPlan
from .features import DataSet, SystemConfig, regressor_index_map
from .tt import TTCoefficients

MODEL_FORMAT = "thavolt-tt"
ENSEMBLE_FORMAT = "thavolt-ensemble"
VERSION = 1


class FormatError(ValueError):
    """A file exists but its content is not what was expected."""


def write_text(path, text):
    d = os.path.dirname(os.fspath(path))
    if d:
        os.makedirs(d, exist_ok=True)
    with open(path, "w", encoding="ascii", newline="") as fh:
        fh.write(text)


def dump_json(obj):
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def write_json(path, obj):
    write_text(path, dump_json(obj))


def read_json(path):
    with open(path, encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: not valid JSON ({exc})") from exc


# --- data ----------------------------------------------------------------------


def dataset_to_csv(data):
    lines = [",".join([f"u{j + 1}" for j in range(data.p)] + [f"y{j + 1}" for j in range(data.l)])]
    for u, y in zip(data.inputs, data.outputs):
        lines.append(",".join(repr(float(v)) for v in np.concatenate([u, y])))
    return "\n".join(lines) + "\n"


def write_dataset(path, data):
    write_text(path, dataset_to_csv(data))


def read_dataset(path):
    """Read a ``u1..up,y1..yl`` CSV file."""
    with open(path, newline="", encoding="ascii") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise FormatError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    p = sum(h.startswith("u") for h in header)
    l = sum(h.startswith("y") for h in header)
    expected = [f"u{j + 1}" for j in range(p)] + [f"y{j + 1}" for j in range(l)]
    if header != expected or p == 0 or l == 0:
        raise FormatError(f"{path}: header must be u1..up,y1..yl, got {','.join(header)}")
    body = [r for r in rows[1:] if r]
    try:
        arr = np.array(body, dtype=np.float64).reshape(len(body), p + l)
    except ValueError as exc:
        raise FormatError(f"{path}: bad numeric data ({exc})") from exc
    return DataSet(arr[:, :p], arr[:, p:])


# --- models --------------------------------------------------------------------


def model_to_dict(B, cfg=None):
    return {
        "format": MODEL_FORMAT,
        "version": VERSION,
        "config": cfg.to_dict() if cfg is not None else None,
        "ranks": list(B.ranks),
        "gauge": B.gauge,
        "cores": [{"shape": list(c.shape), "data": c.ravel().tolist()} for c in B.cores],
    }


def model_from_dict(d):
    try:
        if d.get("format") != MODEL_FORMAT:
            raise FormatError(f"not a TT model document (format={d.get('format')!r})")
        cores = tuple(np.array(c["data"], dtype=np.float64).reshape(c["shape"])
                      for c in d["cores"])
        B = TTCoefficients(cores, gauge=d.get("gauge", "none"))
        cfg = SystemConfig(**d["config"]) if d.get("config") else None
    except (KeyError, TypeError, AttributeError) as exc:
        raise FormatError(f"malformed model document: {exc!r}") from exc
    except ValueError as exc:
        raise FormatError(f"malformed model document: {exc}") from exc
    if list(B.ranks) != list(d["ranks"]):
        raise FormatError(f"declared ranks {d['ranks']} do not match cores {list(B.ranks)}")
    return B, cfg


def save_model(path, B, cfg=None):
    write_json(path, model_to_dict(B, cfg))


def load_model(path):
    try:
        return model_from_dict(read_json(path))
    except FormatError as exc:
        raise FormatError(f"{path}: {exc}") from exc


def ensemble_to_dict(ens, cfg, weight_info=None):
    return {
        "format": ENSEMBLE_FORMAT,
        "version": VERSION,
        "config": cfg.to_dict(),
        "plan": ens.plan.to_dict(),
        "weights": [float(w) for w in ens.weights],
        "weight_fit": weight_info,
        "heads": [
            {"subset": list(h.subset), "model": model_to_dict(h.model)} for h in ens.heads
        ],
    }


def ensemble_from_dict(d):
    try:
        if d.get("format") != ENSEMBLE_FORMAT:
            raise FormatError(f"not an ensemble document (format={d.get('format')!r})")
        cfg = SystemConfig(**d["config"])
        heads = []
        for h in d["heads"]:
            B, _ = model_from_dict(h["model"])
            idx = regressor_index_map(h["subset"], cfg.p, cfg.M)
            if B.q != len(idx):
                raise FormatError(f"head over {h['subset']} has mode size {B.q}, expected {len(idx)}")
            heads.append(Head(tuple(h["subset"]), B, idx))
        plan = SubsetPlan.from_dict(d["plan"])
        return Ensemble(heads, np.array(d["weights"], dtype=np.float64), plan), cfg
    except FormatError:
        raise
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        raise FormatError(f"malformed ensemble document: {exc!r}") from exc


def save_ensemble(path, ens, cfg, weight_info=None):
    write_json(path, ensemble_to_dict(ens, cfg, weight_info))


def load_ensemble(path):
    try:
        return ensemble_from_dict(read_json(path))
    except FormatError as exc:
        raise FormatError(f"{path}: {exc}") from exc
