"""Sample CSV files and the JSON model file."""

from __future__ import annotations

import csv
import hashlib
import io as _io
import json
from dataclasses import asdict, fields
from typing import List

import numpy as np

from .basis import SplineBasis, make_bspline
from .errors import DataError, InvalidArgumentError
from .model import Bases, FunctionalSample, ModelParams
from .penalty import Lambdas

MODEL_FORMAT = "supfpca-model"
MODEL_VERSION = 1
SAMPLE_HEADER = ["id", "t", "y", "z"]


def _num(text, what, line):
    try:
        v = float(text)
    except ValueError:
        raise DataError(f"{what} is not a number: {text!r}", line=line) from None
    if not np.isfinite(v):
        raise DataError(f"{what} is not finite: {text!r}", line=line)
    return v


def parse_samples(text: str) -> List[FunctionalSample]:
    """Parse ``id,t,y,z[,sd]`` rows; curves keep the order of first appearance."""
    reader = csv.reader(_io.StringIO(text))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise DataError("empty file", line=1) from None
    if header not in (SAMPLE_HEADER, SAMPLE_HEADER + ["sd"]):
        raise DataError(f"header must be id,t,y,z or id,t,y,z,sd; got {','.join(header)}", line=1)
    has_sd = len(header) == 5
    groups = {}
    for row in reader:
        line = reader.line_num
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise DataError(f"expected {len(header)} fields, got {len(row)}", line=line)
        sid = row[0].strip()
        if not sid:
            raise DataError("empty id", line=line)
        t = _num(row[1], "t", line)
        y = _num(row[2], "y", line)
        z = _num(row[3], "z", line)
        sd = None
        if has_sd:
            sd = _num(row[4], "sd", line)
            if sd <= 0:
                raise DataError(f"sd must be positive, got {row[4]!r}", line=line)
        g = groups.setdefault(sid, {"t": [], "y": [], "sd": [], "z": z, "line": line})
        if z != g["z"]:
            raise DataError(f"id {sid}: covariate {z} differs from {g['z']} given on line {g['line']}",
                            line=line)
        g["t"].append(t)
        g["y"].append(y)
        g["sd"].append(sd)
    if not groups:
        raise DataError("no data rows", line=2)
    out = []
    for sid, g in groups.items():
        out.append(FunctionalSample.sorted(_parse_id(sid), g["t"], g["y"], g["z"],
                                           g["sd"] if has_sd else None))
    return out


def _parse_id(sid: str):
    try:
        return int(sid)
    except ValueError:
        return sid


def read_samples(path) -> List[FunctionalSample]:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except UnicodeDecodeError as exc:
        raise DataError(f"{path}: not UTF-8 ({exc})") from None
    return parse_samples(text)


def format_samples(samples, with_sd=None) -> str:
    """CSV text; ``with_sd`` defaults to whether any sample carries ``noise_sd``."""
    samples = list(samples)
    if with_sd is None:
        with_sd = any(s.noise_sd is not None for s in samples)
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SAMPLE_HEADER + (["sd"] if with_sd else []))
    for s in samples:
        for i in range(s.n_obs):
            row = [s.id, repr(float(s.times[i])), repr(float(s.values[i])), repr(s.covariate)]
            if with_sd:
                if s.noise_sd is None:
                    raise InvalidArgumentError(f"sample {s.id} has no noise_sd")
                row.append(repr(float(s.noise_sd[i])))
            w.writerow(row)
    return buf.getvalue()


def write_samples(path, samples, with_sd=None):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(format_samples(samples, with_sd))


# ---------------------------------------------------------------------------
# Model file
# ---------------------------------------------------------------------------

def _basis_dict(b: SplineBasis):
    return {"degree": b.degree, "n_interior": b.n_interior, "domain": [float(v) for v in b.domain],
            "orthonormal": b.orthonormal,
            "transform": None if b.transform is None else [float(v) for v in b.transform.ravel()]}


def _basis_from(d) -> SplineBasis:
    b = make_bspline(d["degree"], d["n_interior"], d["domain"])
    if d["orthonormal"]:
        T = np.asarray(d["transform"], dtype=float).reshape(b.size, b.size)
        b = SplineBasis(b.degree, b.n_interior, b.domain, b.knots, T)
    return b


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def model_to_dict(model) -> dict:
    p = model.params
    body = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "bases": {k: _basis_dict(getattr(model.bases, k)) for k in ("a", "u", "b", "v")},
        "theta_mu": [float(v) for v in p.theta_mu],
        "gamma": {"m": model.bases.m, "q": model.bases.q, "r": p.r,
                  "values": [float(v) for v in p.gamma.ravel()]},
        "log_sigma2": float(p.log_sigma2),
        "lambdas": dict(zip(Lambdas._fields, map(float, model.lambdas))),
        "training": {"n_curves": model.n_train, "t_range": list(model.t_range),
                     "z_range": list(model.z_range), "heteroscedastic": model.heteroscedastic},
        "config": {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(model.config).items()},
        "diagnostics": {"objective_trace": list(model.diagnostics.objective_trace),
                        "block_trace": list(model.diagnostics.block_trace),
                        "n_outer": model.diagnostics.n_outer,
                        "converged": model.diagnostics.converged,
                        "line_search_failures": model.diagnostics.line_search_failures,
                        "grad_norms": dict(model.diagnostics.grad_norms)},
    }
    body["checksum"] = hashlib.sha256(_canonical(body).encode()).hexdigest()
    return body


def dumps_model(model) -> str:
    return json.dumps(model_to_dict(model), sort_keys=True, indent=1, allow_nan=False) + "\n"


def loads_model(text: str):
    from .fit import FitConfig, FitDiagnostics, FittedModel

    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DataError(f"model file is not valid JSON: {exc.msg}", line=exc.lineno) from None
    if not isinstance(d, dict) or d.get("format") != MODEL_FORMAT:
        raise DataError("not a model file")
    if d.get("version") != MODEL_VERSION:
        raise DataError(f"unsupported model version {d.get('version')!r}")
    checksum = d.pop("checksum", None)
    if checksum != hashlib.sha256(_canonical(d).encode()).hexdigest():
        raise DataError("model checksum mismatch")
    try:
        bases = Bases(*(_basis_from(d["bases"][k]) for k in ("a", "u", "b", "v")))
        g = d["gamma"]
        gamma = np.asarray(g["values"], dtype=float).reshape(g["m"] * g["q"], g["r"])
        params = ModelParams(np.asarray(d["theta_mu"], dtype=float), gamma, float(d["log_sigma2"]))
        names = {f.name for f in fields(FitConfig)}
        cfg = {k: (tuple(v) if isinstance(v, list) else v) for k, v in d["config"].items() if k in names}
        diag = FitDiagnostics(**d["diagnostics"])
        tr = d["training"]
        return FittedModel(params, bases, Lambdas(**d["lambdas"]), FitConfig(**cfg), diag,
                           tr["n_curves"], tuple(tr["t_range"]), tuple(tr["z_range"]), tr["heteroscedastic"])
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed model file: {exc}") from None


def save_model(path, model):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(dumps_model(model))


def load_model(path):
    with open(path, encoding="utf-8") as fh:
        return loads_model(fh.read())


def format_diagnostics(model) -> str:
    lines = ["step,block,objective"]
    d = model.diagnostics
    for i, (b, f) in enumerate(zip(d.block_trace, d.objective_trace)):
        lines.append(f"{i},{b},{f!r}")
    return "\n".join(lines) + "\n"
