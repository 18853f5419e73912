"""Run-record serialization.

The JSON schema is stable:

    {spec: {n, sigma, seed, dim, mode},
     config: {epsilon, bound, strategy, reflections},
     result: {ub, lb, total_evals, certificate_valid, rotation_vec,
              translation, reflected},
     generations: [{g, evals, live, ub, lb}, ...]}

``sigma`` and ``seed`` are null for runs on externally supplied clouds.
Floats are rendered with 17 significant digits so every value survives a
parse round-trip bit-exactly, which also makes the output byte-deterministic.
"""

from __future__ import annotations

import json
import math
import os
import tempfile

from .search import SearchConfig, SearchResult


def format_float(x: float) -> str:
    if math.isnan(x):
        return "NaN"
    if math.isinf(x):
        return "Infinity" if x > 0 else "-Infinity"
    return format(x, ".17g")


def dumps_json17(value, indent: int = 0) -> str:
    """Render JSON with floats at 17 significant digits, preserving dict order."""
    pad = " " * indent
    if isinstance(value, dict):
        items = [f'{pad}  {json.dumps(k)}: {dumps_json17(v, indent + 2).lstrip()}'
                 for k, v in value.items()]
        if not items:
            return pad + "{}"
        return pad + "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(value, (list, tuple)):
        items = [dumps_json17(v, indent + 2) for v in value]
        if not items:
            return pad + "[]"
        return pad + "[\n" + ",\n".join(items) + "\n" + pad + "]"
    if isinstance(value, bool):
        return pad + ("true" if value else "false")
    if isinstance(value, float):
        return pad + format_float(value)
    if isinstance(value, int):
        return pad + str(value)
    if value is None:
        return pad + "null"
    if isinstance(value, str):
        return pad + json.dumps(value)
    raise TypeError(f"cannot serialize {type(value).__name__}")


def run_record(spec: dict, config: SearchConfig, result: SearchResult) -> dict:
    return {
        "spec": {
            "n": spec.get("n"),
            "sigma": spec.get("sigma"),
            "seed": spec.get("seed"),
            "dim": spec.get("dim"),
            "mode": spec.get("mode"),
        },
        "config": {
            "epsilon": float(config.epsilon),
            "bound": config.bound_kind,
            "strategy": config.strategy,
            "reflections": bool(config.allow_reflections),
        },
        "result": {
            "ub": float(result.ub),
            "lb": float(result.lb),
            "total_evals": int(result.total_evals),
            "certificate_valid": bool(result.certificate_valid),
            "rotation_vec": [float(v) for v in result.minimizer.rot],
            "translation": [float(v) for v in result.minimizer.trans],
            "reflected": bool(result.reflected),
        },
        "generations": [
            {"g": rec.g, "evals": rec.evals, "live": rec.live,
             "ub": float(rec.ub), "lb": float(rec.lb)}
            for rec in result.generations
        ],
    }


def generations_csv(result: SearchResult) -> str:
    lines = ["g,evals,live,ub,lb"]
    for rec in result.generations:
        lines.append(
            f"{rec.g},{rec.evals},{rec.live},{format_float(rec.ub)},{format_float(rec.lb)}"
        )
    return "\n".join(lines) + "\n"


def loads_run_record(text: str) -> dict:
    return json.loads(text)


def atomic_write(path, text: str) -> None:
    """Write-temp-then-rename so partially written files are never observed."""
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "w") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
