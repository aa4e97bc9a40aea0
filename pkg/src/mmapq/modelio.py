"""Reading and writing model files.

A model file is a YAML document (JSON is accepted too).  Field names::

    mmap:
      phases: m
      types: K
      initial_phase: [...]            # optional; default = stationary phase law
      states:                         # one block per environment state, in order
        - D0: [[...], ...]            # row-major m x m
          batches:
            - {label: [h_1, ..., h_K], matrix: [[...], ...]}
    environment:
      states: S
      initial: [p_0, ..., p_{S-1}]
      kernel:                         # empty list = no catastrophes (S must be 1)
        - {from: i, to: j, prob: p_ij, dist: {family: ..., ...}}
    service:                          # service[r][i]: type r, state i
      - [{family: exponential, rate: 1.0}, ...]
    resources:                        # optional
      arrival:   [[dist, ...], ...]   # per type, k component laws
      departure: [[dist, ...], ...]
    initial_customers: [h0_1, ..., h0_K]   # optional
    numeric: {horizon: T, step: dt}        # optional

States, types and phases are 0-based.
"""

from __future__ import annotations

from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .distributions import make_distribution
from .errors import ModelSyntaxError, SchemaError
from .model import (
    KernelEntry,
    MMAPBlock,
    MMAPSpec,
    ModelConfig,
    NumericSettings,
    SemiMarkovEnvironment,
    ServiceResourceModel,
)

_TOP = {"mmap", "environment", "service", "resources", "initial_customers", "numeric"}
_REQUIRED = ("mmap", "environment", "service")


def _num(value, where):
    if isinstance(value, bool):
        raise SchemaError(where, f"{where}: expected a number, got {value!r}")
    if isinstance(value, (int, float)):
        return value
    if isinstance(value, str):
        # YAML 1.1 reads "1e-3" as a string
        try:
            return float(value)
        except ValueError:
            pass
    raise SchemaError(where, f"{where}: expected a number, got {value!r}")


def _int(value, where):
    v = _num(value, where)
    if float(v) != int(v):
        raise SchemaError(where, f"{where}: expected an integer, got {value!r}")
    return int(v)


def _matrix(value, where):
    if not isinstance(value, list) or not all(isinstance(row, list) for row in value):
        raise SchemaError(where, f"{where}: expected a list of rows")
    return np.array([[float(_num(x, where)) for x in row] for row in value], dtype=float)


def _vector(value, where):
    if not isinstance(value, list):
        raise SchemaError(where, f"{where}: expected a list")
    return [_num(x, where) for x in value]


def _mapping(value, where, allowed, required=()):
    if not isinstance(value, dict):
        raise SchemaError(where, f"{where}: expected a mapping")
    extra = set(value) - set(allowed)
    if extra:
        name = sorted(map(str, extra))[0]
        raise SchemaError(name, f"unexpected field {name!r} in {where}")
    for key in required:
        if key not in value:
            raise SchemaError(key, f"missing field {key!r} in {where}")
    return value


def _dist(value, where):
    if isinstance(value, dict):
        parsed = {}
        for k, v in value.items():
            if k == "family":
                parsed[k] = v
            elif isinstance(v, list):
                parsed[k] = [_num(x, f"{where}.{k}") for x in v]
            else:
                parsed[k] = _num(v, f"{where}.{k}")
        value = parsed
    return make_distribution(value)


def config_from_dict(doc: Any) -> ModelConfig:
    """Build a :class:`ModelConfig` from a parsed document tree."""
    doc = _mapping(doc, "document", _TOP, _REQUIRED)

    mm = _mapping(doc["mmap"], "mmap", {"phases", "types", "initial_phase", "states"}, ("phases", "types", "states"))
    m = _int(mm["phases"], "mmap.phases")
    K = _int(mm["types"], "mmap.types")
    if not isinstance(mm["states"], list):
        raise SchemaError("states", "mmap.states must be a list of state blocks")
    blocks = []
    for i, blk in enumerate(mm["states"]):
        where = f"mmap.states[{i}]"
        blk = _mapping(blk, where, {"D0", "batches"}, ("D0",))
        batches = {}
        for b, entry in enumerate(blk.get("batches") or []):
            bw = f"{where}.batches[{b}]"
            entry = _mapping(entry, bw, {"label", "matrix"}, ("label", "matrix"))
            label = tuple(_int(x, bw + ".label") for x in _vector(entry["label"], bw + ".label"))
            mat = _matrix(entry["matrix"], bw + ".matrix")
            batches[label] = batches.get(label, 0) + mat
        blocks.append(MMAPBlock(_matrix(blk["D0"], where + ".D0"), batches))
    init_phase = mm.get("initial_phase")
    mmap = MMAPSpec(
        phase_count=m,
        type_count=K,
        blocks=tuple(blocks),
        initial_phase=None if init_phase is None else np.array(_vector(init_phase, "mmap.initial_phase"), dtype=float),
    )

    ev = _mapping(doc["environment"], "environment", {"states", "initial", "kernel"}, ("states",))
    S = _int(ev["states"], "environment.states")
    kernel = {}
    for n, entry in enumerate(ev.get("kernel") or []):
        where = f"environment.kernel[{n}]"
        entry = _mapping(entry, where, {"from", "to", "prob", "dist"}, ("from", "to", "prob", "dist"))
        key = (_int(entry["from"], where + ".from"), _int(entry["to"], where + ".to"))
        if key in kernel:
            raise SchemaError(where, f"duplicate kernel entry {key}")
        kernel[key] = KernelEntry(float(_num(entry["prob"], where + ".prob")), _dist(entry["dist"], where + ".dist"))
    initial = ev.get("initial")
    if initial is None:
        initial = [1.0] + [0.0] * (S - 1)
    env = SemiMarkovEnvironment(S, kernel, np.array(_vector(initial, "environment.initial"), dtype=float))

    if not isinstance(doc["service"], list):
        raise SchemaError("service", "service must be a list (per type) of lists (per state)")
    service = tuple(
        tuple(_dist(d, f"service[{r}][{i}]") for i, d in enumerate(row if isinstance(row, list) else [row]))
        for r, row in enumerate(doc["service"])
    )
    arrival: tuple = ()
    departure: tuple = ()
    if doc.get("resources") is not None:
        res = _mapping(doc["resources"], "resources", {"arrival", "departure"}, ("arrival", "departure"))
        arrival = tuple(tuple(_dist(d, f"resources.arrival[{r}]") for d in row) for r, row in enumerate(res["arrival"]))
        departure = tuple(
            tuple(_dist(d, f"resources.departure[{r}]") for d in row) for r, row in enumerate(res["departure"])
        )
    sr = ServiceResourceModel(service, arrival, departure)

    h0 = tuple(_int(x, "initial_customers") for x in _vector(doc.get("initial_customers") or [0] * K, "initial_customers"))
    num = NumericSettings()
    if doc.get("numeric") is not None:
        nb = _mapping(doc["numeric"], "numeric", {"horizon", "step"})
        num = NumericSettings(
            horizon=float(_num(nb.get("horizon", num.horizon), "numeric.horizon")),
            step=float(_num(nb.get("step", num.step), "numeric.step")),
        )
    return ModelConfig(mmap, env, sr, h0, num)


def _fl(x):
    return [float(v) for v in x]


def config_to_dict(config: ModelConfig) -> dict:
    """Canonical document tree for ``config`` (inverse of :func:`config_from_dict`)."""
    mmap = config.mmap
    states = []
    for blk in mmap.blocks:
        states.append(
            {
                "D0": [_fl(row) for row in np.asarray(blk.D0)],
                "batches": [
                    {"label": [int(x) for x in h], "matrix": [_fl(row) for row in np.asarray(mat)]}
                    for h, mat in blk.batches.items()
                ],
            }
        )
    mm: dict[str, Any] = {"phases": mmap.phase_count, "types": mmap.type_count}
    if mmap.initial_phase is not None:
        mm["initial_phase"] = _fl(mmap.initial_phase)
    mm["states"] = states
    env = config.environment
    doc: dict[str, Any] = {
        "mmap": mm,
        "environment": {
            "states": env.state_count,
            "initial": _fl(env.initial_distribution),
            "kernel": [
                {"from": i, "to": j, "prob": float(e.prob), "dist": e.dist.to_dict()}
                for (i, j), e in sorted(env.kernel.items())
            ],
        },
        "service": [[d.to_dict() for d in row] for row in config.service_resources.service],
    }
    sr = config.service_resources
    if sr.arrival or sr.departure:
        doc["resources"] = {
            "arrival": [[d.to_dict() for d in row] for row in sr.arrival],
            "departure": [[d.to_dict() for d in row] for row in sr.departure],
        }
    doc["initial_customers"] = [int(x) for x in (config.initial_customers or [0] * mmap.type_count)]
    doc["numeric"] = {"horizon": float(config.numeric.horizon), "step": float(config.numeric.step)}
    return doc


def load_model(text: str) -> ModelConfig:
    """Parse a model document.

    Raises :class:`ModelSyntaxError` (with the offending line) on malformed
    YAML, :class:`SchemaError` naming the missing or unexpected field, and
    :class:`BadDistribution` for invalid distribution parameters.
    """
    try:
        doc = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        line = exc.problem_mark.line + 1 if exc.problem_mark is not None else None
        raise ModelSyntaxError(str(exc.problem or exc), line) from exc
    except yaml.YAMLError as exc:
        raise ModelSyntaxError(str(exc)) from exc
    return config_from_dict(doc)


def load_model_file(path) -> ModelConfig:
    return load_model(Path(path).read_text())


def dump_model(config: ModelConfig) -> str:
    """Serialize ``config`` to its canonical YAML form."""
    return yaml.safe_dump(config_to_dict(config), sort_keys=False, default_flow_style=None)
