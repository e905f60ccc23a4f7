"""File formats: assay-data CSV, sweep CSV, JSON sidecars, atomic writes.

Assay data CSV (UTF-8, header row)::

    assay_id,group,pool_size,gamma,replicate,value

with censored values encoded as the literal ``NA``.  The detection limit
and model family travel in a JSON meta file next to the data
(``<path>.meta.json``) or on the command line.

All writers are atomic (temp file + rename) and format floats with
``repr``, so identical runs produce byte-identical files.
"""

from __future__ import annotations

import csv
import json
import os
import tempfile
from typing import Optional

import numpy as np

from .design import DesignSpec, GroupSpec, design_to_dict
from .exceptions import DataError
from .likelihood import AssayObservation, Dataset

DATA_COLUMNS = ["assay_id", "group", "pool_size", "gamma", "replicate", "value"]


def _fmt(x) -> str:
    if isinstance(x, float) or isinstance(x, np.floating):
        return repr(float(x))
    return str(x)


def atomic_write_text(path: str, text: str) -> None:
    d = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(path: str, header, rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    atomic_write_text(path, "\n".join(lines) + "\n")


def write_json(path: str, doc: dict) -> None:
    atomic_write_text(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")


def sidecar_path(out_path: str) -> str:
    return str(out_path) + ".config.json"


def meta_path(data_path: str) -> str:
    return str(data_path) + ".meta.json"


def write_dataset(path: str, data: Dataset, family: Optional[str] = None) -> None:
    """Write a dataset CSV plus its ``<path>.meta.json`` sidecar."""
    rows = []
    counters = {}
    for obs in data.observations:
        # number assays per (group, replicate) in arrival order; replicate 1
        # and 2 of one assay then share an id under assay-major layout
        key = (obs.group_index, obs.replicate_index)
        idx = counters.get(key, 0)
        counters[key] = idx + 1
        grp = data.design.groups[obs.group_index]
        rows.append([
            "g%d_a%d" % (obs.group_index, idx),
            obs.group_index,
            grp.pool_size,
            grp.gamma_flag,
            obs.replicate_index,
            "NA" if obs.censored else repr(float(obs.value)),
        ])
    write_csv(path, DATA_COLUMNS, rows)
    meta = {
        "llod": data.llod,
        "family": family or data.family,
        "design": design_to_dict(data.design),
    }
    write_json(meta_path(path), meta)


def read_dataset(path: str, llod: Optional[float] = None,
                 family: Optional[str] = None) -> Dataset:
    """Read an assay-data CSV (and meta sidecar, if present) into a Dataset.

    ``llod``/``family`` arguments override the sidecar.  Parse errors cite
    the offending line number.
    """
    meta = {}
    if os.path.exists(meta_path(path)):
        with open(meta_path(path), "r", encoding="utf-8") as fh:
            meta = json.load(fh)
    if llod is None:
        llod = meta.get("llod")
    if llod is None:
        raise DataError("no LLOD: pass --llod or provide %s" % meta_path(path))
    if family is None:
        family = meta.get("family")

    records = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError("%s: empty file" % path) from None
        if [h.strip() for h in header] != DATA_COLUMNS:
            raise DataError(
                "%s:1: expected header %s" % (path, ",".join(DATA_COLUMNS)))
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != len(DATA_COLUMNS):
                raise DataError("%s:%d: expected %d fields, got %d"
                                % (path, lineno, len(DATA_COLUMNS), len(row)))
            try:
                group = int(row[1])
                pool = int(row[2])
                gamma = int(row[3])
                rep = int(row[4])
                raw = row[5].strip()
                value = None if raw.upper() in ("NA", "N/A") else float(raw)
            except ValueError as exc:
                raise DataError("%s:%d: %s" % (path, lineno, exc)) from None
            records.append((lineno, row[0], group, pool, gamma, rep, value))
    if not records:
        raise DataError("%s: no data rows" % path)

    groups = {}
    assays = {}
    for lineno, assay_id, group, pool, gamma, rep, value in records:
        if group in groups and groups[group] != (pool, gamma):
            raise DataError(
                "%s:%d: group %d previously had pool_size/gamma %s"
                % (path, lineno, group, groups[group]))
        groups[group] = (pool, gamma)
        assays.setdefault((group, assay_id), []).append(rep)
    indices = sorted(groups)
    if indices != list(range(len(indices))):
        raise DataError("%s: group indices must be 0..%d" % (path, len(indices) - 1))

    reps_per_group = {}
    counts = {}
    for (group, assay_id), reps in assays.items():
        r = len(reps)
        if sorted(reps) != list(range(1, r + 1)):
            raise DataError(
                "%s: assay %r in group %d has replicates %s, expected 1..%d"
                % (path, assay_id, group, sorted(reps), r))
        reps_per_group.setdefault(group, r)
        if reps_per_group[group] != r:
            raise DataError(
                "%s: assay %r in group %d has %d replicates, others have %d"
                % (path, assay_id, group, r, reps_per_group[group]))
        counts[group] = counts.get(group, 0) + 1

    spec_groups = tuple(
        GroupSpec(groups[g][0], groups[g][1], counts[g], reps_per_group[g])
        for g in indices
    )
    n = sum(g.assay_count for g in spec_groups)
    used = sum(g.specimens for g in spec_groups)
    meta_design = meta.get("design") or {}
    N = int(meta_design.get("N", used))
    design = DesignSpec(max(N, used), n, spec_groups)

    order = {g: i for i, g in enumerate(indices)}
    observations = [
        AssayObservation(order[group], rep, value)
        for _, _, group, _, _, rep, value in records
    ]
    return Dataset(float(llod), design, tuple(observations), family=family)


def read_raw_values(path: str) -> np.ndarray:
    """Read raw measurements: one value per line, or a CSV 'value' column."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        first = fh.readline()
        fh.seek(0)
        if "value" in first.lower() and not _is_number(first.split(",")[0]):
            reader = csv.DictReader(fh)
            col = next((c for c in reader.fieldnames if c.strip().lower() == "value"), None)
            if col is None:
                raise DataError("%s: no 'value' column" % path)
            vals = []
            for lineno, row in enumerate(reader, start=2):
                try:
                    vals.append(float(row[col]))
                except (TypeError, ValueError):
                    raise DataError("%s:%d: bad value %r" % (path, lineno, row.get(col))) from None
            return np.asarray(vals)
        vals = []
        for lineno, line in enumerate(fh, start=1):
            s = line.strip()
            if not s:
                continue
            try:
                vals.append(float(s))
            except ValueError:
                raise DataError("%s:%d: bad value %r" % (path, lineno, s)) from None
        return np.asarray(vals)


def _is_number(s: str) -> bool:
    try:
        float(s)
        return True
    except ValueError:
        return False


def sweep_rows_to_csv(path: str, results, param_order) -> None:
    """Long-format sweep CSV: llod, alpha, n*Var columns, failure count."""
    header = ["llod", "alpha"] + ["nvar_%s" % p for p in param_order] + ["failures"]
    rows = []
    for res in results:
        for row in res.rows:
            rows.append([res.llod, row.alpha]
                        + [row.scaled_variances[p] for p in param_order]
                        + [row.failures])
    write_csv(path, header, rows)
