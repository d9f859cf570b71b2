"""Long-format CSV ingestion, run configuration and atomic result writers."""

from __future__ import annotations

import csv
import json
import math
import os
import tempfile
from dataclasses import asdict, dataclass, fields, replace

import numpy as np
import yaml

from .evaluation import CvPlan
from .lmm import LmmFitOptions
from .search import SearchOptions
from .simulation import MISSINGNESS, Scenario, desk_grid
from .trajectory import BasisSpec, SubjectRecord, TrialData

FORMAT_VERSION = 1
OUTCOME_HEADER = ("subject_id", "group", "time", "outcome")


class DataFormatError(ValueError):
    """Malformed or inconsistent trial input files."""


class ConfigError(ValueError):
    """Run configuration failed validation."""


# --- trial CSVs ----------------------------------------------------------------

def _number(text, where, what):
    try:
        v = float(text)
    except ValueError:
        raise DataFormatError(f"{where}: {what} {text!r} is not a number") from None
    if not math.isfinite(v):
        raise DataFormatError(f"{where}: {what} must be finite, got {text!r}")
    return v


def _rows(path):
    """Yield (line number, fields) after checking the file is readable CSV."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        for row in reader:
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            yield reader.line_num, [c.strip() for c in row]


def _read_outcomes(path):
    rows = _rows(path)
    try:
        line, header = next(rows)
    except StopIteration:
        raise DataFormatError(f"{path}: empty file") from None
    if tuple(header) != OUTCOME_HEADER:
        raise DataFormatError(f"{path} line {line}: header must be {','.join(OUTCOME_HEADER)}")
    groups, visits, seen = {}, {}, set()
    for line, row in rows:
        where = f"{path} line {line}"
        if len(row) != 4:
            raise DataFormatError(f"{where}: expected 4 fields, got {len(row)}")
        sid, g, t, y = row
        if not sid:
            raise DataFormatError(f"{where}: empty subject_id")
        if g not in ("1", "2"):
            raise DataFormatError(f"{where}: unknown group code {g!r} (expected 1 or 2)")
        t = _number(t, where, "time")
        y = _number(y, where, "outcome")
        if (sid, t) in seen:
            raise DataFormatError(f"{where}: duplicate time {t:g} for subject {sid!r}")
        seen.add((sid, t))
        if groups.setdefault(sid, int(g)) != int(g):
            raise DataFormatError(f"{where}: subject {sid!r} appears in both groups")
        visits.setdefault(sid, []).append((t, y))
    return groups, visits


def _read_covariates(path):
    rows = _rows(path)
    try:
        line, header = next(rows)
    except StopIteration:
        raise DataFormatError(f"{path}: empty file") from None
    p = len(header) - 1
    if p < 1 or header[0] != "subject_id" or header[1:] != [f"x{j + 1}" for j in range(p)]:
        raise DataFormatError(f"{path} line {line}: header must be subject_id,x1,...,xp")
    cov = {}
    for line, row in rows:
        where = f"{path} line {line}"
        if len(row) != p + 1:
            raise DataFormatError(f"{where}: covariate count mismatch, expected {p} got {len(row) - 1}")
        if row[0] in cov:
            raise DataFormatError(f"{where}: duplicate subject {row[0]!r}")
        cov[row[0]] = np.array([_number(v, where, f"x{j + 1}") for j, v in enumerate(row[1:])])
    return p, cov


def load_trial(outcomes_path, covariates_path) -> TrialData:
    """Join a long-format outcome file with a one-row-per-subject covariate file."""
    groups, visits = _read_outcomes(outcomes_path)
    p, cov = _read_covariates(covariates_path)
    for sid in groups:
        if sid not in cov:
            raise DataFormatError(f"subject {sid!r} has outcomes but no covariates")
    for sid in cov:
        if sid not in groups:
            raise DataFormatError(f"subject {sid!r} has covariates but no outcomes")
    subjects = []
    for sid, g in groups.items():
        tv = np.array(sorted(visits[sid]))
        subjects.append(SubjectRecord(sid, g, tv[:, 0], tv[:, 1], cov[sid]))
    grid = np.unique(np.concatenate([s.times for s in subjects]))
    try:
        return TrialData(tuple(subjects), p, grid)
    except ValueError as exc:
        raise DataFormatError(str(exc)) from None


def _fmt(v) -> str:
    return f"{float(v):.17g}"


def export_trial(data: TrialData, outcomes_path, covariates_path):
    """Write the two CSVs read by :func:`load_trial`; values keep 17 significant digits."""
    out = [",".join(OUTCOME_HEADER)]
    for s in data.subjects:
        out.extend(f"{s.id},{s.group},{_fmt(t)},{_fmt(y)}" for t, y in zip(s.times, s.outcomes))
    cov = ["subject_id," + ",".join(f"x{j + 1}" for j in range(data.p))]
    cov.extend(s.id + "," + ",".join(_fmt(v) for v in s.covariates) for s in data.subjects)
    atomic_write(outcomes_path, "\n".join(out) + "\n")
    atomic_write(covariates_path, "\n".join(cov) + "\n")


# --- writers -------------------------------------------------------------------

def atomic_write(path, text: str):
    """Write to a temporary file in the target directory, then rename over ``path``."""
    path = os.fspath(path)
    folder = os.path.dirname(os.path.abspath(path))
    os.makedirs(folder, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=folder, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj) if math.isfinite(obj) else None
    return obj


def write_json(path, payload: dict, metadata: dict):
    doc = {"format_version": FORMAT_VERSION, "metadata": metadata}
    doc.update(payload)
    atomic_write(path, json.dumps(_jsonable(doc), indent=2, sort_keys=False) + "\n")


def write_table(path, columns, rows, metadata: dict):
    """CSV preceded by ``#`` comment lines carrying the metadata as JSON."""
    lines = ["# format_version: %d" % FORMAT_VERSION,
             "# metadata: " + json.dumps(_jsonable(metadata), sort_keys=True),
             ",".join(columns)]
    for row in rows:
        lines.append(",".join(_cell(row[c]) for c in columns))
    atomic_write(path, "\n".join(lines) + "\n")


def _cell(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v)) if math.isfinite(v) else "nan"
    return str(v)


def read_table(path):
    """Parse a file from :func:`write_table` into (metadata, list of row dicts)."""
    meta, body = {}, []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.startswith("# metadata: "):
                meta = json.loads(line[len("# metadata: "):])
            elif not line.startswith("#"):
                body.append(line)
    return meta, list(csv.DictReader(body))


# --- configuration -------------------------------------------------------------

@dataclass(frozen=True)
class GridConfig:
    full: bool = False
    n_reps: int = 50
    n_train_per_group: int = 100
    n_test: int = 1000


@dataclass(frozen=True)
class RunConfig:
    seed: int = 2024
    basis: BasisSpec = BasisSpec()
    search: SearchOptions | None = None   # None: the command's own default budget
    lmm: LmmFitOptions = LmmFitOptions()
    cv: CvPlan = CvPlan()
    grid: GridConfig = GridConfig()
    scenarios: tuple = ()                 # explicit cells; empty means the grid above
    lower_is_better: bool = False
    out_dir: str | None = None

    def scenario_list(self):
        if self.scenarios:
            return list(self.scenarios)
        g = self.grid
        n_reps = g.n_reps
        return desk_grid(n_reps=n_reps, seed=self.seed, full=g.full,
                         n_train_per_group=g.n_train_per_group, n_test=g.n_test)

    def search_options(self, default: SearchOptions) -> SearchOptions:
        return replace(self.search or default, seed=self.seed)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["search"] = None if self.search is None else asdict(replace(self.search, seed=self.seed))
        out["cv"]["seed"] = self.seed
        out["scenarios"] = [asdict(s) for s in self.scenarios]
        return out


_SECTIONS = {"basis": BasisSpec, "search": SearchOptions, "lmm": LmmFitOptions,
             "cv": CvPlan, "grid": GridConfig}
_NOT_CONFIGURABLE = {"seed"}  # one master seed feeds every stream


def _check_type(key, value, default):
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    elif isinstance(default, str):
        ok = isinstance(value, str)
    else:
        ok = True
    if not ok:
        raise ConfigError(f"{key}: expected {type(default).__name__}, got {value!r}")
    return float(value) if isinstance(default, float) else value


def _section(name, cls, raw):
    if not isinstance(raw, dict):
        raise ConfigError(f"{name}: expected a mapping")
    defaults = cls()
    known = {f.name for f in fields(cls)} - _NOT_CONFIGURABLE
    kwargs = {}
    for key, value in raw.items():
        if key not in known:
            raise ConfigError(f"{name}.{key}: unknown key (allowed: {', '.join(sorted(known))})")
        kwargs[key] = _check_type(f"{name}.{key}", value, getattr(defaults, key))
    try:
        return cls(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"{name}: {exc}") from None


def _scenario(i, raw, seed, grid: GridConfig):
    if not isinstance(raw, dict):
        raise ConfigError(f"scenarios[{i}]: expected a mapping")
    base = dict(n_train_per_group=grid.n_train_per_group, n_test=grid.n_test,
                n_reps=grid.n_reps, seed=seed + i)
    template = Scenario(0.0, 1, **base)
    kwargs = dict(base)
    for key, value in raw.items():
        if key not in {f.name for f in fields(Scenario)}:
            raise ConfigError(f"scenarios[{i}].{key}: unknown key")
        default = 0.0 if key == "theta_deg" else getattr(template, key)
        kwargs[key] = _check_type(f"scenarios[{i}].{key}", value, default)
    for key in ("theta_deg", "p"):
        if key not in raw:
            raise ConfigError(f"scenarios[{i}]: missing {key}")
    if kwargs.get("missingness", "none") not in MISSINGNESS:
        raise ConfigError(f"scenarios[{i}].missingness must be one of {MISSINGNESS}")
    try:
        return Scenario(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"scenarios[{i}]: {exc}") from None


def config_from_mapping(raw) -> RunConfig:
    raw = {} if raw is None else raw
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a mapping at the top level")
    allowed = {f.name for f in fields(RunConfig)} | {"output"}
    for key in raw:
        if key not in allowed:
            raise ConfigError(f"{key}: unknown top-level key")
    kw = {}
    if "seed" in raw:
        kw["seed"] = _check_type("seed", raw["seed"], 0)
    for name, cls in _SECTIONS.items():
        if raw.get(name) is not None:
            kw[name] = _section(name, cls, raw[name])
    if "lower_is_better" in raw:
        kw["lower_is_better"] = _check_type("lower_is_better", raw["lower_is_better"], False)
    out = raw.get("output", raw.get("out_dir"))
    if isinstance(out, dict):
        extra = set(out) - {"dir"}
        if extra:
            raise ConfigError(f"output: unknown keys {sorted(extra)}")
        out = out.get("dir")
    if out is not None:
        kw["out_dir"] = _check_type("output.dir", out, "")
    cfg = RunConfig(**kw)
    scen = raw.get("scenarios") or []
    if not isinstance(scen, list):
        raise ConfigError("scenarios: expected a list")
    if scen:
        cfg = replace(cfg, scenarios=tuple(_scenario(i, s, cfg.seed, cfg.grid)
                                           for i, s in enumerate(scen)))
    return cfg


def load_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML ({exc})") from None
    return config_from_mapping(raw)
