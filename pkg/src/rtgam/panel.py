"""Ingestion and assembly of the per-province daily panel.

Three delimited sources (cases, environment, mobility) are parsed line by
line with malformed rows collected as diagnostics, then inner-joined on
(province, date).  Provinces must exceed a cumulative-case threshold and a
coverage floor over the study window.  Interior gaps of up to gap_limit days
in the environment fields are filled by linear interpolation in date; case,
test, and mobility gaps always drop the day, and no value is ever
extrapolated at a province's edges.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from datetime import date, timedelta

import numpy as np

CASE_HEADER = ["date", "province", "region", "new_cases", "new_tests"]
ENV_HEADER = ["date", "province", "temperature_c", "humidity_pct", "pm25"]
MOBILITY_HEADER = ["date", "province", "mobility_decrease_pct"]

SUMMARY_ORDER = [
    "daily_cases",
    "daily_tests",
    "temperature_c",
    "humidity_pct",
    "pm25",
    "mobility_decrease_pct",
]

DEFAULT_WINDOW = (date(2020, 2, 24), date(2020, 8, 1))
DEFAULT_THRESHOLD = 2000.0
DEFAULT_MAX_MISSING_FRAC = 0.2
DEFAULT_GAP_LIMIT = 3


class PanelError(ValueError):
    """Raised for unusable source files or an empty joined panel."""


@dataclass
class Diagnostic:
    """One rejected line or dropped unit, machine-readable."""

    line: int | None
    source: str
    reason: str


@dataclass
class ObservationRow:
    date: date
    province: str
    region: str
    new_cases: float
    new_tests: float
    temperature_c: float
    humidity_pct: float
    pm25: float
    mobility_decrease_pct: float


@dataclass
class ProvinceData:
    """Column-oriented view of one province's panel rows."""

    province: str
    region: str
    dates: list[date]
    new_cases: np.ndarray
    new_tests: np.ndarray
    temperature_c: np.ndarray
    humidity_pct: np.ndarray
    pm25: np.ndarray
    mobility_decrease_pct: np.ndarray

    def field(self, name: str) -> np.ndarray:
        try:
            value = getattr(self, name)
        except AttributeError:
            raise PanelError(f"unknown panel field '{name}'") from None
        if not isinstance(value, np.ndarray):
            raise PanelError(f"unknown panel field '{name}'")
        return value


@dataclass
class Panel:
    """Joined daily panel, rows ordered by (province, date)."""

    rows: list[ObservationRow]
    provinces: list[str]
    window: tuple[date, date]

    def arrays(self, province: str) -> ProvinceData:
        rows = [r for r in self.rows if r.province == province]
        if not rows:
            raise PanelError(f"province '{province}' not in panel")
        return ProvinceData(
            province,
            rows[0].region,
            [r.date for r in rows],
            np.array([r.new_cases for r in rows]),
            np.array([r.new_tests for r in rows]),
            np.array([r.temperature_c for r in rows]),
            np.array([r.humidity_pct for r in rows]),
            np.array([r.pm25 for r in rows]),
            np.array([r.mobility_decrease_pct for r in rows]),
        )


@dataclass
class RawSources:
    """Parsed per-source records keyed by (province, date), plus diagnostics."""

    cases: dict[tuple[str, date], tuple[str, float | None, float | None]]
    environment: dict[tuple[str, date], tuple[float | None, float | None, float | None]]
    mobility: dict[tuple[str, date], float | None]
    diagnostics: list[Diagnostic]
    duplicates: list[tuple[str, str, date]] = field(default_factory=list)


@dataclass
class SummaryTable:
    """Pooled mean / sample SD / min / max for each panel variable."""

    variables: list[str]
    stats: dict[str, tuple[float, float, float, float]]


def _parse_value(
    text: str,
    column: str,
    line: int,
    source: str,
    diagnostics: list[Diagnostic],
    lo: float | None = None,
    hi: float | None = None,
) -> tuple[float | None, bool]:
    """Parse one numeric cell.  Empty means missing; returns (value, ok)."""
    text = text.strip()
    if text == "":
        return None, True
    try:
        value = float(text)
    except ValueError:
        diagnostics.append(Diagnostic(line, source, f"unparseable {column}"))
        return None, False
    if not np.isfinite(value):
        diagnostics.append(Diagnostic(line, source, f"non-finite {column}"))
        return None, False
    if lo is not None and value < lo:
        diagnostics.append(Diagnostic(line, source, f"{column} out of range"))
        return None, False
    if hi is not None and value > hi:
        diagnostics.append(Diagnostic(line, source, f"{column} out of range"))
        return None, False
    return value, True


def _read_rows(path: str, header: list[str], source: str) -> list[tuple[int, list[str]]]:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            numbered = [(i + 1, row) for i, row in enumerate(reader)]
    except OSError as exc:
        raise PanelError(f"cannot read {source} file: {exc}") from exc
    rows = [
        (ln, row)
        for ln, row in numbered
        if row and not (row[0].startswith("#") and len(row) >= 1)
    ]
    if not rows:
        raise PanelError(f"{source} file {path} is empty")
    first_line, first = rows[0]
    if [c.strip() for c in first] != header:
        raise PanelError(
            f"{source} file {path} header mismatch: expected {','.join(header)}"
        )
    return rows[1:]


def _parse_key(
    row: list[str],
    line: int,
    source: str,
    window: tuple[date, date],
    diagnostics: list[Diagnostic],
) -> tuple[str, date] | None:
    try:
        day = date.fromisoformat(row[0].strip())
    except ValueError:
        diagnostics.append(Diagnostic(line, source, "unparseable date"))
        return None
    province = row[1].strip()
    if not province:
        diagnostics.append(Diagnostic(line, source, "empty province"))
        return None
    if day < window[0] or day > window[1]:
        diagnostics.append(Diagnostic(line, source, "date outside study window"))
        return None
    return province, day


def ingest_sources(
    case_path: str,
    environment_path: str,
    mobility_path: str,
    window: tuple[date, date] = DEFAULT_WINDOW,
) -> RawSources:
    """Parse the three source files, collecting per-line diagnostics.

    A row with any malformed or out-of-range field is rejected whole and
    recorded; empty numeric cells are treated as missing values.  Header
    mismatches and unreadable files raise PanelError.
    """
    diagnostics: list[Diagnostic] = []
    duplicates: list[tuple[str, str, date]] = []

    cases: dict[tuple[str, date], tuple[str, float | None, float | None]] = {}
    for line, row in _read_rows(case_path, CASE_HEADER, "cases"):
        if len(row) != len(CASE_HEADER):
            diagnostics.append(Diagnostic(line, "cases", "wrong field count"))
            continue
        key = _parse_key(row, line, "cases", window, diagnostics)
        if key is None:
            continue
        region = row[2].strip()
        n_cases, ok1 = _parse_value(row[3], "new_cases", line, "cases", diagnostics, lo=0.0)
        n_tests, ok2 = _parse_value(row[4], "new_tests", line, "cases", diagnostics, lo=0.0)
        if not (ok1 and ok2):
            continue
        if key in cases:
            duplicates.append(("cases", key[0], key[1]))
            continue
        cases[key] = (region, n_cases, n_tests)

    environment: dict[tuple[str, date], tuple[float | None, float | None, float | None]] = {}
    for line, row in _read_rows(environment_path, ENV_HEADER, "environment"):
        if len(row) != len(ENV_HEADER):
            diagnostics.append(Diagnostic(line, "environment", "wrong field count"))
            continue
        key = _parse_key(row, line, "environment", window, diagnostics)
        if key is None:
            continue
        temp, ok1 = _parse_value(row[2], "temperature_c", line, "environment", diagnostics)
        hum, ok2 = _parse_value(
            row[3], "humidity_pct", line, "environment", diagnostics, lo=0.0, hi=100.0
        )
        pm, ok3 = _parse_value(row[4], "pm25", line, "environment", diagnostics, lo=0.0)
        if not (ok1 and ok2 and ok3):
            continue
        if key in environment:
            duplicates.append(("environment", key[0], key[1]))
            continue
        environment[key] = (temp, hum, pm)

    mobility: dict[tuple[str, date], float | None] = {}
    for line, row in _read_rows(mobility_path, MOBILITY_HEADER, "mobility"):
        if len(row) != len(MOBILITY_HEADER):
            diagnostics.append(Diagnostic(line, "mobility", "wrong field count"))
            continue
        key = _parse_key(row, line, "mobility", window, diagnostics)
        if key is None:
            continue
        mob, ok = _parse_value(row[2], "mobility_decrease_pct", line, "mobility", diagnostics)
        if not ok:
            continue
        if key in mobility:
            duplicates.append(("mobility", key[0], key[1]))
            continue
        mobility[key] = mob

    return RawSources(cases, environment, mobility, diagnostics, duplicates)


def _interpolate_interior(values: np.ndarray, gap_limit: int) -> np.ndarray:
    """Fill interior nan runs of length <= gap_limit linearly; leave edges."""
    v = values.copy()
    missing = np.isnan(v)
    n = v.size
    i = 0
    while i < n:
        if not missing[i]:
            i += 1
            continue
        j = i
        while j < n and missing[j]:
            j += 1
        run = j - i
        if i > 0 and j < n and run <= gap_limit:
            left, right = v[i - 1], v[j]
            steps = np.arange(1, run + 1) / (run + 1)
            v[i:j] = left + (right - left) * steps
        i = j
    return v


def build_panel(
    raw: RawSources,
    threshold: float = DEFAULT_THRESHOLD,
    window: tuple[date, date] = DEFAULT_WINDOW,
    max_missing_frac: float = DEFAULT_MAX_MISSING_FRAC,
    gap_limit: int = DEFAULT_GAP_LIMIT,
) -> tuple[Panel, list[Diagnostic]]:
    """Join the parsed sources into a panel, applying inclusion rules.

    A province is kept only when its cumulative cases strictly exceed the
    threshold and the fraction of study-window days lacking any field (before
    interpolation) is at most max_missing_frac.  Returns the panel and
    build-stage diagnostics for dropped provinces.
    """
    if raw.duplicates:
        src, prov, day = raw.duplicates[0]
        raise PanelError(
            f"duplicate (province, date) key in {src}: {prov} {day.isoformat()}"
            + (f" and {len(raw.duplicates) - 1} more" if len(raw.duplicates) > 1 else "")
        )

    window_days = (window[1] - window[0]).days + 1
    notes: list[Diagnostic] = []
    provinces = sorted({p for p, _ in raw.cases})
    rows: list[ObservationRow] = []
    kept: list[str] = []

    for prov in provinces:
        days = sorted(d for p, d in raw.cases if p == prov)
        cumulative = sum(
            raw.cases[(prov, d)][1] or 0.0 for d in days if raw.cases[(prov, d)][1] is not None
        )
        if not cumulative > threshold:
            notes.append(
                Diagnostic(None, "build", f"{prov}: cumulative cases {cumulative:g} below threshold")
            )
            continue

        candidates = [
            d
            for d in days
            if raw.cases[(prov, d)][1] is not None and raw.cases[(prov, d)][2] is not None
        ]
        if not candidates:
            notes.append(Diagnostic(None, "build", f"{prov}: no days with both cases and tests"))
            continue
        d0, d1 = candidates[0], candidates[-1]
        axis = [d0 + timedelta(days=i) for i in range((d1 - d0).days + 1)]
        n_axis = len(axis)

        def series(getter) -> np.ndarray:
            out = np.full(n_axis, np.nan)
            for i, d in enumerate(axis):
                val = getter(d)
                if val is not None:
                    out[i] = val
            return out

        cases_v = series(lambda d: raw.cases.get((prov, d), (None, None, None))[1])
        tests_v = series(lambda d: raw.cases.get((prov, d), (None, None, None))[2])
        temp_v = series(lambda d: raw.environment.get((prov, d), (None, None, None))[0])
        hum_v = series(lambda d: raw.environment.get((prov, d), (None, None, None))[1])
        pm_v = series(lambda d: raw.environment.get((prov, d), (None, None, None))[2])
        mob_v = series(lambda d: raw.mobility.get((prov, d)))

        stacked = np.vstack([cases_v, tests_v, temp_v, hum_v, pm_v, mob_v])
        complete_before = int(np.sum(np.all(np.isfinite(stacked), axis=0)))
        missing_frac = 1.0 - complete_before / window_days
        if missing_frac > max_missing_frac:
            notes.append(
                Diagnostic(
                    None,
                    "build",
                    f"{prov}: coverage {complete_before}/{window_days} days "
                    f"(missing fraction {missing_frac:.3f} exceeds {max_missing_frac})",
                )
            )
            continue

        # Only environment fields may be interpolated, and only interior gaps.
        temp_v = _interpolate_interior(temp_v, gap_limit)
        hum_v = _interpolate_interior(hum_v, gap_limit)
        pm_v = _interpolate_interior(pm_v, gap_limit)

        stacked = np.vstack([cases_v, tests_v, temp_v, hum_v, pm_v, mob_v])
        keep_day = np.all(np.isfinite(stacked), axis=0)
        if not np.any(keep_day):
            notes.append(Diagnostic(None, "build", f"{prov}: no complete days after join"))
            continue

        for i, d in enumerate(axis):
            if not keep_day[i]:
                continue
            region = raw.cases[(prov, d)][0] if (prov, d) in raw.cases else ""
            rows.append(
                ObservationRow(
                    d, prov, region, cases_v[i], tests_v[i],
                    temp_v[i], hum_v[i], pm_v[i], mob_v[i],
                )
            )
        kept.append(prov)

    if not kept:
        raise PanelError("no provinces qualify")
    rows.sort(key=lambda r: (r.province, r.date))
    return Panel(rows, kept, window), notes


def _stats(values: np.ndarray) -> tuple[float, float, float, float]:
    sd = float(np.std(values, ddof=1)) if values.size > 1 else 0.0
    return float(np.mean(values)), sd, float(np.min(values)), float(np.max(values))


def summarize_panel(
    panel: Panel, rts: dict[str, "object"] | None = None
) -> SummaryTable:
    """Pooled summary statistics over all provinces and days (sample SD).

    When reproductive-number series are supplied, a final "rt" row pools
    every defined estimate.
    """
    if not panel.rows:
        raise PanelError("empty panel")
    pools = {
        "daily_cases": np.array([r.new_cases for r in panel.rows]),
        "daily_tests": np.array([r.new_tests for r in panel.rows]),
        "temperature_c": np.array([r.temperature_c for r in panel.rows]),
        "humidity_pct": np.array([r.humidity_pct for r in panel.rows]),
        "pm25": np.array([r.pm25 for r in panel.rows]),
        "mobility_decrease_pct": np.array([r.mobility_decrease_pct for r in panel.rows]),
    }
    variables = list(SUMMARY_ORDER)
    stats = {name: _stats(pools[name]) for name in variables}
    if rts is not None:
        pooled = np.concatenate([series.rt[series.defined()] for series in rts.values()])
        if pooled.size:
            variables.append("rt")
            stats["rt"] = _stats(pooled)
    return SummaryTable(variables, stats)


def read_panel_csv(path: str) -> Panel:
    """Load a previously written panel file (the `ingest` command's output)."""
    header = CASE_HEADER + ENV_HEADER[2:] + MOBILITY_HEADER[2:]
    rows: list[ObservationRow] = []
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            raw_rows = [(i + 1, row) for i, row in enumerate(reader)]
    except OSError as exc:
        raise PanelError(f"cannot read panel file: {exc}") from exc
    raw_rows = [(ln, row) for ln, row in raw_rows if row and not row[0].startswith("#")]
    if not raw_rows:
        raise PanelError(f"panel file {path} is empty")
    if [c.strip() for c in raw_rows[0][1]] != header:
        raise PanelError(f"panel file {path} header mismatch: expected {','.join(header)}")
    for line, row in raw_rows[1:]:
        if len(row) != len(header):
            raise PanelError(f"panel file {path} line {line}: wrong field count")
        try:
            rows.append(
                ObservationRow(
                    date.fromisoformat(row[0].strip()),
                    row[1].strip(),
                    row[2].strip(),
                    *[float(v) for v in row[3:]],
                )
            )
        except ValueError as exc:
            raise PanelError(f"panel file {path} line {line}: {exc}") from exc
    if not rows:
        raise PanelError(f"panel file {path} has no data rows")
    rows.sort(key=lambda r: (r.province, r.date))
    provinces = sorted({r.province for r in rows})
    window = (min(r.date for r in rows), max(r.date for r in rows))
    return Panel(rows, provinces, window)
