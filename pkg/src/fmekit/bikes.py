"""Converter for the Washington, D.C. day-level bike rental CSV.

Turns the raw UCI ``day.csv`` (one row per day, 2011-2012, normally
731 rows) into the column naming and units this package's examples and
acceptance checks expect. The raw file is not bundled; download it from
the UCI Machine Learning Repository ("Bike Sharing Dataset") and run
``fmekit fetch-bikes --source day.csv --out data/``.

Conventions applied:

* ``temp`` is de-normalized to degrees Celsius (raw value times 41,
  the divisor documented by the dataset authors); ``windspeed`` is
  scaled by 67 likewise. ``hum`` is kept as a 0-1 proportion and
  renamed ``humidity``.
* ``season`` 1-4 become winter/spring/summer/fall; ``weathersit``
  1/2/3 become clear/misty/rain (the rare worst category folds into
  rain); ``holiday`` and ``workingday`` become no/yes.
* ``weekday`` codes are labeled Sunday..Saturday after shifting by one
  ((code + 1) mod 7), matching the labeling under which the three
  day-of-week values with 105 occurrences are Sunday, Monday and
  Tuesday.
* ``yr`` becomes the categorical ``year`` with levels "0" (2011) and
  "1" (2012); ``cnt`` becomes the numeric target ``count``.
* ``instant``, ``dteday``, ``mnth``, ``atemp``, ``casual`` and
  ``registered`` are dropped.
"""

from __future__ import annotations

import csv
import json
import os

from fmekit.dataset import ColumnKind, Dataset, save_csv
from fmekit.errors import ValidationError

EXPECTED_ROWS = 731

DAYNAMES = ("Sunday", "Monday", "Tuesday", "Wednesday", "Thursday", "Friday", "Saturday")
SEASONS = {"1": "winter", "2": "spring", "3": "summer", "4": "fall"}
WEATHER = {"1": "clear", "2": "misty", "3": "rain", "4": "rain"}
YES_NO = {"0": "no", "1": "yes"}

_REQUIRED = ("season", "yr", "holiday", "weekday", "workingday",
             "weathersit", "temp", "hum", "windspeed", "cnt")

BIKES_SCHEMA = {
    "season": "categorical",
    "year": "categorical",
    "holiday": "categorical",
    "weekday": "categorical",
    "workingday": "categorical",
    "weather": "categorical",
    "temp": "numeric",
    "humidity": "numeric",
    "windspeed": "numeric",
    "count": "numeric",
}


def _code(table: dict, raw: str, column: str, row: int) -> str:
    try:
        return table[raw.strip()]
    except KeyError:
        raise ValidationError(
            f"row {row}: unexpected {column} code {raw!r}"
        ) from None


def _num(raw: str, column: str, row: int) -> float:
    try:
        return float(raw)
    except ValueError:
        raise ValidationError(f"row {row}: non-numeric {column} cell {raw!r}") from None


def convert_day_csv(source_path, out_dir) -> dict:
    """Read a raw ``day.csv`` and write ``bikes.csv`` plus
    ``bikes.schema.json`` into ``out_dir``.

    Returns a dict with the written paths, the row count, and any
    warnings (a row count other than 731 is reported, not rejected).
    """
    with open(source_path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in _REQUIRED if c not in header]
        if missing:
            raise ValidationError(
                f"source file lacks required columns: {', '.join(missing)}"
            )
        cols: dict[str, list] = {name: [] for name in BIKES_SCHEMA}
        for i, rec in enumerate(reader, start=1):
            cols["season"].append(_code(SEASONS, rec["season"], "season", i))
            cols["year"].append(rec["yr"].strip())
            cols["holiday"].append(_code(YES_NO, rec["holiday"], "holiday", i))
            wd = rec["weekday"].strip()
            if wd not in {"0", "1", "2", "3", "4", "5", "6"}:
                raise ValidationError(f"row {i}: unexpected weekday code {wd!r}")
            cols["weekday"].append(DAYNAMES[(int(wd) + 1) % 7])
            cols["workingday"].append(_code(YES_NO, rec["workingday"], "workingday", i))
            cols["weather"].append(_code(WEATHER, rec["weathersit"], "weathersit", i))
            cols["temp"].append(41.0 * _num(rec["temp"], "temp", i))
            cols["humidity"].append(_num(rec["hum"], "hum", i))
            cols["windspeed"].append(67.0 * _num(rec["windspeed"], "windspeed", i))
            cols["count"].append(_num(rec["cnt"], "cnt", i))

    n = len(cols["count"])
    if n == 0:
        raise ValidationError("source file has no data rows")

    data = Dataset(
        "bikes",
        [
            (name, ColumnKind.CATEGORICAL if kind == "categorical" else ColumnKind.NUMERIC,
             cols[name])
            for name, kind in BIKES_SCHEMA.items()
        ],
        target="count",
    )

    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, "bikes.csv")
    schema_path = os.path.join(out_dir, "bikes.schema.json")
    save_csv(data, csv_path)
    with open(schema_path, "w", encoding="utf-8") as fh:
        json.dump(BIKES_SCHEMA, fh, indent=2)
        fh.write("\n")

    warnings = []
    if n != EXPECTED_ROWS:
        warnings.append(f"expected {EXPECTED_ROWS} rows, got {n}")
    return {
        "csv_path": csv_path,
        "schema_path": schema_path,
        "n_rows": n,
        "warnings": warnings,
    }
