"""Reading and writing the exchanged CSV, JSON and coordinate-list files."""

from __future__ import annotations

import json
import os
from collections.abc import Sequence
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd
from scipy import sparse

from .errors import ValidationError
from .netbuild import InteractionNetwork, PublicationRecord, ScholarProfile

PUBLICATION_COLUMNS = ("paper_id", "year", "author_ids")
SCHOLAR_COLUMNS = (
    "scholar_id",
    "female",
    "african_american",
    "first_pub_year",
    "citations_by_year",
    "fields",
    "department_id",
    "ranking_bucket",
)


def _read_rows(
    path: str | os.PathLike, columns: Sequence[str], label: str
) -> list[dict]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"File not found: {path}")
    if path.suffix.lower() == ".json":
        with open(path) as f:
            rows = json.load(f)
        present = set().union(*(r.keys() for r in rows)) if rows else set(columns)
    else:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False)
        rows = frame.to_dict("records")
        present = set(frame.columns)
    missing = [c for c in columns if c not in present]
    if missing:
        raise ValidationError(
            f"{label} file is missing column(s): {', '.join(missing)}"
        )
    return rows


def _split_tags(value: Any) -> frozenset[str]:
    if isinstance(value, (list, tuple, set, frozenset)):
        return frozenset(str(v) for v in value)
    text = str(value).strip()
    return frozenset(t.strip() for t in text.split(";") if t.strip())


def _parse_bool(value: Any) -> bool:
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in {"1", "true", "yes", "y", "t"}:
        return True
    if text in {"0", "false", "no", "n", "f", ""}:
        return False
    raise ValidationError(f"Cannot read {value!r} as a boolean")


def _parse_citations(value: Any) -> dict[int, int]:
    if isinstance(value, dict):
        return {int(k): int(v) for k, v in value.items()}
    text = str(value).strip()
    if not text:
        return {}
    out = {}
    for item in text.split(";"):
        year, _, count = item.partition(":")
        out[int(year)] = int(count)
    return out


def _parse_probability(value: Any) -> float | None:
    if value is None or (isinstance(value, str) and not value.strip()):
        return None
    prob = float(value)
    return None if np.isnan(prob) else prob


def read_publications(
    path: str | os.PathLike, year_range: tuple[int, int] | None = None
) -> list[PublicationRecord]:
    """Load publication records from CSV or JSON.

    CSV author lists are ";"-separated; JSON may use lists. Records dated
    outside ``year_range`` are rejected.
    """
    records = []
    for row in _read_rows(path, PUBLICATION_COLUMNS, "Publications"):
        prob = row.get("covid_topic_prob")
        record = PublicationRecord(
            paper_id=str(row["paper_id"]),
            year=int(row["year"]),
            author_ids=_split_tags(row["author_ids"]),
            covid_topic_prob=_parse_probability(prob),
        )
        if year_range and not year_range[0] <= record.year <= year_range[1]:
            raise ValidationError(
                f"Paper {record.paper_id} year {record.year} outside data range "
                f"{year_range[0]}-{year_range[1]}"
            )
        records.append(record)
    return records


def read_scholars(path: str | os.PathLike) -> list[ScholarProfile]:
    """Load scholar profiles from CSV or JSON."""
    profiles = []
    for row in _read_rows(path, SCHOLAR_COLUMNS[:4], "Scholars"):
        profiles.append(
            ScholarProfile(
                scholar_id=str(row["scholar_id"]),
                female=_parse_bool(row["female"]),
                african_american=_parse_bool(row["african_american"]),
                first_pub_year=int(row["first_pub_year"]),
                citations_by_year=_parse_citations(row.get("citations_by_year", "")),
                fields=_split_tags(row.get("fields", "")),
                department_id=str(row.get("department_id", "")),
                ranking_bucket=str(row.get("ranking_bucket", "") or "Top10"),
            )
        )
    return profiles


def write_network(
    path: str | os.PathLike, network: InteractionNetwork | sparse.spmatrix
) -> None:
    """Coordinate list, one "i j weight" line per non-zero, 0-based."""
    matrix = network.matrix if isinstance(network, InteractionNetwork) else network
    coo = sparse.coo_matrix(matrix)
    order = np.lexsort((coo.col, coo.row))
    with open(path, "w") as f:
        f.write(f"# n={coo.shape[0]}\n")
        for k in order:
            f.write(f"{coo.row[k]} {coo.col[k]} {coo.data[k]:.17g}\n")


def read_matrix(path: str | os.PathLike, n: int | None = None) -> sparse.csr_matrix:
    """Read a coordinate list into a square CSR matrix.

    The size comes from ``n``, else the "# n=" header, else the largest index.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"File not found: {path}")
    header_n = None
    with open(path) as f:
        first = f.readline()
    if first.startswith("# n="):
        header_n = int(first[4:])
    frame = pd.read_csv(
        path, sep=r"\s+", comment="#", header=None, names=["i", "j", "weight"]
    )
    size = n if n is not None else header_n
    if size is None:
        size = int(frame[["i", "j"]].to_numpy().max()) + 1 if len(frame) else 0
    if len(frame) and frame[["i", "j"]].to_numpy().max() >= size:
        raise ValidationError(f"Network {path} references agents beyond n={size}")
    return sparse.coo_matrix(
        (frame["weight"].to_numpy(float), (frame["i"], frame["j"])), shape=(size, size)
    ).tocsr()


def read_network(
    path: str | os.PathLike, n: int | None = None, ids: Sequence[str] | None = None
) -> InteractionNetwork:
    """Read a row-normalized network written by :func:`write_network`."""
    matrix = read_matrix(path, n)
    return InteractionNetwork(matrix, tuple(ids) if ids is not None else None)


def write_frame(path: str | os.PathLike, frame: pd.DataFrame) -> None:
    """CSV with a leading scholar_id column."""
    frame.to_csv(path, index=True, index_label="scholar_id", float_format="%.17g")


def read_frame(path: str | os.PathLike) -> pd.DataFrame:
    """Read a matrix CSV; a ``scholar_id`` column becomes the index."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"File not found: {path}")
    frame = pd.read_csv(path)
    if "scholar_id" in frame.columns:
        frame["scholar_id"] = frame["scholar_id"].astype(str)
        frame = frame.set_index("scholar_id")
    return frame.astype(float)


def write_roster(path: str | os.PathLike, ids: Sequence[str]) -> None:
    pd.DataFrame({"index": range(len(ids)), "scholar_id": list(ids)}).to_csv(
        path, index=False
    )


def read_roster(path: str | os.PathLike) -> list[str]:
    frame = pd.read_csv(path, dtype={"scholar_id": str})
    return frame.sort_values("index")["scholar_id"].tolist()


def write_outcomes(
    path: str | os.PathLike, ids: Sequence[str], y: np.ndarray
) -> None:
    pd.DataFrame({"scholar_id": list(ids), "y": np.asarray(y, dtype=int)}).to_csv(
        path, index=False
    )


def read_outcomes(path: str | os.PathLike) -> pd.Series:
    frame = pd.read_csv(path, dtype={"scholar_id": str})
    if "y" not in frame.columns:
        raise ValidationError("Outcomes file is missing column: y")
    if (frame["y"] < 0).any():
        raise ValidationError("Outcomes must be non-negative integers")
    index = frame["scholar_id"] if "scholar_id" in frame.columns else None
    return pd.Series(frame["y"].astype(int).to_numpy(), index=index, name="y")


def _to_builtin(obj: Any) -> Any:
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return None if np.isnan(obj) else float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"Object of type {type(obj).__name__} is not JSON serializable")


def write_json(path: str | os.PathLike, data: Any) -> None:
    """Deterministic JSON: sorted keys, fixed indentation."""
    with open(path, "w") as f:
        json.dump(data, f, indent=2, sort_keys=True, default=_to_builtin)
        f.write("\n")


def read_json(path: str | os.PathLike) -> Any:
    with open(path) as f:
        return json.load(f)
