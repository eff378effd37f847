"""CSV formats: curve datasets and raw stock prices.

Curve CSV: header ``id,response,t_0,...,t_{G-1}`` where the t columns hold
the grid points; each row is one observation. Stock CSV: columns
``ticker,day,price,month`` with month in {1, 2}. Floats are written with
``repr`` so a write/read round trip is bit-exact.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .errors import DomainError, ParseError
from .funcore import FunctionalDataset, Grid, GridFunction


def _parse_float(cell: str, row: int, col: int, path) -> float:
    try:
        return float(cell)
    except ValueError:
        raise ParseError(
            f"{path}: row {row}, column {col}: {cell!r} is not a number"
        ) from None


def save_curves_csv(path, dataset: FunctionalDataset) -> None:
    """Write a dataset in the curve CSV format."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "response"] + [repr(float(t)) for t in dataset.grid.points])
        for i in range(dataset.n):
            writer.writerow(
                [str(i), repr(float(dataset.responses[i]))]
                + [repr(float(v)) for v in dataset.curves[i]]
            )


def load_curves_csv(path) -> FunctionalDataset:
    """Read a curve CSV; the grid must be uniform on [0, 1] within 1e-9."""
    path = Path(path)
    if not path.exists():
        raise ParseError(f"{path}: file not found")
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError(f"{path}: empty file")
    header = rows[0]
    if len(header) < 4:
        raise ParseError(f"{path}: header needs id, response, and at least two grid points")
    points = [_parse_float(cell, 0, j, path) for j, cell in enumerate(header[2:], start=2)]
    try:
        grid = Grid(np.array(points))
    except DomainError as exc:
        raise ParseError(f"{path}: bad grid in header: {exc}") from exc
    if len(rows) == 1:
        raise ParseError(f"{path}: no data rows")
    G = grid.size
    curves = np.empty((len(rows) - 1, G))
    responses = np.empty(len(rows) - 1)
    for i, row in enumerate(rows[1:], start=1):
        if len(row) != G + 2:
            raise ParseError(
                f"{path}: row {i} has {len(row)} columns, expected {G + 2}"
            )
        responses[i - 1] = _parse_float(row[1], i, 1, path)
        for j in range(G):
            curves[i - 1, j] = _parse_float(row[2 + j], i, 2 + j, path)
    return FunctionalDataset(grid, curves, responses, path.stem)


def stock_transform(prices_month1, prices_month2, grid: Grid) -> tuple[GridFunction, float]:
    """Cumulative-return curve for month one and the month-two return.

    Trading days are mapped linearly onto [0, 1] and the return curve is
    linearly interpolated onto `grid`.
    """
    p1 = np.asarray(prices_month1, dtype=float)
    p2 = np.asarray(prices_month2, dtype=float)
    if p1.size == 0 or p2.size == 0:
        raise DomainError("both monthly price series must be nonempty")
    if p1[0] == 0.0 or p2[0] == 0.0:
        raise DomainError("initial price of a month is zero; returns undefined")
    returns = (p1 - p1[0]) / p1[0]
    if p1.size == 1:
        values = np.full(grid.size, returns[0])
    else:
        days = np.linspace(0.0, 1.0, p1.size)
        values = np.interp(grid.points, days, returns)
    y = float((p2[-1] - p2[0]) / p2[0])
    return GridFunction(grid, values), y


def load_stock_csv(path) -> dict[str, tuple[list[float], list[float]]]:
    """Read a stock CSV into per-ticker price series, (month 1, month 2),
    each ordered by day."""
    path = Path(path)
    if not path.exists():
        raise ParseError(f"{path}: file not found")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        rows = list(reader)
    if not rows:
        raise ParseError(f"{path}: empty file")
    header = [h.strip().lower() for h in rows[0]]
    required = ("ticker", "day", "price", "month")
    if any(name not in header for name in required):
        raise ParseError(f"{path}: header must contain {', '.join(required)}")
    idx = {name: header.index(name) for name in required}
    series: dict[str, dict[int, list[tuple[int, float]]]] = {}
    for i, row in enumerate(rows[1:], start=1):
        if len(row) != len(header):
            raise ParseError(f"{path}: row {i} has {len(row)} columns, expected {len(header)}")
        ticker = row[idx["ticker"]].strip()
        day = int(_parse_float(row[idx["day"]], i, idx["day"], path))
        price = _parse_float(row[idx["price"]], i, idx["price"], path)
        month = int(_parse_float(row[idx["month"]], i, idx["month"], path))
        if month not in (1, 2):
            raise ParseError(f"{path}: row {i}: month must be 1 or 2, got {month}")
        series.setdefault(ticker, {1: [], 2: []})[month].append((day, price))
    out = {}
    for ticker, months in series.items():
        if not months[1] or not months[2]:
            raise ParseError(f"{path}: ticker {ticker!r} is missing a month of prices")
        out[ticker] = tuple(
            [price for _, price in sorted(months[m])] for m in (1, 2)
        )
    return out


def load_sector_dataset(path, grid: Grid) -> FunctionalDataset:
    """Build a sector's functional dataset from its stock CSV: one curve
    and response per ticker, ordered by ticker name."""
    series = load_stock_csv(path)
    curves = []
    responses = []
    for ticker in sorted(series):
        p1, p2 = series[ticker]
        curve, y = stock_transform(p1, p2, grid)
        curves.append(curve.values)
        responses.append(y)
    return FunctionalDataset(grid, np.array(curves), np.array(responses), Path(path).stem)
