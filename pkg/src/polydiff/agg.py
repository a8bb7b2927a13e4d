"""Composable aggregation primitives (Count, Sum, Average, Deviate, Bin, Label).

Each primitive is a commutative monoid: a freshly constructed aggregator is
the identity and ``combine`` (also ``+``) merges two states. The usual way to
run one in parallel is to ``zero()`` a template per partition, ``fill`` it with
that partition's records and add the results.

Quantities are either a field name (looked up as ``datum[name]`` or
``datum.name``) or a callable. Only field names survive JSON serialization.
"""

from __future__ import annotations

import copy
import json
import math
from typing import Any, Callable

__all__ = [
    "Aggregator", "Count", "Sum", "Average", "Deviate", "Bin", "Label",
    "AggregationError", "CombineError", "FillError", "from_json", "render",
]


class AggregationError(ValueError):
    pass


class CombineError(AggregationError):
    pass


class FillError(AggregationError):
    pass


def _extract(quantity, datum):
    if callable(quantity):
        return quantity(datum)
    if isinstance(datum, dict):
        return datum[quantity]
    return getattr(datum, quantity)


def _qname(quantity):
    return quantity if isinstance(quantity, str) else None


def _close(x: float, y: float, tol: float) -> bool:
    if x == y or (math.isnan(x) and math.isnan(y)):
        return True
    return abs(x - y) <= tol * max(1.0, abs(x), abs(y))


class Aggregator:
    type_name = ""
    entries: int

    def fill(self, datum) -> "Aggregator":
        raise NotImplementedError

    def zero(self) -> "Aggregator":
        raise NotImplementedError

    def combine(self, other: "Aggregator", path: str = "$") -> "Aggregator":
        if type(other) is not type(self):
            raise CombineError(f"{path}: cannot combine {self.type_name} with {other.type_name}")
        return self._combine(other, path)

    def __add__(self, other):
        return self.combine(other)

    def _data(self):
        raise NotImplementedError

    def to_dict(self) -> dict:
        return {"type": self.type_name, "data": self._data()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))

    def state_equal(self, other: "Aggregator", tol: float = 0.0) -> bool:
        return type(other) is type(self) and self._state_equal(other, tol)

    def __eq__(self, other):
        return isinstance(other, Aggregator) and self.state_equal(other)

    def __repr__(self):
        return self.to_json()


class Count(Aggregator):
    type_name = "Count"

    def __init__(self, entries: int = 0):
        self.entries = entries

    def fill(self, datum=None):
        self.entries += 1
        return self

    def zero(self):
        return Count()

    def _combine(self, other, path):
        return Count(self.entries + other.entries)

    def _data(self):
        return self.entries

    def _state_equal(self, other, tol):
        return self.entries == other.entries


class Sum(Aggregator):
    type_name = "Sum"

    def __init__(self, quantity, entries: int = 0, sum: float = 0.0):
        self.quantity = quantity
        self.entries = entries
        self.sum = sum

    def fill(self, datum):
        try:
            x = float(_extract(self.quantity, datum))
        except Exception as exc:
            raise FillError(f"Sum quantity failed: {exc!r}") from exc
        self.entries += 1
        self.sum += x
        return self

    def zero(self):
        return Sum(self.quantity)

    def _combine(self, other, path):
        return Sum(self.quantity, self.entries + other.entries, self.sum + other.sum)

    def _data(self):
        return {"entries": self.entries, "sum": self.sum, "quantity": _qname(self.quantity)}

    def _state_equal(self, other, tol):
        return self.entries == other.entries and _close(self.sum, other.sum, tol)


class Average(Aggregator):
    type_name = "Average"

    def __init__(self, quantity, entries: int = 0, mean: float = 0.0):
        self.quantity = quantity
        self.entries = entries
        self.mean = mean

    def fill(self, datum):
        try:
            x = float(_extract(self.quantity, datum))
        except Exception as exc:
            raise FillError(f"Average quantity failed: {exc!r}") from exc
        self.entries += 1
        self.mean += (x - self.mean) / self.entries
        return self

    def zero(self):
        return Average(self.quantity)

    def _combine(self, other, path):
        if other.entries == 0:
            return copy.deepcopy(self)
        if self.entries == 0:
            return copy.deepcopy(other)
        n = self.entries + other.entries
        # symmetric in (self, other), so combine is exactly commutative
        mean = (self.entries * self.mean + other.entries * other.mean) / n
        return Average(self.quantity, n, mean)

    def _data(self):
        return {"entries": self.entries, "mean": self.mean, "quantity": _qname(self.quantity)}

    def _state_equal(self, other, tol):
        return self.entries == other.entries and _close(self.mean, other.mean, tol)


class Deviate(Aggregator):
    """Mean and population variance, accumulated as (entries, mean, M2)."""

    type_name = "Deviate"

    def __init__(self, quantity, entries: int = 0, mean: float = 0.0, m2: float = 0.0):
        self.quantity = quantity
        self.entries = entries
        self.mean = mean
        self.m2 = m2

    @property
    def variance(self) -> float:
        return self.m2 / self.entries if self.entries else 0.0

    def fill(self, datum):
        try:
            x = float(_extract(self.quantity, datum))
        except Exception as exc:
            raise FillError(f"Deviate quantity failed: {exc!r}") from exc
        self.entries += 1
        delta = x - self.mean
        self.mean += delta / self.entries
        self.m2 += delta * (x - self.mean)
        return self

    def zero(self):
        return Deviate(self.quantity)

    def _combine(self, other, path):
        if other.entries == 0:
            return copy.deepcopy(self)
        if self.entries == 0:
            return copy.deepcopy(other)
        na, nb = self.entries, other.entries
        n = na + nb
        mean = (na * self.mean + nb * other.mean) / n
        delta = other.mean - self.mean
        m2 = self.m2 + other.m2 + delta * delta * (na * nb) / n
        return Deviate(self.quantity, n, mean, m2)

    def _data(self):
        return {
            "entries": self.entries,
            "mean": self.mean,
            "m2": self.m2,
            "variance": self.variance,
            "quantity": _qname(self.quantity),
        }

    def _state_equal(self, other, tol):
        return (
            self.entries == other.entries
            and _close(self.mean, other.mean, tol)
            and _close(self.m2, other.m2, tol)
        )


class Bin(Aggregator):
    """Fixed-width histogram over [low, high) with under/overflow and NaN counters.

    ``value`` is the template aggregator placed in every bin (Count by default).
    Values that are not finite, or whose quantity raises, go to ``nanflow``.
    """

    type_name = "Bin"

    def __init__(self, num: int, low: float, high: float, quantity, value: Aggregator | None = None):
        if num < 1:
            raise AggregationError(f"Bin needs num >= 1, got {num}")
        if not low < high:
            raise AggregationError(f"Bin needs low < high, got [{low}, {high})")
        self.num = int(num)
        self.low = float(low)
        self.high = float(high)
        self.quantity = quantity
        template = value if value is not None else Count()
        self.values = [template.zero() for _ in range(self.num)]
        self.underflow = Count()
        self.overflow = Count()
        self.nanflow = Count()
        self.entries = 0

    def bin_index(self, x: float) -> int:
        i = int(math.floor(self.num * (x - self.low) / (self.high - self.low)))
        return min(max(i, 0), self.num - 1)

    def edges(self) -> list[float]:
        width = (self.high - self.low) / self.num
        return [self.low + i * width for i in range(self.num)] + [self.high]

    def fill(self, datum):
        self.entries += 1
        try:
            x = float(_extract(self.quantity, datum))
        except Exception:
            self.nanflow.fill()
            return self
        if not math.isfinite(x):
            self.nanflow.fill()
        elif x < self.low:
            self.underflow.fill()
        elif x >= self.high:
            self.overflow.fill()
        else:
            self.values[self.bin_index(x)].fill(datum)
        return self

    def counts(self) -> list[int]:
        return [v.entries for v in self.values]

    def _shell(self) -> "Bin":
        out = Bin.__new__(Bin)
        out.num, out.low, out.high, out.quantity = self.num, self.low, self.high, self.quantity
        return out

    def zero(self):
        out = self._shell()
        out.values = [v.zero() for v in self.values]
        out.underflow, out.overflow, out.nanflow = Count(), Count(), Count()
        out.entries = 0
        return out

    def _combine(self, other, path):
        if (self.num, self.low, self.high) != (other.num, other.low, other.high):
            raise CombineError(
                f"{path}: Bin({self.num}, {self.low}, {self.high}) vs "
                f"Bin({other.num}, {other.low}, {other.high})"
            )
        out = self._shell()
        out.values = [
            a.combine(b, f"{path}.values[{i}]") for i, (a, b) in enumerate(zip(self.values, other.values))
        ]
        out.underflow = self.underflow.combine(other.underflow, f"{path}.underflow")
        out.overflow = self.overflow.combine(other.overflow, f"{path}.overflow")
        out.nanflow = self.nanflow.combine(other.nanflow, f"{path}.nanflow")
        out.entries = self.entries + other.entries
        return out

    def _data(self):
        return {
            "num": self.num,
            "low": self.low,
            "high": self.high,
            "entries": self.entries,
            "quantity": _qname(self.quantity),
            "values": [v.to_dict() for v in self.values],
            "underflow": self.underflow.to_dict(),
            "overflow": self.overflow.to_dict(),
            "nanflow": self.nanflow.to_dict(),
        }

    def _state_equal(self, other, tol):
        return (
            (self.num, self.low, self.high, self.entries) == (other.num, other.low, other.high, other.entries)
            and all(a.state_equal(b, tol) for a, b in zip(self.values, other.values))
            and self.underflow.state_equal(other.underflow)
            and self.overflow.state_equal(other.overflow)
            and self.nanflow.state_equal(other.nanflow)
        )


class Label(Aggregator):
    """Named collection of aggregators; every fill goes to every child."""

    type_name = "Label"

    def __init__(self, **children: Aggregator):
        if not children:
            raise AggregationError("Label needs at least one child")
        self.children = dict(children)
        self.entries = 0

    def __getitem__(self, name: str) -> Aggregator:
        return self.children[name]

    def fill(self, datum):
        self.entries += 1
        for child in self.children.values():
            child.fill(datum)
        return self

    def zero(self):
        return Label(**{k: v.zero() for k, v in self.children.items()})

    def _combine(self, other, path):
        if set(self.children) != set(other.children):
            diff = sorted(set(self.children) ^ set(other.children))
            raise CombineError(f"{path}: Label children differ at {diff}")
        out = Label(**{k: v.combine(other.children[k], f"{path}[{k!r}]") for k, v in self.children.items()})
        out.entries = self.entries + other.entries
        return out

    def _data(self):
        return {"entries": self.entries, "children": {k: v.to_dict() for k, v in self.children.items()}}

    def _state_equal(self, other, tol):
        return (
            self.entries == other.entries
            and set(self.children) == set(other.children)
            and all(v.state_equal(other.children[k], tol) for k, v in self.children.items())
        )


def _need(doc, key, path, kind=None):
    if not isinstance(doc, dict) or key not in doc:
        raise AggregationError(f"{path}: missing key {key!r}")
    val = doc[key]
    if kind is not None and not isinstance(val, kind):
        raise AggregationError(f"{path}.{key}: expected {getattr(kind, '__name__', kind)}")
    return val


_NUM = (int, float)


def _from_dict(doc: Any, path: str = "$") -> Aggregator:
    kind = _need(doc, "type", path, str)
    data = _need(doc, "data", path)
    dp = f"{path}.data"
    if kind == "Count":
        if not isinstance(data, int) or isinstance(data, bool):
            raise AggregationError(f"{dp}: Count data must be an integer")
        return Count(data)
    if kind == "Sum":
        return Sum(data.get("quantity") if isinstance(data, dict) else None,
                   _need(data, "entries", dp, int), float(_need(data, "sum", dp, _NUM)))
    if kind == "Average":
        return Average(data.get("quantity") if isinstance(data, dict) else None,
                       _need(data, "entries", dp, int), float(_need(data, "mean", dp, _NUM)))
    if kind == "Deviate":
        return Deviate(data.get("quantity") if isinstance(data, dict) else None,
                       _need(data, "entries", dp, int), float(_need(data, "mean", dp, _NUM)),
                       float(_need(data, "m2", dp, _NUM)))
    if kind == "Bin":
        values = _need(data, "values", dp, list)
        num = _need(data, "num", dp, int)
        if len(values) != num:
            raise AggregationError(f"{dp}.values: expected {num} entries, got {len(values)}")
        out = Bin(num, _need(data, "low", dp, _NUM), _need(data, "high", dp, _NUM), data.get("quantity"))
        out.values = [_from_dict(v, f"{dp}.values[{i}]") for i, v in enumerate(values)]
        for name in ("underflow", "overflow", "nanflow"):
            child = _from_dict(_need(data, name, dp), f"{dp}.{name}")
            if not isinstance(child, Count):
                raise AggregationError(f"{dp}.{name}: must be a Count")
            setattr(out, name, child)
        out.entries = _need(data, "entries", dp, int)
        return out
    if kind == "Label":
        children = _need(data, "children", dp, dict)
        if not children:
            raise AggregationError(f"{dp}.children: Label needs at least one child")
        out = Label(**{k: _from_dict(v, f"{dp}.children[{k!r}]") for k, v in children.items()})
        out.entries = _need(data, "entries", dp, int)
        return out
    raise AggregationError(f"{path}.type: unknown aggregator type {kind!r}")


def from_json(text: str) -> Aggregator:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise AggregationError(f"$: invalid JSON ({exc})") from None
    return _from_dict(doc)


def from_dict(doc: dict) -> Aggregator:
    return _from_dict(doc)


# ---------------------------------------------------------------------------
# rendering


def _fmt(x: float) -> str:
    return "%.10g" % x


def _bin_rows(h: Bin) -> list[tuple[str, str, int]]:
    e = h.edges()
    rows = [(_fmt(e[i]), _fmt(e[i + 1]), c) for i, c in enumerate(h.counts())]
    rows.append(("-inf", _fmt(h.low), h.underflow.entries))
    rows.append((_fmt(h.high), "inf", h.overflow.entries))
    rows.append(("nan", "nan", h.nanflow.entries))
    return rows


def _panels(a: Aggregator) -> list[tuple[str | None, Bin]]:
    if isinstance(a, Bin):
        return [(None, a)]
    if isinstance(a, Label) and all(isinstance(c, Bin) for c in a.children.values()):
        return list(a.children.items())
    raise AggregationError(f"cannot render {a.type_name}; need a Bin or a Label of Bins")


def _render_csv(panels) -> str:
    named = panels[0][0] is not None
    lines = ["name,bin_low,bin_high,count" if named else "bin_low,bin_high,count"]
    for name, h in panels:
        for lo, hi, c in _bin_rows(h):
            lines.append(f"{name},{lo},{hi},{c}" if named else f"{lo},{hi},{c}")
    return "\n".join(lines) + "\n"


def _render_text(panels, width: int = 50) -> str:
    out = []
    for name, h in panels:
        if name is not None:
            out.append(f"== {name} ==")
        counts = h.counts()
        peak = max(counts) if any(counts) else 1
        e = h.edges()
        for i, c in enumerate(counts):
            bar = "#" * int(round(width * c / peak))
            out.append(f"[{_fmt(e[i]):>10}, {_fmt(e[i + 1]):>10}) {c:>10} |{bar}")
        out.append(f"underflow {h.underflow.entries}  overflow {h.overflow.entries}  nan {h.nanflow.entries}")
    return "\n".join(out) + "\n"


def _render_svg(panels, x_label: str, y_label: str, title: str) -> str:
    W, H = 640, 360
    ml, mr, mt, mb = 70, 20, 40, 50
    pw, ph = W - ml - mr, H - mt - mb
    total_h = H * len(panels)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{total_h}" '
        f'viewBox="0 0 {W} {total_h}" font-family="sans-serif" font-size="12">',
        f'<rect width="{W}" height="{total_h}" fill="white"/>',
    ]
    for p, (name, h) in enumerate(panels):
        y0 = p * H
        counts = h.counts()
        peak = max(counts) if any(counts) else 1
        heading = title if name is None else f"{title} - {name}" if title else name
        if heading:
            parts.append(f'<text x="{W / 2:.2f}" y="{y0 + 24:.2f}" text-anchor="middle" font-size="14">{heading}</text>')
        bw = pw / h.num
        for i, c in enumerate(counts):
            bh = ph * c / peak
            parts.append(
                f'<rect x="{ml + i * bw:.2f}" y="{y0 + mt + ph - bh:.2f}" width="{bw:.2f}" '
                f'height="{bh:.2f}" fill="#c0392b" stroke="black" stroke-width="0.5"/>'
            )
        base = y0 + mt + ph
        parts.append(f'<line x1="{ml}" y1="{base:.2f}" x2="{ml + pw}" y2="{base:.2f}" stroke="black"/>')
        parts.append(f'<line x1="{ml}" y1="{y0 + mt:.2f}" x2="{ml}" y2="{base:.2f}" stroke="black"/>')
        e = h.edges()
        step = max(1, h.num // 10)
        for i in range(0, h.num + 1, step):
            parts.append(f'<text x="{ml + i * bw:.2f}" y="{base + 16:.2f}" text-anchor="middle">{_fmt(e[i])}</text>')
        parts.append(f'<text x="{ml - 6}" y="{y0 + mt + 4:.2f}" text-anchor="end">{peak}</text>')
        parts.append(f'<text x="{ml - 6}" y="{base:.2f}" text-anchor="end">0</text>')
        parts.append(f'<text x="{ml + pw / 2:.2f}" y="{base + 38:.2f}" text-anchor="middle">{x_label}</text>')
        parts.append(
            f'<text x="16" y="{y0 + mt + ph / 2:.2f}" text-anchor="middle" '
            f'transform="rotate(-90 16 {y0 + mt + ph / 2:.2f})">{y_label}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def render(a: Aggregator, fmt: str = "text", x_label: str = "Similarity", y_label: str = "Num. pairs",
           title: str = "") -> bytes:
    panels = _panels(a)
    if fmt == "csv":
        text = _render_csv(panels)
    elif fmt == "text":
        text = _render_text(panels)
    elif fmt == "svg":
        text = _render_svg(panels, x_label, y_label, title)
    else:
        raise AggregationError(f"unknown render format {fmt!r}")
    return text.encode("utf-8")
