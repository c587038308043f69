"""Instance generation, canonical text serialization, benchmark import.

Random generation is reproducible across platforms: every instance is
drawn from a PCG64 generator seeded through ``numpy.random.SeedSequence``.
Instance ``index`` of a run seeded with ``seed`` uses
``SeedSequence((seed, index))``, so files can be regenerated one at a
time without replaying the whole stream.

Draw order per instance (fixed, do not reorder): depot coordinates,
market coordinates, then per product its market count, market subset,
prices, and (restricted variant only) quantities.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, replace
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ParseError, UnsupportedFormatError
from .model import COORD_MAX, Offer, TppInstance, Variant

PRICE_MAX = 10  # offer prices are uniform integers in [1, PRICE_MAX]
QUANTITY_MAX = 15  # restricted quantities are uniform integers in [1, QUANTITY_MAX]


@dataclass(frozen=True)
class GeneratorSpec:
    """Distribution of instances: size, variant, tightness, seed."""

    variant: Variant
    markets: int
    products: int
    lam: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.markets < 1 or self.products < 1:
            raise ValueError("markets and products must be positive")
        if self.variant is Variant.RESTRICTED:
            if self.lam is None or not (0.0 < self.lam < 1.0):
                raise ValueError("restricted instances need lambda in (0,1)")
        elif self.lam is not None:
            raise ValueError("lambda only applies to the restricted variant")

    def with_seed(self, seed: int) -> "GeneratorSpec":
        return replace(self, seed=seed)

    def spec_string(self) -> str:
        base = f"{self.variant.value}:{self.markets}x{self.products}"
        if self.lam is not None:
            return f"{base}:{self.lam}"
        return base

    @classmethod
    def parse(cls, text: str, seed: int = 0) -> "GeneratorSpec":
        """Parse compact specs like ``u:15x10`` or ``r:50x50:0.95``."""
        m = re.fullmatch(
            r"([ur])\s*:\s*(\d+)\s*x\s*(\d+)(?:\s*:\s*(0?\.\d+))?",
            text.strip().lower(),
        )
        if not m:
            raise ValueError(f"bad distribution spec {text!r}")
        variant = Variant.parse(m.group(1))
        lam = float(m.group(4)) if m.group(4) else None
        return cls(variant, int(m.group(2)), int(m.group(3)), lam, seed)


def _rng(*entropy: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def demand_from_supplies(lam: float, quantities: Sequence[int]) -> int:
    """Demand tying a product to its offered quantities.

    Exact decimal arithmetic: 0.95 * 20 + 0.05 * 40 must give exactly 21,
    not 21.000000000000004, so the ceiling never drifts by one.
    """
    if not quantities:
        raise ValueError("no quantities")
    frac = Fraction(str(lam))
    value = frac * max(quantities) + (1 - frac) * sum(quantities)
    return math.ceil(value)


def _draw_coords(rng: np.random.Generator, n: int) -> list[tuple[int, int]]:
    pts = rng.integers(0, COORD_MAX + 1, size=(n, 2))
    return [(int(x), int(y)) for x, y in pts]


def _generate_with(spec: GeneratorSpec, rng: np.random.Generator) -> TppInstance:
    M, K = spec.markets, spec.products
    depot = _draw_coords(rng, 1)[0]
    markets = tuple(_draw_coords(rng, M))
    demands: list[int] = []
    offers: dict[tuple[int, int], Offer] = {}
    for k in range(K):
        size = int(rng.integers(1, M + 1))
        subset = sorted(int(i) + 1 for i in rng.choice(M, size=size, replace=False))
        prices = [int(p) for p in rng.integers(1, PRICE_MAX + 1, size=size)]
        if spec.variant is Variant.UNRESTRICTED:
            d = 1
            for i, p in zip(subset, prices):
                offers[(i, k)] = Offer(price=p, quantity=d)
        else:
            qty = [int(q) for q in rng.integers(1, QUANTITY_MAX + 1, size=size)]
            d = demand_from_supplies(spec.lam, qty)
            for i, p, q in zip(subset, prices, qty):
                offers[(i, k)] = Offer(price=p, quantity=min(q, d))
        demands.append(d)
    return TppInstance(
        depot=depot,
        markets=markets,
        demands=tuple(demands),
        offers=offers,
        variant=spec.variant,
        lam=spec.lam,
    )


def generate_indexed(spec: GeneratorSpec, index: int) -> TppInstance:
    """Instance ``index`` of the stream rooted at ``spec.seed``."""
    return _generate_with(spec, _rng(spec.seed, index))


def generate(spec: GeneratorSpec) -> TppInstance:
    return generate_indexed(spec, 0)


def generate_many(spec: GeneratorSpec, count: int, start: int = 0) -> list[TppInstance]:
    return [generate_indexed(spec, i) for i in range(start, start + count)]


# ---------------------------------------------------------------------------
# Canonical text format
# ---------------------------------------------------------------------------
#
#   TPP 1
#   VARIANT U|R
#   MARKETS m
#   PRODUCTS k
#   LAMBDA x          (restricted only, optional)
#   DEPOT x y
#   MARKET i x y      (i = 1..m, in order)
#   DEMAND k d        (k = 1..k, in order; product ids 1-based on disk)
#   OFFER i k p q     (market-major order)
#   EOF

FORMAT_VERSION = 1


def dumps_instance(inst: TppInstance) -> str:
    lines = [f"TPP {FORMAT_VERSION}"]
    lines.append(f"VARIANT {inst.variant.value.upper()}")
    lines.append(f"MARKETS {inst.num_markets}")
    lines.append(f"PRODUCTS {inst.num_products}")
    if inst.lam is not None:
        lines.append(f"LAMBDA {inst.lam}")
    lines.append(f"DEPOT {inst.depot[0]} {inst.depot[1]}")
    for i, (x, y) in enumerate(inst.markets, start=1):
        lines.append(f"MARKET {i} {x} {y}")
    for k, d in enumerate(inst.demands, start=1):
        lines.append(f"DEMAND {k} {d}")
    for (i, k) in sorted(inst.offers):
        off = inst.offers[(i, k)]
        lines.append(f"OFFER {i} {k + 1} {off.price} {off.quantity}")
    lines.append("EOF")
    return "\n".join(lines) + "\n"


def write_instance(inst: TppInstance, path: str | Path) -> None:
    Path(path).write_text(dumps_instance(inst), encoding="ascii")


def _int_field(tok: str, what: str, lineno: int) -> int:
    try:
        return int(tok)
    except ValueError:
        raise ParseError(f"{what} must be an integer, got {tok!r}", lineno) from None


def loads_instance(text: str) -> TppInstance:
    """Parse the canonical format; errors carry 1-based line numbers."""
    lines = text.splitlines()
    pos = 0

    def next_line() -> tuple[int, list[str]]:
        nonlocal pos
        while pos < len(lines):
            pos += 1
            raw = lines[pos - 1].strip()
            if raw:
                return pos, raw.split()
        raise ParseError(
            f"file truncated after last complete line {pos}", pos or None
        )

    lineno, toks = next_line()
    if toks[0] != "TPP":
        raise UnsupportedFormatError(f"expected 'TPP' header, got {toks[0]!r}", lineno)
    if len(toks) != 2 or toks[1] != str(FORMAT_VERSION):
        raise ParseError(f"unsupported format version {toks[1:]}", lineno)

    header: dict[str, str] = {}
    while True:
        lineno, toks = next_line()
        if toks[0] in ("VARIANT", "MARKETS", "PRODUCTS", "LAMBDA"):
            if len(toks) != 2:
                raise ParseError(f"{toks[0]} takes one value", lineno)
            if toks[0] in header:
                raise ParseError(f"duplicate {toks[0]}", lineno)
            header[toks[0]] = toks[1]
            continue
        break
    for req in ("VARIANT", "MARKETS", "PRODUCTS"):
        if req not in header:
            raise ParseError(f"missing {req} before line {lineno}", lineno)
    try:
        variant = Variant.parse(header["VARIANT"])
    except ValueError as e:
        raise ParseError(str(e), lineno) from None
    M = _int_field(header["MARKETS"], "MARKETS", lineno)
    K = _int_field(header["PRODUCTS"], "PRODUCTS", lineno)
    lam = float(header["LAMBDA"]) if "LAMBDA" in header else None

    if toks[0] != "DEPOT" or len(toks) != 3:
        raise ParseError("expected 'DEPOT x y'", lineno)
    depot = (
        _int_field(toks[1], "depot x", lineno),
        _int_field(toks[2], "depot y", lineno),
    )

    markets: list[tuple[int, int]] = []
    for i in range(1, M + 1):
        lineno, toks = next_line()
        if toks[0] != "MARKET" or len(toks) != 4:
            raise ParseError(f"expected 'MARKET {i} x y'", lineno)
        if _int_field(toks[1], "market id", lineno) != i:
            raise ParseError(f"market ids must run 1..{M} in order", lineno)
        markets.append(
            (
                _int_field(toks[2], "market x", lineno),
                _int_field(toks[3], "market y", lineno),
            )
        )

    demands: list[int] = []
    for k in range(1, K + 1):
        lineno, toks = next_line()
        if toks[0] != "DEMAND" or len(toks) != 3:
            raise ParseError(f"expected 'DEMAND {k} d'", lineno)
        if _int_field(toks[1], "product id", lineno) != k:
            raise ParseError(f"product ids must run 1..{K} in order", lineno)
        demands.append(_int_field(toks[2], "demand", lineno))

    offers: dict[tuple[int, int], Offer] = {}
    while True:
        lineno, toks = next_line()
        if toks[0] == "EOF":
            break
        if toks[0] != "OFFER" or len(toks) != 5:
            raise ParseError("expected 'OFFER i k price qty' or 'EOF'", lineno)
        i = _int_field(toks[1], "offer market", lineno)
        k = _int_field(toks[2], "offer product", lineno)
        if not (1 <= i <= M):
            raise ParseError(f"offer market {i} out of range 1..{M}", lineno)
        if not (1 <= k <= K):
            raise ParseError(f"offer product {k} out of range 1..{K}", lineno)
        key = (i, k - 1)
        if key in offers:
            raise ParseError(f"duplicate offer for market {i} product {k}", lineno)
        offers[key] = Offer(
            price=_int_field(toks[3], "price", lineno),
            quantity=_int_field(toks[4], "quantity", lineno),
        )
    return TppInstance(
        depot=depot,
        markets=tuple(markets),
        demands=tuple(demands),
        offers=offers,
        variant=variant,
        lam=lam,
    )


def read_instance(path: str | Path) -> TppInstance:
    return loads_instance(Path(path).read_text(encoding="ascii"))


# ---------------------------------------------------------------------------
# Benchmark (TSPLIB-flavored) import
# ---------------------------------------------------------------------------


@dataclass
class ParseReport:
    """What the tolerant importer had to decide while reading a file."""

    name: str = ""
    variant: Variant | None = None
    lam: float | None = None
    nodes_one_based: bool = True
    products_one_based: bool = True
    notes: list[str] | None = None

    def note(self, text: str) -> None:
        if self.notes is None:
            self.notes = []
        self.notes.append(text)


_HEADER_RE = re.compile(r"^\s*([A-Z_]+)\s*:?\s*(.*?)\s*$")


def import_tpplib(source: str | Path, with_report: bool = False):
    """Read a benchmark-layout file into a TppInstance.

    Accepts header lines (NAME/TYPE/COMMENT/DIMENSION/PRODUCTS/...),
    NODE_COORD_SECTION with the depot as the first node, DEMAND_SECTION,
    and OFFER_SECTION rows ``node product price [quantity]``. Node and
    product indexing (0- or 1-based) is detected from the data and
    recorded in the parse report.
    """
    try:
        is_file = Path(source).is_file()
    except (OSError, ValueError):
        is_file = False
    if is_file:
        text = Path(source).read_text(encoding="ascii", errors="replace")
        default_name = Path(source).stem
    else:
        text = str(source)
        default_name = ""
    report = ParseReport(name=default_name)

    lines = [ln.strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln]
    if not lines:
        raise UnsupportedFormatError("empty file")

    dimension: int | None = None
    nproducts: int | None = None
    coords: list[tuple[int, tuple[int, int]]] = []
    demand_rows: list[tuple[int, int]] = []
    offer_rows: list[tuple[int, int, int, int | None]] = []
    section = None
    known_headers = {
        "NAME", "TYPE", "COMMENT", "DIMENSION", "PRODUCTS", "NPRODUCTS",
        "EDGE_WEIGHT_TYPE", "DISPLAY_DATA_TYPE", "CAPACITY",
    }
    sections = {"NODE_COORD_SECTION", "DEMAND_SECTION", "OFFER_SECTION", "EOF"}

    for lineno, raw in enumerate(lines, start=1):
        word = raw.split()[0].rstrip(":")
        if word in sections:
            section = word
            if word == "EOF":
                break
            continue
        if section is None:
            m = _HEADER_RE.match(raw)
            if not m or m.group(1) not in known_headers:
                raise UnsupportedFormatError(
                    f"unrecognized header {raw!r}", lineno
                )
            key, value = m.group(1), m.group(2)
            if key == "NAME":
                report.name = value
            elif key == "TYPE" and value.upper() not in ("TPP", ""):
                raise UnsupportedFormatError(f"TYPE {value!r} is not TPP", lineno)
            elif key == "DIMENSION":
                dimension = int(value)
            elif key in ("PRODUCTS", "NPRODUCTS"):
                nproducts = int(value)
            elif key == "EDGE_WEIGHT_TYPE" and value.upper() not in (
                "EUC_2D", "TRUNC_2D",
            ):
                raise UnsupportedFormatError(
                    f"unsupported EDGE_WEIGHT_TYPE {value!r}", lineno
                )
            continue
        toks = raw.split()
        try:
            if section == "NODE_COORD_SECTION":
                if len(toks) != 3:
                    raise ValueError("need 'id x y'")
                coords.append(
                    (int(toks[0]),
                     (int(round(float(toks[1]))), int(round(float(toks[2])))))
                )
            elif section == "DEMAND_SECTION":
                if len(toks) != 2:
                    raise ValueError("need 'product demand'")
                demand_rows.append((int(toks[0]), int(toks[1])))
            elif section == "OFFER_SECTION":
                if len(toks) == 3:
                    offer_rows.append((int(toks[0]), int(toks[1]), int(toks[2]), None))
                elif len(toks) == 4:
                    offer_rows.append(
                        (int(toks[0]), int(toks[1]), int(toks[2]), int(toks[3]))
                    )
                else:
                    raise ValueError("need 'node product price [qty]'")
        except ValueError as e:
            raise ParseError(f"bad {section} row {raw!r}: {e}", lineno) from None

    if not coords:
        raise UnsupportedFormatError("no NODE_COORD_SECTION")
    if dimension is not None and len(coords) != dimension:
        raise ParseError(
            f"DIMENSION {dimension} but {len(coords)} coordinate rows"
        )

    node_ids = [i for i, _ in coords]
    report.nodes_one_based = min(node_ids) == 1
    if not report.nodes_one_based:
        report.note("node ids detected as 0-based")
    base = 1 if report.nodes_one_based else 0
    by_id = dict(coords)
    if len(by_id) != len(coords):
        raise ParseError("duplicate node ids in NODE_COORD_SECTION")
    try:
        ordered = [by_id[base + j] for j in range(len(coords))]
    except KeyError as e:
        raise ParseError(f"missing node id {e.args[0]}") from None
    depot, markets = ordered[0], tuple(ordered[1:])

    product_ids = [k for k, _ in demand_rows] + [k for _, k, _, _ in offer_rows]
    if not product_ids:
        raise UnsupportedFormatError("no products in file")
    report.products_one_based = min(product_ids) >= 1
    if not report.products_one_based:
        report.note("product ids detected as 0-based")
    kbase = 1 if report.products_one_based else 0
    K = nproducts if nproducts is not None else max(product_ids) - kbase + 1

    demands = [1] * K
    if demand_rows:
        for k_raw, d in demand_rows:
            k = k_raw - kbase
            if not (0 <= k < K):
                raise ParseError(f"demand for out-of-range product {k_raw}")
            demands[k] = d
    else:
        report.note("no DEMAND_SECTION; demands default to 1")

    has_qty = any(q is not None for *_x, q in offer_rows)
    offers: dict[tuple[int, int], Offer] = {}
    for node_raw, k_raw, price, qty in offer_rows:
        i = node_raw - base  # market index; depot cannot sell
        k = k_raw - kbase
        if not (1 <= i <= len(markets)):
            raise ParseError(f"offer at non-market node {node_raw}")
        if not (0 <= k < K):
            raise ParseError(f"offer for out-of-range product {k_raw}")
        q = qty if qty is not None else demands[k]
        offers[(i, k)] = Offer(price=price, quantity=min(q, demands[k]))

    if report.name.startswith("EEuclideo"):
        variant = Variant.UNRESTRICTED
    elif report.name.startswith("CapEuclideo"):
        variant = Variant.RESTRICTED
    else:
        variant = Variant.RESTRICTED if has_qty else Variant.UNRESTRICTED
        report.note(f"variant inferred as {variant.value} from offer columns")
    lam = None
    if variant is Variant.RESTRICTED:
        m = re.search(r"\.(\d+)\.(\d+)\.(\d+)", report.name)
        if m:
            lam = int(m.group(3)) / 100.0
            report.note(f"lambda {lam} parsed from name")
    report.variant = variant
    report.lam = lam

    inst = TppInstance(
        depot=depot,
        markets=markets,
        demands=tuple(demands),
        offers=offers,
        variant=variant,
        lam=lam,
    )
    if with_report:
        return inst, report
    return inst


def load_any(path: str | Path) -> TppInstance:
    """Canonical file if it starts with the TPP header, else benchmark layout."""
    text = Path(path).read_text(encoding="ascii", errors="replace")
    for ln in text.splitlines():
        if ln.strip():
            if ln.split()[0] == "TPP":
                return loads_instance(text)
            break
    return import_tpplib(path)


def instance_filename(spec: GeneratorSpec, index: int) -> str:
    base = f"{spec.variant.value}_{spec.markets}x{spec.products}"
    if spec.lam is not None:
        base += f"_l{str(spec.lam).replace('.', '')}"
    return f"{base}_s{spec.seed}_{index:04d}.tpp"


def write_set(spec: GeneratorSpec, count: int, out_dir: str | Path) -> list[Path]:
    """Materialize ``count`` instances of a distribution into a directory."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(count):
        p = out / instance_filename(spec, i)
        write_instance(generate_indexed(spec, i), p)
        paths.append(p)
    return paths


def read_set(directory: str | Path) -> list[tuple[str, TppInstance]]:
    """All instances in a directory, sorted by file name."""
    files = sorted(Path(directory).glob("*.tpp"))
    if not files:
        files = sorted(
            p for p in Path(directory).iterdir()
            if p.is_file() and not p.name.startswith(".")
        )
    return [(p.name, load_any(p)) for p in files]


def iter_training_instances(
    spec: GeneratorSpec, counter_start: int, count: int
) -> Iterable[TppInstance]:
    """Deterministic instance stream for training batches."""
    for i in range(counter_start, counter_start + count):
        yield generate_indexed(spec, i)
