import numpy as np
import pytest

from tppsolve.errors import ParseError, UnsupportedFormatError
from tppsolve.generate import (
    GeneratorSpec,
    demand_from_supplies,
    dumps_instance,
    generate,
    generate_indexed,
    generate_many,
    import_tpplib,
    instance_filename,
    load_any,
    loads_instance,
    read_instance,
    write_instance,
    write_set,
)
from tppsolve.model import Variant, validate_instance

U_SPEC = GeneratorSpec(Variant.UNRESTRICTED, markets=12, products=8, seed=42)
R_SPEC = GeneratorSpec(Variant.RESTRICTED, markets=12, products=8, lam=0.95, seed=42)


def test_spec_validation():
    with pytest.raises(ValueError):
        GeneratorSpec(Variant.RESTRICTED, 5, 5)  # lambda required
    with pytest.raises(ValueError):
        GeneratorSpec(Variant.UNRESTRICTED, 5, 5, lam=0.9)
    with pytest.raises(ValueError):
        GeneratorSpec(Variant.UNRESTRICTED, 0, 5)


def test_spec_string_round_trip():
    assert GeneratorSpec.parse("u:15x10") == GeneratorSpec(
        Variant.UNRESTRICTED, 15, 10
    )
    r = GeneratorSpec.parse("r:50x50:0.95")
    assert r.lam == 0.95
    assert GeneratorSpec.parse(r.spec_string()) == r
    with pytest.raises(ValueError):
        GeneratorSpec.parse("u:15")


def test_generation_is_deterministic_and_seed_sensitive():
    a = generate(U_SPEC)
    b = generate(U_SPEC)
    assert a == b
    c = generate(U_SPEC.with_seed(43))
    assert a != c
    many = generate_many(U_SPEC, 3)
    assert many[0] == generate_indexed(U_SPEC, 0) == a
    assert many[1] != many[0]


def test_unrestricted_instances_are_valid_unit_demand():
    for i in range(20):
        inst = generate_indexed(U_SPEC, i)
        assert validate_instance(inst) == []
        assert inst.variant is Variant.UNRESTRICTED
        assert all(d == 1 for d in inst.demands)
        assert all(off.quantity == 1 for off in inst.offers.values())
        assert all(1 <= off.price <= 10 for off in inst.offers.values())
        for k in range(inst.num_products):
            assert 1 <= len(inst.markets_offering(k)) <= inst.num_markets


def test_restricted_instances_are_valid_and_tight():
    for i in range(20):
        inst = generate_indexed(R_SPEC, i)
        assert validate_instance(inst) == []
        assert inst.lam == 0.95
        for k in range(inst.num_products):
            offers = [inst.offers[(m, k)] for m in inst.markets_offering(k)]
            quantities = [o.quantity for o in offers]
            # demand sits between the largest single offer and total supply
            assert max(quantities) <= inst.demands[k] <= sum(quantities)
            assert all(1 <= q <= 15 for q in quantities)


def test_demand_from_supplies_known_values():
    assert demand_from_supplies(0.9, [10, 5]) == 11  # ceil(10.5)
    assert demand_from_supplies(0.95, [15, 15, 15]) == 17  # ceil(16.5)
    assert demand_from_supplies(0.99, [7]) == 7  # single offer: exactly max


def test_demand_from_supplies_no_float_drift():
    # 0.95*20 + 0.05*40 is exactly 21; naive float math would ceil to 22
    assert demand_from_supplies(0.95, [20, 20]) == 21
    assert demand_from_supplies(0.9, [10, 10]) == 11  # 9 + 2 = 11 exact
    assert demand_from_supplies(0.99, [100] * 2) == 101


def test_lambda_controls_total_demand():
    tight = GeneratorSpec(Variant.RESTRICTED, 10, 8, lam=0.99, seed=7)
    loose = GeneratorSpec(Variant.RESTRICTED, 10, 8, lam=0.9, seed=7)
    totals = {0.99: 0, 0.9: 0}
    for i in range(1000):
        totals[0.99] += sum(generate_indexed(tight, i).demands)
        totals[0.9] += sum(generate_indexed(loose, i).demands)
    # demand grows as lambda falls (weight shifts toward total supply)
    assert totals[0.9] > totals[0.99]


def test_price_frequencies_are_uniform():
    counts = np.zeros(11, dtype=int)
    i = 0
    while counts.sum() < 10_000:
        inst = generate_indexed(GeneratorSpec(Variant.UNRESTRICTED, 20, 20, seed=5), i)
        for off in inst.offers.values():
            counts[off.price] += 1
        i += 1
    freq = counts[1:] / counts.sum()
    assert np.all(np.abs(freq - 0.1) < 0.02)


def test_canonical_round_trip_and_byte_determinism(tmp_path):
    for spec in (U_SPEC, R_SPEC):
        inst = generate(spec)
        text = dumps_instance(inst)
        assert text == dumps_instance(generate(spec))  # byte-identical
        assert loads_instance(text) == inst
        p = tmp_path / "x.tpp"
        write_instance(inst, p)
        assert read_instance(p) == inst
        assert load_any(p) == inst


def test_parse_error_reports_line_numbers():
    text = dumps_instance(generate(U_SPEC))
    truncated = "\n".join(text.splitlines()[:8]) + "\n"
    with pytest.raises(ParseError) as err:
        loads_instance(truncated)
    assert "line" in str(err.value) or err.value.line is not None

    with pytest.raises(UnsupportedFormatError):
        loads_instance("HELLO 1\n")

    bad = text.replace("DEPOT", "DEPOTX", 1)
    with pytest.raises(ParseError):
        loads_instance(bad)

    lines = text.splitlines()
    offer = next(ln for ln in lines if ln.startswith("OFFER"))
    dup = text.replace("EOF", offer + "\nEOF")
    with pytest.raises(ParseError) as err:
        loads_instance(dup)
    assert "duplicate" in str(err.value)


def test_parse_rejects_out_of_range_ids():
    inst = generate(GeneratorSpec(Variant.UNRESTRICTED, 3, 2, seed=1))
    text = dumps_instance(inst)
    first_offer = next(
        ln for ln in text.splitlines() if ln.startswith("OFFER")
    )
    toks = first_offer.split()
    toks[1] = "9"  # market out of range
    with pytest.raises(ParseError):
        loads_instance(text.replace(first_offer, " ".join(toks)))


EEUCLIDEO_FIXTURE = """\
NAME : EEuclideo.3.2.1
TYPE : TPP
COMMENT : toy benchmark-layout fixture
DIMENSION : 4
PRODUCTS : 2
EDGE_WEIGHT_TYPE : EUC_2D
NODE_COORD_SECTION
1 500 500
2 100 200
3 900 800
4 400 100
DEMAND_SECTION
1 1
2 1
OFFER_SECTION
2 1 4
3 1 6
3 2 2
4 2 9
EOF
"""

CAP_FIXTURE = """\
NAME : CapEuclideo.3.2.95.1
TYPE : TPP
DIMENSION : 4
PRODUCTS : 2
EDGE_WEIGHT_TYPE : EUC_2D
NODE_COORD_SECTION
1 0 0
2 10 10
3 20 20
4 30 30
DEMAND_SECTION
1 12
2 6
OFFER_SECTION
2 1 4 8
3 1 6 7
3 2 2 6
4 2 9 3
EOF
"""


def test_import_tpplib_unrestricted():
    inst, report = import_tpplib(EEUCLIDEO_FIXTURE, with_report=True)
    assert inst.variant is Variant.UNRESTRICTED
    assert inst.num_markets == 3
    assert inst.num_products == 2
    assert inst.depot == (500, 500)
    assert inst.markets[0] == (100, 200)
    assert inst.demands == (1, 1)
    assert inst.offers[(1, 0)].price == 4
    assert inst.offers[(1, 0)].quantity == 1  # fills in the demand
    assert inst.offers[(3, 1)].price == 9
    assert report.nodes_one_based and report.products_one_based
    assert validate_instance(inst) == []


def test_import_tpplib_restricted_with_lambda():
    inst, report = import_tpplib(CAP_FIXTURE, with_report=True)
    assert inst.variant is Variant.RESTRICTED
    assert report.lam == 0.95
    assert inst.demands == (12, 6)
    assert inst.offers[(1, 0)].quantity == 8
    assert validate_instance(inst) == []


ZERO_BASED_FIXTURE = """\
NAME : custom.zero.based
TYPE : TPP
DIMENSION : 3
PRODUCTS : 1
NODE_COORD_SECTION
0 500 500
1 100 200
2 900 800
DEMAND_SECTION
0 1
OFFER_SECTION
1 0 4
2 0 6
EOF
"""


def test_import_tpplib_detects_zero_based_ids():
    inst, report = import_tpplib(ZERO_BASED_FIXTURE, with_report=True)
    assert not report.nodes_one_based
    assert not report.products_one_based
    assert inst.num_markets == 2
    assert inst.depot == (500, 500)
    assert inst.offers[(1, 0)].price == 4
    assert validate_instance(inst) == []


def test_import_tpplib_rejects_garbage():
    with pytest.raises(UnsupportedFormatError):
        import_tpplib("this is not a benchmark file\n")
    with pytest.raises(UnsupportedFormatError):
        import_tpplib("")


def test_write_set_and_filenames(tmp_path):
    spec = GeneratorSpec(Variant.UNRESTRICTED, 4, 3, seed=9)
    paths = write_set(spec, 5, tmp_path)
    assert len(paths) == 5
    assert paths[0].name == instance_filename(spec, 0)
    assert sorted(p.name for p in paths) == [p.name for p in paths]
    back = read_instance(paths[2])
    assert back == generate_indexed(spec, 2)
