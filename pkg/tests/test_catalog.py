import numpy as np
import pytest
from scipy import stats

from utils.catalog import (
    Attribute,
    OperandKind,
    build_pool,
    load_catalog,
    sample_instance,
)
from utils.errors import CatalogError, PoolError


def test_load_filters_privileged_entries(catalog):
    assert catalog.summary.loaded == len(catalog.specs) == 89
    assert catalog.summary.skipped_ring3 == 1
    with pytest.raises(KeyError):
        catalog.find("HLT")


def test_opcode_indices_follow_document_order(catalog):
    assert [spec.opcode_index for spec in catalog.specs] == list(range(len(catalog.specs)))
    assert catalog.find("ADD").opcode_index == 0
    assert catalog.find("VPXOR").opcode_index == 11


def test_digest_is_sha256_of_file(catalog):
    assert len(catalog.digest) == 64
    int(catalog.digest, 16)


def test_suppressed_operands_are_not_slots(catalog):
    spec = catalog.find("PCMPESTRI")
    assert [slot.kind for slot in spec.slots] == [OperandKind.XMM, OperandKind.XMM, OperandKind.IMMEDIATE8]
    assert spec.operand_bits == 4 + 4 + 8


@pytest.mark.parametrize("mnemonic, present, absent", [
    ("XORPS", {Attribute.IS_LEGACY_SSE, Attribute.IS_SINGLE_PRECISION_FP}, {Attribute.IS_VEX_OR_EVEX}),
    ("VPXOR", {Attribute.IS_VEX_OR_EVEX}, {Attribute.IS_LEGACY_SSE, Attribute.IS_SINGLE_PRECISION_FP}),
    ("CVTPD2PS", {Attribute.IS_PRECISION_CONVERT}, {Attribute.IS_DOUBLE_PRECISION_FP}),
    ("VFMADD213PD", {Attribute.IS_FMA_FAMILY, Attribute.IS_DOUBLE_PRECISION_FP, Attribute.IS_VEX_OR_EVEX}, set()),
    ("AESENC", {Attribute.IS_AES_FAMILY, Attribute.IS_LEGACY_SSE}, {Attribute.IS_VEX_OR_EVEX}),
    ("ADD", {Attribute.RING3_EXECUTABLE}, {Attribute.IS_LEGACY_SSE, Attribute.IS_VEX_OR_EVEX}),
])
def test_derived_attributes(catalog, mnemonic, present, absent):
    spec = catalog.find(mnemonic)
    assert present <= spec.attributes
    assert not absent & spec.attributes


def test_memory_slot_keeps_declared_width(catalog):
    slot = catalog.find("VFMADD132SD").slots[2]
    assert slot.kind is OperandKind.MEMORY
    assert slot.declared_width == 64


def test_missing_catalog(tmp_path):
    with pytest.raises(CatalogError, match="not found"):
        load_catalog(tmp_path / "nope.xml")


def test_malformed_catalog(tmp_path):
    path = tmp_path / "bad.xml"
    path.write_text("<root><instruction asm='ADD' extension='BASE'>", encoding="utf-8")
    with pytest.raises(CatalogError, match="malformed"):
        load_catalog(path)


def test_catalog_empty_after_filtering(tmp_path):
    path = tmp_path / "ring0.xml"
    path.write_text(
        '<root><instruction asm="HLT" extension="BASE" ring3="0"/>'
        '<instruction asm="WRMSR" extension="BASE"/></root>',
        encoding="utf-8",
    )
    with pytest.raises(CatalogError, match="empty catalog"):
        load_catalog(path)


def test_json_mirror(tmp_path):
    path = tmp_path / "mirror.json"
    path.write_text(
        '{"instructions": [{"asm": "PXOR", "extension": "SSE2", "operands": ['
        '{"type": "reg", "r": "1", "w": "1", "width": "128", "text": "' + ",".join(f"XMM{i}" for i in range(16)) + '"},'
        '{"type": "reg", "r": "1", "w": "0", "width": "128", "text": "' + ",".join(f"XMM{i}" for i in range(16)) + '"}'
        ']}]}',
        encoding="utf-8",
    )
    catalog = load_catalog(path)
    assert [spec.mnemonic for spec in catalog.specs] == ["PXOR"]


def test_pool_requires_extensions(catalog):
    with pytest.raises(PoolError, match="no extensions selected"):
        build_pool(catalog, [])


def test_pool_rejects_unknown_extension(catalog):
    with pytest.raises(PoolError, match="AVX512_4FMAPS") as excinfo:
        build_pool(catalog, ["SSE2", "AVX512_4FMAPS"])
    assert excinfo.value.tag == "AVX512_4FMAPS"


def test_pool_is_the_union_of_selected_extensions(catalog):
    pool = build_pool(catalog, ["SSE2", "AVX"])
    assert {spec.extension for spec in pool.specs} == {"SSE2", "AVX"}
    assert len(pool) == 10
    assert catalog.find("XORPS") not in pool
    assert catalog.find("VPXOR") in pool


def test_sample_instance_is_uniform_over_pool(catalog):
    pool = build_pool(catalog, ["SSE2", "AVX"])
    rng = np.random.default_rng(0)
    draws = 20000
    counts = {spec.opcode_index: 0 for spec in pool.specs}
    for _ in range(draws):
        counts[sample_instance(pool, rng).spec.opcode_index] += 1
    _, p_value = stats.chisquare(list(counts.values()))
    assert p_value > 0.001


def test_sampled_operands_are_legal(pool):
    rng = np.random.default_rng(3)
    for _ in range(500):
        inst = sample_instance(pool, rng)
        assert all(slot.is_legal(v) for slot, v in zip(inst.spec.slots, inst.operands))


FMA_MNEMONICS = sorted(
    [f"{family}{order}{suffix}" for family in ("VFMADD", "VFMSUB", "VFNMADD", "VFNMSUB")
     for order in ("132", "213", "231") for suffix in ("PD", "PS", "SD", "SS")]
    + [f"{family}{order}{suffix}" for family in ("VFMADDSUB", "VFMSUBADD")
       for order in ("132", "213", "231") for suffix in ("PD", "PS")]
)


def test_fma_pool_covers_every_fused_multiply_add_form(catalog):
    pool = build_pool(catalog, ["FMA"])
    assert len(FMA_MNEMONICS) == 60
    assert sorted(spec.mnemonic for spec in pool.specs) == FMA_MNEMONICS
    for spec in pool.specs:
        assert Attribute.IS_FMA_FAMILY in spec.attributes
        assert Attribute.IS_VEX_OR_EVEX in spec.attributes
        assert (Attribute.IS_SINGLE_PRECISION_FP in spec.attributes) != \
            (Attribute.IS_DOUBLE_PRECISION_FP in spec.attributes)


def test_integer_fma_has_its_own_extension(catalog):
    pool = build_pool(catalog, ["AVX512_IFMA"])
    assert sorted(spec.mnemonic for spec in pool.specs) == ["VPMADD52HUQ", "VPMADD52LUQ"]
    for spec in pool.specs:
        assert Attribute.IS_FMA_FAMILY in spec.attributes
        assert {slot.kind for slot in spec.slots} == {OperandKind.ZMM}
    assert not {"VPMADD52HUQ", "VPMADD52LUQ"} & {spec.mnemonic for spec in build_pool(catalog, ["FMA"]).specs}


def test_catalog_spans_many_extensions(catalog):
    assert len(catalog.extensions) >= 10
    assert {"SSE3", "SSSE3", "AVX512F", "AVX512_IFMA"} <= set(catalog.extensions)
    assert catalog.find("KANDW").slots[0].kind is OperandKind.MASK
