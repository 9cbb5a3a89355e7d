import io

import pytest
from hypothesis import given, strategies as st

from aptrail.model import (
    ImageFormat,
    ImageRef,
    Listing,
    MacAddress,
    MalformedMac,
    OuiRegistry,
    RegistryParse,
    SellerLocation,
    format_mac,
    load_oui_registry,
    parse_mac,
)


def test_parse_colon_form():
    mac = parse_mac("A0:2B:CA:92:1C:DA")
    assert mac.canonical == "a02bca921cda"


def test_parse_hyphen_form():
    assert parse_mac("10-29-ca-2a-be-2f").canonical == "1029ca2abe2f"


def test_parse_bare_space_dot_forms():
    assert parse_mac("a02bca921cda").canonical == "a02bca921cda"
    assert parse_mac("a0 2b ca 92 1c da").canonical == "a02bca921cda"
    assert parse_mac("a0.2b.ca.92.1c.da").canonical == "a02bca921cda"


@pytest.mark.parametrize("bad", [
    "00000000000",            # 11 chars
    "0000000000000",          # 13 chars
    "a0:2b-ca:92:1c:da",      # mixed separators
    "a0:2b:ca:92:1c",         # five octets
    "g02bca921cda",           # non-hex
    "a0::2b:ca:92:1c:da",     # double separator
    "",
])
def test_parse_rejects(bad):
    with pytest.raises(MalformedMac):
        parse_mac(bad)


def test_oui_and_nic_split():
    mac = parse_mac("a0:2b:ca:92:1c:da")
    assert mac.oui() == "a02bca"
    assert mac.nic() == "921cda"
    assert mac.octets == bytes([0xA0, 0x2B, 0xCA, 0x92, 0x1C, 0xDA])


_SEPS = ["", ":", "-", " ", "."]


@given(st.binary(min_size=6, max_size=6), st.sampled_from(_SEPS))
def test_parse_format_round_trip(raw, sep):
    pairs = [f"{b:02x}" for b in raw]
    text = sep.join(pairs)
    mac = parse_mac(text)
    assert parse_mac(format_mac(mac)) == mac


IEEE_CSV = """Registry,Assignment,Organization Name,Organization Address
MA-L,00180A,Cisco Meraki,500 Terry Francois
MA-L,E89F80,Belkin International Inc.,12045 E Waterfront
MA-M,70B3D5A,Some Medium Org,nowhere
MA-L,00180A,Duplicate Co,elsewhere
"""


def test_load_ieee_csv():
    reg = load_oui_registry(io.StringIO(IEEE_CSV), "ieee_csv")
    assert reg.contains("00:18:0a")
    assert reg.contains("00180A")
    assert reg.organization("00180a") == "Cisco Meraki"
    assert not reg.contains("70b3d5")
    assert reg.duplicate_count == 1


def test_load_line_pairs():
    reg = load_oui_registry(io.StringIO("e89f80 Belkin\n# comment\n00180a\tCisco Meraki\n"),
                            "line_pairs")
    assert reg.contains("e8:9f:80")
    assert reg.organization("00:18:0a") == "Cisco Meraki"


def test_load_empty_stream_raises():
    with pytest.raises(RegistryParse):
        load_oui_registry(io.StringIO(""), "ieee_csv")
    with pytest.raises(RegistryParse):
        load_oui_registry(io.StringIO("not a record\n"), "line_pairs")


def test_registry_lookup_is_pure():
    reg = load_oui_registry(io.StringIO("e89f80 Belkin\n"), "line_pairs")
    before = len(reg)
    for _ in range(100):
        reg.contains("e89f80")
        reg.contains("ffffff")
    assert len(reg) == before


def test_registry_without_returns_copy():
    reg = load_oui_registry(io.StringIO("e89f80 Belkin\n00180a Cisco\n"), "line_pairs")
    smaller = reg.without(["e89f80"])
    assert not smaller.contains("e89f80")
    assert reg.contains("e89f80")


def test_image_ref_size_bounds():
    ImageRef("img", 32)
    ImageRef("img", 2400)
    with pytest.raises(ValueError):
        ImageRef("img", 16)
    with pytest.raises(ValueError):
        ImageRef("img", 2401)
    assert ImageFormat.JPEG.extension == "jpg"


def test_listing_invariants():
    with pytest.raises(ValueError):
        Listing(listing_id="")
    with pytest.raises(ValueError):
        Listing(listing_id="x", seller_location=SellerLocation("US", "College Park", "2074"))
    ok = Listing(listing_id="x", seller_location=SellerLocation("US", "College Park", "207"))
    assert ok.seller_location.postal_prefix == "207"


def test_mac_address_rejects_non_canonical():
    with pytest.raises(MalformedMac):
        MacAddress("A02BCA921CDA")
    with pytest.raises(MalformedMac):
        MacAddress("a02bca921cd")
