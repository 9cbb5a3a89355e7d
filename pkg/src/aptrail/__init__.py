"""aptrail: marketplace Wi-Fi hardware enumeration and geolocation toolkit."""

__version__ = "0.1.0"

from .model import (  # noqa: F401
    MacAddress,
    MalformedMac,
    OuiRegistry,
    RegistryParse,
    parse_mac,
    load_oui_registry,
)
