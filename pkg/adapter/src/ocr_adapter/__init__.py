"""OCR backend for device-label photos, spoken over line-delimited JSON."""

from .config import AdapterConfig, Device, ModelSize

__all__ = ["AdapterConfig", "Device", "ModelSize"]
