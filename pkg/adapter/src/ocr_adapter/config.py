"""Adapter configuration, settable through command-line flags."""

from __future__ import annotations

import argparse
from dataclasses import dataclass
from enum import Enum


class ModelSize(str, Enum):
    SMALL = "small"
    LARGE = "large"


class Device(str, Enum):
    CPU = "cpu"
    GPU = "gpu"


@dataclass(frozen=True)
class AdapterConfig:
    segmentation_model_size: ModelSize = ModelSize.LARGE
    ocr_engine_name: str = "glyph-multi"
    device: Device = Device.CPU
    max_segments: int = 16

    def __post_init__(self):
        if self.max_segments < 1:
            raise ValueError("max_segments must be >= 1")


def parse_flags(argv=None) -> AdapterConfig:
    parser = argparse.ArgumentParser(
        prog="ocr-adapter",
        description="Segment label regions out of product photos and OCR "
                    "each crop at the requested rotations, as a line-JSON "
                    "child process.")
    parser.add_argument("--model-size", default="large",
                        choices=[m.value for m in ModelSize],
                        help="segmentation resolution profile")
    parser.add_argument("--ocr-engine", default="glyph-multi",
                        choices=["glyph-multi", "glyph-mono"],
                        help="template set: all bundled faces or mono only")
    parser.add_argument("--device", default="cpu",
                        choices=[d.value for d in Device],
                        help="gpu is accepted but runs the cpu path")
    parser.add_argument("--max-segments", type=int, default=16,
                        help="keep the N largest masks per image")
    args = parser.parse_args(argv)
    return AdapterConfig(
        segmentation_model_size=ModelSize(args.model_size),
        ocr_engine_name=args.ocr_engine,
        device=Device(args.device),
        max_segments=args.max_segments,
    )
