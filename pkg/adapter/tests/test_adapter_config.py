import dataclasses

import pytest

from ocr_adapter.config import AdapterConfig, Device, ModelSize, parse_flags


def test_defaults():
    cfg = AdapterConfig()
    assert cfg.segmentation_model_size is ModelSize.LARGE
    assert cfg.ocr_engine_name == "glyph-multi"
    assert cfg.device is Device.CPU
    assert cfg.max_segments == 16


@pytest.mark.parametrize("bad", [0, -1, -100])
def test_max_segments_must_be_positive(bad):
    with pytest.raises(ValueError):
        AdapterConfig(max_segments=bad)


def test_config_is_frozen():
    cfg = AdapterConfig()
    with pytest.raises(dataclasses.FrozenInstanceError):
        cfg.max_segments = 3


def test_parse_flags_defaults_match_config_defaults():
    assert parse_flags([]) == AdapterConfig()


def test_parse_flags_all_settings():
    cfg = parse_flags([
        "--model-size", "small",
        "--ocr-engine", "glyph-mono",
        "--device", "gpu",
        "--max-segments", "3",
    ])
    assert cfg == AdapterConfig(
        segmentation_model_size=ModelSize.SMALL,
        ocr_engine_name="glyph-mono",
        device=Device.GPU,
        max_segments=3,
    )


@pytest.mark.parametrize("argv", [
    ["--model-size", "tiny"],
    ["--ocr-engine", "tesseract"],
    ["--device", "tpu"],
])
def test_parse_flags_rejects_unknown_choices(argv):
    with pytest.raises(SystemExit):
        parse_flags(argv)
