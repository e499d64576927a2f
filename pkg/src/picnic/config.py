"""Hardware and run configuration, loaded from TOML files.

Defaults reproduce the published system parameters: 64-bit words at 1 GHz,
a 32x32 IPCN per tile, 1024 SCUs per tile, 256x256 PE arrays, 16 MACs,
32 KB scratchpads, 7 ports and 256 B FIFOs per router.
"""

from __future__ import annotations

import os
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

PRESET_DIR = Path(__file__).with_name("presets")
OUTPUT_ENV = "PICNIC_OUTPUT_DIR"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class HardwareConfig:
    bit_width: int = 64
    frequency_hz: float = 1e9
    mesh_rows: int = 32
    mesh_cols: int = 32
    scus_per_tile: int = 1024
    pe_size: int = 256
    macs_per_router: int = 16
    scratchpad_bytes: int = 32 * 1024
    io_ports: int = 7
    fifo_bytes: int = 256
    cluster_size: int = 4
    smac_latency: int = 256
    hop_latency: int = 1
    npm_write_rate: int = 1
    bank_rows: int = 256
    weight_bits: int = 8
    adc_bits: int = 8
    kv_entries_per_word: int = 4
    interconnect: str = "optical"
    electrical_pj_per_bit: float = 3.0
    optical_pj_per_bit: float = 0.5
    dram_pj_per_bit: float = 30.0
    link_bits_per_cycle: int = 64
    link_latency: int = 8
    wake_energy_pj: float = 0.0

    @property
    def fifo_depth(self) -> int:
        return self.fifo_bytes * 8 // self.bit_width

    @property
    def scratchpad_words(self) -> int:
        return self.scratchpad_bytes * 8 // self.bit_width

    @property
    def pairs(self) -> int:
        return self.mesh_rows * self.mesh_cols

    def validate(self) -> None:
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, (int, float)) and not isinstance(v, bool) and v < 0:
                raise ConfigError(f"hardware.{f.name} must be non-negative, got {v}")
        if self.mesh_rows < 1 or self.mesh_cols < 1:
            raise ConfigError("mesh dimensions must be positive")
        if self.interconnect not in ("optical", "electrical"):
            raise ConfigError(f"hardware.interconnect must be 'optical' or 'electrical', "
                              f"got {self.interconnect!r}")
        if self.link_bits_per_cycle <= 0:
            raise ConfigError("hardware.link_bits_per_cycle must be positive")


def hardware_from(mapping: Mapping[str, Any], base: HardwareConfig | None = None) -> HardwareConfig:
    base = base or HardwareConfig()
    known = {f.name for f in fields(HardwareConfig)}
    unknown = set(mapping) - known
    if unknown:
        raise ConfigError(f"unknown hardware keys: {', '.join(sorted(unknown))}")
    hw = replace(base, **mapping)
    hw.validate()
    return hw


def load_toml(path: str | Path) -> dict[str, Any]:
    p = Path(path)
    if not p.exists():
        preset = PRESET_DIR / f"{path}.toml"
        if preset.exists():
            p = preset
        else:
            raise ConfigError(f"config file {path} not found (and no preset of that name)")
    with open(p, "rb") as fh:
        try:
            return tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{p}: {exc}") from None


def preset_names() -> list[str]:
    return sorted(p.stem for p in PRESET_DIR.glob("*.toml"))


@dataclass
class RunConfig:
    """One benchmark run.  ``hardware`` holds overrides applied on top of the model's preset."""

    model: str = "llama-1b"
    prompt_len: int = 512
    gen_len: int = 512
    ccpg: bool = False
    interconnect: str | None = None
    numeric: str = "fixed"
    seed: int = 0
    output_dir: str = "picnic-out"
    hardware: dict[str, Any] = field(default_factory=dict)
    report_window: int = 1_000_000
    trace_tokens: int = 4

    def validate(self) -> None:
        if self.prompt_len < 1 or self.gen_len < 1:
            raise ConfigError("prompt_len and gen_len must be at least 1")
        if self.numeric not in ("exact", "fixed"):
            raise ConfigError(f"numeric must be 'exact' or 'fixed', got {self.numeric!r}")
        if self.interconnect not in (None, "optical", "electrical"):
            raise ConfigError(f"interconnect must be 'optical' or 'electrical', got {self.interconnect!r}")
        if self.report_window < 1:
            raise ConfigError("report_window must be at least 1 cycle")
        if self.trace_tokens < 0:
            raise ConfigError("trace_tokens must be non-negative")
        hardware_from(self.hardware)

    def resolve_hardware(self, base: HardwareConfig) -> HardwareConfig:
        hw = hardware_from(self.hardware, base)
        if self.interconnect:
            hw = replace(hw, interconnect=self.interconnect)
        return hw

    def to_dict(self) -> dict[str, Any]:
        """Everything that determines the results (the output location does not)."""
        d = asdict(self)
        d.pop("output_dir")
        return d


def run_config_from(mapping: Mapping[str, Any], base_dir: Path | None = None) -> RunConfig:
    run = dict(mapping.get("run", {}))
    known = {f.name for f in fields(RunConfig)} - {"hardware"}
    unknown = set(run) - known
    if unknown:
        raise ConfigError(f"unknown run keys: {', '.join(sorted(unknown))}")
    try:
        cfg = RunConfig(hardware=dict(mapping.get("hardware", {})), **run)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    if base_dir is not None and not Path(cfg.model).is_absolute():
        candidate = base_dir / cfg.model
        if candidate.is_file():
            cfg.model = str(candidate)
    env = os.environ.get(OUTPUT_ENV)
    if env:
        cfg.output_dir = env
    cfg.validate()
    return cfg


def load_run_config(path: str | Path) -> RunConfig:
    return run_config_from(load_toml(path), Path(path).parent)
