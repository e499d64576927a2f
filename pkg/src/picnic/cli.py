"""Command-line driver: ``picnic run|sweep|assemble|disassemble|map|trace``."""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import fields, replace
from pathlib import Path
from typing import Sequence

from . import report
from .config import OUTPUT_ENV, ConfigError, HardwareConfig, RunConfig, load_run_config
from .isa import AssemblyError, IsaError, assemble, disassemble, emit_hex, parse_hex

HW_FLAGS = [f for f in fields(HardwareConfig) if f.name != "interconnect"]


class CliError(RuntimeError):
    pass


def _on_off(text: str) -> bool:
    t = text.lower()
    if t in ("on", "true", "yes", "1"):
        return True
    if t in ("off", "false", "no", "0"):
        return False
    raise argparse.ArgumentTypeError(f"expected on/off, got {text!r}")


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("config", nargs="?", help="run config TOML ([run] and [hardware] tables)")
    p.add_argument("--model", help="model file or preset name")
    p.add_argument("--prompt-len", type=int)
    p.add_argument("--gen-len", type=int)
    p.add_argument("--interconnect", choices=("optical", "electrical"))
    p.add_argument("--numeric", choices=("exact", "fixed"))
    p.add_argument("--seed", type=int)
    p.add_argument("--output-dir", help=f"output directory (overrides ${OUTPUT_ENV})")
    p.add_argument("--report-window", type=int, help="C2C power window in cycles")
    p.add_argument("--trace-tokens", type=int, help="tokens whose C2C events go to the trace file")
    hw = p.add_argument_group("hardware overrides")
    for f in HW_FLAGS:
        kind = float if f.type in (float, "float") else int
        hw.add_argument(f"--{f.name.replace('_', '-')}", dest=f"hw_{f.name}", type=kind, metavar="N")


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    cfg = load_run_config(args.config) if args.config else RunConfig()
    if not args.config and os.environ.get(OUTPUT_ENV):
        cfg.output_dir = os.environ[OUTPUT_ENV]
    for name in ("model", "prompt_len", "gen_len", "interconnect", "numeric", "seed", "output_dir",
                 "report_window", "trace_tokens"):
        v = getattr(args, name, None)
        if v is not None:
            setattr(cfg, name, v)
    if getattr(args, "ccpg", None) is not None:
        cfg.ccpg = args.ccpg
    hw = dict(cfg.hardware)
    for f in HW_FLAGS:
        v = getattr(args, f"hw_{f.name}", None)
        if v is not None:
            hw[f.name] = v
    cfg.hardware = hw
    cfg.validate()
    return cfg


# ---------------------------------------------------------------------------
# run


def execute(cfg: RunConfig, counterpart: bool = True) -> dict:
    """Run one configuration and write its bundle; returns the benchmark row."""
    from .benchmark import plan_for, run_benchmark
    from .mapper.kvcache import check_kv
    from .mapper.model import load_model

    model, preset_hw = load_model(cfg.model)
    hw = cfg.resolve_hardware(preset_hw)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    context = cfg.prompt_len + cfg.gen_len
    plan = plan_for(model, hw, context)
    check_kv(plan, context)
    res = run_benchmark(model, hw, cfg.prompt_len, cfg.gen_len, cfg.ccpg, plan=plan)
    row = res.row()
    report.write_rows(out / "benchmark.csv", [row], report.BENCHMARK_COLUMNS)
    report.write_energy_breakdown(out / "energy.csv", res.ledger)
    per_token = plan.n_chiplets + 1
    res.log.write_csv(str(out / "c2c_trace.csv"), limit=cfg.trace_tokens * per_token)
    series, _ = res.power_series(cfg.report_window)
    report.write_series(out / "c2c_power.csv", series, cfg.report_window)
    report.write_json(out / "plan.json", plan.to_dict())
    report.write_json(out / "config.json", cfg.to_dict())
    rows = [row]
    if counterpart:
        other = run_benchmark(model, hw, cfg.prompt_len, cfg.gen_len, not cfg.ccpg, plan=plan)
        rows.append(other.row())
    report.bar_chart(rows, "average_power_w", "average power (W)", out / "power.svg")
    report.bar_chart(rows, "efficiency_tokens_per_j", "efficiency (tokens/J)", out / "efficiency.svg")
    report.c2c_chart(series, cfg.report_window, hw.frequency_hz, out / "c2c_power.svg",
                     f"{model.name} {res.context}")
    if model.name == "desk":
        _desk_bundle(cfg, hw, out)
    return row


def _desk_bundle(cfg: RunConfig, hw: HardwareConfig, out: Path) -> None:
    """Cycle-level attention simulation of the desk model over ``prompt_len`` tokens."""
    from .simulator import simulate_desk_attention

    res = simulate_desk_attention(cfg.numeric, cfg.prompt_len, seed=cfg.seed, preset=cfg.model, hw=hw)
    report.write_json(out / "attention.json", {
        "numeric": cfg.numeric,
        "seq_len": cfg.prompt_len,
        "seed": cfg.seed,
        "cycles": res.run.cycles,
        "error": res.error,
        "outputs": res.run.outputs,
        "reference": res.reference,
    })
    rows = [{"cycle": c, "row": r, "repeat": n} for c, r, n in res.run.log.dispatches]
    report.write_rows(out / "dispatch.csv", rows, ("cycle", "row", "repeat"))


def cmd_run(args) -> int:
    cfg = _config_from_args(args)
    row = execute(cfg)
    for k in report.BENCHMARK_COLUMNS:
        print(f"{k:>26}: {row[k]}")
    print(f"bundle written to {cfg.output_dir}")
    return 0


# ---------------------------------------------------------------------------
# sweep


def _csv_list(text: str | None, conv=str) -> list:
    if not text:
        return []
    return [conv(t.strip()) for t in text.split(",") if t.strip()]


def sweep(configs: Sequence[RunConfig], output_dir: str | Path) -> list[dict]:
    """Run every config (one sub-bundle each) and write the comparison report."""
    if not configs:
        raise CliError("sweep needs at least one configuration")
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for k, cfg in enumerate(configs):
        cfg = replace(cfg, output_dir=str(out / f"run{k:03d}"))
        try:
            rows.append(execute(cfg, counterpart=False))
        except Exception as exc:        # recorded, the sweep carries on
            rows.append({"model": cfg.model, "context": f"{cfg.prompt_len}/{cfg.gen_len}",
                         "ccpg": "on" if cfg.ccpg else "off",
                         "interconnect": cfg.interconnect or "", "error": f"{type(exc).__name__}: {exc}"})
    rows = report.saving_fractions(rows)
    report.write_rows(out / "sweep.csv", rows, report.SWEEP_COLUMNS)
    report.bar_chart(rows, "average_power_w", "average power (W)", out / "sweep_power.svg")
    report.context_chart(rows, "average_power_w", "average power (W)", out / "sweep_power_context.svg")
    report.context_chart(rows, "efficiency_tokens_per_j", "efficiency (tokens/J)",
                         out / "sweep_efficiency.svg")
    report.context_chart(rows, "c2c_power_w", "average C2C power (W)", out / "sweep_c2c.svg")
    return rows


def cmd_sweep(args) -> int:
    base = _config_from_args(args)
    models = _csv_list(args.models) or [base.model]
    contexts = _csv_list(args.contexts, int) or [base.prompt_len]
    ccpgs = [_on_off(t) for t in _csv_list(args.ccpg_values)] or [base.ccpg]
    links = _csv_list(args.interconnects) or [base.interconnect]
    configs = [replace(base, model=m, prompt_len=c, gen_len=c if args.contexts else base.gen_len,
                       ccpg=g, interconnect=i)
               for m in models for c in contexts for g in ccpgs for i in links]
    rows = sweep(configs, base.output_dir)
    cols = ("model", "context", "ccpg", "interconnect", "average_power_w", "saving_fraction", "error")
    print(",".join(cols))
    for r in rows:
        print(",".join(str(r.get(c, "")) for c in cols))
    return 1 if any(r.get("error") for r in rows) else 0


# ---------------------------------------------------------------------------
# toolchain and inspection


def cmd_assemble(args) -> int:
    src = Path(args.source).read_text()
    image = assemble(src, n_routers=args.routers, bank_rows=args.bank_rows)
    text = emit_hex(image)
    _emit(text, args.output)
    return 0


def cmd_disassemble(args) -> int:
    image = parse_hex(Path(args.source).read_text(), bank_rows=args.bank_rows)
    _emit(disassemble(image), args.output)
    return 0


def cmd_map(args) -> int:
    from .benchmark import plan_for
    from .mapper.model import load_model

    model, preset_hw = load_model(args.model)
    cfg = RunConfig(model=args.model, hardware={})
    hw = cfg.resolve_hardware(preset_hw)
    plan = plan_for(model, hw, args.context)
    _emit(json.dumps(plan.to_dict(), indent=2, sort_keys=True) + "\n", args.output)
    return 0


def cmd_trace(args) -> int:
    with open(args.file, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        return 0
    head, body = rows[0], rows[1:]
    if args.limit is not None:
        body = body[:args.limit]
    widths = [max(len(r[k]) if k < len(r) else 0 for r in [head, *body]) for k in range(len(head))]
    print("  ".join(h.rjust(w) for h, w in zip(head, widths)))
    print("  ".join("-" * w for w in widths))
    for r in body:
        print("  ".join(v.rjust(w) for v, w in zip(r, widths)))
    return 0


def _emit(text: str, path: str | None) -> None:
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="picnic", description="PICNIC chiplet accelerator simulator")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="simulate one configuration and write a report bundle")
    _add_run_flags(p)
    p.add_argument("--ccpg", type=_on_off, help="chiplet clustering and power gating (on/off)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run a grid of configurations and compare them")
    _add_run_flags(p)
    p.add_argument("--ccpg", type=_on_off, help="default CCPG setting")
    p.add_argument("--models", help="comma-separated models or preset names")
    p.add_argument("--contexts", help="comma-separated lengths, used as prompt and generation length")
    p.add_argument("--ccpg-values", help="comma-separated on/off values")
    p.add_argument("--interconnects", help="comma-separated optical/electrical")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("assemble", help="assemble NPM program text to hex")
    p.add_argument("source")
    p.add_argument("-o", "--output")
    p.add_argument("--routers", type=int, help="router count when the source has no directive")
    p.add_argument("--bank-rows", type=int, default=256)
    p.set_defaults(func=cmd_assemble)

    p = sub.add_parser("disassemble", help="disassemble an NPM hex image")
    p.add_argument("source")
    p.add_argument("-o", "--output")
    p.add_argument("--bank-rows", type=int, default=256)
    p.set_defaults(func=cmd_disassemble)

    p = sub.add_parser("map", help="print the mapping plan of a model")
    p.add_argument("model")
    p.add_argument("--context", type=int, help="context length for the KV budget")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_map)

    p = sub.add_parser("trace", help="pretty-print a trace or log CSV")
    p.add_argument("file")
    p.add_argument("--limit", type=int)
    p.set_defaults(func=cmd_trace)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except BrokenPipeError:             # output piped into e.g. head
        os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
        return 0
    except AssemblyError as exc:
        print(f"picnic: assembly error: {exc}", file=sys.stderr)
    except (ConfigError, IsaError, CliError, FileNotFoundError) as exc:
        print(f"picnic: {exc}", file=sys.stderr)
    except RuntimeError as exc:         # capacity errors from the mapper, verbatim
        print(f"picnic: {type(exc).__name__}: {exc}", file=sys.stderr)
    return 2


if __name__ == "__main__":
    sys.exit(main())
