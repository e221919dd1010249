"""Scenario files, the experiment grid and CSV output.

Config files hold one ``key = value`` per line; ``#`` starts a comment.
Nested parameter groups use dotted keys (``radio.comm_range_m = 50``).
Missing keys keep their defaults, unknown keys are rejected.
"""
from __future__ import annotations

import argparse
import csv
import enum
import os
import sys
from dataclasses import dataclass, field, fields, is_dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple

from copycat import __version__
from copycat.attack import AttackVariant
from copycat.detect import FlagRecord, monitor
from copycat.engine import ScenarioConfig, TopologyError, mean_ci, run
from copycat.metrics import MetricsReport, compute_report

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_TOPOLOGY = 3
EXIT_IO = 4

GRID_INTERVALS = (1.0, 2.0, 3.0, 4.0)
METRICS = ("pdr", "app_pdr", "ae2ed_s", "apc_mw")
NESTED = ("radio", "energy", "duty")


class ConfigError(ValueError):
    def __init__(self, msg: str, key: Optional[str] = None, line: Optional[int] = None, path: str = "<config>"):
        self.key, self.line, self.path = key, line, path
        where = path if line is None else f"{path}:{line}"
        super().__init__(f"{where}: {key}: {msg}" if key else f"{where}: {msg}")


# -- config text ----------------------------------------------------------------

def _leaf_fields(cls=ScenarioConfig, prefix="") -> Dict[str, tuple]:
    """Dotted key -> (owning dataclass, field) for every scalar setting."""
    out = {}
    defaults = cls()
    for f in fields(cls):
        value = getattr(defaults, f.name)
        if is_dataclass(value):
            out.update(_leaf_fields(type(value), f"{f.name}."))
        else:
            out[prefix + f.name] = (type(value), f.name)
    return out


def _convert(kind: type, raw: str):
    text = raw.strip()
    if len(text) >= 2 and text[0] == text[-1] and text[0] in "\"'":
        text = text[1:-1]
    if issubclass(kind, enum.Enum):
        try:
            return kind[text.upper()]
        except KeyError:
            names = ", ".join(m.name for m in kind)
            raise ValueError(f"expected one of {names}, got {text!r}") from None
    if kind is int:
        try:
            return int(text)
        except ValueError:
            raise ValueError(f"expected an integer, got {text!r}") from None
    if kind is float:
        try:
            return float(text)
        except ValueError:
            raise ValueError(f"expected a number, got {text!r}") from None
    return text


def _build(values: Dict[str, object]) -> ScenarioConfig:
    top = {k: v for k, v in values.items() if "." not in k}
    for group in NESTED:
        sub = {k.split(".", 1)[1]: v for k, v in values.items() if k.startswith(group + ".")}
        if sub:
            base = getattr(ScenarioConfig(), group)
            try:
                top[group] = replace(base, **sub)
            except ValueError as e:
                name = str(e).split()[0]
                raise ValueError(f"{group}.{name}: {e}") from None
    return ScenarioConfig(**top)


def parse_config_text(text: str, path: str = "<config>") -> ScenarioConfig:
    known = _leaf_fields()
    values: Dict[str, object] = {}
    lines: Dict[str, int] = {}
    for n, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        key, eq, raw = body.partition("=")
        key = key.strip()
        if not eq or not key:
            raise ConfigError("expected 'key = value'", line=n, path=path)
        if key not in known:
            raise ConfigError("unknown key", key, n, path)
        if key in values:
            raise ConfigError(f"duplicate key (first set on line {lines[key]})", key, n, path)
        try:
            values[key] = _convert(known[key][0], raw)
        except ValueError as e:
            raise ConfigError(str(e), key, n, path) from None
        lines[key] = n
    try:
        return _build(values)
    except ValueError as e:
        key, _, msg = str(e).partition(": ")
        line = lines.get(key)
        if line is None and "." in key:
            # a cross-field check in a group: point at the group's first line
            group = key.split(".", 1)[0] + "."
            line = min((n for k, n in lines.items() if k.startswith(group)), default=None)
        raise ConfigError(msg or str(e), key, line, path) from None


def parse_config(path: str) -> ScenarioConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config_text(fh.read(), path)


def _render(value) -> str:
    if isinstance(value, enum.Enum):
        return value.name
    return repr(value)


def format_config(cfg: ScenarioConfig) -> str:
    """Every setting, defaults included; parses back to an equal config."""
    out = []
    for key, (_, name) in _leaf_fields().items():
        obj = cfg
        if "." in key:
            obj = getattr(cfg, key.split(".", 1)[0])
        out.append(f"{key} = {_render(getattr(obj, name))}")
    return "\n".join(out) + "\n"


# -- experiment grid --------------------------------------------------------------

@dataclass
class RunManifest:
    config_path: Optional[str]
    config: ScenarioConfig
    seeds: List[int]
    version: str = __version__
    out_dir: str = "."

    def text(self) -> str:
        head = [
            f"# tool_version: {self.version}",
            f"# config_path: {self.config_path or '<defaults>'}",
            f"# seeds: {' '.join(map(str, self.seeds))}",
            f"# out_dir: {self.out_dir}",
        ]
        return "\n".join(head) + "\n" + format_config(self.config)


@dataclass
class RunResult:
    seed: int
    report: MetricsReport
    flags: List[FlagRecord] = field(default_factory=list)


@dataclass
class CellResult:
    scenario: str
    cfg: ScenarioConfig
    runs: List[RunResult] = field(default_factory=list)
    error: Optional[BaseException] = None

    @property
    def interval(self) -> Optional[float]:
        return self.cfg.replay_interval_s if self.cfg.attacked else None


def grid_cells(base: ScenarioConfig, grid: bool = True, baseline_only: bool = False) -> List[Tuple[str, ScenarioConfig]]:
    baseline = ("baseline", replace(base, attack_variant=AttackVariant.NONE))
    if baseline_only:
        return [baseline]
    if not grid:
        name = "baseline" if not base.attacked else f"{base.attack_variant.name.lower()}_{base.replay_interval_s:g}s"
        return [(name, base)]
    cells = [baseline]
    for variant in (AttackVariant.NON_SPOOFED, AttackVariant.SPOOFED):
        for iv in GRID_INTERVALS:
            cells.append((f"{variant.name.lower()}_{iv:g}s", replace(base, attack_variant=variant, replay_interval_s=iv)))
    return cells


def _one_run(cfg: ScenarioConfig, detector: bool) -> RunResult:
    trace = run(cfg, record=False)
    flags = monitor(trace) if detector else []
    return RunResult(cfg.seed, compute_report(trace), flags)


def run_matrix(base: ScenarioConfig, grid: bool = True, baseline_only: bool = False,
               detector: bool = True, workers: int = 1, log=None) -> List[CellResult]:
    """Run every cell for seeds base.seed .. base.seed + replications - 1.

    An engine error in one cell is stored on that cell and the rest go on.
    """
    results = []
    for name, cfg in grid_cells(base, grid, baseline_only):
        cell = CellResult(name, cfg)
        cfgs = [replace(cfg, seed=cfg.seed + k) for k in range(cfg.replications)]
        try:
            if workers > 1:
                from concurrent.futures import ProcessPoolExecutor

                with ProcessPoolExecutor(workers) as pool:
                    cell.runs = list(pool.map(_one_run, cfgs, [detector] * len(cfgs)))
            else:
                cell.runs = [_one_run(c, detector) for c in cfgs]
        except (TopologyError, ValueError) as e:
            cell.error = e
        if log is not None:
            log(f"{name}: {'error: ' + str(cell.error) if cell.error else f'{len(cell.runs)} runs'}")
        results.append(cell)
    return results


# -- output -----------------------------------------------------------------------

def fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return f"{x:.6g}"
    return str(x)


def _write(path: str, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def emit_outputs(results: List[CellResult], out_dir: str, manifest: RunManifest) -> List[str]:
    if not results or not any(c.runs for c in results):
        raise ValueError("no results to write")
    os.makedirs(out_dir, exist_ok=True)
    ok = [c for c in results if c.runs]

    summary = []
    for c in ok:
        for r in c.runs:
            m = r.report
            summary.append([c.scenario, c.cfg.attack_variant.name, c.interval, r.seed,
                            m.pdr, m.app_pdr, m.ae2ed_s, m.apc_mw])

    ci_header = ["scenario", "variant", "interval_s", "n"]
    for k in METRICS:
        ci_header += [f"{k}_mean", f"{k}_ci95"]
    ci_rows = []
    for c in ok:
        row = [c.scenario, c.cfg.attack_variant.name, c.interval, len(c.runs)]
        for k in METRICS:
            row += list(mean_ci([getattr(r.report, k) for r in c.runs]))
        ci_rows.append(row)

    def power_rows():
        for c in ok:
            for r in c.runs:
                for node, series in sorted(r.report.per_node_series.items()):
                    for b in series:
                        yield [c.cfg.attack_variant.name, c.interval, r.seed, node, *b]

    def flag_rows():
        for c in ok:
            for r in c.runs:
                for f in r.flags:
                    yield [c.scenario, c.cfg.attack_variant.name, c.interval, r.seed,
                           f.window_start_s, f.observer_id, f.flagged_id, f.count, f.fence]

    paths = {name: os.path.join(out_dir, name) for name in
             ("summary.csv", "summary_ci.csv", "node_power.csv", "detector_flags.csv", "manifest.txt")}
    _write(paths["summary.csv"],
           ["scenario", "variant", "interval_s", "seed", *METRICS], summary)
    _write(paths["summary_ci.csv"], ci_header, ci_rows)
    _write(paths["node_power.csv"],
           ["variant", "interval_s", "seed", "node_id", "bin_start_s", "cpu_mw", "lpm_mw", "tx_mw", "rx_mw"],
           power_rows())
    _write(paths["detector_flags.csv"],
           ["scenario", "variant", "interval_s", "seed", "window_start_s", "observer_id", "flagged_id", "count", "fence"],
           flag_rows())
    with open(paths["manifest.txt"], "w", encoding="utf-8") as fh:
        fh.write(manifest.text())
    return list(paths.values())


# -- entry point --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="copycat", description="Simulate DIO replay attacks on an RPL network.")
    p.add_argument("--config", help="key = value scenario file (defaults when omitted)")
    p.add_argument("--out", default="results", help="output directory (default: results)")
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--grid", action="store_true", help="run baseline plus both variants at intervals 1-4 s")
    mode.add_argument("--baseline-only", action="store_true", help="run the unattacked scenario only")
    p.add_argument("--seed", type=int, help="first seed (overrides the config)")
    p.add_argument("--replications", type=int, help="seeds per cell (overrides the config)")
    p.add_argument("--detector", choices=("on", "off"), default="on")
    p.add_argument("--workers", type=int, default=1, help="worker processes per cell")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    err = lambda msg: print(f"copycat: {msg}", file=sys.stderr)  # noqa: E731
    try:
        cfg = parse_config(args.config) if args.config else ScenarioConfig()
        overrides = {}
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.replications is not None:
            overrides["replications"] = args.replications
        if overrides:
            cfg = replace(cfg, **overrides)
    except ConfigError as e:
        err(str(e))
        return EXIT_CONFIG
    except ValueError as e:
        err(f"config: {e}")
        return EXIT_CONFIG
    except OSError as e:
        err(f"cannot read config {args.config}: {e.strerror}")
        return EXIT_CONFIG

    results = run_matrix(cfg, grid=args.grid, baseline_only=args.baseline_only,
                         detector=args.detector == "on", workers=args.workers, log=err)
    failed = [c for c in results if c.error is not None]
    for c in failed:
        err(f"{c.scenario}: {c.error}")
    manifest = RunManifest(args.config, cfg, [cfg.seed + k for k in range(cfg.replications)], out_dir=args.out)
    try:
        if any(c.runs for c in results):
            emit_outputs(results, args.out, manifest)
    except OSError as e:
        err(f"cannot write to {e.filename or args.out}: {e.strerror}")
        return EXIT_IO
    if failed:
        return EXIT_TOPOLOGY if any(isinstance(c.error, TopologyError) for c in failed) else EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
