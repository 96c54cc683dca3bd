"""Experiment runner.

Configuration is TOML. Every key is optional; an empty file runs the
default realistic web-search scenario. Grammar::

    scenario  = "realistic"          # one of workload.SCENARIOS
    protocols = ["scdp", "ndp"]      # any of scdp, ndp, ndp_plus
    seeds     = [1]
    output    = "results"
    window    = 12                   # shorthand for scdp.window and ndp.window

    [workload]   # ScenarioSpec fields: k, sessions, rate, request_size, size_dist, ...
    [scdp]       # window, many_to_one_window, overhead, rto_ns, thresholds, mlfq, ...
    [ndp]        # window, mlfq, thresholds, rto_ns, ...
    [fabric]     # buffer_packets, header_queue_packets, wrr_header, wrr_data, trim_policy, ...
    [codec]      # name = "model" | "reference", p_fail, decode_fixed_ns, decode_throughput_bps

Times are integer nanoseconds, sizes bytes, rates bits or sessions per
second. Size distributions are ``web_search``, ``data_mining`` or
``fixed:<bytes>``. Unknown keys are errors.

Outputs, per (seed, protocol): ``<scenario>_s<seed>_<protocol>.csv`` (one
row per session) and ``..._ranked.csv`` (goodput ranked high to low).
``summary.csv`` holds the mean and 95% CI of every scalar metric across
seeds, and ``config.toml`` echoes the effective configuration.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import tomli
import tomli_w

from .codec import make_codec
from .fabric import TRIM_POLICIES, FabricConfig
from .metrics import AuditError, aggregate, export_csv, export_ranked, mean_ci95
from .ndp import NdpConfig
from .scdp import ScdpConfig
from .workload import PROTOCOLS, SCENARIOS, FlowSizeDistribution, ScenarioSpec, build_scenario

log = logging.getLogger("scdpsim")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2

# path_policy belongs to the scenario, not the fabric
_FABRIC_KEYS = tuple(f.name for f in fields(FabricConfig) if f.name != "path_policy")
_SCDP_KEYS = tuple(f.name for f in fields(ScdpConfig)
                   if f.name not in ("decode_fixed_ns", "decode_throughput_bps"))
_NDP_KEYS = tuple(f.name for f in fields(NdpConfig))
_WORKLOAD_KEYS = tuple(f.name for f in fields(ScenarioSpec) if f.name != "scenario")
_CODEC_KEYS = ("name", "p_fail", "decode_fixed_ns", "decode_throughput_bps")
_TOP_KEYS = ("scenario", "protocols", "seeds", "output", "window")
_TABLES = ("workload", "scdp", "ndp", "fabric", "codec")


class ConfigError(ValueError):
    def __init__(self, message: str, key: str | None = None, line: int | None = None):
        where = f"line {line}: " if line is not None else ""
        what = f"{key}: " if key else ""
        super().__init__(f"{where}{what}{message}")
        self.key = key
        self.line = line


@dataclass
class RunConfig:
    spec: ScenarioSpec = field(default_factory=ScenarioSpec)
    protocols: tuple = ("scdp", "ndp")
    seeds: tuple = (1,)
    output: str = "results"
    scdp: ScdpConfig = field(default_factory=ScdpConfig)
    ndp: NdpConfig = field(default_factory=NdpConfig)
    fabric: FabricConfig = field(default_factory=FabricConfig)
    codec: str = "model"
    p_fail: float | None = None

    def make_codec(self):
        if self.codec == "model" and self.p_fail is not None:
            return make_codec("model", p_fail=self.p_fail)
        return make_codec(self.codec)

    def to_dict(self) -> dict:
        """TOML-ready document that parses back to an equal config."""
        spec = asdict(self.spec)
        doc = {
            "scenario": spec.pop("scenario"),
            "protocols": list(self.protocols),
            "seeds": list(self.seeds),
            "output": self.output,
            "workload": spec,
            "scdp": {k: _plain(getattr(self.scdp, k)) for k in _SCDP_KEYS},
            "ndp": {k: _plain(getattr(self.ndp, k)) for k in _NDP_KEYS},
            "fabric": {k: getattr(self.fabric, k) for k in _FABRIC_KEYS},
            "codec": {"name": self.codec,
                      "decode_fixed_ns": self.scdp.decode_fixed_ns,
                      "decode_throughput_bps": self.scdp.decode_throughput_bps},
        }
        if self.p_fail is not None:
            doc["codec"]["p_fail"] = self.p_fail
        return doc


def _plain(v):
    return list(v) if isinstance(v, tuple) else v


def _line_of(text: str, table: str | None, key: str) -> int | None:
    """Best-effort line number of ``key`` (inside ``[table]`` if given)."""
    current = None
    for i, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if line.startswith("[") and line.endswith("]"):
            current = line.strip("[] ")
            continue
        if current == table and line.partition("=")[0].strip() == key:
            return i
    return None


def _coerce(value, default):
    """Check ``value`` against the type of a field's default (ValueError on mismatch)."""
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ValueError("expected true or false")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ValueError("expected an integer")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ValueError("expected a number")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ValueError("expected a string")
        return value
    if isinstance(default, tuple):
        if not isinstance(value, list) or not all(
                isinstance(x, int) and not isinstance(x, bool) for x in value):
            raise ValueError("expected a list of integers")
        return tuple(value)
    return value


def _section(obj, table: dict, allowed: tuple, name: str, text: str):
    changes = {}
    for key, value in table.items():
        if key not in allowed:
            raise ConfigError("unknown key", f"{name}.{key}", _line_of(text, name, key))
        try:
            changes[key] = _coerce(value, getattr(obj, key))
        except ValueError as exc:
            raise ConfigError(str(exc), f"{name}.{key}", _line_of(text, name, key)) from None
    return replace(obj, **changes)


def _check(cond: bool, key: str, message: str, text: str) -> None:
    if not cond:
        table, _, leaf = key.rpartition(".")
        raise ConfigError(message, key, _line_of(text, table or None, leaf))


def parse_config(text: str) -> RunConfig:
    """Parse and validate a TOML run configuration."""
    try:
        doc = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(getattr(exc, "msg", str(exc)),
                          line=getattr(exc, "lineno", None)) from None
    for key, value in doc.items():
        if key in _TABLES:
            if not isinstance(value, dict):
                raise ConfigError("expected a table", key, _line_of(text, None, key))
        elif key not in _TOP_KEYS:
            raise ConfigError("unknown key", key, _line_of(text, None, key))

    cfg = RunConfig()
    scenario = doc.get("scenario", cfg.spec.scenario)
    _check(isinstance(scenario, str) and scenario in SCENARIOS, "scenario",
           f"expected one of {', '.join(SCENARIOS)}", text)
    spec = _section(replace(cfg.spec, scenario=scenario), doc.get("workload", {}),
                    _WORKLOAD_KEYS, "workload", text)

    protocols = doc.get("protocols", list(cfg.protocols))
    _check(isinstance(protocols, list) and len(protocols) > 0
           and all(p in PROTOCOLS for p in protocols) and len(set(protocols)) == len(protocols),
           "protocols", f"expected distinct names from {', '.join(PROTOCOLS)}", text)
    seeds = doc.get("seeds", list(cfg.seeds))
    _check(isinstance(seeds, list) and len(seeds) > 0
           and all(isinstance(s, int) and not isinstance(s, bool) and s >= 0 for s in seeds)
           and len(set(seeds)) == len(seeds),
           "seeds", "expected a non-empty list of distinct non-negative integers", text)
    output = doc.get("output", cfg.output)
    _check(isinstance(output, str) and output != "", "output", "expected a path", text)

    scdp = cfg.scdp
    ndp = cfg.ndp
    if "window" in doc:
        w = doc["window"]
        _check(isinstance(w, int) and not isinstance(w, bool), "window", "expected an integer",
               text)
        _check(w >= 1, "window", "must be at least 1", text)
        scdp = replace(scdp, window=w)
        ndp = replace(ndp, window=w)
    scdp = _section(scdp, doc.get("scdp", {}), _SCDP_KEYS, "scdp", text)
    ndp = _section(ndp, doc.get("ndp", {}), _NDP_KEYS, "ndp", text)
    fabric = _section(cfg.fabric, doc.get("fabric", {}), _FABRIC_KEYS, "fabric", text)

    codec_doc = dict(doc.get("codec", {}))
    for key in codec_doc:
        if key not in _CODEC_KEYS:
            raise ConfigError("unknown key", f"codec.{key}", _line_of(text, "codec", key))
    codec = codec_doc.pop("name", "model")
    _check(codec in ("model", "reference"), "codec.name", "expected model or reference", text)
    p_fail = codec_doc.pop("p_fail", None)
    if p_fail is not None:
        _check(isinstance(p_fail, (int, float)) and not isinstance(p_fail, bool),
               "codec.p_fail", "expected a number", text)
        p_fail = float(p_fail)
        _check(0.0 <= p_fail <= 1.0, "codec.p_fail", "must lie in [0, 1]", text)
    scdp = _section(scdp, codec_doc, ("decode_fixed_ns", "decode_throughput_bps"), "codec", text)

    _validate(spec, scdp, ndp, fabric, text)
    return RunConfig(spec, tuple(protocols), tuple(seeds), output, scdp, ndp, fabric, codec,
                     p_fail)


def _known_dist(name: str) -> bool:
    try:
        FlowSizeDistribution.named(name)
    except ValueError:
        return False
    return True


def _validate(spec: ScenarioSpec, scdp: ScdpConfig, ndp: NdpConfig, fabric: FabricConfig,
              text: str) -> None:
    _check(spec.k >= 4 and spec.k % 2 == 0, "workload.k", "must be an even number >= 4", text)
    _check(spec.link_capacity > 0, "workload.link_capacity", "must be positive", text)
    _check(spec.link_delay_ns >= 0, "workload.link_delay_ns", "must be non-negative", text)
    _check(spec.sessions >= 0, "workload.sessions", "must be non-negative", text)
    _check(spec.rate > 0, "workload.rate", "must be positive", text)
    _check(spec.request_size > 0, "workload.request_size", "must be positive", text)
    for key in ("size_dist", "background_dist"):
        _check(_known_dist(getattr(spec, key)), f"workload.{key}",
               "expected web_search, data_mining or fixed:<bytes>", text)
    _check(0.0 <= spec.background_fraction <= 1.0, "workload.background_fraction",
           "must lie in [0, 1]", text)
    _check(0.0 <= spec.background_load < 1.0, "workload.background_load",
           "must lie in [0, 1)", text)
    _check(spec.write_mode in ("daisy_chain", "multi_unicast"), "workload.write_mode",
           "expected daisy_chain or multi_unicast", text)
    _check(spec.n_senders >= 1, "workload.n_senders", "must be at least 1", text)
    _check(0.0 < spec.throttle_rate <= 1.0, "workload.throttle_rate", "must lie in (0, 1]",
           text)
    _check(spec.interval_ns > 0, "workload.interval_ns", "must be positive", text)
    _check(spec.flows >= 1, "workload.flows", "must be at least 1", text)
    _check(spec.placement in ("any", "intra_pod"), "workload.placement",
           "expected any or intra_pod", text)
    _check(spec.horizon_ns > 0, "workload.horizon_ns", "must be positive", text)

    for name, c in (("scdp", scdp), ("ndp", ndp)):
        _check(c.window >= 1, f"{name}.window", "must be at least 1", text)
        _check(c.rto_ns > 0, f"{name}.rto_ns", "must be positive", text)
        _check(c.max_backoff >= 0, f"{name}.max_backoff", "must be non-negative", text)
        th = c.thresholds
        _check(all(t > 0 for t in th) and all(a < b for a, b in zip(th, th[1:])),
               f"{name}.thresholds", "must be positive and strictly increasing", text)
    _check(scdp.symbol_size >= 1, "scdp.symbol_size", "must be positive", text)
    _check(ndp.packet_size >= 1, "ndp.packet_size", "must be positive", text)
    _check(scdp.many_to_one_window >= 1, "scdp.many_to_one_window", "must be at least 1", text)
    _check(scdp.overhead >= 0, "scdp.overhead", "must be non-negative", text)
    _check(scdp.release_factor >= 1, "scdp.release_factor", "must be at least 1", text)
    _check(1 <= scdp.max_block <= 256, "scdp.max_block", "must lie in [1, 256]", text)
    _check(scdp.decode_fixed_ns >= 0, "codec.decode_fixed_ns", "must be non-negative", text)
    _check(scdp.decode_throughput_bps > 0, "codec.decode_throughput_bps", "must be positive",
           text)

    _check(fabric.buffer_packets >= 1, "fabric.buffer_packets", "must be at least 1", text)
    _check(fabric.header_queue_packets >= 1, "fabric.header_queue_packets",
           "must be at least 1", text)
    _check(fabric.n_data_queues >= 1, "fabric.n_data_queues", "must be at least 1", text)
    _check(fabric.wrr_header >= 1, "fabric.wrr_header", "must be at least 1", text)
    _check(fabric.wrr_data >= 1, "fabric.wrr_data", "must be at least 1", text)
    _check(fabric.symbol_wire_bytes >= 1, "fabric.symbol_wire_bytes", "must be positive", text)
    _check(fabric.trim_policy in TRIM_POLICIES, "fabric.trim_policy",
           f"expected one of {', '.join(TRIM_POLICIES)}", text)


def load_config(path: str | Path) -> RunConfig:
    return parse_config(Path(path).read_text())


def dump_config(cfg: RunConfig) -> str:
    return tomli_w.dumps(cfg.to_dict())


def run_experiment(cfg: RunConfig, output: str | Path | None = None) -> Path:
    """Run every (seed, protocol) pair and write CSVs, a summary and the config echo.

    Returns the output directory. Audit failures propagate as ``AuditError``.
    """
    from .experiment import run_scenario

    out = Path(output if output is not None else cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.toml").write_text(dump_config(replace(cfg, output=str(out))))

    name = cfg.spec.scenario
    per_run: dict[str, list[dict[str, float]]] = {p: [] for p in cfg.protocols}
    for seed in sorted(cfg.seeds):
        # one scenario per seed: every protocol sees the same traffic
        scenario = build_scenario(cfg.spec, seed)
        for protocol in sorted(cfg.protocols):
            log.info("running %s seed=%d protocol=%s", name, seed, protocol)
            result = run_scenario(scenario, protocol, seed, fabric=cfg.fabric, scdp=cfg.scdp,
                                  ndp=cfg.ndp, codec=cfg.make_codec())
            stem = f"{name}_s{seed}_{protocol}"
            export_csv(result.records, out / f"{stem}.csv")
            export_ranked(result.records, out / f"{stem}_ranked.csv")
            metrics = aggregate(result.records)
            metrics["unfinished"] = result.unfinished
            for tag, bps in result.group_rates().items():
                metrics[f"group_{tag}_bps"] = bps
            per_run[protocol].append(metrics)
            log.info("  %d sessions, %d unfinished", len(result.records), result.unfinished)

    with (out / "summary.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["protocol", "metric", "mean", "ci95", "runs"])
        for protocol in sorted(per_run):
            runs = per_run[protocol]
            keys = sorted({k for m in runs for k in m})
            for key in keys:
                values = [m[key] for m in runs if key in m]
                mean, half = mean_ci95(values)
                w.writerow([protocol, key, f"{mean:.6g}", f"{half:.6g}", len(values)])
    return out


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="scdpsim", description="Run SCDP / NDP data-centre transport experiments.")
    p.add_argument("config", nargs="?", help="TOML run configuration (defaults if omitted)")
    p.add_argument("-o", "--output", help="output directory (overrides the config)")
    p.add_argument("-s", "--seed", type=int, action="append",
                   help="run this seed (repeatable; replaces the configured seeds)")
    p.add_argument("--scenario", choices=SCENARIOS, help="override the configured scenario")
    p.add_argument("--topology", action="store_true",
                   help="print the topology summary and exit")
    p.add_argument("--print-config", action="store_true",
                   help="print the effective configuration and exit")
    p.add_argument("-v", "--verbose", action="count", default=0)
    p.add_argument("-q", "--quiet", action="store_true")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING if args.quiet else (logging.DEBUG if args.verbose > 1
                                                else logging.INFO)
    logging.basicConfig(level=level, format="%(message)s", stream=sys.stderr)

    try:
        cfg = load_config(args.config) if args.config else parse_config("")
        if args.scenario:
            cfg = replace(cfg, spec=replace(cfg.spec, scenario=args.scenario))
        if args.seed:
            if any(s < 0 for s in args.seed):
                raise ConfigError("seeds must be non-negative", "seed")
            cfg = replace(cfg, seeds=tuple(dict.fromkeys(args.seed)))
        if args.output:
            cfg = replace(cfg, output=args.output)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    if args.print_config:
        sys.stdout.write(dump_config(cfg))
        return EXIT_OK
    if args.topology:
        sys.stdout.write(build_scenario(cfg.spec, cfg.seeds[0]).topo.summary())
        return EXIT_OK

    try:
        out = run_experiment(cfg)
    except AuditError as exc:
        print(f"audit failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (OSError, RuntimeError) as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    log.info("results in %s", out)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
