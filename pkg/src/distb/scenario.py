"""Scenario files: a sectioned ``key = value`` text format.

Every key has a documented default (see :data:`SCHEMA_DOC` or
``distb validate --schema``). Unknown sections or keys are errors, and every
error carries the offending line number.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass

from .adversary import AttackProfile
from .consensus import TAU_MAX, TAU_MIN
from .mobility import PAPER_PACKET_SIZES

VARIANTS = ("core", "distb", "both")


class ScenarioError(ValueError):
    def __init__(self, message, line=None, key=None):
        where = f"line {line}: " if line is not None else ""
        super().__init__(where + message)
        self.line = line
        self.key = key


@dataclass
class RunSection:
    seed: int = 42
    duration_s: float = 600.0
    window_s: float = 10.0
    variant: str = "both"
    fast_crypto: bool = False
    label: str = ""


@dataclass
class FieldSection:
    width_m: float = 3000.0
    height_m: float = 3000.0


@dataclass
class NodesSection:
    sensors: int = 40
    gateways: int = 4
    miners: int = 6
    switches: int = 9


@dataclass
class TrafficSection:
    packet_size: int = 256
    gen_interval_ms: int = 1000
    radio_range_m: float = 250.0
    ap_range_m: float = 1000.0
    speed_min_mps: float = 1.0
    speed_max_mps: float = 20.0
    pause_min_s: float = 0.0
    pause_max_s: float = 2.0
    mobility_step_ms: int = 1000


@dataclass
class FabricSection:
    link_latency_ms: int = 5
    link_capacity_pps: float = 1000.0
    access_latency_ms: int = 2
    control_latency_ms: int = 2
    idle_timeout_s: float = 10.0
    queue_limit: int = 64


@dataclass
class LedgerSection:
    tau: float = 0.66
    round_period_ms: int = 1000
    max_block_txs: int = 64
    tx_flush_ms: int = 250


@dataclass
class OutputsSection:
    csv: bool = True
    svg: bool = True
    trace: bool = False
    rounds_log: bool = False
    attack_log: bool = False


SECTIONS = {
    "scenario": ("run", RunSection),
    "field": ("field", FieldSection),
    "nodes": ("nodes", NodesSection),
    "traffic": ("traffic", TrafficSection),
    "fabric": ("fabric", FabricSection),
    "ledger": ("ledger", LedgerSection),
    "attack": ("attack", AttackProfile),
    "outputs": ("outputs", OutputsSection),
}


@dataclass
class Scenario:
    run: RunSection = dataclasses.field(default_factory=RunSection)
    field: FieldSection = dataclasses.field(default_factory=FieldSection)
    nodes: NodesSection = dataclasses.field(default_factory=NodesSection)
    traffic: TrafficSection = dataclasses.field(default_factory=TrafficSection)
    fabric: FabricSection = dataclasses.field(default_factory=FabricSection)
    ledger: LedgerSection = dataclasses.field(default_factory=LedgerSection)
    attack: AttackProfile = dataclasses.field(default_factory=AttackProfile)
    outputs: OutputsSection = dataclasses.field(default_factory=OutputsSection)
    allow_nonpaper: bool = False

    @property
    def nodes_total(self) -> int:
        n = self.nodes
        return n.sensors + n.gateways + n.miners

    def variants(self) -> list:
        return ["core", "distb"] if self.run.variant == "both" else [self.run.variant]

    def copy(self) -> "Scenario":
        return dataclasses.replace(
            self, **{attr: dataclasses.replace(getattr(self, attr)) for attr, _ in SECTIONS.values()}
        )


def _coerce(raw: str, default, key, line):
    try:
        if isinstance(default, bool):
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw, 0)
        if isinstance(default, float):
            return float(raw)
        return raw
    except ValueError:
        kind = type(default).__name__
        raise ScenarioError(f"{key}: cannot parse {raw!r} as {kind}", line, key) from None


def parse_scenario(text: str, allow_nonpaper=False, source="<string>") -> Scenario:
    scn = Scenario(allow_nonpaper=allow_nonpaper)
    lines = {}
    section = None
    seen = set()
    for lineno, raw in enumerate(text.splitlines(), 1):
        s = raw.strip()
        if not s or s[0] in "#;":
            continue
        if s.startswith("["):
            if not s.endswith("]"):
                raise ScenarioError(f"malformed section header {s!r}", lineno)
            name = s[1:-1].strip()
            if name not in SECTIONS:
                raise ScenarioError(f"unknown section [{name}]", lineno)
            section = name
            continue
        if "=" not in s:
            raise ScenarioError(f"expected 'key = value', got {s!r}", lineno)
        key, _, value = s.partition("=")
        key, value = key.strip(), value.split(" #")[0].strip()
        if section is None:
            raise ScenarioError(f"key {key!r} outside any section", lineno, key)
        attr, cls = SECTIONS[section]
        obj = getattr(scn, attr)
        names = {f.name for f in dataclasses.fields(cls)}
        if key not in names:
            raise ScenarioError(f"unknown key {section}.{key}", lineno, f"{section}.{key}")
        full = f"{section}.{key}"
        if full in seen:
            raise ScenarioError(f"duplicate key {full}", lineno, full)
        seen.add(full)
        setattr(obj, key, _coerce(value, getattr(obj, key), full, lineno))
        lines[full] = lineno
    validate(scn, lines)
    return scn


def load_scenario(path, allow_nonpaper=False) -> Scenario:
    with open(path) as fh:
        text = fh.read()
    return parse_scenario(text, allow_nonpaper, str(path))


def validate(scn: Scenario, lines=None) -> None:
    lines = lines or {}

    def fail(key, msg):
        raise ScenarioError(msg, lines.get(key), key)

    r = scn.run
    if r.variant not in VARIANTS:
        fail("scenario.variant", f"scenario.variant must be one of {VARIANTS}")
    if r.duration_s < 0:
        fail("scenario.duration_s", "scenario.duration_s must be >= 0")
    if r.window_s <= 0:
        fail("scenario.window_s", "scenario.window_s must be > 0")
    if not 0 <= r.seed < 1 << 64:
        fail("scenario.seed", "scenario.seed must be a 64-bit unsigned integer")
    if scn.field.width_m <= 0 or scn.field.height_m <= 0:
        fail("field.width_m", "field dimensions must be positive")
    n = scn.nodes
    if n.sensors < 0:
        fail("nodes.sensors", "nodes.sensors must be >= 0")
    for key in ("gateways", "miners", "switches"):
        if getattr(n, key) < 1:
            fail(f"nodes.{key}", f"nodes.{key} must be >= 1")
    t = scn.traffic
    if t.packet_size not in PAPER_PACKET_SIZES and not scn.allow_nonpaper:
        fail("traffic.packet_size",
             f"traffic.packet_size={t.packet_size} is not one of the evaluated sizes "
             f"{PAPER_PACKET_SIZES}; pass --allow-nonpaper to override")
    if t.packet_size < 1:
        fail("traffic.packet_size", "traffic.packet_size must be >= 1")
    if t.gen_interval_ms < 1:
        fail("traffic.gen_interval_ms", "traffic.gen_interval_ms must be >= 1")
    if not 0 < t.speed_min_mps <= t.speed_max_mps:
        fail("traffic.speed_min_mps", "need 0 < speed_min_mps <= speed_max_mps")
    if not 0 <= t.pause_min_s <= t.pause_max_s:
        fail("traffic.pause_min_s", "need 0 <= pause_min_s <= pause_max_s")
    if t.mobility_step_ms < 1:
        fail("traffic.mobility_step_ms", "traffic.mobility_step_ms must be >= 1")
    f = scn.fabric
    if f.link_capacity_pps <= 0:
        fail("fabric.link_capacity_pps", "fabric.link_capacity_pps must be > 0")
    if f.queue_limit < 1:
        fail("fabric.queue_limit", "fabric.queue_limit must be >= 1")
    for key in ("link_latency_ms", "access_latency_ms", "control_latency_ms"):
        if getattr(f, key) < 0:
            fail(f"fabric.{key}", f"fabric.{key} must be >= 0")
    lg = scn.ledger
    if not TAU_MIN <= lg.tau <= TAU_MAX:
        fail("ledger.tau",
             f"ledger.tau={lg.tau} outside the 60-80% consent band [{TAU_MIN}, {TAU_MAX}]")
    if lg.round_period_ms < 2:
        fail("ledger.round_period_ms", "ledger.round_period_ms must be >= 2")
    if lg.max_block_txs < 1:
        fail("ledger.max_block_txs", "ledger.max_block_txs must be >= 1")
    if lg.tx_flush_ms < 1:
        fail("ledger.tx_flush_ms", "ledger.tx_flush_ms must be >= 1")
    try:
        scn.attack.validate()
    except ValueError as exc:
        key = str(exc).split()[0]
        fail(key, str(exc))
    if scn.attack.compromised_miners > n.miners:
        fail("attack.compromised_miners", "attack.compromised_miners exceeds nodes.miners")


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def dump_scenario(scn: Scenario) -> str:
    out = []
    for name, (attr, cls) in SECTIONS.items():
        out.append(f"[{name}]")
        obj = getattr(scn, attr)
        for f in dataclasses.fields(cls):
            out.append(f"{f.name} = {_fmt(getattr(obj, f.name))}")
        out.append("")
    return "\n".join(out)


def _schema_doc() -> str:
    return dump_scenario(Scenario())


SCHEMA_DOC = _schema_doc()

# "nodes" is the total population; it resizes the sensor count.
SWEEPABLE = {
    "nodes", "seed",
    "sensors", "gateways", "miners", "switches",
    "packet_size", "gen_interval_ms", "radio_range_m",
    "link_capacity_pps", "queue_limit",
    "tau", "round_period_ms", "max_block_txs",
    "tamper_prob", "flood_rate", "compromise_attempt_rate",
    "compromise_success_core", "compromise_success_distb",
    "forge_block_rate", "attacker_count", "compromised_miners",
}


def _locate(param: str):
    if "." in param:
        sec, key = param.split(".", 1)
        if sec in SECTIONS:
            return SECTIONS[sec][0], key
    for attr, cls in SECTIONS.values():
        if param in {f.name for f in dataclasses.fields(cls)}:
            return attr, param
    raise ScenarioError(f"unknown parameter {param!r}")


def with_param(scn: Scenario, param: str, raw) -> Scenario:
    """Copy of ``scn`` with one sweepable scalar replaced, re-validated."""
    name = param.split(".")[-1]
    if name not in SWEEPABLE:
        raise ScenarioError(f"parameter {param!r} is not sweepable")
    new = scn.copy()
    if name == "nodes":
        total = int(raw)
        sensors = total - new.nodes.gateways - new.nodes.miners
        if sensors < 0:
            raise ScenarioError(f"nodes={total} is smaller than gateways + miners")
        new.nodes.sensors = sensors
    else:
        attr, key = _locate(param)
        obj = getattr(new, attr)
        default = getattr(obj, key)
        value = _coerce(str(raw), default, param, None) if isinstance(raw, str) else type(default)(raw)
        setattr(obj, key, value)
    validate(new)
    return new
