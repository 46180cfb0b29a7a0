"""Declarative scenarios: load, validate, run on a :class:`World`, audit the trace.

A scenario is a JSON document checked against :data:`SCHEMA`.  Its
``schedule`` is a list of ``{tick, action, params}`` events run in order;
ticks may repeat but never go back.  The trace is one JSON object per line
with sorted keys, so two runs of one scenario are byte-identical.
"""

import json
from collections import defaultdict
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Optional, Union

import jsonschema

from . import codec
from .adversary import captured_deposit, captured_statement, forge_statements
from .funds import Coin
from .trust_anchor import Evidence
from .wallet import TeeMode
from .world import ScheduleViolation, World, WorldConfig, identity_of

ACTIONS = ("set_connectivity", "withdraw", "pay_offline", "receive", "sync", "attack", "recovery_claim",
           "process_recoveries")

_NAMES = {"type": "array", "items": {"type": "string"}}

SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "title": "offline-cbdc scenario",
    "type": "object",
    "required": ["seed", "parties", "schedule"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string"},
        "description": {"type": "string"},
        "seed": {"type": "integer", "minimum": 0, "maximum": 2 ** 64 - 1},
        "parties": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["name", "initial_balance"],
                "additionalProperties": False,
                "properties": {
                    "name": {"type": "string", "minLength": 1, "not": {"const": "TA"}},
                    "initial_balance": {"type": "integer", "minimum": 0},
                    "tee_mode": {"enum": [m.value for m in TeeMode]},
                },
            },
        },
        "tee_mode": {"enum": [m.value for m in TeeMode]},
        "expiry_policy": {
            "oneOf": [
                {"const": "none"},
                {"type": "object", "required": ["ticks"], "additionalProperties": False,
                 "properties": {"ticks": {"type": "integer", "minimum": 1}}},
            ]
        },
        "k": {"type": "integer", "minimum": 2, "maximum": 64},
        "candidate_count": {"type": "integer", "minimum": 4},
        "rsa_bits": {"type": "integer", "minimum": 256},
        "expect_failures": _NAMES,
        "schedule": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["tick", "action"],
                "additionalProperties": False,
                "properties": {
                    "tick": {"type": "integer", "minimum": 0},
                    "action": {"enum": list(ACTIONS)},
                    "params": {"type": "object"},
                },
            },
        },
    },
}

# which params of each action name a party
_PARTY_PARAMS = {
    "withdraw": ("party",),
    "pay_offline": ("payer", "payee"),
    "receive": ("payer", "payee"),
    "sync": ("party",),
    "recovery_claim": ("party",),
}

AUDITORS = ("conservation", "custody_uniqueness", "counter_monotonicity", "chain_growth", "settled_unique",
            "blacklist_monotonicity", "evidence_reproducibility", "honest_safety")


class ConfigInvalid(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path or '<root>'}: {message}")
        self.path = path


class TraceCorrupt(ValueError):
    pass


def _path(parts) -> str:
    return "/".join(str(p) for p in parts)


def load_config(source: Union[str, Path, dict]) -> dict:
    """Parse and validate a scenario; raises :class:`ConfigInvalid` naming the bad field."""
    if isinstance(source, dict):
        config = source
    else:
        try:
            config = json.loads(Path(source).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigInvalid("", f"not JSON: {exc}") from None
    validate(config)
    return config


def validate(config: dict):
    errors = sorted(jsonschema.Draft7Validator(SCHEMA).iter_errors(config), key=lambda e: list(e.absolute_path))
    if errors:
        raise ConfigInvalid(_path(errors[0].absolute_path), errors[0].message)
    names = [p["name"] for p in config["parties"]]
    if len(set(names)) != len(names):
        raise ConfigInvalid("parties", "duplicate party name")
    k = config.get("k", 16)
    if config.get("candidate_count", 2 * k) != 2 * k:
        raise ConfigInvalid("candidate_count", f"must be 2k = {2 * k}")
    declared = set(names)
    for i, event in enumerate(config["schedule"]):
        params = event.get("params", {})
        if event["action"] == "attack" and params.get("op") == "import" and "into" in params:
            declared.add(params["into"])  # a clone device exists from here on
        for key in _PARTY_PARAMS.get(event["action"], ()):
            if key not in params:
                raise ConfigInvalid(_path(["schedule", i, "params", key]), "required")
            if params[key] not in declared:
                raise ConfigInvalid(_path(["schedule", i, "params", key]), f"undeclared party {params[key]!r}")
        for key in ("online", "offline", "partition"):
            for j, name in enumerate(params.get(key, ()) if event["action"] == "set_connectivity" else ()):
                if name not in declared:
                    raise ConfigInvalid(_path(["schedule", i, "params", key, j]), f"undeclared party {name!r}")


def world_config(config: dict, seed: Optional[int] = None) -> WorldConfig:
    default = TeeMode(config.get("tee_mode", TeeMode.SECURE_ELEMENT.value))
    policy = config.get("expiry_policy", "none")
    return WorldConfig(
        seed=config["seed"] if seed is None else seed,
        parties={p["name"]: p["initial_balance"] for p in config["parties"]},
        tee_modes={p["name"]: TeeMode(p["tee_mode"]) for p in config["parties"] if "tee_mode" in p},
        default_tee=default,
        expiry_ticks=None if policy == "none" else policy["ticks"],
        k=config.get("k", 16),
        rsa_bits=config.get("rsa_bits", 512),
        name=config.get("name", "scenario"),
        expect_failures=tuple(config.get("expect_failures", ())),
    )


# -- running -------------------------------------------------------------------


@dataclass
class ScenarioResult:
    trace: str
    audit: dict
    exit_status: int
    world: Optional[World] = None


def run_scenario(source, seed: Optional[int] = None, trace_out: Optional[Union[str, Path]] = None) -> ScenarioResult:
    config = load_config(source)
    schedule = config["schedule"]
    last = 0
    for event in schedule:
        if event["tick"] < last:
            raise ScheduleViolation(event["tick"])
        last = event["tick"]
    if not schedule:
        # nothing happens, nothing is recorded
        result = ScenarioResult("", {}, 0)
    else:
        world = World(world_config(config, seed))
        held = defaultdict(list)
        for event in schedule:
            _dispatch(world, event["tick"], event["action"], event.get("params", {}), held)
        trace = world.trace_lines()
        audit = audit_trace(trace)
        result = ScenarioResult(trace, audit, exit_status(audit), world)
    if trace_out is not None:
        Path(trace_out).write_text(result.trace)
    return result


def _dispatch(w: World, tick: int, action: str, p: dict, held: dict):
    if action == "set_connectivity":
        if "partition" in p:
            w.go_offline(tick, *p["partition"])
        update = {key: p[key] for key in ("online", "offline", "all_offline", "all_online") if key in p}
        for key in ("link", "unlink"):
            if key in p:
                update[key] = [tuple(pair) for pair in p[key]]
        if update or "partition" not in p:
            w.set_connectivity(tick, **update)
    elif action == "withdraw":
        w.withdraw(p["party"], p.get("denomination", 10), tick, fraud=p.get("fraud", False))
    elif action == "pay_offline":
        receive = p.get("receive", True)
        out = w.pay(p["payer"], p["payee"], tick, serial=_serial(p), receive=receive, fraud=p.get("fraud", False))
        if not receive and not isinstance(out, Exception):
            held[(p["payer"], p["payee"])].append(out)
    elif action == "receive":
        queue = held[(p["payer"], p["payee"])]
        if queue:
            w.deliver_statement(p["payer"], p["payee"], queue.pop(0), tick, fraud=p.get("fraud", False))
        else:
            w.emit("receive", p["payee"], "NothingInFlight", sender=p["payer"], fraud=False, accepted=False)
    elif action == "sync":
        if p.get("connect", False):
            w.go_online(tick, p["party"])
        w.sync(p["party"], tick)
    elif action == "attack":
        _attack(w, tick, p)
    elif action == "recovery_claim":
        w.recovery_claim(p["party"], tick, lost=p.get("lost", False), fraud=p.get("fraud", False))
    elif action == "process_recoveries":
        w.process_recoveries(tick)


def _serial(p: dict) -> Optional[int]:
    return int(p["serial"], 16) if "serial" in p else None


def _attack(w: World, tick: int, p: dict):
    op = p.get("op")
    if op == "export":
        w.export_state(p["party"], p.get("label", "snapshot"), tick)
    elif op == "import":
        w.import_state(p.get("label", "snapshot"), p["into"], tick)
    elif op == "replay":
        attacker, victim = p["attacker"], p["victim"]
        if p.get("target") == "TA":
            w.submit_deposit(attacker, captured_deposit(w, victim), tick, fraud=True)
        else:
            w.deliver_statement(attacker, victim, captured_statement(w, victim), tick, fraud=True)
    elif op == "forge":
        attacker, payee = p["attacker"], p["payee"]
        for statement in forge_statements(w, attacker, p["victim"], payee, tick):
            w.deliver_statement(attacker, payee, statement, tick, fraud=True)
    else:
        raise ConfigInvalid("params/op", f"unknown attack op {op!r}")


# -- auditing ------------------------------------------------------------------


@dataclass
class AuditResult:
    name: str
    passed: bool
    first_failure_tick: Optional[int] = None
    detail: str = ""
    expected: bool = False

    def line(self) -> str:
        status = "PASS" if self.passed else ("FAIL(expected)" if self.expected else "FAIL")
        tick = "" if self.first_failure_tick is None else str(self.first_failure_tick)
        return f"{self.name}\t{status}\t{tick}\t{self.detail}"


def parse_trace(text: str) -> list:
    events = []
    for n, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            event = json.loads(line)
        except json.JSONDecodeError as exc:
            raise TraceCorrupt(f"line {n}: {exc}") from None
        if not isinstance(event, dict) or not {"tick", "actor", "kind", "digest", "outcome", "data"} <= set(event):
            raise TraceCorrupt(f"line {n}: missing fields")
        events.append(event)
    return events


def audit_trace(trace: Union[str, list]) -> dict:
    """Run every auditor over a finished trace; returns ``{name: AuditResult}``."""
    events = parse_trace(trace) if isinstance(trace, str) else trace
    header = next((e for e in events if e["kind"] == "header"), None)
    expected = set(header["data"].get("expect_failures", ())) if header else set()
    out = {}
    for name in AUDITORS:
        tick, detail = _AUDIT_FUNCS[name](events)
        out[name] = AuditResult(name, tick is None, tick, detail, expected=name in expected)
    return out


def exit_status(audit: dict) -> int:
    """1 iff some auditor failed that the scenario did not expect to fail."""
    return 1 if any(not r.passed and not r.expected for r in audit.values()) else 0


def render_audit(audit: dict) -> str:
    return "".join(r.line() + "\n" for r in audit.values())


def _conservation(events):
    for e in events:
        led = e["data"].get("ledger")
        if not led:
            continue
        if led["accounts_sum"] + led["outstanding"] != led["initial_total"]:
            return e["tick"], "accounts + outstanding != initial total"
        if led["over_credit"]:
            return e["tick"], f"over-credit {led['over_credit']}"
    return None, ""


def _custody(events):
    holders = defaultdict(set)
    for e in events:
        if e["kind"] in ("export", "import") and e["outcome"] == "ok":
            return e["tick"], f"raw state {e['kind']} by {e['actor']}"
        custody = e["data"].get("custody", {})
        for serial, who in custody.get("remove", ()):
            holders[serial].discard(who)
        for serial, who in custody.get("add", ()):
            holders[serial].add(who)
            if len(holders[serial]) > 1:
                return e["tick"], f"{serial[:16]} held by {sorted(holders[serial])}"
    return None, ""


def _counters(events):
    last = {}
    for e in events:
        if e["kind"] == "pay" and e["outcome"] == "ok":
            c = e["data"]["counter"]
            if c <= last.get(e["actor"], 0):
                return e["tick"], f"{e['actor']} counter {c} after {last[e['actor']]}"
            last[e["actor"]] = c
    return None, ""


def _chain_growth(events):
    for e in events:
        if e["kind"] == "pay" and e["outcome"] == "ok" and e["data"]["size"] <= e["data"]["prev_size"]:
            return e["tick"], "chain did not grow"
    return None, ""


def _settled_unique(events):
    seen = set()
    for e in events:
        if e["kind"] == "settle" and e["outcome"] == "Settled" and not e["data"].get("duplicate"):
            serial = e["data"]["serial"]
            if serial in seen:
                return e["tick"], f"{serial[:16]} settled twice"
            seen.add(serial)
    return None, ""


def _blacklist(events):
    size = 0
    for e in events:
        led = e["data"].get("ledger")
        if led:
            if led["blacklist"] < size:
                return e["tick"], "blacklist shrank"
            size = led["blacklist"]
    return None, ""


def _evidence(events):
    for e in events:
        if e["kind"] == "settle" and e["outcome"] == "DoubleSpendDetected":
            d = e["data"]
            try:
                evidence = Evidence.from_wire(codec.unpack(bytes.fromhex(d["evidence"])))
                coin = Coin.from_wire(codec.unpack(bytes.fromhex(d["coin"])))
                identity = evidence.reproduce(coin)
            except (KeyError, ValueError, TypeError):
                return e["tick"], "evidence does not decode"
            if (identity.hex() if identity else None) != d.get("identity"):
                return e["tick"], "evidence names someone else"
    return None, ""


def _honest_safety(events):
    guilty = set()
    for e in events:
        d = e["data"]
        if d.get("fraud") or d.get("marker"):
            guilty.add(identity_of(e["actor"]).hex())
            if "owner" in d:
                guilty.add(identity_of(d["owner"]).hex())
        if e["kind"] == "settle" and d.get("identity") and (
                e["outcome"] == "DoubleSpendDetected" or d.get("over_credit")):
            if d["identity"] not in guilty:
                return e["tick"], f"honest party {bytes.fromhex(d['identity']).decode(errors='replace')} blamed"
    return None, ""


_AUDIT_FUNCS = {
    "conservation": _conservation,
    "custody_uniqueness": _custody,
    "counter_monotonicity": _counters,
    "chain_growth": _chain_growth,
    "settled_unique": _settled_unique,
    "blacklist_monotonicity": _blacklist,
    "evidence_reproducibility": _evidence,
    "honest_safety": _honest_safety,
}


# -- bundled scenarios -----------------------------------------------------------


def bundled_scenarios() -> list:
    return sorted(p.name[:-5] for p in resources.files(__package__).joinpath("scenarios").iterdir()
                  if p.name.endswith(".json"))


def bundled_path(name: str):
    return resources.files(__package__).joinpath("scenarios", f"{name}.json")


def schema_json() -> str:
    return json.dumps(SCHEMA, indent=2, sort_keys=True) + "\n"
