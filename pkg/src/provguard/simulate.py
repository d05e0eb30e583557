"""Synthetic labeled host telemetry: benign Poisson background plus injected
APT scenario chains.

Benign processes emit child events as homogeneous Poisson processes per event
type, so benign neighborhoods follow the distribution the encoder assumes.
Scenario chains are tight causal bursts that violate it. Output is the same
NDJSON schema the parser reads, globally sorted by timestamp.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

BASE_EPOCH_NS = 1_700_000_000_000_000_000
NS_PER_SEC = 1_000_000_000

BENIGN_IMAGES = (
    "C:\\Windows\\explorer.exe",
    "C:\\Windows\\System32\\svchost.exe",
    "C:\\Program Files\\Microsoft Office\\winword.exe",
    "C:\\Program Files\\Microsoft Office\\excel.exe",
    "C:\\Program Files\\Microsoft Office\\outlook.exe",
    "C:\\Program Files\\Google\\Chrome\\chrome.exe",
    "C:\\Windows\\System32\\notepad.exe",
    "C:\\Program Files\\Teams\\teams.exe",
)
SYSTEM_IMAGES = {"C:\\Windows\\System32\\svchost.exe"}

BENIGN_DOMAINS = ("mail.corp.local", "intranet.corp.local", "updates.vendor.com", "cdn.site.example")
BENIGN_FILES = (
    "C:\\Users\\u\\Documents\\report.docx",
    "C:\\Users\\u\\Documents\\budget.xlsx",
    "C:\\Users\\u\\Downloads\\download.txt",
    "C:\\Temp\\cache.dat",
    "C:\\Users\\u\\AppData\\settings.json",
)
BENIGN_FILE_ACTIONS = ("open", "create", "modify", "delete")

MALICIOUS_DOMAINS = ("msftr-updates.com", "cdn-telemetry.net", "sync-license.org")

PATTERN_SHELL_INJECTION = "ShellInjectionChain"
PATTERN_MALICIOUS_UPDATE = "MaliciousUpdate"
PATTERN_CREDENTIAL_HARVEST = "CredentialHarvest"
PATTERNS = (PATTERN_SHELL_INJECTION, PATTERN_MALICIOUS_UPDATE, PATTERN_CREDENTIAL_HARVEST)


class InvalidConfig(Exception):
    pass


@dataclass(frozen=True)
class AptScenario:
    pattern: str
    start_time: float  # seconds from simulation start
    host: int


@dataclass
class SimConfig:
    hosts: int = 3
    duration_seconds: float = 600.0
    benign_process_rate: float = 0.2  # process creations per host per second
    file_rate: float = 0.012  # per live process per second
    flow_rate: float = 0.006
    shell_rate: float = 0.002
    noise_rate: float = 0.004  # prunable flow noise per live process per second
    apt_scenarios: List[AptScenario] = field(default_factory=list)
    seed: int = 0

    def validate(self):
        if self.hosts < 1:
            raise InvalidConfig("need at least one host")
        if self.duration_seconds <= 0:
            raise InvalidConfig("duration must be positive")
        if self.benign_process_rate <= 0:
            raise InvalidConfig("benign process rate must be positive")
        for rate in (self.file_rate, self.flow_rate, self.shell_rate, self.noise_rate):
            if rate < 0:
                raise InvalidConfig("child event rates must be non-negative")
        for sc in self.apt_scenarios:
            if sc.pattern not in PATTERNS:
                raise InvalidConfig(f"unknown scenario pattern {sc.pattern!r}")
            if not 0 <= sc.start_time < self.duration_seconds:
                raise InvalidConfig("scenario start must fall within the run")
            if not 0 <= sc.host < self.hosts:
                raise InvalidConfig("scenario host out of range")


@dataclass
class _Proc:
    proc_id: str
    image: str
    principal: str
    birth: float


class _Emitter:
    def __init__(self, rng: random.Random):
        self.rng = rng
        self.events: List[dict] = []
        self.scenario_spans: List[dict] = []
        self._proc_seq: Dict[int, int] = {}

    def new_proc_id(self, host: int) -> str:
        n = self._proc_seq.get(host, 0)
        self._proc_seq[host] = n + 1
        return f"h{host}:p{n}"

    def emit(self, t: float, etype: str, action: str, actor: str, obj: str,
             image: Optional[str], principal: str, label: str,
             parent_actor: Optional[str] = None) -> dict:
        event = {
            "t": t,
            "type": etype,
            "action": action,
            "actor": actor,
            "object": obj,
            "principal": principal,
            "label": label,
            "pid": self.rng.randrange(1000, 65536),
            "ppid": self.rng.randrange(1000, 65536),
            "sid": f"S-1-5-21-{self.rng.randrange(10**9)}",
        }
        if image is not None:
            event["image"] = image
        if parent_actor is not None:
            event["parent_actor"] = parent_actor
        self.events.append(event)
        return event

    def spawn(self, t: float, host: int, parent: Optional[_Proc], image: str,
              principal: str, label: str) -> _Proc:
        proc = _Proc(proc_id=self.new_proc_id(host), image=image,
                     principal=principal, birth=t)
        if parent is None:
            self.emit(t, "process", "create", actor=f"h{host}:boot", obj=proc.proc_id,
                      image=image, principal="system", label=label)
        else:
            self.emit(t, "process", "create", actor=parent.proc_id, obj=proc.proc_id,
                      image=image, principal=principal, label=label,
                      parent_actor=parent.proc_id)
        return proc


def _poisson_arrivals(rng: random.Random, rate: float, start: float, end: float) -> List[float]:
    out = []
    if rate <= 0:
        return out
    t = start + rng.expovariate(rate)
    while t < end:
        out.append(t)
        t += rng.expovariate(rate)
    return out


def _benign_host(em: _Emitter, cfg: SimConfig, host: int, rng: random.Random) -> List[_Proc]:
    root = em.spawn(0.0, host, None, "C:\\Windows\\System32\\services.exe", "system", "benign")
    procs = [root]
    for t in _poisson_arrivals(rng, cfg.benign_process_rate, 0.0, cfg.duration_seconds):
        alive = [p for p in procs if p.birth <= t]
        parent = rng.choice(alive)
        image = rng.choice(BENIGN_IMAGES)
        principal = "system" if image in SYSTEM_IMAGES else "user"
        procs.append(em.spawn(t, host, parent, image, principal, "benign"))
    for proc in procs:
        for t in _poisson_arrivals(rng, cfg.file_rate, proc.birth, cfg.duration_seconds):
            em.emit(t, "file", rng.choice(BENIGN_FILE_ACTIONS), proc.proc_id,
                    rng.choice(BENIGN_FILES), proc.image, proc.principal, "benign")
        for t in _poisson_arrivals(rng, cfg.flow_rate, proc.birth, cfg.duration_seconds):
            domain = rng.choice(BENIGN_DOMAINS)
            em.emit(t, "flow", rng.choice(("connect", "send")), proc.proc_id,
                    domain, proc.image, proc.principal, "benign")
        for t in _poisson_arrivals(rng, cfg.shell_rate, proc.birth, cfg.duration_seconds):
            em.emit(t, "shell", "command", proc.proc_id, "cmd:dir /s", proc.image,
                    proc.principal, "benign")
        for t in _poisson_arrivals(rng, cfg.noise_rate, proc.birth, cfg.duration_seconds):
            # Prunable flow noise: pings, handshakes and inbound mirrors.
            kind = rng.choice(("icmp_ping", "tcp_syn", "tcp_syn_ack", "recv"))
            em.emit(t, "flow", kind, proc.proc_id, rng.choice(BENIGN_DOMAINS),
                    proc.image, proc.principal, "benign")
    return procs


def _scenario_events(em: _Emitter, scenario: AptScenario, entry: _Proc,
                     rng: random.Random):
    """Emit one APT causal chain rooted under an existing benign process."""
    host = scenario.host
    t = scenario.start_time
    step = lambda: rng.uniform(0.005, 0.12)
    evil = rng.choice(MALICIOUS_DOMAINS)
    mal = "malicious"

    if scenario.pattern == PATTERN_SHELL_INJECTION:
        t += step()
        cmd = em.spawn(t, host, entry, "C:\\Windows\\System32\\cmd.exe", "user", mal)
        for _ in range(2):
            t += step()
            em.emit(t, "shell", "command", cmd.proc_id,
                    "cmd:powershell -enc JABXAEMAPQBOAEUAVwAt", cmd.image, "user", mal)
        t += step()
        ps = em.spawn(t, host, cmd, "C:\\Windows\\System32\\powershell.exe", "user", mal)
        t += step()
        em.emit(t, "shell", "command", ps.proc_id,
                "cmd:IEX(New-Object Net.WebClient).DownloadString", ps.image, "user", mal)
        t += step()
        browser = em.spawn(t, host, ps,
                           rng.choice(("C:\\Program Files\\iexplorer.exe",
                                       "C:\\Program Files\\Mozilla\\firefox.exe")),
                           "user", mal)
        for _ in range(2):
            t += step()
            em.emit(t, "flow", "connect", browser.proc_id, evil, browser.image, "user", mal)

    elif scenario.pattern == PATTERN_MALICIOUS_UPDATE:
        t += step()
        updater = em.spawn(t, host, entry, "C:\\ProgramData\\updater.exe", "user", mal)
        t += step()
        em.emit(t, "flow", "connect", updater.proc_id, evil, updater.image, "user", mal)
        t += step()
        em.emit(t, "file", "create", updater.proc_id, "C:\\ProgramData\\update.bin",
                updater.image, "user", mal)
        t += step()
        payload = em.spawn(t, host, updater, "C:\\ProgramData\\update.bin", "user", mal)
        t += step()
        em.emit(t, "file", "modify", payload.proc_id,
                "C:\\Windows\\System32\\drivers\\etc\\hosts", payload.image, "user", mal)
        t += step()
        em.emit(t, "flow", "send", payload.proc_id, evil, payload.image, "user", mal)

    elif scenario.pattern == PATTERN_CREDENTIAL_HARVEST:
        t += step()
        ps = em.spawn(t, host, entry, "C:\\Windows\\System32\\powershell.exe", "user", mal)
        for _ in range(2):
            t += step()
            em.emit(t, "shell", "command", ps.proc_id, "cmd:Invoke-Mimikatz -DumpCreds",
                    ps.image, "user", mal)
        t += step()
        em.emit(t, "file", "open", ps.proc_id, "C:\\Windows\\System32\\config\\SAM",
                ps.image, "user", mal)
        t += step()
        dumper = em.spawn(t, host, ps, "C:\\Temp\\procdump.exe", "user", mal)
        t += step()
        em.emit(t, "file", "create", dumper.proc_id, "C:\\Temp\\lsass.dmp",
                dumper.image, "user", mal)
        t += step()
        em.emit(t, "flow", "send", dumper.proc_id, evil, dumper.image, "user", mal)

    else:  # pragma: no cover - validated upstream
        raise InvalidConfig(f"unknown scenario pattern {scenario.pattern!r}")

    em.scenario_spans.append(
        {"pattern": scenario.pattern, "host": host,
         "start_time": scenario.start_time, "end_time": t}
    )


def _run(config: SimConfig) -> _Emitter:
    config.validate()
    rng = random.Random(config.seed)
    em = _Emitter(rng)
    host_procs = []
    for host in range(config.hosts):
        host_procs.append(_benign_host(em, config, host, rng))
    for scenario in config.apt_scenarios:
        candidates = [p for p in host_procs[scenario.host] if p.birth <= scenario.start_time]
        entry = rng.choice(candidates)
        _scenario_events(em, scenario, entry, rng)

    em.events.sort(key=lambda e: e["t"])
    last_ts = 0
    for i, event in enumerate(em.events):
        ts = BASE_EPOCH_NS + int(round(event.pop("t") * NS_PER_SEC))
        ts = max(ts, last_ts + 1)  # strictly increasing, unique per parent
        last_ts = ts
        event["ts"] = ts
        event["id"] = f"e{i:08d}"
    return em


def simulate(config: SimConfig) -> List[dict]:
    """Generate the labeled event stream as a list of wire-format dicts,
    globally sorted by timestamp. Deterministic under config.seed."""
    return _run(config).events


def ground_truth_manifest(events: Sequence[dict], scenario_spans: Optional[List[dict]] = None) -> dict:
    """Manifest of malicious event ids and scenario spans, consistent with the
    embedded labels."""
    malicious = [e["id"] for e in events if e.get("label") == "malicious"]
    return {
        "malicious_event_ids": malicious,
        "scenarios": scenario_spans if scenario_spans is not None else [],
        "total_events": len(events),
        "malicious_fraction": len(malicious) / len(events) if events else 0.0,
    }


def simulate_with_manifest(config: SimConfig):
    em = _run(config)
    return em.events, ground_truth_manifest(em.events, em.scenario_spans)


def write_ndjson(events: Sequence[dict], path):
    with open(path, "w", encoding="utf-8") as fh:
        for event in events:
            fh.write(json.dumps(event, sort_keys=True) + "\n")
