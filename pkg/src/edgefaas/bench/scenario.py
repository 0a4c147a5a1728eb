"""Testbed scenarios: which nodes exist and how the sites are linked.

The built-in scenarios describe a three-site testbed: two on-premises worker
VMs (OP), four Raspberry Pis at a remote site (RS), two cloud VMs (CD) and
all of them together (AS). A YAML file can declare its own::

    name: AS
    seed: 7
    base: AS                 # optional: start from a built-in node set
    compute_factors: {RPi: 0.5}
    nodes:
      - {name: op-worker-1, site: OP, overlay_ip: 10.42.1.2, cpu_cores: 2,
         memory_gb: 8, compute_factor: 1.0}
    links:                   # if present, replaces the built-in table
      OP-test: {mean: 1.17, min: 0.79, max: 1.97, std: 0.17}
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from pathlib import Path

import yaml

from ..errors import EdgeFaasError
from ..orchestrator import NodeSpec
from ..overlay.latency import (
    DERIVED_LATENCIES,
    OVERLAY_LATENCIES,
    LatencyProfile,
    Network,
    link_key,
)

TESTER = "test"
SCENARIO_NAMES = ("OP", "RS", "CD", "AS")
VM_FACTOR = 1.0
RPI_FACTOR = 0.25


class ScenarioError(EdgeFaasError):
    pass


class ParseError(ScenarioError):
    pass


class IncompleteLinks(ScenarioError):
    pass


def default_links() -> dict[tuple[str, str], LatencyProfile]:
    return {link_key(*k): v for k, v in {**OVERLAY_LATENCIES, **DERIVED_LATENCIES}.items()}


def _site_nodes(site: str, vm_factor: float = VM_FACTOR, rpi_factor: float = RPI_FACTOR) -> list[NodeSpec]:
    if site == "OP":
        return [NodeSpec(f"op-worker-{i}", "OP", f"10.42.1.{i + 1}", 2, 8, vm_factor) for i in (1, 2)]
    if site == "RS":
        return [NodeSpec(f"rs-rpi-{i}", "RS", f"10.42.2.{i + 1}", 4, 8, rpi_factor) for i in (1, 2, 3, 4)]
    if site == "CD":
        return [NodeSpec(f"cd-worker-{i}", "CD", f"10.42.3.{i + 1}", 2, 8, vm_factor) for i in (3, 4)]
    raise ScenarioError(f"unknown site {site!r}")


@dataclass
class Scenario:
    name: str
    nodes: list[NodeSpec]
    links: dict[tuple[str, str], LatencyProfile] = field(default_factory=default_links)
    seed: int = 0
    control_plane: NodeSpec | None = None

    def __post_init__(self) -> None:
        self.links = {link_key(*k): v for k, v in self.links.items()}
        self.validate()

    @property
    def sites(self) -> list[str]:
        return sorted({n.site for n in self.nodes})

    def required_links(self) -> list[tuple[str, str]]:
        sites = self.sites
        pairs = {link_key(a, b) for a, b in itertools.combinations_with_replacement(sites, 2)}
        pairs |= {link_key(s, TESTER) for s in sites}
        return sorted(pairs)

    def validate(self) -> None:
        if not self.nodes:
            raise ScenarioError(f"scenario {self.name} has no nodes")
        names = [n.name for n in self.nodes]
        if len(set(names)) != len(names):
            raise ScenarioError(f"scenario {self.name} repeats node names")
        missing = [f"{a}-{b}" for a, b in self.required_links() if (a, b) not in self.links]
        if missing:
            raise IncompleteLinks(f"scenario {self.name} lacks link profiles for {', '.join(missing)}")

    def network(self, seed: int | None = None, enabled: bool = True) -> Network:
        return Network(self.links, self.seed if seed is None else seed, enabled)

    def fresh_nodes(self) -> list[NodeSpec]:
        return [replace(n, allocated_replicas=0) for n in self.nodes]

    def with_seed(self, seed: int) -> "Scenario":
        return replace(self, seed=seed)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "seed": self.seed,
            "nodes": [
                {
                    "name": n.name, "site": n.site, "overlay_ip": str(n.overlay_ip),
                    "cpu_cores": n.cpu_cores, "memory_gb": n.memory_gb,
                    "compute_factor": n.compute_factor,
                }
                for n in self.nodes
            ],
            "links": {f"{a}-{b}": vars(p) for (a, b), p in sorted(self.links.items())},
        }


def builtin_scenario(name: str, seed: int = 0, vm_factor: float = VM_FACTOR,
                     rpi_factor: float = RPI_FACTOR) -> Scenario:
    name = name.upper()
    if name not in SCENARIO_NAMES:
        raise ScenarioError(f"unknown scenario {name!r}; expected one of {', '.join(SCENARIO_NAMES)}")
    sites = ("OP", "RS", "CD") if name == "AS" else (name,)
    nodes = [n for s in sites for n in _site_nodes(s, vm_factor, rpi_factor)]
    control = NodeSpec("op-master", "OP", "10.42.1.1", 4, 8, vm_factor)
    return Scenario(name, nodes, default_links(), seed, control)


def _parse_links(raw: dict) -> dict[tuple[str, str], LatencyProfile]:
    links = {}
    for key, value in raw.items():
        a, sep, b = str(key).partition("-")
        if not sep:
            raise ParseError(f"link key {key!r} must look like SITE-SITE")
        try:
            links[link_key(a, b)] = LatencyProfile(
                float(value["mean"]), float(value["min"]), float(value["max"]), float(value["std"])
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"link {key}: {exc}") from exc
    return links


def scenario_from_dict(data: dict) -> Scenario:
    if not isinstance(data, dict):
        raise ParseError("scenario file must be a mapping")
    factors = data.get("compute_factors") or {}
    vm = float(factors.get("VM", VM_FACTOR))
    rpi = float(factors.get("RPi", RPI_FACTOR))
    seed = int(data.get("seed", 0))
    name = str(data.get("name", data.get("base", "custom")))
    nodes: list[NodeSpec] = []
    if "base" in data:
        nodes = builtin_scenario(str(data["base"]), seed, vm, rpi).nodes
    try:
        for raw in data.get("nodes") or []:
            nodes.append(NodeSpec(
                name=str(raw["name"]),
                site=str(raw["site"]),
                overlay_ip=raw["overlay_ip"],
                cpu_cores=int(raw["cpu_cores"]),
                memory_gb=float(raw["memory_gb"]),
                compute_factor=float(raw.get("compute_factor", rpi if raw.get("kind") == "RPi" else vm)),
            ))
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"bad node entry: {exc}") from exc
    links = _parse_links(data["links"]) if "links" in data else default_links()
    return Scenario(name, nodes, links, seed)


def load_scenario(path_or_name: str | Path, seed: int | None = None) -> Scenario:
    """Load a built-in scenario by name or a YAML scenario file."""
    text = str(path_or_name)
    if text.upper() in SCENARIO_NAMES and not Path(text).exists():
        sc = builtin_scenario(text)
    else:
        try:
            data = yaml.safe_load(Path(path_or_name).read_text())
        except yaml.YAMLError as exc:
            raise ParseError(f"{path_or_name}: {exc}") from exc
        except OSError as exc:
            raise ParseError(f"{path_or_name}: {exc}") from exc
        sc = scenario_from_dict(data)
    return sc if seed is None else sc.with_seed(seed)
