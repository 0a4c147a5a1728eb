"""``edgefaas`` command line.

State (the active scenario, deployments and collected reports) lives in a
small JSON file under ``--state-dir`` so that ``cluster up``, ``deploy``,
``bench`` and ``report`` can be run as separate invocations.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .bench import drivers
from .bench.report import BenchReport, emit_report, parse_json, render_csv, render_json
from .bench.scenario import SCENARIO_NAMES, TESTER, Scenario, load_scenario
from .errors import EdgeFaasError
from .faas.gateway import DuplicateFunction, Gateway
from .orchestrator import Orchestrator, SchedulerPolicy
from .overlay.cert import (
    CertificateAuthority,
    DuplicateOverlayIp,
    load_certificate,
    load_key,
    save_certificate,
    save_key,
)

log = logging.getLogger("edgefaas")

STATE_FILE = "state.json"


class State:
    def __init__(self, root: Path) -> None:
        self.path = root / STATE_FILE
        self.data = {"scenario": None, "deployments": {}, "reports": []}
        if self.path.exists():
            self.data.update(json.loads(self.path.read_text()))

    def save(self) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.write_text(json.dumps(self.data, indent=2, sort_keys=True) + "\n")

    def add_reports(self, reports: list[BenchReport]) -> None:
        self.data["reports"].extend(json.loads(render_json(reports)))

    def reports(self) -> list[BenchReport]:
        return parse_json(json.dumps(self.data["reports"]))


def _scenario(args, state: State) -> Scenario:
    source = args.scenario or state.data["scenario"] or "OP"
    return load_scenario(source, args.seed)


def _emit(args, reports: list[BenchReport], state: State) -> None:
    state.add_reports(reports)
    state.save()
    _emit_only(args, reports)


def cmd_cluster(args, state: State) -> int:
    if args.action == "up":
        sc = _scenario(args, state)
        state.data["scenario"] = args.scenario or state.data["scenario"] or "OP"
        state.data["deployments"] = {}
        state.save()
        print(f"cluster {sc.name}: {len(sc.nodes)} workers across {', '.join(sc.sites)}")
    sc = _scenario(args, state)
    orch = _orchestrator(sc, state)
    print(orch.status_table())
    for name, dep in sorted(state.data["deployments"].items()):
        placed = ", ".join(f"{n}x{c}" for n, c in dep["assignments"])
        print(f"function {name} [{dep['policy']}]: {placed}")
    return 0


def _orchestrator(sc: Scenario, state: State) -> Orchestrator:
    orch = Orchestrator()
    for n in sc.fresh_nodes():
        orch.register_node(n)
    for dep in state.data["deployments"].values():
        for node, count in dep["assignments"]:
            orch.reserve(node, count)
    return orch


def cmd_deploy(args, state: State) -> int:
    sc = _scenario(args, state)
    spec = drivers.function_spec(args.function)
    if spec.name in state.data["deployments"]:
        raise DuplicateFunction(f"function {spec.name} is already deployed")
    orch = _orchestrator(sc, state)
    gateway = Gateway(orch, sc.network(), client_site=TESTER)
    spec = replace(spec, min_replicas=args.replicas)
    placement = gateway.deploy_function(spec, args.policy)
    state.data["deployments"][spec.name] = {
        "policy": placement.policy_used.value,
        "replicas": placement.total,
        "assignments": placement.assignments,
    }
    state.save()
    for node, count in placement.assignments:
        print(f"{spec.name}: {count} replica(s) on {node} ({orch.node(node).site})")
    return 0


def cmd_bench(args, state: State) -> int:
    sc = _scenario(args, state)
    if args.kind == "latency":
        pairs = [p.split("-", 1) for p in args.pairs] if args.pairs else sc.required_links()
        reports = [drivers.run_latency_bench(sc, a, b, args.repetitions) for a, b in pairs]
    elif args.kind == "faas":
        spec = drivers.function_spec(args.function)
        dep = state.data["deployments"].get(spec.name)
        policy = args.policy or (dep["policy"] if dep else SchedulerPolicy.RESOURCE_COUNT.value)
        if dep:
            spec = replace(spec, min_replicas=dep.get("replicas", 1))
        heavy = spec.workload_kind.value != "sentiment"
        if args.requests:
            total = args.requests
        elif args.paper_scale:
            total = drivers.FULL_HEAVY_REQUESTS if heavy else drivers.FULL_SENTIMENT_REQUESTS
        else:
            total = drivers.DESK_HEAVY_REQUESTS if heavy else drivers.DESK_SENTIMENT_REQUESTS
        cooldown = drivers.FULL_COOLDOWN_MS if args.paper_scale else drivers.DESK_COOLDOWN_MS
        threads = args.threads or ([1, 4, 8, 16, 30] if heavy else [1, 8, 32, 128])
        reports = drivers.run_faas_bench(sc, spec, threads, total, policy, cooldown_ms=cooldown)
    elif args.kind == "pubsub":
        configs = [tuple(int(x) for x in c.split(":")) for c in args.configs] if args.configs \
            else drivers.PUBSUB_CONFIGS
        reports = drivers.run_pubsub_reports(sc, configs, args.msg_size, args.messages, args.reps)
    else:
        reports = [drivers.run_percolate_bench(sc, args.queries, args.docs, scoring)
                   for scoring in ((True, False) if args.scoring == "both" else (args.scoring == "on",))]
    _emit(args, reports, state)
    return 0


def cmd_report(args, state: State) -> int:
    reports = state.reports()
    if not reports:
        print("no reports collected yet; run `edgefaas bench ...` first", file=sys.stderr)
        return 1
    _emit_only(args, reports)
    return 0


def _emit_only(args, reports: list[BenchReport]) -> None:
    if args.out:
        emit_report(reports, args.format, args.out)
    else:
        sys.stdout.write(render_csv(reports) if args.format == "csv" else render_json(reports))


def cmd_cert(args, state: State) -> int:
    root: Path = args.dir
    if args.action == "ca":
        root.mkdir(parents=True, exist_ok=True)
        ca = CertificateAuthority(name=args.name)
        save_key(root / "ca.key", ca.secret)
        save_certificate(root / "ca.crt", ca.self_signed())
        print(f"wrote {root / 'ca.crt'} and {root / 'ca.key'}")
        return 0
    ca = CertificateAuthority(load_key(root / "ca.key"), load_certificate(root / "ca.crt").subject_name)
    for existing in sorted(root.glob("*.crt")):
        cert = load_certificate(existing)
        if existing.name != "ca.crt" and str(cert.overlay_ip) == args.ip:
            raise DuplicateOverlayIp(f"{args.ip} already issued to {cert.subject_name}")
    identity = ca.issue_identity(args.name, args.ip, args.groups, args.validity)
    save_certificate(root / f"{args.name}.crt", identity.certificate)
    save_key(root / f"{args.name}.key", identity.signing_secret)
    print(f"issued {args.name} at {args.ip}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="edgefaas", description="Edge FaaS testbed emulator and benchmark harness")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("--scenario", help=f"built-in scenario ({', '.join(SCENARIO_NAMES)}) or YAML file")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--paper-scale", action="store_true",
                   help="use the original request totals and 15 min cooldown")
    p.add_argument("--state-dir", type=Path, default=Path(".edgefaas"))
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("cluster", help="bring up or inspect the emulated cluster")
    c.add_argument("action", choices=("up", "status"))
    c.set_defaults(func=cmd_cluster)

    d = sub.add_parser("deploy", help="schedule a function's replicas")
    d.add_argument("function", choices=sorted(drivers.FUNCTION_ALIASES))
    d.add_argument("--policy", choices=[x.value for x in SchedulerPolicy], default="resource-count")
    d.add_argument("--replicas", type=int, default=1)
    d.set_defaults(func=cmd_deploy)

    ce = sub.add_parser("cert", help="create a CA or issue node certificates")
    cs = ce.add_subparsers(dest="action", required=True)
    ca = cs.add_parser("ca")
    ca.add_argument("--name", default="edgefaas-ca")
    iss = cs.add_parser("issue")
    iss.add_argument("name")
    iss.add_argument("ip")
    iss.add_argument("--groups", nargs="*", default=[])
    iss.add_argument("--validity", type=int, default=365 * 86400, help="seconds")
    for sp in (ca, iss):
        sp.add_argument("--dir", type=Path, default=Path("pki"))
    ce.set_defaults(func=cmd_cert)

    def output(sp):
        sp.add_argument("--format", choices=("csv", "json"), default="csv")
        sp.add_argument("--out", type=Path)

    b = sub.add_parser("bench", help="run a benchmark family")
    bs = b.add_subparsers(dest="kind", required=True)
    lat = bs.add_parser("latency")
    lat.add_argument("pairs", nargs="*", help="site pairs such as OP-test RS-CD (default: all in scenario)")
    lat.add_argument("--repetitions", type=int, default=500)
    fa = bs.add_parser("faas")
    fa.add_argument("function", choices=sorted(drivers.FUNCTION_ALIASES))
    fa.add_argument("--threads", type=int, nargs="+")
    fa.add_argument("--requests", type=int)
    fa.add_argument("--policy", choices=[x.value for x in SchedulerPolicy])
    ps = bs.add_parser("pubsub")
    ps.add_argument("--configs", nargs="+", help="N:M publisher:subscriber pairs")
    ps.add_argument("--msg-size", type=int, default=64)
    ps.add_argument("--messages", type=int, default=10_000)
    ps.add_argument("--reps", type=int, default=5)
    pc = bs.add_parser("percolate")
    pc.add_argument("--queries", type=int, default=1000)
    pc.add_argument("--docs", type=int, default=5000)
    pc.add_argument("--scoring", choices=("on", "off", "both"), default="both")
    for sp in (lat, fa, ps, pc):
        output(sp)
    b.set_defaults(func=cmd_bench)

    r = sub.add_parser("report", help="emit every report collected in the state dir")
    output(r)
    r.set_defaults(func=cmd_report)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args, State(args.state_dir))
    except (EdgeFaasError, OSError) as exc:
        print(f"edgefaas: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
