"""
Reading, validating and writing case documents.

A case is one YAML document::

    name: ...
    base_mva: 100
    transmission: {buses: [...], branches: [...], generators: [...], ibrs: [...]}
    feeders: [{id, base_kva, kv, nodes: [...], edges: [...], ders: [...], oltc: {...}}]
    boundary: [{tx_bus, feeder, beta, kv_tx, kv_dx}]

Unknown fields are rejected and every error carries the line of the
offending entry.
"""

import logging
import os

import networkx as nx
import yaml

from tdvsm.errors import CaseFormatError, CaseValidationError
from tdvsm.netmodel.types import (
    BUS_KINDS,
    CURVE_KINDS,
    IBR_KINDS,
    BoundaryLink,
    CapabilityCurve,
    DerUnit,
    DxEdge,
    DxNode,
    FeederModel,
    GenUnit,
    IbrUnit,
    Oltc,
    TransmissionNetwork,
    TxBranch,
    TxBus,
)
from tdvsm.utils.misc import read_text, write_text

CASE_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "cases")

_LINE = "__line__"


class _LineLoader(yaml.SafeLoader):
    pass


def _construct_mapping(loader, node):
    mapping = loader.construct_mapping(node, deep=True)
    mapping[_LINE] = node.start_mark.line + 1
    return mapping


_LineLoader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _construct_mapping)


def bundled_case(name):
    """Path of a case file shipped with the package, e.g. ``five_bus.case``."""
    return os.path.join(CASE_DIR, name)


def _check_fields(entry, where, allowed, required=()):
    if not isinstance(entry, dict):
        raise CaseFormatError("expected a mapping", field=where)
    line = entry.get(_LINE)
    unknown = sorted(set(entry) - set(allowed) - {_LINE})
    if unknown:
        raise CaseFormatError(f"unknown field(s) {unknown}", line, where)
    for key in required:
        if key not in entry:
            raise CaseFormatError(f"missing required field '{key}'", line, where)
    return line


def _num(entry, key, where, default=None):
    if key not in entry:
        if default is None:
            raise CaseFormatError(f"missing required field '{key}'", entry.get(_LINE), where)
        return default
    value = entry[key]
    if isinstance(value, bool):
        raise CaseFormatError(f"field '{key}' must be numeric", entry.get(_LINE), where)
    try:
        return float(value)
    except (TypeError, ValueError):
        raise CaseFormatError(f"field '{key}' must be numeric, got {value!r}", entry.get(_LINE), where)


def _int(entry, key, where, default=None):
    value = _num(entry, key, where, default)
    if value != int(value):
        raise CaseFormatError(f"field '{key}' must be an integer", entry.get(_LINE), where)
    return int(value)


def _triple(entry, key, where):
    value = entry.get(key, [0.0, 0.0, 0.0])
    if not isinstance(value, (list, tuple)) or len(value) != 3:
        raise CaseFormatError(f"field '{key}' must list 3 phase values", entry.get(_LINE), where)
    try:
        return tuple(float(v) for v in value)
    except (TypeError, ValueError):
        raise CaseFormatError(f"field '{key}' must be numeric", entry.get(_LINE), where)


def _list(doc, key, where):
    value = doc.get(key, [])
    if value is None:
        return []
    if not isinstance(value, list):
        raise CaseFormatError(f"'{key}' must be a list", doc.get(_LINE), where)
    return value


def _parse_bus(e, where):
    _check_fields(e, where, ("id", "kind", "v_min", "v_max", "p", "q", "bs"), ("id",))
    kind = e.get("kind", "pq")
    if kind not in BUS_KINDS:
        raise CaseFormatError(f"bus kind must be one of {BUS_KINDS}", e.get(_LINE), where)
    return TxBus(
        id=_int(e, "id", where),
        kind=kind,
        v_min=_num(e, "v_min", where, 0.94),
        v_max=_num(e, "v_max", where, 1.06),
        base_load_p=_num(e, "p", where, 0.0),
        base_load_q=_num(e, "q", where, 0.0),
        bs=_num(e, "bs", where, 0.0),
    )


def _parse_branch(e, where):
    _check_fields(e, where, ("from", "to", "r", "x", "b", "tap", "in_service"), ("from", "to", "x"))
    return TxBranch(
        from_bus=_int(e, "from", where),
        to_bus=_int(e, "to", where),
        r=_num(e, "r", where, 0.0),
        x=_num(e, "x", where),
        b_shunt=_num(e, "b", where, 0.0),
        in_service=bool(e.get("in_service", True)),
        tap=_num(e, "tap", where, 1.0),
    )


def _parse_generator(e, where):
    _check_fields(
        e, where, ("bus", "p", "v_set", "q_min", "q_max", "p_max", "capability"), ("bus", "q_min", "q_max", "p_max")
    )
    q_min, q_max = _num(e, "q_min", where), _num(e, "q_max", where)
    curve = e.get("capability") or {"kind": "box"}
    _check_fields(curve, where + ".capability", ("kind", "s_rating", "icr"))
    kind = curve.get("kind", "box")
    if kind not in CURVE_KINDS:
        raise CaseFormatError(f"capability kind must be one of {CURVE_KINDS}", e.get(_LINE), where)
    capability = CapabilityCurve(
        kind=kind,
        q_min=q_min,
        q_max=q_max,
        s_rating=_num(curve, "s_rating", where, 0.0),
        icr=_num(curve, "icr", where, 0.0),
    )
    return GenUnit(
        bus=_int(e, "bus", where),
        p_out=_num(e, "p", where, 0.0),
        v_set=_num(e, "v_set", where, 1.0),
        q_min=q_min,
        q_max=q_max,
        p_max=_num(e, "p_max", where),
        capability=capability,
    )


def _parse_ibr(e, where):
    _check_fields(e, where, ("bus", "p", "icr", "kind", "v_set"), ("bus", "icr"))
    kind = e.get("kind", "solar")
    if kind not in IBR_KINDS:
        raise CaseFormatError(f"ibr kind must be one of {IBR_KINDS}", e.get(_LINE), where)
    return IbrUnit(
        bus=_int(e, "bus", where),
        p_out=_num(e, "p", where, 0.0),
        icr=_num(e, "icr", where),
        kind=kind,
        v_set=_num(e, "v_set", where, 1.0),
    )


def _parse_edge(e, where):
    _check_fields(e, where, ("from", "to", "r", "x", "z_phase"), ("from", "to", "r", "x"))
    z_phase = None
    if e.get("z_phase") is not None:
        z = e["z_phase"]
        _check_fields(z, where + ".z_phase", ("r", "x"), ("r", "x"))
        if len(z["r"]) != 9 or len(z["x"]) != 9:
            raise CaseFormatError("z_phase needs 9 row-major entries for r and x", e.get(_LINE), where)
        z_phase = tuple(complex(float(r), float(x)) for r, x in zip(z["r"], z["x"]))
    return DxEdge(
        parent=_int(e, "from", where),
        child=_int(e, "to", where),
        r=_num(e, "r", where),
        x=_num(e, "x", where),
        z_phase=z_phase,
    )


def _parse_feeder(doc, where):
    _check_fields(doc, where, ("id", "base_kva", "kv", "nodes", "edges", "ders", "oltc"), ("id", "nodes", "edges"))
    nodes = []
    for i, e in enumerate(_list(doc, "nodes", where)):
        w = f"{where}.nodes[{i}]"
        _check_fields(e, w, ("id", "p", "q", "v_min", "v_max"), ("id",))
        nodes.append(
            DxNode(
                id=_int(e, "id", w),
                load_p_phase=_triple(e, "p", w),
                load_q_phase=_triple(e, "q", w),
                v_min=_num(e, "v_min", w, 0.9025),
                v_max=_num(e, "v_max", w, 1.1025),
            )
        )
    edges = [_parse_edge(e, f"{where}.edges[{i}]") for i, e in enumerate(_list(doc, "edges", where))]
    ders = []
    for i, e in enumerate(_list(doc, "ders", where)):
        w = f"{where}.ders[{i}]"
        _check_fields(e, w, ("node", "p", "s", "phases"), ("node", "s"))
        phases = tuple(int(p) for p in e.get("phases", [0, 1, 2]))
        ders.append(DerUnit(node=_int(e, "node", w), p_gen=_num(e, "p", w, 0.0), s_rating=_num(e, "s", w), phases=phases))
    oltc_doc = doc.get("oltc") or {}
    _check_fields(oltc_doc, where + ".oltc", ("tap_min", "tap_max", "steps"))
    oltc = Oltc(
        tap_min=_num(oltc_doc, "tap_min", where, 0.9),
        tap_max=_num(oltc_doc, "tap_max", where, 1.1),
        steps=_int(oltc_doc, "steps", where, 32),
    )
    return FeederModel(
        id=str(doc["id"]),
        nodes=tuple(nodes),
        edges=tuple(edges),
        ders=tuple(ders),
        oltc=oltc,
        base_kva=_num(doc, "base_kva", where, 1000.0),
        kv=_num(doc, "kv", where, 0.0),
    )


def parse_case(text):
    try:
        doc = yaml.load(text, Loader=_LineLoader)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        raise CaseFormatError(str(getattr(e, "problem", e)), mark.line + 1 if mark else None)
    if not isinstance(doc, dict):
        raise CaseFormatError("case document must be a mapping")
    _check_fields(doc, "case", ("name", "base_mva", "transmission", "feeders", "boundary"), ("transmission",))
    tx = doc["transmission"]
    _check_fields(tx, "transmission", ("buses", "branches", "generators", "ibrs"), ("buses", "branches"))

    buses = [_parse_bus(e, f"transmission.buses[{i}]") for i, e in enumerate(_list(tx, "buses", "transmission"))]
    branches = [
        _parse_branch(e, f"transmission.branches[{i}]") for i, e in enumerate(_list(tx, "branches", "transmission"))
    ]
    gens = [
        _parse_generator(e, f"transmission.generators[{i}]")
        for i, e in enumerate(_list(tx, "generators", "transmission"))
    ]
    ibrs = [_parse_ibr(e, f"transmission.ibrs[{i}]") for i, e in enumerate(_list(tx, "ibrs", "transmission"))]
    feeders = [_parse_feeder(e, f"feeders[{i}]") for i, e in enumerate(_list(doc, "feeders", "case"))]
    links = []
    for i, e in enumerate(_list(doc, "boundary", "case")):
        w = f"boundary[{i}]"
        _check_fields(e, w, ("tx_bus", "feeder", "beta", "kv_tx", "kv_dx"), ("tx_bus", "feeder"))
        links.append(
            BoundaryLink(
                tx_bus=_int(e, "tx_bus", w),
                feeder=str(e["feeder"]),
                beta=_int(e, "beta", w, 1),
                kv_tx=_num(e, "kv_tx", w, 0.0),
                kv_dx=_num(e, "kv_dx", w, 0.0),
            )
        )
    slack = [b.id for b in buses if b.kind == "slack"]
    net = TransmissionNetwork(
        buses=tuple(buses),
        branches=tuple(branches),
        generators=tuple(gens),
        ibrs=tuple(ibrs),
        boundary_links=tuple(links),
        base_mva=_num(doc, "base_mva", "case", 100.0),
        slack_bus=slack[0] if len(slack) == 1 else -1,
        name=str(doc.get("name", "")),
    )
    validate_network(net, feeders)
    for feeder in feeders:
        validate_feeder(feeder)
    return net, feeders


def load_case(path):
    """Load and validate a case file. Returns ``(TransmissionNetwork, [FeederModel])``."""
    net, feeders = parse_case(read_text(path))
    logging.info(
        f"Loaded case {net.name or path}: {len(net.buses)} buses, {len(net.branches)} branches, "
        f"{len(feeders)} feeder(s), {len(net.boundary_links)} boundary link(s)"
    )
    return net, feeders


def is_connected(net, skip_branch=None):
    graph = nx.MultiGraph()
    graph.add_nodes_from(net.bus_ids)
    for k, br in enumerate(net.branches):
        if br.in_service and k != skip_branch:
            graph.add_edge(br.from_bus, br.to_bus)
    return nx.is_connected(graph)


def validate_network(net, feeders=()):
    ids = net.bus_ids
    if len(set(ids)) != len(ids):
        raise CaseValidationError("bus ids are not unique")
    slack = [b.id for b in net.buses if b.kind == "slack"]
    if len(slack) != 1:
        raise CaseValidationError(f"exactly one slack bus required, found {len(slack)}")
    for b in net.buses:
        if not 0.0 < b.v_min < b.v_max:
            raise CaseValidationError(f"bus {b.id}: need 0 < v_min < v_max")
    known = set(ids)
    for k, br in enumerate(net.branches):
        if br.from_bus not in known or br.to_bus not in known:
            raise CaseValidationError(f"branch {k} ({br.from_bus}-{br.to_bus}): endpoint does not exist")
        if br.x == 0.0:
            raise CaseValidationError(f"branch {k} ({br.from_bus}-{br.to_bus}): x must be nonzero")
        if br.tap <= 0.0:
            raise CaseValidationError(f"branch {k}: tap must be positive")
    controlled = {}
    for g in net.generators:
        if g.bus not in known:
            raise CaseValidationError(f"generator at bus {g.bus}: bus does not exist")
        if g.q_min > g.q_max:
            raise CaseValidationError(f"generator at bus {g.bus}: q_min > q_max")
        if not 0.0 <= g.p_out <= g.p_max:
            raise CaseValidationError(f"generator at bus {g.bus}: need 0 <= p_out <= p_max")
        controlled[g.bus] = controlled.get(g.bus, 0) + 1
    for u in net.ibrs:
        if u.bus not in known:
            raise CaseValidationError(f"ibr at bus {u.bus}: bus does not exist")
        if u.icr < 0.0 or u.p_out > u.icr:
            raise CaseValidationError(f"ibr at bus {u.bus}: need p_out <= icr")
        controlled[u.bus] = controlled.get(u.bus, 0) + 1
    if net.slack_bus not in {g.bus for g in net.generators}:
        raise CaseValidationError(f"slack bus {net.slack_bus} has no generator")
    doubled = sorted(bus for bus, n in controlled.items() if n > 1)
    if doubled:
        raise CaseValidationError(f"more than one voltage-controlling unit at bus(es) {doubled}")
    feeder_ids = {f.id for f in feeders}
    linked = [link.tx_bus for link in net.boundary_links]
    if len(set(linked)) != len(linked):
        raise CaseValidationError("at most one boundary link per transmission bus")
    for link in net.boundary_links:
        if link.tx_bus not in known:
            raise CaseValidationError(f"boundary link to bus {link.tx_bus}: bus does not exist")
        if feeders and link.feeder not in feeder_ids:
            raise CaseValidationError(f"boundary link at bus {link.tx_bus}: unknown feeder '{link.feeder}'")
        if link.beta < 1:
            raise CaseValidationError(f"boundary link at bus {link.tx_bus}: beta must be >= 1")
    if not is_connected(net):
        raise CaseValidationError("transmission network is not connected")


def validate_feeder(feeder):
    n = len(feeder.nodes)
    if [node.id for node in feeder.nodes] != list(range(n)):
        raise CaseValidationError(f"feeder {feeder.id}: node ids must be 0..{n - 1} in order")
    graph = nx.DiGraph()
    graph.add_nodes_from(range(n))
    for e in feeder.edges:
        if not (0 <= e.parent < n and 0 <= e.child < n):
            raise CaseValidationError(f"feeder {feeder.id}: edge {e.parent}->{e.child} references a missing node")
        graph.add_edge(e.parent, e.child)
    if (
        len(feeder.edges) != n - 1
        or graph.number_of_edges() != len(feeder.edges)
        or not nx.is_arborescence(graph)
        or graph.in_degree(0) != 0
    ):
        raise CaseValidationError(f"feeder {feeder.id}: not radial (edges must form a tree rooted at node 0)")
    if sum(len(c) for c in feeder.children) != len(feeder.edges):
        raise CaseValidationError(f"feeder {feeder.id}: children sets inconsistent with edges")
    for der in feeder.ders:
        if not 0 <= der.node < n:
            raise CaseValidationError(f"feeder {feeder.id}: DER at missing node {der.node}")
        if abs(der.p_gen) > der.s_rating:
            raise CaseValidationError(f"feeder {feeder.id}: DER at node {der.node} has |p| > s_rating")
        if not der.phases or any(p not in (0, 1, 2) for p in der.phases):
            raise CaseValidationError(f"feeder {feeder.id}: DER at node {der.node} has invalid phases")
    if not 0.0 < feeder.oltc.tap_min < feeder.oltc.tap_max or feeder.oltc.steps < 1:
        raise CaseValidationError(f"feeder {feeder.id}: invalid OLTC range")


def _case_document(net, feeders):
    buses = []
    for b in net.buses:
        buses.append({"id": b.id, "kind": b.kind, "v_min": b.v_min, "v_max": b.v_max, "p": b.base_load_p, "q": b.base_load_q, "bs": b.bs})
    branches = [
        {"from": br.from_bus, "to": br.to_bus, "r": br.r, "x": br.x, "b": br.b_shunt, "tap": br.tap, "in_service": br.in_service}
        for br in net.branches
    ]
    gens = []
    for g in net.generators:
        curve = {"kind": g.capability.kind, "s_rating": g.capability.s_rating, "icr": g.capability.icr}
        gens.append(
            {"bus": g.bus, "p": g.p_out, "v_set": g.v_set, "q_min": g.q_min, "q_max": g.q_max, "p_max": g.p_max, "capability": curve}
        )
    ibrs = [{"bus": u.bus, "p": u.p_out, "icr": u.icr, "kind": u.kind, "v_set": u.v_set} for u in net.ibrs]
    fdocs = []
    for f in feeders:
        edges = []
        for e in f.edges:
            entry = {"from": e.parent, "to": e.child, "r": e.r, "x": e.x}
            if e.z_phase is not None:
                entry["z_phase"] = {"r": [z.real for z in e.z_phase], "x": [z.imag for z in e.z_phase]}
            edges.append(entry)
        fdocs.append(
            {
                "id": f.id,
                "base_kva": f.base_kva,
                "kv": f.kv,
                "oltc": {"tap_min": f.oltc.tap_min, "tap_max": f.oltc.tap_max, "steps": f.oltc.steps},
                "nodes": [
                    {"id": n.id, "p": list(n.load_p_phase), "q": list(n.load_q_phase), "v_min": n.v_min, "v_max": n.v_max}
                    for n in f.nodes
                ],
                "edges": edges,
                "ders": [{"node": d.node, "p": d.p_gen, "s": d.s_rating, "phases": list(d.phases)} for d in f.ders],
            }
        )
    links = [
        {"tx_bus": l.tx_bus, "feeder": l.feeder, "beta": l.beta, "kv_tx": l.kv_tx, "kv_dx": l.kv_dx}
        for l in net.boundary_links
    ]
    return {
        "name": net.name,
        "base_mva": net.base_mva,
        "transmission": {"buses": buses, "branches": branches, "generators": gens, "ibrs": ibrs},
        "feeders": fdocs,
        "boundary": links,
    }


def dump_case(net, feeders):
    return yaml.safe_dump(_case_document(net, feeders), sort_keys=False, default_flow_style=None)


def save_case(path, net, feeders):
    write_text(path, dump_case(net, feeders))
