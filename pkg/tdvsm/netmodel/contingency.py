import logging
from dataclasses import replace

from tdvsm.errors import CaseValidationError, IslandingError
from tdvsm.netmodel.case_io import is_connected
from tdvsm.netmodel.types import NO_CONTINGENCY, Contingency


def branch_outage(k):
    return Contingency(id=f"br{k}", kind="branch_outage", element=k)


def apply_contingency(net, c: Contingency):
    """Return a copy of ``net`` with the contingency element out of service."""
    if c is None or c.kind == "none":
        return net
    if c.kind != "branch_outage":
        raise CaseValidationError(f"contingency {c.id}: unsupported kind {c.kind}")
    k = c.element
    if k is None or not 0 <= k < len(net.branches):
        raise CaseValidationError(f"contingency {c.id}: branch {k} does not exist")
    if not net.branches[k].in_service:
        raise CaseValidationError(f"contingency {c.id}: branch {k} is already out of service")
    if not is_connected(net, skip_branch=k):
        br = net.branches[k]
        raise IslandingError(f"contingency {c.id}: removing branch {br.from_bus}-{br.to_bus} islands the network")
    branches = list(net.branches)
    branches[k] = replace(branches[k], in_service=False)
    return replace(net, branches=tuple(branches))


def enumerate_n1(net, include_none=True):
    """All non-islanding single-branch outages, preceded by the intact case."""
    out = [NO_CONTINGENCY] if include_none else []
    for k, br in enumerate(net.branches):
        if not br.in_service:
            continue
        if not is_connected(net, skip_branch=k):
            logging.info(f"Skipping contingency br{k} ({br.from_bus}-{br.to_bus}): islanding")
            continue
        out.append(branch_outage(k))
    return out


def parse_contingency(text):
    if text in (None, "", "none"):
        return NO_CONTINGENCY
    if text.startswith("br"):
        return branch_outage(int(text[2:]))
    raise ValueError(f"unrecognized contingency id {text!r}")
