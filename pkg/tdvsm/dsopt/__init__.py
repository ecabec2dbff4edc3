from tdvsm.dsopt.capability import CapabilityRange, capability_range  # noqa
from tdvsm.dsopt.redispatch import DispatchLp, RedispatchResult, bfs_check, build_dispatch_lp, dx_weights, redispatch  # noqa
