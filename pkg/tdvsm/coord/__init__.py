from tdvsm.coord.loop import CoordConfig, CoordinationTrace, IterationRecord, run_loop, write_outputs  # noqa
from tdvsm.coord.report import render_report  # noqa
