from tdvsm.netmodel.capability import der_q_limits, der_reserves, ibr_q_limits, reactive_reserves  # noqa
from tdvsm.netmodel.case_io import bundled_case, dump_case, load_case, parse_case, save_case  # noqa
from tdvsm.netmodel.contingency import apply_contingency, branch_outage, enumerate_n1  # noqa
from tdvsm.netmodel.types import (  # noqa
    NO_CONTINGENCY,
    BoundaryLink,
    Contingency,
    DerUnit,
    FeederModel,
    OperatingPoint,
    TransmissionNetwork,
    nominal_operating_point,
)
