from tdvsm.margin.dataset import Dataset, DatasetConfig, generate_dataset, load_dataset, save_dataset  # noqa
from tdvsm.margin.scenario import Scenario, ScenarioConfig, sample_scenario, scenario_from_op  # noqa
from tdvsm.margin.state import feature_names, split_index, state_vector  # noqa
from tdvsm.margin.vsm import MarginConfig, VsmSample, compute_vsm, dispatch_at, scan_lambda  # noqa
