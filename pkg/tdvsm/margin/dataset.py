import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import pandas as pd

from tdvsm.errors import BaseInfeasibleError, InfeasibleScenarioError, IslandingError
from tdvsm.margin.scenario import sample_scenario
from tdvsm.margin.state import feature_names
from tdvsm.margin.vsm import VsmSample, compute_vsm
from tdvsm.netmodel.contingency import apply_contingency, branch_outage, enumerate_n1
from tdvsm.netmodel.types import NO_CONTINGENCY
from tdvsm.utils.misc import FLOAT_FORMAT, ordered_map, read_csv, read_text, text_digest, write_text

META_COLUMNS = ("seed", "contingency", "lambda_max", "vsm_mw")


@dataclass
class DatasetConfig:
    n_scenarios: int = 10
    master_seed: int = 0
    contingencies: object = "n1"  # "n1", "none" or a list of branch indices
    jobs: int = 1
    progress: bool = True

    def __post_init__(self):
        self.n_scenarios = int(self.n_scenarios)
        self.master_seed = int(self.master_seed)
        self.jobs = int(self.jobs)


@dataclass
class Dataset:
    samples: List[VsmSample]
    feature_names: List[str]
    mean: Optional[np.ndarray] = None
    std: Optional[np.ndarray] = None
    source_digest: str = field(default="", compare=False)

    def __len__(self):
        return len(self.samples)

    @property
    def x(self):
        if not self.samples:
            return np.zeros((0, len(self.feature_names)))
        return np.vstack([s.x for s in self.samples])

    @property
    def y(self):
        return np.array([s.vsm for s in self.samples], dtype=float)

    def normalization(self, indices=None):
        """z-score statistics over ``indices`` (the training split); constant features keep std 1."""
        x = self.x if indices is None else self.x[np.asarray(indices)]
        mean = x.mean(axis=0)
        std = x.std(axis=0)
        std[std < 1e-12] = 1.0
        self.mean, self.std = mean, std
        return mean, std

    def to_frame(self):
        rows = []
        for s in self.samples:
            row = {"seed": s.seed, "contingency": s.contingency}
            row.update(zip(self.feature_names, s.x.tolist()))
            row["lambda_max"] = s.lambda_max
            row["vsm_mw"] = s.vsm
            rows.append(row)
        return pd.DataFrame(rows, columns=["seed", "contingency"] + list(self.feature_names) + ["lambda_max", "vsm_mw"])

    def to_csv_text(self):
        return self.to_frame().to_csv(index=False, float_format=FLOAT_FORMAT, lineterminator="\n")

    def digest(self):
        return self.source_digest or text_digest(self.to_csv_text())


def save_dataset(path, dataset):
    text = dataset.to_csv_text()
    write_text(path, text)
    dataset.source_digest = text_digest(text)


def load_dataset(path):
    frame = read_csv(path)
    missing = [c for c in META_COLUMNS if c not in frame.columns]
    if missing:
        raise ValueError(f"{path}: dataset is missing column(s) {missing}")
    names = [c for c in frame.columns if c not in META_COLUMNS]
    samples = [
        VsmSample(
            x=row[names].to_numpy(dtype=float),
            contingency=str(row["contingency"]),
            vsm=float(row["vsm_mw"]),
            lambda_max=float(row["lambda_max"]),
            seed=int(row["seed"]),
        )
        for _, row in frame.iterrows()
    ]
    return Dataset(samples=samples, feature_names=names, source_digest=text_digest(read_text(path)))


def scenario_seed(master_seed, counter):
    return master_seed * 1_000_003 + counter


def contingency_list(net, choice):
    if choice == "n1":
        return enumerate_n1(net)
    if choice in (None, "none"):
        return [NO_CONTINGENCY]
    return [NO_CONTINGENCY] + [branch_outage(int(k)) for k in choice]


def generate_dataset(
    net,
    feeders,
    config=None,
    scenario_config=None,
    margin_config=None,
    cosim_config=None,
    pf_config=None,
    out_path=None,
):
    """
    Sample ``n_scenarios`` operating points and compute the margin of each
    under every contingency. Failed samples are skipped and logged; the output
    order is (scenario, contingency) regardless of worker completion order.
    """
    config = config or DatasetConfig()
    contingencies = []
    for c in contingency_list(net, config.contingencies):
        try:
            apply_contingency(net, c)
        except IslandingError as e:
            logging.info(f"Skipping {c.id}: {e}")
            continue
        contingencies.append(c)

    def run(counter):
        seed = scenario_seed(config.master_seed, counter)
        try:
            scenario = sample_scenario(net, feeders, scenario_config, seed, cosim_config, pf_config)
        except InfeasibleScenarioError as e:
            logging.warning(f"Skipping scenario {counter}: {e}")
            return []
        out = []
        intact = None
        for c in contingencies:
            try:
                sample = compute_vsm(net, feeders, scenario, c, margin_config, cosim_config, pf_config)
            except BaseInfeasibleError as e:
                logging.info(f"Skipping sample: {e}")
                continue
            if c.kind == "none":
                intact = sample
            elif intact is not None:
                width = (margin_config.width if margin_config else 1.0e-3) * scenario.base_total_p
                if sample.vsm > intact.vsm + width:
                    logging.warning(
                        f"Anomaly: seed {seed} contingency {c.id} margin {sample.vsm:.3f} MW exceeds "
                        f"intact margin {intact.vsm:.3f} MW"
                    )
            out.append(sample)
        return out

    desc = "Generating VSM samples" if config.progress else None
    per_scenario = ordered_map(run, range(config.n_scenarios), jobs=config.jobs, desc=desc)
    samples = [s for group in per_scenario for s in group]
    attempted = config.n_scenarios * len(contingencies)
    logging.info(f"Generated {len(samples)} of {attempted} attempted samples")
    dataset = Dataset(samples=samples, feature_names=feature_names(net))
    if out_path is not None:
        save_dataset(out_path, dataset)
    return dataset
