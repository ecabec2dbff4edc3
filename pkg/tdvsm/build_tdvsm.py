import os
from dataclasses import dataclass, field

from hydra import compose, initialize_config_dir
from hydra.core.global_hydra import GlobalHydra
from hydra.utils import instantiate
from omegaconf import OmegaConf

from tdvsm.coord.loop import CoordConfig
from tdvsm.cosim import CoSimConfig
from tdvsm.dxflow.sweep import BfsConfig
from tdvsm.errors import ConfigError
from tdvsm.margin.dataset import DatasetConfig
from tdvsm.margin.scenario import ScenarioConfig
from tdvsm.margin.vsm import MarginConfig
from tdvsm.mlpvsm.train import TrainConfig
from tdvsm.netmodel.case_io import bundled_case, load_case
from tdvsm.tsopt.problem import TsoConfig
from tdvsm.txflow.newton import PowerFlowConfig

CONFIG_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "tdvsm_configs")

SECTIONS = {
    "powerflow": PowerFlowConfig,
    "bfs": BfsConfig,
    "cosim": CoSimConfig,
    "scenario": ScenarioConfig,
    "margin": MarginConfig,
    "dataset": DatasetConfig,
    "train": TrainConfig,
    "dx_train": TrainConfig,
    "tso": TsoConfig,
    "coord": CoordConfig,
}


@dataclass
class Settings:
    case: str = "desk"
    seed: int = 0
    dx_samples: int = 400
    powerflow: PowerFlowConfig = field(default_factory=PowerFlowConfig)
    bfs: BfsConfig = field(default_factory=BfsConfig)
    cosim: CoSimConfig = field(default_factory=CoSimConfig)
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    margin: MarginConfig = field(default_factory=MarginConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    dx_train: TrainConfig = field(default_factory=lambda: TrainConfig(hidden_units=10))
    tso: TsoConfig = field(default_factory=TsoConfig)
    coord: CoordConfig = field(default_factory=CoordConfig)


def compose_config(config_file="default.yaml", overrides=()):
    """
    Compose ``config_file`` (a name inside tdvsm_configs/ or a path to a YAML
    file) with hydra ``++key=value`` overrides and resolve interpolations.
    """
    if os.path.isfile(config_file):
        config_dir, config_name = os.path.split(os.path.abspath(config_file))
    else:
        config_dir, config_name = CONFIG_DIR, config_file
    if config_name.endswith(".yaml"):
        config_name = config_name[: -len(".yaml")]
    if GlobalHydra.instance().is_initialized():
        GlobalHydra.instance().clear()
    with initialize_config_dir(config_dir=config_dir, version_base=None):
        cfg = compose(config_name=config_name, overrides=list(overrides))
    OmegaConf.resolve(cfg)
    return cfg


def build_settings(cfg):
    settings = Settings()
    for name in ("case", "seed", "dx_samples"):
        if name in cfg and cfg[name] is not None:
            setattr(settings, name, cfg[name])
    settings.seed = int(settings.seed)
    settings.dx_samples = int(settings.dx_samples)
    for name, cls in SECTIONS.items():
        if name not in cfg or cfg[name] is None:
            continue
        section = cfg[name]
        if "_target_" not in section:
            raise ConfigError(f"config section {name} has no _target_")
        obj = instantiate(section, _convert_="all")
        if not isinstance(obj, cls):
            raise ConfigError(f"config section {name} should build {cls.__name__}, got {type(obj).__name__}")
        setattr(settings, name, obj)
    return settings


def load_settings(config_file="default.yaml", overrides=()):
    return build_settings(compose_config(config_file, overrides))


def resolve_case_path(case):
    """A bundled case name (``desk``) or a path to a case file."""
    if os.path.isfile(case):
        return case
    name = case if case.endswith(".case") else case + ".case"
    return bundled_case(name)


def build_case(settings):
    return load_case(resolve_case_path(settings.case))
