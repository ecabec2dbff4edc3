from tdvsm.mlpvsm.dx import sample_dx_dataset, train_dx_model  # noqa
from tdvsm.mlpvsm.metrics import Metrics, metrics  # noqa
from tdvsm.mlpvsm.model import MlpModel, TanhMLP, forward, gradient, load_model, save_model  # noqa
from tdvsm.mlpvsm.train import ArrayDataset, TrainConfig, fit_mlp, kfold_cv, train_rprop  # noqa
