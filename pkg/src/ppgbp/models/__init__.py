from .adam import Adam
from .network import (
    ModelSpec,
    Network,
    Parameters,
    final_layer_names,
    init,
    parameter_shapes,
    predict,
)
from .training import (
    Checkpoint,
    EarlyStopping,
    TrainConfig,
    check_disjoint,
    finetune_final_layer,
    gradient_check,
    personal_split,
    personalize,
    train,
)

__all__ = [
    "Adam", "Checkpoint", "EarlyStopping", "ModelSpec", "Network", "Parameters",
    "TrainConfig", "check_disjoint", "final_layer_names", "finetune_final_layer",
    "gradient_check", "init", "parameter_shapes", "personal_split", "personalize",
    "predict", "train",
]
