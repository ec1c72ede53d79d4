from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .gradcheck import GradCheckReport, grad_check, grad_check_report, relative_error
from .init import fans, init_parameters, xavier_bound, xavier_init
from .layers import (
    SIGMOID_EPS,
    Conv2D,
    Flatten,
    FullyConnected,
    Layer,
    MaxPool2D,
    ReLU,
    ShapeError,
    Sigmoid,
    Stack,
    concat,
    concat_backward,
    conv_output_size,
    sigmoid,
)
from .loss import LossReport, cross_entropy_loss
from .optim import Parameters, sgd_momentum_step
