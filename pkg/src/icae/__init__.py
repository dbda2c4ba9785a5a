"""Independence conditional autoencoders for attribute conversion, with a
synthetic ground-truth harness for checking their guarantees."""

from .genproc import FrameDataset, GenerativeSpec, ParallelPairs, f_apply, f_invert, make_spec, sample_dataset
from .model import IcaeModel, LabelScale, TrainConfig, convert, decode, encode, loss_eval, train
from .units import UnitModel, asymmetry_check, build_proxy, kmeans_assign, kmeans_fit

__version__ = "0.1.0"
