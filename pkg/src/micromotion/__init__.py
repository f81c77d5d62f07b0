"""Detection of cellular micromotion in video recordings.

The package implements a ladder of increasingly elaborate detectors that
predict a fluorescence activity trace from label-free transmission video:
temporal bandpass filtering, pixel-wise matched filtering, a dilated 1D
convolutional network, and a region-specific 3D network initialized from
the 1D one.  A deterministic synthetic-video generator with ground-truth
spike trains provides the test bed.

Attribute access is lazy so that the command line entry point can pin
BLAS thread counts before NumPy is first imported.
"""

from importlib import import_module

__version__ = "0.1.0"

_EXPORTS = {
    # data types and serialization
    "VideoTensor": "tensor_io",
    "Trace": "tensor_io",
    "SpikeTrain": "tensor_io",
    "RoiRect": "tensor_io",
    "FormatError": "tensor_io",
    "read_video": "tensor_io",
    "write_video": "tensor_io",
    "read_trace": "tensor_io",
    "write_trace": "tensor_io",
    "read_spikes": "tensor_io",
    "write_spikes": "tensor_io",
    "slice_roi": "tensor_io",
    "slice_frames": "tensor_io",
    # synthetic data
    "SynthConfig": "synthgen",
    "RegionSpec": "synthgen",
    "SynthDataset": "synthgen",
    "gen_spike_train": "synthgen",
    "gen_dataset": "synthgen",
    "default_regions": "synthgen",
    # bandpass
    "BandpassSpec": "bandpass",
    "magnitude_response": "bandpass",
    "bandpass_trace": "bandpass",
    "bandpass_video": "bandpass",
    "TemporalBandpass": "bandpass",
    # matched filtering
    "SpikeDetectConfig": "matched",
    "TemplateTensor": "matched",
    "detect_spikes": "matched",
    "extract_template": "matched",
    "matched_filter": "matched",
    "prediction_trace": "matched",
    "MatchedFilterModel": "matched",
    # 1D network
    "Conv1DLayer": "nn1d",
    "Network1D": "nn1d",
    "AdamState": "nn1d",
    "TrainConfig1D": "nn1d",
    "build_network1d": "nn1d",
    "train_1d": "nn1d",
    "predict_1d": "nn1d",
    "PixelwiseConv1DRegressor": "nn1d",
    # 3D network
    "Network3D": "net3d",
    "TrainConfig3D": "net3d",
    "init_from_1d": "net3d",
    "forward3d": "net3d",
    "train_3d": "net3d",
    "predict_3d": "net3d",
    "export_dense_map": "net3d",
    "RegionConv3DRegressor": "net3d",
    # evaluation
    "CorrelationMap": "evaluation",
    "zscore": "evaluation",
    "correlation_score": "evaluation",
    "correlation_map": "evaluation",
    "compare_methods": "evaluation",
    "export_map_pgm": "evaluation",
    # network serialization
    "save_network": "netio",
    "load_network": "netio",
}

__all__ = sorted(_EXPORTS) + ["__version__"]


def __getattr__(name):
    try:
        module = _EXPORTS[name]
    except KeyError:
        raise AttributeError(f"module {__name__!r} has no attribute {name!r}") from None
    return getattr(import_module(f".{module}", __name__), name)


def __dir__():
    return __all__
