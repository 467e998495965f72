"""Controlled dropout: MC dropout restricted to a fixed bank of masks.

The package provides a NumPy MLP engine, traditional and controlled
dropout layers, predictive-entropy uncertainty metrics, toy and MNIST
data, a scikit-learn style classifier and an experiment runner/CLI.
"""

__version__ = "0.1.0"

from .dropout import (  # noqa: E402
    DropoutAttachment,
    MaskBank,
    Mode,
    apply_controlled,
    apply_traditional,
    build_mask_bank,
    count_possible_masks,
    sample_mask,
)
from .estimator import DropoutMLPClassifier  # noqa: E402
from .exceptions import (  # noqa: E402
    BankTimeoutError,
    ConfigurationError,
    IDXFormatError,
    InfeasibleBankError,
    NumericError,
)
from .uncertainty import (  # noqa: E402
    UncertaintyCounts,
    UncertaintyMetrics,
    classify_outcome,
    compute_metrics,
    mc_predict,
    predictive_entropy,
    threshold_sweep,
)

__all__ = [
    "BankTimeoutError",
    "ConfigurationError",
    "DropoutAttachment",
    "DropoutMLPClassifier",
    "IDXFormatError",
    "InfeasibleBankError",
    "MaskBank",
    "Mode",
    "NumericError",
    "UncertaintyCounts",
    "UncertaintyMetrics",
    "apply_controlled",
    "apply_traditional",
    "build_mask_bank",
    "classify_outcome",
    "compute_metrics",
    "count_possible_masks",
    "mc_predict",
    "predictive_entropy",
    "sample_mask",
    "threshold_sweep",
]
