"""ONNX to MCE converter for MobileNetV2-family binary classifiers."""

from .convert import ConversionError, convert, convert_model
from .verify import VerifyError, verify, verify_same

__version__ = "0.1.0"

__all__ = ["ConversionError", "convert", "convert_model",
           "VerifyError", "verify", "verify_same", "__version__"]
