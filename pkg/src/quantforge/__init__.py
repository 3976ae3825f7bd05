"""quantforge: post-training quantization engine over a tiny decoder transformer."""

from .quant import QuantParams, QuantSpec, QuantizedTensor, compute_qparams, dequantize, fake_quant, quant_error, quantize

__all__ = [
    "QuantSpec",
    "QuantParams",
    "QuantizedTensor",
    "compute_qparams",
    "fake_quant",
    "quantize",
    "dequantize",
    "quant_error",
]

__version__ = "0.1.0"
