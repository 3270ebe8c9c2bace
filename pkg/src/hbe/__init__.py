"""Lightweight patient-specific ECG heartbeat classification.

Pan-Tompkins segmentation, RR and Daubechies wavelet features, two recurrent
models blended by a small MLP, trained per patient with BPTT and Adam.
"""

__version__ = "0.1.0"
