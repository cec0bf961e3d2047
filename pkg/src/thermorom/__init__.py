"""Reduced-order thermospheric density assimilation.

Latent PCA dynamics (sparse autoregressive or DMDc), a companion-form
extended Kalman filter for along-track log-density measurements, and the
tooling around it: synthetic twins, a binary array container, CSV ingestion
and report rendering.
"""

__version__ = "0.1.0"
