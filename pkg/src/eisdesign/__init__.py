"""Parameter identification, Cramer-Rao bounds and E-optimal frequency design
for a ten-parameter Li-ion equivalent circuit fitted to EIS spectra."""

__version__ = "0.1.0"
