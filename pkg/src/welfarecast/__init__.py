"""Welfare prediction from satellite image features and high-frequency weather data.

The package builds enumeration-area level welfare targets (asset index, log
per-capita consumption) from survey files, derives monthly weather-quintile
features, fits ridge regressions with group-aware cross-validated shrinkage,
and produces evaluation diagnostics and gridded prediction rasters.
"""

__version__ = "0.1.0"
