"""Residual-corrected bidirectional LSTM for remaining-useful-life estimation.

Modules:

- :mod:`rul_forge.autodiff` reverse-mode tape over float64 numpy arrays
- :mod:`rul_forge.model` Bi-cLSTM and its LSTM / cLSTM / Bi-LSTM ablations
- :mod:`rul_forge.training` MSE, Adam, early-stopped training
- :mod:`rul_forge.preprocessing` labels, regime normalisation, feature selection, windows
- :mod:`rul_forge.cmapss_io` C-MAPSS text files
- :mod:`rul_forge.metrics` RMSE / MAE / R2 and report files
- :mod:`rul_forge.synthetic` seeded synthetic fleets
- :mod:`rul_forge.cli` the ``rul-forge`` command
"""

__version__ = "0.1.0"
