"""Event-camera slip detection and suppression.

Modules: :mod:`evslip.events` (ingestion, SAE, windows), :mod:`evslip.harris`
(e-Harris labeling), :mod:`evslip.slip` (thresholds, detectors, stage
machine), :mod:`evslip.fuzzy` (grip-force controller), :mod:`evslip.replay`
(offline log processing), :mod:`evslip.sim` (emulator and closed loop) and
:mod:`evslip.cli`.
"""

__version__ = "0.1.0"
