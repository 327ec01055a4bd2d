"""Composable radio-access-network simulator.

Modules: scenario (world model), neural (tiny autodiff stack), channel
(large/small-scale radio propagation), netem (per-tick KPI emulation),
behavior (generative user trajectories and traffic), orchestrator (tick
loop and interface log), rlenv (antenna optimization environment and
baseline optimizers), protocol/server/cli (wire format and entry points).
"""

__version__ = "0.1.0"
