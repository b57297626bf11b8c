"""Fisher information bounds for 9D localization from LEO satellite signals."""

from .channel_fim import OffsetConfig, assemble_channel_fim
from .efim_engine import (Efim, Scenario, efim_3d, efim_6d, efim_9d, estimability_margin,
                          is_estimable, location_fim, loss_matrix, sqrt_efim)
from .feasibility import (Cell, ScenarioGrid, explain, plane_geometry, random_geometry, scan,
                          scan_tables)
from .geometry import ConstellationState, ReceiverState, rotation_matrix, snapshot
from .location_transform import build_jacobian
from .signal_model import SignalSpec, bandwidth_from_psd

__all__ = [
    "Cell", "ConstellationState", "Efim", "OffsetConfig", "ReceiverState", "Scenario",
    "ScenarioGrid", "SignalSpec", "assemble_channel_fim", "bandwidth_from_psd", "build_jacobian",
    "efim_3d", "efim_6d", "efim_9d", "estimability_margin", "explain", "is_estimable",
    "location_fim", "loss_matrix", "plane_geometry", "random_geometry", "rotation_matrix",
    "scan", "scan_tables", "snapshot", "sqrt_efim",
]

__version__ = "0.1.0"
