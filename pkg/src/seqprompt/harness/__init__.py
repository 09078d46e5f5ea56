"""Session streams, run configuration and the class-incremental training loop."""

from .config import HeadConfig, NkaConfig, RunConfig, StreamConfig, full_preset
from .engine import Engine, RunReport, ablation_fixed_alpha, run_experiment, run_session, write_report
from .stream import SessionStream, load_stream, make_synthetic_stream, save_stream

__all__ = [
    "HeadConfig", "NkaConfig", "RunConfig", "StreamConfig", "full_preset",
    "Engine", "RunReport", "ablation_fixed_alpha", "run_experiment", "run_session", "write_report",
    "SessionStream", "load_stream", "make_synthetic_stream", "save_stream",
]
