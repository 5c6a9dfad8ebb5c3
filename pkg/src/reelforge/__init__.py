"""Frame-accurate music-to-video pipeline orchestrator.

Song analysis in, verified clip manifest out: planning on an integer frame
grid, pluggable generation backends, gate-then-rank candidate selection,
and a 12-criterion evaluation engine.
"""

__version__ = "0.1.0"

from .config import PipelineConfig, apply_ablations
from .pipeline import Components, Pipeline, Stage, mock_components
from .timegrid import FPS, FrameSpan, FrameTime, MusicContext, SongMetadata

__all__ = [
    "FPS",
    "Components",
    "FrameSpan",
    "FrameTime",
    "MusicContext",
    "Pipeline",
    "PipelineConfig",
    "SongMetadata",
    "Stage",
    "apply_ablations",
    "mock_components",
    "__version__",
]
