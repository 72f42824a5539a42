"""SVG overlay of boundary-flow history and the oracle reference curve."""

import logging
from pathlib import Path
from typing import Optional

import matplotlib

matplotlib.use('Agg')
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from boundary import BoundaryCurve, FlowResult  # noqa: E402

logger = logging.getLogger(__name__)

# Fixed hash salt keeps SVG element ids identical across runs
matplotlib.rcParams['svg.hashsalt'] = 'roaflow'
matplotlib.rcParams['svg.fonttype'] = 'none'


def _closed(points: np.ndarray) -> np.ndarray:
    return np.vstack([points, points[:1]])


def export_svg(result: FlowResult, path, reference: Optional[BoundaryCurve] = None,
               title: str = '') -> Path:
    """Draw history curves as thin polylines, the final curve bold and the reference dashed."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    fig, ax = plt.subplots(figsize=(6, 6))
    try:
        for snap in result.history:
            pts = _closed(snap.points)
            ax.plot(pts[:, 0], pts[:, 1], color='tab:blue', linewidth=0.4, alpha=0.35)
        final = _closed(result.final.points)
        ax.plot(final[:, 0], final[:, 1], color='tab:blue', linewidth=2.0,
                label=f"final ({result.status.value}, {result.iterations} iterations)")
        if reference is not None:
            ref = _closed(reference.points)
            ax.plot(ref[:, 0], ref[:, 1], color='black', linestyle='--', linewidth=1.2,
                    label='oracle reference')
        ax.plot([0.0], [0.0], marker='+', color='tab:red')
        ax.set_aspect('equal')
        ax.set_xlabel('x1')
        ax.set_ylabel('x2')
        if title:
            ax.set_title(title)
        ax.legend(loc='upper right', fontsize='small')
        fig.savefig(path, format='svg', metadata={'Date': None})
    finally:
        plt.close(fig)

    logger.info(f"Wrote SVG overlay to {path}")
    return path
