from io import StringIO
from typing import List
import logging

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from ..core.env import ProblemArrays, simulate_tour  # noqa: E402
from ..schemas.instance import Instance  # noqa: E402
from ..schemas.solution import Solution  # noqa: E402
from ..schemas.variant import Variant  # noqa: E402
from ..utils import debug_log  # noqa: E402
from ..utils.errors import raise_schema_violation  # noqa: E402

logger = logging.getLogger(__name__)


def tour_label(n: int, length: float, load: float, duration: float) -> str:
    return f"n={n} l={length:.2f} q={load:.0f} t={duration:.2f}"


class PlotService:
    def __init__(self):
        debug_log("PLOT", "Initializing plot service")

    def tour_labels(self, inst: Instance, solution: Solution, variant: Variant) -> List[str]:
        """Legend text per non-empty tour: customers, distance, used capacity, duration."""
        arrays = ProblemArrays.build(inst, variant)
        labels = []
        for tour in solution.tours:
            if not tour:
                continue
            for node in tour:
                if not 1 <= node <= inst.n_customers:
                    raise_schema_violation(f"Customer id {node} out of range 1..{inst.n_customers}")
            metrics = simulate_tour(arrays, variant, tour).metrics
            labels.append(tour_label(metrics.n, metrics.distance, metrics.load * inst.capacity, metrics.duration))
        return labels

    def plot_solution(self, inst: Instance, solution: Solution, variant: Variant, title: str = "") -> str:
        """SVG document: depot marker, customers, one colored polyline per tour with a legend entry."""
        labels = self.tour_labels(inst, solution, variant)
        tours = [tour for tour in solution.tours if tour]
        depot = inst.depot
        fig, ax = plt.subplots(figsize=(7, 7))
        try:
            ax.scatter([c.x for c in inst.customers], [c.y for c in inst.customers], s=14, c="0.35", zorder=2)
            ax.scatter([depot.x], [depot.y], marker="s", s=70, c="black", zorder=3)
            cmap = plt.get_cmap("tab20")
            for index, (tour, label) in enumerate(zip(tours, labels)):
                path = [0] + tour + [0]
                ax.plot(
                    [inst.nodes[i].x for i in path],
                    [inst.nodes[i].y for i in path],
                    color=cmap(index % 20), linewidth=1.2, zorder=1, label=label
                )
            if tours:
                ax.legend(loc="upper left", bbox_to_anchor=(1.01, 1.0), fontsize=7, frameon=False)
            ax.set_title(title or (inst.name or "solution"))
            ax.set_aspect("equal")
            buffer = StringIO()
            with matplotlib.rc_context({"svg.fonttype": "none", "svg.hashsalt": "jampr"}):
                fig.savefig(buffer, format="svg", bbox_inches="tight", metadata={"Date": None})
            return buffer.getvalue()
        finally:
            plt.close(fig)


plot_service = PlotService()
