"""SVG rendering of route plans: unit square to a fixed 640x640 viewport."""

from __future__ import annotations

import math
import xml.etree.ElementTree as ET

from .env import RoutePlan, node_coord
from .instances import ProblemInstance

VIEWPORT = 640
MARGIN = 40
_SPAN = VIEWPORT - 2 * MARGIN

# one stroke colour class per vehicle, cycled for larger fleets
PALETTE = ("#d62728", "#1f77b4", "#2ca02c", "#ff7f0e",
           "#9467bd", "#8c564b", "#e377c2", "#17becf")


def _px(point) -> tuple[float, float]:
    # SVG y grows downward; flip so the unit square keeps its orientation
    return (MARGIN + float(point[0]) * _SPAN,
            MARGIN + (1.0 - float(point[1])) * _SPAN)


def vehicle_lengths(plan: RoutePlan, instance: ProblemInstance) -> list[float]:
    lengths = []
    for tours in plan.vehicle_tours:
        total = 0.0
        for tour in tours:
            for a, b in zip(tour.nodes, tour.nodes[1:]):
                pa = node_coord(instance, a)
                pb = node_coord(instance, b)
                total += math.hypot(pb[0] - pa[0], pb[1] - pa[1])
        lengths.append(total)
    return lengths


def render_plan(plan: RoutePlan, instance: ProblemInstance) -> str:
    svg = ET.Element("svg", {
        "xmlns": "http://www.w3.org/2000/svg",
        "width": str(VIEWPORT),
        "height": str(VIEWPORT),
        "viewBox": f"0 0 {VIEWPORT} {VIEWPORT}",
    })
    ET.SubElement(svg, "rect", {
        "x": "0", "y": "0", "width": str(VIEWPORT), "height": str(VIEWPORT),
        "fill": "white", "stroke": "#808080",
    })

    routes = ET.SubElement(svg, "g", {"fill": "none", "stroke-width": "2"})
    for j, tours in enumerate(plan.vehicle_tours):
        colour = PALETTE[j % len(PALETTE)]
        for tour in tours:
            points = " ".join(f"{x:.2f},{y:.2f}"
                              for x, y in (_px(node_coord(instance, n))
                                           for n in tour.nodes))
            ET.SubElement(routes, "polyline", {
                "points": points,
                "stroke": colour,
                "class": f"vehicle-{j}",
            })

    markers = ET.SubElement(svg, "g", {"stroke": "black"})
    for i, coord in enumerate(instance.coords):
        x, y = _px(coord)
        radius = 3.0 + float(instance.demands[i])
        ET.SubElement(markers, "circle", {
            "cx": f"{x:.2f}", "cy": f"{y:.2f}", "r": f"{radius:.1f}",
            "fill": "#d0d0d0", "class": "customer",
        })
    dx, dy = _px(instance.depot)
    side = 14.0
    ET.SubElement(markers, "rect", {
        "x": f"{dx - side / 2:.2f}", "y": f"{dy - side / 2:.2f}",
        "width": f"{side:.1f}", "height": f"{side:.1f}",
        "fill": "black", "class": "depot",
    })

    legend = ET.SubElement(svg, "g", {"font-family": "monospace", "font-size": "13"})
    title = ET.SubElement(legend, "text", {"x": str(MARGIN), "y": "20"})
    flag = "" if plan.feasible else "  [infeasible]"
    title.text = (f"{plan.instance_id}  total length {plan.total_length:.3f}{flag}")
    for j, length in enumerate(vehicle_lengths(plan, instance)):
        entry = ET.SubElement(legend, "text", {
            "x": str(MARGIN),
            "y": str(VIEWPORT - 8 - 16 * (len(plan.vehicle_tours) - 1 - j)),
            "fill": PALETTE[j % len(PALETTE)],
        })
        entry.text = (f"vehicle {j + 1} (cap {int(instance.capacities[j])})"
                      f" length {length:.3f}")

    return ET.tostring(svg, encoding="unicode") + "\n"
