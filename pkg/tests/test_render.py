"""SVG rendering: structure, legend content, and robustness."""

import math
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from fleetlab.baselines import random_policy, sweep
from fleetlab.env import make_plan, plan_length
from fleetlab.instances import ExperimentConfig, ProblemInstance, generate_instance
from fleetlab.render import PALETTE, render_plan, vehicle_lengths

SVG_NS = "{http://www.w3.org/2000/svg}"


def single_customer_instance():
    return ProblemInstance(
        instance_id="render/one",
        depot=np.array([0.5, 0.5]),
        coords=np.array([[0.5, 0.9]]),
        demands=np.array([4], dtype=np.int64),
        capacities=np.array([10], dtype=np.int64),
    )


def test_single_customer_svg_structure():
    inst = single_customer_instance()
    plan = make_plan(inst, [[((0, 1, 0), (4,))]])
    root = ET.fromstring(render_plan(plan, inst))
    assert root.tag == f"{SVG_NS}svg"
    circles = root.findall(f".//{SVG_NS}circle")
    polylines = root.findall(f".//{SVG_NS}polyline")
    depot = [r for r in root.findall(f".//{SVG_NS}rect")
             if r.get("class") == "depot"]
    assert len(circles) == 1
    assert len(polylines) == 1
    assert len(depot) == 1


def test_three_vehicle_plan_has_three_colour_classes():
    config = ExperimentConfig("render3", 6, 3, (10, 12, 14), test_set_size=4)
    inst = generate_instance(config, 0)
    plan = random_policy(inst, 5)
    root = ET.fromstring(render_plan(plan, inst))
    classes = {p.get("class") for p in root.findall(f".//{SVG_NS}polyline")}
    assert classes == {"vehicle-0", "vehicle-1", "vehicle-2"}
    strokes = {p.get("stroke") for p in root.findall(f".//{SVG_NS}polyline")}
    assert strokes == set(PALETTE[:3])


def test_customer_markers_scale_with_demand():
    config = ExperimentConfig("render6", 6, 2, (10, 12), test_set_size=4)
    inst = generate_instance(config, 1)
    plan = sweep(inst)
    root = ET.fromstring(render_plan(plan, inst))
    circles = root.findall(f".//{SVG_NS}circle")
    assert len(circles) == 6
    radii = [float(c.get("r")) for c in circles]
    expected = [3.0 + float(d) for d in inst.demands]
    assert radii == pytest.approx(expected)


def test_vehicle_lengths_sum_to_plan_total():
    config = ExperimentConfig("render8", 8, 3, (10, 12, 14), test_set_size=4)
    for stream in range(5):
        inst = generate_instance(config, stream)
        plan = sweep(inst)
        lengths = vehicle_lengths(plan, inst)
        assert sum(lengths) == pytest.approx(plan.total_length, abs=1e-9)
        assert sum(lengths) == pytest.approx(plan_length(plan, inst), abs=1e-9)


def test_legend_reports_per_vehicle_lengths():
    config = ExperimentConfig("render5", 5, 2, (10, 12), test_set_size=4)
    inst = generate_instance(config, 2)
    plan = sweep(inst)
    root = ET.fromstring(render_plan(plan, inst))
    texts = [t.text for t in root.findall(f".//{SVG_NS}text")]
    assert any(f"total length {plan.total_length:.3f}" in t for t in texts)
    for j, length in enumerate(vehicle_lengths(plan, inst)):
        assert any(f"vehicle {j + 1} " in t and f"length {length:.3f}" in t
                   for t in texts)


def test_infeasible_plan_is_flagged():
    inst = single_customer_instance()
    plan = make_plan(inst, [[((0, 1, 0), (2,))]], feasible=False,
                     residual_demand=2)
    svg = render_plan(plan, inst)
    assert "[infeasible]" in svg
    ET.fromstring(svg)


def test_render_is_deterministic():
    config = ExperimentConfig("render5", 5, 2, (10, 12), test_set_size=4)
    inst = generate_instance(config, 3)
    plan = sweep(inst)
    assert render_plan(plan, inst) == render_plan(plan, inst)


def test_fuzz_500_random_plans_always_well_formed():
    configs = [
        ExperimentConfig("fz-a", 3, 1, (11,), test_set_size=4),
        ExperimentConfig("fz-b", 6, 2, (10, 13), test_set_size=4),
        ExperimentConfig("fz-c", 9, 3, (10, 12, 15), test_set_size=4),
        ExperimentConfig("fz-d", 12, 4, (10, 11, 12, 13), test_set_size=4),
        ExperimentConfig("fz-e", 5, 5, (10, 10, 11, 11, 12), test_set_size=4),
    ]
    count = 0
    for config in configs:
        for stream in range(20):
            inst = generate_instance(config, stream)
            for seed in range(5):
                plan = random_policy(inst, seed)
                root = ET.fromstring(render_plan(plan, inst))
                polys = root.findall(f".//{SVG_NS}polyline")
                assert len(polys) >= 1
                for p in polys:
                    # every coordinate stays inside the viewport
                    for pair in p.get("points").split():
                        x, y = map(float, pair.split(","))
                        assert 0 <= x <= 640 and 0 <= y <= 640
                count += 1
    assert count == 500
