"""Randomized branching flow units.

A flow unit is a rooted tree of straight vessel segments, up to three
hierarchy levels deep: one root, two children, and zero to four
grandchildren. Eight topology variants enumerate the grandchild counts of
the two children, from a single grandchild to the complete four-leaf unit.

Geometry lives in a unit-local frame: the root starts at the origin and
each vessel's direction is set by its steering angle, measured from the
local axial direction in the lateral-axial plane. Angles fan outward with
hierarchy: roughly straight roots, children near +-30 degrees, and
grandchildren either steered near +-60 degrees (matching the parent's side)
or near straight.
"""

from dataclasses import dataclass

import numpy as np

# variant id -> (grandchildren under left child, under right child)
VARIANT_GRANDCHILDREN = {
    1: (0, 1), 2: (0, 2), 3: (1, 0), 4: (1, 1),
    5: (1, 2), 6: (2, 0), 7: (2, 1), 8: (2, 2),
}


@dataclass
class Vessel:
    """One straight segment of a flow unit.

    Parameters
    ----------
    hierarchy : int
        Tree depth, 1 for the root.
    parent : int or None
        Index of the parent vessel, None for the root.
    length : float
        Segment length in mm.
    angle : float
        Steering angle in degrees from the unit's axial direction.
    radius : float
        Lumen radius in mm.
    """

    hierarchy: int
    parent: int | None
    length: float
    angle: float
    radius: float


@dataclass
class FlowUnit:
    """A sampled branching unit.

    Vessels are stored root-first in breadth-first order, so every parent
    index precedes its children. target_v1 is the peak root velocity in
    mm/s the hydraulic solve should be rescaled to.
    """

    variant_id: int
    vessels: list
    target_v1: float


def sample_flow_unit(rng_seed, variant_id):
    """Draw one randomized unit.

    Parameters
    ----------
    rng_seed : int or sequence
        Seed for the unit's private generator; a fixed seed reproduces the
        unit bit-exactly.
    variant_id : int
        Topology variant in 1..8 (8 is the complete four-leaf unit).

    Returns
    -------
    FlowUnit

    Notes
    -----
    Lengths are 3.5 mm +- 10% uniform at every hierarchy. The root steers
    within [-10, 10] degrees and has radius 1.25 mm +- 10%. Children steer
    to -30/+30 degrees with +-2 degrees of jitter. When a child has two
    grandchildren, one is steered to the parent's side at 60 degrees with
    +-3 degrees of jitter and the other continues near straight; a single
    grandchild continues near straight. Radii step down by 1/sqrt(n) at
    each n-way split, preserving total cross-section.
    """
    if variant_id not in VARIANT_GRANDCHILDREN:
        raise ValueError(f"variant_id must be in 1..8, got {variant_id}")
    rng = np.random.default_rng(rng_seed)

    def draw_length():
        return 3.5 + rng.uniform(-0.35, 0.35)

    root_len = draw_length()
    root_angle = rng.uniform(-10.0, 10.0)
    root_radius = 1.25 + rng.uniform(-0.125, 0.125)
    vessels = [Vessel(1, None, root_len, root_angle, root_radius)]

    gl, gr = VARIANT_GRANDCHILDREN[variant_id]
    child_radius = root_radius / np.sqrt(2.0)
    for side in (-1.0, 1.0):
        vessels.append(Vessel(2, 0, draw_length(),
                              side * 30.0 + rng.uniform(-2.0, 2.0), child_radius))

    for child_idx, count in ((1, gl), (2, gr)):
        if count == 0:
            continue
        parent = vessels[child_idx]
        gc_radius = parent.radius / np.sqrt(count)
        side = np.sign(parent.angle)
        for k in range(count):
            steered = (count == 2 and k == 0)
            angle = side * 60.0 + rng.uniform(-3.0, 3.0) if steered \
                else rng.uniform(-3.0, 3.0)
            vessels.append(Vessel(3, child_idx, draw_length(), angle, gc_radius))

    return FlowUnit(variant_id=variant_id, vessels=vessels,
                    target_v1=rng.uniform(20.0, 30.0))


def edge_list(unit):
    """Directed edges (from_node, to_node); node 0 is the inlet, vessel i ends at node i+1."""
    edges = []
    for i, v in enumerate(unit.vessels):
        if v.parent is None:
            if i != 0:
                raise ValueError("only the first vessel may be the root")
            edges.append((0, 1))
        else:
            if not 0 <= v.parent < i:
                raise ValueError(f"vessel {i} has a malformed parent index {v.parent}")
            edges.append((v.parent + 1, i + 1))
    return edges


def unit_segments(unit):
    """Endpoints of every vessel in the unit-local frame.

    Returns
    -------
    list of (start, end)
        Each a (2,) array of lateral/axial coordinates in mm. The root
        starts at the origin; children start at their parent's end.
    """
    segments = []
    for v in unit.vessels:
        start = np.zeros(2) if v.parent is None else segments[v.parent][1]
        theta = np.deg2rad(v.angle)
        direction = np.array([np.sin(theta), np.cos(theta)])
        segments.append((start, start + v.length * direction))
    return segments
