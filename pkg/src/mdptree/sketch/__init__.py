from .syntax import Hole, SketchError, SketchProgram, parse_sketch
from .program import (
    DEFAULT_FAMILY_CAP,
    SELF_LOOP,
    CompiledSketch,
    ReachSpec,
    assignment_index,
    assignment_values,
    enumerate_assignments,
    format_assignment,
    hole_grid,
    parse_property,
)
from .explore import DEFAULT_STATE_CAP, StateCapExceeded, action_sets, compiled, instantiate

__all__ = [
    "Hole",
    "SketchError",
    "SketchProgram",
    "parse_sketch",
    "DEFAULT_FAMILY_CAP",
    "SELF_LOOP",
    "CompiledSketch",
    "ReachSpec",
    "assignment_index",
    "assignment_values",
    "enumerate_assignments",
    "format_assignment",
    "hole_grid",
    "parse_property",
    "DEFAULT_STATE_CAP",
    "StateCapExceeded",
    "action_sets",
    "compiled",
    "instantiate",
]
