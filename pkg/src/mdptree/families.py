"""Ready-made families: small worked examples and parametric generators."""

from __future__ import annotations

from fractions import Fraction

import numpy as np

# Two members over s0, s1 and the sinks. Hole value H names the member.
TWO_MEMBER_SKETCH = """\
mdp

// states: 0 = s0, 1 = s1, 2 = goal, 3 = fail
hole int H in {1..2};

module walk
  s : [0..3] init 0;
  [alpha] s=0 & H=1 -> 0.8: (s'=2) + 0.2: (s'=3);
  [alpha] s=0 & H=2 -> 0.6: (s'=2) + 0.4: (s'=3);
  [beta]  s=0 & H=1 -> 0.5: (s'=1) + 0.5: (s'=3);
  [beta]  s=0 & H=2 -> (s'=1);
  [gamma] s=1 -> 0.7: (s'=2) + 0.3: (s'=3);
  [stay]  s>=2 -> true;
endmodule

label "goal" = s=2;
"""

# Three members; states: 0 = s0, 1 = s1, 2 = goal, 3 = fail, 4 = dead end.
TRAP_SKETCH = """\
mdp

hole int H in {1..3};

module walk
  s : [0..4] init 0;
  [alpha] s=0 -> (s'=(H=3 ? 2 : 4));
  [beta]  s=0 -> (s'=1);
  [alpha] s=1 -> (s'=(H=1 ? 3 : 2));
  [beta]  s=1 -> (s'=(H=2 ? 3 : 2));
  [stay]  s>=2 -> true;
endmodule

label "goal" = s=2;
"""

# Twenty members; the left branch wins for H<=6, the right one for 7<=H<=12.
MERGE_SKETCH = """\
mdp

hole int H in {1..20};

module walk
  s : [0..4] init 0;
  [a] s=0 -> (s'=1);
  [b] s=0 -> (s'=2);
  [x] s=1 -> (s'=(H<=6 ? 3 : 4));
  [y] s=1 -> (s'=4);
  [x] s=2 -> (s'=(H>=7 & H<=12 ? 3 : 4));
  [y] s=2 -> (s'=4);
  [stay] s>=3 -> true;
endmodule

label "goal" = s=3;
"""

GRID_SKETCH = """\
mdp

hole int OX in {2..5};
hole int OY in {2..4};
formula goal = (x=6 & y=6);
formula done = goal | crash;
formula xr = min(x+1,6);
formula xl = max(x-1,1);
formula yu = min(y+1,6);
formula yd = max(y-1,1);

module clock
  clk : [0..1] init 0;
  [l] !done & clk=0 -> (clk'=1);
  [r] !done & clk=0 -> (clk'=1);
  [d] !done & clk=0 -> (clk'=1);
  [u] !done & clk=0 -> (clk'=1);
  [crash] !done & clk=1 -> (clk'=0);
endmodule

module agent
  x : [1..6] init 1;
  y : [1..6] init 1;
  crash : bool init false;
  [l] true -> 0.91: (x'=xl) + 0.03: (y'=yd) + 0.03: (y'=yu) + 0.03: (x'=xr);
  [r] true -> 0.91: (x'=xr) + 0.03: (y'=yu) + 0.03: (y'=yd) + 0.03: (x'=xl);
  [d] true -> 0.91: (y'=yd) + 0.03: (x'=xr) + 0.03: (x'=xl) + 0.03: (y'=yu);
  [u] true -> 0.91: (y'=yu) + 0.03: (x'=xl) + 0.03: (x'=xr) + 0.03: (y'=yd);
  [crash] true -> (crash'=(x=OX & y=OY)); //instantiation affects this line
endmodule
"""


def two_member_family() -> list[dict]:
    """The two members as explicit transition dictionaries."""
    shared = {"s1": {"gamma": {"sT": "7/10", "sF": "3/10"}}}
    return [
        {"s0": {"alpha": {"sT": "4/5", "sF": "1/5"}, "beta": {"s1": "1/2", "sF": "1/2"}}, **shared},
        {"s0": {"alpha": {"sT": "3/5", "sF": "2/5"}, "beta": {"s1": 1}}, **shared},
    ]


def trap_family() -> list[dict]:
    out = []
    for h in (1, 2, 3):
        out.append(
            {
                "s0": {"alpha": {"sT" if h == 3 else "sD": 1}, "beta": {"s1": 1}},
                "s1": {"alpha": {"sF" if h == 1 else "sT": 1}, "beta": {"sF" if h == 2 else "sT": 1}},
            }
        )
    return out


def obstacle_grid(size: int = 12, obstacles: int = 2, domain: tuple[int, int] = (1, 10), slip: str = "1/10") -> str:
    """Gridworld with ``obstacles`` obstacles whose coordinates are holes.

    The agent starts in the lower-left corner and must reach the upper-right
    one. Every move goes sideways with probability ``slip`` (split evenly);
    entering an obstacle cell is fatal.
    """
    lo, hi = domain
    p_slip = Fraction(slip)
    main = 1 - p_slip
    side = p_slip / 2
    lines = ["mdp", ""]
    for k in range(1, obstacles + 1):
        lines.append(f"hole int OX{k} in {{{lo}..{hi}}};")
        lines.append(f"hole int OY{k} in {{{lo}..{hi}}};")
    lines.append("")
    lines.append(f"formula goal = (x={size} & y={size});")
    lines.append("formula done = goal | crash;")
    lines.append(f"formula xr = min(x+1,{size});")
    lines.append("formula xl = max(x-1,1);")
    lines.append(f"formula yu = min(y+1,{size});")
    lines.append("formula yd = max(y-1,1);")

    def hit(xe: str, ye: str) -> str:
        return "(" + " | ".join(f"({xe}=OX{k} & {ye}=OY{k})" for k in range(1, obstacles + 1)) + ")"

    def move(xe: str, ye: str) -> str:
        return f"(x'={xe}) & (y'={ye}) & (crash'={hit(xe, ye)})"

    moves = {
        "r": (("xr", "y"), ("x", "yu"), ("x", "yd")),
        "l": (("xl", "y"), ("x", "yd"), ("x", "yu")),
        "u": (("x", "yu"), ("xl", "y"), ("xr", "y")),
        "d": (("x", "yd"), ("xr", "y"), ("xl", "y")),
    }
    lines += ["", "module agent", f"  x : [1..{size}] init 1;", f"  y : [1..{size}] init 1;", "  crash : bool init false;"]
    for a, (m, s1, s2) in moves.items():
        branches = [f"{main}: {move(*m)}"]
        if p_slip:
            branches += [f"{side}: {move(*s1)}", f"{side}: {move(*s2)}"]
        lines.append(f"  [{a}] !done -> " + " + ".join(branches) + ";")
    lines.append("  [stay] done -> true;")
    lines += ["endmodule", "", 'label "goal" = goal & !crash;']
    return "\n".join(lines) + "\n"


def random_sketch(rng: np.random.Generator, max_states: int = 12, max_members: int = 64, max_actions: int = 3) -> str:
    """A random single-module sketch over states 0..n-1.

    State ``n-1`` is the goal and ``n-2`` a sink. Successors may depend on
    holes through conditional expressions; guards never do, so every member
    offers the same actions.
    """
    n = int(rng.integers(4, max_states + 1))
    holes = []
    size = 1
    for k in range(int(rng.integers(1, 4))):
        options = [d for d in (2, 3, 4) if size * d <= max_members]
        if not options:
            break
        d = int(rng.choice(options))
        lo = int(rng.integers(0, 3))
        holes.append((f"H{k}", lo, lo + d - 1))
        size *= d
    lines = ["mdp", ""]
    lines += [f"hole int {name} in {{{lo}..{hi}}};" for name, lo, hi in holes]
    lines += ["", "module walk", f"  s : [0..{n - 1}] init 0;"]

    def successor() -> str:
        t = int(rng.integers(0, n))
        if rng.random() < 0.5:
            return str(t)
        name, lo, hi = holes[int(rng.integers(0, len(holes)))]
        v = int(rng.integers(lo, hi + 1))
        other = int(rng.integers(0, n))
        op = "=" if rng.random() < 0.5 else "<="
        cond = f"{name}{op}{v}"
        if len(holes) > 1 and rng.random() < 0.3:
            name2, lo2, hi2 = holes[(holes.index((name, lo, hi)) + 1) % len(holes)]
            cond += f" & {name2}>={int(rng.integers(lo2, hi2 + 1))}"
        return f"({cond} ? {t} : {other})"

    for s in range(n - 2):
        for a in range(int(rng.integers(1, max_actions + 1))):
            k = int(rng.integers(1, 4))
            cuts = np.sort(rng.choice(np.arange(1, 10), size=k - 1, replace=False)) if k > 1 else np.array([], dtype=int)
            weights = np.diff(np.concatenate([[0], cuts, [10]]))
            branches = [f"{w}/10: (s'={successor()})" for w in weights]
            lines.append(f"  [a{a}] s={s} -> " + " + ".join(branches) + ";")
    lines.append(f"  [stay] s>={n - 2} -> true;")
    lines += ["endmodule", "", f'label "goal" = s={n - 1};']
    return "\n".join(lines) + "\n"
