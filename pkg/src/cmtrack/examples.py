"""Built-in systems, stored as system-file text."""

from __future__ import annotations

from .sysfile import SystemSpec, loads

LTI = """\
[system]
name = lti
n = 2
m = 2
f1 = x2 + u1
f2 = 2*x1 - x2 + u2

[trajectory]
xd1 = 0
xd2 = 0
ud1 = 0
ud2 = 0

[synthesis]
eigenvalues = -1, -2

[simulate]
x0 = 1, -1
T = 20
dt = 1e-3
"""

PENDULUM2 = """\
[system]
name = pendulum2
n = 2
m = 2
f1 = x2 + u1
f2 = -sin(x1) + u2

[trajectory]
xd1 = sin(t)
xd2 = cos(t)
ud1 = 0
ud2 = sin(sin(t)) - sin(t)

[synthesis]
eigenvalues = -1, -2

[simulate]
x0 = 0.006, 1.008        # x_d(0) + (0.006, 0.008), |e(0)| = 1e-2
T = 20
dt = 1e-3
"""

PAPER2D = """\
[system]
name = paper2d
n = 2
m = 1
p = 1
f1 = x1*w1 + x2 + u1
f2 = x2 + u1

[trajectory]
xd1 = 0
xd2 = 0
ud1 = 0

[disturbance]
w1 = {w}

[synthesis]
eigenvalues = -1, -1
l2 = 1, 0

[simulate]
x0 = 1, 1
T = 20
dt = 1e-3
"""

CHAINED3 = """\
[system]
name = chained3
n = 3
m = 2
f1 = u1
f2 = u2
f3 = x2*u1

[trajectory]
xd1 = 0
xd2 = 0
xd3 = 0
ud1 = 0
ud2 = 0

[synthesis]
eigenvalues = -1, -1, -1
l3 = 0, 0, 1

[simulate]
x0 = 1, 1, 1
T = 20
dt = 1e-3
"""

DRIFTLESS2 = """\
[system]
name = driftless2
n = 2
m = 2
f1 = cos(x2)*u1
f2 = sin(x2)*u1 + u2

[trajectory]
xd1 = 1
xd2 = 0.5
ud1 = 0
ud2 = 0

[synthesis]
eigenvalues = auto
margin = 1

[simulate]
x0 = 1.1, 0.4
T = 20
dt = 1e-3
"""

EXAMPLES = {
    "lti": LTI,
    "pendulum2": PENDULUM2,
    "paper2d": PAPER2D.format(w="-2"),
    "chained3": CHAINED3,
    "driftless2": DRIFTLESS2,
}

# companion runs shown alongside a main example
COMPANIONS = {
    "paper2d": {"w0": PAPER2D.format(w="0").replace("name = paper2d", "name = paper2d-w0")},
}


def example_text(name: str) -> str:
    try:
        return EXAMPLES[name]
    except KeyError:
        raise KeyError(f"unknown example {name!r}; choose from {', '.join(EXAMPLES)}") from None


def load_example(name: str) -> SystemSpec:
    return loads(example_text(name))


def paper2d(w: str = "-2") -> SystemSpec:
    """The two-state example with a constant (or any t-expression) disturbance."""
    return loads(PAPER2D.format(w=w))
