import numpy as np
import pytest

from sibsgrasp.geometry import RigidTransform, random_rotation
from sibsgrasp.hand_model import GraspPose, load_hand, shipped_hand

# palm root plus one thumb link and one other-finger link, each a sphere
# with a single sample on its surface; two revolute joints
JAW = """\
name: jaw
links:
- name: palm
  tag: palm
  primitives:
  - {type: sphere, center: [0, 0, 0], radius: 0.01}
- name: thumb
  tag: thumb
  primitives:
  - {type: sphere, center: [0, 0, 0.02], radius: 0.005}
  samples:
  - [0, 0, 0.025]
- name: finger
  tag: other_finger
  primitives:
  - {type: sphere, center: [0, 0, 0.02], radius: 0.005}
  samples:
  - [0, 0, 0.025]
joints:
- {name: j_thumb, parent: palm, child: thumb, axis: [0, 1, 0], limits: [-1, 1],
   origin: {translation: [0.02, 0, 0]}}
- {name: j_finger, parent: palm, child: finger, axis: [0, 1, 0], limits: [-1, 1],
   origin: {translation: [-0.02, 0, 0]}}
"""


@pytest.fixture(scope="session")
def jaw():
    return load_hand(JAW)


@pytest.fixture(scope="session", params=["pinch4", "quad16"])
def hand(request):
    return shipped_hand(request.param)


@pytest.fixture(scope="session")
def pinch4():
    return shipped_hand("pinch4")


@pytest.fixture(scope="session")
def quad16():
    return shipped_hand("quad16")


def random_pose(hand, rng, spread=0.0):
    """Random wrist and joints drawn from the limits widened by ``spread``."""
    q = rng.uniform(hand.theta_min - spread, hand.theta_max + spread)
    return GraspPose(RigidTransform(random_rotation(rng), rng.uniform(-0.1, 0.1, 3)), q)


# acceptance verdicts, printed once at the end of the session
VERDICTS = []


def report(name, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
    VERDICTS.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in VERDICTS:
            terminalreporter.write_line(line)
