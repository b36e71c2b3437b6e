import numpy as np
import pytest

from morphgnn import morphology
from morphgnn.fixtures import a1_like_text


@pytest.fixture(scope="session")
def robot():
    return morphology.parse_urdf(a1_like_text())


@pytest.fixture(scope="session")
def quad_graph(robot):
    return morphology.build_graph(robot)


SERIAL_ARM_URDF = """
<robot name="arm2">
  <link name="base"><inertial><mass value="1.0"/>
    <inertia ixx="0.01" iyy="0.01" izz="0.01"/></inertial></link>
  <link name="upper"><inertial><origin xyz="0.25 0 0"/><mass value="1.3"/>
    <inertia ixx="0.001" iyy="0.001" izz="0.001"/></inertial></link>
  <link name="lower"><inertial><origin xyz="0.2 0 0"/><mass value="0.7"/>
    <inertia ixx="0.001" iyy="0.001" izz="0.001"/></inertial></link>
  <link name="tip"/>
  <joint name="shoulder" type="revolute">
    <parent link="base"/><child link="upper"/>
    <origin xyz="0 0 0.1"/><axis xyz="0 1 0"/>
  </joint>
  <joint name="elbow" type="revolute">
    <parent link="upper"/><child link="lower"/>
    <origin xyz="0.5 0 0"/><axis xyz="0 1 0"/>
  </joint>
  <joint name="tip_mount" type="fixed">
    <parent link="lower"/><child link="tip"/>
    <origin xyz="0.4 0 0"/>
  </joint>
</robot>
"""


@pytest.fixture(scope="session")
def serial_arm():
    return morphology.parse_urdf(SERIAL_ARM_URDF)


def finite_diff_grad(f, tensor, h=1e-5):
    """Central-difference gradient of scalar-valued f wrt one tensor's data."""
    g = np.zeros_like(tensor.data)
    flat = tensor.data.ravel()
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        g.ravel()[i] = (fp - fm) / (2.0 * h)
    return g


def rel_err(a, b):
    denom = max(np.abs(a).max(), np.abs(b).max(), 1e-12)
    return np.abs(a - b).max() / denom
