from __future__ import annotations

import math

import numpy as np
import pytest

import grazedyn as gd


@pytest.fixture(scope="session")
def spiral():
    return gd.builtin_system("spiral-impact")


@pytest.fixture(scope="session")
def nonaxial():
    return gd.builtin_system("nonaxial-circle")


@pytest.fixture(scope="session")
def impact_family():
    return gd.builtin_system("impact-cycle")


@pytest.fixture(scope="session")
def perturbed_family():
    return gd.builtin_system("perturbed-impact")


@pytest.fixture(scope="session")
def spiral_cycle(spiral):
    meta = spiral.metadata["cycle"]
    traj = gd.simulate(spiral, np.asarray(meta["start"]), 0.0, meta["period"])
    return traj, meta


@pytest.fixture(scope="session")
def nonaxial_cycle(nonaxial):
    meta = nonaxial.metadata["cycle"]
    traj = gd.simulate(nonaxial, np.asarray(meta["start"]), 0.0, meta["period"])
    return traj, meta


@pytest.fixture(scope="session")
def impact_cycle(impact_family):
    base = impact_family.base
    meta = base.metadata["cycle"]
    traj = gd.simulate(base, np.asarray(meta["start"]), 0.0, meta["period"])
    return traj, meta


@pytest.fixture(scope="session")
def spiral_branches(spiral, spiral_cycle):
    traj, meta = spiral_cycle
    return gd.assemble_branches(spiral, traj, meta["period"])


@pytest.fixture(scope="session")
def nonaxial_branches(nonaxial, nonaxial_cycle):
    traj, meta = nonaxial_cycle
    return gd.assemble_branches(nonaxial, traj, meta["period"])


@pytest.fixture(scope="session")
def impact_branches(impact_family, impact_cycle):
    traj, meta = impact_cycle
    return gd.assemble_branches(impact_family.base, traj, meta["period"])
