import numpy as np
import pytest

from rdode import builtin
from rdode.profile1d import (assemble_weak_profile, reduced_h, shoot_stationary, solve_branch,
                             zero_branch)

GS_PARAMS = {"B": 0.1, "k": 0.02}
GS_L = 8.0


@pytest.fixture(scope="session")
def gray_scott():
    return builtin("gray_scott", GS_PARAMS)


@pytest.fixture(scope="session")
def gs_problem(gray_scott):
    return reduced_h(solve_branch(gray_scott, (0.02, 1.0), seed_u=1.0))


@pytest.fixture(scope="session")
def gs_profiles(gs_problem):
    return shoot_stationary(gs_problem, GS_L, (0.03, 0.82), N=400)


@pytest.fixture(scope="session")
def gs_profile(gs_profiles):
    return gs_profiles[0]


@pytest.fixture(scope="session")
def gm_cubic():
    return builtin("gierer_meinhardt", {"p": 2, "q": 1, "r": 3, "s": 0, "tau": 1})


@pytest.fixture(scope="session")
def gm_problem(gm_cubic):
    return reduced_h(solve_branch(gm_cubic, (0.01, 3.0), seed_u=1.0))


@pytest.fixture(scope="session")
def gm_profiles(gm_problem):
    return shoot_stationary(gm_problem, 2.35, (0.02, 1.6), N=400)


@pytest.fixture(scope="session")
def carcinogenesis():
    return builtin("carcinogenesis2")


@pytest.fixture(scope="session")
def weak_profile(carcinogenesis):
    z = zero_branch(carcinogenesis, (0.3, 6.0))
    pos = solve_branch(carcinogenesis, (0.3, 6.0), seed_u=1.0, label="positive")
    return assemble_weak_profile([z, pos], [5.0], carcinogenesis, 10.0, 200, v_guess=3.7)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
