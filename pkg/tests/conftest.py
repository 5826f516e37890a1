import numpy as np
import pytest

from qplab.systems import builtin_scenario


@pytest.fixture(scope="session")
def ou():
    return builtin_scenario("ou")


@pytest.fixture(scope="session")
def hopf():
    return builtin_scenario("hopf")


@pytest.fixture(scope="session")
def double_well():
    return builtin_scenario("gradient-double-well")


@pytest.fixture(scope="session")
def maier_stein():
    return builtin_scenario("maier-stein")


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240817)


# -- heavy shared artifacts: frames, Q forms, unstable-manifold charts ------
# (session-scoped: chart construction shoots thousands of fiber trajectories)


@pytest.fixture(scope="session")
def hopf_frames(hopf):
    from qplab.linearization import floquet_splitting
    system, cyc = hopf
    return floquet_splitting(system, cyc)


@pytest.fixture(scope="session")
def hopf_qforms(hopf, hopf_frames):
    from qplab.manifold import compute_Q
    system, cyc = hopf
    return [compute_Q(system, f, cyc) for f in hopf_frames]


@pytest.fixture(scope="session")
def hopf_chart(hopf, hopf_frames, hopf_qforms):
    from qplab.manifold import ChartGridSpec, extend_chart
    system, cyc = hopf
    return extend_chart(system, cyc, hopf_frames, hopf_qforms, radius=0.5,
                        grid=ChartGridSpec(n_phase=64, n_offset=21))


@pytest.fixture(scope="session")
def ou_chart(ou):
    from qplab.linearization import floquet_splitting
    from qplab.manifold import ChartGridSpec, compute_Q, extend_chart
    system, attr = ou
    frames = floquet_splitting(system, attr)
    qf = compute_Q(system, frames[0])
    return extend_chart(system, attr, frames, [qf], radius=0.5,
                        grid=ChartGridSpec(n_offset=21))


@pytest.fixture(scope="session")
def hopf_graph_field(hopf, hopf_chart):
    from qplab.quasipotential import FieldGrid, field_from_chart
    system, _ = hopf
    grid = FieldGrid(((-1.45, 1.45), (-1.45, 1.45)), (160, 160))
    return field_from_chart(system, hopf_chart, grid)


@pytest.fixture(scope="session")
def dw_chart(double_well):
    from qplab.linearization import floquet_splitting
    from qplab.manifold import ChartGridSpec, compute_Q, extend_chart
    system, attr = double_well
    frames = floquet_splitting(system, attr)
    qf = compute_Q(system, frames[0])
    return extend_chart(system, attr, frames, [qf], radius=0.45,
                        grid=ChartGridSpec(n_offset=15))
