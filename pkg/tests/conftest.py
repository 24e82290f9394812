import numpy as np
import pytest

import seethrough as st


@pytest.fixture(scope="session")
def two_plane():
    spec = st.two_plane_scene()
    frame, gt = st.render(spec)
    return spec, frame, gt, spec.rig()


@pytest.fixture(scope="session")
def occluder():
    spec = st.occluder_scene()
    frame, gt = st.render(spec)
    return spec, frame, gt, spec.rig()


@pytest.fixture(scope="session")
def two_plane_surface(two_plane):
    spec, frame, gt, rig = two_plane
    support = st.collect_support(frame, rig, st.PriorParams(), threshold=0.7)
    tri = st.triangulate(support, spec.width, spec.height)
    return support, tri


@pytest.fixture(scope="session")
def occluder_surface(occluder):
    spec, frame, gt, rig = occluder
    support = st.collect_support(frame, rig, st.PriorParams(), threshold=0.7)
    tri = st.triangulate(support, spec.width, spec.height)
    return support, tri
