import numpy as np
from hypothesis import strategies as st

from eventgraph.events import EventStream


@st.composite
def event_streams(draw, min_len=1, max_len=300, max_side=40, max_t=10**6):
    w = draw(st.integers(1, max_side))
    h = draw(st.integers(1, max_side))
    n = draw(st.integers(min_len, max_len))
    rng = np.random.default_rng(draw(st.integers(0, 2**32 - 1)))
    span = draw(st.sampled_from([0, 1, 7, 1000, max_t]))
    t = np.sort(rng.integers(0, span + 1, size=n))
    return EventStream(rng.integers(0, w, n), rng.integers(0, h, n), t, rng.choice([-1, 1], n), w, h)


@st.composite
def voxel_params(draw, max_points=64):
    from eventgraph.graph import VoxelParams

    return VoxelParams(
        draw(st.integers(1, 6)),
        draw(st.integers(1, 6)),
        draw(st.sampled_from([0.5, 1.0, 2.0, 3.0, 8.0])),
        draw(st.sampled_from([1.0, 4.0, 8.0])),
        draw(st.integers(1, max_points)),
    )
