import numpy as np
from hypothesis import strategies as st

from neuclick.datamodel import Session, Slate

N_ITEMS = 20

# acceptance verdict lines, echoed in the terminal summary
VERDICTS: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(VERDICTS):
            terminalreporter.write_line(line)


@st.composite
def slates(draw, max_len=5, with_order=None):
    n = draw(st.integers(1, max_len))
    items = draw(st.lists(st.integers(0, N_ITEMS - 1), min_size=n, max_size=n, unique=True))
    clicks = draw(st.lists(st.integers(0, 1), min_size=n, max_size=n))
    order = None
    keep_order = draw(st.booleans()) if with_order is None else with_order
    if keep_order:
        order = draw(st.permutations([p for p, c in enumerate(clicks) if c]))
    return Slate.from_lists(items, clicks, order)


@st.composite
def sessions(draw, max_slates=4, max_len=5, with_order=None):
    sl = draw(st.lists(slates(max_len, with_order), min_size=1, max_size=max_slates))
    uid = draw(st.sampled_from(["u0", "u1", "u2"]))
    sid = draw(st.text("abc123", min_size=1, max_size=6))
    ts = draw(st.none() | st.integers(0, 10**12))
    return Session(uid, tuple(sl), sid, ts)


def make_session(slate_sizes, user="u0", seed=0, n_items=N_ITEMS, sid="s", with_order=True):
    rng = np.random.default_rng(seed)
    out = []
    for n in slate_sizes:
        items = rng.choice(n_items, n, replace=False).tolist()
        clicks = (rng.random(n) < 0.4).astype(int).tolist()
        order = [p for p, c in enumerate(clicks) if c] if with_order else None
        out.append(Slate.from_lists(items, clicks, order))
    return Session(user, tuple(out), sid)
