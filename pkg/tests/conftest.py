import numpy as np
import pandas as pd
import pytest

from gapdecomp.dataio import Block, Covariate, DesignMatrix, ModelSpec, from_frame
from gapdecomp.synth import DgpSpec, GroupDgp


def make_dm(X, y, w=None, names=None):
    X = np.asarray(X, dtype=float)
    n, p = X.shape
    names = tuple(names or ["(intercept)"] + [f"x{j}" for j in range(1, p)])
    blocks = tuple(Block(names[j], j, j + 1, "numeric") for j in range(1, p))
    w = np.ones(n) if w is None else np.asarray(w, dtype=float)
    return DesignMatrix(X, np.asarray(y, dtype=float), w, names, blocks)


def random_instance(rng, n=None, p=None):
    n = n or int(rng.integers(10, 51))
    p = p or int(rng.integers(2, 7))
    X = np.column_stack([np.ones(n), rng.normal(size=(n, p - 1))])
    beta = rng.normal(scale=0.7, size=p)
    y = (rng.random(n) < 0.5).astype(float)
    if y.min() == y.max():
        y[0] = 1 - y[0]
    w = rng.uniform(0.5, 2.0, size=n)
    return make_dm(X, y, w), beta


@pytest.fixture
def toy_spec():
    return ModelSpec(("y",), (Covariate("x"), Covariate("c", "categorical", "A")), "grp", "a", ("d",), "w")


@pytest.fixture
def toy_frame():
    return pd.DataFrame({
        "y": [1, 0, 1, 0, 1, 0],
        "grp": ["a", "a", "a", "d", "d", "d"],
        "x": [0.5, 1.5, 2.0, -1.0, 0.0, 1.0],
        "c": ["A", "B", "C", "A", "B", "A"],
        "w": [1.0, 2.0, 1.0, 1.0, 3.0, 1.0],
    })


@pytest.fixture
def toy_dataset(toy_frame, toy_spec):
    return from_frame(toy_frame, toy_spec)


def two_group_dgp(n_a=300, n_d=300, seed=0, shift=1.0, **kw):
    return DgpSpec(
        groups={
            "A": GroupDgp(n_a, {"x1": {"mean": shift, "sd": 1}, "x2": {"p": 0.5}}, {"c": {"u": 0.3, "v": 0.7}}),
            "D": GroupDgp(n_d, {"x1": {"mean": 0, "sd": 1}, "x2": {"p": 0.3}}, {"c": {"u": 0.6, "v": 0.4}}),
        },
        beta={"(intercept)": -0.5, "x1": 0.8, "x2": 0.4, "c=v": 0.5},
        seed=seed, **kw)


_verdicts = []


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        detail = dict(report.user_properties).get("detail", "")
        status = "PASS" if report.passed else "FAIL"
        _verdicts.append(f"{status}  {report.nodeid.split('::')[-1]}  {detail}".rstrip())


def pytest_terminal_summary(terminalreporter):
    if _verdicts:
        terminalreporter.section("acceptance criteria")
        for line in _verdicts:
            terminalreporter.write_line(line)
