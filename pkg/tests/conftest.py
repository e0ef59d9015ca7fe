import re
import socket

import numpy as np
import pytest

from smart_testing.dataset import Dataset, make_categorical, make_numeric
from smart_testing.model import Predictions


class NetworkBlocked(RuntimeError):
    pass


@pytest.fixture(autouse=True)
def no_network(monkeypatch):
    """Fail any attempt to open a socket; counts attempts for assertions."""
    attempts = []

    def guard(self, address, *args, **kwargs):
        attempts.append(address)
        raise NetworkBlocked(f"network access attempted: {address!r}")

    monkeypatch.setattr(socket.socket, "connect", guard)
    monkeypatch.setattr(socket.socket, "connect_ex", guard)
    monkeypatch.setattr(socket, "create_connection", lambda address, *a, **k: guard(None, address))
    return attempts


@pytest.fixture
def toy():
    """Six rows with a numeric, a categorical and a binary target column."""
    return Dataset(
        "toy",
        (
            make_numeric("age", [70, 72, 90, 30, 45, 72]),
            make_categorical("group", ["A", "B", "A", "C", "B", "A"]),
            make_numeric("y", [1, 0, 1, 0, 1, 1]),
        ),
        "y",
    )


def planted_data(n=2000, seed=0, slice_acc=0.5, rest_acc=0.95, stratified=False):
    """Ages 18..90; correctness drops for age >= 72.

    With ``stratified`` each age value gets exactly round(rate * count) correct rows,
    placed at random; otherwise correctness is an independent Bernoulli draw per row.
    """
    rng = np.random.default_rng(seed)
    age = rng.integers(18, 91, n)
    y = rng.integers(0, 2, n)
    acc = np.where(age >= 72, slice_acc, rest_acc)
    if stratified:
        correct = np.zeros(n, dtype=bool)
        for a in np.unique(age):
            rows = np.flatnonzero(age == a)
            k = int(round(acc[rows[0]] * len(rows)))
            correct[rng.choice(rows, size=k, replace=False)] = True
    else:
        correct = rng.random(n) < acc
    preds = np.where(correct, y, 1 - y)
    ds = Dataset("planted", (make_numeric("age", age), make_numeric("y", y)), "y")
    return ds, Predictions(preds.astype(np.int8), "external_column"), correct.astype(int)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line for an acceptance criterion; FAIL if the test dies first."""
    state = {}

    def record(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        state["number"] = number
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    record.state = state
    yield record


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call" and rep.failed and "criterion" in item.funcargs:
        rec = item.funcargs["criterion"]
        if "number" not in rec.state:
            match = re.search(r"criterion_(\d+)", item.name)
            number = match.group(1) if match else "?"
            ACCEPTANCE_LINES.append(f"criterion {number}: FAIL  raised before completion")


def _criterion_number(line):
    token = line.split()[1].rstrip(":")
    return int(token) if token.isdigit() else 99


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=_criterion_number):
            terminalreporter.write_line(line)
