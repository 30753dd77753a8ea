from pathlib import Path

import pytest

from secdecomp.model import load_policy, load_schema

DATA = Path(__file__).resolve().parent.parent / "data"


def load(name):
    return (DATA / name).read_text(encoding="utf-8")


@pytest.fixture(scope="session")
def data_dir():
    return DATA


@pytest.fixture(scope="session")
def retail():
    schema = load_schema(load("retail_schema.json"))
    return schema, load_policy(load("retail_policy.json"), schema)


@pytest.fixture(scope="session")
def student():
    schema = load_schema(load("student_schema.json"))
    return schema, load_policy(load("student_policy.json"), schema)


@pytest.fixture(scope="session")
def faulty_student():
    return load_schema(load("faulty_student.json"))


@pytest.fixture(scope="session")
def correct_student():
    return load_schema(load("correct_student.json"))


def pytest_terminal_summary(terminalreporter):
    module = __import__("sys").modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        ok, text = results[n]
        terminalreporter.write_line(f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {text}")
