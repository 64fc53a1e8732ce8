from pathlib import Path

import pytest
from hypothesis import settings

from signepc.model import AccessPolicy, PublishRecord, PublishRegistry, parse_epc
from signepc.pki import generate_keypair

settings.register_profile("ci", max_examples=200, deadline=None)
settings.load_profile("ci")

ROOT = Path(__file__).resolve().parents[1]
SCENARIOS = ROOT / "scenarios"
GOLDEN = Path(__file__).resolve().parent / "golden"

EPC_X = parse_epc("urn:epc:id:sgtin:0614141.112345.400")
EPC_Y = parse_epc("urn:epc:id:sgtin:0614141.112345.401")

_acceptance_lines: list[str] = []


@pytest.fixture(scope="session")
def keypool():
    """A few independent 2048-bit pairs, generated once per session."""
    return [generate_keypair(2048) for _ in range(4)]


@pytest.fixture(scope="session")
def keypair(keypool):
    return keypool[0]


@pytest.fixture
def abc_registry():
    """X published by A@100, B@200, C@300; one user per company plus an external user."""
    reg = PublishRegistry(user_company={"ua": "A", "ub": "B", "uc": "C"})
    for company, t in (("A", 100), ("B", 200), ("C", 300)):
        reg.publish(PublishRecord(EPC_X, company, t, f"https://epcis.{company.lower()}.example/q", AccessPolicy.all()))
    return reg


@pytest.fixture
def acceptance_report():
    def record(criterion: str, passed: bool, detail: str = "") -> None:
        _acceptance_lines.append(f"[{'PASS' if passed else 'FAIL'}] {criterion}" + (f" -- {detail}" if detail else ""))

    return record


def pytest_terminal_summary(terminalreporter):
    if _acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in _acceptance_lines:
            terminalreporter.write_line(line)
