import pytest

from vcrl.authority import RevocationAuthority
from vcrl.crypto import Scheme, SigningKey


@pytest.fixture
def mock_signer():
    return SigningKey(Scheme.MOCK, bytes(range(32)))


@pytest.fixture(scope="session")
def ecdsa_signer():
    return SigningKey(Scheme.ECDSA_P256, b"\x42" * 32)


@pytest.fixture
def authority(mock_signer):
    """Ten-minute CRL windows over one-minute pseudonyms and ten-minute batches."""
    return RevocationAuthority(mock_signer, tau_p=60, gamma=600, gamma_crl=600, fp_rate=1e-20, seed=7)


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture
def criterion():
    def report(number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES[number] = line
        print(line)
        return ok
    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
