import pytest

from phishsim.sanitizer import sanitize_html
from phishsim.synthetic import kit_corpus

ACCEPTANCE: list[tuple[str, bool, str]] = []


@pytest.fixture(scope="session")
def small_kit():
    """4 kits x 6 variants over 3 weeks plus 20 legitimate pages, sanitized."""
    corpus = kit_corpus(11, n_templates=4, n_variants=6, n_legit=20, weeks=3)
    return corpus, [sanitize_html(d) for d in corpus.docs]


@pytest.fixture
def record_acceptance():
    def record(name: str, ok: bool, detail: str = ""):
        ACCEPTANCE.append((name, ok, detail))
        print(f"ACCEPTANCE {'PASS' if ok else 'FAIL'} {name}: {detail}")
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")
