from importlib.resources import files
from pathlib import Path

import pytest
import torch

from codemix_offense.corpus import load_split
from codemix_offense.textprep import CharVocab, SubwordTokenizer

TOY = Path(str(files("codemix_offense") / "data" / "toy"))


@pytest.fixture(scope="session")
def toy_root():
    return TOY


@pytest.fixture(scope="session")
def kn_splits():
    return {s: load_split(TOY / "Kannada" / f"{s}.tsv", "kn", s) for s in ("train", "dev", "test")}


@pytest.fixture
def fixture_tokenizer():
    """'ab' -> [a, ##b]; 'cd' -> [cd]."""
    vocab = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "a", "##b", "cd", "b", "c", "d", "##a", "##c", "##d"]
    return SubwordTokenizer(vocab, style="wordpiece")


@pytest.fixture
def char_vocab():
    return CharVocab.from_texts(["abcd"])


@pytest.fixture(autouse=True)
def _seed():
    torch.manual_seed(0)


_ACCEPTANCE_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE_KEY] = []


@pytest.fixture
def acceptance(request):
    """Record one ``criterion N: PASS|FAIL`` line; lines are printed in the terminal summary."""
    lines = request.config.stash[_ACCEPTANCE_KEY]

    def record(number, ok, detail):
        lines.append((number, f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"))
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
