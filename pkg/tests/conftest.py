import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from synth import build_synth_corpus  # noqa: E402

from leakprobe.corpus import EmailRecord
from leakprobe.pii import Gazetteer


@pytest.fixture
def small_corpus():
    return build_synth_corpus(n_records=6, n_pii=14, seed="fix")


@pytest.fixture
def small_records(small_corpus):
    return records_from(small_corpus)


@pytest.fixture
def small_gazetteer(small_corpus):
    return Gazetteer.from_dict(small_corpus.gazetteer)


def records_from(corpus):
    return [
        EmailRecord.from_text(
            id=f"m{i}",
            folder=corpus.folders[i],
            subject=corpus.subjects[i],
            body=corpus.bodies[i],
        )
        for i in range(len(corpus))
    ]
