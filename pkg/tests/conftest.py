import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from plancad import annotator, ingest, screening, synthgen


@pytest.fixture(scope="session")
def table():
    return screening.bundled_table()


@pytest.fixture(scope="session")
def catalog(table):
    return table.catalog


@pytest.fixture()
def small_annotated(table):
    doc, gt = synthgen.generate_drawing(synthgen.GenSpec(seed=7))
    flat = ingest.flatten_blocks(doc)
    return annotator.annotate(flat, table), gt
