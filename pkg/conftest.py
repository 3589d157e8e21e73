import os

import pytest


def pytest_collection_modifyitems(config, items):
    # Mirrors oc4seq_project.test_runner.OC4SeqTestRunner: tests tagged
    # ``acceptance`` train models for minutes and run only with OC4SEQ_ACCEPTANCE=1.
    if os.environ.get('OC4SEQ_ACCEPTANCE') == '1':
        return
    skip = pytest.mark.skip(reason='acceptance test; set OC4SEQ_ACCEPTANCE=1')
    for item in items:
        cls = getattr(item, 'cls', None)
        if cls is not None and 'acceptance' in getattr(cls, 'tags', set()):
            item.add_marker(skip)
