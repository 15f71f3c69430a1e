"""Configure Django before the test modules are collected."""
import os

import django

os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'randinf.settings')
django.setup()


def pytest_pycollect_makeitem(collector, name, obj):
    """Skip library functions named test_* that a test module imports."""
    module = getattr(collector, 'module', None)
    if callable(obj) and not isinstance(obj, type) and module is not None \
            and getattr(obj, '__module__', module.__name__) != module.__name__:
        return []
    return None
