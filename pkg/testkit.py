"""
Small helpers shared by the test_*.py scripts. Every test module can be run
directly (python test_hsio.py) or collected by pytest.
"""

import sys
import time


def raises(exc_type, fn, *args, **kwargs):
    """Call fn and return the exception it raised; fail if it raised nothing or something else"""
    try:
        fn(*args, **kwargs)
    except exc_type as e:
        return e
    raise AssertionError(f'{getattr(fn, "__name__", fn)} did not raise {exc_type.__name__}')


def run_tests(namespace: dict, title: str) -> None:
    tests = [(name, fn) for name, fn in sorted(namespace.items())
             if name.startswith('test_') and callable(fn)]
    print(f"🧪 TESTING {title}")
    print("=" * 70)
    failures = 0
    for name, fn in tests:
        started = time.perf_counter()
        try:
            fn()
            print(f"✅ {name} ({time.perf_counter() - started:.2f}s)")
        except Exception as e:
            failures += 1
            print(f"❌ {name}: {e!r}")
    print("=" * 70)
    print(f"{len(tests) - failures}/{len(tests)} passed")
    sys.exit(1 if failures else 0)
