"""Collects one pass/fail line per acceptance criterion for the terminal summary."""

from contextlib import contextmanager

RESULTS: dict[int, tuple[str, bool, str]] = {}


@contextmanager
def criterion(number: int, title: str):
    info = {"detail": ""}
    try:
        yield info
    except BaseException as exc:
        detail = info["detail"] or f"{type(exc).__name__}: {exc}".splitlines()[0]
        RESULTS[number] = (title, False, detail)
        raise
    RESULTS[number] = (title, True, info["detail"])


def lines() -> list[str]:
    return [
        f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
        for n, (title, ok, detail) in sorted(RESULTS.items())
    ]
