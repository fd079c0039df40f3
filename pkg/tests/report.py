"""Acceptance results shared between the test module and the terminal summary hook."""

ACCEPTANCE = {}


def record(n: int, ok: bool, name: str, detail: str) -> str:
    line = f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {name}: {detail}"
    ACCEPTANCE[n] = line
    print(line)
    return line
