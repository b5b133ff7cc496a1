"""Pass/fail lines collected by the acceptance tests, printed at session end."""
import sys

LINES: list[str] = []


def record(number: int, passed: bool, detail: str) -> None:
    line = f"ACCEPTANCE {number}: {'PASS' if passed else 'FAIL'} | {detail}"
    LINES.append(line)
    print(line, file=sys.__stderr__, flush=True)
