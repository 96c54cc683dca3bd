"""Per-criterion verdicts collected by the acceptance suite.

A criterion checked by several tests passes only if all its parts pass.
"""

LINES: dict[int, tuple[bool, list[str]]] = {}


def record(number: int, ok: bool, detail: str) -> None:
    prev_ok, parts = LINES.get(number, (True, []))
    LINES[number] = (prev_ok and ok, parts + [detail])
    print(f"criterion {number}: {'PASS' if ok else 'FAIL'} {detail}")


def summary() -> list[str]:
    return [f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  " + "; ".join(parts)
            for n, (ok, parts) in sorted(LINES.items())]
