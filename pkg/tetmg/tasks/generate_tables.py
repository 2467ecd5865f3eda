"""Write or check the checked-in subgroup table artifact.

    python -m tetmg.tasks.generate_tables write [--out PATH]
    python -m tetmg.tasks.generate_tables check [--levels 2 3 4]
"""
import argparse
import hashlib
import sys
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import structlog

from tetmg.core.logging import StructuredLogger
from tetmg.models.subgroups import SUBGROUP_TABLE
from tetmg.services.refinement_oracle import euler_check, verify_tables

logger = structlog.get_logger()

TABLES_PATH = Path(__file__).resolve().parent.parent / "data" / "subgroup_tables.txt"
HEADER = "# tetmg frozen subgroup tables: label|width_shift|published_width|offsets"
HASH_PREFIX = "# sha256: "


def render_body() -> str:
    lines = []
    for subgroup, shape in SUBGROUP_TABLE.items():
        offsets = ";".join(",".join(str(c) for c in v) for v in shape.offsets)
        lines.append(f"{subgroup.label}|{shape.width_shift}|{shape.published_width}|{offsets}")
    return "\n".join(lines) + "\n"


def content_hash(body: str) -> str:
    return hashlib.sha256(body.encode("utf-8")).hexdigest()


def render() -> str:
    body = render_body()
    return f"{HEADER}\n{HASH_PREFIX}{content_hash(body)}\n{body}"


def write_tables(path: Path = TABLES_PATH) -> Path:
    path.write_text(render())
    logger.info("Subgroup tables written", path=str(path), rows=len(SUBGROUP_TABLE))
    return path


def _split(text: str) -> Tuple[str, str]:
    lines = text.splitlines(keepends=True)
    if len(lines) < 2 or not lines[1].startswith(HASH_PREFIX):
        return "", text
    return lines[1][len(HASH_PREFIX):].strip(), "".join(lines[2:])


def check_tables(path: Path = TABLES_PATH, levels: Sequence[int] = (2, 3, 4)) -> List[str]:
    """Problems found; empty when artifact, frozen tables and oracle agree"""
    problems = []
    try:
        recorded, body = _split(path.read_text())
    except OSError as e:
        return [f"cannot read {path}: {e}"]
    if recorded != content_hash(body):
        problems.append("artifact hash does not match its content")
    if body != render_body():
        problems.append("artifact differs from the frozen tables")
    for level in levels:
        for row in verify_tables(level):
            if not row.ok:
                problems.append(
                    f"level {level} {row.subgroup.label}: count {row.count}, expected {row.expected}"
                )
        if euler_check(level) != 1:
            problems.append(f"level {level}: Euler characteristic {euler_check(level)}")
    return problems


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = argparse.ArgumentParser(prog="python -m tetmg.tasks.generate_tables")
    sub = parser.add_subparsers(dest="action")
    write = sub.add_parser("write", help="regenerate the artifact")
    write.add_argument("--out", type=Path, default=TABLES_PATH)
    check = sub.add_parser("check", help="compare the artifact with the oracle")
    check.add_argument("--path", type=Path, default=TABLES_PATH)
    check.add_argument("--levels", type=int, nargs="+", default=[2, 3, 4])
    args = parser.parse_args(argv)
    StructuredLogger.configure_logging()

    if args.action == "check":
        problems = check_tables(args.path, args.levels)
        for problem in problems:
            logger.error("Table check failed", problem=problem)
        if not problems:
            logger.info("Subgroup tables consistent", levels=args.levels)
        return 1 if problems else 0
    write_tables(getattr(args, "out", TABLES_PATH))
    return 0


if __name__ == "__main__":
    sys.exit(main())
