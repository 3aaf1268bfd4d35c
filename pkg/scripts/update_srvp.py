#!/usr/bin/env python3
"""
Update the requirement verification report
==========================================

Runs the pytest suite with the JSON report plugin, maps test docstrings to
requirement IDs from ``resources/docs/srs.md`` and writes
``resources/docs/srvp_TR.md``.
"""

import argparse
import json
import os
import re
import subprocess
import sys
from datetime import datetime
from pathlib import Path

ROOT_DIR = Path(__file__).parent.parent
OUTPUT_PATH = ROOT_DIR / "resources" / "docs" / "srvp_TR.md"
REPORT_PATH = ROOT_DIR / "resources" / "docs" / "report.json"
TESTS_DIR = ROOT_DIR / "tests"
SRS_PATH = ROOT_DIR / "resources" / "docs" / "srs.md"
REQ_PATTERN = re.compile(r"REQ-(?:[A-Z]+-)+\d{3}")
TEST_PATTERN = re.compile(r'def (test_\w+)\([^)]*\):[\s\S]*?"""([\s\S]*?)"""')


def run_tests(include_slow: bool) -> bool:
    """Run pytest and write the JSON report; a failing test still produces a report."""
    args = [
        sys.executable, "-m", "pytest", "--json-report",
        f"--json-report-file={REPORT_PATH}", str(TESTS_DIR), "-q",
    ]
    if include_slow:
        args += ["-m", "slow or not slow"]
    print("Running tests...")
    result = subprocess.run(args, cwd=ROOT_DIR, capture_output=True, text=True)
    if not REPORT_PATH.exists():
        print("ERROR: pytest produced no report")
        print("stdout:", result.stdout)
        print("stderr:", result.stderr)
        return False
    print(f"pytest exited with {result.returncode}; report at {REPORT_PATH}")
    return True


def parse_test_report() -> dict[str, str]:
    with open(REPORT_PATH, encoding="utf-8") as f:
        report = json.load(f)
    return {test["nodeid"]: test["outcome"] for test in report.get("tests", [])}


def requirement_ids() -> list[str]:
    if not SRS_PATH.exists():
        return []
    seen: dict[str, None] = {}
    for req_id in REQ_PATTERN.findall(SRS_PATH.read_text(encoding="utf-8")):
        seen.setdefault(req_id, None)
    return list(seen)


def tests_by_requirement() -> dict[str, list[str]]:
    req_to_tests: dict[str, list[str]] = {}
    for test_file in sorted(TESTS_DIR.glob("test_*.py")):
        content = test_file.read_text(encoding="utf-8")
        for match in TEST_PATTERN.finditer(content):
            nodeid = f"tests/{test_file.name}::{match.group(1)}"
            for req_id in REQ_PATTERN.findall(match.group(2)):
                req_to_tests.setdefault(req_id, []).append(nodeid)
    return req_to_tests


def status_of(outcomes: list[str]) -> str:
    if not outcomes:
        return "[ ] Not Started"
    if "failed" in outcomes:
        return "[x] Failed"
    if all(o == "passed" for o in outcomes):
        return "[x] Verified"
    return "[ ] Pending"


def _git(args: list[str]) -> str | None:
    try:
        return subprocess.check_output(["git", *args], cwd=ROOT_DIR, text=True).strip()
    except (OSError, subprocess.CalledProcessError):
        return None


def release_metadata() -> tuple[str, str, str]:
    """(version, author, date) for the front matter."""
    sys.path.insert(0, str(ROOT_DIR))
    try:
        from core.version import __version__ as version
    except ImportError:
        version = "0.0.0"
    author = (
        os.environ.get("RELEASE_AUTHOR")
        or os.environ.get("GITHUB_ACTOR")
        or _git(["config", "user.name"])
        or "Unknown"
    )
    date = os.environ.get("RELEASE_DATE")
    if not date:
        iso = _git(["log", "-1", "--format=%aI"])
        date = (datetime.fromisoformat(iso).date() if iso else datetime.now().date()).isoformat()
    return version, author, date


def build_markdown_report(
    req_to_tests: dict[str, list[str]], test_outcomes: dict[str, str]
) -> str:
    all_ids = sorted(set(requirement_ids()) | set(req_to_tests))
    statuses = {
        rid: status_of([test_outcomes.get(t, "skipped") for t in req_to_tests.get(rid, [])])
        for rid in all_ids
    }
    counts = {o: sum(1 for v in test_outcomes.values() if v == o)
              for o in ("passed", "failed", "skipped")}
    verified = sum(1 for s in statuses.values() if s.endswith("Verified"))
    failed = sum(1 for s in statuses.values() if s.endswith("Failed"))
    version, author, date = release_metadata()

    lines = [
        "---",
        "docType: Software Requirements Verification Plan Report (SRVPR)",
        "docSubtitle: WakeForge wake-word engine",
        f"docVersion: {version}",
        f"docAuthor: {author}",
        f"createdDate: {date}",
        "---",
        "",
        "# Test Report - Requirement Verification",
        "",
        "## Summary",
        "",
        f"- Tests: {counts['passed']} passed, {counts['failed']} failed, "
        f"{counts['skipped']} skipped (total {len(test_outcomes)})",
        f"- Requirements: {verified} verified, {failed} failed, "
        f"{len(all_ids) - verified - failed} pending (total {len(all_ids)})",
        "",
        "## Requirements Status",
        "",
        "| Requirement | Status | Tests |",
        "| --- | --- | --- |",
    ]
    for rid in all_ids:
        lines.append(f"| {rid} | {statuses[rid]} | {', '.join(req_to_tests.get(rid, []))} |")
    lines.append("")
    return "\n".join(lines)


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.strip().splitlines()[0])
    parser.add_argument("--include-slow", action="store_true",
                        help="also run the trend experiments marked slow")
    args = parser.parse_args()

    print("=== WakeForge - requirement verification update ===")
    if not run_tests(args.include_slow):
        return 1
    report = build_markdown_report(tests_by_requirement(), parse_test_report())
    OUTPUT_PATH.write_text(report, encoding="utf-8")
    print(f"Test report written to {OUTPUT_PATH}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
