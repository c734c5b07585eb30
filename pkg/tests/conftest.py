from hypothesis import settings

settings.register_profile("default", deadline=None)
settings.load_profile("default")


def pytest_terminal_summary(terminalreporter):
    """One line per acceptance criterion, taken from the properties each test records."""
    lines = {}
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            props = dict(getattr(rep, "user_properties", []))
            if "criterion" not in props or (rep.when != "call" and outcome == "passed"):
                continue
            verdict = "PASS" if outcome == "passed" else "FAIL"
            lines[props["criterion"]] = f"criterion {props['criterion']:>2}: {verdict}  {props.get('detail', '')}"
    if lines:
        terminalreporter.section("acceptance criteria")
        for k in sorted(lines):
            terminalreporter.write_line(lines[k])
