import support


def pytest_terminal_summary(terminalreporter):
    if not support.ACCEPTANCE_RAN:
        return
    terminalreporter.section("acceptance criteria")
    for num, title in support.CRITERIA.items():
        res = support.ACCEPTANCE.get(num)
        if res is None:
            terminalreporter.write_line(f"[{num}] NOT RUN  {title}")
        else:
            passed, detail = res
            terminalreporter.write_line(f"[{num}] {'PASS' if passed else 'FAIL'}  {title}: {detail}")
