#!/usr/bin/env python3
"""Regenerates the fixture files in this directory.

Run from anywhere: python3 generate.py. Output is deterministic.
"""

import json
import os
import random

HERE = os.path.dirname(os.path.abspath(__file__))

RANK = {
    "not_extracted": 1,
    "not_executable": 2,
    "executable_invalid": 3,
    "valid": 4,
    "relevance_undetermined": 5,
    "relevant": 6,
}

DETAILS = {
    "not_extracted": "no code found in model output",
    "not_executable": "compilation failed: cannot find symbol",
    "executable_invalid": "",
    "valid": "fails on fixed version",
    "relevance_undetermined": "fixed version unavailable",
    "relevant": "",
}


def path(*parts):
    p = os.path.join(HERE, *parts)
    os.makedirs(os.path.dirname(p), exist_ok=True)
    return p


def write_jsonl(rel, rows):
    with open(path(*rel.split("/")), "w") as f:
        for r in rows:
            f.write(json.dumps(r, ensure_ascii=False) + "\n")


def sanitize(bug_id):
    return "".join(c for c in bug_id if c.isalnum() or c == "_")


def test_id(bug_id, attempt):
    return f"GenTest_{sanitize(bug_id)}_a{attempt}"


def ladder(i, e, v, r, top="relevant"):
    if i < r:
        return top
    if i < v:
        return "valid" if top == "relevant" else top
    if i < e:
        return "executable_invalid"
    return "not_executable"


def attempts_for(rng, single, best, n=5):
    """Stages for attempts 1..n: attempt 1 is `single`, the best is `best`."""
    assert RANK[single] <= RANK[best]
    stages = [single]
    carrier = rng.randrange(2, n + 1) if RANK[best] > RANK[single] else None
    fillers = [s for s in ("not_extracted", "not_executable", "executable_invalid", "valid")
               if RANK[s] <= RANK[best] and s != best]
    for a in range(2, n + 1):
        if a == carrier:
            stages.append(best)
        else:
            stages.append(rng.choice(fillers) if fillers else best)
    return stages


def verdict(bug, backend, attempt, stage):
    return {"bug_id": bug, "backend_id": backend, "attempt": attempt, "stage": stage,
            "detail": DETAILS[stage]}


def best_attempt(stages):
    top = max(RANK[s] for s in stages)
    return next(a for a, s in enumerate(stages, 1) if RANK[s] == top)


# executability / validity / relevance per project: attempt 1, then best of 5
CHATGPT_LADDERS = {
    "Chart": (6, (0, 0, 0), (2, 1, 1)),
    "Cli": (30, (11, 7, 3), (16, 11, 5)),
    "Closure": (127, (8, 4, 4), (58, 35, 4)),
    "Lang": (60, (15, 10, 10), (36, 26, 16)),
    "Math": (100, (13, 3, 3), (43, 15, 6)),
    "Time": (19, (6, 1, 0), (16, 13, 0)),
}


def chatgpt_runs():
    rng = random.Random(2)
    rows, stages_of = [], {}
    for project, (n, s, m) in CHATGPT_LADDERS.items():
        for i in range(n):
            bug = f"{project}-{i + 1}"
            single = ladder(i, *s)
            best = ladder(i, *m)
            stages = attempts_for(rng, single, best)
            stages_of[bug] = stages
            rows += [verdict(bug, "chatgpt", a, st) for a, st in enumerate(stages, 1)]
    write_jsonl("chatgpt_runs/verdicts.jsonl", rows)
    return stages_of


def codegpt_runs(bug_order):
    rng = random.Random(3)
    rows = []
    for i, bug in enumerate(bug_order[:185]):
        single = ladder(i, 45, 27, 9)
        best = ladder(i, 63, 32, 11)
        stages = attempts_for(rng, single, best)
        rows += [verdict(bug, "codegpt", a, st) for a, st in enumerate(stages, 1)]
    write_jsonl("codegpt_runs/codegpt_verdicts.jsonl", rows)


# new bugs: count, executable, valid (relevance cannot be checked without a fix)
NEW_REPORTS = {
    "Cli": (3, 0, 0, 320),
    "Lang": (12, 8, 4, 1680),
    "Math": (5, 2, 0, 1640),
    "JacksonDatabind": (5, 4, 4, 3700),
    "Jsoup": (13, 7, 0, 1870),
}


def new_reports():
    rng = random.Random(5)
    reports, rows = [], []
    for project, (n, e, v, base) in NEW_REPORTS.items():
        for i in range(n):
            bug = f"{project}-{base + i}"
            month = 10 + i % 3
            reports.append({
                "id": bug,
                "project": project,
                "title": f"{project} issue {base + i}: unexpected result",
                "body": f"Calling the public API with input {i} gives a wrong value. Expected a different output.",
                "created_at": f"2022-{month:02d}-{1 + i:02d}",
                "source_url": f"https://issues.example.org/{project.lower()}/{base + i}",
            })
            best = ladder(i, e, v, v, top="relevance_undetermined")
            single = rng.choice([s for s in ("not_extracted", "not_executable", best) if RANK[s] <= RANK[best]])
            stages = attempts_for(rng, single, best)
            rows += [verdict(bug, "chatgpt", a, st) for a, st in enumerate(stages, 1)]
    write_jsonl("new_reports/reports.jsonl", reports)
    write_jsonl("new_reports/verdicts.jsonl", rows)


# bugs, top-1 and top-5 hits with ground-truth tests, then with generated tests
LOCALIZATION = {
    "Closure": (35, (4, 7), (5, 10)),
    "Lang": (25, (10, 18), (11, 16)),
    "Math": (15, (6, 13), (7, 14)),
    "Time": (13, (2, 4), (1, 4)),
}

N_ELEMENTS = 10


def spectrum(project, bug, rank, rng):
    # element j (1-based) is covered by the failing test and j-1 passing
    # tests, so its Ochiai score 1/sqrt(j) puts it at rank j
    names = [f"org.{project.lower()}.Unit{bug}#{40 + 7 * j}" for j in range(1, N_ELEMENTS + 1)]
    order = list(range(N_ELEMENTS))
    lines = ["elements: " + ",".join(names)]
    lines.append("test_fail," + "F," + "1" * N_ELEMENTS)
    for k in range(1, N_ELEMENTS):
        bits = "".join("1" if j > k else "0" for j in range(1, N_ELEMENTS + 1))
        lines.append(f"test_pass_{k},P,{bits}")
    lines.append("buggy: " + names[order[rank - 1]])
    return "\n".join(lines) + "\n"


def spectra():
    rng = random.Random(6)
    for label, idx in (("ground_truth", 1), ("generated", 2)):
        for project, spec in LOCALIZATION.items():
            n, (top1, top5) = spec[0], spec[idx]
            for i in range(n):
                rank = 1 if i < top1 else 3 if i < top5 else 8
                bug = f"{project}-{i + 1}"
                with open(path("spectra", label, f"{bug}.spectrum"), "w") as f:
                    f.write(spectrum(project, i + 1, rank, rng))


# correct, plausible, validated correct, validated plausible
PATCH_COUNTS = {
    "Closure": (17, 9, 6, 0),
    "Lang": (13, 5, 6, 4),
    "Math": (22, 12, 1, 2),
    "Time": (3, 3, 0, 2),
}

TEST_BODY = """@Test
public void testReportedBehaviour() {{
    {cls} subject = new {cls}();
    assertEquals("expected", subject.apply("{bug}"));
}}"""


def patches(stages_of):
    records, gens, scripts = [], [], []
    for project, (c, p, cv, pv) in PATCH_COUNTS.items():
        n, _, (_, v, _) = CHATGPT_LADDERS[project]
        valid = [f"{project}-{i + 1}" for i in range(v)]
        invalid = [f"{project}-{i + 1}" for i in range(v, n)]
        plan = []
        plan += [("correct", True)] * cv + [("plausible", True)] * pv
        rej_c = min((c - cv) // 2, len(valid) - len(plan))
        plan += [("correct", False)] * rej_c
        rej_p = min((p - pv) // 2, len(valid) - len(plan))
        plan += [("plausible", False)] * rej_p
        none = [("correct", None)] * (c - cv - rej_c) + [("plausible", None)] * (p - pv - rej_p)
        for (label, outcome), bug in zip(plan, valid):
            pid = f"tbar-{bug}"
            records.append({"bug_id": bug, "patch_id": pid, "label": label})
            attempt = best_attempt(stages_of[bug])
            code = TEST_BODY.format(cls=project + "Util", bug=bug)
            gens.append({
                "bug_id": bug, "attempt": attempt, "backend_id": "chatgpt",
                "raw_output": f"Here is a test case:\n```java\n{code}\n```\n",
                "extracted_code": code,
                "created_at": "2023-04-02T10:00:00Z",
            })
            scripts.append({"test_id": test_id(bug, attempt), "buggy": "fail", "fixed": "pass",
                            "patched": {pid: "pass" if outcome else "fail"}})
        for (label, _), bug in zip(none, invalid):
            records.append({"bug_id": bug, "patch_id": f"tbar-{bug}", "label": label})
    write_jsonl("patches/records.jsonl", records)
    write_jsonl("patches/generations.jsonl", gens)
    write_jsonl("patches/script.jsonl", scripts)
    with open(path("patches", "config.toml"), "w") as f:
        f.write('[harness]\nwork_root = "work"\n\n')
        for project in PATCH_COUNTS:
            f.write(f'[adapters.{project}]\nkind = "simulated"\nscript = "script.jsonl"\n\n')


QUALITY_SIZES = {
    "not_executable": [565, 1465, 1686, 622, 2171, 713, 1238, 1644, 1436, 2230, 985, 984, 331, 1541, 2346,
                       1857, 2182, 1518, 1846, 1051, 1746, 1915, 757, 1673, 1980, 882, 2268, 221, 2113, 1015,
                       878, 1220, 1069, 370, 1589, 2043, 1757, 190, 1603, 1352, 1555, 2186, 2327, 258, 2212,
                       2211, 2465, 411, 590, 1978],
    "executable_invalid": [2025, 2309, 2126, 1624, 2420, 1273, 2015, 1646, 1157, 2175, 1856, 641, 444, 659,
                           225, 833, 1783, 2410, 1351, 215, 2323, 517, 1774, 2370, 531],
    "valid": [683, 1525, 429, 986, 2372, 1591, 196, 185, 1099, 1021, 1167, 1344, 847, 1131, 2350],
    "relevant": [1957, 2935, 2929, 1923, 1356, 689, 1841, 650, 689, 2620],
}
QUALITY_CODE = {"not_executable": 30, "executable_invalid": 16, "valid": 8, "relevant": 9}

PROSE = ("The parser returns the wrong value when the option is repeated. "
         "I expected the second call to override the first one but it keeps the old value. "
         "This worked in the previous release and broke after the upgrade. "
         "Steps are simple, create the object, call the method twice and compare the result. "
         "Please let me know if more details are needed, happy to help with a fix. ")

SNIPPET = "```java\nWidget w = new Widget(\"a\");\nw.configure(null);\nassertEquals(1, w.count());\n```\n"


def prose(n, offset):
    text = (PROSE * (n // len(PROSE) + 2))[offset:offset + n]
    # wrap at roughly 72 columns on spaces
    out, line = [], 0
    for ch in text:
        if ch == " " and line > 72:
            out.append("\n")
            line = 0
        else:
            out.append(ch)
            line += 1
    return "".join(out)


def quality():
    reports, rows = [], []
    k = 0
    for stage, sizes in QUALITY_SIZES.items():
        for j, size in enumerate(sizes):
            k += 1
            bug = f"Lang-{k}" if k % 2 else f"Math-{k}"
            title = f"Unexpected result in component {k}"
            code = j < QUALITY_CODE[stage]
            room = size - len(title) - 1
            head = SNIPPET if code else ""
            body = head + prose(room - len(head), (k * 37) % len(PROSE))
            body = body.rstrip(" ")
            body += "." * (room - len(body))
            assert len(title) + 1 + len(body) == size, (bug, size)
            reports.append({"id": bug, "project": bug.split("-")[0], "title": title, "body": body,
                            "created_at": "2019-05-01"})
            rows.append(verdict(bug, "chatgpt", 1, stage))
    write_jsonl("quality/reports.jsonl", reports)
    write_jsonl("quality/verdicts.jsonl", rows)


POSIX_TEST_METHOD = """public void testPosixParserStopAtNonOption() throws ParseException {
    String[] args = {"-azb"};
    Options options = new Options();
    options.addOption("a", false, "Option A");
    options.addOption("b", false, "Option B");
    CommandLineParser parser = new PosixParser();
    CommandLine cmd = parser.parse(options, args, true);

    assertTrue(cmd.hasOption("a"));
    assertTrue(cmd.getOptionValue("a").isEmpty());
    assertTrue(cmd.getArgs()[0].equals("zb"));
    assertFalse(cmd.hasOption("b"));
}"""

JSOUP_TEST_CLASS = """import java.io.IOException;
import java.net.HttpURLConnection;
import java.net.URL;
import java.net.URLEncoder;
import java.nio.charset.StandardCharsets;
import org.junit.Test;
import static org.junit.Assert.assertEquals;

@Test
public void testUrlEncoding() throws IOException {
    String originalUrl = "https://example.org/CelebrityCars[DE]/car-1200-627.jpg";

    // Encode the URL manually before fetching
    String encodedUrl = URLEncoder.encode(originalUrl, StandardCharsets.UTF_8.toString());

    URL url = new URL(encodedUrl);
    HttpURLConnection connection = (HttpURLConnection) url.openConnection();

    // Set the request method if necessary (GET is the default)
    connection.setRequestMethod("GET");

    // Get the response status code
    int statusCode = connection.getResponseCode();

    // Check if the response status code is successful (2xx)
    assertEquals(true, statusCode >= 200 && statusCode < 300);
}"""

INTROS = ["Here is a test case for the bug report:", "Sure! The following JUnit test reproduces the issue.",
          "Below is a possible test.", "You can use this test case:", "Test case:"]
OUTROS = ["", "This test fails on the current version.", "Let me know if you need anything else.",
          "The assertion checks the expected behaviour described in the report."]
PROSE_ONLY = [
    "I am sorry, but I need more information about the project to write a test case.",
    "Could you share the stack trace and the version of the library you are using?",
    "The bug report does not describe the expected behaviour.\nPlease clarify what the method should return.",
    "To reproduce this issue you would call the parser twice and compare the results.\nThe second call should override the first.",
    "As an AI language model I cannot run the code, but the problem seems to be in the option handling.",
    "Unfortunately the report is too vague.\n\nI would start by checking the encoding of the URL.",
    "This looks like a configuration problem rather than a bug.",
    "The issue is caused by integer overflow in the date computation, a test would need the exact input.",
]


def method(name, i):
    return (f"@Test\npublic void {name}() {{\n    Parser p = new Parser();\n"
            f"    String out = p.parse(\"input-{i}\");\n    assertEquals(\"expected-{i}\", out);\n}}")


def klass(name, i):
    return (f"import org.junit.Test;\nimport static org.junit.Assert.*;\n\npublic class {name} {{\n\n"
            f"    private String helper() {{\n        return \"value-{i}\";\n    }}\n\n"
            f"    @Test\n    public void testHelper{i}() {{\n        assertEquals(\"value-{i}\", helper());\n    }}\n}}")


def extraction():
    rng = random.Random(9)
    cases = []

    def add(shape, raw, expect):
        cases.append({"name": f"{shape}_{len(cases) + 1:02d}", "shape": shape, "raw": raw,
                      "expect_code": expect})

    for i in range(10):
        body = method(f"testIssue{i}", i) if i % 2 else klass(f"IssueTest{i}", i)
        add("fenced_java", f"{rng.choice(INTROS)}\n\n```java\n{body}\n```\n\n{rng.choice(OUTROS)}".strip(), True)
    for i in range(5):
        add("fenced_plain", f"{rng.choice(INTROS)}\n```\n{method(f'testPlain{i}', i)}\n```", True)
    for i in range(5):
        add("multi_fence", f"First the imports:\n```java\nimport org.junit.Test;\n```\nThen the test:\n"
                           f"```java\n{method(f'testSplit{i}', i)}\n```\nDone.", True)
    for i in range(3):
        add("unterminated_fence", f"{rng.choice(INTROS)}\n```java\n{method(f'testCut{i}', i)}\n", True)
    for i in range(8):
        body = method(f"testBare{i}", i) if i % 2 else klass(f"BareTest{i}", i)
        add("unfenced", f"{rng.choice(INTROS)}\n\n{body}\n\n{rng.choice(OUTROS)}".strip(), True)
    for text in PROSE_ONLY:
        add("prose_only", text, False)
    for i in range(5):
        raw = POSIX_TEST_METHOD if i == 0 else POSIX_TEST_METHOD.replace("-azb", f"-az{'b' * i}")
        wrap = ["{}", "```java\n{}\n```", "Here is the test:\n\n{}\n\nIt checks the parser.",
                "import org.apache.commons.cli.*;\n\n{}", "```\n{}\n```\nThe last assertion fails."][i]
        add("bare_method", wrap.format(raw), True)
    for i in range(6):
        wrap = ["{}", "```java\n{}\n```", "Sure, here it is:\n```java\n{}\n```\nHope this helps!",
                "{}\n\nThis test reproduces the exception.", "Test:\n\n{}", "```\n{}\n```"][i]
        add("full_class", wrap.format(JSOUP_TEST_CLASS), True)
    assert len(cases) == 50
    write_jsonl("extraction/corpus.jsonl", cases)


E2E_PROJECTS = {"Cli": 10, "Lang": 10}


def e2e():
    rng = random.Random(8)
    reports, outputs = [], []
    scripts = {p: [] for p in E2E_PROJECTS}
    for project, n in E2E_PROJECTS.items():
        for i in range(1, n + 1):
            bug = f"{project}-{i}"
            reports.append({"id": bug, "project": project, "title": f"{project} bug {i}",
                            "body": f"Calling {project.lower()}.run({i}) throws an exception.\n"
                                    f"```java\n{project}Util.run({i});\n```",
                            "created_at": f"2018-03-{i:02d}", "source_url": ""})
            for a in range(1, 6):
                kind = rng.choices(["fenced", "bare", "prose", "broken"], [6, 2, 1, 1])[0]
                code = method(f"test{project}{i}", i * 10 + a)
                raw = {"fenced": f"Here is the test:\n```java\n{code}\n```",
                       "bare": f"{code}\n\nThis reproduces the bug.",
                       "prose": rng.choice(PROSE_ONLY),
                       "broken": f"```java\n{code[:-1]}\n```"}[kind]
                outputs.append({"bug_id": bug, "attempt": a, "output": raw})
                if kind in ("fenced", "bare"):
                    buggy = rng.choices(["compile_fail", "pass", "fail", "error", "timeout"], [4, 2, 3, 1, 1])[0]
                    fixed = rng.choices(["pass", "fail", "unavailable"], [3, 1, 1])[0]
                    scripts[project].append({"test_id": test_id(bug, a), "buggy": buggy, "fixed": fixed})
    with open(path("e2e", "reports.csv"), "w", newline="") as f:
        import csv
        w = csv.DictWriter(f, fieldnames=["id", "project", "title", "body", "created_at", "source_url"])
        w.writeheader()
        w.writerows(reports)
    write_jsonl("e2e/llm.jsonl", outputs)
    for project, rows in scripts.items():
        write_jsonl(f"e2e/{project.lower()}_script.jsonl", rows)
    with open(path("e2e", "config.toml"), "w") as f:
        f.write('[backend]\nkind = "mock"\nid = "mock-llm"\nfixture = "llm.jsonl"\n\n'
                '[prompt]\nn_attempts = 5\n\n[harness]\nwork_root = "work"\nparallelism = 1\n\n')
        for project in E2E_PROJECTS:
            f.write(f'[adapters.{project}]\nkind = "simulated"\nscript = "{project.lower()}_script.jsonl"\n\n')


if __name__ == "__main__":
    stages_of = chatgpt_runs()
    codegpt_runs(list(stages_of))
    new_reports()
    spectra()
    patches(stages_of)
    quality()
    extraction()
    e2e()
