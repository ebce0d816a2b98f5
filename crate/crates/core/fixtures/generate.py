"""Regenerates the scripted scenarios and the toy dataset in this directory.

Run from anywhere: python3 crates/core/fixtures/generate.py
"""

import json
import pathlib

HERE = pathlib.Path(__file__).resolve().parent
EOS = {"eos": True}


def tok(text, p, *alts):
    return {"text": text, "p": p, "alts": [{"text": t, "p": q} for t, q in alts]}


def line_path(after, measured, rest):
    """One code line keyed on the previous line: indent, measured token, rest."""
    return {"after": after, "steps": ["    ", measured, rest]}


def write(name, doc):
    path = HERE / name
    path.write_text(json.dumps(doc, indent=1) + "\n")


# ---------------------------------------------------------------- motivating

MIN_PRODUCTS = (
    "def min_products(prices: list, n: int) -> int:\n"
    '    """Return the minimum number of products whose prices add up to exactly n.\n'
    "    Every product may be bought any number of times; return -1 when no\n"
    "    combination reaches n.\n"
    "    >>> min_products([1, 3, 4], 6)\n"
    "    2\n"
    '    """\n'
)

GREEDY_REST = (
    " price in sorted(prices, reverse=True):\n"
    "        while n >= price:\n"
    "            n -= price\n"
    "            count += 1\n"
    "    return count if n == 0 else -1\n"
)

DP_LINE = "    dp = [0] + [float('inf')] * n\n"

DP_REST = (
    "    for amount in range(1, n + 1):\n"
    "        for price in prices:\n"
    "            if price <= amount and dp[amount - price] + 1 < dp[amount]:\n"
    "                dp[amount] = dp[amount - price] + 1\n"
    "    return dp[n] if dp[n] != float('inf') else -1\n"
)

motivating = {
    "format_version": 1,
    "name": "motivating-min-products",
    "vocab_size": 64,
    "paths": [
        {
            "after": MIN_PRODUCTS,
            "steps": [
                "    count = 0\n",
                "    ",
                tok("for", 0.45, ("dp", 0.40), ("prices", 0.05), ("if", 0.04), ("best", 0.03)),
                GREEDY_REST,
                EOS,
            ],
        },
        {"after": DP_LINE, "steps": [DP_REST, EOS]},
    ],
    "samples": [
        {
            "after": MIN_PRODUCTS + "    count = 0\n    ",
            "branches": [
                [
                    "# subtract the largest price while it still fits\n",
                    tok("    for price in sorted(prices, reverse=True):", 0.5, ("    dp = [0] + [float('inf')] * n", 0.4)),
                    tok("\n", 0.9, (" #", 0.05)),
                ],
                [
                    "# use dp over amounts since greedy can miss combinations\n",
                    tok("    dp", 0.9, ("    best", 0.05)),
                    tok(" = [0] + [float('inf')] * n", 0.85, (" = [0] * (n + 1)", 0.1)),
                    tok("\n", 0.97, (" #", 0.02)),
                ],
                ["# think about which prices can be combined\n# every amount up to n matters\n", EOS],
                [
                    "# build a table of minimum counts\n",
                    tok("    dp", 0.6, ("    table", 0.3)),
                    tok(" = [0] + [float('inf')] * n", 0.5, (" = [0] * (n + 1)", 0.4)),
                    tok("\n", 0.9, (" #", 0.05)),
                ],
                [
                    "# try the larger prices first\n",
                    tok("    prices", 0.7, ("    for", 0.2)),
                    tok(" = sorted(prices, reverse=True)", 0.6, (" = sorted(prices)", 0.3)),
                    tok("\n", 0.95, (" #", 0.03)),
                ],
            ],
        }
    ],
}
write("scenarios/motivating.json", motivating)

# ---------------------------------------------------------------- gates

SUMMARIZE = (
    "def summarize(values: list) -> dict:\n"
    '    """Return count, total, mean and spread of a list of numbers."""\n'
)
G_LINES = [
    ("count", " = len(values)\n", [("count", 1.0)]),
    ("total", " = sum(values)\n", [("total", 0.8), ("s", 0.15), ("acc", 0.05)]),
    ("mean", " = total / count if count else 0.0\n", [("mean", 0.5), ("avg", 0.3), ("m", 0.1), ("if", 0.05)]),
    ("spread", " = max(values) - min(values) if values else 0.0\n", [("spread", 0.95), ("rng", 0.05)]),
    (
        "return",
        ' {"count": count, "total": total, "mean": mean, "spread": spread}\n',
        [("return", 0.4), ("result", 0.35), ("out", 0.25)],
    ),
]

gate_paths = []
gate_samples = []
prev = SUMMARIZE
for i, (word, rest, dist) in enumerate(G_LINES):
    (top, p), alts = dist[0], dist[1:]
    measured = tok(top, p, *alts) if alts else word
    gate_paths.append(line_path(prev, measured, rest))
    full = "    " + word + rest
    if len(dist) > 1:
        # candidate 0 restates the greedy line confidently, 1 is a weaker
        # alternative, 2 is degenerate, 3 ties candidate 0
        body = rest[:-1]
        gate_samples.append(
            {
                "after": prev + "    ",
                "branches": [
                    [f"# line {i}: keep it simple\n", tok("    " + word, 0.9, ("    x", 0.05)), tok(body, 0.8, (" = None", 0.1)), tok("\n", 0.95, (" #", 0.02))],
                    [f"# line {i}: another idea\n", tok("    " + word, 0.5, ("    x", 0.4)), tok(body, 0.5, (" = None", 0.3)), tok("\n", 0.9, (" #", 0.05))],
                    [f"# line {i}: unsure\n", EOS],
                    [f"# line {i}: same again\n", tok("    " + word, 0.9, ("    x", 0.05)), tok(body, 0.8, (" = None", 0.1)), tok("\n", 0.95, (" #", 0.02))],
                ],
            }
        )
    prev = full
gate_paths.append({"after": prev, "steps": [EOS]})

write(
    "scenarios/gates.json",
    {"format_version": 1, "name": "gate-placement", "vocab_size": 64, "paths": gate_paths, "samples": gate_samples},
)

# ---------------------------------------------------------------- toy dataset


def prompt(sig, doc):
    return f'{sig}\n    """{doc}\n    """\n'


TOY = [
    {
        "task_id": "toy/0",
        "prompt": prompt("def clamp(x: int, lo: int, hi: int) -> int:", "Limit x to the closed interval [lo, hi].\n    >>> clamp(5, 0, 3)\n    3"),
        "entry_point": "clamp",
        "canonical_solution": "    return max(lo, min(x, hi))\n",
        "test": "def check(candidate):\n    assert candidate(5, 0, 3) == 3\n    assert candidate(-2, 0, 3) == 0\n    assert candidate(2, 0, 3) == 2\n",
    },
    {
        "task_id": "toy/1",
        "prompt": prompt("def is_palindrome(text: str) -> bool:", "Return True when text reads the same backwards, ignoring case.\n    >>> is_palindrome('Level')\n    True"),
        "entry_point": "is_palindrome",
        "canonical_solution": "    cleaned = text.lower()\n    return cleaned == cleaned[::-1]\n",
        "test": "def check(candidate):\n    assert candidate('Level') is True\n    assert candidate('abca') is False\n    assert candidate('') is True\n",
    },
    {
        "task_id": "toy/2",
        "prompt": prompt("def running_max(nums: list) -> list:", "Return the running maximum of nums.\n    >>> running_max([1, 3, 2, 5])\n    [1, 3, 3, 5]"),
        "entry_point": "running_max",
        "canonical_solution": (
            "    result = []\n"
            "    best = None\n"
            "    for n in nums:\n"
            "        best = n if best is None else max(best, n)\n"
            "        result.append(best)\n"
            "    return result\n"
        ),
        "test": "def check(candidate):\n    assert candidate([1, 3, 2, 5]) == [1, 3, 3, 5]\n    assert candidate([]) == []\n    assert candidate([-1, -4]) == [-1, -1]\n",
    },
    {
        "task_id": "toy/3",
        "prompt": prompt("def second_largest(nums: list) -> int:", "Return the second largest distinct value in nums.\n    >>> second_largest([3, 5, 5, 1])\n    3"),
        "entry_point": "second_largest",
        "canonical_solution": "    distinct = sorted(set(nums))\n    return distinct[-2]\n",
        "test": "def check(candidate):\n    assert candidate([3, 5, 5, 1]) == 3\n    assert candidate([2, 1]) == 1\n    assert candidate([7, 7, 7, 4]) == 4\n",
    },
    {
        "task_id": "toy/4",
        "prompt": prompt("def count_words(text: str) -> int:", "Return the number of whitespace-separated words in text.\n    >>> count_words('a  b c')\n    3"),
        "entry_point": "count_words",
        "canonical_solution": "    return len(text.split())\n",
        "test": "def check(candidate):\n    assert candidate('a  b c') == 3\n    assert candidate('one') == 1\n    assert candidate('  ') == 0\n",
    },
]

with open(HERE / "datasets/toy.jsonl", "w") as f:
    for p in TOY:
        f.write(json.dumps(p) + "\n")

P = [p["prompt"] for p in TOY]

toy_paths = [
    {
        "after": P[0],
        "steps": ["    ", tok("return", 0.97, ("if", 0.02), ("lo", 0.01)), " max(lo, min(x, hi))\n"],
    },
    {"after": "    return max(lo, min(x, hi))\n", "steps": [EOS]},
    {"after": P[1], "steps": [TOY[1]["canonical_solution"], EOS]},
    {"after": P[2], "steps": [TOY[2]["canonical_solution"], EOS]},
    {
        "after": P[3],
        "steps": [
            "    ",
            tok("return", 0.45, ("distinct", 0.40), ("nums", 0.05), ("if", 0.04), ("top", 0.03)),
            " sorted(nums)[-2]\n",
            EOS,
        ],
    },
    {"after": "    distinct = sorted(set(nums))\n", "steps": ["    return distinct[-2]\n", EOS]},
    {"after": P[4], "steps": ["    return len(text.split(' '))\n", EOS]},
]

toy_samples = [
    {
        "after": P[0] + "    ",
        "branches": [
            ["# bound x from above, then from below\n", tok("    return", 0.95, ("    if", 0.03)), tok(" max(lo, min(x, hi))", 0.9, (" min(hi, max(x, lo))", 0.08)), tok("\n", 0.98, (" #", 0.01))],
            ["# compare against both limits\n", tok("    if", 0.6, ("    return", 0.35)), tok(" x < lo:", 0.7, (" x > hi:", 0.2)), tok("\n", 0.9, (" #", 0.05))],
            ["# the nested form covers both sides\n", tok("    return", 0.95, ("    if", 0.03)), tok(" max(lo, min(x, hi))", 0.9, (" min(hi, max(x, lo))", 0.08)), tok("\n", 0.98, (" #", 0.01))],
            ["# nothing else to consider\n", EOS],
            ["# clamp\n", tok("    return", 0.7, ("    if", 0.2)), tok(" min(max(x, lo), hi)", 0.5, (" max(lo, min(x, hi))", 0.4)), tok("\n", 0.9, (" #", 0.05))],
        ],
    },
    {
        "after": P[3] + "    ",
        "branches": [
            ["# sort and take the second from the end\n", tok("    return", 0.6, ("    sorted", 0.3)), tok(" sorted(nums)[-2]", 0.5, (" max(nums)", 0.3)), tok("\n", 0.9, (" #", 0.05))],
            ["# duplicates must be removed before ranking\n", tok("    distinct", 0.85, ("    unique", 0.1)), tok(" = sorted(set(nums))", 0.8, (" = set(nums)", 0.15)), tok("\n", 0.95, (" #", 0.03))],
            ["# the answer depends on the order of values\n", EOS],
            ["# drop duplicates first\n", tok("    distinct", 0.6, ("    unique", 0.35)), tok(" = sorted(set(nums))", 0.7, (" = set(nums)", 0.2)), tok("\n", 0.9, (" #", 0.05))],
            ["# find the largest, then the largest below it\n", tok("    top", 0.5, ("    first", 0.4)), tok(" = max(nums)", 0.6, (" = nums[0]", 0.3)), tok("\n", 0.9, (" #", 0.05))],
        ],
    },
]

write(
    "scenarios/toy.json",
    {"format_version": 1, "name": "toy-benchmark", "vocab_size": 64, "paths": toy_paths, "samples": toy_samples},
)
