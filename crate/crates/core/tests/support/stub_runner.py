"""Minimal test double for the execution runner protocol.

Modes (first argument): normal, bad-handshake, garbage, hang, old-protocol.
"""

import json
import subprocess
import sys
import time

mode = sys.argv[1] if len(sys.argv) > 1 else "normal"

if mode == "bad-handshake":
    print("hello", flush=True)
    sys.exit(0)
print(json.dumps({"runner_protocol": 2 if mode == "old-protocol" else 1}), flush=True)

for line in sys.stdin:
    if mode == "hang":
        time.sleep(3600)
    if mode == "garbage":
        print("not json", flush=True)
        continue
    try:
        req = json.loads(line)
        program = req["solution_code"] + "\n" + req["test_code"] + "\ncheck(" + req["entry_point"] + ")\n"
        timeout = float(req["timeout_s"])
    except (ValueError, KeyError, TypeError):
        print(json.dumps({"status": "error", "detail": "bad request", "wall_time_s": 0.0}), flush=True)
        continue
    start = time.monotonic()
    try:
        proc = subprocess.run([sys.executable, "-c", program], capture_output=True, text=True, timeout=timeout)
        if proc.returncode == 0:
            status, detail = "pass", ""
        elif "AssertionError" in proc.stderr:
            status, detail = "fail", proc.stderr.strip().splitlines()[-1]
        else:
            status, detail = "error", proc.stderr.strip()[-200:]
    except subprocess.TimeoutExpired:
        status, detail = "timeout", "killed"
    print(json.dumps({"status": status, "detail": detail, "wall_time_s": time.monotonic() - start}), flush=True)
