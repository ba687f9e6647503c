"""Reference external evaluator speaking the newline-delimited JSON protocol.

Reads ``{"s": [...]}`` lines on stdin and answers each with
``{"y": [J, H]}`` for the constrained illustrative problem. Replace the two
function calls with a call into a simulation code to optimise a real design.
"""

import json
import sys

from redspace.benchmarks import illustrative_constraint, illustrative_objective


def main():
    for line in sys.stdin:
        s = json.loads(line)["s"]
        y = [illustrative_objective(s), illustrative_constraint(s)]
        sys.stdout.write(json.dumps({"y": y}) + "\n")
        sys.stdout.flush()


if __name__ == "__main__":
    main()
