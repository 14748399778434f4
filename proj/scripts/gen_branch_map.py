#!/usr/bin/env python3
"""Writes the branch map of a binary's branch_N functions using objdump.

Each line is `<branch> <taken> <fallthrough>` in link-time hex addresses.
"""
import re
import subprocess
import sys

# x86 jcc, or AArch64 b.cond / cbz / cbnz / tbz / tbnz.
JCC = re.compile(r"^\s*([0-9a-f]+):\s+(?:j(?!mp)[a-z]+|b\.[a-z]+|cbn?z|tbn?z)\s.*?\b([0-9a-f]+) <")
INSN = re.compile(r"^\s*([0-9a-f]+):")
FUNC = re.compile(r"^[0-9a-f]+ <(branch_\d+)>:$")


def main():
    if len(sys.argv) != 3:
        sys.exit("usage: gen_branch_map.py BINARY OUT")
    objdump = subprocess.run(["objdump", "-d", "--no-show-raw-insn", sys.argv[1]],
                             check=True, capture_output=True, text=True).stdout
    branches = []
    func = None
    pending = None
    for line in objdump.splitlines():
        m = FUNC.match(line)
        if m:
            func = m.group(1)
            continue
        if not line.strip():
            func = None
            continue
        if func is None:
            continue
        insn = INSN.match(line)
        if pending and insn:
            branches.append((pending[0], pending[1], int(insn.group(1), 16)))
            pending = None
        m = JCC.match(line)
        if m:
            pending = (int(m.group(1), 16), int(m.group(2), 16))
    with open(sys.argv[2], "w") as out:
        out.write("# branch taken fallthrough\n")
        for b, t, f in sorted(branches):
            out.write(f"{b:x} {t:x} {f:x}\n")


if __name__ == "__main__":
    main()
