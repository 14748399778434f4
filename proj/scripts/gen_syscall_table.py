#!/usr/bin/env python3
"""Regenerate data/syscalls.tbl from the kernel UAPI headers.

AMD64 numbers come from asm/unistd_64.h; AArch64 uses the generic table
(asm-generic/unistd.h) with the 64-bit __NR3264_* aliases resolved.
"""
import re
import sys

AMD64_HDR = "/usr/include/x86_64-linux-gnu/asm/unistd_64.h"
GENERIC_HDR = "/usr/include/asm-generic/unistd.h"

# 64-bit spellings of the __NR3264_* aliases (the first alias block in the
# header is the BITS_PER_LONG == 64 branch).
GENERIC_3264 = {
    "fcntl": "fcntl", "statfs": "statfs", "fstatfs": "fstatfs",
    "truncate": "truncate", "ftruncate": "ftruncate", "lseek": "lseek",
    "sendfile": "sendfile", "fstatat": "newfstatat", "fstat": "fstat",
    "mmap": "mmap", "fadvise64": "fadvise64",
}


def amd64():
    out = {}
    for line in open(AMD64_HDR):
        m = re.match(r"#define __NR_(\w+)\s+(\d+)", line)
        if m:
            out[int(m.group(2))] = m.group(1)
    return out


def aarch64():
    out = {}
    for line in open(GENERIC_HDR):
        m = re.match(r"#define __NR(3264)?_(\w+)\s+(\d+)", line)
        if not m:
            continue
        name, nr = m.group(2), int(m.group(3))
        if name == "syscalls":
            continue
        if m.group(1):
            if name not in GENERIC_3264:
                continue
            name = GENERIC_3264[name]
        out.setdefault(nr, name)
    return out


def main(path):
    with open(path, "w") as f:
        f.write("# <arch> <nr> <name>; generated by scripts/gen_syscall_table.py\n")
        for arch, table in (("amd64", amd64()), ("aarch64", aarch64())):
            for nr in sorted(table):
                f.write(f"{arch} {nr} {table[nr]}\n")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "data/syscalls.tbl")
