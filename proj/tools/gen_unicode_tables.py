#!/usr/bin/env python3
"""Regenerates include/charannot/detail/unicode_tables.hpp from unicodedata."""
import sys
import unicodedata


def ranges(pred):
    out, start = [], None
    for cp in range(0x110000):
        hit = pred(cp)
        if hit and start is None:
            start = cp
        elif not hit and start is not None:
            out.append((start, cp - 1))
            start = None
    if start is not None:
        out.append((start, 0x10FFFF))
    return out


def emit(name, rs):
    lines = [f"inline constexpr CodepointRange {name}[] = {{"]
    row = []
    for lo, hi in rs:
        row.append(f"{{0x{lo:X}, 0x{hi:X}}}")
        if len(row) == 6:
            lines.append("    " + ", ".join(row) + ",")
            row = []
    if row:
        lines.append("    " + ", ".join(row) + ",")
    lines.append("};")
    return "\n".join(lines)


def main():
    letters = ranges(lambda c: unicodedata.category(chr(c)).startswith("L"))
    numbers = ranges(lambda c: unicodedata.category(chr(c)).startswith("N"))
    print("// Generated by tools/gen_unicode_tables.py (Unicode %s). Do not edit." % unicodedata.unidata_version)
    print("#pragma once\n")
    print("#include <cstdint>\n")
    print("namespace charannot::detail {\n")
    print("struct CodepointRange {\n  char32_t lo;\n  char32_t hi;\n};\n")
    print(emit("kLetterRanges", letters))
    print()
    print(emit("kNumberRanges", numbers))
    print("\n}  // namespace charannot::detail")


if __name__ == "__main__":
    sys.exit(main())
