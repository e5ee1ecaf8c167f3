#!/usr/bin/env python3
"""Count kernel launches and intermediate elements per task from the
template step lists, independently of the Rust implementation.

Writes crates/core/tests/fixtures/launches.csv.
"""
import argparse
import csv
import os

E = ("e",)


def p(x):
    return ("p", x)


def i(*xs):
    return ("i", list(xs))


def u(*xs):
    return ("u", list(xs))


def n(x):
    return ("n", x)


SHAPES = {
    "1p": p(E),
    "2p": p(p(E)),
    "3p": p(p(p(E))),
    "2i": i(p(E), p(E)),
    "3i": i(p(E), p(E), p(E)),
    "pi": i(p(p(E)), p(E)),
    "ip": p(i(p(E), p(E))),
    "2u": u(p(E), p(E)),
    "up": p(u(p(E), p(E))),
    "2in": i(p(E), n(p(E))),
    "3in": i(p(E), p(E), n(p(E))),
    "inp": p(i(p(E), n(p(E)))),
    "pin": i(p(p(E)), n(p(E))),
    "pni": i(n(p(p(E))), p(E)),
}


def clauses(t):
    """Union-free alternatives of t (unions distributed outward)."""
    kind = t[0]
    if kind == "e":
        return [t]
    if kind in ("p", "n"):
        return [(kind, c) for c in clauses(t[1])]
    if kind == "u":
        return [c for x in t[1] for c in clauses(x)]
    out = [[]]
    for x in t[1]:
        out = [acc + [c] for acc in out for c in clauses(x)]
    return [("i", xs) for xs in out]


def ops(t):
    """Primitive-level op list [(name, arity)] of a union-free tree."""
    kind = t[0]
    if kind == "e":
        return []
    if kind == "p":
        return ops(t[1]) + [("project", 1)]
    if kind == "n":
        return ops(t[1]) + [("not", 1)]
    return [o for x in t[1] for o in ops(x)] + [("and", len(t[1]))]


def template(name, k, d, h):
    """(steps, output widths of every step) for one FOL operator."""
    emb = 2 * d
    if name == "project":
        widths = [h, h, h, h, h, h, emb, emb, emb, emb]
    elif name == "and":
        branch = [h, h, h, emb, emb]
        widths = branch * k + [k * emb, emb]
    elif name == "not":
        widths = [emb, emb]
    elif name == "or":
        widths = [k * emb]
    else:
        raise ValueError(name)
    return len(widths), widths


def count(tag, d, h):
    cs = clauses(SHAPES[tag])
    flat = [o for c in cs for o in ops(c)]
    if len(cs) > 1:
        flat.append(("or", len(cs)))
    launches = 0
    interm = 0
    for idx, (name, k) in enumerate(flat):
        steps, widths = template(name, k, d, h)
        launches += steps
        interm += sum(widths)
        if idx == len(flat) - 1:
            interm -= widths[-1]
    return launches, 1, interm, 0


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--d", type=int, default=32)
    ap.add_argument("--h", type=int, default=64)
    root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
    ap.add_argument("--out", default=os.path.join(root, "crates/core/tests/fixtures/launches.csv"))
    args = ap.parse_args()
    with open(args.out, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["task", "d", "h", "unfused_launches", "fused_launches",
                    "unfused_interm_elems_per_row", "fused_interm_elems_per_row"])
        for tag in SHAPES:
            w.writerow([tag, args.d, args.h, *count(tag, args.d, args.h)])


if __name__ == "__main__":
    main()
