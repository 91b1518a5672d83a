"""Brute-force evaluator for the corpus result ids.

Reads the dataset written by `odatax generate ecommerce-small -o DIR`,
evaluates each case's `expectedTraditional` string with its own small OData
parser, and either checks or rewrites `expectedIds`.

    python3 oracle.py DIR golden.json traditional.json [--write]
"""
import json
import os
import re
import sys

TOKEN = re.compile(r"\s*(?:(?P<str>'(?:[^']|'')*')|(?P<num>-?\d+(?:\.\d+)?)|(?P<punct>[(),])|(?P<word>[A-Za-z_][A-Za-z0-9_/]*))")


def tokenize(s):
    pos, out = 0, []
    s = s.rstrip()
    while pos < len(s):
        m = TOKEN.match(s, pos)
        if not m or m.end() == pos:
            raise ValueError("cannot tokenize at %d: %r" % (pos, s[pos:]))
        kind = m.lastgroup
        text = m.group(kind)
        if kind == "str":
            out.append(("str", text[1:-1].replace("''", "'")))
        elif kind == "num":
            out.append(("num", float(text)))
        else:
            out.append((kind, text))
        pos = m.end()
    return out


class Parser:
    def __init__(self, text):
        self.toks = tokenize(text)
        self.i = 0

    def peek(self):
        return self.toks[self.i] if self.i < len(self.toks) else (None, None)

    def take(self, kind=None, text=None):
        k, t = self.peek()
        if (kind and k != kind) or (text and t != text):
            raise ValueError("expected %s %s, got %r" % (kind, text, (k, t)))
        self.i += 1
        return t

    def expr(self):
        node = self.conj()
        while self.peek() == ("word", "or"):
            self.take()
            node = ("or", node, self.conj())
        return node

    def conj(self):
        node = self.unary()
        while self.peek() == ("word", "and"):
            self.take()
            node = ("and", node, self.unary())
        return node

    def unary(self):
        if self.peek() == ("word", "not"):
            self.take()
            return ("not", self.unary())
        if self.peek() == ("punct", "("):
            self.take()
            node = self.expr()
            self.take("punct", ")")
            return node
        name = self.take("word")
        if name in ("contains", "startswith", "endswith"):
            self.take("punct", "(")
            path = self.take("word")
            self.take("punct", ",")
            needle = self.take("str")
            self.take("punct", ")")
            return ("fn", name, path, needle)
        op = self.take("word")
        k, t = self.peek()
        self.i += 1
        if k == "str":
            value = ("s", t)
        elif k == "num":
            value = ("n", t)
        elif (k, t) == ("word", "true"):
            value = ("b", True)
        elif (k, t) == ("word", "false"):
            value = ("b", False)
        elif (k, t) == ("word", "null"):
            value = ("z", None)
        else:
            raise ValueError("bad literal %r" % ((k, t),))
        return ("cmp", name, op, value)


RANK = {"z": 0, "b": 1, "n": 2, "s": 3}


def typed(v):
    if v is None:
        return ("z", None)
    if isinstance(v, bool):
        return ("b", v)
    if isinstance(v, (int, float)):
        return ("n", float(v))
    return ("s", v)


def order_key(t):
    return (RANK[t[0]], t[1] if t[1] is not None else 0)


class Data:
    def __init__(self, d):
        self.model = {s["name"]: s for s in json.load(open(os.path.join(d, "model.json")))["entitySets"]}
        self.rows = {}
        self.by_id = {}
        for name in self.model:
            rows = json.load(open(os.path.join(d, name + ".json")))
            self.rows[name] = rows
            self.by_id[name] = {r["Id"]: r for r in rows}

    def value(self, set_name, row, path):
        parts = path.split("/")
        for rel in parts[:-1]:
            target = next(r["target"] for r in self.model[set_name]["relations"] if r["name"] == rel)
            ids = row.get(rel) or []
            row = self.by_id[target].get(ids[0]) if ids else None
            if row is None:
                return ("z", None)
            set_name = target
        return typed(row.get(parts[-1]))

    def test(self, set_name, row, node):
        tag = node[0]
        if tag == "and":
            return self.test(set_name, row, node[1]) and self.test(set_name, row, node[2])
        if tag == "or":
            return self.test(set_name, row, node[1]) or self.test(set_name, row, node[2])
        if tag == "not":
            return not self.test(set_name, row, node[1])
        if tag == "fn":
            _, fn, path, needle = node
            v = self.value(set_name, row, path)
            if v[0] != "s":
                return False
            return {"contains": needle in v[1], "startswith": v[1].startswith(needle), "endswith": v[1].endswith(needle)}[fn]
        _, path, op, lit = node
        v = self.value(set_name, row, path)
        if op == "eq":
            return v == lit
        if op == "ne":
            return v != lit
        if v[0] == "z" or lit[0] == "z":
            return False
        a, b = order_key(v), order_key(lit)
        return {"gt": a > b, "ge": a >= b, "lt": a < b, "le": a <= b}[op]

    def run(self, set_name, traditional):
        opts = {}
        for part in split_options(traditional):
            k, _, v = part.partition("=")
            opts[k] = v
        rows = list(self.rows[set_name])
        if "$filter" in opts:
            p = Parser(opts["$filter"])
            tree = p.expr()
            if p.i != len(p.toks):
                raise ValueError("trailing tokens in %r" % opts["$filter"])
            rows = [r for r in rows if self.test(set_name, r, tree)]
        if "$orderby" in opts:
            keys = []
            for item in opts["$orderby"].split(","):
                bits = item.split()
                keys.append((bits[0], len(bits) > 1 and bits[1] == "desc"))
            for path, desc in reversed(keys):
                rows.sort(key=lambda r: order_key(self.value(set_name, r, path)), reverse=desc)
        skip = int(opts.get("$skip", 0))
        rows = rows[skip:]
        if "$top" in opts:
            rows = rows[: int(opts["$top"])]
        return [r["Id"] for r in rows]


def split_options(s):
    parts, cur, in_str = [], "", False
    for c in s:
        if c == "'":
            in_str = not in_str
        if c == "&" and not in_str:
            parts.append(cur)
            cur = ""
        else:
            cur += c
    if cur:
        parts.append(cur)
    return parts


def main():
    args = [a for a in sys.argv[1:] if a != "--write"]
    write = "--write" in sys.argv
    data = Data(args[0])
    bad = 0
    for path in args[1:]:
        cases = json.load(open(path))
        for case in cases:
            if "expectedIds" not in case:
                continue
            ids = data.run(case["entitySet"], case["expectedTraditional"])
            if write:
                case["expectedIds"] = ids
            elif case["expectedIds"] != ids:
                bad += 1
                print("MISMATCH %s: corpus %s, oracle %s" % (case["name"], case["expectedIds"][:10], ids[:10]))
        if write:
            with open(path, "w") as f:
                f.write("[\n" + ",\n".join("  " + json.dumps(c, ensure_ascii=False) for c in cases) + "\n]\n")
    print("%s, %d mismatches" % ("written" if write else "checked", bad))
    sys.exit(1 if bad else 0)


if __name__ == "__main__":
    main()
