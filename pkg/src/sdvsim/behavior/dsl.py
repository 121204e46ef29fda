"""Parser for the indentation-based behavior tree language.

A file holds one or more tree definitions::

    btree drive(target_speed=14 (+-10%), time_gap=[1.8, 2.2]):
        ? drive
            -> follow_lead
                condition lead_vehicle_exists(distance=60)
                maneuver vehicle_following(time_gap=time_gap)
            maneuver velocity_keeping(target_speed=target_speed)

Operators are ``?`` (fallback), ``->`` (sequence) and ``||`` (parallel, with an
optional ``(threshold=N)``), each followed by an optional label. Leaves are
``condition``, ``maneuver``, ``subtree`` and ``timer``. Argument values are
numbers, ``v (+-p%)`` percentage ranges, ``[lo, hi]`` ranges, ``(a, b, ...)``
tuples, ``true``/``false``, quoted strings and bare identifiers.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from sdvsim.params import Range, Symbol

OPERATORS = {"?": "fallback", "->": "sequence", "||": "parallel"}
LEAVES = {"condition": "condition", "maneuver": "maneuver", "subtree": "subtree_ref", "timer": "timer"}


class DSLError(Exception):
    def __init__(self, message: str, line: int = 0, col: int = 0, file: str = "<string>"):
        super().__init__(message)
        self.message, self.line, self.col, self.file = message, line, col, file

    def __str__(self) -> str:
        return f"{self.file}:{self.line}:{self.col}: {self.message}"


@dataclass
class BTNode:
    kind: str
    name: str = ""
    children: list["BTNode"] = field(default_factory=list)
    params: dict = field(default_factory=dict)
    parallel_policy: Optional[int] = None
    line: int = 0
    col: int = 0
    origin: str = ""  # tree that defines this node
    uid: str = ""  # unique path, assigned when a tree is instantiated

    @property
    def is_operator(self) -> bool:
        return self.kind in ("fallback", "sequence", "parallel")

    def walk(self):
        yield self
        for c in self.children:
            yield from c.walk()

    def count(self) -> int:
        return sum(1 for _ in self.walk())


@dataclass
class TreeDef:
    name: str
    params: dict
    root: BTNode
    file: str = "<string>"
    line: int = 0

    def references(self) -> list[BTNode]:
        return [n for n in self.root.walk() if n.kind == "subtree_ref"]


_TOKEN = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<pm>\+-)
  | (?P<number>-?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)
  | (?P<string>"[^"]*")
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<punct>[()\[\],=%])
    """,
    re.VERBOSE,
)


class _Args:
    """Recursive-descent parser for one ``(key=value, ...)`` argument list."""

    def __init__(self, text: str, line: int, col0: int, file: str):
        self.line, self.file = line, file
        self.toks: list[tuple[str, str, int]] = []
        pos = 0
        while pos < len(text):
            m = _TOKEN.match(text, pos)
            if not m:
                raise DSLError(f"unexpected character {text[pos]!r}", line, col0 + pos, file)
            if m.lastgroup != "ws":
                self.toks.append((m.lastgroup, m.group(), col0 + pos))
            pos = m.end()
        self.i = 0
        self.end_col = col0 + len(text)

    def _err(self, msg: str):
        col = self.toks[self.i][2] if self.i < len(self.toks) else self.end_col
        raise DSLError(msg, self.line, col, self.file)

    def peek(self, value: str | None = None):
        if self.i >= len(self.toks):
            return None
        tok = self.toks[self.i]
        return tok if value is None or tok[1] == value else None

    def expect(self, value: str):
        if not self.peek(value):
            self._err(f"expected {value!r}")
        self.i += 1

    def arglist(self) -> dict:
        self.expect("(")
        out: dict = {}
        while not self.peek(")"):
            tok = self.peek()
            if tok is None:
                self._err("unbalanced parenthesis: missing ')'")
            if tok[0] != "ident":
                self._err(f"expected parameter name, got {tok[1]!r}")
            self.i += 1
            self.expect("=")
            if tok[1] in out:
                self._err(f"duplicate parameter {tok[1]!r}")
            out[tok[1]] = self.value()
            if self.peek(","):
                self.i += 1
            elif not self.peek(")"):
                if self.peek() is None:
                    self._err("unbalanced parenthesis: missing ')'")
                self._err("expected ',' or ')'")
        self.i += 1
        return out

    def value(self):
        tok = self.peek()
        if tok is None:
            self._err("missing value")
        kind, text, _ = tok
        if kind == "number":
            self.i += 1
            num = float(text)
            if self.peek("(") and self.i + 1 < len(self.toks) and self.toks[self.i + 1][0] == "pm":
                return self._percent(num)
            return int(num) if re.fullmatch(r"-?\d+", text) else num
        if kind == "string":
            self.i += 1
            return text[1:-1]
        if kind == "ident":
            self.i += 1
            if text in ("true", "false"):
                return text == "true"
            return Symbol(text)
        if text == "[":
            self.i += 1
            lo = self._number()
            self.expect(",")
            hi = self._number()
            self.expect("]")
            if lo > hi:
                self._err(f"malformed range: lower bound {lo} exceeds upper bound {hi}")
            return Range.between(lo, hi)
        if text == "(":
            self.i += 1
            items = [self.value()]
            while self.peek(","):
                self.i += 1
                items.append(self.value())
            if self.peek() is None:
                self._err("unbalanced parenthesis: missing ')'")
            self.expect(")")
            return tuple(items)
        self._err(f"unexpected {text!r}")

    def _number(self) -> float:
        tok = self.peek()
        if tok is None or tok[0] != "number":
            self._err("malformed range: expected a number")
        self.i += 1
        return float(tok[1])

    def _percent(self, num: float) -> Range:
        self.expect("(")
        self.i += 1  # '+-'
        pct = self._number()
        if pct < 0:
            self._err("malformed range: negative percentage")
        self.expect("%")
        self.expect(")")
        return Range.percent(num, pct)

    def done(self):
        if self.i != len(self.toks):
            self._err(f"unexpected trailing {self.toks[self.i][1]!r}")


_HEADER = re.compile(r"btree\s+(?P<name>[A-Za-z_][A-Za-z0-9_]*)\s*(?P<args>\(.*\))?\s*:\s*$")
_OPERATOR = re.compile(r"(?P<op>\?|->|\|\|)(?:\s+(?P<label>[A-Za-z_][A-Za-z0-9_]*))?\s*(?P<args>\(.*)?$")
_LEAF = re.compile(r"(?P<kind>[A-Za-z_]+)(?:\s+(?P<name>[A-Za-z_][A-Za-z0-9_]*))?\s*(?P<args>\(.*)?$")


def _strip_comment(line: str) -> str:
    in_str = False
    for i, ch in enumerate(line):
        if ch == '"':
            in_str = not in_str
        elif ch == "#" and not in_str:
            return line[:i]
    return line


def _parse_args(text: Optional[str], line: int, col: int, file: str) -> dict:
    if not text:
        return {}
    p = _Args(text, line, col, file)
    out = p.arglist()
    p.done()
    return out


def _parse_node(body: str, lineno: int, col: int, file: str) -> BTNode:
    m = _OPERATOR.match(body)
    if m:
        args_col = col + m.start("args") if m.group("args") else col
        args = _parse_args(m.group("args"), lineno, args_col, file)
        kind = OPERATORS[m.group("op")]
        policy = None
        if kind == "parallel":
            policy = args.pop("threshold", None)
            if policy is not None and (not isinstance(policy, int) or policy < 1):
                raise DSLError("parallel threshold must be a positive integer", lineno, args_col, file)
        if args:
            raise DSLError(f"unknown operator parameter(s): {', '.join(args)}", lineno, args_col, file)
        return BTNode(kind, m.group("label") or kind, params={}, parallel_policy=policy, line=lineno, col=col)
    m = _LEAF.match(body)
    if not m:
        raise DSLError(f"cannot parse node {body.strip()!r}", lineno, col, file)
    word = m.group("kind")
    if word not in LEAVES:
        raise DSLError(f"unknown node kind {word!r}", lineno, col, file)
    kind = LEAVES[word]
    name = m.group("name")
    if name is None:
        if kind != "timer":
            raise DSLError(f"{word} needs a name", lineno, col, file)
        name = "timer"
    if m.group("args") is None and kind != "timer":
        raise DSLError(f"{word} {name}: missing argument list '(...)'", lineno, col + len(body.rstrip()), file)
    args = _parse_args(m.group("args"), lineno, col + (m.start("args") if m.group("args") else 0), file)
    return BTNode(kind, name, params=args, line=lineno, col=col)


def parse_trees(source: str, file: str = "<string>") -> list[TreeDef]:
    """Parse every ``btree`` block in ``source``."""
    trees: list[TreeDef] = []
    current: Optional[TreeDef] = None
    stack: list[tuple[int, BTNode]] = []
    child_indent: dict[int, int] = {}

    def close():
        if current is not None and current.root is None:
            raise DSLError(f"tree {current.name!r} has no body", current.line, 1, file)

    for lineno, raw in enumerate(source.splitlines(), start=1):
        line = _strip_comment(raw).rstrip()
        if not line.strip():
            continue
        stripped = line.lstrip(" ")
        if stripped.startswith("\t") or "\t" in line[: len(line) - len(stripped)]:
            raise DSLError("tabs are not allowed for indentation", lineno, 1, file)
        indent = len(line) - len(stripped)
        col = indent + 1
        if indent == 0:
            m = _HEADER.match(stripped)
            if not m:
                if stripped.startswith("btree"):
                    raise DSLError("malformed btree header, expected 'btree NAME:' or 'btree NAME(params):'", lineno, 1, file)
                raise DSLError(f"expected 'btree' header, got {stripped.split()[0]!r}", lineno, 1, file)
            close()
            params = _parse_args(m.group("args"), lineno, m.start("args") + 1 if m.group("args") else 1, file)
            current = TreeDef(m.group("name"), params, None, file, lineno)  # type: ignore[arg-type]
            trees.append(current)
            stack, child_indent = [], {}
            continue
        if current is None:
            raise DSLError("node outside of any btree block", lineno, col, file)
        node = _parse_node(stripped, lineno, col, file)
        node.origin = current.name
        if current.root is None:
            current.root = node
            stack = [(indent, node)]
            continue
        while stack and stack[-1][0] >= indent:
            stack.pop()
        if not stack:
            raise DSLError("a tree may only have one root node", lineno, col, file)
        parent = stack[-1][1]
        if not parent.is_operator:
            raise DSLError(f"{parent.kind} {parent.name!r} is a leaf and cannot have children", lineno, col, file)
        expected = child_indent.setdefault(id(parent), indent)
        if indent != expected:
            raise DSLError("inconsistent indentation", lineno, col, file)
        parent.children.append(node)
        stack.append((indent, node))
    close()
    for tree in trees:
        for n in tree.root.walk():
            if n.is_operator and not n.children:
                raise DSLError(f"operator {n.name!r} has no children", n.line, n.col, file)
    return trees


def parse_tree(source: str, file: str = "<string>") -> BTNode:
    """Parse a single tree and return its root.

    ``source`` may be a full ``btree`` block or a bare node such as
    ``maneuver stop()``.
    """
    if source.lstrip().startswith("btree"):
        trees = parse_trees(source, file)
        if len(trees) != 1:
            raise DSLError(f"expected one tree, found {len(trees)}", 1, 1, file)
        return trees[0].root
    indented = "btree main:\n" + "\n".join("    " + ln for ln in source.splitlines())
    try:
        return parse_trees(indented, file)[0].root
    except DSLError as exc:
        raise DSLError(exc.message, max(exc.line - 1, 1), max(exc.col - 4, 1), file) from None


def load_tree_file(path) -> list[TreeDef]:
    p = Path(path)
    return parse_trees(p.read_text(encoding="utf-8"), str(p))


def parse_value(text: str, file: str = "<value>"):
    """Parse one argument value written in DSL syntax, e.g. ``"14 (+-10%)"``."""
    p = _Args(text, 1, 1, file)
    v = p.value()
    p.done()
    return v
