"""Minimal located s-expression reader (``;`` comments to end of line)."""

from __future__ import annotations

from dataclasses import dataclass

from .errors import VnnSyntaxError


@dataclass(frozen=True)
class Atom:
    text: str
    line: int
    column: int


@dataclass(frozen=True)
class SList:
    items: tuple
    line: int
    column: int

    def head(self) -> str | None:
        if self.items and isinstance(self.items[0], Atom):
            return self.items[0].text
        return None


def _tokens(text: str):
    line, col = 1, 1
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch == "\n":
            line, col = line + 1, 1
            i += 1
        elif ch.isspace():
            i += 1
            col += 1
        elif ch == ";":
            while i < n and text[i] != "\n":
                i += 1
        elif ch in "()":
            yield ch, line, col
            i += 1
            col += 1
        else:
            start, scol = i, col
            while i < n and not text[i].isspace() and text[i] not in "();":
                i += 1
                col += 1
            yield text[start:i], line, scol


def read_all(text: str) -> list:
    """Parse every top-level form in ``text``."""
    stack: list[tuple[list, int, int]] = []
    forms: list = []
    for tok, line, col in _tokens(text):
        if tok == "(":
            stack.append(([], line, col))
        elif tok == ")":
            if not stack:
                raise VnnSyntaxError("unexpected ')'", line, col)
            items, l0, c0 = stack.pop()
            node = SList(tuple(items), l0, c0)
            (stack[-1][0] if stack else forms).append(node)
        else:
            (stack[-1][0] if stack else forms).append(Atom(tok, line, col))
    if stack:
        _, l0, c0 = stack[-1]
        raise VnnSyntaxError("unclosed '('", l0, c0)
    return forms
