"""RDF terms, triples and graphs, plus the N-Triples subset used on the wire.

Everything semantic in this project (descriptors, ontologies, rule facts)
is a set of subject-predicate-object triples. Graphs are immutable value
objects; mutation returns a new snapshot, so graphs can be shared freely
across threads.

The N-Triples dialect is deliberately small: IRIs in angle brackets, blank
nodes ``_:label``, literals with optional ``^^<datatype>`` or ``@lang``,
and only the escape sequences ``\\" \\\\ \\n \\t``. Parsing is atomic: a
single malformed line fails the whole document.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Iterator, Union

XSD_NS = "http://www.w3.org/2001/XMLSchema#"
RDF_NS = "http://www.w3.org/1999/02/22-rdf-syntax-ns#"
RDFS_NS = "http://www.w3.org/2000/01/rdf-schema#"
OWL_NS = "http://www.w3.org/2002/07/owl#"

# Vocabularies owned by this stack: descriptor-level mediation facts and
# the context-triple view agents reason over.
MED_NS = "http://wise-iot.example/mediation#"
CTX_NS = "http://wise-iot.example/context#"

XSD_STRING = XSD_NS + "string"
RDF_TYPE = RDF_NS + "type"

# Characters that cannot appear unescaped inside <...> without breaking the
# serialization (whitespace and angle brackets per the data model invariant,
# plus the characters N-Triples IRIREFs exclude).
_IRI_FORBIDDEN = set(' \t\n\r\f\v<>"{}|^`\\')

_BLANK_LABEL_RE = re.compile(r"[A-Za-z][A-Za-z0-9]*\Z")
_VAR_NAME_RE = re.compile(r"[A-Za-z][A-Za-z0-9_]*\Z")
_LANG_TAG_RE = re.compile(r"[A-Za-z]+(-[A-Za-z0-9]+)*\Z")


class NTriplesError(ValueError):
    """Malformed N-Triples input; carries a 1-based line and column."""

    def __init__(self, line: int, column: int, message: str):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column
        self.message = message


@dataclass(frozen=True)
class IRI:
    value: str

    def __post_init__(self) -> None:
        if not self.value:
            raise ValueError("IRI must be non-empty")
        bad = _IRI_FORBIDDEN.intersection(self.value)
        if bad:
            raise ValueError(f"IRI contains forbidden character(s) {sorted(bad)!r}: {self.value!r}")


@dataclass(frozen=True)
class BlankNode:
    label: str

    def __post_init__(self) -> None:
        if not _BLANK_LABEL_RE.match(self.label):
            raise ValueError(f"invalid blank node label: {self.label!r}")


@dataclass(frozen=True)
class Literal:
    """A literal term.

    Carries either a language tag (datatype stays the default string type)
    or a datatype IRI, never both. Equality is term equality over
    (lexical, datatype, language); value comparison is the filter layer's
    business.
    """

    lexical: str
    datatype: str = XSD_STRING
    language: str | None = None

    def __post_init__(self) -> None:
        if "\r" in self.lexical:
            raise ValueError("literal lexical form may not contain carriage returns")
        if self.language is not None:
            if self.datatype != XSD_STRING:
                raise ValueError("a literal cannot carry both a language tag and a datatype")
            if not _LANG_TAG_RE.match(self.language):
                raise ValueError(f"invalid language tag: {self.language!r}")
        IRI(self.datatype)  # datatype must itself be a well-formed IRI


Term = Union[IRI, BlankNode, Literal]


@dataclass(frozen=True)
class Variable:
    name: str

    def __post_init__(self) -> None:
        if not _VAR_NAME_RE.match(self.name):
            raise ValueError(f"invalid variable name: {self.name!r}")


def _escape(text: str) -> str:
    return (
        text.replace("\\", "\\\\")
        .replace('"', '\\"')
        .replace("\n", "\\n")
        .replace("\t", "\\t")
    )


def term_text(term: Term) -> str:
    """Canonical N-Triples token for a term; doubles as the sort key."""
    if isinstance(term, IRI):
        return f"<{term.value}>"
    if isinstance(term, BlankNode):
        return f"_:{term.label}"
    if isinstance(term, Literal):
        base = f'"{_escape(term.lexical)}"'
        if term.language is not None:
            return f"{base}@{term.language}"
        if term.datatype != XSD_STRING:
            return f"{base}^^<{term.datatype}>"
        return base
    raise TypeError(f"not a term: {term!r}")


@dataclass(frozen=True)
class Triple:
    subject: Term
    predicate: Term
    object: Term

    def __post_init__(self) -> None:
        if isinstance(self.subject, Literal):
            raise ValueError("triple subject may not be a literal")
        if not isinstance(self.subject, (IRI, BlankNode)):
            raise TypeError("triple subject must be an IRI or blank node")
        if not isinstance(self.predicate, IRI):
            raise ValueError("triple predicate must be an IRI")
        if not isinstance(self.object, (IRI, BlankNode, Literal)):
            raise TypeError("triple object must be a term")

    def text(self) -> str:
        return f"{term_text(self.subject)} {term_text(self.predicate)} {term_text(self.object)} ."


PatternSlot = Union[IRI, BlankNode, Literal, Variable]


@dataclass(frozen=True)
class TriplePattern:
    """One basic graph pattern: each slot is a ground term or a variable.

    Ground slots that could never occur in that triple position (a literal
    subject, say) are allowed; such patterns simply match nothing.
    """

    subject: PatternSlot
    predicate: PatternSlot
    object: PatternSlot

    def slots(self) -> tuple[PatternSlot, PatternSlot, PatternSlot]:
        return (self.subject, self.predicate, self.object)

    def variables(self) -> set[str]:
        return {s.name for s in self.slots() if isinstance(s, Variable)}

    def text(self) -> str:
        def token(s: PatternSlot) -> str:
            return f"?{s.name}" if isinstance(s, Variable) else term_text(s)

        return " ".join(token(s) for s in self.slots())


BindingSet = dict  # variable name -> Term


def _binding_key(binding: dict[str, Term]) -> tuple:
    return tuple(sorted((name, term_text(term)) for name, term in binding.items()))


class Graph:
    """An immutable set of triples."""

    __slots__ = ("_triples", "_sorted")

    def __init__(self, triples: Iterable[Triple] = ()):
        self._triples: frozenset[Triple] = frozenset(triples)
        self._sorted: tuple[Triple, ...] | None = None

    def triples(self) -> frozenset[Triple]:
        return self._triples

    def _ordered(self) -> tuple[Triple, ...]:
        if self._sorted is None:
            self._sorted = tuple(sorted(self._triples, key=Triple.text))
        return self._sorted

    def __len__(self) -> int:
        return len(self._triples)

    def __iter__(self) -> Iterator[Triple]:
        return iter(self._ordered())

    def __contains__(self, triple: Triple) -> bool:
        return triple in self._triples

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Graph):
            return NotImplemented
        return self._triples == other._triples

    def __hash__(self) -> int:
        return hash(self._triples)

    def __repr__(self) -> str:
        return f"Graph({len(self._triples)} triples)"

    def insert(self, triple: Triple) -> "Graph":
        if triple in self._triples:
            return self
        return Graph(self._triples | {triple})

    def remove(self, triple: Triple) -> "Graph":
        if triple not in self._triples:
            return self
        return Graph(self._triples - {triple})

    def union(self, other: "Graph") -> "Graph":
        return Graph(self._triples | other._triples)

    def match(self, pattern: TriplePattern) -> list[dict[str, Term]]:
        """All bindings under which the pattern unifies with a triple.

        Ground slots must equal the triple's term; a variable repeated
        within the pattern must bind consistently. Result order is
        deterministic (sorted by canonical binding text).
        """
        results = []
        for triple in self._triples:
            binding = _unify(pattern, triple)
            if binding is not None:
                results.append(binding)
        results.sort(key=_binding_key)
        return results


def _unify(pattern: TriplePattern, triple: Triple) -> dict[str, Term] | None:
    binding: dict[str, Term] = {}
    for slot, term in zip(pattern.slots(), (triple.subject, triple.predicate, triple.object)):
        if isinstance(slot, Variable):
            bound = binding.get(slot.name)
            if bound is None:
                binding[slot.name] = term
            elif bound != term:
                return None
        elif slot != term:
            return None
    return binding


# --- N-Triples parsing ------------------------------------------------------

_ESCAPES = {'"': '"', "\\": "\\", "n": "\n", "t": "\t"}


class _LineScanner:
    def __init__(self, text: str, line_no: int):
        self.text = text
        self.line_no = line_no
        self.pos = 0

    def error(self, message: str) -> NTriplesError:
        return NTriplesError(self.line_no, self.pos + 1, message)

    def skip_ws(self) -> None:
        while self.pos < len(self.text) and self.text[self.pos] in " \t":
            self.pos += 1

    def peek(self) -> str:
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def at_end(self) -> bool:
        return self.pos >= len(self.text)

    def expect(self, char: str) -> None:
        if self.peek() != char:
            raise self.error(f"expected {char!r}")
        self.pos += 1

    def read_iri(self) -> IRI:
        self.expect("<")
        start = self.pos
        while not self.at_end() and self.peek() != ">":
            if self.text[self.pos] in _IRI_FORBIDDEN:
                raise self.error(f"forbidden character {self.text[self.pos]!r} in IRI")
            self.pos += 1
        if self.at_end():
            raise self.error("unterminated IRI")
        value = self.text[start : self.pos]
        self.pos += 1
        if not value:
            raise self.error("empty IRI")
        return IRI(value)

    def read_blank(self) -> BlankNode:
        self.expect("_")
        self.expect(":")
        start = self.pos
        while not self.at_end() and (self.text[self.pos].isalnum()):
            self.pos += 1
        label = self.text[start : self.pos]
        if not _BLANK_LABEL_RE.match(label):
            raise self.error(f"invalid blank node label {label!r}")
        return BlankNode(label)

    def read_literal(self) -> Literal:
        self.expect('"')
        chars: list[str] = []
        while True:
            if self.at_end():
                raise self.error("unterminated string literal")
            ch = self.text[self.pos]
            self.pos += 1
            if ch == '"':
                break
            if ch == "\\":
                if self.at_end():
                    raise self.error("dangling escape")
                esc = self.text[self.pos]
                self.pos += 1
                if esc not in _ESCAPES:
                    raise self.error(f"unsupported escape sequence \\{esc}")
                chars.append(_ESCAPES[esc])
            else:
                chars.append(ch)
        lexical = "".join(chars)
        if self.text.startswith("^^", self.pos):
            self.pos += 2
            datatype = self.read_iri()
            try:
                return Literal(lexical, datatype=datatype.value)
            except ValueError as exc:
                raise self.error(str(exc)) from exc
        if self.peek() == "@":
            self.pos += 1
            start = self.pos
            while not self.at_end() and (self.text[self.pos].isalnum() or self.text[self.pos] == "-"):
                self.pos += 1
            tag = self.text[start : self.pos]
            try:
                return Literal(lexical, language=tag)
            except ValueError as exc:
                raise self.error(str(exc)) from exc
        return Literal(lexical)

    def read_term(self) -> Term:
        ch = self.peek()
        if ch == "<":
            return self.read_iri()
        if ch == "_":
            return self.read_blank()
        if ch == '"':
            return self.read_literal()
        raise self.error(f"expected an IRI, blank node or literal, found {ch!r}" if ch else "unexpected end of line")


def parse_ntriples(text: str) -> Graph:
    """Parse N-Triples text into a graph.

    Blank lines and ``#`` comment lines are skipped; duplicate statements
    collapse (set semantics). Raises :class:`NTriplesError` on the first
    malformed line; nothing is returned for partially valid input.
    """
    triples: set[Triple] = set()
    for line_no, raw in enumerate(text.split("\n"), start=1):
        scanner = _LineScanner(raw.rstrip("\r"), line_no)
        scanner.skip_ws()
        if scanner.at_end() or scanner.peek() == "#":
            continue
        subject = scanner.read_term()
        scanner.skip_ws()
        predicate = scanner.read_term()
        scanner.skip_ws()
        obj = scanner.read_term()
        scanner.skip_ws()
        scanner.expect(".")
        scanner.skip_ws()
        if not scanner.at_end() and scanner.peek() != "#":
            raise scanner.error("trailing content after statement")
        try:
            triples.add(Triple(subject, predicate, obj))
        except ValueError as exc:
            raise NTriplesError(line_no, 1, str(exc)) from exc
    return Graph(triples)


def serialize_ntriples(graph: Graph) -> str:
    """One statement per line, sorted by canonical (s, p, o) text.

    ``parse_ntriples(serialize_ntriples(g)) == g`` for every graph.
    """
    return "".join(t.text() + "\n" for t in graph)
