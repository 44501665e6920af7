"""The ``.acon`` concept language: parser, serializer and sampling validator."""
from __future__ import annotations

from importlib import resources
from pathlib import Path

from .parser import ParseError, TypeMismatch, UnboundSymbol, parse_concept, tokenize
from .serialize import serialize_concept
from .validate import ValidationReport, Violation, validate_concept

__all__ = [
    "ParseError", "TypeMismatch", "UnboundSymbol", "parse_concept", "tokenize",
    "serialize_concept", "ValidationReport", "Violation", "validate_concept",
    "load_concept_file", "load_library", "library_files", "dump_registry",
]


def load_concept_file(path):
    data = Path(path).read_bytes()
    try:
        return parse_concept(data)
    except ParseError as exc:
        raise ParseError(exc.line, exc.column, f"{path}: {exc.message}", exc.expected) from None


def library_files() -> list:
    root = resources.files("conceptkit") / "library"
    return sorted((p for p in root.iterdir() if p.name.endswith(".acon")), key=lambda p: p.name)


_LIBRARY = None


def load_library():
    """Registry of every concept shipped in ``conceptkit/library``."""
    global _LIBRARY
    if _LIBRARY is None:
        from ..concepts import ConceptRegistry, register

        reg = ConceptRegistry()
        for entry in library_files():
            try:
                concept = parse_concept(entry.read_bytes())
            except ParseError as exc:
                raise ParseError(exc.line, exc.column, f"{entry.name}: {exc.message}", exc.expected) from None
            reg = register(reg, concept)
        _LIBRARY = reg
    return _LIBRARY


def dump_registry(registry, directory) -> list:
    """Write one ``<id>.acon`` file per concept; returns the written paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for cid in registry:
        p = directory / f"{cid}.acon"
        p.write_bytes(serialize_concept(registry[cid]).encode("utf-8"))
        paths.append(p)
    return paths
