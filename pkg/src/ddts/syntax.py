"""Strict structured-text reading and writing.

Definition files and the hook wire protocol share one format: a YAML subset
made of mappings, sequences and plain scalars (str, int, float, bool, null).
Anchors, aliases, explicit tags, merge keys, timestamps and sexagesimal
numbers are not part of the subset.  Mapping keys must be unique strings.

Writing uses PyYAML's stock YAML 1.1 resolver to decide quoting.  Every
scalar this reader types as non-string is also non-string under YAML 1.1,
so anything :func:`dump` writes reads back unchanged.
"""

from __future__ import annotations

import re
from pathlib import PurePath
from typing import Any

import yaml
from yaml.composer import Composer
from yaml.constructor import ConstructorError, SafeConstructor
from yaml.parser import Parser
from yaml.reader import Reader
from yaml.resolver import BaseResolver
from yaml.scanner import Scanner

__all__ = ["SyntaxProblem", "loads", "dump"]


class SyntaxProblem(Exception):
    def __init__(self, line: int | None, problem: str) -> None:
        self.line = line
        self.problem = problem
        super().__init__(problem if line is None else f"line {line}: {problem}")


class _StrictResolver(BaseResolver):
    pass


_StrictResolver.add_implicit_resolver(
    "tag:yaml.org,2002:bool",
    re.compile(r"^(?:true|True|TRUE|false|False|FALSE)$"),
    list("tTfF"),
)
_StrictResolver.add_implicit_resolver(
    "tag:yaml.org,2002:int",
    re.compile(r"^(?:[-+]?(?:0|[1-9][0-9_]*)|[-+]?0x[0-9a-fA-F_]+)$"),
    list("-+0123456789"),
)
_StrictResolver.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(
        r"""^(?:[-+]?(?:[0-9][0-9_]*)\.[0-9_]*(?:[eE][-+][0-9]+)?
        |\.[0-9_]+(?:[eE][-+][0-9]+)?
        |[-+]?\.(?:inf|Inf|INF)
        |\.(?:nan|NaN|NAN))$""",
        re.X,
    ),
    list("-+0123456789."),
)
_StrictResolver.add_implicit_resolver(
    "tag:yaml.org,2002:null",
    re.compile(r"^(?:~|null|Null|NULL|)$"),
    ["~", "n", "N", ""],
)


class _StrictConstructor(SafeConstructor):
    def construct_mapping(self, node, deep=False):
        if not isinstance(node, yaml.MappingNode):
            raise ConstructorError(None, None, "expected a mapping", node.start_mark)
        mapping: dict[str, Any] = {}
        for key_node, value_node in node.value:
            key = self.construct_object(key_node, deep=deep)
            if not isinstance(key, str):
                raise ConstructorError(
                    None, None, f"mapping key {key!r} is not a string", key_node.start_mark
                )
            if key == "<<" and key_node.style is None:
                raise ConstructorError(
                    None, None, "merge keys are not allowed", key_node.start_mark
                )
            if key in mapping:
                raise ConstructorError(
                    None, None, f"duplicate key '{key}'", key_node.start_mark
                )
            mapping[key] = self.construct_object(value_node, deep=deep)
        return mapping


class _StrictLoader(Reader, Scanner, Parser, Composer, _StrictConstructor, _StrictResolver):
    def __init__(self, stream):
        Reader.__init__(self, stream)
        Scanner.__init__(self)
        Parser.__init__(self)
        Composer.__init__(self)
        _StrictConstructor.__init__(self)
        _StrictResolver.__init__(self)

    def compose_node(self, parent, index):
        event = self.peek_event()
        if isinstance(event, yaml.AliasEvent):
            raise SyntaxProblem(event.start_mark.line + 1, "aliases are not allowed")
        if getattr(event, "anchor", None) is not None:
            raise SyntaxProblem(event.start_mark.line + 1, "anchors are not allowed")
        if getattr(event, "tag", None) is not None:
            raise SyntaxProblem(event.start_mark.line + 1, f"explicit tag {event.tag} is not allowed")
        return super().compose_node(parent, index)


def loads(text: str) -> Any:
    """Parse one document. An empty document yields ``None``."""
    loader = _StrictLoader(text)
    try:
        return loader.get_single_data()
    except SyntaxProblem:
        raise
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark or exc.context_mark
        line = mark.line + 1 if mark is not None else None
        raise SyntaxProblem(line, exc.problem or str(exc)) from exc
    except yaml.YAMLError as exc:
        raise SyntaxProblem(None, str(exc)) from exc
    finally:
        loader.dispose()


class _StrictDumper(yaml.SafeDumper):
    def ignore_aliases(self, data):
        return True


_LINE_BREAKS = re.compile("[\x85\u2028\u2029]")


def _represent_str(dumper: yaml.SafeDumper, value: str) -> yaml.ScalarNode:
    # PyYAML writes these Unicode line breaks raw in plain scalars, where a
    # reader folds them; the double-quoted style escapes them instead.
    if _LINE_BREAKS.search(value):
        return dumper.represent_scalar("tag:yaml.org,2002:str", value, style='"')
    return dumper.represent_str(value)


_StrictDumper.add_representer(str, _represent_str)
_StrictDumper.add_representer(tuple, lambda d, v: d.represent_list(list(v)))
_StrictDumper.add_multi_representer(PurePath, lambda d, v: d.represent_str(str(v)))


def dump(data: Any, sort_keys: bool = True) -> str:
    return yaml.dump(
        data,
        Dumper=_StrictDumper,
        default_flow_style=False,
        sort_keys=sort_keys,
        allow_unicode=True,
        width=1 << 16,
    )
