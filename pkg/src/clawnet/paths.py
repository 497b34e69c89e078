"""Lexical path normalization and prefix containment.

This is the server-side path model: purely lexical, never touches a file
system. Symbolic links are resolved only at the node endpoint, which has
physical access. All paths here use '/' separators regardless of host OS.
"""

from __future__ import annotations


class MalformedPath(ValueError):
    """Path cannot be normalized (relative, escapes root, control chars)."""


def normalize(path: str) -> str:
    """Normalize an absolute path lexically.

    Collapses '.' and empty segments, resolves '..' against the stack, and
    strips trailing separators (except for the root itself). Raises
    MalformedPath for anything that is not a clean absolute path: relative
    paths, paths whose '..' segments climb above the root, and paths
    containing control characters (which would also break the line-oriented
    audit format).
    """
    if not isinstance(path, str) or not path:
        raise MalformedPath("empty path")
    if any(ord(ch) < 0x20 or ch == "\x7f" for ch in path):
        raise MalformedPath("control character in path")
    if not path.startswith("/"):
        raise MalformedPath(f"not absolute: {path!r}")
    stack: list[str] = []
    for seg in path.split("/"):
        if seg in ("", "."):
            continue
        if seg == "..":
            if not stack:
                raise MalformedPath(f"escapes root: {path!r}")
            stack.pop()
        else:
            stack.append(seg)
    return "/" + "/".join(stack)


def is_within(path: str, prefix: str) -> bool:
    """True if `path` equals `prefix` or lies underneath it.

    Both arguments must already be normalized.
    """
    if prefix == "/":
        return True
    return path == prefix or path.startswith(prefix + "/")


def try_normalize(path: str) -> str | None:
    """normalize() that returns None instead of raising."""
    try:
        return normalize(path)
    except MalformedPath:
        return None
