"""Independent oracles used by the test suite.

These deliberately re-derive expected results through different mechanisms
than the implementation: tuple-prefix containment via PurePosixPath instead
of string prefixes, a standalone netstring decoder and re-hasher for the
audit chain, and a full-content snapshot for tree comparison.
"""

from __future__ import annotations

import hashlib
import os
import re
from pathlib import PurePosixPath


def oracle_normalize(path):
    """Lexical normalization per the model rules; None when malformed."""
    if not isinstance(path, str) or not path or path[0] != "/":
        return None
    if any(ord(c) < 0x20 or ord(c) == 0x7F for c in path):
        return None
    stack = []
    for seg in path.split("/"):
        if seg in ("", "."):
            continue
        if seg == "..":
            if not stack:
                return None
            stack.pop()
        else:
            stack.append(seg)
    return "/" + "/".join(stack)


def oracle_l1(grants, path, mutative):
    """Brute-force grant enumeration. grants: [(prefix, 'read_only'|'mutative')].

    Returns ('allow', None) or ('deny', reason).
    """
    norm = oracle_normalize(path)
    if norm is None:
        return ("deny", "malformed_path")
    norm_parts = PurePosixPath(norm).parts
    saw_prefix = False
    for prefix, klass in grants:
        p_parts = PurePosixPath(prefix).parts
        if norm_parts[: len(p_parts)] == p_parts:
            saw_prefix = True
            if klass == "mutative" or not mutative:
                return ("allow", None)
    if saw_prefix and mutative:
        return ("deny", "class_insufficient")
    return ("deny", "out_of_scope")


def decode_netstring_fields(blob: bytes) -> list[str]:
    fields = []
    i = 0
    while i < len(blob):
        j = blob.index(b":", i)
        n = int(blob[i:j])
        fields.append(blob[j + 1 : j + 1 + n].decode("utf-8"))
        i = j + 1 + n
    return fields


def oracle_verify_log(path: str):
    """Re-hash every persisted record from the raw bytes; first break or None."""
    prev_hex = "00" * 32
    with open(path, "rb") as fh:
        for i, line in enumerate(fh):
            line = line.rstrip(b"\n")
            if not line:
                continue
            try:
                body, sep, stored_hex = line.rpartition(b" ")
                if not sep:
                    return i
                fields = decode_netstring_fields(body)
                if int(fields[0]) != i:
                    return i
                if fields[-1] != prev_hex:
                    return i
                if hashlib.sha256(body).hexdigest() != stored_hex.decode():
                    return i
                prev_hex = stored_hex.decode()
            except Exception:
                return i
    return None


def snapshot_tree(root: str) -> dict:
    """Full-content snapshot: relpath -> (kind, payload bytes/link target)."""
    out = {}
    for dirpath, dirnames, filenames in os.walk(root):
        for d in dirnames:
            full = os.path.join(dirpath, d)
            rel = os.path.relpath(full, root)
            if os.path.islink(full):
                out[rel] = ("link", os.readlink(full))
            else:
                out[rel] = ("dir", "")
        for f in filenames:
            full = os.path.join(dirpath, f)
            rel = os.path.relpath(full, root)
            if os.path.islink(full):
                out[rel] = ("link", os.readlink(full))
            else:
                with open(full, "rb") as fh:
                    out[rel] = ("file", fh.read())
    return out


def oracle_context_filter(entries, question, context_tag):
    """Retrieval rule re-derivation: keys whose token set intersects the
    query's, or which appear verbatim (case-insensitive) in the query."""
    text = (question + " " + context_tag).lower()
    words = set(re.split(r"[^a-z0-9]+", text)) - {""}
    keep = []
    for e in entries:
        key_words = set(re.split(r"[^a-z0-9]+", e.key.lower())) - {""}
        if e.key.lower() in text or key_words & words:
            keep.append(e)
    return keep
