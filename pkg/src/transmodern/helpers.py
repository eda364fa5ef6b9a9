"""
Contains stand-alone helper functions.
"""

import hashlib
import typing
from pathlib import Path

from .errors import TsvFormatError

T_path = str | Path


def camel_to_snake(s: str) -> str:
    """
    Convert CamelCase to snake_case.

    Source:
        https://stackoverflow.com/questions/1175208/elegant-python-function-to-convert-camelcase-to-snake-case
    """
    return "".join([f"_{c.lower()}" if c.isupper() else c for c in s]).lstrip("_")


def derive_seed(seed: int, *names: str | int) -> int:
    """
    Fan a root seed out into a named sub-seed.

    The same (seed, names) always yields the same 63-bit integer, independent of PYTHONHASHSEED.

    Example:
        derive_seed(0, "pretrain", 1, 17) -> seed for stage 1, step 17
    """
    key = "/".join([str(seed), *(str(n) for n in names)])
    digest = hashlib.blake2b(key.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") >> 1


def read_lines(path: T_path) -> list[str]:
    """
    Read a UTF-8 text file into non-empty, right-stripped lines.
    """
    with Path(path).open("r", encoding="utf-8") as f:
        return [line.rstrip("\r\n") for line in f if line.strip()]


def read_tsv(path: T_path, columns: int, *, at_least: bool = False) -> typing.Iterator[list[str]]:
    """
    Yield the fields of every non-empty line of a TSV file.

    With `at_least`, lines may carry more than `columns` fields (e.g. optional pair-task columns).
    """
    with Path(path).open("r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) < columns or (not at_least and len(fields) != columns):
                raise TsvFormatError(str(path), line_no, f"expected {columns} tab-separated fields, got {len(fields)}")
            yield fields


def write_tsv(path: T_path, rows: typing.Iterable[typing.Sequence[typing.Any]]) -> None:
    """
    Write rows as tab-separated UTF-8 lines.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as f:
        for row in rows:
            f.write("\t".join(str(value) for value in row))
            f.write("\n")
