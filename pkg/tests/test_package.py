"""Package layout and annotation style."""

import re
from pathlib import Path

import pytest

import rtbconfig

MODULES = sorted(Path(rtbconfig.__file__).parent.glob("*.py"))
LEGACY_TYPING = re.compile(r"\b(Optional|Union|List|Dict|Tuple|Set)\[")


@pytest.mark.parametrize("path", MODULES, ids=lambda path: path.name)
def test_module_carries_license_header(path):
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "# Copyright 2021, Milan Meulemans."
    assert "# This file is part of rtbconfig." in lines[:4]


@pytest.mark.parametrize("path", MODULES, ids=lambda path: path.name)
def test_annotations_use_builtin_generics(path):
    source = path.read_text(encoding="utf-8")
    assert not LEGACY_TYPING.findall(source)
    if path.name != "__init__.py":
        assert "from __future__ import annotations" in source


def test_runtime_union_alias():
    from rtbconfig.dataset import RowIndex

    assert slice in RowIndex.__args__
