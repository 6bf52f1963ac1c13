"""Run manifests."""

import hashlib
import json

import pytest

from rtbconfig.exceptions import DataError
from rtbconfig.manifest import RunManifest, file_digest, manifest_path


def test_file_digest(tmp_path):
    path = tmp_path / "a.txt"
    path.write_bytes(b"abc")
    assert file_digest(path) == hashlib.sha256(b"abc").hexdigest()


def test_manifest_path(tmp_path):
    assert manifest_path(tmp_path / "ranked.csv").name == "ranked.csv.manifest.json"
    assert manifest_path(tmp_path) == tmp_path / "manifest.json"


def test_write_load_and_change_detection(tmp_path):
    source = tmp_path / "in.csv"
    target = tmp_path / "out.csv"
    source.write_text("1\n")
    target.write_text("2\n")
    manifest = RunManifest(argv=["search", str(source)], command="search", config={"limit": 5}, seed=3)
    manifest.record_inputs([source])
    manifest.record_outputs([target])
    path = manifest.write(manifest_path(target))

    document = json.loads(path.read_text())
    assert document["inputs"] == {str(source): file_digest(source)}
    assert document["finished_at"]

    back = RunManifest.load(path)
    assert back == manifest
    assert back.changed_inputs() == [] and back.changed_outputs() == []
    source.write_text("changed\n")
    target.unlink()
    assert back.changed_inputs() == [str(source)]
    assert back.changed_outputs() == [str(target)]


def test_load_rejects_garbage(tmp_path):
    path = tmp_path / "manifest.json"
    path.write_text("{not json")
    with pytest.raises(DataError):
        RunManifest.load(path)


def test_unserializable_config_leaves_no_file(tmp_path):
    path = tmp_path / "out.csv.manifest.json"
    with pytest.raises(TypeError):
        RunManifest(argv=[], command="experiment", config={"logs": [tmp_path]}).write(path)
    assert not path.exists()

    RunManifest(argv=[], command="experiment", config={"logs": [str(tmp_path)]}).write(path)
    before = path.read_bytes()
    with pytest.raises(TypeError):
        RunManifest(argv=[], command="experiment", config={"seed": object()}).write(path)
    assert path.read_bytes() == before
