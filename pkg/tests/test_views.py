import json
import logging

import pytest

from warpboard.features.views import DEFAULT_VIEWS, VIEWS_PATH, load_views, resolve_views, save_views


def test_missing_file_gives_defaults(tmp_path):
    assert load_views(tmp_path / "views.json") == DEFAULT_VIEWS


def test_save_and_load_keep_order(tmp_path):
    path = tmp_path / "sub" / "views.json"
    views = {"b": (0.1, 0.0), "a": (-0.2, 0.05)}
    save_views(views, path)
    assert list(load_views(path).items()) == list(views.items())


def test_invalid_entries_are_skipped(tmp_path, caplog):
    path = tmp_path / "views.json"
    path.write_text(json.dumps({"ok": [0.1, 0.0], "bad": "x", "steep": [0.0, 2.0]}))
    with caplog.at_level(logging.WARNING):
        views = load_views(path)
    assert views == {"ok": (0.1, 0.0)}
    assert "bad" in caplog.text and "steep" in caplog.text


def test_unreadable_file_falls_back(tmp_path):
    path = tmp_path / "views.json"
    path.write_text("{not json")
    assert load_views(path) == DEFAULT_VIEWS


def test_resolve_views():
    assert list(resolve_views(["left", "front"], DEFAULT_VIEWS)) == ["left", "front"]
    with pytest.raises(ValueError):
        resolve_views(["sideways"], DEFAULT_VIEWS)


def test_shipped_presets_match_defaults():
    assert VIEWS_PATH.exists()
    assert load_views(VIEWS_PATH) == DEFAULT_VIEWS
