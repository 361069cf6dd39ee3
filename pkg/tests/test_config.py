import json

import pytest

from inpatient_map.config import RunConfig, from_dict, load_config
from inpatient_map.errors import InputError


def test_defaults_are_valid():
    cfg = load_config(None)
    assert cfg.retrieval.k == 10 and cfg.record_review.threshold == 0.1
    assert cfg.guidance.stages == ["triage", "diagnosis", "treatment"]


def test_hash_is_stable_and_canonical():
    a = from_dict({"retrieval": {"k": 5}, "seed": 1})
    b = from_dict({"seed": 1, "retrieval": {"k": 5}})
    assert a.config_hash == b.config_hash
    assert a.config_hash != RunConfig().config_hash
    assert len(a.config_hash) == 16


@pytest.mark.parametrize("bad", [
    {"bogus": 1},
    {"retrieval": {"kk": 3}},
    {"backend": {"kind": "grpc"}},
    {"record_review": {"score": "median"}},
    {"guidance": {"stages": ["discharge"]}},
    {"retrieval": {"k": 0}},
])
def test_invalid_configs(bad):
    with pytest.raises(InputError):
        from_dict(bad)


def test_relative_paths_resolve_against_config_dir(tmp_path):
    (tmp_path / "cfg.json").write_text(json.dumps({"backend": {"rules": "rules.json"}}))
    assert load_config(tmp_path / "cfg.json").backend.rules == str(tmp_path / "rules.json")


def test_disable_returns_copy():
    cfg = RunConfig()
    off = cfg.disable(["record_review", "guidance"])
    assert cfg.record_review.enabled and not off.record_review.enabled and not off.guidance.enabled
    with pytest.raises(InputError):
        cfg.disable(["chief"])


def test_unreadable_config(tmp_path):
    (tmp_path / "c.json").write_text("{")
    with pytest.raises(InputError):
        load_config(tmp_path / "c.json")
