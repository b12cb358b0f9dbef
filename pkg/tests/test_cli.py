"""CLI: subcommand wiring, exit codes, --json parity with the engine."""
import json
import os

import pytest

from eockit import kpi
from eockit.cli import main
from eockit.config import ConfigError, load_config
from eockit.model import canonical_json, parse_instant
from eockit.repository import Repository

CONFIG_TEMPLATE = """\
[repository]
root = ./repo

[kpi]
bed_capacity = 50

[source:adt]
path = ./data/adt.csv
format = CSV
profile = adt_ptbr
kind = ADT

[source:billing]
path = ./data/billing.jsonl
format = JSONL
profile = billing_v1
kind = BILLING

[source:clinical]
path = ./data/clinical.jsonl
format = JSONL
profile = clinical_v1
kind = CLINICAL
"""


@pytest.fixture()
def workspace(tmp_path):
    cfg = tmp_path / "eoc.ini"
    cfg.write_text(CONFIG_TEMPLATE)
    rc = main(["generate", "--seed", "7", "--patients", "10", "--days", "20",
               "--out", str(tmp_path / "data")])
    assert rc == 0
    return tmp_path, str(cfg)


def test_generate_then_ingest_then_kpi(workspace, capsys):
    tmp, cfg = workspace
    assert main(["--config", cfg, "ingest"]) == 0
    out = capsys.readouterr().out
    assert "adt:" in out and "watermark=" in out
    assert main(["--config", cfg, "kpi", "ADMISSION_COUNT",
                 "--from", "2015-03-01T00:00:00Z", "--to", "2015-04-01T00:00:00Z",
                 "--bucket", "WEEK"]) == 0
    table = capsys.readouterr().out
    assert table.splitlines()[0].startswith("bucket")


def test_kpi_json_byte_equal_to_engine(workspace, capsys):
    tmp, cfg = workspace
    main(["--config", cfg, "ingest"])
    capsys.readouterr()
    rc = main(["--config", cfg, "kpi", "AVG_LOS",
               "--from", "2015-03-01T00:00:00Z", "--to", "2015-04-01T00:00:00Z",
               "--group-by", "gender", "--json"])
    assert rc == 0
    got = capsys.readouterr().out
    config = load_config(cfg)
    with Repository.open(config.repository_root, "ro") as repo:
        q = kpi.KpiQuery(kpi="AVG_LOS",
                         time_from=parse_instant("2015-03-01T00:00:00Z"),
                         time_to=parse_instant("2015-04-01T00:00:00Z"),
                         group_by=("gender",))
        want = canonical_json(kpi.compute_kpi(repo, q, config.kpi_settings))
    assert got == want + "\n"


def test_missing_config_is_exit_1(capsys, monkeypatch):
    monkeypatch.delenv("EOC_CONFIG", raising=False)
    assert main(["ingest"]) == 1
    assert "error:" in capsys.readouterr().err
    assert main(["--config", "/no/such/file.ini", "ingest"]) == 1


def test_env_config_fallback(workspace, capsys, monkeypatch):
    tmp, cfg = workspace
    monkeypatch.setenv("EOC_CONFIG", cfg)
    assert main(["ingest"]) == 0


def test_usage_error_is_exit_2():
    with pytest.raises(SystemExit) as exc:
        main(["kpi"])  # missing required arguments
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2


def test_unknown_kpi_is_exit_1(workspace, capsys):
    tmp, cfg = workspace
    main(["--config", cfg, "ingest"])
    capsys.readouterr()
    assert main(["--config", cfg, "kpi", "NOPE",
                 "--from", "2015-03-01T00:00:00Z",
                 "--to", "2015-04-01T00:00:00Z"]) == 1
    assert "unknown KPI" in capsys.readouterr().err


def test_forecast_insufficient_history_exit_1(workspace, capsys):
    tmp, cfg = workspace
    main(["--config", cfg, "ingest"])
    capsys.readouterr()
    assert main(["--config", cfg, "forecast", "REVENUE",
                 "--from", "2015-03-01T00:00:00Z", "--to", "2015-04-01T00:00:00Z",
                 "--horizon", "2"]) == 1
    assert "history" in capsys.readouterr().err


def test_bad_filter_exit_1(workspace, capsys):
    tmp, cfg = workspace
    main(["--config", cfg, "ingest"])
    capsys.readouterr()
    assert main(["--config", cfg, "kpi", "AVG_LOS",
                 "--from", "2015-03-01T00:00:00Z", "--to", "2015-04-01T00:00:00Z",
                 "--filter", "los >= "]) == 1


# --- config file parsing -----------------------------------------------------

def test_config_relative_paths_resolve_against_file(workspace):
    tmp, cfg = workspace
    config = load_config(cfg)
    assert config.repository_root == str(tmp / "repo")
    assert config.sources[0].path == str(tmp / "data" / "adt.csv")


def test_config_defaults_and_validation(tmp_path):
    p = tmp_path / "c.ini"
    p.write_text("[repository]\nroot = r\n")
    config = load_config(str(p))
    assert config.server_port == 8000
    assert config.linkage.grace_window_hours == 72
    assert config.kpi_settings.antibiotic_classes == ("antibiotic",)
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "missing.ini"))
    p.write_text("[server]\nport = 1\n")
    with pytest.raises(ConfigError):
        load_config(str(p))


def test_config_rejects_bad_source(tmp_path):
    p = tmp_path / "c.ini"
    p.write_text("[repository]\nroot = r\n[source:x]\nformat = CSV\n"
                 "profile = adt_ptbr\n")
    with pytest.raises(ConfigError):
        load_config(str(p))
