"""Platform configuration file (INI-style sections, key = value).

Example:

    [repository]
    root = ./repo

    [server]
    port = 8000
    bind = 127.0.0.1

    [linkage]
    grace_window_hours = 72
    session_gap_hours = 24

    [kpi]
    bed_capacity = 50
    antibiotic_classes = antibiotic

    [source:adt]
    path = ./data/adt.csv
    format = CSV
    profile = adt_ptbr
    kind = ADT
"""
from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field
from typing import List, Tuple

from .builder import LinkagePolicy
from .extractor import SourceConfig
from .kpi import KpiSettings


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PlatformConfig:
    repository_root: str
    sources: Tuple[SourceConfig, ...]
    linkage: LinkagePolicy
    kpi_settings: KpiSettings
    server_port: int = 8000
    server_bind: str = "127.0.0.1"


def load_config(path: str) -> PlatformConfig:
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    cp = configparser.ConfigParser()
    cp.read(path, encoding="utf-8")
    if "repository" not in cp or "root" not in cp["repository"]:
        raise ConfigError("config requires [repository] root")
    base = os.path.dirname(os.path.abspath(path))

    def resolve(p: str) -> str:
        return p if os.path.isabs(p) else os.path.normpath(os.path.join(base, p))

    sources = []
    seen = set()
    for section in cp.sections():
        if not section.startswith("source:"):
            continue
        source_id = section.split(":", 1)[1]
        if source_id in seen:
            raise ConfigError(f"duplicate source id {source_id!r}")
        seen.add(source_id)
        s = cp[section]
        try:
            sources.append(SourceConfig(
                source_id=source_id,
                path=resolve(s["path"]),
                format=s["format"].upper(),
                mapping_profile=s["profile"],
                kind=s.get("kind", "CLINICAL").upper(),
            ))
        except KeyError as ex:
            raise ConfigError(f"[{section}] missing key {ex.args[0]!r}") from ex

    link = cp["linkage"] if "linkage" in cp else {}
    kpi = cp["kpi"] if "kpi" in cp else {}
    server = cp["server"] if "server" in cp else {}
    antibiotics = tuple(
        x.strip() for x in str(kpi.get("antibiotic_classes", "antibiotic")).split(",")
        if x.strip())
    bed_capacity = int(kpi.get("bed_capacity", 10))
    if bed_capacity < 1:
        raise ConfigError("bed_capacity must be >= 1")
    return PlatformConfig(
        repository_root=resolve(cp["repository"]["root"]),
        sources=tuple(sources),
        linkage=LinkagePolicy(
            grace_window_hours=int(link.get("grace_window_hours", 72)),
            session_gap_hours=int(link.get("session_gap_hours", 24)),
        ),
        kpi_settings=KpiSettings(bed_capacity=bed_capacity,
                                 antibiotic_classes=antibiotics),
        server_port=int(server.get("port", 8000)),
        server_bind=str(server.get("bind", "127.0.0.1")),
    )
