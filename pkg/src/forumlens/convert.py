"""Convert official NVD / MITRE CAPEC feed exports into the normalized snapshot.

Supported inputs:
  * NVD CVE JSON, both the 2.0 API shape (``vulnerabilities``) and the legacy
    1.1 feed shape (``CVE_Items``), for the CVE -> CWE pairs.
  * CAPEC XML (capec.mitre.org "Mechanisms of Attack" export, any capec-3.x
    namespace) for CAPEC entries, CWE links, hierarchy and skill scenarios.

The output is the ``cve_cwe.csv`` / ``capec.json`` pair that
:func:`forumlens.catalog.load_snapshot` reads.
"""

from __future__ import annotations

import json
import logging
import re
from pathlib import Path
from xml.etree import ElementTree

from .catalog import CapecEntry, CatalogSnapshot, CveEntry, SkillLevel, build_snapshot, save_snapshot
from .errors import ValidationError
from .ingest import CveId

logger = logging.getLogger(__name__)

_CWE_VALUE_RE = re.compile(r"CWE-(\d+)", re.IGNORECASE)


def _localname(tag: str) -> str:
    return tag.rsplit("}", 1)[-1]


def parse_nvd_cve_json(path: str | Path) -> list[CveEntry]:
    """Extract (CVE, CWE set) pairs from an NVD JSON dump."""
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    entries: dict[CveId, set[str]] = {}

    def add(cve_text: str, descriptions) -> None:
        try:
            cve = CveId.parse(cve_text)
        except ValidationError:
            logger.warning("skipping malformed CVE id %r", cve_text)
            return
        cwes = entries.setdefault(cve, set())
        for desc in descriptions:
            value = desc.get("value", "")
            m = _CWE_VALUE_RE.search(value)
            if m:  # ignores NVD-CWE-noinfo / NVD-CWE-Other
                cwes.add(f"CWE-{int(m.group(1))}")

    if "vulnerabilities" in data:  # 2.0 API shape
        for item in data["vulnerabilities"]:
            cve_obj = item.get("cve", {})
            descriptions = [
                d
                for weakness in cve_obj.get("weaknesses", ())
                for d in weakness.get("description", ())
            ]
            add(cve_obj.get("id", ""), descriptions)
    elif "CVE_Items" in data:  # legacy 1.1 feed shape
        for item in data["CVE_Items"]:
            cve_obj = item.get("cve", {})
            descriptions = [
                d
                for ptd in cve_obj.get("problemtype", {}).get("problemtype_data", ())
                for d in ptd.get("description", ())
            ]
            add(cve_obj.get("CVE_data_meta", {}).get("ID", ""), descriptions)
    else:
        raise ValidationError(f"{path}: unrecognized NVD JSON shape")

    return [CveEntry(cve_id=cve, cwe_ids=frozenset(cwes)) for cve, cwes in entries.items()]


def parse_capec_xml(path: str | Path) -> list[CapecEntry]:
    """Extract CAPEC entries from an official CAPEC XML export."""
    try:
        tree = ElementTree.parse(path)
    except ElementTree.ParseError as exc:
        raise ValidationError(f"{path}: not parseable XML: {exc}") from exc

    entries: list[CapecEntry] = []
    for node in tree.getroot().iter():
        if _localname(node.tag) != "Attack_Pattern":
            continue
        capec_id = node.get("ID")
        if capec_id is None:
            continue
        name = node.get("Name", "")

        cwes: set[str] = set()
        parents: set[int] = set()
        children: set[int] = set()
        skills: list[SkillLevel] = []
        for child in node.iter():
            local = _localname(child.tag)
            if local == "Related_Weakness" and child.get("CWE_ID"):
                cwes.add(f"CWE-{int(child.get('CWE_ID'))}")
            elif local == "Related_Attack_Pattern" and child.get("CAPEC_ID"):
                nature = (child.get("Nature") or "").lower()
                other = int(child.get("CAPEC_ID"))
                if nature == "childof":
                    parents.add(other)
                elif nature == "parentof":
                    children.add(other)
            elif local == "Skill" and child.get("Level"):
                try:
                    skills.append(SkillLevel.parse(child.get("Level")))
                except ValidationError:
                    logger.warning(
                        "CAPEC %s: ignoring unknown skill level %r", capec_id, child.get("Level")
                    )

        entries.append(
            CapecEntry(
                capec_id=int(capec_id),
                name=name,
                related_cwes=frozenset(cwes),
                parent_ids=frozenset(parents),
                child_ids=frozenset(children),
                skill_scenarios=tuple(skills),
            )
        )
    return entries


def convert_catalog(
    nvd_json: str | Path, capec_xml: str | Path, out_dir: str | Path
) -> CatalogSnapshot:
    """Convert official feeds and write the normalized snapshot to ``out_dir``."""
    cve_entries = parse_nvd_cve_json(nvd_json)
    capec_entries = parse_capec_xml(capec_xml)
    snapshot = build_snapshot(cve_entries, capec_entries)
    save_snapshot(snapshot, out_dir)
    logger.info(
        "converted catalog: %d CVEs, %d CAPECs", len(snapshot.cves), len(snapshot.capecs)
    )
    return snapshot
