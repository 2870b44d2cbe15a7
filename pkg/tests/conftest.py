import json

import numpy as np
import pytest
import torch

from fairpatrol.ingest import Zone

torch.set_num_threads(1)


def square(zone_id, x0, y0, size=1.0, pct=0.2, income=0.5, poverty=0.1):
    ring = np.array([[x0, y0], [x0 + size, y0], [x0 + size, y0 + size], [x0, y0 + size], [x0, y0]])
    return Zone(zone_id=zone_id, rings=[ring], pct_minority=pct, median_income_norm=income, poverty_rate=poverty)


@pytest.fixture
def unit_square():
    return square("A", 0.0, 0.0)


def write_geojson(path, features):
    doc = {"type": "FeatureCollection", "features": features}
    path.write_text(json.dumps(doc))
    return path


def polygon_feature(zone_id, ring, **props):
    props = {"zone_id": zone_id, **props}
    return {"type": "Feature", "properties": props, "geometry": {"type": "Polygon", "coordinates": [ring]}}


# Per-criterion acceptance outcomes, printed at the end of the session.
ACCEPTANCE = {}


def pytest_runtest_logreport(report):
    crit = getattr(report, "criterion", None)
    for key, value in report.user_properties:
        if key == "criterion":
            crit = value
    if crit is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        outcome = "SKIP" if report.skipped else ("PASS" if report.passed else "FAIL")
        ACCEPTANCE[crit] = (outcome, report.nodeid)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for crit in sorted(ACCEPTANCE, key=lambda c: int(c.split()[0])):
        outcome, nodeid = ACCEPTANCE[crit]
        terminalreporter.write_line(f"{outcome:4}  criterion {crit}  ({nodeid.split('::')[-1]})")
