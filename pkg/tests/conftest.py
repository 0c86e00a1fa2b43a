import io
import time
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from irforge.raster import Raster


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)


def random_raster(rng, width, height, channels):
    return Raster(rng.integers(0, 256, (height, width, channels), dtype=np.uint8))


def pil_png(arr: np.ndarray) -> bytes:
    """Encode with Pillow, the independent reference codec."""
    arr = arr[:, :, 0] if arr.ndim == 3 and arr.shape[2] == 1 else arr
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="PNG")
    return buf.getvalue()


def pil_decode(data: bytes) -> np.ndarray:
    arr = np.array(Image.open(io.BytesIO(data)))
    return arr[:, :, None] if arr.ndim == 2 else arr


def write_png(path: Path, arr: np.ndarray) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(pil_png(arr))
    return path


def make_dataset(root: Path, layout: dict, rng, size=(32, 32)) -> Path:
    """Build ``root/<loc>/<modality>/<name>.png`` from ``{loc: {modality: [names]}}``."""
    h, w = size
    for loc, mods in layout.items():
        for mod, names in mods.items():
            ch = 1 if mod == "ir" else 3
            for name in names:
                write_png(root / loc / mod / f"{name}.png",
                          rng.integers(0, 256, (h, w, ch), dtype=np.uint8))
    return root


# --- acceptance reporting: one PASS/FAIL line per criterion ------------------

SUITE_BUDGET_S = 120.0
_acceptance = []
_started = []


def pytest_sessionstart(session):
    _started.append(time.perf_counter())


def pytest_runtest_logreport(report):
    props = dict(report.user_properties)
    if "criterion" not in props:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _acceptance.append((props["criterion"], report.outcome))


def _suite_seconds():
    return time.perf_counter() - _started[0] if _started else 0.0


def pytest_sessionfinish(session, exitstatus):
    # the whole-suite runtime budget is itself an exit criterion
    if _acceptance and exitstatus == 0 and _suite_seconds() > SUITE_BUDGET_S:
        session.exitstatus = 1


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for name, outcome in _acceptance:
        tr.write_line(f"{'PASS' if outcome == 'passed' else 'FAIL'}  {name}")
    secs = _suite_seconds()
    verdict = "PASS" if secs <= SUITE_BUDGET_S else "FAIL"
    tr.write_line(f"{verdict}  total suite runtime {secs:.1f} s (budget {SUITE_BUDGET_S:.0f} s)")
