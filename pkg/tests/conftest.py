from __future__ import annotations

import numpy as np
import pytest

from nrvqa.media import Frame, FrameSequence

_ACCEPTANCE_RESULTS: dict[str, str] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        name = report.nodeid.split("::")[-1]
        _ACCEPTANCE_RESULTS[name] = report.outcome


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome in sorted(_ACCEPTANCE_RESULTS.items()):
        status = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"{status}  {name}")


def make_frame(rgb: np.ndarray, index: int = 0) -> Frame:
    rgb = np.asarray(rgb, dtype=np.uint8)
    return Frame(rgb.shape[1], rgb.shape[0], rgb, index)


def constant_frame(width: int, height: int, r: int, g: int, b: int,
                   index: int = 0) -> Frame:
    rgb = np.empty((height, width, 3), dtype=np.uint8)
    rgb[..., 0] = r
    rgb[..., 1] = g
    rgb[..., 2] = b
    return make_frame(rgb, index)


def gray_frame(width: int, height: int, level: int, index: int = 0) -> Frame:
    return constant_frame(width, height, level, level, level, index)


def sequence_from_frames(frames, rate: int) -> FrameSequence:
    return FrameSequence(tuple(frames), rate, rate, 1)


def y4m_bytes(width: int, height: int, frames_yuv444: list[np.ndarray],
              rate: str = "30:1") -> bytes:
    """Assemble a C444 Y4M stream from (h, w, 3) uint8 YUV stacks."""
    header = f"YUV4MPEG2 W{width} H{height} F{rate} Ip A1:1 C444\n".encode()
    chunks = [header]
    for yuv in frames_yuv444:
        chunks.append(b"FRAME\n")
        for k in range(3):
            chunks.append(np.ascontiguousarray(yuv[..., k]).tobytes())
    return b"".join(chunks)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
