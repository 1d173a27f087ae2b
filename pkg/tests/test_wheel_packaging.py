"""Test wheel packaging to ensure the data files and entry point ship.

Note: These tests are marked as local_only because they build a wheel in the
working directory.
"""

import shutil
import subprocess
import sys
import zipfile
from pathlib import Path

import pytest


@pytest.fixture(scope="session")
def built_wheel(tmp_path_factory):
    """Builds a fresh wheel into a temporary dist directory."""
    dist_dir = tmp_path_factory.mktemp("dist")
    build_dir = Path("build")
    if build_dir.exists():
        shutil.rmtree(build_dir)

    try:
        subprocess.check_call(
            [sys.executable, "-m", "build", "--wheel", "--outdir", str(dist_dir)],
            stdout=subprocess.PIPE,
            stderr=subprocess.PIPE,
        )
    except subprocess.CalledProcessError as e:
        pytest.fail(f"Failed to build wheel: {e}")
    except FileNotFoundError:
        pytest.fail("Build tool not found. Install with: pip install build")

    wheels = list(dist_dir.glob("*.whl"))
    if not wheels:
        pytest.fail("No wheel file found after build")
    return wheels[0]


@pytest.mark.local_only
def test_version_file_included(built_wheel):
    with zipfile.ZipFile(built_wheel, "r") as z:
        assert "infogain/VERSION" in z.namelist(), "VERSION file missing from wheel"


@pytest.mark.local_only
def test_storage_package_included(built_wheel):
    with zipfile.ZipFile(built_wheel, "r") as z:
        names = z.namelist()
        assert "infogain/storage/mapfile.py" in names
        assert "infogain/storage/fixations.py" in names


@pytest.mark.local_only
def test_console_script_declared(built_wheel):
    with zipfile.ZipFile(built_wheel, "r") as z:
        entry_points = next(n for n in z.namelist() if n.endswith("entry_points.txt"))
        assert "infogain = infogain.main:main" in z.read(entry_points).decode()
