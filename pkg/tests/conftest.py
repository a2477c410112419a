import numpy as np
import pytest

from omnisweep.rig import make_rig
from omnisweep.sphere import ErpGrid
from omnisweep.synth import SyntheticScene, render_scene


@pytest.fixture(scope="session")
def small_rig():
    return make_rig(0.2, (96, 96))


@pytest.fixture(scope="session")
def small_grid():
    return ErpGrid(24, 48)


@pytest.fixture(scope="session")
def small_box(small_rig, small_grid):
    images, depth = render_scene(SyntheticScene("box"), small_rig, small_grid)
    return images, depth


@pytest.fixture(scope="session")
def medium_rig():
    return make_rig(0.2, (200, 200))


@pytest.fixture(scope="session")
def medium_grid():
    return ErpGrid(80, 160)


@pytest.fixture(scope="session")
def medium_sphere(medium_rig, medium_grid):
    return render_scene(SyntheticScene("sphere", radius=2.0), medium_rig, medium_grid, supersample=2)


@pytest.fixture(scope="session")
def medium_box(medium_rig, medium_grid):
    return render_scene(SyntheticScene("box"), medium_rig, medium_grid, supersample=2)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def zero_baseline(rig):
    """Same cameras with every optical center moved to the rig origin."""
    from omnisweep.rig import Camera, CameraRig, Extrinsics

    return CameraRig(tuple(Camera(c.intrinsics, Extrinsics(c.extrinsics.rotation, [0.0, 0.0, 0.0])) for c in rig.cameras))


@pytest.fixture(scope="session")
def native_box():
    """Box room at the native 640 x 320 output with 400 px fisheyes."""
    rig = make_rig(0.2, (400, 400))
    grid = ErpGrid(320, 640)
    images, depth = render_scene(SyntheticScene("box"), rig, grid, supersample=2)
    return rig, grid, images, depth


def fd_gradient_errors(images, rig, q, cfg, pixels, h=1e-4):
    """Relative errors between analytic and central-difference loss gradients.

    Pixels where a bilinear tap of any camera changes cell between ``q - h``
    and ``q + h`` are reported as ``None`` (the sampler has a kink there).
    """
    from omnisweep.refine import loss_and_gradient
    from omnisweep.rig import project_fisheye, world_to_camera

    grid = ErpGrid(*q.shape)
    dirs = grid.directions()
    _, grad = loss_and_gradient(images, rig, q, cfg)
    errors = []
    for r, c in pixels:
        cells = []
        for qq in (q[r, c] - h, q[r, c] + h):
            cam_cells = []
            for cam in rig.cameras:
                uv, _ = project_fisheye(world_to_camera(dirs[r, c] / qq, cam.extrinsics), cam.intrinsics)
                cam_cells.append(tuple(np.floor(np.nan_to_num(uv, nan=-1.0)).astype(int)))
            cells.append(cam_cells)
        if cells[0] != cells[1]:
            errors.append(None)
            continue
        qp, qm = q.copy(), q.copy()
        qp[r, c] += h
        qm[r, c] -= h
        fp = loss_and_gradient(images, rig, qp, cfg)[0].total
        fm = loss_and_gradient(images, rig, qm, cfg)[0].total
        fd = (fp - fm) / (2 * h)
        scale = max(abs(fd), abs(grad[r, c]))
        errors.append(0.0 if scale == 0 else abs(grad[r, c] - fd) / scale)
    return errors


@pytest.fixture(scope="session")
def sphere_160():
    """R = 2 m sphere on a 160 x 320 grid with 400 px fisheyes."""
    rig = make_rig(0.2, (400, 400))
    grid = ErpGrid(160, 320)
    images, depth = render_scene(SyntheticScene("sphere", radius=2.0), rig, grid, supersample=2)
    return rig, images, depth


_ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request):
    """Record one PASS/FAIL line for an acceptance criterion."""
    lines = request.config.stash.setdefault(_ACCEPTANCE_KEY, [])

    def record(number: int, passed: bool, detail: str):
        line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
        lines.append((number, line))
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
