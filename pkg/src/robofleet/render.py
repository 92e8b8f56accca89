"""Flat-shaded orthographic renderer for the camera roster.

Pure functions of scene and joint state; identical inputs give
bit-identical images. Object centers are quantized to the pixel grid so
a move by a whole number of pixels translates the footprint exactly.
"""

from __future__ import annotations

import numpy as np

from .kinematics import fk_points
from .protocol import CameraRole, CameraSpec
from .simrobot import SceneObject, SimRobot

TABLE_COLOR = (203, 198, 188)
BACKDROP_COLOR = (156, 160, 168)
TABLE_EDGE_COLOR = (140, 128, 112)
ARM_COLOR = (72, 74, 86)
ARM_RADIUS_M = 0.016
TOOL_RADIUS_M = 0.012

# Orthographic scale: main and side cameras cover the whole table.
MAIN_PPM = 400.0
WRIST_PPM = 1600.0


def tool_color(openness: float) -> tuple[int, int, int]:
    g = min(max(openness, 0.0), 1.0)
    return (int(round(200 - 140 * g)), int(round(60 + 120 * g)), 60)


def _grids(width: int, height: int):
    jj, ii = np.meshgrid(np.arange(height), np.arange(width), indexing="ij")
    return ii, jj


def _quant(u: float) -> int:
    # half-up with a nudge so a k-pixel world shift moves exactly k pixels
    return int(np.floor(u + 0.5 + 1e-9))


def _paint_object(img, ii, jj, obj: SceneObject, ci: int, cj: int, ppm: float,
                  plane: str = "top"):
    du = ii.astype(float) - ci
    dv = jj.astype(float) - cj
    if plane == "top":
        half_u, half_v = obj.size[0] / 2.0 * ppm, obj.size[1] / 2.0 * ppm
    else:
        half_u, half_v = obj.size[0] / 2.0 * ppm, obj.size[2] / 2.0 * ppm
    if obj.shape == "box":
        if plane == "top" and obj.yaw != 0.0:
            c, s = np.cos(obj.yaw), np.sin(obj.yaw)
            du, dv = c * du + s * dv, -s * du + c * dv
        mask = (np.abs(du) <= half_u) & (np.abs(dv) <= half_v)
    elif obj.shape == "cylinder" and plane == "top":
        mask = du * du + dv * dv <= half_u * half_u
    elif obj.shape == "sphere":
        mask = du * du + dv * dv <= half_u * half_u
    else:  # cylinder from the side
        mask = (np.abs(du) <= half_u) & (np.abs(dv) <= half_v)
    img[mask] = obj.color


def _stamp_segment(img, ii, jj, p0, p1, radius_px: float, color):
    d = np.asarray(p1, dtype=float) - np.asarray(p0, dtype=float)
    length2 = float(d @ d)
    pu = ii.astype(float) - p0[0]
    pv = jj.astype(float) - p0[1]
    if length2 < 1e-12:
        nu, nv = pu, pv
    else:
        t = np.clip((pu * d[0] + pv * d[1]) / length2, 0.0, 1.0)
        nu = pu - t * d[0]
        nv = pv - t * d[1]
    img[nu * nu + nv * nv <= radius_px * radius_px] = color


def _paint_arm(img, ii, jj, sim: SimRobot, to_px, ppm: float):
    for arm in range(sim.spec.arms):
        pts = fk_points(sim.chains[arm], sim.joints[sim.arm_slice(arm)])
        px = [to_px(p) for p in pts]
        for a, b in zip(px[:-1], px[1:]):
            _stamp_segment(img, ii, jj, a, b, ARM_RADIUS_M * ppm, ARM_COLOR)
        _stamp_segment(img, ii, jj, px[-1], px[-1], TOOL_RADIUS_M * ppm,
                       tool_color(sim.gripper[arm]))


def _render_topdown(sim: SimRobot, cam: CameraSpec, center_xy=None) -> np.ndarray:
    """Top-down view; center_xy selects a zoomed window (wrist camera)."""
    w, h = cam.width, cam.height
    x0, y0, x1, y1 = sim.scene.table_bounds
    if center_xy is None:
        ppm = MAIN_PPM
        ox, oy_top = x0, y1
    else:
        ppm = WRIST_PPM
        ox = center_xy[0] - (w / 2.0) / ppm
        oy_top = center_xy[1] + (h / 2.0) / ppm
    ii, jj = _grids(w, h)
    img = np.empty((h, w, 3), dtype=np.uint8)
    img[:, :] = BACKDROP_COLOR
    # table footprint
    tu0 = (x0 - ox) * ppm - 0.5
    tu1 = (x1 - ox) * ppm - 0.5
    tv0 = (oy_top - y1) * ppm - 0.5
    tv1 = (oy_top - y0) * ppm - 0.5
    table_mask = (ii >= tu0) & (ii <= tu1) & (jj >= tv0) & (jj <= tv1)
    img[table_mask] = TABLE_COLOR

    def center_px(pos):
        return (_quant((pos[0] - ox) * ppm - 0.5),
                _quant((oy_top - pos[1]) * ppm - 0.5))

    for obj in sorted(sim.scene.objects, key=lambda o: (o.top_z, o.object_id)):
        ci, cj = center_px(obj.effective_position())
        _paint_object(img, ii, jj, obj, ci, cj, ppm, plane="top")

    def to_px(p):
        return ((p[0] - ox) * ppm - 0.5, (oy_top - p[1]) * ppm - 0.5)

    _paint_arm(img, ii, jj, sim, to_px, ppm)
    return img


def _render_side(sim: SimRobot, cam: CameraSpec) -> np.ndarray:
    """View from the robot side: world x right, world z up."""
    w, h = cam.width, cam.height
    x0, _, x1, _ = sim.scene.table_bounds
    ppm = MAIN_PPM
    ox = x0
    z_top = h / ppm
    ii, jj = _grids(w, h)
    img = np.empty((h, w, 3), dtype=np.uint8)
    img[:, :] = BACKDROP_COLOR
    # everything below the table surface line
    surface_j = (z_top - 0.0) * ppm - 0.5
    img[jj > surface_j] = TABLE_EDGE_COLOR

    def center_px(pos):
        return (_quant((pos[0] - ox) * ppm - 0.5),
                _quant((z_top - pos[2]) * ppm - 0.5))

    # far objects first so nearer ones overdraw
    for obj in sorted(sim.scene.objects, key=lambda o: (-o.effective_position()[1], o.object_id)):
        pos = obj.effective_position()
        center = np.array([pos[0], pos[1], pos[2] + obj.size[2] / 2.0])
        ci, cj = center_px(center)
        _paint_object(img, ii, jj, obj, ci, cj, ppm, plane="side")

    def to_px(p):
        return ((p[0] - ox) * ppm - 0.5, (z_top - p[2]) * ppm - 0.5)

    _paint_arm(img, ii, jj, sim, to_px, ppm)
    return img


def render_camera(sim: SimRobot, cam: CameraSpec) -> np.ndarray:
    if cam.role == CameraRole.MAIN:
        return _render_topdown(sim, cam)
    if cam.role == CameraRole.SIDE:
        return _render_side(sim, cam)
    if cam.role == CameraRole.WRIST:
        arm = 0
        if sim.spec.arms > 1 and cam.camera_id.endswith("right"):
            arm = 1
        ee = sim.ee_position(arm)
        return _render_topdown(sim, cam, center_xy=(float(ee[0]), float(ee[1])))
    raise ValueError(f"unknown camera role {cam.role!r}")


def blend_images(reference: np.ndarray, live: np.ndarray, alpha: float) -> np.ndarray:
    """Per-channel alpha blend, rounded half up."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha {alpha} outside [0, 1]")
    if reference.shape != live.shape:
        raise ValueError(f"shape mismatch {reference.shape} vs {live.shape}")
    mixed = alpha * reference.astype(np.float64) + (1.0 - alpha) * live.astype(np.float64)
    return np.floor(mixed + 0.5).astype(np.uint8)


def _gray64(img: np.ndarray) -> np.ndarray:
    gray = img.astype(np.float64).mean(axis=2)
    h, w = gray.shape
    if h % 64 == 0 and w % 64 == 0:
        return gray.reshape(64, h // 64, 64, w // 64).mean(axis=(1, 3))
    rows = np.linspace(0, h - 1, 64).round().astype(int)
    cols = np.linspace(0, w - 1, 64).round().astype(int)
    return gray[np.ix_(rows, cols)]


def match_score(reference: np.ndarray, live: np.ndarray) -> float:
    """Mean absolute grayscale difference on 64x64 downsampled copies."""
    if reference.shape != live.shape:
        raise ValueError(f"shape mismatch {reference.shape} vs {live.shape}")
    return float(np.mean(np.abs(_gray64(reference) - _gray64(live))))
