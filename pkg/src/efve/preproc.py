"""Stage 1: temporally stable face alignment.

Per frame: landmark tracking with blink compensation, roll removal (rotation
about a fixed per-clip center so the inter-ocular line is horizontal), then
rigid registration to the current key frame with a coarse-to-fine affine
optical-flow solver.  The registration residual plus the tracker's inter-frame
pose deltas drive key-frame switching: a new key frame starts when the
residual exceeds 45.0 while the head is pose-stable (|dYaw|, |dPitch| < 2 deg)
or 30.0 while it is rotating out of plane.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import imgops
from .errors import ValidationError
from .kernels import down2

RESIDUAL_THRESHOLD_STATIC = 45.0
RESIDUAL_THRESHOLD_MOVING = 30.0
POSE_DELTA_THRESHOLD_DEG = 2.0


@dataclass(frozen=True)
class KeyFramePolicy:
    residual_threshold_static: float = RESIDUAL_THRESHOLD_STATIC
    residual_threshold_moving: float = RESIDUAL_THRESHOLD_MOVING
    pose_delta_threshold_deg: float = POSE_DELTA_THRESHOLD_DEG

    def __post_init__(self):
        if min(
            self.residual_threshold_static,
            self.residual_threshold_moving,
            self.pose_delta_threshold_deg,
        ) <= 0:
            raise ValidationError("key-frame policy thresholds must be positive")


@dataclass
class AlignedFrame:
    image: np.ndarray  # RGB [0, 255], roll removed, registered to its key frame
    roll_deg: float
    key_frame_id: int
    registration_residual: float
    masks: dict  # face, mouth_chin, eyes_brows, pupil, rigid_face (bool HxW)
    landmarks: np.ndarray  # aligned-space pixel coords (81, 2)
    blink: float
    pose_estimate: tuple  # tracker (yaw, pitch, roll)
    flags: dict = field(default_factory=dict)


@dataclass
class AlignmentResult:
    frames: list
    clip_center: tuple  # roll-rotation center, pixel (x, y); fixed per clip
    dropped: list  # input indices with no detectable face

    def manifest(self) -> dict:
        return {
            "clip_center": [float(self.clip_center[0]), float(self.clip_center[1])],
            "dropped_frames": list(self.dropped),
            "frames": [
                {
                    "roll_deg": f.roll_deg,
                    "key_frame_id": f.key_frame_id,
                    "registration_residual": f.registration_residual,
                    "blink": f.blink,
                    "pose_estimate": list(f.pose_estimate),
                    "flags": f.flags,
                }
                for f in self.frames
            ],
        }


class BlinkCompensator:
    """Holds eye landmarks at their most recent non-blink positions."""

    def __init__(self, landmark_names):
        self._eye_rows = [
            i
            for i, n in enumerate(landmark_names)
            if n.startswith("eye_l_") or n.startswith("eye_r_")
        ]
        self._last_open = None

    def step(self, landmarks: np.ndarray, blink_score: float):
        """Returns (landmarks, flagged).  Non-eye rows are never touched."""
        if landmarks.shape[0] != 81:
            raise ValidationError(f"expected 81 landmarks, got {landmarks.shape[0]}")
        if blink_score <= 0.5:
            self._last_open = landmarks[self._eye_rows].copy()
            return landmarks, False
        if self._last_open is None:
            # blink on the very first frame: nothing to hold, keep raw
            return landmarks, True
        out = landmarks.copy()
        out[self._eye_rows] = self._last_open
        return out, False


def roll_from_landmarks(landmarks: np.ndarray, landmark_names) -> float:
    """Angle (degrees) of the line through the outer-eye landmarks."""
    li = landmark_names.index("eye_l_0")
    ri = landmark_names.index("eye_r_0")
    d = landmarks[ri] - landmarks[li]
    return float(np.degrees(np.arctan2(d[1], d[0])))


def residual_rgb(a: np.ndarray, b: np.ndarray, mask: np.ndarray) -> float:
    """Mean per-pixel RGB L2 distance over the mask (0-255 units)."""
    m = mask.astype(bool)
    if not m.any():
        raise ValidationError("empty registration mask")
    d = np.linalg.norm((a - b)[m], axis=-1)
    return float(d.mean())


def _downsample_mask(mask: np.ndarray) -> np.ndarray:
    return down2(mask.astype(np.float64)) > 0.95


def register_affine(frame, key_frame, rigid_mask, levels: int = 3, max_iters: int = 20, tol: float = 1e-4):
    """Coarse-to-fine Gauss-Newton affine registration of ``frame`` onto
    ``key_frame`` over the rigid-face mask.

    Returns (params[6], residual, flags).  The warp samples ``frame`` at the
    affine image of the key grid, so the warped frame lines up with the key.
    Falls back to the identity warp (with the unwarped residual) if the
    solver diverges or fails to improve on doing nothing.
    """
    frame = np.asarray(frame, dtype=np.float64)
    key_frame = np.asarray(key_frame, dtype=np.float64)
    if frame.shape != key_frame.shape:
        raise ValidationError(f"frame shapes differ: {frame.shape} vs {key_frame.shape}")

    pyr_f, pyr_k, pyr_m = [frame], [key_frame], [rigid_mask.astype(bool)]
    for _ in range(levels - 1):
        pyr_f.append(down2(pyr_f[-1]))
        pyr_k.append(down2(pyr_k[-1]))
        pyr_m.append(_downsample_mask(pyr_m[-1]))

    identity_residual = residual_rgb(frame, key_frame, rigid_mask)
    params = np.zeros(6)
    grew = 0
    flags = {}
    for lvl in range(levels - 1, -1, -1):
        f, k, m = pyr_f[lvl], pyr_k[lvl], pyr_m[lvl]
        if m.sum() < 24:
            continue
        # translation scales with resolution
        scale = f.shape[0] / frame.shape[0]
        p = params.copy()
        p[2] *= scale
        p[5] *= scale
        before = residual_rgb(imgops.affine_sample(f, p), k, m)
        h, w = f.shape[:2]
        cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
        ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
        xc, yc = (xs - cx)[m], (ys - cy)[m]
        for _ in range(max_iters):
            warped = imgops.affine_sample(f, p)
            gy, gx = np.gradient(warped, axis=(0, 1))
            r = (warped - k)[m]  # (n, 3)
            gxm, gym = gx[m], gy[m]
            # Jacobian blocks: d warp / d p = [x, y, 1] per axis
            cols = [
                gxm * xc[:, None],
                gxm * yc[:, None],
                gxm,
                gym * xc[:, None],
                gym * yc[:, None],
                gym,
            ]
            J = np.stack([c.reshape(-1) for c in cols], axis=1)
            rv = r.reshape(-1)
            JtJ = J.T @ J
            Jtr = J.T @ rv
            try:
                delta = np.linalg.solve(JtJ + 1e-8 * np.eye(6), Jtr)
            except np.linalg.LinAlgError:
                break
            p -= delta
            if np.linalg.norm(delta) < tol:
                break
        after = residual_rgb(imgops.affine_sample(f, p), k, m)
        if after > before:
            grew += 1
            if grew >= 3:
                flags["diverged"] = True
                return np.zeros(6), identity_residual, flags
        else:
            grew = 0
        params = p
        params[2] /= scale
        params[5] /= scale

    final = residual_rgb(imgops.affine_sample(frame, params, order=3), key_frame, rigid_mask)
    if final > identity_residual:
        flags["fallback_identity"] = True
        return np.zeros(6), identity_residual, flags
    return params, final, flags


def advance_key_frame(residual: float, dyaw_deg: float, dpitch_deg: float, policy: KeyFramePolicy) -> bool:
    if residual < 0:
        raise ValidationError("residual must be non-negative")
    moving = (
        abs(dyaw_deg) >= policy.pose_delta_threshold_deg
        or abs(dpitch_deg) >= policy.pose_delta_threshold_deg
    )
    if moving:
        return residual > policy.residual_threshold_moving
    return residual > policy.residual_threshold_static


def build_masks(landmarks: np.ndarray, landmark_names, shape, dilate_px: int = 3) -> dict:
    """Region masks from the 81 landmarks: polygon fill + dilation."""
    name_idx = {n: i for i, n in enumerate(landmark_names)}

    def pts(prefix, count):
        return np.stack([landmarks[name_idx[f"{prefix}_{i}"]] for i in range(count)])

    jaw = pts("jaw", 17)
    forehead = pts("forehead", 13)
    face = imgops.polygon_mask(np.vstack([jaw, forehead[::-1]]), shape)

    mouth_outer = np.stack([landmarks[name_idx[f"mouth_{i}"]] for i in range(12)])
    m_c = mouth_outer.mean(axis=0)
    mouth_wide = m_c + 1.6 * (mouth_outer - m_c)
    chin_pts = jaw[5:12]
    mouth_chin = imgops.polygon_mask(
        imgops.convex_hull_points(np.vstack([mouth_wide, chin_pts])), shape
    )

    eb = np.zeros(shape[:2], dtype=bool)
    pupil = np.zeros(shape[:2], dtype=bool)
    inner_brows = np.stack([landmarks[name_idx["brow_l_4"]], landmarks[name_idx["brow_r_0"]]])
    for side in ("l", "r"):
        eye = pts(f"eye_{side}", 6)
        brow = pts(f"brow_{side}", 5)
        e_c = eye.mean(axis=0)
        eye_wide = e_c + 2.1 * (eye - e_c)
        brow_lo = brow + np.array([0.0, 3.0])
        brow_hi = brow + np.array([0.0, -5.0])
        # both inner brow points bridge the two hulls across the glabella
        bridge = inner_brows + np.array([0.0, -5.0])
        eb |= imgops.polygon_mask(
            imgops.convex_hull_points(np.vstack([eye_wide, brow_lo, brow_hi, bridge])), shape
        )
        span = np.linalg.norm(eye[0] - eye[3])
        half = 0.24 * span
        p_c = e_c + np.array([0.0, 0.07 * span])
        box = np.array(
            [
                [p_c[0] - half, p_c[1] - half],
                [p_c[0] + half, p_c[1] - half],
                [p_c[0] + half, p_c[1] + half],
                [p_c[0] - half, p_c[1] + half],
            ]
        )
        pupil |= imgops.polygon_mask(box, shape)

    face_d = imgops.dilate(face, dilate_px)
    mouth_chin_d = imgops.dilate(mouth_chin, dilate_px) & face_d
    eb_d = imgops.dilate(eb, dilate_px) & face_d
    pupil_d = imgops.dilate(pupil, max(dilate_px - 1, 1)) & face_d
    rigid = face_d & ~(mouth_chin_d | eb_d)
    return {
        "face": face_d,
        "mouth_chin": mouth_chin_d,
        "eyes_brows": eb_d,
        "pupil": pupil_d,
        "rigid_face": rigid,
    }


def align_sequence(frames, tracker, policy: KeyFramePolicy | None = None) -> AlignmentResult:
    """Align a frame sequence; frame 0 (the first with a face) is a key frame."""
    policy = policy or KeyFramePolicy()
    if len(frames) < 1:
        raise ValidationError("need at least one frame")
    names = tracker.landmark_names()
    comp = BlinkCompensator(names)

    aligned: list = []
    dropped: list = []
    clip_center = None
    key_image = None
    key_masks = None
    key_id = -1
    prev_pose = None

    for idx, frame in enumerate(frames):
        frame = np.asarray(frame, dtype=np.float64)
        if hasattr(tracker, "face_present") and not tracker.face_present(frame):
            dropped.append(idx)
            continue
        lm_raw = tracker.landmarks(frame)
        pose = tracker.head_pose_estimate(frame)
        blink = tracker.blink_score(frame)
        lm, blink_flag = comp.step(lm_raw, blink)

        roll = roll_from_landmarks(lm, names)
        if clip_center is None:
            clip_center = tuple(lm.mean(axis=0))
        derolled = imgops.rotate_image(frame, -roll, clip_center)
        lm_rot = imgops.rotate_points(lm, -roll, clip_center)

        out_idx = len(aligned)
        flags = {}
        if blink_flag:
            flags["blink_unresolved"] = True
        if key_image is None:
            key_id = out_idx
            image = derolled
            lm_out = lm_rot
            resid = 0.0
        else:
            params, resid, reg_flags = register_affine(
                derolled, key_image, key_masks["rigid_face"]
            )
            flags.update(reg_flags)
            dyaw = pose[0] - prev_pose[0]
            dpitch = pose[1] - prev_pose[1]
            if advance_key_frame(resid, dyaw, dpitch, policy):
                key_id = out_idx
                image = derolled
                lm_out = lm_rot
                flags["new_key_frame"] = True
            else:
                image = imgops.affine_sample(derolled, params, order=3)
                lm_out = imgops.affine_points_to_output(lm_rot, params, image.shape)

        masks = build_masks(lm_out, names, image.shape)
        af = AlignedFrame(
            image=image,
            roll_deg=roll,
            key_frame_id=key_id,
            registration_residual=resid,
            masks=masks,
            landmarks=lm_out,
            blink=blink,
            pose_estimate=tuple(float(p) for p in pose),
            flags=flags,
        )
        if key_id == out_idx:
            key_image = image
            key_masks = masks
        aligned.append(af)
        prev_pose = pose

    if not aligned:
        raise ValidationError("no face detected in any frame")
    return AlignmentResult(frames=aligned, clip_center=clip_center, dropped=dropped)
