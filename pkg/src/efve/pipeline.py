"""End-to-end encode/decode orchestration used by the CLI.

Encode runs the six stages in order: align, invert, select the identity
latent, compute per-index learning rates from a sensitivity probe of the
identity latent, encode pose then attributes per frame, and assemble the
bitstream.  All artifacts (alignment manifest, ID report, loss traces, size
manifest) are returned and optionally written next to the bitstream.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from . import attrenc, codec, idselect, pose, preproc, render, ssanalysis
from .backends import get_bundle
from .config import EncoderConfig
from .errors import UsageError, ValidationError
from .io import write_json
from .latent import WPlusLatent


@dataclass
class EncodeArtifacts:
    encoding: codec.VideoEncoding
    bitstream: bytes
    alignment_manifest: dict
    id_report: dict
    pose_solutions: list
    frame_results: list
    eta: np.ndarray
    theta: np.ndarray | None
    finetune_report: dict | None
    size_manifest: dict


def _attribute_masks_for_analysis(bundle, l_id):
    """Masks for the sensitivity probe at the identity latent's pose."""
    gen = bundle.generator
    if bundle.name == "toy":
        from .backends import toy_rig

        ss = gen.to_stylespace(l_id)
        yaw = toy_rig.POSE_GAIN_DEG * ss.channels[0][0]
        pitch = toy_rig.POSE_GAIN_DEG * ss.channels[0][1]
        sc = toy_rig.get_scene(yaw, pitch)
        return sc.attribute_masks(), sc.face_mask()
    raise UsageError(
        f"backend {bundle.name!r} provides no analysis masks; supply explicit groups"
    )


def encode_video(frames, config: EncoderConfig, jobs: int = 1) -> EncodeArtifacts:
    bundle = get_bundle(config.backend, seed=config.seed)
    groups = config.resolve_groups()

    # stage 1: alignment
    alignment = preproc.align_sequence(frames, bundle.tracker, config.keyframe)
    aligned = alignment.frames

    # stage 2: inversion
    trace = idselect.invert_sequence(aligned, bundle)

    # stage 3: identity selection
    id_index, l_id, id_report = idselect.select_id_latent(trace, config.id_select)

    # learning rates from a sensitivity probe at the identity latent
    attr_masks, face_mask = _attribute_masks_for_analysis(bundle, l_id)
    report = ssanalysis.analyze_indices(
        bundle,
        l_id,
        attr_masks,
        face_mask,
        deltas=config.delta_grid,
        candidates=[ix.as_tuple() for ix in groups.flat],
        seed=config.seed,
        jobs=jobs,
    )
    eta = ssanalysis.learning_rates(report, groups).as_vector()

    # stage 4: head pose per frame (targets are the inverted renderings)
    targets = [bundle.generator.generate(lat) for lat in trace.latents]
    id_pose_est = aligned[id_index].pose_estimate
    pose_solutions = pose.encode_pose_sequence(
        l_id, id_pose_est, aligned, targets, bundle, config.pose
    )

    # stage 5: facial attributes per frame
    lh_list = [sol.latent for sol in pose_solutions]
    blinks = [af.blink > 0.5 for af in aligned]
    masks_list = [af.masks for af in aligned]
    frame_results = attrenc.encode_sequence(
        lh_list, targets, groups, eta, config.frame, blinks, masks_list, bundle
    )

    quant = codec.QUANT_F16 if config.quant == "f16" else codec.QUANT_F32
    params = np.zeros((len(aligned), codec.PARAMS_PER_FRAME))
    for t, (sol, fr, af) in enumerate(zip(pose_solutions, frame_results, aligned)):
        params[t, 0] = sol.yaw_deg
        params[t, 1] = sol.pitch_deg
        params[t, 2] = af.roll_deg
        params[t, 3:] = fr.alpha.values

    layout = bundle.generator.layout
    descriptor = {
        "angles": "degrees",
        "alpha_units": "stylespace_offset",
        "roll_center": [float(alignment.clip_center[0]), float(alignment.clip_center[1])],
        "roll_convention": "decode re-applies roll about roll_center after synthesis",
        "order": "yaw,pitch,roll,then offsets in index-table order",
        "backend": config.backend,
    }
    encoding = codec.VideoEncoding(
        n_layers=layout.n_layers,
        dim_per_layer=layout.dim_per_layer,
        fps=config.fps,
        quant_mode=quant,
        index_table=[ix.as_tuple() for ix in groups.flat],
        id_latent=np.asarray(l_id.values, dtype=np.float64),
        frames=params,
        descriptor=descriptor,
    )
    bitstream = codec.encode_bitstream(encoding)

    size_manifest = {
        "total_bytes": len(bitstream),
        "frame_count": encoding.frame_count,
        "bytes_per_frame": encoding.bytes_per_frame(),
        "frame_section_bytes": encoding.bytes_per_frame() * encoding.frame_count,
        "id_latent_bytes": 4 * layout.n_layers * layout.dim_per_layer,
        "theta_bytes": 0,
        "clamp_warnings": list(encoding.clamp_warnings),
    }
    return EncodeArtifacts(
        encoding=encoding,
        bitstream=bitstream,
        alignment_manifest=alignment.manifest(),
        id_report=id_report,
        pose_solutions=pose_solutions,
        frame_results=frame_results,
        eta=eta,
        theta=None,
        finetune_report=None,
        size_manifest=size_manifest,
    )


def finetune_artifacts(artifacts: EncodeArtifacts, frames, config: EncoderConfig):
    """Sequence-level tail fine-tuning against the aligned real frames.

    Mutates ``artifacts`` (theta, reports, size manifest); the bitstream's
    frame parameters are untouched by construction.
    """
    bundle = get_bundle(config.backend, seed=config.seed)
    groups = config.resolve_groups()
    enc = artifacts.encoding
    alignment = preproc.align_sequence(frames, bundle.tracker, config.keyframe)
    aligned = alignment.frames
    if len(aligned) != enc.frame_count:
        raise ValidationError("frame count changed between encode and finetune")
    l_id = WPlusLatent(enc.id_latent)
    pivots = render.pivots_for_finetune(l_id, enc.quantized_frames(), groups, bundle)
    reals = [af.image for af in aligned]
    masks = [af.masks["face"] for af in aligned]
    theta, report = render.finetune_tail(pivots, reals, masks, bundle, config.finetune)
    artifacts.theta = theta
    artifacts.finetune_report = report
    artifacts.size_manifest["theta_bytes"] = len(codec.pack_theta(theta))
    return theta, report


def decode_video(encoding: codec.VideoEncoding, backend_name: str, seed: int = 0,
                 theta: np.ndarray | None = None, apply_roll: bool = True):
    bundle = get_bundle(backend_name, seed=seed)
    if theta is not None:
        bundle.generator.set_tail_params(theta)
    from .latent import AttributeGroups

    groups = AttributeGroups.from_dict(_groups_from_table(encoding.index_table))
    l_id = WPlusLatent(encoding.id_latent)
    center = encoding.descriptor.get("roll_center")
    frames = render.decode_sequence(
        l_id,
        encoding.quantized_frames(),
        groups,
        bundle,
        roll_center=tuple(center) if center else None,
        apply_roll=apply_roll,
    )
    return frames, groups, bundle


def _groups_from_table(index_table):
    """The bitstream stores a flat table; reconstruct contiguous groups from
    the canonical presets when they match, else treat all as one group."""
    from .backends import toy_rig
    from .config import load_preset_groups

    flat = [tuple(p) for p in index_table]
    for preset in ("toy_default", "stylegan2"):
        try:
            g = load_preset_groups(preset)
        except Exception:
            continue
        if [ix.as_tuple() for ix in g.flat] == flat:
            return g.to_dict()
    # unknown table: offsets still decode positionally; group names are only
    # needed for blink gating at encode time
    return {"mouth": flat}


def write_encode_outputs(artifacts: EncodeArtifacts, out_path, workdir=None) -> dict:
    workdir = workdir or os.path.dirname(os.path.abspath(out_path))
    os.makedirs(workdir, exist_ok=True)
    with open(out_path, "wb") as fh:
        fh.write(artifacts.bitstream)
    stem = os.path.splitext(os.path.basename(out_path))[0]
    paths = {"bitstream": out_path}

    align_path = os.path.join(workdir, f"{stem}.alignment.json")
    write_json(align_path, artifacts.alignment_manifest)
    paths["alignment_manifest"] = align_path

    id_path = os.path.join(workdir, f"{stem}.id_report.json")
    write_json(id_path, artifacts.id_report)
    paths["id_report"] = id_path

    loss_path = os.path.join(workdir, f"{stem}.loss_trace.csv")
    attrenc.trace_to_csv(artifacts.frame_results, loss_path)
    paths["loss_trace"] = loss_path

    pose_path = os.path.join(workdir, f"{stem}.pose.csv")
    pose.pose_csv(artifacts.pose_solutions, pose_path)
    paths["pose_trace"] = pose_path

    if artifacts.theta is not None:
        theta_path = os.path.join(workdir, f"{stem}.theta.bin")
        with open(theta_path, "wb") as fh:
            fh.write(codec.pack_theta(artifacts.theta))
        paths["theta"] = theta_path
        if artifacts.finetune_report:
            ft_path = os.path.join(workdir, f"{stem}.finetune.json")
            write_json(ft_path, artifacts.finetune_report)
            paths["finetune_report"] = ft_path

    size_path = os.path.join(workdir, f"{stem}.sizes.json")
    write_json(size_path, artifacts.size_manifest)
    paths["size_manifest"] = size_path
    return paths
