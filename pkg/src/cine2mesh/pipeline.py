"""Run-directory pipeline: synthesis, training stages, inference, evaluation.

Stages communicate only through files under one run directory:

    run/
      config.ini              resolved configuration
      manifest.json           cohort + dataset manifest (splits, paths, EF, stats)
      cohort/                 template, shape model, per-sample mesh videos
      dataset/images/         CDIM cine containers
      checkpoints/            CDTW checkpoints and training histories
      eval/results.json       evaluation output
      report/                 tables, scatter data, curves, SVG plots
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .config import RunConfig, config_text, save_config
from .dataset import (
    VIEW_NAMES,
    CineSequence,
    load_cine,
    make_unpaired_pools,
    render_cine,
    save_cine,
)
from .evaluate import EvalConfig, EvalReport, evaluate_samples
from .geometry.mesh import MeshVideo, load_mesh, save_mesh
from .imageae import ImageSequenceAutoencoder
from .mapping import EjectionFractionRegressor, LatentCycleMapper, infer_mesh_video
from .meshae import MeshSequenceAutoencoder
from .shapemodel import MeshShapeModel, default_shape_model, generate_cohort


class PipelineError(RuntimeError):
    """A stage cannot run (missing inputs, bad state)."""


def views_for(view_config: str) -> tuple[str, ...]:
    if view_config == "lax+sax":
        return VIEW_NAMES
    if view_config == "lax":
        return ("lax",)
    raise PipelineError(f"unknown view configuration {view_config!r}")


def view_tag(view_config: str) -> str:
    return view_config.replace("+", "_")


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"not JSON serializable: {type(obj)}")


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(
        json.dumps(payload, indent=1, sort_keys=True, default=_json_default) + "\n",
        encoding="utf-8",
    )


def manifest_path(run_dir: Path) -> Path:
    return Path(run_dir) / "manifest.json"


def load_manifest(run_dir: Path) -> dict:
    path = manifest_path(run_dir)
    if not path.exists():
        raise PipelineError(f"manifest not found: {path} (run `synth` first)")
    return json.loads(path.read_text(encoding="utf-8"))


def _checkpoint(run_dir: Path, name: str) -> Path:
    return Path(run_dir) / "checkpoints" / f"{name}.cdtw"


def _require_checkpoint(run_dir: Path, name: str) -> Path:
    path = _checkpoint(run_dir, name)
    if not path.exists():
        raise PipelineError(f"missing checkpoint: {path}")
    return path


def _save_shape_model(model: MeshShapeModel, path: Path) -> None:
    names = sorted(model.structure_labels_)
    ranges = []
    for name in names:
        idx = model.structure_labels_[name]
        ranges.append([int(idx.min()), int(idx.max()) + 1])
    np.savez(
        path,
        mean_vertices=model.mean_vertices_,
        modes=model.modes_,
        variances=model.variances_,
        faces=model.faces_,
        label_names=np.array(names),
        label_ranges=np.array(ranges, dtype=np.int64),
        n_modes=np.array(model.n_modes),
    )


def load_shape_model(path: Path) -> MeshShapeModel:
    data = np.load(path, allow_pickle=False)
    model = MeshShapeModel(n_modes=int(data["n_modes"]))
    model.mean_vertices_ = data["mean_vertices"]
    model.modes_ = data["modes"]
    model.variances_ = data["variances"]
    model.faces_ = data["faces"]
    model.structure_labels_ = {
        str(name): np.arange(a, b, dtype=np.int64)
        for name, (a, b) in zip(data["label_names"], data["label_ranges"])
    }
    return model


def _save_mesh_video(video: MeshVideo, directory: Path) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    for t, frame in enumerate(video):
        save_mesh(frame, directory / f"frame_{t:03d}.mesh")


def load_mesh_video(directory: Path) -> MeshVideo:
    frames = sorted(Path(directory).glob("frame_*.mesh"))
    if not frames:
        raise PipelineError(f"no mesh frames under {directory}")
    return MeshVideo([load_mesh(p) for p in frames])


def synth_run(run_dir: str | Path, config: RunConfig) -> dict:
    """Generate the cohort, render unpaired pools, and write the manifest."""
    run_dir = Path(run_dir)
    cohort_cfg = config.cohort
    data_cfg = config.dataset
    (run_dir / "cohort" / "samples").mkdir(parents=True, exist_ok=True)
    (run_dir / "dataset" / "images").mkdir(parents=True, exist_ok=True)
    save_config(config, run_dir / "config.ini")

    model = default_shape_model(
        seed=cohort_cfg.seed,
        detail=cohort_cfg.detail,
        n_modes=cohort_cfg.n_modes,
        cohort_size=cohort_cfg.pca_cohort,
    )
    save_mesh(model.mean_mesh(), run_dir / "cohort" / "template.mesh")
    _save_shape_model(model, run_dir / "cohort" / "shape_model.npz")

    samples = generate_cohort(
        model, count=cohort_cfg.count, n_frames=cohort_cfg.n_frames, seed=cohort_cfg.seed + 1
    )
    split = make_unpaired_pools(
        cohort_cfg.count,
        cohort_cfg.train,
        cohort_cfg.validation,
        cohort_cfg.test,
        seed=cohort_cfg.seed + 2,
    )
    role_of: dict[int, str] = {}
    for i in split.image_subjects:
        role_of[i] = "image"
    for i in split.mesh_subjects:
        role_of[i] = "mesh"
    for i in split.validation:
        role_of[i] = "validation"
    for i in split.test:
        role_of[i] = "test"

    entries = []
    for sample in samples:
        role = role_of[sample.index]
        entry: dict = {
            "index": sample.index,
            "role": role,
            "coefficients": sample.coefficients,
            "motion": {
                "amplitudes": sample.motion.amplitudes,
                "phases": sample.motion.phases,
            },
            "ef": sample.ef,
            "n_frames": sample.video.n_frames,
            "cine": None,
            "mesh_dir": None,
            "norm_mean": None,
            "norm_std": None,
            "pixel_spacing": None,
        }
        if role in ("mesh", "validation", "test"):
            rel = f"cohort/samples/s{sample.index:04d}"
            _save_mesh_video(sample.video, run_dir / rel)
            entry["mesh_dir"] = rel
        if role in ("image", "validation", "test"):
            cine = render_cine(
                sample.video,
                image_size=data_cfg.image_size,
                fov_mm=data_cfg.fov_mm,
                noise_sigma=data_cfg.noise_sigma,
                blur_sigma=data_cfg.blur_sigma,
                seed=data_cfg.seed + sample.index,
                ef=sample.ef,
            )
            rel = f"dataset/images/s{sample.index:04d}.cdim"
            save_cine(cine, run_dir / rel)
            # Stats on the stored float32 data so normalization replays exactly.
            stored = load_cine(run_dir / rel, pixel_spacing=cine.pixel_spacing)
            stack = stored.stack()
            entry["cine"] = rel
            entry["norm_mean"] = float(stack.mean())
            entry["norm_std"] = float(stack.std())
            entry["pixel_spacing"] = cine.pixel_spacing
        entries.append(entry)

    manifest = {
        "config": config_text(config),
        "template": "cohort/template.mesh",
        "shape_model": "cohort/shape_model.npz",
        "splits": {
            "image_subjects": list(split.image_subjects),
            "mesh_subjects": list(split.mesh_subjects),
            "validation": list(split.validation),
            "test": list(split.test),
        },
        "samples": entries,
    }
    _write_json(manifest_path(run_dir), manifest)
    return manifest


def _samples_by_role(manifest: dict, role: str) -> list[dict]:
    return [s for s in manifest["samples"] if s["role"] == role]


def _sample_by_index(manifest: dict, index: int) -> dict:
    for s in manifest["samples"]:
        if s["index"] == index:
            return s
    raise PipelineError(f"sample {index} not in manifest")


def load_normalized_stack(run_dir: Path, entry: dict) -> np.ndarray:
    """Normalized (N, 4, H, W) stack using the manifest statistics."""
    if entry["cine"] is None:
        raise PipelineError(f"sample {entry['index']} has no rendered cine")
    cine = load_cine(Path(run_dir) / entry["cine"], pixel_spacing=entry["pixel_spacing"])
    std = max(entry["norm_std"], 1e-8)
    return (cine.stack() - entry["norm_mean"]) / std


def load_video(run_dir: Path, entry: dict) -> MeshVideo:
    if entry["mesh_dir"] is None:
        raise PipelineError(f"sample {entry['index']} has no stored mesh video")
    return load_mesh_video(Path(run_dir) / entry["mesh_dir"])


def _write_history_csv(path: Path, rows: list[dict]) -> None:
    if not rows:
        path.write_text("", encoding="utf-8")
        return
    keys = list(rows[0])
    lines = [",".join(keys)]
    for row in rows:
        lines.append(",".join(f"{row[k]:.9g}" if isinstance(row[k], float) else str(row[k]) for k in keys))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def train_image_stage(run_dir: str | Path, config: RunConfig, view_config: str) -> Path:
    run_dir = Path(run_dir)
    manifest = load_manifest(run_dir)
    cfg = config.image_ae
    pool = [
        load_normalized_stack(run_dir, e) for e in _samples_by_role(manifest, "image")
    ]
    ae = ImageSequenceAutoencoder(
        image_size=config.dataset.image_size,
        views=views_for(view_config),
        latent_dim=cfg.latent_dim,
        conv_channels=cfg.conv_channels,
        hidden=cfg.hidden,
        epochs=cfg.epochs,
        batch_size=cfg.batch_size,
        lr=cfg.lr,
        kappa=cfg.kappa,
        seed=cfg.seed,
    )
    ae.fit(pool)
    (run_dir / "checkpoints").mkdir(exist_ok=True)
    path = _checkpoint(run_dir, f"image_ae_{view_tag(view_config)}")
    ae.save(path)
    _write_history_csv(
        path.with_name(f"history_image_ae_{view_tag(view_config)}.csv"),
        [{"epoch": i + 1, "loss": v} for i, v in enumerate(ae.history_)],
    )
    return path


def train_mesh_stage(run_dir: str | Path, config: RunConfig) -> Path:
    run_dir = Path(run_dir)
    manifest = load_manifest(run_dir)
    cfg = config.mesh_ae
    template = load_mesh(run_dir / manifest["template"])
    pool = [load_video(run_dir, e) for e in _samples_by_role(manifest, "mesh")]
    ae = MeshSequenceAutoencoder(
        template=template,
        latent_dim=cfg.latent_dim,
        gc_width=cfg.gc_width,
        vertex_feat=cfg.vertex_feat,
        hidden=cfg.hidden,
        epochs=cfg.epochs,
        batch_size=cfg.batch_size,
        lr=cfg.lr,
        kappa=cfg.kappa,
        coord_scale=cfg.coord_scale,
        delta_scale=cfg.delta_scale,
        disp_scale=cfg.disp_scale,
        seed=cfg.seed,
    )
    ae.fit(pool)
    (run_dir / "checkpoints").mkdir(exist_ok=True)
    path = _checkpoint(run_dir, "mesh_ae")
    ae.save(path)
    _write_history_csv(
        path.with_name("history_mesh_ae.csv"),
        [{"epoch": i + 1, "loss": v} for i, v in enumerate(ae.history_)],
    )
    return path


def train_ef_stage(run_dir: str | Path, config: RunConfig) -> Path:
    run_dir = Path(run_dir)
    manifest = load_manifest(run_dir)
    cfg = config.ef
    mesh_ae = MeshSequenceAutoencoder.load(_require_checkpoint(run_dir, "mesh_ae"))
    structure = cfg.structure

    def codes_and_labels(role: str):
        entries = _samples_by_role(manifest, role)
        codes = np.stack(
            [mesh_ae.encode(load_video(run_dir, e)).to_vector() for e in entries]
        )
        labels = np.array([e["ef"][structure] for e in entries])
        return codes, labels

    x_train, y_train = codes_and_labels("mesh")
    model = EjectionFractionRegressor(
        hidden=cfg.hidden,
        epochs=cfg.epochs,
        batch_size=cfg.batch_size,
        lr=cfg.lr,
        seed=cfg.seed,
    )
    model.fit(x_train, y_train)
    x_val, y_val = codes_and_labels("validation")
    val_mae = float(np.abs(model.predict(x_val) - y_val).mean())
    (run_dir / "checkpoints").mkdir(exist_ok=True)
    path = _checkpoint(run_dir, "ef")
    model.save(path)
    _write_history_csv(
        path.with_name("history_ef.csv"),
        [{"epoch": i + 1, "loss": v} for i, v in enumerate(model.history_)]
        + [{"epoch": "validation_mae", "loss": val_mae}],
    )
    return path


def train_mapping_stage(run_dir: str | Path, config: RunConfig, view_config: str) -> Path:
    run_dir = Path(run_dir)
    manifest = load_manifest(run_dir)
    cfg = config.mapping
    tag = view_tag(view_config)
    image_ae = ImageSequenceAutoencoder.load(_require_checkpoint(run_dir, f"image_ae_{tag}"))
    mesh_ae = MeshSequenceAutoencoder.load(_require_checkpoint(run_dir, "mesh_ae"))
    ef_model = EjectionFractionRegressor.load(_require_checkpoint(run_dir, "ef"))
    structure = config.ef.structure

    image_entries = _samples_by_role(manifest, "image")
    mesh_entries = _samples_by_role(manifest, "mesh")
    val_entries = _samples_by_role(manifest, "validation")
    phi_image = np.stack(
        [
            image_ae.encode(load_normalized_stack(run_dir, e)).to_vector()
            for e in image_entries
        ]
    )
    phi_mesh = np.stack(
        [mesh_ae.encode(load_video(run_dir, e)).to_vector() for e in mesh_entries]
    )
    ef_image = np.array([e["ef"][structure] for e in image_entries])
    ef_mesh = np.array([e["ef"][structure] for e in mesh_entries])
    validation = {
        "phi_image": np.stack(
            [
                image_ae.encode(load_normalized_stack(run_dir, e)).to_vector()
                for e in val_entries
            ]
        ),
        "ef_image": np.array([e["ef"][structure] for e in val_entries]),
        "phi_mesh": np.stack(
            [mesh_ae.encode(load_video(run_dir, e)).to_vector() for e in val_entries]
        ),
        "ef_mesh": np.array([e["ef"][structure] for e in val_entries]),
    }
    mapper = LatentCycleMapper(
        hidden=cfg.hidden,
        n_layers=cfg.n_layers,
        beta1=cfg.beta1,
        beta2=cfg.beta2,
        beta3=cfg.beta3,
        beta4=cfg.beta4,
        lr_generator=cfg.lr_generator,
        lr_discriminator=cfg.lr_discriminator,
        batch_size=cfg.batch_size,
        max_epochs=cfg.max_epochs,
        patience=cfg.patience,
        seed=cfg.seed,
    )
    mapper.fit(phi_image, phi_mesh, ef_image, ef_mesh, ef_model, validation)
    path = _checkpoint(run_dir, f"mapping_{tag}")
    mapper.save(path)
    _write_history_csv(path.with_name(f"history_mapping_{tag}.csv"), mapper.history_)
    return path


def _load_stack_components(run_dir: Path, view_config: str):
    tag = view_tag(view_config)
    image_ae = ImageSequenceAutoencoder.load(_require_checkpoint(run_dir, f"image_ae_{tag}"))
    mesh_ae = MeshSequenceAutoencoder.load(_require_checkpoint(run_dir, "mesh_ae"))
    mapper = LatentCycleMapper.load(_require_checkpoint(run_dir, f"mapping_{tag}"))
    return image_ae, mapper, mesh_ae


def infer_stage(
    run_dir: str | Path,
    config: RunConfig,
    sample_index: int,
    out_dir: str | Path,
    view_config: str = "lax+sax",
    n_frames: int | None = None,
) -> Path:
    run_dir = Path(run_dir)
    manifest = load_manifest(run_dir)
    entry = _sample_by_index(manifest, sample_index)
    image_ae, mapper, mesh_ae = _load_stack_components(run_dir, view_config)
    stack = load_normalized_stack(run_dir, entry)
    frames = n_frames or (config.eval.n_frames_out or stack.shape[0])
    video = infer_mesh_video(stack, image_ae, mapper, mesh_ae, n_frames=frames)
    out_dir = Path(out_dir)
    _save_mesh_video(video, out_dir)
    return out_dir


def eval_stage(run_dir: str | Path, config: RunConfig) -> Path:
    run_dir = Path(run_dir)
    manifest = load_manifest(run_dir)
    structure = config.ef.structure
    eval_cfg = EvalConfig(
        asd_mode=config.eval.asd_mode,
        surface_samples=config.eval.surface_samples,
        icp_max_iters=config.eval.icp_max_iters,
        icp_tol=config.eval.icp_tol,
        refine_iters=config.eval.refine_iters,
        n_frames_out=config.eval.n_frames_out,
        seed=config.eval.seed,
    )
    test_entries = _samples_by_role(manifest, "test")
    results: dict[str, dict] = {"config": config_text(config)}
    for view_config in config.run.views:
        image_ae, mapper, mesh_ae = _load_stack_components(run_dir, view_config)

        def predict(stack: np.ndarray) -> MeshVideo:
            frames = eval_cfg.n_frames_out or stack.shape[0]
            return infer_mesh_video(stack, image_ae, mapper, mesh_ae, n_frames=frames)

        samples = [
            (
                e["index"],
                load_normalized_stack(run_dir, e),
                load_video(run_dir, e),
                float(e["ef"][structure]),
            )
            for e in test_entries
        ]
        report = evaluate_samples(
            samples,
            predict,
            eval_cfg,
            view_config=view_config,
            config_text=config_text(config),
        )
        results[view_config] = report.to_dict()
    (run_dir / "eval").mkdir(exist_ok=True)
    path = run_dir / "eval" / "results.json"
    _write_json(path, results)
    return path


def report_stage(run_dir: str | Path, config: RunConfig) -> Path:
    from .plots import svg_lines, svg_scatter
    from .geometry.mesh import STRUCTURES

    run_dir = Path(run_dir)
    results_path = run_dir / "eval" / "results.json"
    if not results_path.exists():
        raise PipelineError(f"missing evaluation results: {results_path} (run `eval` first)")
    results = json.loads(results_path.read_text(encoding="utf-8"))
    report_dir = run_dir / "report"
    report_dir.mkdir(exist_ok=True)

    view_configs = [k for k in results if k != "config"]
    columns = list(STRUCTURES) + ["Avg"]
    lines = ["view,phase," + ",".join(columns)]
    for view in view_configs:
        rep = results[view]
        for phase in ("ED", "ES"):
            cells = []
            for structure in columns:
                mean = rep["asd_mean"].get(phase, {}).get(structure)
                std = rep["asd_std"].get(phase, {}).get(structure)
                if mean is None:
                    cells.append("")
                elif std is None:
                    cells.append(f"{mean:.2f}")
                else:
                    cells.append(f"{mean:.2f}±{std:.2f}")
            lines.append(f"{view},{phase}," + ",".join(cells))
    (report_dir / "asd_table.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")

    summary = [
        "4D heart reconstruction evaluation",
        "==================================",
        "",
        "ASD table: asd_table.csv (mean±std mm per structure)",
        f"ASD mode: {results[view_configs[0]]['asd_mode']}"
        if view_configs
        else "ASD mode: n/a",
        "Avg column: mean of per-structure means.",
        "",
    ]
    for view in view_configs:
        rep = results[view]
        tag = view_tag(view)
        pairs = rep["ef_pairs"]
        ef_lines = ["gt,predicted"] + [f"{gt:.6f},{pred:.6f}" for gt, pred in pairs]
        (report_dir / f"ef_scatter_{tag}.csv").write_text(
            "\n".join(ef_lines) + "\n", encoding="utf-8"
        )
        if pairs:
            svg_scatter(
                [p[0] for p in pairs],
                [p[1] for p in pairs],
                report_dir / f"ef_scatter_{tag}.svg",
                title=f"EF agreement ({view}): r = {rep['pearson_r']:.3f}",
                xlabel="ground-truth EF",
                ylabel="predicted EF",
            )
        curve_lines = ["sample,frame,LV,RV,LA,RA"]
        for sample in rep["samples"]:
            curves = sample["volume_curves"]
            n = len(next(iter(curves.values()), []))
            for t in range(n):
                row = [str(sample["index"]), str(t)]
                for chamber in ("LV", "RV", "LA", "RA"):
                    vals = curves.get(chamber)
                    row.append(f"{vals[t]:.4f}" if vals else "")
                curve_lines.append(",".join(row))
        (report_dir / f"volume_curves_{tag}.csv").write_text(
            "\n".join(curve_lines) + "\n", encoding="utf-8"
        )
        if rep["samples"]:
            first = rep["samples"][0]
            svg_lines(
                {k: v for k, v in first["volume_curves"].items()},
                report_dir / f"volume_curves_{tag}.svg",
                title=f"Chamber volumes over one cycle ({view}, sample {first['index']})",
                xlabel="frame",
                ylabel="volume (mL)",
            )
        summary += [
            f"[{view}] evaluated {rep['n_evaluated']} samples, {rep['n_failed']} failed",
            f"[{view}] EF Pearson r = {rep['pearson_r']:.4f}",
        ]
        for failure in rep["failures"]:
            summary.append(f"[{view}] FAILURE: {failure}")
    summary += ["", "Resolved configuration:", "", results.get("config", "")]
    (report_dir / "report.txt").write_text("\n".join(summary), encoding="utf-8")
    return report_dir
