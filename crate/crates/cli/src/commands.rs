use std::path::{Path, PathBuf};

use cotrain::collab::{self, evaluate, holdout_split, predict, prepare_split, write_history, Arm, Experiment, Fusion};
use cotrain::data::{
    dice_score, generate_cohort, load_manifest, load_volume, save_manifest, save_volume, write_volume_file,
    SampleRef, VolumeHeader, VolumeSample, DTYPE, N_CHANNELS,
};
use cotrain::geometry::{write_mesh_off, write_points_csv};
use cotrain::grid::Grid;
use cotrain::interpret::{
    gnn_explain, grad_cam_3d, project_cam_to_points, threshold_report, write_point_map, write_voxel_map,
};
use cotrain::model::{load_state, save_state};
use cotrain::prep::{prepare, Prepared};
use serde::Serialize;
use serde_json::json;

use crate::config::RunConfig;
use crate::{create_dir, write_bytes, write_json, CliError, Common, SplitArg};

const MANIFEST: &str = "manifest.json";
const THRESHOLDS: [f64; 2] = [0.5, 0.8];

/// Loads and resolves the config, creates the output directory and writes
/// the resolved snapshot into it.
fn setup(common: &Common) -> Result<RunConfig, CliError> {
    let cfg = RunConfig::load(common.config.as_deref())?.resolve(&common.overrides())?;
    create_dir(&cfg.out)?;
    cfg.snapshot(&cfg.out)?;
    Ok(cfg)
}

fn load_cohort(dir: &Path) -> Result<Vec<VolumeSample>, CliError> {
    let entries = load_manifest(&dir.join(MANIFEST))?;
    entries
        .iter()
        .map(|e| {
            let s = load_volume(&dir.join(format!("{}.json", e.id)))?;
            if s.id != e.id || s.label != e.label {
                return Err(CliError::Data(format!(
                    "volume {} (label {}) disagrees with manifest entry {} (label {})",
                    s.id, s.label, e.id, e.label
                )));
            }
            Ok(s)
        })
        .collect()
}

/// Samples from `dir` when given, otherwise synthesized from the config.
fn cohort(cfg: &RunConfig, dir: Option<&Path>) -> Result<Vec<VolumeSample>, CliError> {
    match dir {
        Some(d) => load_cohort(d),
        None => Ok(generate_cohort(&cfg.cohort)?),
    }
}

fn ids(samples: &[VolumeSample]) -> Vec<&str> {
    samples.iter().map(|s| s.id.as_str()).collect()
}

pub fn synth(common: &Common) -> Result<(), CliError> {
    let cfg = setup(common)?;
    let samples = generate_cohort(&cfg.cohort)?;
    let mut manifest = Vec::with_capacity(samples.len());
    for s in &samples {
        save_volume(s, &cfg.out)?;
        manifest.push(SampleRef {
            id: s.id.clone(),
            label: s.label,
        });
    }
    save_manifest(&cfg.out.join(MANIFEST), &manifest)?;
    println!("wrote {} samples to {}", samples.len(), cfg.out.display());
    Ok(())
}

#[derive(Serialize)]
struct PreprocessedSample {
    id: String,
    label: u8,
    dice: f64,
    crop_size: usize,
    n_points: usize,
    mesh_vertices: usize,
    mesh_triangles: usize,
}

#[derive(Serialize)]
struct Skipped {
    id: String,
    reason: String,
}

fn write_crop(path: &Path, p: &Prepared) -> Result<(), CliError> {
    let s = p.crop.size();
    let voxels = s * s * s;
    let channels = (0..N_CHANNELS)
        .map(|c| Grid::from_vec([s; 3], p.crop.data[c * voxels..(c + 1) * voxels].iter().map(|&v| v as f32).collect()))
        .collect::<cotrain::Result<Vec<_>>>()?;
    let header = VolumeHeader {
        id: p.id.clone(),
        dims: [s; 3],
        channels: N_CHANNELS,
        dtype: DTYPE.into(),
        label: Some(p.label),
        mask: true,
    };
    write_volume_file(path, &header, &channels, Some(&p.crop.mask))?;
    Ok(())
}

/// Per sample: `<id>/crop.json` (+ `.bin`), `<id>/points.csv` and
/// `<id>/mesh.off`; plus `summary.json`. Samples whose mask cannot be meshed
/// are skipped and listed.
pub fn preprocess(common: &Common, cohort_dir: &Path) -> Result<(), CliError> {
    let cfg = setup(common)?;
    let samples = load_cohort(cohort_dir)?;
    let mut done = Vec::new();
    let mut skipped = Vec::new();
    for s in &samples {
        let p = match prepare(s, cfg.cnn.crop, cfg.n_points, cfg.seed) {
            Ok(p) => p,
            Err(e @ cotrain::Error::Mesh(_)) => {
                eprintln!("skipping {}: {e}", s.id);
                skipped.push(Skipped {
                    id: s.id.clone(),
                    reason: e.to_string(),
                });
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        let dir = cfg.out.join(&s.id);
        create_dir(&dir)?;
        write_crop(&dir.join("crop.json"), &p)?;
        write_points_csv(&dir.join("points.csv"), &p.surface.cloud, None)?;
        write_mesh_off(&dir.join("mesh.off"), &p.surface.mesh)?;
        done.push(PreprocessedSample {
            id: s.id.clone(),
            label: s.label,
            dice: dice_score(&s.mask, &s.mask.largest_component())?,
            crop_size: p.crop.size(),
            n_points: p.surface.cloud.len(),
            mesh_vertices: p.surface.mesh.vertices.len(),
            mesh_triangles: p.surface.mesh.triangles.len(),
        });
    }
    let mean_dice = if done.is_empty() {
        0.0
    } else {
        done.iter().map(|d| d.dice).sum::<f64>() / done.len() as f64
    };
    write_json(
        &cfg.out.join("summary.json"),
        &json!({
            "n_samples": samples.len(),
            "processed": done.len(),
            "skipped": skipped.len(),
            "mean_dice": mean_dice,
            "samples": done,
            "skipped_samples": skipped,
        }),
    )?;
    println!(
        "preprocessed {} of {} samples ({} skipped), mean DICE {mean_dice:.4}",
        done.len(),
        samples.len(),
        skipped.len()
    );
    Ok(())
}

/// Writes `checkpoint.json` (+ `.bin`), `history.jsonl`, `split.json` and
/// `metrics.json`.
pub fn train(common: &Common, cohort_dir: Option<&Path>) -> Result<(), CliError> {
    let cfg = setup(common)?;
    let samples = cohort(&cfg, cohort_dir)?;
    let exp = cfg.experiment();
    let (fit, val, test) = holdout_split(&samples, cfg.seed)?;
    write_json(
        &cfg.out.join("split.json"),
        &json!({ "fit": ids(&fit), "val": ids(&val), "test": ids(&test) }),
    )?;
    let split = prepare_split(&exp, fit, &val)?;
    let test = exp.prepare(&test)?;
    let run = collab::train(exp.init()?, &split.fit, &split.val, &cfg.train, cfg.arm)?;
    let mut state = run.state;
    save_state(&state, &cfg.out.join("checkpoint.json"))?;
    write_history(&cfg.out.join("history.jsonl"), &run.history)?;
    let fusion = cfg.arm.fusion();
    let val_report = evaluate(&mut state, &split.val, fusion)?;
    let test_report = evaluate(&mut state, &test, fusion)?;
    println!(
        "{}: best epoch {} of {}, val accuracy {:.1}%, test accuracy {:.1}%",
        cfg.arm.label(),
        run.best_epoch,
        run.history.len(),
        val_report.accuracy,
        test_report.accuracy
    );
    write_json(
        &cfg.out.join("metrics.json"),
        &json!({
            "arm": cfg.arm,
            "best_epoch": run.best_epoch,
            "epochs_run": run.history.len(),
            "val": val_report,
            "test": test_report,
        }),
    )
}

/// Writes `ablation.json`, `table.txt` and one checkpoint per arm.
pub fn ablate(common: &Common, cohort_dir: Option<&Path>) -> Result<(), CliError> {
    let cfg = setup(common)?;
    let samples = cohort(&cfg, cohort_dir)?;
    let result = collab::ablate(&samples, &cfg.experiment())?;
    let table = result.table.render();
    write_json(&cfg.out.join("ablation.json"), &result.table)?;
    write_bytes(&cfg.out.join("table.txt"), table.as_bytes())?;
    for (arm, state) in &result.states {
        save_state(state, &cfg.out.join(checkpoint_name(*arm)))?;
    }
    print!("{table}");
    Ok(())
}

fn checkpoint_name(arm: Arm) -> String {
    let name = match arm {
        Arm::Collaborative => "collaborative",
        Arm::CnnOnly => "cnn_only",
        Arm::GnnOnly => "gnn_only",
    };
    format!("{name}.checkpoint.json")
}

/// The checkpoint's architecture with the run's point count and seed.
fn checkpoint_experiment(cfg: &RunConfig, state: &cotrain::model::ModelState) -> Result<Experiment, CliError> {
    let exp = Experiment {
        cnn: state.cnn.clone(),
        gnn: state.gnn.clone(),
        train: cfg.train.clone(),
        n_points: cfg.n_points,
    };
    exp.validate()?;
    Ok(exp)
}

/// Scores the checkpoint on one part of the held-out split (or the whole
/// cohort) and writes `eval.json`.
pub fn eval(
    common: &Common,
    checkpoint: &Path,
    cohort_dir: Option<&Path>,
    fusion: Fusion,
    split: SplitArg,
) -> Result<(), CliError> {
    let cfg = setup(common)?;
    let mut state = load_state(checkpoint)?;
    let exp = checkpoint_experiment(&cfg, &state)?;
    let samples = cohort(&cfg, cohort_dir)?;
    let chosen = if split == SplitArg::All {
        samples
    } else {
        let (fit, val, test) = holdout_split(&samples, cfg.seed)?;
        match split {
            SplitArg::Fit => fit,
            SplitArg::Val => val,
            _ => test,
        }
    };
    let data = exp.prepare(&chosen)?;
    let report = evaluate(&mut state, &data, fusion)?;
    println!(
        "accuracy {:.1}%, sensitivity {:.1}%, specificity {:.1}% over {} samples",
        report.accuracy,
        report.sensitivity,
        report.specificity,
        report.total()
    );
    write_json(
        &cfg.out.join("eval.json"),
        &json!({
            "checkpoint": checkpoint,
            "split": split,
            "fusion": fusion,
            "report": report,
        }),
    )
}

/// Per sample id, under `<out>/<id>/`: the Grad-CAM crop map `cam.json`
/// (+ `.bin`), its projection `cam_points.csv`, the explainer's point
/// importances `gnn_points.csv`, its edge mask `gnn_edges.json` and the
/// threshold clusters of both point maps `clusters.json`.
pub fn explain(
    common: &Common,
    checkpoint: &Path,
    cohort_dir: Option<&Path>,
    sample_ids: &[String],
    fusion: Fusion,
) -> Result<(), CliError> {
    let cfg = setup(common)?;
    let mut state = load_state(checkpoint)?;
    let exp = checkpoint_experiment(&cfg, &state)?;
    let samples = cohort(&cfg, cohort_dir)?;
    let last_layer = state.cnn.widths.len() - 1;
    for id in sample_ids {
        let sample = samples
            .iter()
            .find(|s| &s.id == id)
            .ok_or_else(|| CliError::Data(format!("no sample {id:?} in the cohort")))?;
        let p = &exp.prepare(std::slice::from_ref(sample))?[0];
        let prob = predict(&mut state, std::slice::from_ref(p), fusion, 1)?[0];
        let class = u8::from(prob >= 0.5);
        let dir: PathBuf = cfg.out.join(id);
        create_dir(&dir)?;
        let cam = grad_cam_3d(&mut state, p, last_layer, class)?;
        write_voxel_map(&dir.join("cam.json"), &cam)?;
        let cam_points = project_cam_to_points(&cam, &p.surface, &p.crop.bbox, &p.crop.mask)?;
        write_point_map(&dir.join("cam_points.csv"), &p.surface.cloud, &cam_points)?;
        let ex = gnn_explain(&mut state, &p.surface.cloud, id, &cfg.explain)?;
        write_point_map(&dir.join("gnn_points.csv"), &p.surface.cloud, &ex.points)?;
        write_json(
            &dir.join("gnn_edges.json"),
            &json!({
                "sources": ex.graph.sources,
                "targets": ex.graph.targets,
                "mask": ex.edges.values,
                "raw_mask": ex.raw_mask,
                "predicted": ex.predicted,
                "losses": ex.losses,
            }),
        )?;
        write_json(
            &dir.join("clusters.json"),
            &json!({
                "probability": prob,
                "class": class,
                "cam": threshold_report(&cam_points, &p.surface.cloud, &THRESHOLDS)?,
                "gnn": threshold_report(&ex.points, &p.surface.cloud, &THRESHOLDS)?,
            }),
        )?;
        println!("{id}: p = {prob:.3}, attributions in {}", dir.display());
    }
    Ok(())
}
