//! Executors for resolved command invocations.
//!
//! Every run gets the same directory layout — `checkpoints/`, `images/`,
//! `metrics/`, `logs/`, and the `config.resolved.toml` snapshot that `rerun`
//! can replay. Loss logs are plain CSV rewritten after every epoch, so a
//! killed run still leaves a complete log for the epochs it finished.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use candle_core::Device;
use haustra::dataio::toygen::{self, ToyConfig};
use haustra::dataio::{
    load_paired, load_unpaired, read_depth_png, read_image_png, undistort_depth,
    undistort_image, write_depth_png, write_image_png, write_paired_dataset,
    write_unpaired_dataset, Intrinsics, Manifest, SequenceEntry,
};
use haustra::depthnet::{load_depth_net, predict_depth, DepthLossRow, DepthTrainer, LoadedDepthNet};
use haustra::eval::{
    aggregate_metrics, fid, frame_metrics, kid, median_rescale, DepthMetrics,
    RandomConvExtractor,
};
use haustra::miloss::{hard_joint_histogram, hard_mi, intensity, HistogramSpec, JointHistogram};
use haustra::translation::{load_translation, translate, LossRow, TranslationTrainer};
use haustra::types::{Domain, Image, PairedSample};
use serde::Serialize;

use crate::config::{
    snapshot_with_hash, AblationId, DataSection, DepthSection, EvalSection, ExperimentConfig,
    TranslationSection,
};
use crate::grid::{colormap, depth_panel_pixels, render_grid, Panel};
use crate::{
    AblationSuiteSpec, CliError, CompareGridSpec, Direction, EvaluateSpec, Invocation,
    ToyDataSpec, TrainDepthSpec, TrainTranslateSpec, TranslateDatasetSpec,
};

/// Quantization step for toy depth PNGs: 0.01 mm per integer unit keeps the
/// 10–200 mm toy range well inside the 16-bit range with fine resolution.
const TOY_DEPTH_SCALE_MM: f64 = 0.01;

// ---------------------------------------------------------------------------
// entry points
// ---------------------------------------------------------------------------

/// Reads a `config.resolved.toml` snapshot back into an invocation.
pub fn load_snapshot(path: &Path) -> Result<Invocation, CliError> {
    if !path.exists() {
        return Err(CliError::usage(format!(
            "snapshot not found: {}",
            path.display()
        )));
    }
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::usage(format!("cannot read {}: {e}", path.display())))?;
    toml::from_str(&text)
        .map_err(|e| CliError::usage(format!("invalid snapshot {}: {e}", path.display())))
}

/// Executes an invocation into `out_dir`, writing the snapshot first so even
/// a failed run can be reproduced.
pub fn execute(inv: &Invocation, out_dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(out_dir)?;
    let (snapshot, config_hash) = snapshot_with_hash(inv)?;
    fs::write(out_dir.join("config.resolved.toml"), &snapshot)?;
    match inv {
        Invocation::ToyData(s) => op_toy_data(s, out_dir),
        Invocation::TrainTranslate(s) => op_train_translate(s, &RunDirs::create(out_dir)?),
        Invocation::TranslateDataset(s) => op_translate_dataset(s, &RunDirs::create(out_dir)?),
        Invocation::TrainDepth(s) => op_train_depth(s, &RunDirs::create(out_dir)?),
        Invocation::Evaluate(s) => op_evaluate(s, &RunDirs::create(out_dir)?, &config_hash),
        Invocation::CompareGrid(s) => op_compare_grid(s, &RunDirs::create(out_dir)?),
        Invocation::AblationSuite(s) => {
            op_ablation_suite(s, &RunDirs::create(out_dir)?, &config_hash)
        }
    }
}

/// The standard run-directory layout.
struct RunDirs {
    root: PathBuf,
    checkpoints: PathBuf,
    images: PathBuf,
    metrics: PathBuf,
    logs: PathBuf,
}

impl RunDirs {
    fn create(root: &Path) -> Result<Self, CliError> {
        let dirs = Self {
            root: root.to_path_buf(),
            checkpoints: root.join("checkpoints"),
            images: root.join("images"),
            metrics: root.join("metrics"),
            logs: root.join("logs"),
        };
        for d in [&dirs.checkpoints, &dirs.images, &dirs.metrics, &dirs.logs] {
            fs::create_dir_all(d)?;
        }
        Ok(dirs)
    }
}

// ---------------------------------------------------------------------------
// shared helpers
// ---------------------------------------------------------------------------

/// Input-data problems exit with code 2: the user handed us something broken.
fn usage<E: std::fmt::Display>(e: E) -> CliError {
    CliError::usage(e.to_string())
}

fn load_manifest(path: &Path) -> Result<Manifest, CliError> {
    Manifest::load(path).map_err(usage)
}

fn load_paired_input(manifest: &Manifest) -> Result<Vec<PairedSample>, CliError> {
    load_paired(manifest).map_err(usage)
}

fn images_of(manifest: &Manifest) -> Result<Vec<Image>, CliError> {
    let samples = load_unpaired(manifest).map_err(usage)?;
    Ok(samples.into_iter().map(|s| s.image).collect())
}

fn translation_csv(rows: &[LossRow]) -> String {
    let mut s = String::from("epoch,step,gan_G,gan_F,cyc,mi,total\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.epoch, r.step, r.gan_g, r.gan_f, r.cyc, r.mi, r.total
        );
    }
    s
}

fn depth_csv(rows: &[DepthLossRow]) -> String {
    let mut s = String::from("epoch,step,mse\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{}", r.epoch, r.step, r.mse);
    }
    s
}

fn final_epoch_mean_mse(rows: &[DepthLossRow]) -> Option<f64> {
    let last = rows.last()?.epoch;
    let losses: Vec<f64> = rows
        .iter()
        .filter(|r| r.epoch == last)
        .map(|r| r.mse)
        .collect();
    Some(losses.iter().sum::<f64>() / losses.len() as f64)
}

// ---------------------------------------------------------------------------
// toy-data
// ---------------------------------------------------------------------------

fn op_toy_data(spec: &ToyDataSpec, out: &Path) -> Result<(), CliError> {
    let train = ToyConfig {
        resolution: spec.resolution,
        sequences: spec.sequences,
        frames_per_sequence: spec.frames,
        seed: spec.seed,
    };
    let eval = ToyConfig {
        resolution: spec.resolution,
        sequences: spec.eval_sequences,
        frames_per_sequence: spec.eval_frames,
        seed: spec.seed,
    };
    let a = toygen::generate_domain_a(&train).map_err(usage)?;
    let b = toygen::generate_domain_b(&train).map_err(usage)?;
    let e = toygen::generate_eval(&eval).map_err(usage)?;
    write_paired_dataset(&out.join("domain_a"), "toy-domain-a", &a, TOY_DEPTH_SCALE_MM)?;
    write_unpaired_dataset(&out.join("domain_b"), "toy-domain-b", &b)?;
    write_paired_dataset(&out.join("eval"), "toy-eval", &e, TOY_DEPTH_SCALE_MM)?;
    println!(
        "wrote toy datasets under {}: {} source pairs, {} target frames, {} eval pairs",
        out.display(),
        a.len(),
        b.len(),
        e.len()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// train-translate
// ---------------------------------------------------------------------------

fn op_train_translate(spec: &TrainTranslateSpec, dirs: &RunDirs) -> Result<(), CliError> {
    let exp = &spec.experiment;
    let a_path = ExperimentConfig::require_path(&exp.data.domain_a, "domain_a")?;
    let b_path = ExperimentConfig::require_path(&exp.data.domain_b, "domain_b")?;
    let a = load_paired_input(&load_manifest(&a_path)?)?;
    let b = load_unpaired(&load_manifest(&b_path)?).map_err(usage)?;
    let cfg = exp.translation.to_translation_config(exp.seed)?;
    let target = cfg.epochs;
    let mut trainer = match &spec.resume {
        Some(p) => {
            let mut t = TranslationTrainer::resume(p, &a, &b).map_err(usage)?;
            t.set_target_epochs(target);
            t
        }
        None => TranslationTrainer::new(cfg, &a, &b)?,
    };

    let csv_path = dirs.logs.join("translation_loss.csv");
    fs::write(&csv_path, translation_csv(trainer.rows()))?;
    while trainer.completed_epochs() < target {
        trainer.run_epoch()?;
        fs::write(&csv_path, translation_csv(trainer.rows()))?;
        let done = trainer.completed_epochs();
        if let Some(last) = trainer.rows().last() {
            eprintln!(
                "epoch {done}/{target}: total {:.4} (gan_G {:.4} gan_F {:.4} cyc {:.4} mi {:.4})",
                last.total, last.gan_g, last.gan_f, last.cyc, last.mi
            );
        }
        if spec.checkpoint_every > 0 && done % spec.checkpoint_every == 0 && done < target {
            trainer.save_checkpoint(
                &dirs
                    .checkpoints
                    .join(format!("translation_epoch{done:04}.safetensors")),
            )?;
        }
    }

    let final_path = dirs.checkpoints.join("translation_final.safetensors");
    trainer.save_checkpoint(&final_path)?;
    if spec.dump_histograms {
        dump_joint_histogram(&trainer, &a, dirs)?;
    }
    println!(
        "translation training done: {} epochs, checkpoint {}",
        trainer.completed_epochs(),
        final_path.display()
    );
    Ok(())
}

/// Renders the depth/translated-intensity joint histogram of the first
/// source frame as a heatmap, for eyeballing how much structure the
/// translation kept.
fn dump_joint_histogram(
    trainer: &TranslationTrainer,
    a: &[PairedSample],
    dirs: &RunDirs,
) -> Result<(), CliError> {
    let Some(sample) = a.first() else {
        return Ok(());
    };
    let translated = translate(trainer.generator_ab(), &sample.image, trainer.device())?;
    let inten = intensity(&translated);
    let hist = hard_joint_histogram(&sample.depth, &inten, &trainer.config().histogram)?;
    let img = histogram_heatmap(&hist);
    write_image_png(&dirs.images.join("joint_histogram.png"), &img)?;
    Ok(())
}

/// Depth bins run bottom-to-top, intensity bins left-to-right; cells are
/// upscaled so small histograms stay legible.
fn histogram_heatmap(hist: &JointHistogram) -> Image {
    let n = hist.n_bins();
    let cell = (256usize / n).max(1);
    let side = n * cell;
    let max = hist
        .counts()
        .iter()
        .cloned()
        .fold(0.0_f64, f64::max)
        .max(1e-12);
    let mut bytes = vec![0u8; side * side * 3];
    for i in 0..n {
        let row0 = (n - 1 - i) * cell;
        for j in 0..n {
            let rgb = colormap(hist.counts()[(i, j)] / max);
            for dy in 0..cell {
                for dx in 0..cell {
                    let idx = ((row0 + dy) * side + j * cell + dx) * 3;
                    bytes[idx..idx + 3].copy_from_slice(&rgb);
                }
            }
        }
    }
    Image::from_rgb8(side, side, &bytes).expect("heatmap dimensions are valid")
}

// ---------------------------------------------------------------------------
// translate-dataset
// ---------------------------------------------------------------------------

fn op_translate_dataset(spec: &TranslateDatasetSpec, dirs: &RunDirs) -> Result<(), CliError> {
    let loaded = load_translation(&spec.checkpoint).map_err(usage)?;
    let manifest = load_manifest(&spec.manifest)?;
    let (source_domain, generator) = match spec.direction {
        Direction::AToB => (Domain::A, &loaded.gen_ab),
        Direction::BToA => (Domain::B, &loaded.gen_ba),
    };
    if manifest.domain != source_domain {
        return Err(CliError::usage(format!(
            "direction {} translates domain {} frames, but {} is a domain {} dataset",
            spec.direction,
            source_domain,
            spec.manifest.display(),
            manifest.domain
        )));
    }
    let intrinsics = manifest.load_intrinsics().map_err(usage)?;
    let device = Device::Cpu;

    let mut sequences = Vec::new();
    let mut n_frames = 0usize;
    for seq in &manifest.sequences {
        let mut frames = Vec::new();
        for (idx, frame) in seq.frames.iter().enumerate() {
            let mut img = read_image_png(frame).map_err(usage)?;
            if let Some(intr) = &intrinsics {
                img = undistort_image(&img, intr)?;
            }
            let out = translate(generator, &img, &device)?;
            let rel = PathBuf::from("images").join(format!("{}_{idx:04}.png", seq.sequence_id));
            write_image_png(&dirs.root.join(&rel), &out)?;
            frames.push(rel);
            n_frames += 1;
        }
        // Depths are untouched by translation. Source-to-target keeps them
        // paired with the translated frames (undistorting alongside the
        // images when intrinsics apply); the reverse direction has no
        // ground truth to carry.
        let depths = match (&seq.depths, spec.direction) {
            (Some(paths), Direction::AToB) => Some(carry_depths(
                &seq.sequence_id,
                paths,
                &manifest,
                intrinsics.as_ref(),
                dirs,
            )?),
            _ => None,
        };
        sequences.push(SequenceEntry {
            sequence_id: seq.sequence_id.clone(),
            frames,
            depths,
        });
    }

    let out_manifest = Manifest {
        dataset_name: format!("{}-translated", manifest.dataset_name),
        domain: manifest.domain,
        depth_scale_mm: manifest.depth_scale_mm,
        intrinsics: None,
        sequences,
    };
    out_manifest.save(&dirs.root.join("manifest.json"))?;
    println!(
        "translated {n_frames} frames into {}",
        dirs.images.display()
    );
    Ok(())
}

fn carry_depths(
    sequence_id: &str,
    paths: &[PathBuf],
    manifest: &Manifest,
    intrinsics: Option<&Intrinsics>,
    dirs: &RunDirs,
) -> Result<Vec<PathBuf>, CliError> {
    let Some(intr) = intrinsics else {
        // Already absolute (manifest loading resolves them), still valid.
        return Ok(paths.to_vec());
    };
    let depths_dir = dirs.root.join("depths");
    fs::create_dir_all(&depths_dir)?;
    let mut out = Vec::with_capacity(paths.len());
    for (idx, p) in paths.iter().enumerate() {
        let depth = read_depth_png(p, manifest.depth_scale_mm).map_err(usage)?;
        let und = undistort_depth(&depth, intr)?;
        let rel = PathBuf::from("depths").join(format!("{sequence_id}_{idx:04}.png"));
        write_depth_png(&dirs.root.join(&rel), &und, manifest.depth_scale_mm)?;
        out.push(rel);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// train-depth
// ---------------------------------------------------------------------------

fn op_train_depth(spec: &TrainDepthSpec, dirs: &RunDirs) -> Result<(), CliError> {
    let exp = &spec.experiment;
    let samples = load_paired_input(&load_manifest(&spec.manifest)?)?;
    let cfg = exp.depth.to_depth_config(exp.seed)?;
    let target = cfg.epochs;
    let mut trainer = match &spec.resume {
        Some(p) => {
            let mut t = DepthTrainer::resume(p, &samples).map_err(usage)?;
            t.set_target_epochs(target);
            t
        }
        None => DepthTrainer::new(cfg, &samples)?,
    };

    let csv_path = dirs.logs.join("depth_loss.csv");
    fs::write(&csv_path, depth_csv(trainer.rows()))?;
    while trainer.completed_epochs() < target {
        trainer.run_epoch()?;
        fs::write(&csv_path, depth_csv(trainer.rows()))?;
        if let Some(last) = trainer.rows().last() {
            eprintln!(
                "epoch {}/{target}: mse {:.4}",
                trainer.completed_epochs(),
                last.mse
            );
        }
    }

    let final_path = dirs.checkpoints.join("depth_final.safetensors");
    trainer.save_checkpoint(&final_path)?;
    let final_mean = final_epoch_mean_mse(trainer.rows());
    match final_mean {
        Some(m) => println!(
            "depth training done: {} epochs, final epoch mean mse {m:.6}, checkpoint {}",
            trainer.completed_epochs(),
            final_path.display()
        ),
        None => println!(
            "depth training done: {} epochs (no new steps this run), checkpoint {}",
            trainer.completed_epochs(),
            final_path.display()
        ),
    }

    if spec.strict {
        let threshold = exp.depth.max_final_mse.ok_or_else(|| {
            CliError::usage("--strict needs depth.max_final_mse in the config")
        })?;
        let mean = final_mean.ok_or_else(|| {
            CliError::internal(anyhow::anyhow!(
                "strict mode needs at least one training step in this run"
            ))
        })?;
        if mean > threshold {
            return Err(CliError::internal(anyhow::anyhow!(
                "final epoch mean loss {mean} exceeds max_final_mse {threshold}"
            )));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct FrameReport<'a> {
    sequence_id: &'a str,
    frame_index: u32,
    #[serde(flatten)]
    metrics: DepthMetrics,
}

#[derive(Serialize)]
struct DepthReport<'a> {
    aggregate: DepthMetrics,
    per_frame: Vec<FrameReport<'a>>,
}

#[derive(Serialize)]
struct TranslationReport {
    translated: PathBuf,
    reference: PathBuf,
    n_translated: usize,
    n_reference: usize,
    fid: f64,
    kid_mean: f64,
    kid_std: f64,
}

#[derive(Serialize)]
struct MetricsReport<'a> {
    dataset: &'a str,
    model_id: &'a str,
    config_hash: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    extractor_id: Option<String>,
    depth: DepthReport<'a>,
    #[serde(skip_serializing_if = "Option::is_none")]
    translation: Option<TranslationReport>,
}

fn op_evaluate(spec: &EvaluateSpec, dirs: &RunDirs, config_hash: &str) -> Result<(), CliError> {
    let manifest = load_manifest(&spec.manifest)?;
    let samples = load_paired_input(&manifest)?;
    let device = Device::Cpu;
    let net = match (&spec.checkpoint, spec.identity_check) {
        (_, true) => None,
        (Some(p), false) => Some(load_depth_net(p).map_err(usage)?),
        (None, false) => {
            return Err(CliError::usage(
                "--checkpoint is required unless --identity-check is set",
            ))
        }
    };

    let mut per_frame = Vec::with_capacity(samples.len());
    let mut frames = Vec::with_capacity(samples.len());
    for s in &samples {
        let pred = match &net {
            Some(l) => predict_depth(&l.net, &s.image, &device)?,
            None => s.depth.clone(),
        };
        let rescaled = median_rescale(&pred, &s.depth)?;
        let m = frame_metrics(&rescaled, &s.depth)?;
        frames.push(FrameReport {
            sequence_id: &s.sequence_id,
            frame_index: s.frame_index,
            metrics: m,
        });
        per_frame.push(m);
    }
    let aggregate = aggregate_metrics(&per_frame)?;

    let mut extractor_id = None;
    let translation = match (&spec.translated, &spec.reference) {
        (Some(t), Some(r)) => {
            let t_imgs = images_of(&load_manifest(t)?)?;
            let r_imgs = images_of(&load_manifest(r)?)?;
            let extractor = RandomConvExtractor::new(spec.extractor_seed)?;
            extractor_id = Some(extractor.id().to_string());
            let ft = extractor.features(&t_imgs)?;
            let fr = extractor.features(&r_imgs)?;
            let kid_score = kid(&fr, &ft, spec.kid_seed)?;
            Some(TranslationReport {
                translated: t.clone(),
                reference: r.clone(),
                n_translated: t_imgs.len(),
                n_reference: r_imgs.len(),
                fid: fid(&fr, &ft)?,
                kid_mean: kid_score.mean,
                kid_std: kid_score.std,
            })
        }
        _ => None,
    };

    let report = MetricsReport {
        dataset: &manifest.dataset_name,
        model_id: &spec.model_id,
        config_hash,
        extractor_id,
        depth: DepthReport {
            aggregate,
            per_frame: frames,
        },
        translation,
    };
    let mut json =
        serde_json::to_string_pretty(&report).map_err(|e| CliError::internal(e.into()))?;
    json.push('\n');
    fs::write(dirs.metrics.join("metrics.json"), json)?;

    println!(
        "{}: rmse {:.3} mm, absrel {:.4}, d1 {:.4}, d2 {:.4}, d3 {:.4} over {} frames",
        spec.model_id,
        aggregate.rmse_mm,
        aggregate.abs_rel,
        aggregate.delta1,
        aggregate.delta2,
        aggregate.delta3,
        samples.len()
    );
    if let Some(t) = &report.translation {
        println!(
            "translation realism: fid {:.4}, kid {:.6} +- {:.6}",
            t.fid, t.kid_mean, t.kid_std
        );
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// compare-grid
// ---------------------------------------------------------------------------

fn op_compare_grid(spec: &CompareGridSpec, dirs: &RunDirs) -> Result<(), CliError> {
    let manifest = load_manifest(&spec.manifest)?;
    let intrinsics = manifest.load_intrinsics().map_err(usage)?;
    let device = Device::Cpu;
    let mut models = Vec::new();
    for m in &spec.models {
        let loaded = load_depth_net(&m.checkpoint).map_err(usage)?;
        models.push((m.name.clone(), loaded));
    }

    let limit = spec.max_frames.unwrap_or(usize::MAX);
    let mut written = 0usize;
    'outer: for seq in &manifest.sequences {
        let Some(depths) = &seq.depths else {
            return Err(CliError::usage(format!(
                "comparison needs ground-truth depths, but sequence {} has none",
                seq.sequence_id
            )));
        };
        for (idx, (frame, depth)) in seq.frames.iter().zip(depths).enumerate() {
            if written >= limit {
                break 'outer;
            }
            match render_frame(frame, depth, &manifest, intrinsics.as_ref(), &models, &device) {
                Ok(img) => {
                    write_image_png(
                        &dirs
                            .images
                            .join(format!("{}_{idx:04}_grid.png", seq.sequence_id)),
                        &img,
                    )?;
                    written += 1;
                }
                Err(e) => eprintln!(
                    "warning: skipping {} frame {idx}: {e}",
                    seq.sequence_id
                ),
            }
        }
    }
    println!("wrote {written} comparison grids to {}", dirs.images.display());
    Ok(())
}

/// One panel row: the input frame, then each model's median-rescaled
/// prediction on a color scale shared across the row.
fn render_frame(
    frame: &Path,
    depth_path: &Path,
    manifest: &Manifest,
    intrinsics: Option<&Intrinsics>,
    models: &[(String, LoadedDepthNet)],
    device: &Device,
) -> Result<Image, CliError> {
    let mut img = read_image_png(frame).map_err(usage)?;
    let mut gt = read_depth_png(depth_path, manifest.depth_scale_mm).map_err(usage)?;
    if let Some(intr) = intrinsics {
        img = undistort_image(&img, intr)?;
        gt = undistort_depth(&gt, intr)?;
    }

    let mut preds = Vec::with_capacity(models.len());
    for (name, loaded) in models {
        let pred = predict_depth(&loaded.net, &img, device)?;
        let rescaled = median_rescale(&pred, &gt)?;
        preds.push((name.as_str(), rescaled));
    }

    let mut vmin = f64::INFINITY;
    let mut vmax = f64::NEG_INFINITY;
    for (_, p) in &preds {
        for (v, _, _) in p.valid_values() {
            vmin = vmin.min(v);
            vmax = vmax.max(v);
        }
    }
    if !vmin.is_finite() || !vmax.is_finite() {
        (vmin, vmax) = (0.0, 1.0);
    }

    let mut panels = vec![Panel {
        label: "input".to_string(),
        pixels: img.to_rgb8(),
    }];
    for (name, p) in &preds {
        panels.push(Panel {
            label: name.to_string(),
            pixels: depth_panel_pixels(p.values(), vmin, vmax),
        });
    }
    render_grid(&panels, img.height(), img.width())
}

// ---------------------------------------------------------------------------
// ablation-suite
// ---------------------------------------------------------------------------

/// Per-cell resolved settings, written as the cell's `config.resolved.toml`.
/// The cell identity lives in the directory name; the snapshot holds only
/// concrete settings, so two cells' snapshots differ exactly where their
/// effective configurations differ.
#[derive(Serialize)]
struct CellSnapshot<'a> {
    seed: u64,
    data: &'a DataSection,
    #[serde(skip_serializing_if = "Option::is_none")]
    translation: Option<&'a TranslationSection>,
    depth: &'a DepthSection,
    eval: &'a EvalSection,
}

/// Numbers reported for one (cell, seed) run.
struct CellNumbers {
    metrics: DepthMetrics,
    mi_train_images: f64,
    fid_translated_vs_b: Option<f64>,
    kid_translated_vs_b: Option<f64>,
    fid_raw_a_vs_b: f64,
}

#[derive(Serialize)]
struct CellRow {
    ablation: String,
    seed: u64,
    status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    rmse_mm: Option<f64>,
    abs_rel: Option<f64>,
    delta1: Option<f64>,
    delta2: Option<f64>,
    delta3: Option<f64>,
    mi_train_images: Option<f64>,
    fid_translated_vs_b: Option<f64>,
    kid_translated_vs_b: Option<f64>,
    fid_raw_a_vs_b: Option<f64>,
}

impl CellRow {
    fn ok(cell: AblationId, seed: u64, n: &CellNumbers) -> Self {
        Self {
            ablation: cell.to_string(),
            seed,
            status: "ok".to_string(),
            error: None,
            rmse_mm: Some(n.metrics.rmse_mm),
            abs_rel: Some(n.metrics.abs_rel),
            delta1: Some(n.metrics.delta1),
            delta2: Some(n.metrics.delta2),
            delta3: Some(n.metrics.delta3),
            mi_train_images: Some(n.mi_train_images),
            fid_translated_vs_b: n.fid_translated_vs_b,
            kid_translated_vs_b: n.kid_translated_vs_b,
            fid_raw_a_vs_b: Some(n.fid_raw_a_vs_b),
        }
    }

    fn failed(cell: AblationId, seed: u64, error: String) -> Self {
        Self {
            ablation: cell.to_string(),
            seed,
            status: "failed".to_string(),
            error: Some(error),
            rmse_mm: None,
            abs_rel: None,
            delta1: None,
            delta2: None,
            delta3: None,
            mi_train_images: None,
            fid_translated_vs_b: None,
            kid_translated_vs_b: None,
            fid_raw_a_vs_b: None,
        }
    }
}

#[derive(Serialize)]
struct SuiteReport<'a> {
    config_hash: &'a str,
    rows: &'a [CellRow],
}

fn opt_cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_escape(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn ablation_csv(rows: &[CellRow]) -> String {
    let mut s = String::from(
        "ablation,seed,status,rmse_mm,abs_rel,delta1,delta2,delta3,mi_train_images,\
         fid_translated_vs_b,kid_translated_vs_b,fid_raw_a_vs_b,error\n",
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.ablation,
            r.seed,
            r.status,
            opt_cell(r.rmse_mm),
            opt_cell(r.abs_rel),
            opt_cell(r.delta1),
            opt_cell(r.delta2),
            opt_cell(r.delta3),
            opt_cell(r.mi_train_images),
            opt_cell(r.fid_translated_vs_b),
            opt_cell(r.kid_translated_vs_b),
            opt_cell(r.fid_raw_a_vs_b),
            csv_escape(r.error.as_deref().unwrap_or(""))
        );
    }
    s
}

fn op_ablation_suite(
    spec: &AblationSuiteSpec,
    dirs: &RunDirs,
    config_hash: &str,
) -> Result<(), CliError> {
    let exp = &spec.experiment;
    let jobs: Vec<(AblationId, u64)> = exp
        .suite
        .cells
        .iter()
        .flat_map(|c| exp.suite.seeds.iter().map(move |s| (*c, *s)))
        .collect();
    let cells_dir = dirs.root.join("cells");
    fs::create_dir_all(&cells_dir)?;

    let run_one = |(cell, seed): (AblationId, u64)| -> (AblationId, u64, Result<CellNumbers, String>) {
        let cell_dir = cells_dir.join(format!("{cell}_s{seed}"));
        eprintln!("cell {cell} seed {seed}: starting");
        let result = run_cell(exp, cell, seed, &cell_dir).map_err(|e| e.to_string());
        match &result {
            Ok(_) => eprintln!("cell {cell} seed {seed}: done"),
            Err(e) => eprintln!("cell {cell} seed {seed}: FAILED: {e}"),
        }
        (cell, seed, result)
    };

    let outcomes: Vec<(AblationId, u64, Result<CellNumbers, String>)> = if spec.parallel {
        let run_one = &run_one;
        std::thread::scope(|scope| {
            let handles: Vec<_> = jobs
                .iter()
                .map(|&job| scope.spawn(move || run_one(job)))
                .collect();
            jobs.iter()
                .zip(handles)
                .map(|(&(cell, seed), h)| {
                    h.join()
                        .unwrap_or_else(|_| (cell, seed, Err("cell thread panicked".to_string())))
                })
                .collect()
        })
    } else {
        jobs.iter().map(|&job| run_one(job)).collect()
    };

    let rows: Vec<CellRow> = outcomes
        .iter()
        .map(|(cell, seed, result)| match result {
            Ok(n) => CellRow::ok(*cell, *seed, n),
            Err(e) => CellRow::failed(*cell, *seed, e.clone()),
        })
        .collect();

    fs::write(dirs.metrics.join("ablation.csv"), ablation_csv(&rows))?;
    let report = SuiteReport {
        config_hash,
        rows: &rows,
    };
    let mut json =
        serde_json::to_string_pretty(&report).map_err(|e| CliError::internal(e.into()))?;
    json.push('\n');
    fs::write(dirs.metrics.join("ablation.json"), json)?;

    for r in &rows {
        if r.status == "ok" {
            println!(
                "{:<11} seed {}: rmse {:.3} mm, absrel {:.4}, d1 {:.4}, mi {:.4}, fid_t {}, fid_raw {}",
                r.ablation,
                r.seed,
                r.rmse_mm.unwrap_or(f64::NAN),
                r.abs_rel.unwrap_or(f64::NAN),
                r.delta1.unwrap_or(f64::NAN),
                r.mi_train_images.unwrap_or(f64::NAN),
                r.fid_translated_vs_b
                    .map(|v| format!("{v:.4}"))
                    .unwrap_or_else(|| "-".to_string()),
                r.fid_raw_a_vs_b
                    .map(|v| format!("{v:.4}"))
                    .unwrap_or_else(|| "-".to_string()),
            );
        } else {
            println!(
                "{:<11} seed {}: FAILED ({})",
                r.ablation,
                r.seed,
                r.error.as_deref().unwrap_or("unknown error")
            );
        }
    }

    if rows.iter().all(|r| r.status == "failed") {
        return Err(CliError::internal(anyhow::anyhow!(
            "all suite cells failed"
        )));
    }
    Ok(())
}

/// Trains (translation then depth, or depth alone for the baseline),
/// evaluates on the held-out split, and computes the structure/realism
/// numbers for one (cell, seed) pair.
fn run_cell(
    base: &ExperimentConfig,
    cell: AblationId,
    seed: u64,
    cell_dir: &Path,
) -> Result<CellNumbers, CliError> {
    let mut exp = base.clone();
    exp.ablation = cell;
    exp.seed = seed;
    exp.apply_ablation()?;
    let dirs = RunDirs::create(cell_dir)?;

    let snapshot = CellSnapshot {
        seed,
        data: &exp.data,
        translation: (cell != AblationId::Baseline).then_some(&exp.translation),
        depth: &exp.depth,
        eval: &exp.eval,
    };
    let (text, _) = snapshot_with_hash(&snapshot)?;
    fs::write(dirs.root.join("config.resolved.toml"), text)?;

    let a_path = ExperimentConfig::require_path(&exp.data.domain_a, "domain_a")?;
    let b_path = ExperimentConfig::require_path(&exp.data.domain_b, "domain_b")?;
    let eval_path = ExperimentConfig::require_path(&exp.data.eval, "eval")?;
    let a = load_paired_input(&load_manifest(&a_path)?)?;
    let eval_samples = load_paired_input(&load_manifest(&eval_path)?)?;
    let b_manifest = load_manifest(&b_path)?;
    let device = Device::Cpu;

    // Stage 1: translation (all cells except the untranslated baseline).
    let (depth_train, translated_images) = if cell == AblationId::Baseline {
        (a.clone(), None)
    } else {
        let b = load_unpaired(&b_manifest).map_err(usage)?;
        let tcfg = exp.translation.to_translation_config(seed)?;
        let mut trainer = TranslationTrainer::new(tcfg, &a, &b)?;
        let csv = dirs.logs.join("translation_loss.csv");
        fs::write(&csv, translation_csv(trainer.rows()))?;
        while trainer.completed_epochs() < exp.translation.epochs {
            trainer.run_epoch()?;
            fs::write(&csv, translation_csv(trainer.rows()))?;
        }
        trainer.save_checkpoint(&dirs.checkpoints.join("translation_final.safetensors"))?;

        let mut pairs = Vec::with_capacity(a.len());
        let mut imgs = Vec::with_capacity(a.len());
        for s in &a {
            let t = translate(trainer.generator_ab(), &s.image, trainer.device())?;
            write_image_png(
                &dirs.images.join(format!(
                    "translated_{}_{:04}.png",
                    s.sequence_id, s.frame_index
                )),
                &t,
            )?;
            imgs.push(t.clone());
            pairs.push(PairedSample::new(
                t,
                s.depth.clone(),
                s.sequence_id.clone(),
                s.frame_index,
            )?);
        }
        (pairs, Some(imgs))
    };

    // Structure check: depth/intensity mutual information of the images the
    // depth net will actually train on.
    let hist = HistogramSpec::new(
        exp.eval.mi_bins,
        exp.translation.depth_min_mm,
        exp.translation.depth_max_mm,
    )
    .map_err(|e| CliError::usage(format!("invalid eval.mi_bins: {e}")))?;
    let mut mi_sum = 0.0;
    for s in &depth_train {
        mi_sum += hard_mi(&s.depth, &s.image, &hist)?;
    }
    let mi_train_images = mi_sum / depth_train.len() as f64;

    // Stage 2: supervised depth training.
    let dcfg = exp.depth.to_depth_config(seed)?;
    let mut dtrainer = DepthTrainer::new(dcfg, &depth_train)?;
    let dcsv = dirs.logs.join("depth_loss.csv");
    fs::write(&dcsv, depth_csv(dtrainer.rows()))?;
    while dtrainer.completed_epochs() < exp.depth.epochs {
        dtrainer.run_epoch()?;
        fs::write(&dcsv, depth_csv(dtrainer.rows()))?;
    }
    dtrainer.save_checkpoint(&dirs.checkpoints.join("depth_final.safetensors"))?;

    // Held-out depth metrics.
    let mut per_frame = Vec::with_capacity(eval_samples.len());
    for s in &eval_samples {
        let pred = predict_depth(dtrainer.net(), &s.image, &device)?;
        let rescaled = median_rescale(&pred, &s.depth)?;
        per_frame.push(frame_metrics(&rescaled, &s.depth)?);
    }
    let metrics = aggregate_metrics(&per_frame)?;

    // Realism: distances in the frozen random-feature space.
    let b_imgs = images_of(&b_manifest)?;
    let extractor = RandomConvExtractor::new(exp.eval.extractor_seed)?;
    let fb = extractor.features(&b_imgs)?;
    let raw_imgs: Vec<Image> = a.iter().map(|s| s.image.clone()).collect();
    let fraw = extractor.features(&raw_imgs)?;
    let fid_raw_a_vs_b = fid(&fb, &fraw)?;
    let (fid_translated_vs_b, kid_translated_vs_b) = match &translated_images {
        Some(imgs) => {
            let ft = extractor.features(imgs)?;
            (
                Some(fid(&fb, &ft)?),
                Some(kid(&fb, &ft, exp.eval.kid_seed)?.mean),
            )
        }
        None => (None, None),
    };

    let numbers = CellNumbers {
        metrics,
        mi_train_images,
        fid_translated_vs_b,
        kid_translated_vs_b,
        fid_raw_a_vs_b,
    };

    #[derive(Serialize)]
    struct CellMetricsFile<'a> {
        ablation: String,
        seed: u64,
        depth: &'a DepthMetrics,
        mi_train_images: f64,
        #[serde(skip_serializing_if = "Option::is_none")]
        fid_translated_vs_b: Option<f64>,
        #[serde(skip_serializing_if = "Option::is_none")]
        kid_translated_vs_b: Option<f64>,
        fid_raw_a_vs_b: f64,
    }
    let mut json = serde_json::to_string_pretty(&CellMetricsFile {
        ablation: cell.to_string(),
        seed,
        depth: &numbers.metrics,
        mi_train_images,
        fid_translated_vs_b,
        kid_translated_vs_b,
        fid_raw_a_vs_b,
    })
    .map_err(|e| CliError::internal(e.into()))?;
    json.push('\n');
    fs::write(dirs.metrics.join("metrics.json"), json)?;

    Ok(numbers)
}
