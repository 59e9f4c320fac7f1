//! Command-line pipeline: synthetic data generation, preprocessing, training,
//! tiled inference and evaluation.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use clap::{Parser, Subcommand};

use crate::dataset::patches::{extract_patches, write_patch_archive, PatchSet};
use crate::dataset::{check_leakage, load_sample, validate_constraints, Manifest, SampleTriple};
use crate::error::{Error, Result};
use crate::infer::{bicubic_baseline, infer_scene};
use crate::metrics::{
    error_metrics, evaluate_against_reference, kelvin_to_celsius, rank_correlations,
    read_sensor_csv, MetricsReport,
};
use crate::model::checkpoint;
use crate::model::discriminator::DiscriminatorConfig;
use crate::model::generator::GeneratorConfig;
use crate::plot::{plot_loss_curves, render_colormap};
use crate::raster::geotiff;
use crate::synthscene::{generate_dataset, SynthConfig};
use crate::training::{train, LossWeights, TrainConfig};

#[derive(Debug, Parser)]
#[command(
    name = "thermofuse",
    version,
    about = "Weakly-supervised generative fusion of thermal satellite imagery"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a seeded synthetic multi-resolution dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 288)]
        fine_size: usize,
        #[arg(long, default_value_t = 8)]
        train_scenes: usize,
        #[arg(long, default_value_t = 2)]
        test_scenes: usize,
        #[arg(long, default_value_t = 12)]
        coarse_factor: usize,
    },
    /// Validate a manifest, report constraint/leakage findings and build
    /// patch archives.
    Preprocess {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 96)]
        patch_size: usize,
        #[arg(long, default_value_t = 24)]
        patch_stride: usize,
    },
    /// Train the fusion model on the manifest's training split.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2000)]
        steps: usize,
        #[arg(long, default_value_t = 8)]
        batch_size: usize,
        #[arg(long, default_value_t = 2e-4)]
        lr: f64,
        /// Comma-separated alpha,beta,gamma,delta.
        #[arg(long, default_value = "1,100,1,1")]
        loss_weights: String,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Model preset: `small` (desk-scale) or `full`.
        #[arg(long, default_value = "small")]
        model: String,
        #[arg(long, default_value_t = 0)]
        checkpoint_every: usize,
        #[arg(long, default_value_t = 96)]
        patch_size: usize,
        #[arg(long, default_value_t = 24)]
        patch_stride: usize,
    },
    /// Tiled full-scene inference for one target date.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Target date (the sample's t2), e.g. 2024-03-21.
        #[arg(long)]
        date: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Metrics report for predictions in a directory.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Optional ground-sensor CSV for PCC/SRCC tables.
        #[arg(long)]
        sensors_csv: Option<PathBuf>,
    },
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth {
            out,
            seed,
            fine_size,
            train_scenes,
            test_scenes,
            coarse_factor,
        } => cmd_synth(&out, seed, fine_size, train_scenes, test_scenes, coarse_factor),
        Command::Preprocess {
            manifest,
            out,
            patch_size,
            patch_stride,
        } => cmd_preprocess(&manifest, &out, patch_size, patch_stride),
        Command::Train {
            manifest,
            out,
            steps,
            batch_size,
            lr,
            loss_weights,
            seed,
            model,
            checkpoint_every,
            patch_size,
            patch_stride,
        } => cmd_train(
            &manifest,
            &out,
            steps,
            batch_size,
            lr,
            &loss_weights,
            seed,
            &model,
            checkpoint_every,
            patch_size,
            patch_stride,
        ),
        Command::Infer {
            checkpoint,
            manifest,
            date,
            out,
        } => cmd_infer(&checkpoint, &manifest, &date, &out),
        Command::Evaluate {
            pred,
            manifest,
            out,
            sensors_csv,
        } => cmd_evaluate(&pred, &manifest, &out, sensors_csv.as_deref()),
    }
}

pub fn cmd_synth(
    out: &Path,
    seed: u64,
    fine_size: usize,
    train_scenes: usize,
    test_scenes: usize,
    coarse_factor: usize,
) -> Result<()> {
    let cfg = SynthConfig {
        seed,
        fine_size,
        train_scenes,
        test_scenes,
        coarse_factor,
        ..SynthConfig::default()
    };
    let manifest = generate_dataset(&cfg, out)?;
    println!("{}", manifest.display());
    Ok(())
}

/// Validate, gap-fill, compute indices, normalize and cut patches; the
/// constraint and leakage reports are printed and an invalid manifest stops
/// before extraction.
pub fn cmd_preprocess(
    manifest_path: &Path,
    out: &Path,
    patch_size: usize,
    patch_stride: usize,
) -> Result<()> {
    let (manifest, base) = Manifest::load(manifest_path)?;
    let report = validate_constraints(&manifest, &base);
    if report.is_valid() {
        println!("constraint check: ok ({} samples)", manifest.samples.len());
    } else {
        println!("constraint check: {} violation(s)", report.violations.len());
        for v in &report.violations {
            println!(
                "  [{}] {}: {}",
                v.sample_id.as_deref().unwrap_or("manifest"),
                v.condition,
                v.detail
            );
        }
    }
    let leakage = check_leakage(&manifest);
    if leakage.is_clean() {
        println!("leakage check: ok");
    } else {
        for v in &leakage.violations {
            println!(
                "leakage: sample {} reference date equals sample {} target date ({})",
                v.sample_a, v.sample_b, v.date
            );
        }
    }
    if !report.is_valid() {
        return Err(Error::Manifest(
            "manifest violates input constraints; extraction refused".into(),
        ));
    }

    std::fs::create_dir_all(out)?;
    for entry in &manifest.samples {
        let sample = load_sample(&manifest, &base, entry)?;
        let set = extract_patches(&sample, &manifest.normalization, patch_size, patch_stride)?;
        let dir = out.join("patches").join(&entry.id);
        write_patch_archive(&dir, &set)?;
        println!("sample {}: {} patches -> {}", entry.id, set.len(), dir.display());
    }
    Ok(())
}

pub fn parse_loss_weights(text: &str) -> Result<LossWeights> {
    let parts: Vec<&str> = text.split(',').map(|s| s.trim()).collect();
    if parts.len() != 4 {
        return Err(Error::invalid(
            "loss weights must be four comma-separated numbers: a,b,g,d",
        ));
    }
    let parse = |s: &str| -> Result<f64> {
        s.parse::<f64>()
            .map_err(|e| Error::invalid(format!("bad loss weight `{s}`: {e}")))
    };
    let w = LossWeights {
        alpha: parse(parts[0])?,
        beta: parse(parts[1])?,
        gamma: parse(parts[2])?,
        delta: parse(parts[3])?,
    };
    w.validate()?;
    Ok(w)
}

pub fn model_preset(name: &str, patch_size: usize) -> Result<(GeneratorConfig, DiscriminatorConfig)> {
    let mut gcfg = match name {
        "small" => GeneratorConfig::small(),
        "full" => GeneratorConfig::default(),
        other => {
            return Err(Error::invalid(format!(
                "unknown model preset `{other}` (expected `small` or `full`)"
            )))
        }
    };
    gcfg.base_size = patch_size;
    let dcfg = match name {
        "small" => DiscriminatorConfig::small(),
        _ => DiscriminatorConfig::default(),
    };
    Ok((gcfg, dcfg))
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_train(
    manifest_path: &Path,
    out: &Path,
    steps: usize,
    batch_size: usize,
    lr: f64,
    loss_weights: &str,
    seed: u64,
    model: &str,
    checkpoint_every: usize,
    patch_size: usize,
    patch_stride: usize,
) -> Result<()> {
    let (manifest, base) = Manifest::load(manifest_path)?;
    let report = validate_constraints(&manifest, &base);
    if !report.is_valid() {
        for v in &report.violations {
            log::error!(
                "constraint violation [{}] {}: {}",
                v.sample_id.as_deref().unwrap_or("manifest"),
                v.condition,
                v.detail
            );
        }
        return Err(Error::Manifest(
            "manifest violates input constraints; training refused".into(),
        ));
    }
    let leakage = check_leakage(&manifest);
    for v in &leakage.violations {
        log::warn!(
            "temporal leakage: sample {} reference date equals sample {} target date ({})",
            v.sample_a,
            v.sample_b,
            v.date
        );
    }

    let weights = parse_loss_weights(loss_weights)?;
    let (gcfg, dcfg) = model_preset(model, patch_size)?;
    let tcfg = TrainConfig {
        learning_rate: lr,
        batch_size,
        steps,
        seed,
        checkpoint_every,
        ..TrainConfig::default()
    };

    let mut sets = Vec::new();
    for entry in manifest
        .samples
        .iter()
        .filter(|s| s.split == crate::dataset::Split::Train)
    {
        let sample = load_sample(&manifest, &base, entry)?;
        sets.push(extract_patches(
            &sample,
            &manifest.normalization,
            patch_size,
            patch_stride,
        )?);
    }
    if sets.is_empty() {
        return Err(Error::Manifest("manifest has no training samples".into()));
    }
    let mut patches = PatchSet::merge(sets)?;
    patches.normalization = manifest.normalization;
    log::info!("training on {} patches", patches.len());

    std::fs::create_dir_all(out)?;
    let output = train(&patches, &gcfg, &dcfg, &tcfg, &weights, Some(out))?;
    output.trace.write_csv(out.join("loss_trace.csv"))?;
    plot_loss_curves(&output.trace, out.join("loss_curves.png"))?;
    println!("{}", out.join("model.ckpt").display());
    Ok(())
}

fn load_sample_by_date<'m>(
    manifest: &'m Manifest,
    base: &Path,
    date: &str,
) -> Result<(&'m crate::dataset::SampleEntry, SampleTriple)> {
    let parsed = NaiveDate::parse_from_str(date, "%Y-%m-%d")
        .map_err(|e| Error::invalid(format!("bad date `{date}`: {e}")))?;
    let entry = manifest
        .samples
        .iter()
        .find(|s| s.t2 == parsed)
        .ok_or_else(|| {
            Error::Manifest(format!("no sample has target date {date} in the manifest"))
        })?;
    let sample = load_sample(manifest, base, entry)?;
    Ok((entry, sample))
}

pub fn cmd_infer(
    checkpoint_path: &Path,
    manifest_path: &Path,
    date: &str,
    out: &Path,
) -> Result<()> {
    let ckpt = checkpoint::load(checkpoint_path)?;
    let (manifest, base) = Manifest::load(manifest_path)?;
    let (_, sample) = load_sample_by_date(&manifest, &base, date)?;
    let fused = infer_scene(
        &ckpt.generator,
        &ckpt.generator_config,
        &sample,
        &ckpt.normalization,
    )?;
    std::fs::create_dir_all(out)?;
    let tif = out.join(format!("lst_{date}.tif"));
    let png = out.join(format!("lst_{date}.png"));
    geotiff::write(&tif, &fused)?;
    render_colormap(&fused, &png, None)?;
    println!("{}", tif.display());
    println!("{}", png.display());
    Ok(())
}

pub fn cmd_evaluate(
    pred_dir: &Path,
    manifest_path: &Path,
    out: &Path,
    sensors_csv: Option<&Path>,
) -> Result<()> {
    let (manifest, base) = Manifest::load(manifest_path)?;
    std::fs::create_dir_all(out)?;
    let mut report = MetricsReport::new();
    let mut fine_truth_rmse: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    let mut evaluated = 0usize;

    for entry in &manifest.samples {
        let date = entry.t2.to_string();
        let pred_path = pred_dir.join(format!("lst_{date}.tif"));
        if !pred_path.exists() {
            continue;
        }
        let sample = load_sample(&manifest, &base, entry)?;
        let Some(ref_mid) = sample.t2_lst_mid.as_ref() else {
            log::warn!("sample {} has no mid reference; skipping", entry.id);
            continue;
        };
        let pred = geotiff::read(&pred_path)?;
        let baseline = bicubic_baseline(&sample)?;
        report.push(&date, "fused", evaluate_against_reference(&pred, ref_mid)?);
        report.push(
            &date,
            "bicubic",
            evaluate_against_reference(&baseline, ref_mid)?,
        );
        if let Some(truth) = sample.t2_lst_fine_truth.as_ref() {
            let mut row = BTreeMap::new();
            row.insert(
                "fused".to_string(),
                error_metrics(&kelvin_to_celsius(&pred), &kelvin_to_celsius(truth))?.rmse,
            );
            row.insert(
                "bicubic".to_string(),
                error_metrics(&kelvin_to_celsius(&baseline), &kelvin_to_celsius(truth))?.rmse,
            );
            fine_truth_rmse.insert(date.clone(), row);
        }
        evaluated += 1;
    }
    if evaluated == 0 {
        return Err(Error::Manifest(format!(
            "no predictions matching the manifest dates were found in {}",
            pred_dir.display()
        )));
    }

    let mut doc = serde_json::json!({
        "report": serde_json::to_value(&report)?,
    });
    if !fine_truth_rmse.is_empty() {
        doc["fine_truth_rmse_celsius"] = serde_json::to_value(&fine_truth_rmse)?;
    }

    let mut table = report.to_table();
    if !fine_truth_rmse.is_empty() {
        table.push_str("== Fine-grid RMSE vs synthetic truth (C) ==\n");
        for (date, row) in &fine_truth_rmse {
            for (method, rmse) in row {
                table.push_str(&format!("{date}  {method:>8}  {rmse:.3}\n"));
            }
        }
        table.push('\n');
    }

    if let Some(csv_path) = sensors_csv {
        table.push_str(&sensor_table(csv_path, pred_dir, &mut doc)?);
    }

    std::fs::write(out.join("metrics.json"), serde_json::to_string_pretty(&doc)?)?;
    std::fs::write(out.join("metrics.txt"), &table)?;
    print!("{table}");
    Ok(())
}

/// Pair sensor observations with predicted LST pixels and build the PCC/SRCC
/// table.
fn sensor_table(
    csv_path: &Path,
    pred_dir: &Path,
    doc: &mut serde_json::Value,
) -> Result<String> {
    let sets = read_sensor_csv(csv_path)?;
    let mut rasters: BTreeMap<String, crate::raster::Raster> = BTreeMap::new();
    let mut rows: Vec<(String, f64, f64, usize)> = Vec::new();
    for set in &sets {
        let mut ta = Vec::new();
        let mut lst = Vec::new();
        for (timestamp, t_a) in &set.observations {
            let date = timestamp.get(0..10).unwrap_or_default().to_string();
            let path = pred_dir.join(format!("lst_{date}.tif"));
            if !path.exists() {
                continue;
            }
            if !rasters.contains_key(&date) {
                rasters.insert(date.clone(), geotiff::read(&path)?);
            }
            let raster = &rasters[&date];
            // CSV lat/lon carry northing/easting in the raster CRS.
            let col = ((set.lon - raster.grid.origin_x) / raster.grid.pixel_size).floor();
            let row = ((raster.grid.origin_y - set.lat) / raster.grid.pixel_size).floor();
            if col < 0.0
                || row < 0.0
                || col >= raster.grid.width as f64
                || row >= raster.grid.height as f64
            {
                continue;
            }
            let value = raster.get(0, row as usize, col as usize) as f64 - 273.15;
            ta.push(*t_a);
            lst.push(value);
        }
        if ta.len() >= 3 {
            match rank_correlations(&ta, &lst) {
                Ok(rc) => rows.push((set.sensor_id.clone(), rc.pcc, rc.srcc, ta.len())),
                Err(e) => log::warn!("sensor {}: {e}", set.sensor_id),
            }
        } else {
            log::warn!(
                "sensor {}: only {} matched date(s), need 3",
                set.sensor_id,
                ta.len()
            );
        }
    }
    let mut table = String::from("== Sensor correlations ==\n");
    table.push_str(&format!(
        "{:<12}{:>8}{:>8}{:>8}\n",
        "Sensor", "PCC", "SRCC", "n"
    ));
    let mut json_rows = Vec::new();
    for (id, pcc, srcc, n) in &rows {
        table.push_str(&format!("{id:<12}{pcc:>8.3}{srcc:>8.3}{n:>8}\n"));
        json_rows.push(serde_json::json!({
            "sensor_id": id, "pcc": pcc, "srcc": srcc, "pairs": n
        }));
    }
    if !rows.is_empty() {
        let np = rows.len() as f64;
        let avg_pcc = rows.iter().map(|r| r.1).sum::<f64>() / np;
        let avg_srcc = rows.iter().map(|r| r.2).sum::<f64>() / np;
        table.push_str(&format!(
            "{:<12}{:>8.3}{:>8.3}\n",
            "Average", avg_pcc, avg_srcc
        ));
        doc["sensor_correlations"] = serde_json::json!({
            "sensors": json_rows,
            "average": {"pcc": avg_pcc, "srcc": avg_srcc},
        });
    }
    table.push('\n');
    Ok(table)
}
