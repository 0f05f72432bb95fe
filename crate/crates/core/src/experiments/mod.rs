//! Experiment registry: random-network and trained-network studies that
//! write metrics CSV, a manifest and PGM/PPM maps into an output directory.

mod config;
mod desk;
mod image;
mod metrics;
mod models;
mod runners;

pub use config::{ExperimentConfig, ExperimentId, InitKind, InputSource, Target};
pub use desk::{desk_batch, DeskImage};
pub use image::{decode_image, encode_image, read_image, write_image, write_image_clamped};
pub use metrics::{find_metric, manifest, write_metrics, MetricsRow, METRICS_HEADER};
pub use models::{
    deep_spec, fcn_maps, fcn_spec, first_layer_oracle, left_difference, network_maps, normalize_input, resolve_target,
    three_layer_spec, tiny_cnn_spec, unit, unit_distance, unpooled_counterpart, vgg_spec, Maps, FCN_CHUNK,
};
pub use runners::{load_input, train_tiny, TINY_CLASSES};

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::theory::median;

/// Environment variable naming the default output directory.
pub const OUT_ENV: &str = "BACKVIS_OUT";

pub const METRICS_FILE: &str = "metrics.csv";
pub const MANIFEST_FILE: &str = "manifest.txt";

/// Output directory: the explicit choice, else the config's `output`, else
/// `$BACKVIS_OUT`, else `backvis-out`.
pub fn resolve_out_dir(explicit: Option<&Path>, cfg: &ExperimentConfig) -> PathBuf {
    explicit
        .map(Path::to_path_buf)
        .or_else(|| cfg.output.clone())
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("backvis-out"))
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub rows: Vec<MetricsRow>,
    /// Files written, relative to the output directory, in write order.
    pub files: Vec<String>,
    pub dir: PathBuf,
}

/// Collects rows and writes images for one run.
pub(crate) struct Sink {
    pub id: ExperimentId,
    dir: PathBuf,
    files: Vec<String>,
    rows: Vec<MetricsRow>,
}

impl Sink {
    fn new(id: ExperimentId, dir: &Path) -> Self {
        Sink {
            id,
            dir: dir.to_path_buf(),
            files: Vec::new(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: MetricsRow) {
        self.rows.push(row);
    }

    /// Writes a map rescaled for display as `<stem>.pgm` or `<stem>.ppm`.
    pub fn map(&mut self, stem: &str, map: &Tensor) -> Result<()> {
        self.image(stem, &crate::visualize::normalize_for_display(map))
    }

    /// Writes an image with samples clamped to `[0, 1]`.
    pub fn image(&mut self, stem: &str, img: &Tensor) -> Result<()> {
        let ext = if img.shape().last() == Some(&3) { "ppm" } else { "pgm" };
        let name = format!("{stem}.{ext}");
        write_image_clamped(img, self.dir.join(&name))?;
        self.files.push(name);
        Ok(())
    }

    /// Appends the median over seeds of every per-seed metric, in first-seen order.
    fn add_medians(&mut self) -> Result<()> {
        let mut keys: Vec<(Option<crate::visualize::VisMethod>, String)> = Vec::new();
        for r in self.rows.iter().filter(|r| r.seed.is_some()) {
            let key = (r.method, r.metric.clone());
            if !keys.contains(&key) {
                keys.push(key);
            }
        }
        for (method, metric) in keys {
            let values: Vec<f64> = self
                .rows
                .iter()
                .filter(|r| r.seed.is_some() && r.method == method && r.metric == metric)
                .map(|r| r.value)
                .collect();
            let mut row = MetricsRow::new(self.id, None, format!("{metric}_median"), median(&values)?);
            row.method = method;
            self.rows.push(row);
        }
        Ok(())
    }
}

/// Runs `cfg.experiment`, writing `metrics.csv`, `manifest.txt` and images
/// into `out_dir`. Output bytes depend only on the configuration.
pub fn run(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunOutput> {
    fs::create_dir_all(out_dir).map_err(|e| Error::file(out_dir, e))?;
    let mut sink = Sink::new(cfg.experiment, out_dir);
    runners::dispatch(cfg, &mut sink)?;
    sink.add_medians()?;
    runners::summarize(cfg, &mut sink)?;

    let metrics_path = out_dir.join(METRICS_FILE);
    let f = File::create(&metrics_path).map_err(|e| Error::file(&metrics_path, e))?;
    write_metrics(&sink.rows, BufWriter::new(f)).map_err(|e| Error::file(&metrics_path, e))?;
    sink.files.push(METRICS_FILE.to_string());

    let manifest_path = out_dir.join(MANIFEST_FILE);
    fs::write(&manifest_path, manifest(cfg, &sink.files)).map_err(|e| Error::file(&manifest_path, e))?;
    sink.files.push(MANIFEST_FILE.to_string());

    Ok(RunOutput {
        rows: sink.rows,
        files: sink.files,
        dir: out_dir.to_path_buf(),
    })
}

#[cfg(test)]
mod tests;
