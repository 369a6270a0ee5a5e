//! Stage subcommands. Each argument struct doubles as the parameter record
//! stored in its outputs' provenance.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::Args;
use serde::Serialize;

use hloc_core::augment::{build_augmented_dataset, EffectGrid, Recipe};
use hloc_core::classifier::{self, Labeled, SoftmaxModel, TrainConfig};
use hloc_core::dataset::{self, Condition, ConditionSource, Layout, Manifest, POSE_SIDECAR};
use hloc_core::descriptor::{
    self, describe_manifest, DescribeConfig, DescriptorSet, Extractor, Method,
};
use hloc_core::evaluation::{self, join};
use hloc_core::localization::{batch_localize, save_results, Mode, ResultRow, VisualMap};

use crate::provenance;

fn parse_conditions(s: &str) -> Result<ConditionSource> {
    if s.eq_ignore_ascii_case("subdirs") {
        Ok(ConditionSource::Subdirectories)
    } else {
        Ok(ConditionSource::Fixed(s.parse::<Condition>()?))
    }
}

/// Scan a corpus directory into a manifest.
#[derive(Args, Clone, Debug, Serialize)]
pub struct IngestArgs {
    #[arg(long)]
    pub root: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// A lighting condition shared by every image, or `subdirs` for
    /// `root/<condition>/<room>/` layouts.
    #[arg(long, default_value = "cloudy")]
    pub conditions: String,
    #[arg(long, default_value = POSE_SIDECAR)]
    pub pose_file: String,
}

impl IngestArgs {
    pub fn run(&self) -> Result<()> {
        let layout = Layout {
            conditions: parse_conditions(&self.conditions)?,
            pose_file: self.pose_file.clone(),
        };
        let m = dataset::ingest(&self.root, &layout)?;
        m.save(&self.out)?;
        provenance::record(&self.out, "ingest", None, self, &[&self.root])?;
        eprintln!("ingest: {} images in {} rooms", m.len(), m.rooms().len());
        Ok(())
    }
}

/// Split a manifest into interleaved training and validation sets.
#[derive(Args, Clone, Debug, Serialize)]
pub struct SplitArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Meters between kept training images.
    #[arg(long, default_value_t = 0.20)]
    pub spacing: f64,
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub val: PathBuf,
}

impl SplitArgs {
    pub fn run(&self) -> Result<()> {
        let m = Manifest::load(&self.manifest)?;
        let (train, val) = dataset::interleave_validation(&m, self.spacing)?;
        train.save(&self.train)?;
        val.save(&self.val)?;
        for out in [&self.train, &self.val] {
            provenance::record(out, "split", None, self, &[&self.manifest])?;
        }
        eprintln!("split: {} training, {} validation", train.len(), val.len());
        for (room, n) in dataset::room_histogram(&train) {
            eprintln!("  {room}: {n}");
        }
        Ok(())
    }
}

/// Write an augmented training set (originals plus effect variants).
#[derive(Args, Clone, Debug, Serialize)]
pub struct AugmentArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// spotlight, shadow, brightdark, contrast, saturation or rotation.
    #[arg(long)]
    pub effect: Recipe,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory; the new manifest is written as `manifest.csv` in it.
    #[arg(long)]
    pub out: PathBuf,
    /// Keep only the first N variants per image.
    #[arg(long)]
    pub levels: Option<usize>,
}

impl AugmentArgs {
    pub fn manifest_path(out: &Path) -> PathBuf {
        out.join("manifest.csv")
    }

    pub fn run(&self) -> Result<()> {
        let m = Manifest::load(&self.manifest)?;
        let out = build_augmented_dataset(
            &m,
            self.effect,
            self.seed,
            &self.out,
            &EffectGrid::default(),
            self.levels,
        )?;
        let path = Self::manifest_path(&self.out);
        provenance::record(&path, "augment", Some(self.seed), self, &[&self.manifest])?;
        eprintln!(
            "augment: {} -> {} images ({})",
            m.len(),
            out.len(),
            self.effect
        );
        Ok(())
    }
}

/// Compute a descriptor for every image of a manifest.
#[derive(Args, Clone, Debug, Serialize)]
pub struct DescribeArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value = "hog")]
    pub method: Method,
    /// HOG cell size in pixels.
    #[arg(long, default_value_t = 16)]
    pub cell: usize,
    /// HOG orientation bins.
    #[arg(long, default_value_t = 8)]
    pub bins: usize,
    /// Block-mean grid columns.
    #[arg(long, default_value_t = 16)]
    pub grid_w: usize,
    /// Block-mean grid rows.
    #[arg(long, default_value_t = 4)]
    pub grid_h: usize,
    /// Images are resized to this width first.
    #[arg(long, default_value_t = 512)]
    pub width: usize,
    #[arg(long, default_value_t = 128)]
    pub height: usize,
    /// L2-normalize each descriptor.
    #[arg(long)]
    pub l2norm: bool,
    #[arg(long)]
    pub out: PathBuf,
}

impl DescribeArgs {
    pub fn config(&self) -> Result<DescribeConfig> {
        let extractor = match self.method {
            Method::Hog => Extractor::Hog {
                cell: self.cell,
                bins: self.bins,
            },
            Method::BlockMean => Extractor::BlockMean {
                gw: self.grid_w,
                gh: self.grid_h,
            },
            Method::Imported => bail!("imported descriptors come from `import-desc`"),
        };
        Ok(DescribeConfig {
            extractor,
            input_size: Some((self.width, self.height)),
            l2norm: self.l2norm,
        })
    }

    pub fn run(&self) -> Result<()> {
        let m = Manifest::load(&self.manifest)?;
        let mut ds = describe_manifest(&m, &self.config()?)?;
        ds.manifest = Some(self.manifest.display().to_string());
        descriptor::export(&ds, &self.out)?;
        provenance::record(&self.out, "describe", None, self, &[&self.manifest])?;
        eprintln!("describe: {} x {} ({})", ds.len(), ds.dim(), ds.method);
        Ok(())
    }
}

/// Convert externally computed descriptors into the native format.
#[derive(Args, Clone, Debug, Serialize)]
pub struct ImportArgs {
    /// Values file in the descriptor binary format.
    #[arg(long)]
    pub values: PathBuf,
    /// JSON list of image ids in row order (or a full sidecar object).
    #[arg(long)]
    pub ids: PathBuf,
    /// Reorder rows to this manifest and record it in the sidecar.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

impl ImportArgs {
    pub fn run(&self) -> Result<()> {
        let mut ds = descriptor::import(&self.values, &self.ids)?;
        let mut inputs: Vec<&Path> = vec![&self.values, &self.ids];
        if let Some(path) = &self.manifest {
            let m = Manifest::load(path)?;
            ds = ds.align(&m)?;
            ds.manifest = Some(path.display().to_string());
            inputs.push(path);
        }
        descriptor::export(&ds, &self.out)?;
        provenance::record(&self.out, "import-desc", None, self, &inputs)?;
        eprintln!("import-desc: {} x {}", ds.len(), ds.dim());
        Ok(())
    }
}

/// Loads descriptors and the manifest they describe: the explicit one if
/// given, otherwise the one recorded in the sidecar. Rows are aligned to it.
fn labelled_set(
    desc: &Path,
    manifest: Option<&Path>,
) -> Result<(DescriptorSet, Manifest, PathBuf)> {
    let ds = descriptor::load(desc)?;
    let path =
        match manifest {
            Some(p) => p.to_path_buf(),
            None => PathBuf::from(ds.manifest.clone().ok_or_else(|| {
                anyhow!("{} names no manifest; pass one explicitly", desc.display())
            })?),
        };
    let m = Manifest::load(&path).with_context(|| format!("manifest for {}", desc.display()))?;
    let aligned = ds.align(&m)?;
    Ok((aligned, m, path))
}

fn labels_for(m: &Manifest, rooms: &[String]) -> Result<Vec<usize>> {
    m.records()
        .iter()
        .map(|r| {
            rooms
                .iter()
                .position(|x| *x == r.room)
                .ok_or_else(|| anyhow!("room {:?} does not occur in the training set", r.room))
        })
        .collect()
}

/// Train the room classifier.
#[derive(Args, Clone, Debug, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub train_desc: PathBuf,
    #[arg(long)]
    pub val_desc: PathBuf,
    /// Labels for the training descriptors (default: from their sidecar).
    #[arg(long)]
    pub train_manifest: Option<PathBuf>,
    #[arg(long)]
    pub val_manifest: Option<PathBuf>,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 16)]
    pub batch: usize,
    #[arg(long, default_value_t = 0.001)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

impl TrainArgs {
    pub fn run(&self) -> Result<()> {
        let (train_ds, train_m, train_path) =
            labelled_set(&self.train_desc, self.train_manifest.as_deref())?;
        let (val_ds, val_m, val_path) = labelled_set(&self.val_desc, self.val_manifest.as_deref())?;
        let rooms = train_m.rooms().to_vec();
        let train_labels = labels_for(&train_m, &rooms)?;
        let val_labels = labels_for(&val_m, &rooms)?;
        let cfg = TrainConfig {
            batch_size: self.batch,
            epochs: self.epochs,
            learning_rate: self.lr,
            momentum: self.momentum,
            seed: self.seed,
        };
        let outcome = classifier::train(
            &rooms,
            &Labeled::new(&train_ds, &train_labels)?,
            &Labeled::new(&val_ds, &val_labels)?,
            &cfg,
        )?;
        outcome.model.save(&self.out)?;
        provenance::record(
            &self.out,
            "train",
            Some(self.seed),
            self,
            &[&self.train_desc, &self.val_desc, &train_path, &val_path],
        )?;
        let best = &outcome.history[outcome.best_epoch.saturating_sub(1)];
        eprintln!(
            "train: best epoch {} of {}, validation accuracy {:.2}%",
            outcome.best_epoch, self.epochs, best.val_accuracy
        );
        Ok(())
    }
}

/// Localize query descriptors against a visual map.
#[derive(Args, Clone, Debug, Serialize)]
pub struct LocalizeArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub map_desc: PathBuf,
    #[arg(long)]
    pub map_manifest: PathBuf,
    #[arg(long)]
    pub query_desc: PathBuf,
    /// Ground truth for the queries (default: from their sidecar).
    #[arg(long)]
    pub query_manifest: Option<PathBuf>,
    #[arg(long, default_value = "hierarchical")]
    pub mode: Mode,
    #[arg(long)]
    pub out: PathBuf,
}

impl LocalizeArgs {
    pub fn run(&self) -> Result<()> {
        let model = SoftmaxModel::load(&self.model)?;
        let map_manifest = Manifest::load(&self.map_manifest)?;
        let map = VisualMap::build(&descriptor::load(&self.map_desc)?, &map_manifest)?;
        let (queries, truth, truth_path) =
            labelled_set(&self.query_desc, self.query_manifest.as_deref())?;
        let results = batch_localize(&model, &map, queries.rows(), self.mode);
        let mut rows = Vec::with_capacity(results.len());
        let mut failures = 0usize;
        for (q, r) in queries.rows().iter().zip(results) {
            match r {
                Ok(r) => rows.push(ResultRow::new(&r, &truth)?),
                Err(e) => {
                    failures += 1;
                    eprintln!("localize: {}: {e}", q.source_id);
                }
            }
        }
        save_results(&rows, &self.out)?;
        provenance::record(
            &self.out,
            "localize",
            None,
            self,
            &[
                &self.model,
                &self.map_desc,
                &self.map_manifest,
                &self.query_desc,
                &truth_path,
            ],
        )?;
        if failures > 0 {
            bail!("{failures} of {} queries failed", queries.len());
        }
        eprintln!("localize: {} queries ({})", rows.len(), self.mode);
        Ok(())
    }
}

/// Summarize localization results against ground truth.
#[derive(Args, Clone, Debug, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub results: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    /// JSON report; the text tables go next to it with a `.txt` extension.
    #[arg(long)]
    pub out: PathBuf,
    /// Row label used in the text tables.
    #[arg(long, default_value = "Baseline")]
    pub label: String,
    /// Also record mean per-query time in the JSON report.
    #[arg(long)]
    pub timing: bool,
}

impl EvalArgs {
    pub fn latency_path(out: &Path) -> PathBuf {
        out.with_file_name("latency.json")
    }

    pub fn run(&self) -> Result<()> {
        let rows = hloc_core::localization::load_results(&self.results)?;
        let truth = Manifest::load(&self.truth)?;
        let outcomes = join(&rows, &truth)?;
        let report = if self.timing {
            evaluation::evaluate_with_timing(&outcomes)?
        } else {
            evaluation::evaluate(&outcomes)?
        };
        evaluation::write_report(&report, &self.label, &self.out)?;
        let latency_path = Self::latency_path(&self.out);
        evaluation::write_latency(&evaluation::latency(&outcomes)?, &self.label, &latency_path)?;
        for out in [&self.out, &latency_path] {
            provenance::record(out, "eval", None, self, &[&self.results, &self.truth])?;
        }
        eprint!(
            "{}",
            evaluation::render_accuracy_table(&[(&self.label, &report)])
        );
        eprint!(
            "{}",
            evaluation::render_error_table(&[(&self.label, &report)])
        );
        Ok(())
    }
}
