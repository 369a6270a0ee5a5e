//! The `reproduce` driver: every stage in order from one flat config file,
//! skipping stages whose outputs are current.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use hloc_core::augment::Recipe;
use hloc_core::descriptor::Method;
use hloc_core::localization::Mode;

use crate::commands::{
    AugmentArgs, DescribeArgs, EvalArgs, IngestArgs, LocalizeArgs, SplitArgs, TrainArgs,
};
use crate::provenance;
use crate::{Stage, StageError};

/// Flat key-value pipeline description (TOML). Relative paths are resolved
/// against the config file's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Corpus the map and training sets come from.
    pub corpus: PathBuf,
    /// Held-out query corpus.
    pub test_corpus: PathBuf,
    /// A condition name or `subdirs`.
    pub corpus_conditions: String,
    pub test_conditions: String,
    pub pose_file: String,
    /// Where every artifact is written.
    pub work_dir: PathBuf,
    pub spacing: f64,
    /// An augmentation recipe name, or `none` to train on the baseline set.
    pub recipe: String,
    pub levels: Option<usize>,
    pub seed: u64,
    pub method: Method,
    pub cell: usize,
    pub bins: usize,
    pub grid_w: usize,
    pub grid_h: usize,
    pub input_width: usize,
    pub input_height: usize,
    pub l2norm: bool,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub mode: Mode,
    pub label: String,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            corpus: PathBuf::from("corpus"),
            test_corpus: PathBuf::from("test"),
            corpus_conditions: "cloudy".into(),
            test_conditions: "cloudy".into(),
            pose_file: hloc_core::dataset::POSE_SIDECAR.into(),
            work_dir: PathBuf::from("run"),
            spacing: 0.2,
            recipe: "none".into(),
            levels: None,
            seed: 0,
            method: Method::Hog,
            cell: 16,
            bins: 8,
            grid_w: 16,
            grid_h: 4,
            input_width: 512,
            input_height: 128,
            l2norm: false,
            epochs: 30,
            batch_size: 16,
            learning_rate: 0.001,
            momentum: 0.9,
            mode: Mode::Hierarchical,
            label: "Baseline".into(),
        }
    }
}

impl PipelineConfig {
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: PipelineConfig = toml::from_str(text).context("parsing pipeline config")?;
        for p in [&mut cfg.corpus, &mut cfg.test_corpus, &mut cfg.work_dir] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.recipe()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base).with_context(|| format!("in {}", path.display()))
    }

    pub fn recipe(&self) -> Result<Option<Recipe>> {
        if self.recipe.eq_ignore_ascii_case("none") {
            Ok(None)
        } else {
            Ok(Some(self.recipe.parse()?))
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.work_dir.join(name)
    }
}

/// Artifact locations under the work directory.
#[derive(Clone, Debug)]
pub struct Artifacts {
    pub manifest: PathBuf,
    pub test_manifest: PathBuf,
    pub train_manifest: PathBuf,
    pub val_manifest: PathBuf,
    pub augmented_dir: PathBuf,
    pub map_desc: PathBuf,
    pub train_desc: PathBuf,
    pub val_desc: PathBuf,
    pub test_desc: PathBuf,
    pub model: PathBuf,
    pub results: PathBuf,
    pub report: PathBuf,
}

impl Artifacts {
    pub fn new(cfg: &PipelineConfig) -> Self {
        Self {
            manifest: cfg.path("manifest.csv"),
            test_manifest: cfg.path("test.csv"),
            train_manifest: cfg.path("train.csv"),
            val_manifest: cfg.path("val.csv"),
            augmented_dir: cfg.path("augmented"),
            map_desc: cfg.path("desc/map.bin"),
            train_desc: cfg.path("desc/train.bin"),
            val_desc: cfg.path("desc/val.bin"),
            test_desc: cfg.path("desc/test.bin"),
            model: cfg.path("model.hlcm"),
            results: cfg.path("results.csv"),
            report: cfg.path("report.json"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepStatus {
    Ran,
    Skipped,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StepLog {
    pub stage: Stage,
    pub output: PathBuf,
    pub status: StepStatus,
}

struct Runner {
    force: bool,
    log: Vec<StepLog>,
}

impl Runner {
    fn step<A: Serialize>(
        &mut self,
        stage: Stage,
        args: &A,
        outputs: &[&Path],
        inputs: &[&Path],
        run: impl FnOnce(&A) -> Result<()>,
    ) -> Result<(), StageError> {
        let status = if !self.force && provenance::is_fresh(outputs, inputs, args) {
            StepStatus::Skipped
        } else {
            run(args).map_err(|e| StageError::new(stage, e))?;
            StepStatus::Ran
        };
        let output = outputs[0].to_path_buf();
        eprintln!(
            "[{stage}] {} {}",
            if status == StepStatus::Ran {
                "wrote"
            } else {
                "up to date:"
            },
            output.display()
        );
        self.log.push(StepLog {
            stage,
            output,
            status,
        });
        Ok(())
    }
}

/// Runs every stage in order. Returns one log entry per step.
pub fn run_pipeline(cfg: &PipelineConfig, force: bool) -> Result<Vec<StepLog>, StageError> {
    let a = Artifacts::new(cfg);
    let recipe = cfg
        .recipe()
        .map_err(|e| StageError::new(Stage::Augment, e))?;
    let mut r = Runner {
        force,
        log: Vec::new(),
    };

    for (root, conditions, out) in [
        (&cfg.corpus, &cfg.corpus_conditions, &a.manifest),
        (&cfg.test_corpus, &cfg.test_conditions, &a.test_manifest),
    ] {
        let args = IngestArgs {
            root: root.clone(),
            out: out.clone(),
            conditions: conditions.clone(),
            pose_file: cfg.pose_file.clone(),
        };
        if !root.is_dir() {
            return Err(StageError::new(
                Stage::Ingest,
                anyhow::anyhow!("corpus directory {} not found", root.display()),
            ));
        }
        r.step(Stage::Ingest, &args, &[out], &[root], IngestArgs::run)?;
    }

    let split = SplitArgs {
        manifest: a.manifest.clone(),
        spacing: cfg.spacing,
        train: a.train_manifest.clone(),
        val: a.val_manifest.clone(),
    };
    r.step(
        Stage::Split,
        &split,
        &[&a.train_manifest, &a.val_manifest],
        &[&a.manifest],
        SplitArgs::run,
    )?;

    let classifier_manifest = match recipe {
        Some(effect) => {
            let args = AugmentArgs {
                manifest: a.train_manifest.clone(),
                effect,
                seed: cfg.seed,
                out: a.augmented_dir.clone(),
                levels: cfg.levels,
            };
            let out = AugmentArgs::manifest_path(&a.augmented_dir);
            r.step(
                Stage::Augment,
                &args,
                &[&out],
                &[&a.train_manifest],
                AugmentArgs::run,
            )?;
            out
        }
        None => a.train_manifest.clone(),
    };

    let describe = |manifest: &Path, out: &Path| DescribeArgs {
        manifest: manifest.to_path_buf(),
        method: cfg.method,
        cell: cfg.cell,
        bins: cfg.bins,
        grid_w: cfg.grid_w,
        grid_h: cfg.grid_h,
        width: cfg.input_width,
        height: cfg.input_height,
        l2norm: cfg.l2norm,
        out: out.to_path_buf(),
    };
    let mut describe_jobs = vec![
        (&a.train_manifest, &a.map_desc),
        (&a.val_manifest, &a.val_desc),
        (&a.test_manifest, &a.test_desc),
    ];
    let train_desc = if recipe.is_some() {
        describe_jobs.push((&classifier_manifest, &a.train_desc));
        &a.train_desc
    } else {
        &a.map_desc
    };
    for (manifest, out) in describe_jobs {
        let args = describe(manifest, out);
        r.step(
            Stage::Describe,
            &args,
            &[out],
            &[manifest],
            DescribeArgs::run,
        )?;
    }

    let train = TrainArgs {
        train_desc: train_desc.clone(),
        val_desc: a.val_desc.clone(),
        train_manifest: Some(classifier_manifest.clone()),
        val_manifest: Some(a.val_manifest.clone()),
        epochs: cfg.epochs,
        batch: cfg.batch_size,
        lr: cfg.learning_rate,
        momentum: cfg.momentum,
        seed: cfg.seed,
        out: a.model.clone(),
    };
    r.step(
        Stage::Train,
        &train,
        &[&a.model],
        &[
            train_desc,
            &a.val_desc,
            &classifier_manifest,
            &a.val_manifest,
        ],
        TrainArgs::run,
    )?;

    let localize = LocalizeArgs {
        model: a.model.clone(),
        map_desc: a.map_desc.clone(),
        map_manifest: a.train_manifest.clone(),
        query_desc: a.test_desc.clone(),
        query_manifest: Some(a.test_manifest.clone()),
        mode: cfg.mode,
        out: a.results.clone(),
    };
    r.step(
        Stage::Localize,
        &localize,
        &[&a.results],
        &[
            &a.model,
            &a.map_desc,
            &a.train_manifest,
            &a.test_desc,
            &a.test_manifest,
        ],
        LocalizeArgs::run,
    )?;

    let eval = EvalArgs {
        results: a.results.clone(),
        truth: a.test_manifest.clone(),
        out: a.report.clone(),
        label: cfg.label.clone(),
        timing: false,
    };
    r.step(
        Stage::Eval,
        &eval,
        &[&a.report],
        &[&a.results, &a.test_manifest],
        EvalArgs::run,
    )?;

    Ok(r.log)
}
