//! Cached pipeline stages over a run directory.
//!
//! ```text
//! <out>/config.toml          resolved configuration
//! <out>/ingest/              dataset.json, cleaning reports
//! <out>/screen/              screening.json, results, calendar signals, census tables
//! <out>/train/<mode>/        models.json index and one bundle per group
//! <out>/evaluate/            report.json and CSV tables
//! <out>/charts/              SVG charts
//! ```
//!
//! Every stage directory holds a `manifest.json`. A stage is skipped when its
//! manifest's cache key (stage settings plus SHA-256 of every input) matches
//! and its outputs are unchanged on disk.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::time::Instant;

use occutrend_core::evaluation::{emit_report, BenchmarkTable, EvalReport};
use occutrend_core::features::FeatureMatrix;
use occutrend_core::gbdt::ModelBundle;
use occutrend_core::ingest::write_cleaning_reports;
use occutrend_core::screening::{write_census_rows, write_screening_results, CorrelationCategory};
use occutrend_core::calendar::write_calendar_signals;
use occutrend_core::Mode;
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::chart;
use crate::config::PipelineConfig;
use crate::error::CliError;
use crate::experiment::{self, Dataset, Screening, TrainedModel};
use crate::manifest::{hash_bytes, hash_file, RunLock, RunManifest, MANIFEST_FILE, SOFTWARE_VERSION};

pub const DATASET_FILE: &str = "dataset.json";
pub const SCREENING_FILE: &str = "screening.json";
pub const MODELS_FILE: &str = "models.json";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageOutcome {
    pub stage: String,
    pub dir: PathBuf,
    pub cached: bool,
}

#[derive(Default)]
struct StageWork {
    outputs: Vec<String>,
    counts: BTreeMap<String, u64>,
    facts: BTreeMap<String, String>,
    timings_ms: BTreeMap<String, u64>,
}

impl StageWork {
    fn time<T>(&mut self, step: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.timings_ms.insert(step.to_string(), start.elapsed().as_millis() as u64);
        out
    }

    fn count(&mut self, name: &str, n: usize) {
        self.counts.insert(name.to_string(), n as u64);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ModelEntry {
    group: String,
    file: String,
}

/// One run directory, locked for the lifetime of the value.
#[derive(Debug)]
pub struct Pipeline {
    pub cfg: PipelineConfig,
    root: PathBuf,
    _lock: RunLock,
}

fn write_json<T: Serialize>(path: &Path, value: &T, pretty: bool) -> Result<(), CliError> {
    let file = File::create(path).map_err(CliError::io(path))?;
    let mut w = BufWriter::new(file);
    if pretty {
        serde_json::to_writer_pretty(&mut w, value)?;
    } else {
        serde_json::to_writer(&mut w, value)?;
    }
    use std::io::Write;
    w.flush().map_err(CliError::io(path))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let file = File::open(path).map_err(CliError::io(path))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn csv_file(path: &Path) -> Result<File, CliError> {
    File::create(path).map_err(CliError::io(path))
}

/// SHA-256 over the (meter, timestamp) key of every row.
pub fn row_set_hash(x: &FeatureMatrix) -> String {
    let mut h = Sha256::new();
    for (m, ts) in x.row_meter.iter().zip(&x.timestamps) {
        h.update(x.meter_ids[*m as usize].as_bytes());
        h.update([0u8]);
        h.update(ts.and_utc().timestamp().to_le_bytes());
    }
    hex::encode(h.finalize())
}

impl Pipeline {
    pub fn open(cfg: PipelineConfig) -> Result<Self, CliError> {
        let root = cfg.experiment.output_dir.clone();
        let lock = RunLock::acquire(&root)?;
        let snapshot = root.join("config.toml");
        std::fs::write(&snapshot, cfg.to_toml()).map_err(CliError::io(&snapshot))?;
        Ok(Self {
            cfg,
            root,
            _lock: lock,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn stage_dir(&self, stage: &str) -> PathBuf {
        self.root.join(stage)
    }

    fn train_dir(&self, mode: Mode) -> PathBuf {
        self.root.join("train").join(mode.name())
    }

    /// Manifest of a finished upstream stage, or a missing-artifact error.
    fn upstream(&self, dir: &Path, stage: &'static str) -> Result<RunManifest, CliError> {
        let missing = || CliError::MissingArtifact {
            stage,
            path: dir.join(MANIFEST_FILE),
        };
        let manifest = RunManifest::load(dir).map_err(|_| missing())?;
        if !manifest.outputs_intact(dir) {
            return Err(missing());
        }
        Ok(manifest)
    }

    fn output_hash(manifest: &RunManifest, name: &str) -> String {
        manifest.outputs.get(name).cloned().unwrap_or_default()
    }

    fn run_stage(
        &self,
        stage: &str,
        dir: PathBuf,
        settings: serde_json::Value,
        inputs: BTreeMap<String, String>,
        work: impl FnOnce(&Path, &mut StageWork) -> Result<(), CliError>,
    ) -> Result<StageOutcome, CliError> {
        let material = json!({
            "stage": stage,
            "software_version": SOFTWARE_VERSION,
            "settings": settings,
            "inputs": inputs,
        });
        let cache_key = hash_bytes(material.to_string().as_bytes());
        if let Ok(m) = RunManifest::load(&dir) {
            if m.cache_key == cache_key && m.outputs_intact(&dir) {
                log::info!("{stage}: up to date, skipped");
                return Ok(StageOutcome {
                    stage: stage.to_string(),
                    dir,
                    cached: true,
                });
            }
        }
        if dir.exists() {
            std::fs::remove_dir_all(&dir).map_err(CliError::io(&dir))?;
        }
        std::fs::create_dir_all(&dir).map_err(CliError::io(&dir))?;
        log::info!("{stage}: running");
        let mut w = StageWork::default();
        let start = Instant::now();
        work(&dir, &mut w)?;
        w.timings_ms.insert("total".into(), start.elapsed().as_millis() as u64);
        let mut outputs = BTreeMap::new();
        for name in &w.outputs {
            outputs.insert(name.clone(), hash_file(&dir.join(name))?);
        }
        RunManifest {
            stage: stage.to_string(),
            software_version: SOFTWARE_VERSION.to_string(),
            cache_key,
            seed: self.cfg.gbdt.seed,
            config: self.cfg.clone(),
            inputs,
            outputs,
            counts: w.counts,
            facts: w.facts,
            timings_ms: w.timings_ms,
        }
        .save(&dir)?;
        Ok(StageOutcome {
            stage: stage.to_string(),
            dir,
            cached: false,
        })
    }

    pub fn ingest(&self) -> Result<StageOutcome, CliError> {
        let cfg = &self.cfg;
        let mut inputs = BTreeMap::new();
        for (name, path) in cfg.data.all() {
            if name != "benchmark" {
                inputs.insert(name.to_string(), hash_file(path)?);
            }
        }
        let settings = json!({
            "training_year": cfg.experiment.training_year,
            "validation_year": cfg.experiment.validation_year,
            "allow_partial_year": cfg.experiment.allow_partial_year,
            "cleaning": cfg.cleaning,
            "imputation": cfg.imputation,
        });
        self.run_stage("ingest", self.stage_dir("ingest"), settings, inputs, |dir, w| {
            let data = w.time("load_clean", || experiment::ingest(cfg))?;
            w.time("write", || -> Result<(), CliError> {
                write_json(&dir.join(DATASET_FILE), &data, false)?;
                write_cleaning_reports(
                    &data.cleaning,
                    &dir.join("cleaning_report.csv"),
                    Some(&dir.join("cleaning_removed_hours.csv")),
                )?;
                Ok(())
            })?;
            w.outputs = vec![
                DATASET_FILE.into(),
                "cleaning_report.csv".into(),
                "cleaning_removed_hours.csv".into(),
            ];
            w.count("meters", data.meters.len());
            w.count("buildings", data.buildings.len());
            w.count("weather_sites", data.weather.len());
            w.count("trend_series", data.trends.len());
            w.count("topics", data.topics.len());
            w.count("valid_hours", data.meters.iter().map(|m| m.valid_count()).sum());
            w.count(
                "removed_hours",
                data.cleaning.iter().map(|c| c.removed_hours.len()).sum(),
            );
            Ok(())
        })
    }

    fn load_dataset(&self) -> Result<(Dataset, String), CliError> {
        let dir = self.stage_dir("ingest");
        let m = self.upstream(&dir, "ingest")?;
        Ok((read_json(&dir.join(DATASET_FILE))?, Self::output_hash(&m, DATASET_FILE)))
    }

    fn load_screening(&self) -> Result<(Screening, String), CliError> {
        let dir = self.stage_dir("screen");
        let m = self.upstream(&dir, "screen")?;
        Ok((read_json(&dir.join(SCREENING_FILE))?, Self::output_hash(&m, SCREENING_FILE)))
    }

    pub fn screen(&self) -> Result<StageOutcome, CliError> {
        let cfg = &self.cfg;
        let ingest = self.upstream(&self.stage_dir("ingest"), "ingest")?;
        let inputs = BTreeMap::from([("dataset".to_string(), Self::output_hash(&ingest, DATASET_FILE))]);
        let settings = json!({
            "training_year": cfg.experiment.training_year,
            "calendar": cfg.calendar,
            "screening": cfg.screening,
        });
        self.run_stage("screen", self.stage_dir("screen"), settings, inputs, |dir, w| {
            let (data, _) = w.time("load", || self.load_dataset())?;
            let s = w.time("screen", || experiment::screen(&data, cfg));
            write_json(&dir.join(SCREENING_FILE), &s, false)?;
            write_screening_results(&s.records, csv_file(&dir.join("screening_results.csv"))?)?;
            write_calendar_signals(&s.signals, csv_file(&dir.join("calendar_signals.csv"))?)?;
            for (name, rows, first) in [
                ("census_by_meter_type.csv", &s.census.by_meter_type, "meter_type"),
                ("census_by_primary_use.csv", &s.census.by_primary_use, "primary_use"),
                ("census_by_topic.csv", &s.census.by_topic, "topic"),
            ] {
                write_census_rows(rows, first, csv_file(&dir.join(name))?)?;
                w.outputs.push(name.into());
            }
            w.outputs.extend([
                SCREENING_FILE.into(),
                "screening_results.csv".into(),
                "calendar_signals.csv".into(),
            ]);
            w.count("meters", s.records.len());
            w.count("unscreenable", s.census.unscreenable);
            for c in CorrelationCategory::ALL {
                w.count(
                    &format!("category_{}", c.name().to_lowercase()),
                    s.records.iter().filter(|r| r.category() == c).count(),
                );
            }
            Ok(())
        })
    }

    pub fn train(&self, mode: Mode) -> Result<StageOutcome, CliError> {
        let cfg = &self.cfg;
        let ingest = self.upstream(&self.stage_dir("ingest"), "ingest")?;
        let screen = self.upstream(&self.stage_dir("screen"), "screen")?;
        let inputs = BTreeMap::from([
            ("dataset".to_string(), Self::output_hash(&ingest, DATASET_FILE)),
            ("screening".to_string(), Self::output_hash(&screen, SCREENING_FILE)),
        ]);
        let settings = json!({
            "mode": mode,
            "training_year": cfg.experiment.training_year,
            "group_by": cfg.experiment.group_by,
            "gbdt": cfg.gbdt,
        });
        let stage = format!("train-{}", mode.name());
        self.run_stage(&stage, self.train_dir(mode), settings, inputs, |dir, w| {
            let (data, _) = w.time("load", || self.load_dataset())?;
            let (s, _) = self.load_screening()?;
            let (x, y) = w.time("features", || {
                experiment::build_split(&data, &s, mode, cfg.experiment.training_year)
            })?;
            let models = w.time("fit", || experiment::fit(&x, &y, &s, &cfg.gbdt, cfg.experiment.group_by))?;
            let mut index = Vec::new();
            for m in &models {
                let file = format!("model-{}.json", m.group.to_lowercase());
                m.bundle.save(&dir.join(&file))?;
                w.outputs.push(file.clone());
                index.push(ModelEntry {
                    group: m.group.clone(),
                    file,
                });
            }
            write_json(&dir.join(MODELS_FILE), &index, true)?;
            w.outputs.push(MODELS_FILE.into());
            w.count("rows", x.n_rows());
            w.count("meters", x.meter_ids.len());
            w.count("groups", models.len());
            w.count("features", x.width());
            w.facts.insert("row_set_hash".into(), row_set_hash(&x));
            Ok(())
        })
    }

    fn load_models(&self, mode: Mode) -> Result<(Vec<TrainedModel>, RunManifest), CliError> {
        let dir = self.train_dir(mode);
        let manifest = self.upstream(&dir, "train")?;
        let index: Vec<ModelEntry> = read_json(&dir.join(MODELS_FILE))?;
        let models = index
            .into_iter()
            .map(|e| {
                Ok(TrainedModel {
                    group: e.group,
                    bundle: ModelBundle::load(&dir.join(&e.file))?,
                })
            })
            .collect::<Result<Vec<_>, CliError>>()?;
        Ok((models, manifest))
    }

    fn benchmark(&self) -> Result<BenchmarkTable, CliError> {
        match &self.cfg.data.benchmark {
            Some(path) => Ok(BenchmarkTable::load(path)?),
            None => Ok(BenchmarkTable::default()),
        }
    }

    pub fn evaluate(&self) -> Result<StageOutcome, CliError> {
        let cfg = &self.cfg;
        let ingest = self.upstream(&self.stage_dir("ingest"), "ingest")?;
        let screen = self.upstream(&self.stage_dir("screen"), "screen")?;
        let baseline = self.upstream(&self.train_dir(Mode::Baseline), "train --mode baseline")?;
        let proposed = self.upstream(&self.train_dir(Mode::Proposed), "train --mode proposed")?;
        if baseline.facts.get("row_set_hash") != proposed.facts.get("row_set_hash") {
            return Err(CliError::Data(
                "baseline and proposed models were trained on different row sets; retrain both".into(),
            ));
        }
        let mut inputs = BTreeMap::from([
            ("dataset".to_string(), Self::output_hash(&ingest, DATASET_FILE)),
            ("screening".to_string(), Self::output_hash(&screen, SCREENING_FILE)),
        ]);
        for (mode, m) in [(Mode::Baseline, &baseline), (Mode::Proposed, &proposed)] {
            for (name, hash) in &m.outputs {
                inputs.insert(format!("{}/{name}", mode.name()), hash.clone());
            }
        }
        if let Some(path) = &cfg.data.benchmark {
            inputs.insert("benchmark".into(), hash_file(path)?);
        }
        let settings = json!({
            "validation_year": cfg.experiment.validation_year,
            "group_by": cfg.experiment.group_by,
            "evaluation": cfg.evaluation,
        });
        self.run_stage("evaluate", self.stage_dir("evaluate"), settings, inputs, |dir, w| {
            let (data, _) = w.time("load", || self.load_dataset())?;
            let (s, _) = self.load_screening()?;
            let benchmark = self.benchmark()?;
            let mut records = Vec::new();
            for mode in [Mode::Baseline, Mode::Proposed] {
                let (models, _) = self.load_models(mode)?;
                let r = w.time(&format!("predict_{}", mode.name()), || {
                    experiment::validate(&data, &s, cfg, mode, &models)
                })?;
                records.push(r);
            }
            let report = experiment::report(&s, cfg, &records[0], &records[1], &benchmark)?;
            let written = emit_report(&report, dir)?;
            for path in written {
                w.outputs
                    .push(path.file_name().expect("file").to_string_lossy().into_owned());
            }
            w.count("records", report.n_records);
            w.count("meters", report.n_meters);
            Ok(())
        })
    }

    pub fn chart(&self) -> Result<StageOutcome, CliError> {
        let screen = self.upstream(&self.stage_dir("screen"), "screen")?;
        let eval_dir = self.stage_dir("evaluate");
        let evaluate = self.upstream(&eval_dir, "evaluate")?;
        let inputs = BTreeMap::from([
            ("screening".to_string(), Self::output_hash(&screen, SCREENING_FILE)),
            ("report".to_string(), Self::output_hash(&evaluate, "report.json")),
        ]);
        self.run_stage("chart", self.stage_dir("charts"), json!({}), inputs, |dir, w| {
            let (s, _) = self.load_screening()?;
            let (data, _) = self.load_dataset()?;
            let report: EvalReport = read_json(&eval_dir.join("report.json"))?;
            w.outputs = chart::write_charts(dir, &data, &s, &report)?;
            w.count("charts", w.outputs.len());
            Ok(())
        })
    }

    /// Every stage in order; evaluation and charts need both modes.
    pub fn run_all(&self) -> Result<Vec<StageOutcome>, CliError> {
        let mut out = vec![self.ingest()?, self.screen()?];
        let modes = self.cfg.experiment.mode.modes();
        for mode in &modes {
            out.push(self.train(*mode)?);
        }
        if modes.len() == 2 {
            out.push(self.evaluate()?);
            out.push(self.chart()?);
        } else {
            log::warn!("only one mode trained; evaluation needs both and was skipped");
        }
        Ok(out)
    }
}
