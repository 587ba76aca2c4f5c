//! Experiment configuration: a TOML file with sections, `--set key=value`
//! overrides and one top-level seed from which every component seed derives.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::metrics::LatencyModel;
use super::simulate::SweepGrid;
use super::synthetic::{generate, SyntheticConfig};
use crate::classifier::{
    load_checkpoint, load_trace, ConfidenceModel, EncoderConfig, Scorer, SyntheticOracle, TraceScorer, TrainObjective,
};
use crate::dataset::{load_dataset, StreamDataset};
use crate::error::{Error, Result};
use crate::expert::{Expert, LocalOracleExpert, RemoteExpert, RemoteExpertConfig, DEFAULT_TIMEOUT_MS};
use crate::losses::LossConfig;
use crate::nn::keyed_seed;
use crate::router::{MetaTrainConfig, RouterConfig};
use crate::stream::StreamConfig;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    /// Directory holding a `manifest.json`.
    pub path: Option<PathBuf>,
    /// Generate the dataset instead of loading it.
    pub synthetic: Option<SyntheticConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScorerSpec {
    /// Noisy copy of the ground truth.
    Oracle {
        #[serde(default = "default_cheap_flip")]
        flip_prob: f64,
        #[serde(default = "default_confidence")]
        confidence: ConfidenceModel,
    },
    /// Replays per-stream CSV traces from a directory.
    Trace { path: PathBuf },
    /// A trained encoder checkpoint.
    Checkpoint { path: PathBuf },
}

fn default_cheap_flip() -> f64 {
    0.3
}

fn default_expert_flip() -> f64 {
    0.05
}

fn default_confidence() -> ConfidenceModel {
    ConfidenceModel::Calibrated
}

fn default_expert_latency() -> f64 {
    800.0
}

impl Default for ScorerSpec {
    fn default() -> Self {
        ScorerSpec::Oracle {
            flip_prob: default_cheap_flip(),
            confidence: default_confidence(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ExpertSpec {
    Oracle {
        #[serde(default = "default_expert_flip")]
        flip_prob: f64,
        #[serde(default = "default_confidence")]
        confidence: ConfidenceModel,
        #[serde(default = "default_expert_latency")]
        latency_ms: f64,
    },
    /// HTTP expert; `EXPERT_ENDPOINT` / `EXPERT_TIMEOUT_MS` override these fields.
    Remote {
        endpoint: Option<String>,
        timeout_ms: Option<u64>,
    },
    None,
}

impl Default for ExpertSpec {
    fn default() -> Self {
        ExpertSpec::Oracle {
            flip_prob: default_expert_flip(),
            confidence: default_confidence(),
            latency_ms: default_expert_latency(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatencySpec {
    pub encoder_cost_s: f64,
    pub expert_cost_s: f64,
    /// Defaults to the decision interval in seconds.
    pub defer_delay_s: Option<f64>,
}

impl Default for LatencySpec {
    fn default() -> Self {
        let d = LatencyModel::default();
        LatencySpec {
            encoder_cost_s: d.encoder_cost_s,
            expert_cost_s: d.expert_cost_s,
            defer_delay_s: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    pub max_enc: Vec<u32>,
    pub max_defer: Vec<u32>,
    /// Append the named router presets to the grid.
    pub presets: bool,
}

impl Default for SweepSpec {
    fn default() -> Self {
        let grid = SweepGrid::default();
        SweepSpec {
            max_enc: grid.max_enc,
            max_defer: grid.max_defer,
            presets: true,
        }
    }
}

impl SweepSpec {
    pub fn grid(&self) -> SweepGrid {
        SweepGrid {
            max_enc: self.max_enc.clone(),
            max_defer: self.max_defer.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    #[default]
    Combined,
    PlainCrossEntropy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSpec {
    pub encoder: EncoderConfig,
    pub loss: LossConfig,
    pub objective: ObjectiveKind,
    /// Fraction of videos used for training; the rest is the test split.
    pub train_fraction: f64,
}

impl Default for TrainSpec {
    fn default() -> Self {
        TrainSpec {
            encoder: EncoderConfig::default(),
            loss: LossConfig::default(),
            objective: ObjectiveKind::Combined,
            train_fraction: 0.8,
        }
    }
}

impl TrainSpec {
    pub fn objective(&self) -> TrainObjective {
        match self.objective {
            ObjectiveKind::Combined => TrainObjective::Combined(self.loss),
            ObjectiveKind::PlainCrossEntropy => TrainObjective::PlainCrossEntropy,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetaSpec {
    pub history_len: usize,
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Fraction of videos held out to fit the meta models.
    pub calibration_fraction: f64,
}

impl Default for MetaSpec {
    fn default() -> Self {
        let d = MetaTrainConfig::default();
        MetaSpec {
            history_len: d.history_len,
            hidden: d.hidden,
            epochs: d.epochs,
            batch_size: d.batch_size,
            learning_rate: d.learning_rate,
            calibration_fraction: 0.3,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSpec {
    pub dir: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub dataset: DatasetSpec,
    pub stream: StreamConfig,
    pub scorer: ScorerSpec,
    pub expert: ExpertSpec,
    pub router: RouterConfig,
    pub latency: LatencySpec,
    pub sweep: SweepSpec,
    pub train: TrainSpec,
    pub meta: MetaSpec,
    pub output: OutputSpec,
    /// Directory relative paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// Seeds are derived from the top-level one; a nested `seed` key would be
/// silently ignored, so it is rejected.
fn reject_nested_seeds(table: &toml::Table, path: &str) -> Result<()> {
    for (k, v) in table {
        let here = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
        if let toml::Value::Table(t) = v {
            if t.contains_key("seed") {
                return Err(Error::Config(format!(
                    "`{here}.seed` is not configurable; set the top-level `seed` (or --seed) instead"
                )));
            }
            reject_nested_seeds(t, &here)?;
        }
    }
    Ok(())
}

fn parse_override_value(raw: &str) -> toml::Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Applies `section.key=value`; the value is read as TOML, falling back to a bare string.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("override key `{key}` is malformed")));
    }
    let (last, sections) = parts.split_last().expect("non-empty");
    let mut cur = table;
    for s in sections {
        let entry = cur.entry(s.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = match entry {
            toml::Value::Table(t) => t,
            _ => return Err(Error::Config(format!("override `{key}`: `{s}` is not a section"))),
        };
    }
    let value = parse_override_value(raw.trim());
    // Switching the kind of a tagged section drops the old variant's fields.
    if *last == "kind" && cur.get("kind").is_some_and(|k| *k != value) {
        cur.clear();
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

impl ExperimentConfig {
    /// Reads `path` (if given), applies overrides and an optional seed.
    pub fn load(path: Option<&Path>, overrides: &[String], seed: Option<u64>) -> Result<Self> {
        let (mut table, base_dir) = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                let table: toml::Table = text
                    .parse()
                    .map_err(|e: toml::de::Error| Error::Config(format!("{}: {e}", p.display())))?;
                let dir = p.parent().map(Path::to_path_buf).unwrap_or_default();
                (table, dir)
            }
            None => (toml::Table::new(), PathBuf::new()),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        if let Some(s) = seed {
            table.insert("seed".into(), toml::Value::Integer(s as i64));
        }
        Self::from_table(table, base_dir)
    }

    pub fn from_toml_str(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        Self::from_table(table, base_dir.into())
    }

    fn from_table(table: toml::Table, base_dir: PathBuf) -> Result<Self> {
        reject_nested_seeds(&table, "")?;
        let mut cfg: ExperimentConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.base_dir = base_dir;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.stream.validate()?;
        self.train.encoder.validate()?;
        self.train.loss.validate()?;
        match (&self.dataset.path, &self.dataset.synthetic) {
            (Some(_), Some(_)) => return Err(Error::Config("set either dataset.path or [dataset.synthetic], not both".into())),
            (None, Some(s)) => s.validate()?,
            _ => {}
        }
        if !(self.train.train_fraction > 0.0 && self.train.train_fraction < 1.0) {
            return Err(Error::Config(format!(
                "train.train_fraction {} outside (0, 1)",
                self.train.train_fraction
            )));
        }
        if !(self.meta.calibration_fraction > 0.0 && self.meta.calibration_fraction < 1.0) {
            return Err(Error::Config(format!(
                "meta.calibration_fraction {} outside (0, 1)",
                self.meta.calibration_fraction
            )));
        }
        self.latency_for(1.0).validate()
    }

    /// Seed of a named component, derived from the experiment seed.
    pub fn component_seed(&self, component: &str) -> u64 {
        keyed_seed(self.seed, component, 0)
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn encoder_config(&self) -> EncoderConfig {
        EncoderConfig {
            seed: self.component_seed("encoder"),
            ..self.train.encoder.clone()
        }
    }

    pub fn meta_config(&self) -> MetaTrainConfig {
        MetaTrainConfig {
            history_len: self.meta.history_len,
            hidden: self.meta.hidden,
            epochs: self.meta.epochs,
            batch_size: self.meta.batch_size,
            learning_rate: self.meta.learning_rate,
            seed: self.component_seed("meta"),
        }
    }

    pub fn synthetic_config(&self) -> SyntheticConfig {
        let mut s = self.dataset.synthetic.clone().unwrap_or_default();
        s.seed = self.component_seed("dataset");
        s
    }

    pub fn load_dataset(&self) -> Result<StreamDataset> {
        match (&self.dataset.path, &self.dataset.synthetic) {
            (Some(p), None) => {
                let dir = self.resolve(p);
                if !dir.is_dir() {
                    return Err(Error::Config(format!("dataset directory {} does not exist", dir.display())));
                }
                load_dataset(dir)
            }
            (None, Some(_)) => generate(&self.synthetic_config()),
            (None, None) => Err(Error::Config(
                "no dataset configured: set dataset.path or a [dataset.synthetic] section".into(),
            )),
            (Some(_), Some(_)) => Err(Error::Config("set either dataset.path or [dataset.synthetic], not both".into())),
        }
    }

    /// Latency model with the deferral delay defaulting to one decision interval.
    pub fn latency_for(&self, sample_rate_hz: f64) -> LatencyModel {
        LatencyModel {
            encoder_cost_s: self.latency.encoder_cost_s,
            expert_cost_s: self.latency.expert_cost_s,
            defer_delay_s: self.latency.defer_delay_s.unwrap_or(self.stream.interval as f64 / sample_rate_hz),
        }
    }

    pub fn build_scorer(&self, dataset: &StreamDataset) -> Result<Arc<dyn Scorer>> {
        Ok(match &self.scorer {
            ScorerSpec::Oracle { flip_prob, confidence } => Arc::new(SyntheticOracle::from_dataset(
                dataset,
                *flip_prob,
                confidence.clone(),
                self.component_seed("scorer"),
            )?),
            ScorerSpec::Trace { path } => {
                let t: TraceScorer = load_trace(self.resolve(path), &dataset.label_space)?;
                Arc::new(t)
            }
            ScorerSpec::Checkpoint { path } => {
                let (enc, labels) = load_checkpoint(self.resolve(path))?;
                if !labels.is_empty() && labels != dataset.label_space {
                    return Err(Error::Config(format!(
                        "checkpoint label space {labels:?} differs from the dataset's {:?}",
                        dataset.label_space
                    )));
                }
                Arc::new(enc)
            }
        })
    }

    pub fn build_expert(&self, dataset: &StreamDataset) -> Result<Option<Arc<dyn Expert>>> {
        Ok(match &self.expert {
            ExpertSpec::Oracle {
                flip_prob,
                confidence,
                latency_ms,
            } => Some(Arc::new(LocalOracleExpert::from_dataset(
                dataset,
                *flip_prob,
                confidence.clone(),
                *latency_ms,
                self.component_seed("expert"),
            )?)),
            ExpertSpec::Remote { endpoint, timeout_ms } => {
                let base = RemoteExpertConfig {
                    endpoint: endpoint.clone().unwrap_or_default(),
                    timeout_ms: timeout_ms.unwrap_or(DEFAULT_TIMEOUT_MS),
                };
                let cfg = base.with_env_overrides()?;
                if cfg.endpoint.is_empty() {
                    return Err(Error::Config("remote expert needs expert.endpoint or EXPERT_ENDPOINT".into()));
                }
                Some(Arc::new(RemoteExpert::new(cfg)))
            }
            ExpertSpec::None => None,
        })
    }

    pub fn output_dir(&self, cli: Option<&Path>) -> PathBuf {
        match (cli, &self.output.dir) {
            (Some(p), _) => p.to_path_buf(),
            (None, Some(p)) => self.resolve(p),
            (None, None) => PathBuf::from("out"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::router::{DeferralSource, Strategy};

    #[test]
    fn defaults_and_sections() {
        let cfg = ExperimentConfig::from_toml_str(
            r#"
            seed = 7
            [dataset.synthetic]
            streams = 3
            length = 50
            [scorer]
            kind = "oracle"
            flip_prob = 0.3
            confidence = { kind = "uniform", correct = [0.7, 1.0], incorrect = [0.5, 0.8] }
            [expert]
            kind = "none"
            [router]
            max_enc = 4
            deferral_source = "encoder"
            [sweep]
            max_enc = [0, 1]
            "#,
            "",
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.router.max_enc, 4);
        assert_eq!(cfg.router.max_defer, 6);
        assert_eq!(cfg.router.strategy, Strategy::Threshold);
        assert_eq!(cfg.router.deferral_source, DeferralSource::Encoder);
        assert_eq!(cfg.sweep.grid().max_enc, vec![0, 1]);
        assert_eq!(cfg.sweep.max_defer.len(), 11);
        assert_eq!(cfg.expert, ExpertSpec::None);
        let ds = cfg.load_dataset().unwrap();
        assert_eq!(ds.videos.len(), 3);
        assert_eq!(cfg.latency_for(2.0).defer_delay_s, 0.5);
    }

    #[test]
    fn overrides_and_seed() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.toml");
        std::fs::write(&p, "seed = 1\n[router]\nmax_enc = 3\n").unwrap();
        let cfg = ExperimentConfig::load(
            Some(&p),
            &[
                "router.max_defer=2".into(),
                "dataset.path=data/x".into(),
                "latency.encoder_cost_s=0.2".into(),
            ],
            Some(9),
        )
        .unwrap();
        assert_eq!((cfg.seed, cfg.router.max_enc, cfg.router.max_defer), (9, 3, 2));
        assert_eq!(cfg.latency.encoder_cost_s, 0.2);
        assert_eq!(cfg.resolve(cfg.dataset.path.as_ref().unwrap()), dir.path().join("data/x"));

        let mut t: toml::Table = "[scorer]\nkind = \"oracle\"\nflip_prob = 0.1".parse().unwrap();
        apply_override(&mut t, "scorer.kind=trace").unwrap();
        apply_override(&mut t, "scorer.path=s").unwrap();
        assert_eq!(t["scorer"].as_table().unwrap().len(), 2);
    }

    #[test]
    fn seeds_change_with_the_experiment_seed() {
        let a = ExperimentConfig::default();
        let b = ExperimentConfig {
            seed: 1,
            ..ExperimentConfig::default()
        };
        assert_ne!(a.component_seed("scorer"), b.component_seed("scorer"));
        assert_ne!(a.component_seed("scorer"), a.component_seed("expert"));
    }

    #[test]
    fn rejects_bad_input() {
        let bad = [
            "[router]\nmax_enk = 3",
            "[scorer]\nkind = \"magic\"",
            "[dataset.synthetic]\nseed = 3",
            "[train.encoder]\nseed = 3",
            "[meta]\nseed = 3",
            "[train]\ntrain_fraction = 1.5",
            "[latency]\nexpert_cost_s = -1",
            "[dataset]\npath = \"a\"\n[dataset.synthetic]\nstreams = 2",
        ];
        for text in bad {
            assert!(
                matches!(ExperimentConfig::from_toml_str(text, ""), Err(Error::Config(_))),
                "accepted: {text}"
            );
        }
        let mut t = toml::Table::new();
        assert!(apply_override(&mut t, "novalue").is_err());
        assert!(ExperimentConfig::default()
            .load_dataset()
            .unwrap_err()
            .to_string()
            .contains("no dataset"));
    }
}
