use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::costmodel::{HardwareProfile, TimeModelParams};
use crate::error::Error;
use crate::grouping::DEFAULT_GROUP_SIZE;
use crate::packing::{SolverBudget, DEFAULT_NODE_LIMIT};
use crate::pipesim::{PipelineConfig, DEFAULT_BACKWARD_RATIO, DEFAULT_SAMPLES_PER_MICROBATCH};
use crate::schedule::PlanConfig;
use crate::workload::{
    load_samples, synthesize_dataset, AdapterSpec, LengthDistributionSpec, MixtureComponent, SampleFormat, Workload,
};

pub const DEFAULT_STAGES: usize = 4;
const SEED_STRIDE: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "default_node_limit")]
    pub node_limit: Option<u64>,
}

fn default_timeout() -> f64 {
    10.0
}
fn default_node_limit() -> Option<u64> {
    Some(DEFAULT_NODE_LIMIT)
}

impl Default for SolverSection {
    fn default() -> Self {
        Self {
            timeout_secs: default_timeout(),
            node_limit: default_node_limit(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HardwareSection {
    pub peak_flops_half: f64,
    pub mem_bandwidth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineSection {
    #[serde(default = "default_ratio")]
    pub backward_ratio: f64,
    #[serde(default)]
    pub stage_multipliers: Vec<f64>,
    #[serde(default = "default_spm")]
    pub samples_per_microbatch: usize,
}

fn default_ratio() -> f64 {
    DEFAULT_BACKWARD_RATIO
}
fn default_spm() -> usize {
    DEFAULT_SAMPLES_PER_MICROBATCH
}

impl Default for PipelineSection {
    fn default() -> Self {
        Self {
            backward_ratio: default_ratio(),
            stage_multipliers: Vec::new(),
            samples_per_microbatch: default_spm(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSource {
    pub count: usize,
    pub components: Vec<MixtureComponent>,
}

/// An adapter plus where its samples come from: a JSONL/CSV file
/// (`dataset`, optional `format`) or a synthetic length mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterConfig {
    #[serde(flatten)]
    pub spec: AdapterSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSource>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub capacity: Option<u64>,
    #[serde(default)]
    pub capacity_candidates: Vec<u64>,
    #[serde(default = "default_stages")]
    pub stages: usize,
    #[serde(default = "default_group_size")]
    pub group_size: usize,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub hardware: Option<HardwareSection>,
    #[serde(default)]
    pub time_model: TimeModelParams,
    #[serde(default)]
    pub pipeline: PipelineSection,
    #[serde(default)]
    pub adapters: Vec<AdapterConfig>,
    /// Directory relative dataset paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_stages() -> usize {
    DEFAULT_STAGES
}
fn default_group_size() -> usize {
    DEFAULT_GROUP_SIZE
}
fn default_workers() -> usize {
    1
}

impl Default for RunConfig {
    fn default() -> Self {
        toml::from_str("").expect("all fields default")
    }
}

/// Command-line overrides; `None` keeps the config value.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub capacity: Option<u64>,
    pub stages: Option<usize>,
    pub timeout: Option<f64>,
    pub group_size: Option<usize>,
    pub workers: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self, Error> {
        let mut c: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.base_dir = base_dir.to_path_buf();
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml(&text, &base).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(c) = o.capacity {
            self.capacity = Some(c);
        }
        if let Some(s) = o.stages {
            self.stages = s;
        }
        if let Some(t) = o.timeout {
            self.solver.timeout_secs = t;
        }
        if let Some(g) = o.group_size {
            self.group_size = g;
        }
        if let Some(w) = o.workers {
            self.workers = w;
        }
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(p) = &o.out {
            self.out = Some(p.clone());
        }
    }

    pub fn validate(&self) -> Result<(), Error> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.stages < 1 {
            return bad("stages must be >= 1");
        }
        if self.group_size < 1 {
            return bad("group_size must be >= 1");
        }
        if self.workers < 1 {
            return bad("workers must be >= 1");
        }
        if !(self.solver.timeout_secs > 0.0 && self.solver.timeout_secs.is_finite()) {
            return bad("solver timeout must be > 0");
        }
        if self.capacity == Some(0) || self.capacity_candidates.contains(&0) {
            return bad("capacity must be >= 1");
        }
        for a in &self.adapters {
            a.spec.validate()?;
            match (&a.dataset, &a.synthetic) {
                (Some(_), Some(_)) | (None, None) => {
                    return Err(Error::Config(format!(
                        "adapter {:?}: give exactly one of dataset or synthetic",
                        a.spec.adapter_id
                    )))
                }
                _ => {}
            }
        }
        self.hardware()?;
        self.time_model.validate()?;
        self.pipeline_config().validate()?;
        Ok(())
    }

    pub fn hardware(&self) -> Result<HardwareProfile, Error> {
        match &self.hardware {
            None => Ok(HardwareProfile::h100()),
            Some(h) => Ok(HardwareProfile::new(h.peak_flops_half, h.mem_bandwidth)?),
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    pub fn budget(&self) -> Result<SolverBudget, Error> {
        let t = Duration::try_from_secs_f64(self.solver.timeout_secs).map_err(|e| Error::Config(format!("solver timeout: {e}")))?;
        Ok(SolverBudget::new(t, self.solver.node_limit)?)
    }

    pub fn pipeline_config(&self) -> PipelineConfig {
        PipelineConfig {
            stages: self.stages,
            time_model: self.time_model,
            backward_ratio: self.pipeline.backward_ratio,
            stage_multipliers: self.pipeline.stage_multipliers.clone(),
            samples_per_microbatch: self.pipeline.samples_per_microbatch,
            record_trace: false,
        }
    }

    pub fn plan_config(&self, capacity: u64) -> Result<PlanConfig, Error> {
        Ok(PlanConfig {
            capacity,
            stages: self.stages,
            group_size: self.group_size,
            budget: self.budget()?,
            workers: self.workers,
        })
    }

    /// Seed of adapter `index`'s synthetic dataset.
    pub fn dataset_seed(&self, index: usize) -> u64 {
        self.seed ^ (index as u64 + 1).wrapping_mul(SEED_STRIDE)
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn load_workload(&self) -> Result<Workload, Error> {
        if self.adapters.is_empty() {
            return Err(Error::Config("config lists no adapters".into()));
        }
        let mut samples = Vec::new();
        for (i, a) in self.adapters.iter().enumerate() {
            let id = &a.spec.adapter_id;
            let own = match (&a.dataset, &a.synthetic) {
                (Some(path), None) => {
                    let path = self.resolve(path);
                    let format = match &a.format {
                        Some(f) => f.parse::<SampleFormat>()?,
                        None => SampleFormat::from_path(&path).ok_or_else(|| {
                            Error::Config(format!("adapter {id:?}: cannot infer format of {}", path.display()))
                        })?,
                    };
                    let own: Vec<_> = load_samples(&path, format)?
                        .into_iter()
                        .filter(|s| &s.adapter_id == id)
                        .collect();
                    if own.is_empty() {
                        return Err(Error::Config(format!("adapter {id:?}: no samples in {}", path.display())));
                    }
                    own
                }
                (None, Some(syn)) => {
                    let spec = LengthDistributionSpec {
                        components: syn.components.clone(),
                        seed: self.dataset_seed(i),
                    };
                    synthesize_dataset(&spec, syn.count, id)?
                }
                _ => {
                    return Err(Error::Config(format!(
                        "adapter {id:?}: give exactly one of dataset or synthetic"
                    )))
                }
            };
            samples.extend(own);
        }
        Ok(Workload::new(self.adapters.iter().map(|a| a.spec.clone()).collect(), samples)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
seed = 3
capacity = 2048
stages = 2

[solver]
timeout_secs = 0.5

[[adapters]]
adapter_id = "short"
global_batch_size = 8
padding_multiple = 64
[adapters.synthetic]
count = 20
components = [{ weight = 1.0, family = "normal", location = 300.0, scale = 50.0, min_tokens = 16, max_tokens = 1024 }]

[[adapters]]
adapter_id = "long"
global_batch_size = 8
[adapters.synthetic]
count = 12
components = [{ weight = 1.0, family = "lognormal", location = 900.0, scale = 0.3, max_tokens = 2048 }]
"#;

    #[test]
    fn parses_and_builds_workload() {
        let c = RunConfig::from_toml(SAMPLE, Path::new(".")).unwrap();
        c.validate().unwrap();
        assert_eq!(c.group_size, DEFAULT_GROUP_SIZE);
        assert_eq!(c.adapters[1].spec.padding_multiple, 64);
        let w = c.load_workload().unwrap();
        assert_eq!(w.samples.len(), 32);
        assert_eq!(w.batch_count(), 3);
        assert_eq!(w, c.load_workload().unwrap());
    }

    #[test]
    fn seeds_differ_per_adapter_and_run() {
        let mut c = RunConfig::default();
        assert_ne!(c.dataset_seed(0), c.dataset_seed(1));
        let a = c.dataset_seed(0);
        c.seed = 1;
        assert_ne!(a, c.dataset_seed(0));
    }

    #[test]
    fn unknown_field_is_named() {
        let err = RunConfig::from_toml("stagez = 3", Path::new(".")).unwrap_err();
        assert!(err.to_string().contains("stagez"));
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn overrides_win() {
        let mut c = RunConfig::from_toml(SAMPLE, Path::new(".")).unwrap();
        c.apply(&Overrides {
            stages: Some(8),
            timeout: Some(2.0),
            ..Overrides::default()
        });
        assert_eq!(c.stages, 8);
        assert_eq!(c.solver.timeout_secs, 2.0);
        assert_eq!(c.capacity, Some(2048));
    }

    #[test]
    fn invalid_values() {
        let mut c = RunConfig::from_toml(SAMPLE, Path::new(".")).unwrap();
        c.solver.timeout_secs = 0.0;
        assert!(c.validate().is_err());
        let mut c = RunConfig::from_toml(SAMPLE, Path::new(".")).unwrap();
        c.adapters[0].dataset = Some("x.jsonl".into());
        assert!(c.validate().is_err());
    }
}
