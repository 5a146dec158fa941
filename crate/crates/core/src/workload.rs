//! Workload data model: adapters, per-sample token lengths, synthetic
//! length distributions and global-batch assignment.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Rejection attempts before a truncated draw is clamped into its bounds.
const MAX_REJECTIONS: usize = 64;

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("line {line}: parse error: {message}")]
    Parse { line: usize, message: String },
    #[error("{}", match .line { Some(l) => format!("line {l}: {}", .message), None => .message.clone() })]
    Validation { line: Option<usize>, message: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl WorkloadError {
    fn invalid(message: impl Into<String>) -> Self {
        WorkloadError::Validation {
            line: None,
            message: message.into(),
        }
    }
}

/// Hyperparameters of one LoRA fine-tuning job.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterSpec {
    pub adapter_id: String,
    #[serde(default = "default_rank")]
    pub lora_rank: u32,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub dropout_p: f64,
    pub global_batch_size: usize,
    #[serde(default = "default_padding")]
    pub padding_multiple: u32,
}

fn default_rank() -> u32 {
    16
}
fn default_alpha() -> f64 {
    32.0
}
fn default_padding() -> u32 {
    64
}

impl AdapterSpec {
    pub fn new(adapter_id: impl Into<String>, global_batch_size: usize, padding_multiple: u32) -> Self {
        Self {
            adapter_id: adapter_id.into(),
            lora_rank: default_rank(),
            alpha: default_alpha(),
            dropout_p: 0.0,
            global_batch_size,
            padding_multiple,
        }
    }

    pub fn validate(&self) -> Result<(), WorkloadError> {
        if self.adapter_id.is_empty() {
            return Err(WorkloadError::invalid("adapter_id must not be empty"));
        }
        if self.lora_rank < 1 {
            return Err(WorkloadError::invalid(format!("adapter {}: lora_rank must be >= 1", self.adapter_id)));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(WorkloadError::invalid(format!("adapter {}: alpha must be positive", self.adapter_id)));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(WorkloadError::invalid(format!("adapter {}: dropout_p must be in [0, 1)", self.adapter_id)));
        }
        if self.global_batch_size < 1 {
            return Err(WorkloadError::invalid(format!(
                "adapter {}: global_batch_size must be >= 1",
                self.adapter_id
            )));
        }
        if self.padding_multiple < 1 {
            return Err(WorkloadError::invalid(format!(
                "adapter {}: padding_multiple must be >= 1",
                self.adapter_id
            )));
        }
        Ok(())
    }

    /// Least multiple of the padding multiple that holds `raw` tokens.
    pub fn padded(&self, raw: u64) -> u64 {
        pad_to_multiple(raw, self.padding_multiple)
    }
}

pub fn pad_to_multiple(raw: u64, multiple: u32) -> u64 {
    let p = u64::from(multiple.max(1));
    raw.div_ceil(p) * p
}

/// One training sample. `global_batch_index` stays `None` until
/// [`assign_global_batches`] runs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub adapter_id: String,
    pub sample_id: String,
    pub length_tokens: u32,
    pub global_batch_index: Option<usize>,
}

impl SampleRecord {
    pub fn new(adapter_id: impl Into<String>, sample_id: impl Into<String>, length_tokens: u32) -> Self {
        Self {
            adapter_id: adapter_id.into(),
            sample_id: sample_id.into(),
            length_tokens,
            global_batch_index: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub adapter_id: String,
    pub count: usize,
    pub mean_tokens: f64,
    pub p50: u32,
    pub p95: u32,
    pub max_tokens: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LengthFamily {
    /// `location` is the mean, `scale` the standard deviation, both in tokens.
    Normal,
    /// `location` is the median in tokens, `scale` the log-space sigma.
    LogNormal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub weight: f64,
    pub family: LengthFamily,
    pub location: f64,
    pub scale: f64,
    #[serde(default = "default_min_tokens")]
    pub min_tokens: u32,
    pub max_tokens: u32,
}

fn default_min_tokens() -> u32 {
    1
}

impl MixtureComponent {
    fn draw(&self, rng: &mut ChaCha8Rng) -> u32 {
        if self.scale == 0.0 {
            return self.clamp(self.location.round());
        }
        for _ in 0..MAX_REJECTIONS {
            let v = match self.family {
                LengthFamily::Normal => Normal::new(self.location, self.scale)
                    .expect("validated normal parameters")
                    .sample(rng),
                LengthFamily::LogNormal => LogNormal::new(self.location.ln(), self.scale)
                    .expect("validated lognormal parameters")
                    .sample(rng),
            };
            let v = v.round();
            if v >= f64::from(self.min_tokens) && v <= f64::from(self.max_tokens) {
                return v as u32;
            }
        }
        self.clamp(self.location.round())
    }

    fn clamp(&self, v: f64) -> u32 {
        v.clamp(f64::from(self.min_tokens), f64::from(self.max_tokens)) as u32
    }
}

/// Mixture of truncated length distributions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthDistributionSpec {
    pub components: Vec<MixtureComponent>,
    #[serde(default)]
    pub seed: u64,
}

impl LengthDistributionSpec {
    pub fn single(family: LengthFamily, location: f64, scale: f64, min_tokens: u32, max_tokens: u32, seed: u64) -> Self {
        Self {
            components: vec![MixtureComponent {
                weight: 1.0,
                family,
                location,
                scale,
                min_tokens,
                max_tokens,
            }],
            seed,
        }
    }

    pub fn from_toml_file(path: &Path) -> Result<Self, WorkloadError> {
        let text = fs::read_to_string(path).map_err(|source| WorkloadError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let spec: Self = toml::from_str(&text).map_err(|e| WorkloadError::invalid(format!("{}: {e}", path.display())))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), WorkloadError> {
        if self.components.is_empty() {
            return Err(WorkloadError::invalid("length distribution has no components"));
        }
        let mut total = 0.0;
        for (i, c) in self.components.iter().enumerate() {
            if !(c.weight > 0.0 && c.weight.is_finite()) {
                return Err(WorkloadError::invalid(format!("component {i}: weight must be positive")));
            }
            if c.min_tokens < 1 || c.max_tokens < c.min_tokens {
                return Err(WorkloadError::invalid(format!(
                    "component {i}: bounds must satisfy 1 <= min_tokens <= max_tokens"
                )));
            }
            if !(c.scale >= 0.0 && c.scale.is_finite()) {
                return Err(WorkloadError::invalid(format!("component {i}: scale must be >= 0")));
            }
            if !c.location.is_finite() || (c.family == LengthFamily::LogNormal && c.location <= 0.0) {
                return Err(WorkloadError::invalid(format!("component {i}: invalid location {}", c.location)));
            }
            total += c.weight;
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(WorkloadError::invalid(format!("mixture weights sum to {total}, expected 1")));
        }
        Ok(())
    }
}

/// Draws `n` i.i.d. sample lengths from the mixture. Sample ids are
/// `<adapter_id>-<position>`.
pub fn synthesize_dataset(
    spec: &LengthDistributionSpec,
    n: usize,
    adapter_id: &str,
) -> Result<Vec<SampleRecord>, WorkloadError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut cumulative = Vec::with_capacity(spec.components.len());
    let mut acc = 0.0;
    for c in &spec.components {
        acc += c.weight;
        cumulative.push(acc);
    }
    let samples = (0..n)
        .map(|i| {
            let u: f64 = rng.random::<f64>() * acc;
            let idx = cumulative.iter().position(|&c| u < c).unwrap_or(spec.components.len() - 1);
            let len = spec.components[idx].draw(&mut rng);
            SampleRecord::new(adapter_id, format!("{adapter_id}-{i}"), len)
        })
        .collect();
    Ok(samples)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleFormat {
    Jsonl,
    Csv,
}

impl FromStr for SampleFormat {
    type Err = WorkloadError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "jsonl" | "json" => Ok(SampleFormat::Jsonl),
            "csv" => Ok(SampleFormat::Csv),
            other => Err(WorkloadError::invalid(format!("unknown sample format {other:?}"))),
        }
    }
}

impl SampleFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        path.extension().and_then(|e| e.to_str()).and_then(|e| e.parse().ok())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct RawRecord {
    adapter_id: String,
    sample_id: String,
    length: i64,
}

fn validate_raw(raw: RawRecord, line: usize, seen: &mut HashSet<(String, String)>) -> Result<SampleRecord, WorkloadError> {
    if raw.length < 1 {
        return Err(WorkloadError::Validation {
            line: Some(line),
            message: format!("sample {:?} has non-positive length {}", raw.sample_id, raw.length),
        });
    }
    let length = u32::try_from(raw.length).map_err(|_| WorkloadError::Validation {
        line: Some(line),
        message: format!("sample {:?} length {} out of range", raw.sample_id, raw.length),
    })?;
    if !seen.insert((raw.adapter_id.clone(), raw.sample_id.clone())) {
        return Err(WorkloadError::Validation {
            line: Some(line),
            message: format!("duplicate sample id {:?} for adapter {:?}", raw.sample_id, raw.adapter_id),
        });
    }
    Ok(SampleRecord::new(raw.adapter_id, raw.sample_id, length))
}

/// Reads sample records in file order. JSONL lines and CSV rows carry the
/// keys `adapter_id`, `sample_id` and `length`.
pub fn load_samples(path: &Path, format: SampleFormat) -> Result<Vec<SampleRecord>, WorkloadError> {
    let io_err = |source| WorkloadError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = fs::File::open(path).map_err(io_err)?;
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    match format {
        SampleFormat::Jsonl => {
            for (i, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(io_err)?;
                let line_no = i + 1;
                if line.trim().is_empty() {
                    continue;
                }
                let raw: RawRecord = serde_json::from_str(&line).map_err(|e| WorkloadError::Parse {
                    line: line_no,
                    message: e.to_string(),
                })?;
                out.push(validate_raw(raw, line_no, &mut seen)?);
            }
        }
        SampleFormat::Csv => {
            let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
            for (i, row) in reader.deserialize::<RawRecord>().enumerate() {
                // header is line 1
                let fallback_line = i + 2;
                let raw = row.map_err(|e| WorkloadError::Parse {
                    line: e.position().map(|p| p.line() as usize).unwrap_or(fallback_line),
                    message: e.to_string(),
                })?;
                out.push(validate_raw(raw, fallback_line, &mut seen)?);
            }
        }
    }
    Ok(out)
}

/// Writes samples as JSONL in the same schema [`load_samples`] reads.
pub fn write_samples_jsonl(path: &Path, samples: &[SampleRecord]) -> Result<(), WorkloadError> {
    let mut text = String::new();
    for s in samples {
        let raw = RawRecord {
            adapter_id: s.adapter_id.clone(),
            sample_id: s.sample_id.clone(),
            length: i64::from(s.length_tokens),
        };
        text.push_str(&serde_json::to_string(&raw).expect("plain record serializes"));
        text.push('\n');
    }
    fs::write(path, text).map_err(|source| WorkloadError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Labels the sample at dataset position `i` with global batch
/// `i / global_batch_size`. Order is preserved.
pub fn assign_global_batches(samples: &[SampleRecord], spec: &AdapterSpec) -> Result<Vec<SampleRecord>, WorkloadError> {
    spec.validate()?;
    samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            if s.adapter_id != spec.adapter_id {
                return Err(WorkloadError::invalid(format!(
                    "sample {:?} belongs to adapter {:?}, expected {:?}",
                    s.sample_id, s.adapter_id, spec.adapter_id
                )));
            }
            Ok(SampleRecord {
                global_batch_index: Some(i / spec.global_batch_size),
                ..s.clone()
            })
        })
        .collect()
}

/// Seeded Fisher-Yates shuffle, applied before batch assignment when wanted.
pub fn shuffle_samples(samples: &mut [SampleRecord], seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    samples.shuffle(&mut rng);
}

fn nearest_rank(sorted: &[u32], pct: f64) -> u32 {
    let n = sorted.len();
    let rank = ((pct / 100.0) * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

/// Exact mean and nearest-rank percentiles. The adapter id is taken from the
/// first sample; an empty slice yields all-zero stats.
pub fn compute_stats(samples: &[SampleRecord]) -> DatasetStats {
    let adapter_id = samples.first().map(|s| s.adapter_id.clone()).unwrap_or_default();
    if samples.is_empty() {
        return DatasetStats {
            adapter_id,
            count: 0,
            mean_tokens: 0.0,
            p50: 0,
            p95: 0,
            max_tokens: 0,
        };
    }
    let mut lengths: Vec<u32> = samples.iter().map(|s| s.length_tokens).collect();
    lengths.sort_unstable();
    let sum: u64 = lengths.iter().map(|&l| u64::from(l)).sum();
    DatasetStats {
        adapter_id,
        count: lengths.len(),
        mean_tokens: sum as f64 / lengths.len() as f64,
        p50: nearest_rank(&lengths, 50.0),
        p95: nearest_rank(&lengths, 95.0),
        max_tokens: *lengths.last().unwrap(),
    }
}

/// Adapters plus their samples, each sample labeled with its global batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Workload {
    pub adapters: Vec<AdapterSpec>,
    pub samples: Vec<SampleRecord>,
}

impl Workload {
    /// Assigns global batches per adapter following dataset order.
    pub fn new(adapters: Vec<AdapterSpec>, samples: Vec<SampleRecord>) -> Result<Self, WorkloadError> {
        let mut ids = HashSet::new();
        for a in &adapters {
            a.validate()?;
            if !ids.insert(a.adapter_id.clone()) {
                return Err(WorkloadError::invalid(format!("duplicate adapter id {:?}", a.adapter_id)));
            }
        }
        let mut per_adapter: BTreeMap<&str, Vec<SampleRecord>> = BTreeMap::new();
        for s in &samples {
            if !ids.contains(&s.adapter_id) {
                return Err(WorkloadError::invalid(format!(
                    "sample {:?} references unknown adapter {:?}",
                    s.sample_id, s.adapter_id
                )));
            }
            per_adapter.entry(s.adapter_id.as_str()).or_default().push(s.clone());
        }
        let mut labeled = Vec::with_capacity(samples.len());
        for a in &adapters {
            if let Some(list) = per_adapter.get(a.adapter_id.as_str()) {
                labeled.extend(assign_global_batches(list, a)?);
            }
        }
        Ok(Self {
            adapters,
            samples: labeled,
        })
    }

    pub fn adapter(&self, id: &str) -> Option<&AdapterSpec> {
        self.adapters.iter().find(|a| a.adapter_id == id)
    }

    pub fn samples_of<'a>(&'a self, id: &'a str) -> impl Iterator<Item = &'a SampleRecord> + 'a {
        self.samples.iter().filter(move |s| s.adapter_id == id)
    }

    /// Stats for every adapter, in adapter declaration order.
    pub fn stats(&self) -> Vec<DatasetStats> {
        self.adapters
            .iter()
            .map(|a| {
                let own: Vec<SampleRecord> = self.samples_of(&a.adapter_id).cloned().collect();
                let mut st = compute_stats(&own);
                st.adapter_id = a.adapter_id.clone();
                st
            })
            .collect()
    }

    pub fn paddings(&self) -> BTreeMap<String, u32> {
        self.adapters
            .iter()
            .map(|a| (a.adapter_id.clone(), a.padding_multiple))
            .collect()
    }

    /// Number of global batches of the adapter with the most batches.
    pub fn batch_count(&self) -> usize {
        self.samples
            .iter()
            .filter_map(|s| s.global_batch_index)
            .max()
            .map_or(0, |m| m + 1)
    }

    pub fn total_tokens(&self) -> u64 {
        self.samples.iter().map(|s| u64::from(s.length_tokens)).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(content: &str, ext: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::Builder::new().suffix(ext).tempfile().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_jsonl_in_file_order() {
        let f = write_tmp(
            "{\"adapter_id\":\"a0\",\"sample_id\":\"s0\",\"length\":128}\n\
             {\"adapter_id\":\"a0\",\"sample_id\":\"s1\",\"length\":256}\n\
             {\"adapter_id\":\"a0\",\"sample_id\":\"s2\",\"length\":64}\n",
            ".jsonl",
        );
        let s = load_samples(f.path(), SampleFormat::Jsonl).unwrap();
        let lens: Vec<u32> = s.iter().map(|r| r.length_tokens).collect();
        assert_eq!(lens, vec![128, 256, 64]);
        assert!(s.iter().all(|r| r.global_batch_index.is_none()));
    }

    #[test]
    fn empty_file_is_empty_list() {
        let f = write_tmp("", ".jsonl");
        assert!(load_samples(f.path(), SampleFormat::Jsonl).unwrap().is_empty());
        let f = write_tmp("adapter_id,sample_id,length\n", ".csv");
        assert!(load_samples(f.path(), SampleFormat::Csv).unwrap().is_empty());
    }

    #[test]
    fn zero_length_names_the_line() {
        let f = write_tmp(
            "{\"adapter_id\":\"a0\",\"sample_id\":\"s0\",\"length\":10}\n\
             {\"adapter_id\":\"a0\",\"sample_id\":\"s1\",\"length\":0}\n",
            ".jsonl",
        );
        match load_samples(f.path(), SampleFormat::Jsonl) {
            Err(WorkloadError::Validation { line: Some(2), .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        let f = write_tmp("adapter_id,sample_id,length\na0,s0,5\na0,s1,-3\n", ".csv");
        match load_samples(f.path(), SampleFormat::Csv) {
            Err(WorkloadError::Validation { line: Some(3), .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_record_is_parse_error() {
        let f = write_tmp("{\"adapter_id\":\"a0\",\"sample_id\":\"s0\",\"length\":10}\n{not json}\n", ".jsonl");
        match load_samples(f.path(), SampleFormat::Jsonl) {
            Err(WorkloadError::Parse { line: 2, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        let f = write_tmp("adapter_id,sample_id,length\na0,s0,abc\n", ".csv");
        assert!(matches!(
            load_samples(f.path(), SampleFormat::Csv),
            Err(WorkloadError::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn csv_roundtrip_matches_jsonl() {
        let f = write_tmp("adapter_id,sample_id,length\na0,x,7\nb1,y,9\n", ".csv");
        let s = load_samples(f.path(), SampleFormat::Csv).unwrap();
        assert_eq!(s[1], SampleRecord::new("b1", "y", 9));
    }

    #[test]
    fn degenerate_distribution() {
        let spec = LengthDistributionSpec::single(LengthFamily::Normal, 512.0, 0.0, 1, 4096, 9);
        let s = synthesize_dataset(&spec, 4, "a").unwrap();
        assert!(s.iter().all(|r| r.length_tokens == 512));
        assert_eq!(s.len(), 4);
    }

    #[test]
    fn synthesis_is_reproducible() {
        let spec = LengthDistributionSpec::single(LengthFamily::LogNormal, 400.0, 0.6, 16, 4096, 1234);
        let a = synthesize_dataset(&spec, 200, "a").unwrap();
        let b = synthesize_dataset(&spec, 200, "a").unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|r| (16..=4096).contains(&r.length_tokens)));
    }

    #[test]
    fn mixture_weights_must_sum_to_one() {
        let mut spec = LengthDistributionSpec::single(LengthFamily::Normal, 100.0, 5.0, 1, 200, 0);
        spec.components[0].weight = 0.9;
        assert!(synthesize_dataset(&spec, 3, "a").is_err());
    }

    #[test]
    fn batch_assignment_floor() {
        let spec = AdapterSpec::new("a", 4, 1);
        let samples: Vec<_> = (0..10).map(|i| SampleRecord::new("a", format!("{i}"), 10)).collect();
        let idx: Vec<usize> = assign_global_batches(&samples, &spec)
            .unwrap()
            .iter()
            .map(|s| s.global_batch_index.unwrap())
            .collect();
        assert_eq!(idx, vec![0, 0, 0, 0, 1, 1, 1, 1, 2, 2]);
        let four = assign_global_batches(&samples[..4], &spec).unwrap();
        assert!(four.iter().all(|s| s.global_batch_index == Some(0)));
        assert!(assign_global_batches(&[], &spec).unwrap().is_empty());
    }

    #[test]
    fn batch_assignment_rejects_foreign_samples() {
        let spec = AdapterSpec::new("a", 4, 1);
        let samples = vec![SampleRecord::new("a", "0", 1), SampleRecord::new("b", "1", 1)];
        assert!(assign_global_batches(&samples, &spec).is_err());
    }

    #[test]
    fn stats_nearest_rank() {
        let s: Vec<_> = [100, 200, 300]
            .iter()
            .enumerate()
            .map(|(i, &l)| SampleRecord::new("a", format!("{i}"), l))
            .collect();
        let st = compute_stats(&s);
        assert_eq!(st.mean_tokens, 200.0);
        assert_eq!(st.max_tokens, 300);
        assert_eq!(st.p50, 200);
        assert_eq!(st.p95, 300);

        let one = compute_stats(&[SampleRecord::new("a", "0", 5)]);
        assert_eq!((one.p50, one.p95, one.max_tokens), (5, 5, 5));

        let empty = compute_stats(&[]);
        assert_eq!(empty.count, 0);
        assert_eq!(empty.mean_tokens, 0.0);
    }

    #[test]
    fn workload_labels_each_adapter_independently() {
        let adapters = vec![AdapterSpec::new("a", 2, 1), AdapterSpec::new("b", 3, 1)];
        let mut samples = Vec::new();
        for i in 0..5 {
            samples.push(SampleRecord::new("a", format!("a{i}"), 10));
            samples.push(SampleRecord::new("b", format!("b{i}"), 10));
        }
        let w = Workload::new(adapters, samples).unwrap();
        let a: Vec<_> = w.samples_of("a").map(|s| s.global_batch_index.unwrap()).collect();
        let b: Vec<_> = w.samples_of("b").map(|s| s.global_batch_index.unwrap()).collect();
        assert_eq!(a, vec![0, 0, 1, 1, 2]);
        assert_eq!(b, vec![0, 0, 0, 1, 1]);
        assert_eq!(w.batch_count(), 3);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn synthesized_lengths_respect_bounds(seed in any::<u64>(), lo in 1u32..500, span in 0u32..4000, n in 0usize..200) {
                let spec = LengthDistributionSpec::single(LengthFamily::LogNormal, 800.0, 0.8, lo, lo + span, seed);
                let a = synthesize_dataset(&spec, n, "x").unwrap();
                prop_assert_eq!(a.len(), n);
                prop_assert!(a.iter().all(|s| (lo..=lo + span).contains(&s.length_tokens)));
                prop_assert_eq!(a, synthesize_dataset(&spec, n, "x").unwrap());
            }

            #[test]
            fn batches_are_consecutive_chunks(n in 1usize..100, gbs in 1usize..17) {
                let samples: Vec<SampleRecord> = (0..n).map(|i| SampleRecord::new("x", format!("x{i}"), 10)).collect();
                let labeled = assign_global_batches(&samples, &AdapterSpec::new("x", gbs, 1)).unwrap();
                for (i, s) in labeled.iter().enumerate() {
                    prop_assert_eq!(s.global_batch_index, Some(i / gbs));
                }
            }
        }
    }
}
