use serde::{Deserialize, Serialize};

use super::traffic::{traffic, Pass, Variant};
use super::{invalid, CostModelError, GemmShape, HardwareProfile};
use crate::pipesim;

/// Microbatches per stage used when profiling a candidate capacity.
const PROFILE_MICROBATCHES_PER_STAGE: usize = 4;
const TIE_TOLERANCE: f64 = 1e-9;

/// Transformer dimensions for the roofline time mode. Each layer holds four
/// `hidden x hidden` attention projections plus gate/up (`hidden x ffn`) and
/// down (`ffn x hidden`) MLP projections, every one carrying an adapter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RooflineDims {
    pub layers: u32,
    pub hidden: u64,
    pub ffn_hidden: u64,
    #[serde(default = "default_rank")]
    pub lora_rank: u64,
    #[serde(default = "default_variant")]
    pub variant: Variant,
    pub hardware: HardwareProfile,
}

fn default_rank() -> u64 {
    16
}
fn default_variant() -> Variant {
    Variant::FusedMultiLora
}

impl RooflineDims {
    fn linear_shapes(&self, tokens: u64) -> [GemmShape; 7] {
        let (h, f, r) = (self.hidden, self.ffn_hidden, self.lora_rank);
        let sq = GemmShape::half(tokens, h, h, r);
        let up = GemmShape::half(tokens, h, f, r);
        let down = GemmShape::half(tokens, f, h, r);
        [sq, sq, sq, sq, up, up, down]
    }

    fn layer_forward_seconds(&self, tokens: u64) -> Result<f64, CostModelError> {
        let mut flops = 0.0;
        let mut bytes = 0u64;
        for s in self.linear_shapes(tokens) {
            flops += s.forward_flops();
            bytes += traffic(&s, Pass::Forward, self.variant)?.total_bytes;
        }
        let compute = flops / self.hardware.peak_flops_half;
        let memory = bytes as f64 / self.hardware.mem_bandwidth;
        Ok(compute.max(memory))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TimeModelMode {
    Linear,
    Roofline(RooflineDims),
}

/// Forward-pass time of one microbatch as a function of its padded tokens.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeModelParams {
    pub per_token_cost: f64,
    #[serde(default)]
    pub fixed_overhead: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub roofline: Option<RooflineDims>,
}

impl Default for TimeModelParams {
    fn default() -> Self {
        Self::linear(1e-6, 0.0)
    }
}

impl TimeModelParams {
    pub fn linear(per_token_cost: f64, fixed_overhead: f64) -> Self {
        Self {
            per_token_cost,
            fixed_overhead,
            roofline: None,
        }
    }

    pub fn mode(&self) -> TimeModelMode {
        match self.roofline {
            Some(d) => TimeModelMode::Roofline(d),
            None => TimeModelMode::Linear,
        }
    }

    pub fn validate(&self) -> Result<(), CostModelError> {
        if !(self.per_token_cost > 0.0 && self.per_token_cost.is_finite()) {
            return Err(invalid("per_token_cost must be > 0"));
        }
        if !(self.fixed_overhead >= 0.0 && self.fixed_overhead.is_finite()) {
            return Err(invalid("fixed_overhead must be >= 0"));
        }
        if let Some(d) = &self.roofline {
            d.hardware.validate()?;
            if d.layers < 1 || d.hidden < 1 || d.ffn_hidden < 1 {
                return Err(invalid("roofline dims must be >= 1"));
            }
        }
        Ok(())
    }
}

/// Forward seconds for a microbatch of `tokens` padded tokens. Backward time
/// is the pipeline's backward ratio times this value.
pub fn microbatch_time(tokens: u64, params: &TimeModelParams) -> Result<f64, CostModelError> {
    match params.mode() {
        TimeModelMode::Linear => Ok(params.fixed_overhead + params.per_token_cost * tokens as f64),
        TimeModelMode::Roofline(_) if tokens == 0 => Ok(params.fixed_overhead),
        TimeModelMode::Roofline(d) => Ok(params.fixed_overhead + f64::from(d.layers) * d.layer_forward_seconds(tokens)?),
    }
}

/// Simulates uniform microbatches of each candidate capacity through an
/// `stages`-deep 1F1B pipeline and returns the capacity with the highest
/// token throughput, preferring the larger capacity on ties.
pub fn profile_capacity(candidates: &[u64], params: &TimeModelParams, stages: usize) -> Result<u64, CostModelError> {
    if candidates.is_empty() {
        return Err(invalid("capacity candidate list is empty"));
    }
    if stages < 1 {
        return Err(invalid("stage count must be >= 1"));
    }
    let microbatches = PROFILE_MICROBATCHES_PER_STAGE * stages;
    let mut best: Option<(u64, f64)> = None;
    for &c in candidates {
        if c == 0 {
            return Err(invalid("capacity candidates must be positive"));
        }
        let fwd = microbatch_time(c, params)? / stages as f64;
        let total = pipesim::uniform_1f1b_makespan(stages, microbatches, fwd, pipesim::DEFAULT_BACKWARD_RATIO * fwd);
        let tput = (microbatches as u64 * c) as f64 / total;
        best = match best {
            None => Some((c, tput)),
            Some((bc, bt)) => {
                let rel = (tput - bt) / bt.max(f64::MIN_POSITIVE);
                if rel > TIE_TOLERANCE || (rel.abs() <= TIE_TOLERANCE && c > bc) {
                    Some((c, tput))
                } else {
                    Some((bc, bt))
                }
            }
        };
    }
    Ok(best.expect("non-empty candidates").0)
}
