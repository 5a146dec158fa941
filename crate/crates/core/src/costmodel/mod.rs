//! Analytic cost models for a LoRA-augmented linear layer: roofline
//! arithmetic intensity, model-state memory, per-kernel DRAM traffic of the
//! unfused and fused execution plans, and the per-microbatch time model used
//! by the pipeline simulator.

mod time;
mod traffic;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use time::{microbatch_time, profile_capacity, RooflineDims, TimeModelMode, TimeModelParams};
pub use traffic::{total_bytes, traffic, KernelTraffic, Pass, TrafficReport, Variant, ADAPTER_TABLE_ENTRY_BYTES, MASK_BYTES};

#[derive(Debug, Error, PartialEq)]
pub enum CostModelError {
    #[error("invalid cost-model input: {0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> CostModelError {
    CostModelError::Invalid(msg.into())
}

/// Peak half-precision throughput and DRAM bandwidth of one accelerator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HardwareProfile {
    pub peak_flops_half: f64,
    pub mem_bandwidth: f64,
    pub machine_balance: f64,
}

impl HardwareProfile {
    pub fn new(peak_flops_half: f64, mem_bandwidth: f64) -> Result<Self, CostModelError> {
        let p = Self {
            peak_flops_half,
            mem_bandwidth,
            machine_balance: peak_flops_half / mem_bandwidth,
        };
        p.validate()?;
        Ok(p)
    }

    /// Dense FP16 tensor-core peak and HBM3 bandwidth of an H100 SXM.
    pub fn h100() -> Self {
        Self::new(989.4e12, 3.35e12).expect("constant profile is valid")
    }

    pub fn validate(&self) -> Result<(), CostModelError> {
        for (name, v) in [
            ("peak_flops_half", self.peak_flops_half),
            ("mem_bandwidth", self.mem_bandwidth),
            ("machine_balance", self.machine_balance),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(format!("{name} must be strictly positive")));
            }
        }
        let derived = self.peak_flops_half / self.mem_bandwidth;
        if ((self.machine_balance - derived) / derived).abs() > 1e-6 {
            return Err(invalid(format!(
                "machine_balance {} inconsistent with peak/bandwidth {derived}",
                self.machine_balance
            )));
        }
        Ok(())
    }
}

/// Dimensions of `Y = XW + alpha * dropout(X) A B` with `X: m x k`,
/// `W: k x n`, `A: k x r`, `B: r x n`. `r == 0` means a frozen layer with no
/// adapter attached.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GemmShape {
    pub m: u64,
    pub k: u64,
    pub n: u64,
    pub r: u64,
    pub element_bytes: u64,
}

impl GemmShape {
    pub fn half(m: u64, k: u64, n: u64, r: u64) -> Self {
        Self {
            m,
            k,
            n,
            r,
            element_bytes: 2,
        }
    }

    pub fn validate(&self) -> Result<(), CostModelError> {
        if self.m < 1 || self.k < 1 || self.n < 1 || self.element_bytes < 1 {
            return Err(invalid(format!("shape dimensions must be >= 1: {self:?}")));
        }
        Ok(())
    }

    /// True when the rank exceeds the smaller projection dimension, which
    /// still counts but defeats the point of a low-rank adapter.
    pub fn rank_exceeds_dims(&self) -> bool {
        self.r > self.n.min(self.k)
    }

    /// Multiply-accumulate FLOPs of the forward pass (two per MAC).
    pub fn forward_flops(&self) -> f64 {
        let (m, k, n, r) = (self.m as f64, self.k as f64, self.n as f64, self.r as f64);
        2.0 * m * k * n + 2.0 * m * k * r + 2.0 * m * r * n
    }
}

/// FLOP/byte of the adapter down-projection as the closed form
/// `1 / (1/r + 1/n + 1/m)`.
pub fn arithmetic_intensity(r: f64, n: f64, m: f64) -> Result<f64, CostModelError> {
    if !(r > 0.0 && n > 0.0 && m > 0.0) || !(r.is_finite() && n.is_finite() && m.is_finite()) {
        return Err(invalid(format!("intensity inputs must be positive: r={r} n={n} m={m}")));
    }
    Ok(1.0 / (1.0 / r + 1.0 / n + 1.0 / m))
}

/// Intensity of `X_hat (m x k) @ A (k x r)` counted from first principles in
/// half precision: `2mkr` FLOPs over `2(mk + kr + mr)` bytes. The reduction
/// dimension is `k` here where the closed form above uses `n`; the two agree
/// whenever `n == k`.
pub fn down_projection_intensity(m: u64, k: u64, r: u64) -> Result<f64, CostModelError> {
    if m < 1 || k < 1 || r < 1 {
        return Err(invalid("down-projection dims must be >= 1"));
    }
    let (m, k, r) = (m as f64, k as f64, r as f64);
    let flops = 2.0 * m * k * r;
    let bytes = 2.0 * (m * k + k * r + m * r);
    Ok(flops / bytes)
}

/// Per-linear-layer model-state memory under mixed-precision training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemoryFootprint {
    pub full_ft_bytes: u64,
    pub lora_bytes: u64,
    pub reduction_factor: f64,
    /// Trainable adapter parameters relative to the frozen weight, `r(n+k)/(nk)`.
    pub adapter_param_fraction: f64,
}

/// Full fine-tuning keeps `16nk` bytes per layer (fp16 weights and
/// gradients plus fp32 master weights and two Adam moments); LoRA keeps the
/// fp16 frozen weight plus 16 bytes per adapter parameter for
/// `2nk + 32r(n+k)` in total as the formula is stated.
pub fn lora_memory_bytes(n: u64, k: u64, r: u64) -> Result<MemoryFootprint, CostModelError> {
    if n < 1 || k < 1 || r < 1 {
        return Err(invalid("memory dims must be >= 1"));
    }
    let full = 16 * n * k;
    let lora = 2 * n * k + 32 * r * (n + k);
    Ok(MemoryFootprint {
        full_ft_bytes: full,
        lora_bytes: lora,
        reduction_factor: full as f64 / lora as f64,
        adapter_param_fraction: (r * (n + k)) as f64 / (n * k) as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_intensity() {
        assert!((arithmetic_intensity(3.0, 3.0, 3.0).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn intensity_reference_shape() {
        // 1 / (1/16 + 1/4096 + 1/8192) = 8192 / 515
        let i = arithmetic_intensity(16.0, 4096.0, 8192.0).unwrap();
        assert!((i - 8192.0 / 515.0).abs() < 1e-12);
        assert!((i - 15.907).abs() < 1e-3);
        assert!(i < HardwareProfile::h100().machine_balance);
    }

    #[test]
    fn intensity_rejects_non_positive() {
        assert!(arithmetic_intensity(0.0, 1.0, 1.0).is_err());
        assert!(arithmetic_intensity(1.0, -1.0, 1.0).is_err());
        assert!(down_projection_intensity(0, 1, 1).is_err());
    }

    #[test]
    fn first_principles_matches_closed_form_when_square() {
        let a = arithmetic_intensity(16.0, 4096.0, 8192.0).unwrap();
        let b = down_projection_intensity(8192, 4096, 16).unwrap();
        assert!((a - b).abs() < 1e-12);
        let skew = down_projection_intensity(8192, 1024, 16).unwrap();
        let eq = arithmetic_intensity(16.0, 4096.0, 8192.0).unwrap();
        assert!(skew < eq);
    }

    #[test]
    fn h100_balance() {
        let h = HardwareProfile::h100();
        assert!((h.machine_balance - 295.0).abs() < 1.0);
        let mut bad = h;
        bad.machine_balance *= 1.01;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn memory_formula() {
        let m = lora_memory_bytes(4096, 4096, 16).unwrap();
        assert_eq!(m.full_ft_bytes, 268_435_456);
        assert_eq!(m.lora_bytes, 37_748_736);
        assert!((m.reduction_factor - 268_435_456.0 / 37_748_736.0).abs() < 1e-12);
        assert!((m.adapter_param_fraction - 0.0078125).abs() < 1e-15);

        let unit = lora_memory_bytes(1, 1, 1).unwrap();
        assert_eq!((unit.full_ft_bytes, unit.lora_bytes), (16, 66));
    }

    #[test]
    fn reduction_grows_with_output_dim() {
        let f: Vec<f64> = [1024, 4096, 16384]
            .iter()
            .map(|&n| lora_memory_bytes(n, 4096, 16).unwrap().reduction_factor)
            .collect();
        assert!(f[0] < f[1] && f[1] < f[2]);
    }
}
