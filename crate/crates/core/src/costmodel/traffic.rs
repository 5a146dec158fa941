//! DRAM byte counting per kernel for a LoRA linear layer.
//!
//! Every kernel reads each operand once and writes each result once; tile
//! re-reads and cache hits are not modeled. The dropout mask is stored at
//! [`MASK_BYTES`] per element in every variant that uses dropout.

use serde::{Deserialize, Serialize};

use super::{CostModelError, GemmShape};

pub const MASK_BYTES: u64 = 1;

/// Bytes per entry of the tile-to-adapter routing table read by the
/// multi-adapter kernels.
pub const ADAPTER_TABLE_ENTRY_BYTES: u64 = 16;
const ROUTING_TILE_TOKENS: u64 = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Plain frozen GEMM, no adapter.
    Frozen,
    Unfused,
    FusedLora,
    FusedMultiLora,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pass {
    Forward,
    Backward,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelTraffic {
    pub kernel: String,
    pub bytes_read: u64,
    pub bytes_written: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrafficReport {
    pub variant: Variant,
    pub pass: Pass,
    pub kernels: Vec<KernelTraffic>,
    pub total_read: u64,
    pub total_written: u64,
    pub total_bytes: u64,
}

impl TrafficReport {
    fn from_kernels(variant: Variant, pass: Pass, kernels: Vec<KernelTraffic>) -> Self {
        let total_read = kernels.iter().map(|k| k.bytes_read).sum();
        let total_written = kernels.iter().map(|k| k.bytes_written).sum();
        Self {
            variant,
            pass,
            kernels,
            total_read,
            total_written,
            total_bytes: total_read + total_written,
        }
    }
}

struct Sizes {
    mk: u64,
    mn: u64,
    kn: u64,
    mr: u64,
    kr: u64,
    rn: u64,
    mask: u64,
    table: u64,
}

impl Sizes {
    fn of(s: &GemmShape) -> Self {
        let e = s.element_bytes;
        Self {
            mk: s.m * s.k * e,
            mn: s.m * s.n * e,
            kn: s.k * s.n * e,
            mr: s.m * s.r * e,
            kr: s.k * s.r * e,
            rn: s.r * s.n * e,
            mask: s.m * s.k * MASK_BYTES,
            table: s.m.div_ceil(ROUTING_TILE_TOKENS) * ADAPTER_TABLE_ENTRY_BYTES,
        }
    }
}

fn kernel(name: &str, read: u64, written: u64) -> KernelTraffic {
    KernelTraffic {
        kernel: name.to_string(),
        bytes_read: read,
        bytes_written: written,
    }
}

/// Kernel-by-kernel traffic of one pass. A shape with `r == 0` is a frozen
/// layer whatever variant is asked for.
pub fn traffic(shape: &GemmShape, pass: Pass, variant: Variant) -> Result<TrafficReport, CostModelError> {
    shape.validate()?;
    let variant = if shape.r == 0 { Variant::Frozen } else { variant };
    let z = Sizes::of(shape);
    let kernels = match (variant, pass) {
        (Variant::Frozen, Pass::Forward) => vec![kernel("base_gemm", z.mk + z.kn, z.mn)],
        // W is frozen: only the input gradient dX = dY W^T is produced.
        (Variant::Frozen, Pass::Backward) => vec![kernel("base_grad_input", z.mn + z.kn, z.mk)],

        (Variant::Unfused, Pass::Forward) => vec![
            kernel("dropout", z.mk, z.mk + z.mask),
            kernel("lora_down", z.mk + z.kr, z.mr),
            kernel("lora_up", z.mr + z.rn, z.mn),
            kernel("base_gemm", z.mk + z.kn, z.mn),
            kernel("add_scale", 2 * z.mn, z.mn),
        ],
        (Variant::Unfused, Pass::Backward) => vec![
            kernel("lora_up_grad_weight", z.mr + z.mn, z.rn),
            kernel("lora_up_grad_input", z.mn + z.rn, z.mr),
            kernel("lora_down_grad_weight", z.mk + z.mr, z.kr),
            kernel("lora_down_grad_input", z.mr + z.kr, z.mk),
            kernel("dropout_backward", z.mk + z.mask, z.mk),
            kernel("base_grad_input", z.mn + z.kn, z.mk),
            kernel("grad_accumulate", 2 * z.mk, z.mk),
        ],

        (Variant::FusedLora | Variant::FusedMultiLora, Pass::Forward) => vec![
            // X_hat is kept for the dA computation in the backward pass.
            kernel("fused_dropout_down", z.mk + z.kr, z.mk + z.mask + z.mr),
            kernel("fused_base_up_epilogue", z.mk + z.kn + z.mr + z.rn, z.mn),
        ],
        (Variant::FusedLora | Variant::FusedMultiLora, Pass::Backward) => vec![
            // one read of dY feeds both dS and dB
            kernel("fused_grad_s_b", z.mn + z.mr + z.rn, z.rn + z.mr),
            kernel("lora_down_grad_weight", z.mk + z.mr, z.kr),
            kernel("fused_base_grad_input", z.mn + z.kn + z.mr + z.kr + z.mask, z.mk),
        ],
    };
    let mut kernels = kernels;
    if variant == Variant::FusedMultiLora {
        kernels[0].bytes_read += z.table;
    }
    Ok(TrafficReport::from_kernels(variant, pass, kernels))
}

/// Forward plus backward bytes.
pub fn total_bytes(shape: &GemmShape, variant: Variant) -> Result<u64, CostModelError> {
    Ok(traffic(shape, Pass::Forward, variant)?.total_bytes + traffic(shape, Pass::Backward, variant)?.total_bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    const REF: GemmShape = GemmShape {
        m: 8192,
        k: 4096,
        n: 4096,
        r: 16,
        element_bytes: 2,
    };

    #[test]
    fn frozen_forward_is_single_gemm() {
        let s = GemmShape { r: 0, ..REF };
        let t = traffic(&s, Pass::Forward, Variant::Unfused).unwrap();
        assert_eq!(t.variant, Variant::Frozen);
        assert_eq!(t.total_bytes, (s.m * s.k + s.k * s.n + s.m * s.n) * 2);
    }

    #[test]
    fn totals_are_sums_of_kernels() {
        for v in [Variant::Frozen, Variant::Unfused, Variant::FusedLora, Variant::FusedMultiLora] {
            for p in [Pass::Forward, Pass::Backward] {
                let t = traffic(&REF, p, v).unwrap();
                let r: u64 = t.kernels.iter().map(|k| k.bytes_read).sum();
                let w: u64 = t.kernels.iter().map(|k| k.bytes_written).sum();
                assert_eq!((t.total_read, t.total_written, t.total_bytes), (r, w, r + w));
            }
        }
    }

    #[test]
    fn output_written_once_when_fused() {
        let mn = REF.m * REF.n * REF.element_bytes;
        let count = |v| {
            traffic(&REF, Pass::Forward, v)
                .unwrap()
                .kernels
                .iter()
                .filter(|k| k.bytes_written == mn)
                .count()
        };
        assert_eq!(count(Variant::FusedLora), 1);
        assert_eq!(count(Variant::Unfused), 3);
    }

    #[test]
    fn multi_adapter_adds_only_the_routing_table() {
        let a = total_bytes(&REF, Variant::FusedLora).unwrap();
        let b = total_bytes(&REF, Variant::FusedMultiLora).unwrap();
        assert_eq!(b - a, 2 * (8192 / 128) * ADAPTER_TABLE_ENTRY_BYTES);
    }

    #[test]
    fn invalid_shape() {
        assert!(traffic(&GemmShape { m: 0, ..REF }, Pass::Forward, Variant::Unfused).is_err());
    }
}
