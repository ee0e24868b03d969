//! Transformer decoder workload: model descriptions, per-layer kernel lists,
//! full prefill/decode kernel graphs and memory footprints.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::placement::{KernelClass, TensorClass};

/// Transformer architecture and precision.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub name: String,
    pub n_layers: u64,
    /// Hidden width.
    pub d_model: u64,
    pub n_heads: u64,
    /// FFN inner width.
    pub d_ff: u64,
    /// Number of FFN weight matrices (2, or 3 with a gate).
    pub n_ffn_mats: u64,
    pub bytes_per_el: u64,
    /// Only used for the embedding footprint.
    pub vocab_size: u64,
}

pub const MODEL_PRESETS: &[&str] = &["llava15-13b", "llama32-1b"];

impl ModelSpec {
    /// Built-in model presets. Both use full multi-head K/V caching.
    pub fn preset(name: &str) -> Result<ModelSpec> {
        let m = match name {
            "llava15-13b" => ModelSpec {
                name: name.into(),
                n_layers: 40,
                d_model: 5120,
                n_heads: 40,
                d_ff: 13824,
                n_ffn_mats: 3,
                bytes_per_el: 2,
                vocab_size: 32000,
            },
            "llama32-1b" => ModelSpec {
                name: name.into(),
                n_layers: 16,
                d_model: 2048,
                n_heads: 32,
                d_ff: 8192,
                n_ffn_mats: 3,
                bytes_per_el: 2,
                vocab_size: 128256,
            },
            _ => {
                return Err(Error::UnknownPreset {
                    kind: "model",
                    name: name.into(),
                    valid: MODEL_PRESETS.iter().map(|s| s.to_string()).collect(),
                })
            }
        };
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Error::InvalidModel {
            model: self.name.clone(),
            reason,
        };
        for (field, v) in [
            ("n_layers", self.n_layers),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("d_ff", self.d_ff),
            ("vocab_size", self.vocab_size),
        ] {
            if v == 0 {
                return Err(bad(format!("{field} must be at least 1")));
            }
        }
        if !matches!(self.bytes_per_el, 1 | 2 | 4) {
            return Err(bad(format!(
                "bytes_per_el must be 1, 2 or 4, got {}",
                self.bytes_per_el
            )));
        }
        if !matches!(self.n_ffn_mats, 2 | 3) {
            return Err(bad(format!(
                "n_ffn_mats must be 2 or 3, got {}",
                self.n_ffn_mats
            )));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::DimensionMismatch(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> u64 {
        self.d_model / self.n_heads
    }

    /// Weight elements of one decoder layer.
    pub fn layer_weight_elements(&self) -> u64 {
        4 * self.d_model * self.d_model + self.n_ffn_mats * self.d_model * self.d_ff
    }

    pub fn parameter_count(&self) -> u64 {
        self.n_layers * self.layer_weight_elements() + self.vocab_size * self.d_model
    }
}

/// Prefill and decode lengths of one request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PhaseSpec {
    pub prefill_len: u64,
    pub decode_len: u64,
}

impl PhaseSpec {
    pub fn new(prefill_len: u64, decode_len: u64) -> Result<Self> {
        let p = PhaseSpec {
            prefill_len,
            decode_len,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.decode_len == 0 {
            return Err(Error::config("phase.decode_len", "must be at least 1"));
        }
        Ok(())
    }

    /// Context seen by decode step `t` (1-based).
    pub fn context(&self, t: u64) -> u64 {
        self.prefill_len + t
    }

    pub fn final_context(&self) -> u64 {
        self.prefill_len + self.decode_len
    }
}

impl std::fmt::Display for PhaseSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}", self.prefill_len, self.decode_len)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Gemm,
    Elementwise,
}

/// Position of an operand in `C[m,n] = A[m,k] · B[k,n]` (per batch entry).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OperandSlot {
    A,
    B,
    C,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReuseRole {
    Streamed,
    Stationary,
    Output,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Operand {
    pub slot: OperandSlot,
    pub class: TensorClass,
    pub bytes: u64,
    pub role: ReuseRole,
    /// Stored as one strip per attention head; every head moves as its own
    /// transfer.
    pub per_head: bool,
}

/// One GEMM/GEMV or elementwise kernel.
///
/// Elementwise kernels stream `batch · m · n` elements in and out; `k` is 1.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct KernelDesc {
    pub kind: KernelKind,
    pub class: KernelClass,
    pub batch: u64,
    pub m: u64,
    pub n: u64,
    pub k: u64,
    pub bytes_per_el: u64,
    pub operands: Vec<Operand>,
    pub flops: u64,
}

impl KernelDesc {
    /// Batched GEMM with the standard operand layout.
    #[allow(clippy::too_many_arguments)]
    pub fn gemm(
        class: KernelClass,
        batch: u64,
        m: u64,
        n: u64,
        k: u64,
        bytes_per_el: u64,
        classes: [TensorClass; 3],
        b_per_head: bool,
    ) -> Self {
        let [a, b, c] = classes;
        KernelDesc {
            kind: KernelKind::Gemm,
            class,
            batch,
            m,
            n,
            k,
            bytes_per_el,
            operands: vec![
                Operand {
                    slot: OperandSlot::A,
                    class: a,
                    bytes: batch * m * k * bytes_per_el,
                    role: ReuseRole::Streamed,
                    per_head: false,
                },
                Operand {
                    slot: OperandSlot::B,
                    class: b,
                    bytes: batch * k * n * bytes_per_el,
                    role: ReuseRole::Stationary,
                    per_head: b_per_head,
                },
                Operand {
                    slot: OperandSlot::C,
                    class: c,
                    bytes: batch * m * n * bytes_per_el,
                    role: ReuseRole::Output,
                    per_head: false,
                },
            ],
            flops: 2 * batch * m * n * k,
        }
    }

    /// Read-then-write pass over `rows × cols` elements of one tensor class.
    pub fn elementwise(class: KernelClass, rows: u64, cols: u64, bytes_per_el: u64, tclass: TensorClass) -> Self {
        let bytes = rows * cols * bytes_per_el;
        KernelDesc {
            kind: KernelKind::Elementwise,
            class,
            batch: 1,
            m: rows,
            n: cols,
            k: 1,
            bytes_per_el,
            operands: vec![
                Operand {
                    slot: OperandSlot::A,
                    class: tclass,
                    bytes,
                    role: ReuseRole::Streamed,
                    per_head: false,
                },
                Operand {
                    slot: OperandSlot::C,
                    class: tclass,
                    bytes,
                    role: ReuseRole::Output,
                    per_head: false,
                },
            ],
            flops: 0,
        }
    }

    pub fn operand(&self, slot: OperandSlot) -> Option<&Operand> {
        self.operands.iter().find(|o| o.slot == slot)
    }

    /// Short human label, e.g. `QKt[40x1x201x128]`.
    pub fn label(&self) -> String {
        format!(
            "{}[{}x{}x{}x{}]",
            self.class, self.batch, self.m, self.n, self.k
        )
    }
}

/// Kernels of one decoder layer in execution order.
///
/// `tokens_in_flight` is the number of new tokens processed (the GEMM `m`);
/// `context_len` is the attention span including those tokens.
pub fn build_decoder_layer_kernels(
    model: &ModelSpec,
    context_len: u64,
    tokens_in_flight: u64,
) -> Result<Vec<KernelDesc>> {
    model.validate()?;
    if tokens_in_flight == 0 || context_len < tokens_in_flight {
        return Err(Error::DimensionMismatch(format!(
            "need context_len >= tokens_in_flight >= 1, got {context_len} and {tokens_in_flight}"
        )));
    }
    use KernelClass as K;
    use TensorClass as T;
    let d = model.d_model;
    let h = model.n_heads;
    let hd = model.head_dim();
    let t = tokens_in_flight;
    let c = context_len;
    let b = model.bytes_per_el;

    let mut ks = vec![
        KernelDesc::gemm(K::QKVGen, 1, t, 3 * d, d, b, [T::OtherActivations, T::Weights, T::Q], false),
        KernelDesc::gemm(K::QKt, h, t, c, hd, b, [T::Q, T::KVCache, T::AttnActivations], true),
        KernelDesc::elementwise(K::Elementwise, h * t, c, b, T::AttnActivations),
        KernelDesc::gemm(K::SoftmaxV, h, t, hd, c, b, [T::AttnActivations, T::KVCache, T::AttnActivations], true),
        KernelDesc::gemm(K::Projection, 1, t, d, d, b, [T::AttnActivations, T::Weights, T::OtherActivations], false),
        KernelDesc::gemm(K::MLP1, 1, t, model.d_ff, d, b, [T::OtherActivations, T::Weights, T::OtherActivations], false),
    ];
    if model.n_ffn_mats == 3 {
        // Gate projection, same shape as MLP1.
        ks.push(KernelDesc::gemm(K::MLP1, 1, t, model.d_ff, d, b, [T::OtherActivations, T::Weights, T::OtherActivations], false));
    }
    ks.push(KernelDesc::gemm(K::MLP2, 1, t, d, model.d_ff, b, [T::OtherActivations, T::Weights, T::OtherActivations], false));
    Ok(ks)
}

/// K and V cache bytes for all layers at `context_len` tokens.
pub fn kv_cache_bytes(model: &ModelSpec, context_len: u64) -> u64 {
    2 * model.n_layers * model.d_model * context_len * model.bytes_per_el
}

/// All weight bytes, including the embedding table.
pub fn weight_bytes(model: &ModelSpec) -> u64 {
    model.parameter_count() * model.bytes_per_el
}

/// Per-class bytes live at once while processing one layer.
///
/// Used by the capacity check; values are maxima over the prefill pass and
/// the last decode step.
pub fn activation_bytes(model: &ModelSpec, phase: &PhaseSpec, class: TensorClass) -> u64 {
    let b = model.bytes_per_el;
    let d = model.d_model;
    let mut worst = 0;
    let mut shapes = vec![(1, phase.final_context())];
    if phase.prefill_len > 0 {
        shapes.push((phase.prefill_len, phase.prefill_len));
    }
    for (t, ctx) in shapes {
        let bytes = match class {
            TensorClass::Q | TensorClass::K | TensorClass::V => t * d * b,
            TensorClass::AttnActivations => (model.n_heads * t * ctx + t * d) * b,
            TensorClass::OtherActivations => {
                t * (d + (model.n_ffn_mats - 1) * model.d_ff) * b
            }
            TensorClass::Weights | TensorClass::KVCache => 0,
        };
        worst = worst.max(bytes);
    }
    worst
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Prefill,
    Decode,
}

/// One forward pass: the same layer kernels repeated `n_layers` times.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Step {
    pub step_id: usize,
    pub phase: Phase,
    pub context: u64,
    pub tokens_in_flight: u64,
    /// Kernels of a single layer; every layer of the step is identical.
    pub layer_kernels: Vec<KernelDesc>,
}

/// Ordered kernel graph for a full request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KernelGraph {
    pub model: String,
    pub n_layers: u64,
    pub steps: Vec<Step>,
}

impl KernelGraph {
    /// All `(step_id, layer_id, kernel)` triples in execution order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, u64, &KernelDesc)> + '_ {
        self.steps.iter().flat_map(move |s| {
            (0..self.n_layers).flat_map(move |l| s.layer_kernels.iter().map(move |k| (s.step_id, l, k)))
        })
    }

    pub fn decode_steps(&self) -> impl Iterator<Item = &Step> {
        self.steps.iter().filter(|s| s.phase == Phase::Decode)
    }
}

/// Prefill pass followed by `decode_len` single-token decode steps.
///
/// Step 0 is the prefill pass (empty when `prefill_len` is 0); decode step
/// `t` sees `prefill_len + t` tokens of context.
pub fn build_inference_graph(model: &ModelSpec, phase: &PhaseSpec) -> Result<KernelGraph> {
    model.validate()?;
    phase.validate()?;
    let mut steps = Vec::with_capacity(phase.decode_len as usize + 1);
    let prefill = if phase.prefill_len > 0 {
        build_decoder_layer_kernels(model, phase.prefill_len, phase.prefill_len)?
    } else {
        Vec::new()
    };
    steps.push(Step {
        step_id: 0,
        phase: Phase::Prefill,
        context: phase.prefill_len,
        tokens_in_flight: phase.prefill_len,
        layer_kernels: prefill,
    });
    for t in 1..=phase.decode_len {
        let ctx = phase.context(t);
        steps.push(Step {
            step_id: t as usize,
            phase: Phase::Decode,
            context: ctx,
            tokens_in_flight: 1,
            layer_kernels: build_decoder_layer_kernels(model, ctx, 1)?,
        });
    }
    Ok(KernelGraph {
        model: model.name.clone(),
        n_layers: model.n_layers,
        steps,
    })
}
