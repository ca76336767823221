use alloc::vec::Vec;

/// 2^20 bytes.
pub const MIB: u64 = 1 << 20;
/// 10^6 bytes.
pub const MB: u64 = 1_000_000;

pub const DEFAULT_CLIENT_CUDA_BYTES: u64 = 800 * MIB;
pub const DEFAULT_SERVER_CUDA_BYTES: u64 = 500 * MIB;

/// Shape of a decoder-only transformer split between client and server.
///
/// `lora_rank` and `lora_alpha` are carried for completeness and do not enter
/// any formula.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelSpec {
    pub batch: u64,
    pub seq_len: u64,
    pub hidden: u64,
    pub layers: u64,
    pub client_layers: u64,
    pub server_layers: u64,
    pub heads: u64,
    pub head_dim: u64,
    pub ffn_dim: u64,
    pub vocab: u64,
    pub max_positions: u64,
    pub bytes_per_element: u64,
    pub lora_rank: u64,
    pub lora_alpha: u64,
    pub client_cuda_bytes: u64,
    pub server_cuda_bytes: u64,
}

impl Default for ModelSpec {
    /// OPT-125M with a 5/7 layer split, FP32.
    fn default() -> Self {
        Self {
            batch: 64,
            seq_len: 64,
            hidden: 768,
            layers: 12,
            client_layers: 5,
            server_layers: 7,
            heads: 12,
            head_dim: 64,
            ffn_dim: 3072,
            vocab: 50_272,
            max_positions: 2048,
            bytes_per_element: 4,
            lora_rank: 8,
            lora_alpha: 16,
            client_cuda_bytes: DEFAULT_CLIENT_CUDA_BYTES,
            server_cuda_bytes: DEFAULT_SERVER_CUDA_BYTES,
        }
    }
}

/// Conventions a spec may break without being rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpecWarning {
    HeadDim { head_dim: u64, hidden: u64, heads: u64 },
    FfnDim { ffn_dim: u64, hidden: u64 },
    LayerSplit { client: u64, server: u64, total: u64 },
}

impl core::fmt::Display for SpecWarning {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match *self {
            SpecWarning::HeadDim { head_dim, hidden, heads } => {
                write!(f, "head_dim {head_dim} differs from hidden/heads = {hidden}/{heads}")
            }
            SpecWarning::FfnDim { ffn_dim, hidden } => {
                write!(f, "ffn_dim {ffn_dim} differs from 4*hidden = {}", 4 * hidden)
            }
            SpecWarning::LayerSplit { client, server, total } => {
                write!(f, "client_layers + server_layers = {} but layers = {total}", client + server)
            }
        }
    }
}

impl ModelSpec {
    pub fn warnings(&self) -> Vec<SpecWarning> {
        let mut w = Vec::new();
        if self.heads == 0 || self.hidden % self.heads != 0 || self.head_dim != self.hidden / self.heads {
            w.push(SpecWarning::HeadDim {
                head_dim: self.head_dim,
                hidden: self.hidden,
                heads: self.heads,
            });
        }
        if self.ffn_dim != 4 * self.hidden {
            w.push(SpecWarning::FfnDim {
                ffn_dim: self.ffn_dim,
                hidden: self.hidden,
            });
        }
        if self.client_layers + self.server_layers != self.layers {
            w.push(SpecWarning::LayerSplit {
                client: self.client_layers,
                server: self.server_layers,
                total: self.layers,
            });
        }
        w
    }
}

/// Byte counts per memory component. Components that do not apply are zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MemoryBreakdown {
    pub params: u64,
    pub grads: u64,
    pub masks: u64,
    pub kv_cache: u64,
    pub activations: u64,
    pub logits_peak: u64,
    pub transient: u64,
    pub comm_buffer: u64,
    pub cuda_overhead: u64,
}

impl MemoryBreakdown {
    pub fn components(&self) -> [(&'static str, u64); 9] {
        [
            ("params", self.params),
            ("grads", self.grads),
            ("masks", self.masks),
            ("kv_cache", self.kv_cache),
            ("activations", self.activations),
            ("logits_peak", self.logits_peak),
            ("transient", self.transient),
            ("comm_buffer", self.comm_buffer),
            ("cuda_overhead", self.cuda_overhead),
        ]
    }

    pub fn total(&self) -> u64 {
        self.components().iter().fold(0u64, |acc, (_, b)| acc.saturating_add(*b))
    }
}

fn prod(xs: &[u64]) -> u64 {
    xs.iter().fold(1u64, |acc, &x| acc.saturating_mul(x))
}

/// Parameters in one transformer layer: four projections with biases, a
/// two-layer FFN with biases and two LayerNorms.
pub fn per_layer_params(spec: &ModelSpec) -> u64 {
    let h = spec.hidden;
    let f = spec.ffn_dim;
    prod(&[4, h, h])
        .saturating_add(prod(&[2, h, f]))
        .saturating_add(f)
        .saturating_add(9 * h)
}

/// Token and position embeddings plus the client's layers.
pub fn client_param_elements(spec: &ModelSpec) -> u64 {
    prod(&[spec.vocab, spec.hidden])
        .saturating_add(prod(&[spec.max_positions.saturating_add(2), spec.hidden]))
        .saturating_add(prod(&[spec.client_layers, per_layer_params(spec)]))
}

/// LM head, the server's layers and the final LayerNorm.
pub fn server_param_elements(spec: &ModelSpec) -> u64 {
    prod(&[spec.vocab, spec.hidden])
        .saturating_add(prod(&[spec.server_layers, per_layer_params(spec)]))
        .saturating_add(2 * spec.hidden)
}

/// Logits plus shifted logits, softmax and gradient at vocabulary width.
pub fn logits_elements(spec: &ModelSpec) -> u64 {
    let b = spec.batch;
    let s = spec.seq_len;
    let v = spec.vocab;
    prod(&[b, s, v]).saturating_add(prod(&[3, b, s.saturating_sub(1), v]))
}

fn transient_elements(spec: &ModelSpec) -> u64 {
    let bs = prod(&[spec.batch, spec.seq_len]);
    prod(&[2, bs, spec.hidden]).saturating_add(prod(&[bs, spec.ffn_dim]))
}

/// Client footprint under zeroth-order training: no gradients and no stored
/// activations, but a KV cache reused across perturbation passes.
pub fn client_memory_zo(spec: &ModelSpec) -> MemoryBreakdown {
    let beta = spec.bytes_per_element;
    MemoryBreakdown {
        params: prod(&[client_param_elements(spec), beta]),
        grads: 0,
        masks: prod(&[spec.client_layers, spec.max_positions, spec.max_positions, beta]),
        kv_cache: prod(&[
            spec.client_layers,
            2,
            spec.batch,
            spec.heads,
            spec.seq_len,
            spec.head_dim,
            beta,
        ]),
        activations: 0,
        logits_peak: 0,
        transient: prod(&[transient_elements(spec), beta]),
        comm_buffer: prod(&[spec.batch, spec.seq_len, spec.hidden, beta]),
        cuda_overhead: spec.client_cuda_bytes,
    }
}

/// Server footprint under first-order training.
pub fn server_memory_fo(spec: &ModelSpec) -> MemoryBreakdown {
    let beta = spec.bytes_per_element;
    let (b, s, h) = (spec.batch, spec.seq_len, spec.hidden);
    let per_layer_act = prod(&[6, b, s, h])
        .saturating_add(prod(&[2, b, spec.heads, s, s]))
        .saturating_add(prod(&[b, s, spec.ffn_dim]));
    let params = prod(&[server_param_elements(spec), beta]);
    MemoryBreakdown {
        params,
        grads: params,
        masks: prod(&[spec.server_layers, spec.max_positions, spec.max_positions, beta]),
        kv_cache: 0,
        activations: prod(&[spec.server_layers, per_layer_act, beta]),
        logits_peak: prod(&[logits_elements(spec), beta]),
        transient: prod(&[transient_elements(spec), beta]),
        comm_buffer: 0,
        cuda_overhead: spec.server_cuda_bytes,
    }
}
