//! Memory arithmetic, the communication ledger and the convergence bound.

mod comm;
mod memory;
mod theory;

pub use comm::{CommLedger, Direction, Totals};
pub use memory::{
    client_memory_zo, client_param_elements, logits_elements, per_layer_params, server_memory_fo,
    server_param_elements, MemoryBreakdown, ModelSpec, SpecWarning, DEFAULT_CLIENT_CUDA_BYTES,
    DEFAULT_SERVER_CUDA_BYTES, MB, MIB,
};
pub use theory::{
    bound_check, convergence_bound, horizon_lambda_sq, horizon_step, step_size_limits, Bound, BoundReport,
    TheoryError, TheoryParams,
};
