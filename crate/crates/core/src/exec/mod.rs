//! Dual-mode interpreter over primitive and fused graphs.

mod engine;
mod kernels;
mod tensor;

pub use engine::{execute, Bindings, ExecMode, ExecOptions, Executable, ExecutionStats, Outputs};
pub use kernels::{
    arg_slice, plan_kernel, row_kernel, row_kernel_in_place, run_kernel, row_order, run_kernel_threaded, run_rows, ArgMode, KernelPlan,
};
pub use tensor::{Element, Tensor, MAX_RANK};
