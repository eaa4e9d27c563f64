//! Reverse-mode automatic differentiation over real and complex tensors.

mod gradcheck;
mod ops;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{finite_diff_check, relative_error, relative_error_floored, FdReport, FdSample};
pub use ops::{backward as vjp, forward as eval_op, GatherPlan, Op, SQRT_GRAD_FLOOR};
pub use params::{ParamStore, Segment};
pub use tape::{tape_forward, Eager, Graph, Tape, Var};
pub use tensor::{ComplexTensor, Kind, RealTensor, Value};
