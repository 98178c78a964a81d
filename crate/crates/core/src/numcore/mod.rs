//! Numerical substrate: tensors, seeded random streams, finite-difference
//! gradients and the binary tensor file format.

mod gradcheck;
mod io;
mod rng;
mod tensor;

pub use gradcheck::{
    compare_grads, finite_diff_grad, relative_error, GradComparison, AUDIT_EPS, DEFAULT_FLOOR,
};
pub use io::{
    decode_tensor, encode_tensor, load_tensor, read_tensor, save_tensor, write_tensor, AnyTensor,
    TENSOR_MAGIC,
};
pub use rng::{rng_uniform, Rng};
pub use tensor::{sigmoid, Precision, Real, Tensor};
