pub mod cli;
pub mod decomp;
pub mod dfsim;
pub mod dse;
pub mod error;
pub mod hwmodel;
pub mod model;
pub mod quant;
pub mod sra;
pub mod tensor;

pub use error::{Error, Result};
pub use model::{LayerSpec, ModelSpec};
pub use tensor::{LayerShape, Matrix};
