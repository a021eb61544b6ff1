//! The header classifier network: a dilated 1-D convolution encoder over bit
//! windows, a two-layer classification head, NT-Xent and BCE losses with
//! hand-written reverse-mode gradients, and Adam.

mod adam;
mod checkpoint;
mod loss;
mod model;
mod real;

pub use adam::Adam;
pub use checkpoint::{Checkpoint, MAGIC, VERSION};
pub use loss::{bce, cosine_similarity, ntxent, sigmoid};
pub use model::{Backbone, Classifier, ClassifierGrads, Encoder, EncoderConfig, Head, Params, Trace, CHUNK};
pub use real::{gemm, Real};
