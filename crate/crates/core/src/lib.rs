//! Soft-error dependability toolkit for small encoder-decoder transformers.
//!
//! * [`floatbits`]: binary32 views and single-bit flips.
//! * [`minixformer`]: a deterministic float32 encoder-decoder (OPUS-like and T5-like).
//! * [`campaign`]: bit-position sweeps and labeled error datasets.
//! * [`metrics`]: ROUGE-1 and BLEU.
//! * [`lingfeat`]: the sixteen linguistic features of a generated text.
//! * [`forest`]: the Random Forest detector with threshold control and ROC.
//! * [`corpus`]: sample files, stratified splits and synthetic corruption.

pub mod campaign;
pub mod corpus;
pub mod floatbits;
pub mod forest;
pub mod label;
pub mod lingfeat;
pub mod metrics;
pub mod minixformer;
pub mod seed;

pub use floatbits::{BitPosition, BitWord32};
pub use forest::{Forest, Hyperparams};
pub use label::Label;
pub use lingfeat::FeatureVector;
