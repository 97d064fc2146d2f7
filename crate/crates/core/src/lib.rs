//! Streaming approximate Bayesian inference.
//!
//! The crate keeps online codevector histograms over the input stream, the
//! weight posterior and the output stream of a deterministic network, and
//! updates the predictive distribution incrementally instead of sampling the
//! network many times per record.
//!
//! * [`och`]: the online codevector histogram.
//! * [`ann`]: stable-distribution LSH index with exact fallback and the
//!   split-projection cache.
//! * [`predictor`]: MLP forward pass, weight posteriors and their file format.
//! * [`engine`]: the four inference modes (SP, MU, DU, DBNN).

pub mod ann;
pub mod engine;
pub mod och;
pub mod predictor;
pub mod rng;

pub use ann::{IndexError, LshIndex, LshParams, Neighbor};
pub use engine::{Engine, EngineConfig, EngineError, Mode, PredictiveSummary};
pub use och::{Codevector, Gate, Och, OchError, OchParams, UpdateOutcome};
pub use predictor::{Activation, MlpSpec, Model, Posterior, PredictorError, Task, WeightSample};
pub use rng::CounterRng;
