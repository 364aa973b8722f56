//! Sampling and counting for permutations with restricted positions (PRP) in the
//! very dense regime, and a state-compressed Glauber sampler for formulas over
//! permutations with disjunctive constraints (PDC).
//!
//! All randomness flows through [`rng::RngStream`], a seedable ChaCha stream, so
//! every routine is reproducible from `(input, seed)`.

pub mod compression;
pub mod oracle;
pub mod par;
pub mod pdc;
pub mod pdc_sampler;
pub mod prp;
pub mod prp_sampler;
pub mod rng;

pub use compression::{CompressedState, Decomposition};
pub use pdc::{Assignment, Constraint, FormulaParams, Literal, PdcError, PdcFormula, Var};
pub use pdc_sampler::{RegimeReport, SamplerConfig, SamplerError, SamplerTelemetry};
pub use prp::{DensityReport, PermanentBracket, PrpError, PrpInstance};
pub use prp_sampler::{CountEstimate, Permutation, SampleStats};
pub use rng::RngStream;
