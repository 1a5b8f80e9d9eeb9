//! Delegation-weighted recommendations.
//!
//! Users vote up to three songs per category and may delegate one friend they
//! trust in that category. Trust decays by a factor `alpha` per delegation hop;
//! the resulting user scores weight the votes into a global song ranking, and
//! each user's own delegation chain gives a personalized one.

pub mod model;
pub mod recommend;
pub mod viscous;

#[cfg(any(test, feature = "oracles"))]
pub mod oracle;
pub mod pipeline;
pub mod store;
pub mod synth;
