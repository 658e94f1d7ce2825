//! Training objectives: factorized Gaussian view codes, the symmetric KL and
//! JSD mutual-information terms of the bottleneck loss, cross-entropy, and
//! their λ-weighted combination.

pub mod gaussian;
pub mod loss;
pub mod mi;

pub use gaussian::{
    encode_view, encode_view_graph, kl_diag_gaussians, kl_diag_graph, CodeVars, GaussianCode,
    GaussianHeadIds, GaussianHeadParams, GaussianHeadVars, STDDEV_FLOOR,
};
pub use loss::{
    combined_loss_graph, cross_entropy, cross_entropy_graph, ib_graph, ib_loss, IbTerms, IbValue,
    LossBreakdown,
};
pub use mi::{
    critic_scores, derangement, fit_critic, jsd_graph, jsd_mi_lower_bound, CriticFit, CriticIds,
    CriticParams, CriticVars, JsdEstimate, LN_4,
};
