//! Learned drift functions and learned optimizers, plus the handcrafted
//! rules they are compared against.

mod artifact;
mod drift;
mod optim;

pub use artifact::Artifact;
pub use drift::{
    drift_dr, drift_eval, drift_eval_flagged, init_lpo_near_ppo, init_lpo_near_ppo_with, lpo_featurize, lpo_spec,
    DriftBatch, DriftFunction, LpoInitConfig, PreparedDrift, DEFAULT_CLIP_EPS, LPO_FEATURES, VIOLATION_TOL,
};
pub use optim::{
    apply_update_rule, dormancy_scores, layer_proportions, no_features_featurize, open_featurize, parameter_dormancy,
    rand_column, update_momenta, FeatureSet, OptState, UpdateContext, UpdateRule, UpdateRuleKind, N_MOMENTA,
    NO_FEATURES, OPEN_FEATURES,
};
