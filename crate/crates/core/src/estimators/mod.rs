//! Efficient estimators of the target-site causal measure.

pub mod pipeline;
pub mod terms;
pub mod weights;

pub use pipeline::{
    estimate, estimate_dr_t, estimate_measure, estimate_psi0_target, estimate_psi1, estimate_via, fit_plan, influence_values,
    plan_totals, solve_plan, EstimatorConfig, PlanTotals, InfluenceSample, PsiComponent,
};
pub use terms::{h1_terms, h2_terms, RowEvaluator, RowTerms};
pub use weights::{c1_weights, c2_weights, site_probabilities};
