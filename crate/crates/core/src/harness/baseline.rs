//! Minimum Observable: the nearest dataset row with the opposite
//! prediction.

use crate::constraints::{is_plausible, ConstraintSpec};
use crate::distance::{distance_value, DistanceConfig};
use crate::rational::Rational;
use crate::schema::FeatureSchema;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MoResult {
    pub row: usize,
    pub counterfactual: Vec<Rational>,
    pub distance: Rational,
}

/// Argmin of `d(r, x̂)` over rows predicted differently from `ŷ` that also
/// satisfy the constraints; ties go to the lower row index.
pub fn minimum_observable(
    schema: &FeatureSchema,
    rows: &[Vec<Rational>],
    predictions: &[u8],
    x_hat: &[Rational],
    y_hat: u8,
    distance: &DistanceConfig,
    constraints: &ConstraintSpec,
) -> Option<MoResult> {
    let mut best: Option<MoResult> = None;
    for (i, (row, &p)) in rows.iter().zip(predictions).enumerate() {
        if p == y_hat || !is_plausible(schema, row, x_hat, constraints) {
            continue;
        }
        let d = distance_value(distance, schema, row, x_hat);
        if best.as_ref().is_none_or(|b| d < b.distance) {
            best = Some(MoResult {
                row: i,
                counterfactual: row.clone(),
                distance: d,
            });
        }
    }
    best
}
