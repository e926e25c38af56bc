//! Simulated mixed-type benchmark table.
//!
//! Eleven columns, five discrete with cardinalities (2, 5, 10, 20, 50) and six
//! numerical, wired so that every pair kind has a dependent example:
//!
//! | column | distribution |
//! |--------|--------------|
//! | `C1` | binary, `P(level_1) = 0.3` |
//! | `C2` | 5 levels, Zipf weights `1/(l+1)` |
//! | `C3` | 10 levels, drawn from a fixed transition row selected by `C2` |
//! | `C4` | 20 levels, Zipf, independent |
//! | `C5` | 50 levels, Zipf, independent |
//! | `N1`, `N2` | standard bivariate Gaussian, correlation 0.8 |
//! | `N3` | standard Gaussian, independent |
//! | `N4` | Gaussian with unit variance and mean equal to the `C2` level index |
//! | `N5` | Exponential(1) |
//! | `N6` | Uniform(-1, 1) |

use serde::{Deserialize, Serialize};

use crate::nn::Rng;
use crate::schema::RawTable;

pub const DISCRETE_CARDINALITIES: [usize; 5] = [2, 5, 10, 20, 50];
pub const NUMERICAL_COLUMNS: usize = 6;
pub const N1_N2_CORRELATION: f64 = 0.8;
const C1_RATE: f64 = 0.3;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimSpec {
    pub n_rows: usize,
    pub seed: u64,
}

impl Default for SimSpec {
    fn default() -> Self {
        Self {
            n_rows: 100_000,
            seed: 0,
        }
    }
}

pub fn header() -> Vec<String> {
    [
        "C1", "C2", "C3", "C4", "C5", "N1", "N2", "N3", "N4", "N5", "N6",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

pub fn level_name(code: usize) -> String {
    format!("level_{code}")
}

/// Normalised Zipf weights `p_l ∝ 1/(l+1)` over `c` levels.
pub fn zipf_weights(c: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..c).map(|l| 1.0 / (l + 1) as f64).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

/// Row-stochastic 5 x 10 matrix: level `i` of `C2` favours `C3` levels `2i`
/// and `2i + 1` ten to one.
pub fn transition_matrix() -> Vec<Vec<f64>> {
    (0..5)
        .map(|i| {
            let w: Vec<f64> = (0..10)
                .map(|j| if j / 2 == i { 10.0 } else { 1.0 })
                .collect();
            let total: f64 = w.iter().sum();
            w.into_iter().map(|x| x / total).collect()
        })
        .collect()
}

fn fmt(x: f64) -> String {
    format!("{x:.6}")
}

/// Generates `spec.n_rows` rows with one sequential random stream.
pub fn simulate(spec: &SimSpec) -> RawTable {
    let mut rng = Rng::new(spec.seed);
    let z5 = zipf_weights(5);
    let z20 = zipf_weights(20);
    let z50 = zipf_weights(50);
    let trans = transition_matrix();
    let rho = N1_N2_CORRELATION;
    let rows = (0..spec.n_rows)
        .map(|_| {
            let c1 = usize::from(rng.uniform() < C1_RATE);
            let c2 = rng.categorical(&z5);
            let c3 = rng.categorical(&trans[c2]);
            let c4 = rng.categorical(&z20);
            let c5 = rng.categorical(&z50);
            let a = rng.normal();
            let b = rng.normal();
            let n1 = a;
            let n2 = rho * a + (1.0 - rho * rho).sqrt() * b;
            let n3 = rng.normal();
            let n4 = c2 as f64 + rng.normal();
            let n5 = -(1.0 - rng.uniform()).ln();
            let n6 = rng.uniform_range(-1.0, 1.0);
            let mut row: Vec<String> = [c1, c2, c3, c4, c5].into_iter().map(level_name).collect();
            row.extend([n1, n2, n3, n4, n5, n6].into_iter().map(fmt));
            row
        })
        .collect();
    RawTable::new(header(), rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn published_totals() {
        assert_eq!(DISCRETE_CARDINALITIES.iter().sum::<usize>(), 87);
        assert_eq!(DISCRETE_CARDINALITIES.len() + NUMERICAL_COLUMNS, 11);
        assert_eq!(header().len(), 11);
    }

    #[test]
    fn transition_rows_are_stochastic() {
        for row in transition_matrix() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!((zipf_weights(50).iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn shape_and_determinism() {
        let spec = SimSpec {
            n_rows: 250,
            seed: 4,
        };
        let a = simulate(&spec);
        assert_eq!(a.len(), 250);
        assert!(a.rows.iter().all(|r| r.len() == 11));
        assert_eq!(a, simulate(&spec));
        assert_ne!(
            a,
            simulate(&SimSpec {
                n_rows: 250,
                seed: 5
            })
        );
    }
}
