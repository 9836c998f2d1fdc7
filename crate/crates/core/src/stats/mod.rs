//! Metrics and non-parametric statistics for comparing decoding variants.
//!
//! The comparison procedure mirrors the usual repeated-measures workflow:
//! a Shapiro–Wilk normality check (advisory only), a Friedman omnibus test
//! across variants, then two-sided Wilcoxon signed-rank tests for every pair
//! with Bonferroni-adjusted p-values.

pub mod bootstrap;
pub mod friedman;
pub mod metrics;
pub mod polyfit;
pub mod quantile;
pub mod shapiro;
pub mod wilcoxon;

use std::fmt::Write as _;

pub use bootstrap::{bootstrap_median_ci, MedianCi};
pub use friedman::friedman;
pub use metrics::{mse, pearson_r, r_squared};
pub use polyfit::{polyfit2, polyval2};
pub use quantile::{median, quantile};
pub use shapiro::shapiro_wilk;
pub use wilcoxon::{wilcoxon_signed_rank, wilcoxon_signed_rank_with, PMethod, ZeroMethod};

use crate::error::{Error, Result};

/// Outcome of one hypothesis test.
#[derive(Debug, Clone, PartialEq)]
pub struct TestOutcome {
    pub statistic: f64,
    pub p_raw: f64,
    pub p_adjusted: f64,
    pub n: usize,
    pub method: String,
}

/// Session-by-variant score matrix. Rows with missing cells are never stored.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedScores {
    variants: Vec<String>,
    rows: Vec<Vec<f64>>,
}

impl PairedScores {
    pub fn from_rows(variants: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self> {
        for (i, r) in rows.iter().enumerate() {
            if r.len() != variants.len() {
                return Err(Error::Argument(format!(
                    "row {i} has {} cells, expected {}",
                    r.len(),
                    variants.len()
                )));
            }
        }
        Ok(Self { variants, rows })
    }

    /// Builds the matrix from optional cells, dropping any session that lacks a variant.
    pub fn from_sparse(variants: Vec<String>, rows: Vec<Vec<Option<f64>>>) -> Result<Self> {
        let complete = rows
            .into_iter()
            .filter_map(|r| r.into_iter().collect::<Option<Vec<f64>>>())
            .collect();
        Self::from_rows(variants, complete)
    }

    pub fn variants(&self) -> &[String] {
        &self.variants
    }
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }
    pub fn n_cols(&self) -> usize {
        self.variants.len()
    }
    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.rows.iter().map(|r| r.as_slice())
    }
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[j]).collect()
    }
}

/// `min(1, p * m)` for each p, where `m` is the declared number of comparisons.
pub fn bonferroni(raw: &[f64], m: usize) -> Vec<f64> {
    let m = m.max(raw.len()).max(1) as f64;
    raw.iter().map(|p| (p * m).min(1.0)).collect()
}

/// One row of the hypothesis-test table.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub comparison: String,
    pub metric: String,
    pub outcome: TestOutcome,
}

/// Friedman across all variants, then Bonferroni-corrected pairwise Wilcoxon
/// tests when the omnibus test is significant at `alpha`. A single variant
/// yields no tests at all.
pub fn compare_variants(scores: &PairedScores, metric: &str, alpha: f64) -> Result<Vec<ComparisonRow>> {
    let k = scores.n_cols();
    if k < 2 {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    let omnibus = friedman(scores)?;
    let significant = omnibus.p_raw < alpha;
    out.push(ComparisonRow {
        comparison: "all".into(),
        metric: metric.into(),
        outcome: omnibus,
    });
    if !significant && k > 2 {
        return Ok(out);
    }
    let m = k * (k - 1) / 2;
    let mut pairs = Vec::with_capacity(m);
    for i in 0..k {
        for j in (i + 1)..k {
            let outcome = match wilcoxon_signed_rank(&scores.column(i), &scores.column(j)) {
                Ok(o) => o,
                Err(Error::DegenerateData(_)) => TestOutcome {
                    statistic: 0.0,
                    p_raw: 1.0,
                    p_adjusted: 1.0,
                    n: 0,
                    method: "wilcoxon_degenerate".into(),
                },
                Err(e) => return Err(e),
            };
            pairs.push((format!("{} vs {}", scores.variants[i], scores.variants[j]), outcome));
        }
    }
    let raw: Vec<f64> = pairs.iter().map(|(_, o)| o.p_raw).collect();
    for ((name, mut outcome), adj) in pairs.into_iter().zip(bonferroni(&raw, m)) {
        outcome.p_adjusted = adj;
        out.push(ComparisonRow {
            comparison: name,
            metric: metric.into(),
            outcome,
        });
    }
    Ok(out)
}

pub const TEST_TABLE_HEADER: &str = "comparison,metric,statistic,p_raw,p_bonferroni,n,method";

/// Renders rows in the test-results CSV layout.
pub fn test_table_csv(rows: &[ComparisonRow]) -> String {
    let mut s = String::from(TEST_TABLE_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.comparison,
            r.metric,
            r.outcome.statistic,
            r.outcome.p_raw,
            r.outcome.p_adjusted,
            r.outcome.n,
            r.outcome.method
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn bonferroni_examples() {
        let adj = bonferroni(&[0.01, 0.4], 5);
        assert!((adj[0] - 0.05).abs() < 1e-15);
        assert_eq!(adj[1], 1.0);
    }

    #[test]
    fn sparse_rows_are_dropped() {
        let s = PairedScores::from_sparse(
            vec!["a".into(), "b".into()],
            vec![vec![Some(1.0), None], vec![Some(1.0), Some(2.0)]],
        )
        .unwrap();
        assert_eq!(s.n_rows(), 1);
    }

    #[test]
    fn single_variant_has_no_tests() {
        let s = PairedScores::from_rows(vec!["a".into()], vec![vec![1.0]; 5]).unwrap();
        assert!(compare_variants(&s, "r", 0.05).unwrap().is_empty());
    }

    proptest! {
        #[test]
        fn bonferroni_monotone_and_never_decreasing(
            ps in proptest::collection::vec(0.0f64..1.0, 1..20),
            extra in 0usize..10,
        ) {
            let m = ps.len() + extra;
            let adj = bonferroni(&ps, m);
            for (p, a) in ps.iter().zip(&adj) {
                prop_assert!(a >= p);
                prop_assert!(*a <= 1.0);
            }
            for i in 0..ps.len() {
                for j in 0..ps.len() {
                    if ps[i] < ps[j] {
                        prop_assert!(adj[i] <= adj[j]);
                    }
                }
            }
        }

        #[test]
        fn friedman_invariant_under_monotone_row_transform(
            cells in proptest::collection::vec(-5.0f64..5.0, 30),
        ) {
            let rows: Vec<Vec<f64>> = cells.chunks(3).map(|c| c.to_vec()).collect();
            let names = vec!["a".to_string(), "b".into(), "c".into()];
            let s1 = PairedScores::from_rows(names.clone(), rows.clone()).unwrap();
            let transformed: Vec<Vec<f64>> = rows
                .iter()
                .enumerate()
                .map(|(i, r)| r.iter().map(|v| (v * (1.0 + i as f64)).exp()).collect())
                .collect();
            let s2 = PairedScores::from_rows(names, transformed).unwrap();
            let f1 = friedman(&s1).unwrap();
            let f2 = friedman(&s2).unwrap();
            prop_assert_eq!(f1.statistic, f2.statistic);
        }
    }
}
