//! Row-stochastic multiple-membership weights `h_{i|j}`.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

const ROW_SUM_TOL: f64 = 1e-9;

/// Sparse `m × n` weight matrix; row `j` lists the areas contributing to membership `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct MembershipMatrix {
    m: usize,
    n: usize,
    rows: Vec<Vec<(usize, f64)>>,
}

impl MembershipMatrix {
    /// Builds the matrix from `(membership, area, weight)` triplets.
    ///
    /// Duplicate `(membership, area)` pairs are summed. With `renormalize`
    /// each row is divided by its sum; otherwise rows must already sum to one.
    pub fn from_triplets(
        triplets: &[(usize, usize, f64)],
        m: usize,
        n: usize,
        renormalize: bool,
    ) -> Result<Self> {
        let mut acc: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); m];
        for &(j, i, w) in triplets {
            if j >= m {
                return Err(Error::InvalidId { id: j, bound: m });
            }
            if i >= n {
                return Err(Error::InvalidId { id: i, bound: n });
            }
            if !(w >= 0.0) || !w.is_finite() {
                return Err(Error::NegativeWeight {
                    membership: j,
                    area: i,
                    weight: w,
                });
            }
            *acc[j].entry(i).or_insert(0.0) += w;
        }

        let mut rows = Vec::with_capacity(m);
        for (j, row) in acc.into_iter().enumerate() {
            let entries: Vec<(usize, f64)> = row.into_iter().filter(|&(_, w)| w > 0.0).collect();
            if entries.is_empty() {
                return Err(Error::EmptyRow(j));
            }
            let sum: f64 = entries.iter().map(|&(_, w)| w).sum();
            let entries = if renormalize {
                entries.into_iter().map(|(i, w)| (i, w / sum)).collect()
            } else {
                if (sum - 1.0).abs() > ROW_SUM_TOL {
                    return Err(Error::RowSumViolation { row: j, sum });
                }
                entries
            };
            rows.push(entries);
        }
        Ok(Self { m, n, rows })
    }

    /// `n × n` identity: every area is its own membership.
    pub fn identity(n: usize) -> Self {
        Self {
            m: n,
            n,
            rows: (0..n).map(|i| vec![(i, 1.0)]).collect(),
        }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn row(&self, j: usize) -> &[(usize, f64)] {
        &self.rows[j]
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    /// Nonzero entries as `(membership, area, weight)`, row-major.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.rows
            .iter()
            .enumerate()
            .flat_map(|(j, row)| row.iter().map(move |&(i, w)| (j, i, w)))
    }

    /// `H ζ`: the weighted average of areal values for each membership.
    pub fn project(&self, zeta: &[f64]) -> Result<Vec<f64>> {
        if zeta.len() != self.n {
            return Err(Error::DimensionMismatch(format!(
                "areal vector has length {}, membership matrix has {} areas",
                zeta.len(),
                self.n
            )));
        }
        Ok(self.project_unchecked(zeta))
    }

    pub(crate) fn project_unchecked(&self, zeta: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|row| row.iter().map(|&(i, w)| w * zeta[i]).sum())
            .collect()
    }

    /// `Hᵀ v`, used to pull membership-level scores back onto areas.
    pub fn project_transpose(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.m);
        let mut out = vec![0.0; self.n];
        for (row, &vj) in self.rows.iter().zip(v) {
            for &(i, w) in row {
                out[i] += w * vj;
            }
        }
        out
    }
}

pub fn build_membership(
    triplets: &[(usize, usize, f64)],
    m: usize,
    n: usize,
    renormalize: bool,
) -> Result<MembershipMatrix> {
    MembershipMatrix::from_triplets(triplets, m, n, renormalize)
}

pub fn mm_project(h: &MembershipMatrix, zeta: &[f64]) -> Result<Vec<f64>> {
    h.project(zeta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn renormalizes_equal_weights() {
        let h = MembershipMatrix::from_triplets(&[(0, 0, 2.0), (0, 1, 2.0)], 1, 2, true).unwrap();
        assert_eq!(h.row(0), &[(0, 0.5), (1, 0.5)]);
    }

    #[test]
    fn single_weight() {
        let h = MembershipMatrix::from_triplets(&[(0, 0, 1.0)], 1, 1, false).unwrap();
        assert_eq!(h.row(0), &[(0, 1.0)]);
    }

    #[test]
    fn row_sum_violation() {
        assert!(matches!(
            MembershipMatrix::from_triplets(&[(0, 0, 0.3)], 1, 1, false),
            Err(Error::RowSumViolation { row: 0, .. })
        ));
    }

    #[test]
    fn empty_row_and_negative_weight() {
        assert_eq!(
            MembershipMatrix::from_triplets(&[(0, 0, 1.0)], 2, 1, true),
            Err(Error::EmptyRow(1))
        );
        assert!(matches!(
            MembershipMatrix::from_triplets(&[(0, 0, -1.0)], 1, 1, true),
            Err(Error::NegativeWeight { .. })
        ));
        // A row with only zero weights is empty as well.
        assert_eq!(
            MembershipMatrix::from_triplets(&[(0, 0, 0.0)], 1, 1, true),
            Err(Error::EmptyRow(0))
        );
    }

    #[test]
    fn duplicates_are_summed() {
        let h = MembershipMatrix::from_triplets(&[(0, 0, 1.0), (0, 1, 1.0), (0, 0, 2.0)], 1, 2, true)
            .unwrap();
        assert_eq!(h.row(0), &[(0, 0.75), (1, 0.25)]);
    }

    #[test]
    fn identity_projection() {
        let h = MembershipMatrix::identity(4);
        let z = [0.1, -2.0, 3.5, 0.0];
        assert_eq!(h.project(&z).unwrap(), z.to_vec());
    }

    #[test]
    fn mean_of_two() {
        let h = MembershipMatrix::from_triplets(&[(0, 0, 0.5), (0, 1, 0.5)], 1, 2, false).unwrap();
        assert_eq!(h.project(&[0.0, 2.0]).unwrap(), vec![1.0]);
    }

    #[test]
    fn dimension_mismatch() {
        let h = MembershipMatrix::identity(3);
        assert!(matches!(h.project(&[1.0]), Err(Error::DimensionMismatch(_))));
    }

    fn arb_matrix() -> impl Strategy<Value = (Vec<(usize, usize, f64)>, usize, usize)> {
        (1usize..6, 1usize..6).prop_flat_map(|(m, n)| {
            let rows = proptest::collection::vec(
                proptest::collection::vec((0..n, 0.01f64..5.0), 1..5),
                m,
            );
            rows.prop_map(move |rows| {
                let triplets = rows
                    .into_iter()
                    .enumerate()
                    .flat_map(|(j, r)| r.into_iter().map(move |(i, w)| (j, i, w)))
                    .collect();
                (triplets, m, n)
            })
        })
    }

    proptest! {
        #[test]
        fn matches_dense_product((triplets, m, n) in arb_matrix(), seed in proptest::collection::vec(-3.0f64..3.0, 6)) {
            let h = MembershipMatrix::from_triplets(&triplets, m, n, true).unwrap();
            let zeta = &seed[..n];
            let mut dense = vec![vec![0.0; n]; m];
            let mut sums = vec![0.0; m];
            for &(j, i, w) in &triplets {
                dense[j][i] += w;
                sums[j] += w;
            }
            let out = h.project(zeta).unwrap();
            for j in 0..m {
                let expect: f64 = (0..n).map(|i| dense[j][i] / sums[j] * zeta[i]).sum();
                prop_assert!((out[j] - expect).abs() < 1e-12);
                let support: Vec<f64> = h.row(j).iter().map(|&(i, _)| zeta[i]).collect();
                let lo = support.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = support.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(out[j] >= lo - 1e-12 && out[j] <= hi + 1e-12);
            }
        }

        #[test]
        fn constants_and_monotonicity((triplets, m, n) in arb_matrix(), c in -5.0f64..5.0, bump in proptest::collection::vec(0.0f64..1.0, 6)) {
            let h = MembershipMatrix::from_triplets(&triplets, m, n, true).unwrap();
            for v in h.project(&vec![c; n]).unwrap() {
                prop_assert!((v - c).abs() < 1e-12);
            }
            let base: Vec<f64> = (0..n).map(|i| i as f64 * 0.3 - 1.0).collect();
            let raised: Vec<f64> = base.iter().zip(&bump).map(|(a, b)| a + b).collect();
            let lo = h.project(&base).unwrap();
            let hi = h.project(&raised).unwrap();
            for (a, b) in lo.iter().zip(&hi) {
                prop_assert!(a <= &(b + 1e-12));
            }
        }

        #[test]
        fn order_invariant((triplets, m, n) in arb_matrix()) {
            let mut reversed = triplets.clone();
            reversed.reverse();
            let a = MembershipMatrix::from_triplets(&triplets, m, n, true).unwrap();
            let b = MembershipMatrix::from_triplets(&reversed, m, n, true).unwrap();
            let z: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
            let pa = a.project(&z).unwrap();
            let pb = b.project(&z).unwrap();
            for (x, y) in pa.iter().zip(&pb) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
