//! The subbagging loss and the adaptive weights built from it.
//!
//! Each summary contributes the quadratic `(b - bt_s)' H_s (b - bt_s)`. Their
//! average is stored expanded as `b' H_bar b - 2 v' b + c`, so the aggregate
//! needs `O(p^2)` memory however many subsamples went into it.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::subsample::SubsampleSummary;

#[derive(Debug, Clone, PartialEq)]
pub struct AggregatedQuadratic {
    pub m: usize,
    pub k: usize,
    /// Mean of the subsample Hessians.
    pub h_bar: DMatrix<f64>,
    /// Mean of `H_s * beta_tilde_s`.
    pub b: DVector<f64>,
    /// Mean of `beta_tilde_s' H_s beta_tilde_s`.
    pub c: f64,
    /// Mean of the subsample estimators.
    pub beta_bar: DVector<f64>,
    /// Mean subsample loss at the subsample optima.
    pub c_loss: f64,
}

impl AggregatedQuadratic {
    /// Averages a nonempty list of summaries with a common `p` and `k`.
    pub fn merge(summaries: &[SubsampleSummary]) -> Result<Self> {
        let first = summaries
            .first()
            .ok_or_else(|| Error::config("cannot merge an empty list of summaries"))?;
        let p = first.p();
        let k = first.k;
        let mut h_sum = DMatrix::zeros(p, p);
        let mut b_sum = DVector::zeros(p);
        let mut c_sum = 0.0;
        let mut beta_sum = DVector::zeros(p);
        let mut loss_sum = 0.0;
        for s in summaries {
            if s.p() != p || s.hessian.shape() != (p, p) {
                return Err(Error::DimensionMismatch {
                    expected: p,
                    got: s.p(),
                });
            }
            if s.k != k {
                return Err(Error::config(format!(
                    "summaries mix subsample sizes {k} and {}",
                    s.k
                )));
            }
            let hb = &s.hessian * &s.beta_tilde;
            c_sum += s.beta_tilde.dot(&hb);
            h_sum += &s.hessian;
            b_sum += hb;
            beta_sum += &s.beta_tilde;
            loss_sum += s.loss_at_opt;
        }
        let m = summaries.len();
        let inv = 1.0 / m as f64;
        let mut h_bar = h_sum * inv;
        symmetrize(&mut h_bar);
        Ok(Self {
            m,
            k,
            h_bar,
            b: b_sum * inv,
            c: c_sum * inv,
            beta_bar: beta_sum * inv,
            c_loss: loss_sum * inv,
        })
    }

    /// Weighted merge of two partial aggregates; equal to merging the union
    /// of their summaries up to rounding.
    pub fn combine(&self, other: &Self) -> Result<Self> {
        if self.p() != other.p() {
            return Err(Error::DimensionMismatch {
                expected: self.p(),
                got: other.p(),
            });
        }
        if self.k != other.k {
            return Err(Error::config(format!(
                "aggregates mix subsample sizes {} and {}",
                self.k, other.k
            )));
        }
        let m = self.m + other.m;
        let (wa, wb) = (self.m as f64 / m as f64, other.m as f64 / m as f64);
        let mut h_bar = &self.h_bar * wa + &other.h_bar * wb;
        symmetrize(&mut h_bar);
        Ok(Self {
            m,
            k: self.k,
            h_bar,
            b: &self.b * wa + &other.b * wb,
            c: self.c * wa + other.c * wb,
            beta_bar: &self.beta_bar * wa + &other.beta_bar * wb,
            c_loss: self.c_loss * wa + other.c_loss * wb,
        })
    }

    pub fn p(&self) -> usize {
        self.b.len()
    }

    fn check_dim(&self, beta: &DVector<f64>) -> Result<()> {
        if beta.len() != self.p() {
            return Err(Error::DimensionMismatch {
                expected: self.p(),
                got: beta.len(),
            });
        }
        Ok(())
    }

    /// `beta' H_bar beta - 2 b' beta + c`.
    pub fn loss(&self, beta: &DVector<f64>) -> Result<f64> {
        self.check_dim(beta)?;
        Ok(self.loss_unchecked(beta))
    }

    pub(crate) fn loss_unchecked(&self, beta: &DVector<f64>) -> f64 {
        let hb = &self.h_bar * beta;
        beta.dot(&hb) - 2.0 * self.b.dot(beta) + self.c
    }

    /// `2 (H_bar beta - b)`.
    pub fn gradient(&self, beta: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_dim(beta)?;
        Ok((&self.h_bar * beta - &self.b) * 2.0)
    }
}

/// Merges leaves of `leaf` consecutive summaries, then combines adjacent
/// partial aggregates pairwise until one remains. The result depends only on
/// the order of `summaries`, and equals [`AggregatedQuadratic::merge`]
/// exactly when there is a single leaf.
pub fn tree_merge(summaries: &[SubsampleSummary], leaf: usize) -> Result<AggregatedQuadratic> {
    if summaries.is_empty() {
        return Err(Error::config("cannot merge an empty list of summaries"));
    }
    let mut level: Vec<AggregatedQuadratic> = summaries
        .par_chunks(leaf.max(1))
        .map(AggregatedQuadratic::merge)
        .collect::<Result<_>>()?;
    while level.len() > 1 {
        level = level
            .chunks(2)
            .map(|pair| match pair {
                [a, b] => a.combine(b),
                [a] => Ok(a.clone()),
                _ => unreachable!(),
            })
            .collect::<Result<_>>()?;
    }
    Ok(level.pop().expect("nonempty"))
}

/// Subbagging loss at `beta`; see [`AggregatedQuadratic::loss`].
pub fn subbagging_loss(agg: &AggregatedQuadratic, beta: &DVector<f64>) -> Result<f64> {
    agg.loss(beta)
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let p = m.nrows();
    for i in 0..p {
        for j in (i + 1)..p {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// `w_j = 1 / |beta_bar_j|^gamma`. A coefficient that is exactly zero gets
/// an infinite weight, which the solver treats as "fixed at zero".
pub fn adaptive_weights(beta_bar: &DVector<f64>, gamma: f64) -> Result<DVector<f64>> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::config(format!(
            "gamma must be positive, got {gamma}"
        )));
    }
    Ok(beta_bar.map(|b| {
        if b == 0.0 {
            f64::INFINITY
        } else {
            1.0 / b.abs().powf(gamma)
        }
    }))
}

/// Zeroes the weights at `positions` (e.g. an intercept) so those
/// coefficients are left unpenalized.
pub fn exempt_from_penalty(weights: &mut DVector<f64>, positions: &[usize]) -> Result<()> {
    for &j in positions {
        if j >= weights.len() {
            return Err(Error::config(format!(
                "unpenalized position {j} out of range for {} coefficients",
                weights.len()
            )));
        }
        weights[j] = 0.0;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_summary(
        rng: &mut ChaCha8Rng,
        p: usize,
        k: usize,
        id: u32,
    ) -> SubsampleSummary {
        let a = DMatrix::from_fn(p + 2, p, |_, _| rng.random_range(-1.0..1.0));
        let mut hessian = a.transpose() * a / (p + 2) as f64;
        symmetrize(&mut hessian);
        SubsampleSummary {
            k,
            beta_tilde: DVector::from_fn(p, |_, _| rng.random_range(-3.0..3.0)),
            hessian,
            loss_at_opt: rng.random_range(0.0..1.0),
            subsample_id: id,
            seed: id as u64,
        }
    }

    fn direct_sum(summaries: &[SubsampleSummary], beta: &DVector<f64>) -> f64 {
        summaries
            .iter()
            .map(|s| {
                let d = beta - &s.beta_tilde;
                d.dot(&(&s.hessian * &d))
            })
            .sum::<f64>()
            / summaries.len() as f64
    }

    fn close(a: &AggregatedQuadratic, b: &AggregatedQuadratic, tol: f64) {
        assert_eq!((a.m, a.k), (b.m, b.k));
        assert!((&a.h_bar - &b.h_bar).amax() <= tol);
        assert!((&a.b - &b.b).amax() <= tol);
        assert!((&a.beta_bar - &b.beta_bar).amax() <= tol);
        assert!((a.c - b.c).abs() <= tol);
        assert!((a.c_loss - b.c_loss).abs() <= tol);
    }

    #[test]
    fn single_summary_vanishes_at_center() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = random_summary(&mut rng, 4, 10, 0);
        let agg = AggregatedQuadratic::merge(std::slice::from_ref(&s)).unwrap();
        assert!(agg.loss(&s.beta_tilde).unwrap().abs() <= 1e-12);
        assert_eq!(agg.loss(&DVector::zeros(4)).unwrap(), agg.c);
    }

    #[test]
    fn hand_built_pair_matches_direct_sum() {
        let s1 = SubsampleSummary {
            k: 5,
            beta_tilde: DVector::from_vec(vec![1.0, -2.0]),
            hessian: DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]),
            loss_at_opt: 0.3,
            subsample_id: 0,
            seed: 0,
        };
        let s2 = SubsampleSummary {
            k: 5,
            beta_tilde: DVector::from_vec(vec![0.5, 0.25]),
            hessian: DMatrix::from_row_slice(2, 2, &[1.0, -0.25, -0.25, 3.0]),
            loss_at_opt: 0.1,
            subsample_id: 1,
            seed: 1,
        };
        let pair = [s1, s2];
        let agg = AggregatedQuadratic::merge(&pair).unwrap();
        assert_eq!(agg.beta_bar.as_slice(), &[0.75, -0.875]);
        assert!((agg.c_loss - 0.2).abs() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let beta = DVector::from_fn(2, |_, _| rng.random_range(-5.0..5.0));
            let direct = direct_sum(&pair, &beta);
            assert!((agg.loss(&beta).unwrap() - direct).abs() <= 1e-12 * direct.max(1.0));
        }
    }

    #[test]
    fn merge_is_associative_and_partition_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let all: Vec<_> = (0..9).map(|i| random_summary(&mut rng, 3, 7, i)).collect();
        let whole = AggregatedQuadratic::merge(&all).unwrap();
        let a = AggregatedQuadratic::merge(&all[..2]).unwrap();
        let b = AggregatedQuadratic::merge(&all[2..6]).unwrap();
        let c = AggregatedQuadratic::merge(&all[6..]).unwrap();
        let left = a.combine(&b).unwrap().combine(&c).unwrap();
        let right = a.combine(&b.combine(&c).unwrap()).unwrap();
        close(&left, &right, 1e-12);
        close(&left, &whole, 1e-12);
    }

    #[test]
    fn tree_merge_matches_flat_merge() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let all: Vec<_> = (0..23).map(|i| random_summary(&mut rng, 3, 7, i)).collect();
        let whole = AggregatedQuadratic::merge(&all).unwrap();
        assert_eq!(tree_merge(&all, 64).unwrap(), whole);
        for leaf in [1, 2, 5] {
            close(&tree_merge(&all, leaf).unwrap(), &whole, 1e-12);
        }
        assert!(tree_merge(&[], 4).is_err());
    }

    #[test]
    fn loss_is_nonnegative_with_matching_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let all: Vec<_> = (0..4).map(|i| random_summary(&mut rng, 3, 7, i)).collect();
            let agg = AggregatedQuadratic::merge(&all).unwrap();
            let beta = DVector::from_fn(3, |_, _| rng.random_range(-4.0..4.0));
            let l = agg.loss(&beta).unwrap();
            assert!(l >= -1e-10);
            let direct = direct_sum(&all, &beta);
            assert!((l - direct).abs() <= 1e-10 * direct.max(1.0));
            let g = agg.gradient(&beta).unwrap();
            for j in 0..3 {
                let h = 1e-6 * beta[j].abs().max(1.0);
                let mut up = beta.clone();
                let mut dn = beta.clone();
                up[j] += h;
                dn[j] -= h;
                let fd = (agg.loss(&up).unwrap() - agg.loss(&dn).unwrap()) / (2.0 * h);
                assert!((fd - g[j]).abs() <= 1e-6 * g[j].abs().max(1.0));
            }
            // nonnegative at the unconstrained minimizer
            let pinv = agg.h_bar.clone().pseudo_inverse(1e-12).unwrap();
            assert!(agg.c >= agg.b.dot(&(&pinv * &agg.b)) - 1e-9);
        }
    }

    #[test]
    fn merge_errors() {
        assert!(AggregatedQuadratic::merge(&[]).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_summary(&mut rng, 3, 7, 0);
        let b = random_summary(&mut rng, 2, 7, 1);
        let c = random_summary(&mut rng, 3, 8, 2);
        assert!(AggregatedQuadratic::merge(&[a.clone(), b]).is_err());
        assert!(AggregatedQuadratic::merge(&[a.clone(), c]).is_err());
        let agg = AggregatedQuadratic::merge(&[a]).unwrap();
        assert!(agg.loss(&DVector::zeros(2)).is_err());
    }

    #[test]
    fn weights() {
        let w = adaptive_weights(&DVector::from_vec(vec![2.0, -0.5]), 1.0).unwrap();
        assert_eq!(w.as_slice(), &[0.5, 2.0]);
        let w = adaptive_weights(&DVector::from_element(4, 1.0), 2.0).unwrap();
        assert!(w.iter().all(|&v| v == 1.0));
        let mut w = adaptive_weights(&DVector::from_vec(vec![0.0, 4.0]), 0.5).unwrap();
        assert!(w[0].is_infinite());
        assert_eq!(w[1], 0.5);
        assert!(adaptive_weights(&w, 0.0).is_err());
        exempt_from_penalty(&mut w, &[1]).unwrap();
        assert_eq!(w[1], 0.0);
        assert!(exempt_from_penalty(&mut w, &[2]).is_err());
    }
}
