//! Reproducing kernels on particle space.
//!
//! Only the RBF kernel `k(x, y) = exp(-‖x - y‖² / h)` is provided, parameterized
//! by the squared length scale `h`. The bandwidth is normally re-selected every
//! iteration with [`median_bandwidth`].

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::scalar::Scalar;

/// Smallest bandwidth handed out by the median heuristic.
pub const BANDWIDTH_FLOOR: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Rbf,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "policy", content = "value")]
pub enum BandwidthPolicy {
    /// `med² / max(ln m, 1)` recomputed from the current ensemble.
    #[default]
    Median,
    Fixed(f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Kernel<T> {
    bandwidth: T,
    kind: KernelKind,
}

impl<T: Scalar> Kernel<T> {
    pub fn rbf(bandwidth: T) -> Result<Self> {
        if !(bandwidth > T::zero()) || !bandwidth.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "kernel bandwidth must be positive and finite, got {bandwidth}"
            )));
        }
        Ok(Kernel {
            bandwidth,
            kind: KernelKind::Rbf,
        })
    }

    /// Kernel for `points` under the given policy.
    pub fn from_policy(policy: BandwidthPolicy, points: &[Vec<T>]) -> Result<Self> {
        match policy {
            BandwidthPolicy::Median => Kernel::rbf(median_bandwidth(points)),
            BandwidthPolicy::Fixed(h) => Kernel::rbf(T::of(h)),
        }
    }

    pub fn bandwidth(&self) -> T {
        self.bandwidth
    }

    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    pub fn eval(&self, x: &[T], y: &[T]) -> Result<T> {
        check_dim(x.len(), y.len())?;
        Ok(self.eval_unchecked(x, y))
    }

    pub fn grad_first(&self, x: &[T], y: &[T]) -> Result<Vec<T>> {
        check_dim(x.len(), y.len())?;
        let mut out = vec![T::zero(); x.len()];
        self.add_grad_first(x, y, T::one(), &mut out);
        Ok(out)
    }

    #[inline]
    pub(crate) fn eval_unchecked(&self, x: &[T], y: &[T]) -> T {
        (-squared_distance(x, y) / self.bandwidth).exp()
    }

    /// `out += scale · ∇₁k(x, y)` where `∇₁k(x, y) = -(2/h)(x - y) k(x, y)`.
    #[inline]
    pub(crate) fn add_grad_first(&self, x: &[T], y: &[T], scale: T, out: &mut [T]) {
        let k = self.eval_unchecked(x, y);
        let c = -T::of(2.0) / self.bandwidth * k * scale;
        for ((o, &xi), &yi) in out.iter_mut().zip(x).zip(y) {
            *o = *o + c * (xi - yi);
        }
    }
}

#[inline]
pub(crate) fn squared_distance<T: Scalar>(x: &[T], y: &[T]) -> T {
    x.iter().zip(y).fold(T::zero(), |acc, (&a, &b)| acc + (a - b) * (a - b))
}

/// Median heuristic: `med² / max(ln m, 1)` over all pairwise Euclidean distances.
///
/// A single particle has no pairs and gets `h = 1`; coincident ensembles fall
/// back to [`BANDWIDTH_FLOOR`].
pub fn median_bandwidth<T: Scalar>(points: &[Vec<T>]) -> T {
    let m = points.len();
    if m < 2 {
        return T::one();
    }
    let mut dists = Vec::with_capacity(m * (m - 1) / 2);
    for i in 0..m {
        for j in (i + 1)..m {
            dists.push(squared_distance(&points[i], &points[j]).sqrt());
        }
    }
    dists.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let n = dists.len();
    let med = if n % 2 == 1 {
        dists[n / 2]
    } else {
        (dists[n / 2 - 1] + dists[n / 2]) / T::of(2.0)
    };
    let denom = T::of_usize(m).ln().max(T::one());
    let h = med * med / denom;
    if h > T::of(BANDWIDTH_FLOOR) && h.is_finite() {
        h
    } else {
        T::of(BANDWIDTH_FLOOR)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn eval_examples() {
        let k = Kernel::rbf(1.0_f64).unwrap();
        assert_eq!(k.eval(&[0.3, -2.0], &[0.3, -2.0]).unwrap(), 1.0);
        assert!((k.eval(&[0.0], &[1.0]).unwrap() - 0.367879441171).abs() < 1e-12);
        let k2 = Kernel::rbf(2.0_f64).unwrap();
        assert!((k2.eval(&[0.0, 0.0], &[1.0, 1.0]).unwrap() - (-1f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(Kernel::rbf(0.0_f64), Err(Error::InvalidConfig(_))));
        assert!(Kernel::rbf(-1.0_f64).is_err());
        let k = Kernel::rbf(1.0_f64).unwrap();
        assert!(matches!(
            k.eval(&[0.0], &[0.0, 1.0]),
            Err(Error::DimensionMismatch { expected: 1, got: 2 })
        ));
        assert!(k.grad_first(&[0.0, 1.0], &[0.0]).is_err());
    }

    #[test]
    fn grad_examples() {
        let k = Kernel::rbf(1.0_f64).unwrap();
        assert_eq!(k.grad_first(&[0.7, 0.1], &[0.7, 0.1]).unwrap(), vec![0.0, 0.0]);
        let g = k.grad_first(&[1.0], &[0.0]).unwrap();
        assert!((g[0] + 2.0 * (-1f64).exp()).abs() < 1e-15);
        assert!((g[0] + 0.735759).abs() < 1e-6);
    }

    #[test]
    fn median_examples() {
        let pts = vec![vec![0.0_f64], vec![1.0], vec![3.0]];
        let h = median_bandwidth(&pts);
        assert!((h - 4.0 / 3f64.ln()).abs() < 1e-12);
        assert!((h - 3.6410).abs() < 1e-4);
        assert_eq!(median_bandwidth(&[vec![2.0_f64, 1.0]]), 1.0);
        assert_eq!(median_bandwidth(&[vec![2.0_f64], vec![2.0]]), 1e-8);
        // m = 2: ln 2 < 1 so h = med²
        assert_eq!(median_bandwidth(&[vec![0.0_f64], vec![3.0]]), 9.0);
    }

    #[test]
    fn works_in_f32() {
        let k = Kernel::rbf(1.0_f32).unwrap();
        assert!((k.eval(&[0.0], &[1.0]).unwrap() - 0.36787944).abs() < 1e-6);
    }

    fn fd_check(x: &[f64], y: &[f64], h: f64) {
        let k = Kernel::rbf(h).unwrap();
        let g = k.grad_first(x, y).unwrap();
        let step = 1e-5;
        for i in 0..x.len() {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[i] += step;
            xm[i] -= step;
            let fd = (k.eval(&xp, y).unwrap() - k.eval(&xm, y).unwrap()) / (2.0 * step);
            let scale = fd.abs().max(g[i].abs()).max(1e-3);
            assert!((fd - g[i]).abs() / scale < 1e-6, "coord {i}: fd {fd} vs {}", g[i]);
        }
    }

    proptest! {
        #[test]
        fn symmetric_and_unit_diagonal(
            x in prop::collection::vec(-3.0..3.0f64, 5),
            y in prop::collection::vec(-3.0..3.0f64, 5),
            h in 0.1..10.0f64,
        ) {
            let k = Kernel::rbf(h).unwrap();
            prop_assert_eq!(k.eval(&x, &y).unwrap(), k.eval(&y, &x).unwrap());
            prop_assert_eq!(k.eval(&x, &x).unwrap(), 1.0);
            prop_assert!(k.grad_first(&x, &x).unwrap().iter().all(|&v| v == 0.0));
            let a = k.grad_first(&x, &y).unwrap();
            let b = k.grad_first(&y, &x).unwrap();
            for (p, q) in a.iter().zip(&b) {
                prop_assert!((p + q).abs() <= 1e-15);
            }
        }

        #[test]
        fn grad_matches_finite_differences_d3(
            x in prop::collection::vec(-1.5..1.5f64, 3),
            y in prop::collection::vec(-1.5..1.5f64, 3),
        ) {
            fd_check(&x, &y, 3.0);
        }

        #[test]
        fn median_permutation_invariant(
            mut pts in prop::collection::vec(prop::collection::vec(-5.0..5.0f64, 2), 2..12),
            rot in 0usize..12,
        ) {
            let h = median_bandwidth(&pts);
            let r = rot % pts.len();
            pts.rotate_left(r);
            pts.reverse();
            prop_assert_eq!(h, median_bandwidth(&pts));
        }
    }
}
