use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

/// Cyclical annealing `γ(t) = (mod(t, T_c) / T_c)^p` for annealed SVGD.
///
/// The factor multiplies the attractive force only. The final step of the run
/// always uses `γ = 1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnealSchedule {
    pub cycle_len: usize,
    pub power: f64,
    pub total_steps: usize,
}

impl AnnealSchedule {
    /// Four cycles over the run with a quadratic ramp.
    pub fn for_run(total_steps: usize) -> Self {
        AnnealSchedule {
            cycle_len: (total_steps / 4).max(1),
            power: 2.0,
            total_steps,
        }
    }
}

pub fn asvgd_anneal<T: Scalar>(step: u64, schedule: &AnnealSchedule) -> T {
    if step + 1 >= schedule.total_steps as u64 {
        return T::one();
    }
    let tc = schedule.cycle_len.max(1) as u64;
    let frac = T::of((step % tc) as f64) / T::of(tc as f64);
    frac.powf(T::of(schedule.power))
}

/// Moving-average windows for the force-norm stopping rule.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvergenceWindows {
    pub slow: usize,
    pub fast: usize,
}

impl Default for ConvergenceWindows {
    fn default() -> Self {
        ConvergenceWindows { slow: 350, fast: 35 }
    }
}

/// Stop once the mean of the last `fast` norms exceeds the mean of the last
/// `slow` norms. Needs at least `slow` recorded steps.
pub fn check_convergence<T: Scalar>(norms: &[T], windows: ConvergenceWindows) -> bool {
    let n = norms.len();
    if windows.fast == 0 || windows.slow == 0 || n < windows.slow || n < windows.fast {
        return false;
    }
    let mean = |xs: &[T]| xs.iter().copied().sum::<T>() / T::of_usize(xs.len());
    mean(&norms[n - windows.fast..]) > mean(&norms[n - windows.slow..])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn anneal_examples() {
        let s = AnnealSchedule {
            cycle_len: 100,
            power: 2.0,
            total_steps: 400,
        };
        assert_eq!(asvgd_anneal::<f64>(0, &s), 0.0);
        assert_eq!(asvgd_anneal::<f64>(50, &s), 0.25);
        assert_eq!(asvgd_anneal::<f64>(100, &s), 0.0);
        let end_of_cycle: f64 = asvgd_anneal(99, &s);
        assert!(end_of_cycle > 0.98 && end_of_cycle < 1.0);
        assert_eq!(asvgd_anneal::<f64>(399, &s), 1.0);
        for t in 0..400 {
            let g: f64 = asvgd_anneal(t, &s);
            assert!((0.0..=1.0).contains(&g));
        }
        assert_eq!(AnnealSchedule::for_run(60_000).cycle_len, 15_000);
    }

    #[test]
    fn convergence_examples() {
        let w = ConvergenceWindows::default();
        let decreasing: Vec<f64> = (0..1000).map(|i| 1000.0 - i as f64).collect();
        for n in 0..=1000 {
            assert!(!check_convergence(&decreasing[..n], w));
        }
        assert!(!check_convergence(&vec![2.0_f64; 800], w));
        let mut jump: Vec<f64> = (0..400).map(|i| 10.0 - i as f64 * 0.01).collect();
        let last = *jump.last().unwrap();
        jump.extend(std::iter::repeat_n(last * 10.0, 35));
        assert!(check_convergence(&jump, w));
        // too short
        assert!(!check_convergence(&jump[..300], w));
    }
}
