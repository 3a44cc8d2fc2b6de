//! Variance schedule of the forward noising process and its derived tables.
//!
//! Indexing: noise levels are addressed as `n ∈ 1..=T` and `n = 0` denotes
//! the clean image. The per-step tables (`betas`, `alphas`, `beta_tildes`)
//! are stored 0-based, so step `n` lives at index `n - 1`; the cumulative
//! table `alpha_bars` has `T + 1` entries and is indexed by `n` directly with
//! `alpha_bars[0] = 1`.

use crate::error::{Error, Result};

pub const DEFAULT_T_MAX: usize = 1000;
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 0.02;

/// Immutable noise schedule. All math is done in `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    t_max: usize,
    beta_start: f64,
    beta_end: f64,
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
    beta_tildes: Vec<f64>,
}

/// Coefficients of the Gaussian posterior `q(x_{n-1} | x_n, x_0)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Posterior {
    /// Weight on `x_0` in the posterior mean.
    pub c0: f64,
    /// Weight on `x_n` in the posterior mean.
    pub cn: f64,
    pub beta_tilde: f64,
}

impl NoiseSchedule {
    /// Betas linearly spaced from `beta_start` to `beta_end` inclusive.
    pub fn linear(t_max: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if t_max == 0 {
            return Err(Error::InvalidSchedule("t_max must be at least 1".into()));
        }
        if !beta_start.is_finite() || !beta_end.is_finite() {
            return Err(Error::InvalidSchedule("beta endpoints must be finite".into()));
        }
        if !(beta_start > 0.0 && beta_end < 1.0) {
            return Err(Error::InvalidSchedule(format!(
                "beta endpoints must satisfy 0 < beta_start and beta_end < 1, got {beta_start}, {beta_end}"
            )));
        }
        if beta_start > beta_end {
            return Err(Error::InvalidSchedule(format!("beta_start {beta_start} exceeds beta_end {beta_end}")));
        }
        let betas: Vec<f64> = if t_max == 1 {
            vec![beta_start]
        } else {
            let span = beta_end - beta_start;
            (0..t_max).map(|i| beta_start + span * (i as f64) / ((t_max - 1) as f64)).collect()
        };
        Self::from_betas(betas, beta_start, beta_end)
    }

    /// The default 1000-step linear schedule.
    pub fn default_linear() -> Self {
        Self::linear(DEFAULT_T_MAX, DEFAULT_BETA_START, DEFAULT_BETA_END)
            .expect("default schedule parameters are valid")
    }

    fn from_betas(betas: Vec<f64>, beta_start: f64, beta_end: f64) -> Result<Self> {
        let t_max = betas.len();
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let alpha_bars = cumulative_product(&alphas);
        let beta_tildes: Vec<f64> =
            (1..=t_max).map(|n| (1.0 - alpha_bars[n - 1]) / (1.0 - alpha_bars[n]) * betas[n - 1]).collect();
        let schedule = Self { t_max, beta_start, beta_end, betas, alphas, alpha_bars, beta_tildes };
        schedule.validate()?;
        Ok(schedule)
    }

    fn validate(&self) -> Result<()> {
        for (i, &b) in self.betas.iter().enumerate() {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::InvalidSchedule(format!("beta_{} = {b} outside (0, 1)", i + 1)));
            }
        }
        for n in 1..=self.t_max {
            if !(self.alpha_bars[n] < self.alpha_bars[n - 1] && self.alpha_bars[n] > 0.0) {
                return Err(Error::InvalidSchedule(format!("alpha_bar not strictly decreasing at {n}")));
            }
            let bt = self.beta_tildes[n - 1];
            // beta_tilde_1 is exactly 0 because alpha_bar_0 = 1.
            if !(bt >= 0.0 && bt <= self.betas[n - 1]) || (n > 1 && bt <= 0.0) {
                return Err(Error::InvalidSchedule(format!("beta_tilde_{n} = {bt} out of range")));
            }
        }
        Ok(())
    }

    pub fn t_max(&self) -> usize {
        self.t_max
    }

    pub fn beta_start(&self) -> f64 {
        self.beta_start
    }

    pub fn beta_end(&self) -> f64 {
        self.beta_end
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    /// `T + 1` entries; index 0 is the clean-image convention `1`.
    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    pub fn beta_tildes(&self) -> &[f64] {
        &self.beta_tildes
    }

    pub fn check_step(&self, n: usize) -> Result<()> {
        if n == 0 || n > self.t_max {
            return Err(Error::StepOutOfRange { n, lo: 1, hi: self.t_max });
        }
        Ok(())
    }

    pub fn check_level(&self, n: usize) -> Result<()> {
        if n > self.t_max {
            return Err(Error::StepOutOfRange { n, lo: 0, hi: self.t_max });
        }
        Ok(())
    }

    /// `β_n` for `n ∈ 1..=T`.
    pub fn beta(&self, n: usize) -> f64 {
        self.betas[n - 1]
    }

    /// `α_n` for `n ∈ 1..=T`.
    pub fn alpha(&self, n: usize) -> f64 {
        self.alphas[n - 1]
    }

    /// `ᾱ_n` for `n ∈ 0..=T`.
    pub fn alpha_bar(&self, n: usize) -> f64 {
        self.alpha_bars[n]
    }

    /// `β̃_n` for `n ∈ 1..=T`.
    pub fn beta_tilde(&self, n: usize) -> f64 {
        self.beta_tildes[n - 1]
    }

    pub fn posterior(&self, n: usize) -> Result<Posterior> {
        self.check_step(n)?;
        let ab = self.alpha_bar(n);
        let ab_prev = self.alpha_bar(n - 1);
        Ok(Posterior {
            c0: ab_prev.sqrt() * self.beta(n) / (1.0 - ab),
            cn: self.alpha(n).sqrt() * (1.0 - ab_prev) / (1.0 - ab),
            beta_tilde: self.beta_tilde(n),
        })
    }
}

/// `out[0] = 1`, `out[n] = out[n - 1] * alphas[n - 1]`.
pub fn cumulative_product(alphas: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(alphas.len() + 1);
    let mut acc = 1.0;
    out.push(acc);
    for &a in alphas {
        acc *= a;
        out.push(acc);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1e-300)
    }

    #[test]
    fn single_step_schedule_has_zero_beta_tilde() {
        let s = NoiseSchedule::linear(1, 0.1, 0.1).unwrap();
        assert_eq!(s.betas(), &[0.1]);
        assert!(close(s.alpha_bar(1), 0.9, 1e-15));
        assert_eq!(s.beta_tilde(1), 0.0);
    }

    #[test]
    fn two_step_schedule_tables() {
        let s = NoiseSchedule::linear(2, 0.1, 0.3).unwrap();
        assert_eq!(s.betas(), &[0.1, 0.3]);
        assert!(close(s.alpha_bar(1), 0.9, 1e-15));
        assert!(close(s.alpha_bar(2), 0.63, 1e-15));
        // ((1 - 0.9) / (1 - 0.63)) * 0.3
        assert!(close(s.beta_tilde(2), 0.1 / 0.37 * 0.3, 1e-14));
        assert!(close(s.beta_tilde(2), 0.081081081081, 1e-10));
    }

    #[test]
    fn default_schedule_decays_below_one_per_mille() {
        let s = NoiseSchedule::default_linear();
        assert_eq!(s.t_max(), 1000);
        let last = s.alpha_bar(1000);
        assert!(last > 0.0 && last < 1e-3, "alpha_bar_T = {last}");
        assert!(s.alpha_bars().windows(2).all(|w| w[1] < w[0]));
        assert_eq!(s.betas()[0], 1e-4);
        assert!(close(s.betas()[999], 0.02, 1e-15));
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(NoiseSchedule::linear(0, 1e-4, 0.02).is_err());
        assert!(NoiseSchedule::linear(10, 0.0, 0.02).is_err());
        assert!(NoiseSchedule::linear(10, 1e-4, 1.0).is_err());
        assert!(NoiseSchedule::linear(10, 0.03, 0.02).is_err());
        assert!(NoiseSchedule::linear(10, f64::NAN, 0.02).is_err());
        assert!(NoiseSchedule::linear(10, 1e-4, f64::INFINITY).is_err());
    }

    #[test]
    fn posterior_coefficients_hand_values() {
        // alpha_bar_{n-1} = 0.9, alpha_n = 0.9.
        let s = NoiseSchedule::linear(2, 0.1, 0.1).unwrap();
        let p = s.posterior(2).unwrap();
        let want = 0.9f64.sqrt() * 0.1 / 0.19;
        assert!(close(p.c0, want, 1e-12));
        assert!(close(p.c0, 0.499306, 5e-6));
        assert!(close(p.cn, want, 1e-12));
        assert!(close(p.beta_tilde, 0.1 / 0.19 * 0.1, 1e-12));
        assert!(close(p.beta_tilde, 0.0526316, 1e-6));
        assert!(close(p.c0 + p.cn, 0.998612, 5e-6));
    }

    #[test]
    fn posterior_at_first_step_ignores_x_n() {
        let s = NoiseSchedule::default_linear();
        let p = s.posterior(1).unwrap();
        assert_eq!(p.cn, 0.0);
        assert!(close(p.c0, 1.0, 1e-12));
        assert!(s.posterior(0).is_err());
        assert!(s.posterior(1001).is_err());
    }

    #[test]
    fn rebuilt_cumulative_product_is_bitwise_equal() {
        let s = NoiseSchedule::default_linear();
        let alphas: Vec<f64> = s.betas().iter().map(|b| 1.0 - b).collect();
        assert_eq!(cumulative_product(&alphas), s.alpha_bars());
        assert_eq!(s.alphas(), alphas.as_slice());
    }

    #[test]
    fn builds_are_bit_identical() {
        assert_eq!(NoiseSchedule::default_linear(), NoiseSchedule::default_linear());
    }

    proptest! {
        #[test]
        fn invariants_hold(t_max in 1usize..400, a in 1e-5f64..0.05, span in 0.0f64..0.3) {
            let s = NoiseSchedule::linear(t_max, a, (a + span).min(0.5)).unwrap();
            prop_assert_eq!(s.alpha_bar(0), 1.0);
            for n in 1..=t_max {
                prop_assert_eq!(s.alpha(n), 1.0 - s.beta(n));
                let ratio = s.alpha_bar(n) / (s.alpha_bar(n - 1) * s.alpha(n));
                prop_assert!((ratio - 1.0).abs() < 1e-12);
                prop_assert!(s.beta_tilde(n) <= s.beta(n));
                prop_assert!(n == 1 || s.beta_tilde(n) > 0.0);
            }
        }

        #[test]
        fn posterior_mean_matches_epsilon_form(n in 1usize..=1000, x0 in -3.0f64..3.0, eps in -3.0f64..3.0) {
            let s = NoiseSchedule::default_linear();
            let p = s.posterior(n).unwrap();
            let ab = s.alpha_bar(n);
            let xn = ab.sqrt() * x0 + (1.0 - ab).sqrt() * eps;
            let direct = p.c0 * x0 + p.cn * xn;
            let eps_form = (xn - s.beta(n) / (1.0 - ab).sqrt() * eps) / s.alpha(n).sqrt();
            let scale = direct.abs().max(eps_form.abs()).max(x0.abs() * 1e-3).max(1e-12);
            prop_assert!((direct - eps_form).abs() / scale < 1e-10,
                "n={} direct={} eps_form={}", n, direct, eps_form);
        }
    }
}
