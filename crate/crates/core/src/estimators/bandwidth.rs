use statrs::distribution::{Continuous, ContinuousCDF, Normal};

/// Bandwidth limits: `τ ± d` is kept inside `[TAU_FLOOR, TAU_CEIL]`.
const TAU_FLOOR: f64 = 0.01;
const TAU_CEIL: f64 = 0.99;

/// Hall–Sheather bandwidth for difference-quotient sparsity estimation,
///
/// `d = T^{-1/3} z_{1-α/2}^{2/3} [1.5 φ(Φ⁻¹(τ))² / (2Φ⁻¹(τ)² + 1)]^{1/3}`,
///
/// clipped so that `τ − d ≥ 0.01` and `τ + d ≤ 0.99`. The result is zero when
/// `τ` itself lies outside that range.
pub fn hall_sheather_bandwidth(periods: usize, tau: f64, alpha: f64) -> f64 {
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let x0 = normal.inverse_cdf(tau);
    let z = normal.inverse_cdf(1.0 - alpha / 2.0);
    let dens = normal.pdf(x0);
    let raw = (periods as f64).powf(-1.0 / 3.0)
        * z.powf(2.0 / 3.0)
        * (1.5 * dens * dens / (2.0 * x0 * x0 + 1.0)).powf(1.0 / 3.0);
    raw.min(tau - TAU_FLOOR).min(TAU_CEIL - tau).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_bandwidth_at_hundred() {
        // T^{-1/3} · 1.959964^{2/3} · (1.5 φ(0)²)^{1/3}
        let phi0 = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
        let expected = 100f64.powf(-1.0 / 3.0)
            * 1.959_963_984_540_054f64.powf(2.0 / 3.0)
            * (1.5 * phi0 * phi0).powf(1.0 / 3.0);
        let d = hall_sheather_bandwidth(100, 0.5, 0.05);
        assert!((d - expected).abs() < 1e-12);
        assert!((d - 0.20930).abs() < 1e-4);
    }

    #[test]
    fn shrinks_with_sample_size() {
        let mut prev = f64::INFINITY;
        for t in [10, 50, 100, 1_000, 10_000, 1_000_000] {
            let d = hall_sheather_bandwidth(t, 0.5, 0.05);
            assert!(d < prev);
            prev = d;
        }
        assert!(prev < 0.01);
    }

    #[test]
    fn clipped_near_the_boundary() {
        let d = hall_sheather_bandwidth(20, 0.99, 0.05);
        assert!(0.99 + d <= 0.99);
        let d = hall_sheather_bandwidth(20, 0.97, 0.05);
        assert!(d > 0.0 && 0.97 + d <= 0.99 + 1e-15);
        let d = hall_sheather_bandwidth(20, 0.03, 0.05);
        assert!(d > 0.0 && 0.03 - d >= 0.01 - 1e-15);
    }
}
