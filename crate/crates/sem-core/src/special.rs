//! Numerically stable normal-distribution primitives.
//!
//! The mortality closed forms multiply enormous exponentials (`e^{-κx}` is
//! `e^{250}` at the default constants) by normal tail probabilities that
//! underflow long before the product does, so everything tail-related is
//! offered in log space.

use std::f64::consts::PI;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_74; // ln(sqrt(2*pi))

/// Standard normal CDF `Φ(z)`, evaluated through the complementary error
/// function.
pub fn norm_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// `ln Φ(z)`.
///
/// For `z < -8` the Mills-ratio asymptotic expansion is used so the result
/// stays finite and accurate far beyond the underflow point of `Φ` itself;
/// `exp(a + log_norm_cdf(z))` is then usable whenever the product is
/// representable.
pub fn log_norm_cdf(z: f64) -> f64 {
    if z < -8.0 {
        let t = -z;
        // Phi(-t) = phi(t)/t * (1 - 1/t^2 + 3/t^4 - 15/t^6 + ...);
        // truncate at the smallest term of the (divergent) series.
        let inv_t2 = 1.0 / (t * t);
        let mut term: f64 = 1.0;
        let mut sum: f64 = 1.0;
        let mut k = 0.0;
        loop {
            let next = -term * (2.0 * k + 1.0) * inv_t2;
            if next.abs() >= term.abs() || next.abs() < 1e-18 * sum.abs() {
                break;
            }
            sum += next;
            term = next;
            k += 1.0;
            if k > 60.0 {
                break;
            }
        }
        -0.5 * t * t - t.ln() - LN_SQRT_2PI + sum.ln()
    } else if z < 8.0 {
        norm_cdf(z).ln()
    } else {
        // ln(1 - Phi(-z)) without cancellation.
        (-norm_cdf(-z)).ln_1p()
    }
}

/// Standard normal quantile function (inverse of [`norm_cdf`]), accurate to
/// full double precision on `(0, 1)`.
///
/// Rational approximation of Wichura's algorithm AS 241 (PPND16).
pub fn norm_quantile(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "quantile requires p in (0,1), got {p}");
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        // Central region.
        const A: [f64; 8] = [
            3.387_132_872_796_366_608,
            1.331_416_678_917_843_774_5e2,
            1.971_590_950_306_551_442_7e3,
            1.373_169_376_550_946_112_5e4,
            4.592_195_393_154_987_145_7e4,
            6.726_577_092_700_870_085_3e4,
            3.343_057_558_358_812_810_5e4,
            2.509_080_928_730_122_672_7e3,
        ];
        const B: [f64; 8] = [
            1.0,
            4.231_333_070_160_091_125_2e1,
            6.871_870_074_920_579_083e2,
            5.394_196_021_424_751_107_7e3,
            2.121_379_430_158_659_586_7e4,
            3.930_789_580_009_271_061e4,
            2.872_908_573_572_194_267_4e4,
            5.226_495_278_852_854_561e3,
        ];
        let r = 0.180625 - q * q;
        return q * poly(&A, r) / poly(&B, r);
    }
    let r = if q < 0.0 { p } else { 1.0 - p };
    let r = (-r.ln()).sqrt();
    let z = if r <= 5.0 {
        const C: [f64; 8] = [
            1.423_437_110_749_683_577_34,
            4.630_337_846_156_545_295_9,
            5.769_497_221_460_691_405_5,
            3.647_848_324_763_204_605_04,
            1.270_458_252_452_368_382_58,
            2.417_807_251_774_506_117_7e-1,
            2.272_384_498_926_918_458_33e-2,
            7.745_450_142_783_414_076_4e-4,
        ];
        const D: [f64; 8] = [
            1.0,
            2.053_191_626_637_758_821_87,
            1.676_384_830_183_803_849_4,
            6.897_673_349_851_000_045_5e-1,
            1.481_039_764_274_800_745_9e-1,
            1.519_866_656_361_645_719_66e-2,
            5.475_938_084_995_344_946e-4,
            1.050_750_071_644_416_843_24e-9,
        ];
        poly(&C, r - 1.6) / poly(&D, r - 1.6)
    } else {
        const E: [f64; 8] = [
            6.657_904_643_501_103_777_2,
            5.463_784_911_164_114_369_9,
            1.784_826_539_917_291_335_8,
            2.965_605_718_285_048_912_3e-1,
            2.653_218_952_657_612_309_3e-2,
            1.242_660_947_388_078_438_6e-3,
            2.711_555_568_743_487_578_15e-5,
            2.010_334_399_292_288_132_65e-7,
        ];
        const F: [f64; 8] = [
            1.0,
            5.998_322_065_558_879_376_9e-1,
            1.369_298_809_227_358_053_1e-1,
            1.487_536_129_085_061_485_25e-2,
            7.868_691_311_456_132_591e-4,
            1.846_318_317_510_054_681_8e-5,
            1.421_511_758_316_445_888_7e-7,
            2.044_263_103_389_939_785_64e-15,
        ];
        poly(&E, r - 5.0) / poly(&F, r - 5.0)
    };
    if q < 0.0 {
        -z
    } else {
        z
    }
}

/// Standard normal density.
pub fn norm_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

fn poly(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn cdf_symmetry_and_limits() {
        assert_eq!(norm_cdf(0.0), 0.5);
        assert!((norm_cdf(40.0) - 1.0).abs() < 1e-14);
        assert!(norm_cdf(-40.0) >= 0.0);
        assert!(norm_cdf(-40.0) < 1e-300);
    }

    #[test]
    fn cdf_at_one_matches_reference() {
        // High-precision value of Phi(1).
        assert_abs_diff_eq!(norm_cdf(1.0), 0.841_344_746_068_542_9, epsilon = 1e-13);
    }

    #[test]
    fn cdf_monotone() {
        let mut prev = 0.0;
        for i in 0..=2000 {
            let z = -10.0 + i as f64 * 0.01;
            let v = norm_cdf(z);
            assert!(v >= prev, "not monotone at z={z}");
            prev = v;
        }
    }

    #[test]
    fn log_cdf_at_zero() {
        assert_abs_diff_eq!(log_norm_cdf(0.0), -0.693_147_180_559_945_3, epsilon = 1e-15);
    }

    #[test]
    fn log_cdf_deep_tail_matches_reference() {
        // ln Phi(-10) and ln Phi(-37), high-precision references.
        let v10 = log_norm_cdf(-10.0);
        let r10 = -53.231_285_150_512_47;
        assert!(((v10 - r10) / r10).abs() < 1e-10, "got {v10}");
        let v37 = log_norm_cdf(-37.0);
        let r37 = -689.030_585_576_890_6;
        assert!(((v37 - r37) / r37).abs() < 1e-10, "got {v37}");
        // Stays finite way past the underflow point of Phi.
        assert!(log_norm_cdf(-1e6).is_finite());
    }

    #[test]
    fn log_cdf_consistent_with_cdf() {
        for &z in &[-7.5, -3.0, -1.0, 0.3, 2.0, 5.0] {
            let direct = norm_cdf(z).ln();
            assert_abs_diff_eq!(log_norm_cdf(z), direct, epsilon = 1e-12 * direct.abs().max(1.0));
        }
    }

    #[test]
    fn quantile_round_trips() {
        for &p in &[1e-12, 1e-6, 0.025, 0.1, 0.5, 0.9, 0.975, 1.0 - 1e-9] {
            let z = norm_quantile(p);
            assert_abs_diff_eq!(norm_cdf(z), p, epsilon = 1e-12 * p.max(1e-3));
        }
        assert_abs_diff_eq!(norm_quantile(0.975), 1.959_963_984_540_054, epsilon = 1e-12);
        assert_eq!(norm_quantile(0.5), 0.0);
    }
}
