use std::f64::consts::PI;

use puruspe::{besselik, gamma};

use crate::error::{Error, Result};

/// An isotropic unit-variance correlation function `φ(h)` with a range
/// parameter `λ` and one shape parameter.
pub trait CorrelationFamily: Send + Sync {
    fn name(&self) -> &'static str;

    /// Name of the shape parameter in configs and output headers.
    fn shape_name(&self) -> &'static str;

    /// Open lower and upper bounds of the shape parameter; `upper_closed`
    /// reports whether the upper bound itself is legal.
    fn shape_bounds(&self) -> (f64, f64, bool);

    fn phi(&self, h: f64, lambda: f64, shape: f64) -> f64;

    /// `dφ/dh` for `h > 0`.
    fn dphi(&self, h: f64, lambda: f64, shape: f64) -> f64;

    /// Two-dimensional spectral density `f(ω)` at squared frequency `w2`
    /// (`φ(h) = ∫ f(ω) e^{iω·h} dω`), when it has a closed form.
    fn spectral_density(&self, w2: f64, lambda: f64, shape: f64) -> Option<f64>;

    fn check_shape(&self, shape: f64) -> Result<()> {
        let (lo, hi, closed) = self.shape_bounds();
        let ok = shape.is_finite() && shape > lo && (shape < hi || (closed && shape == hi));
        if ok {
            Ok(())
        } else {
            Err(Error::OutOfSupport(format!(
                "{} = {shape} outside ({lo}, {hi}{}",
                self.shape_name(),
                if closed { "]" } else { ")" }
            )))
        }
    }

    /// Map of the shape parameter onto the real line.
    fn shape_to_free(&self, shape: f64) -> f64 {
        let (lo, hi, _) = self.shape_bounds();
        if hi.is_finite() {
            let t = (shape - lo) / (hi - lo);
            (t / (1.0 - t)).ln()
        } else {
            (shape - lo).ln()
        }
    }

    fn shape_from_free(&self, z: f64) -> f64 {
        let (lo, hi, _) = self.shape_bounds();
        if hi.is_finite() {
            lo + (hi - lo) / (1.0 + (-z).exp())
        } else {
            lo + z.exp()
        }
    }

    /// `ln |d shape / dz|` of [`shape_from_free`](Self::shape_from_free),
    /// written in terms of the shape value.
    fn shape_log_jacobian(&self, shape: f64) -> f64 {
        let (lo, hi, _) = self.shape_bounds();
        if hi.is_finite() {
            ((shape - lo) * (hi - shape) / (hi - lo)).ln()
        } else {
            (shape - lo).ln()
        }
    }
}

/// `φ(h) = exp{-(h/λ)^α}`, `0 < α ≤ 2`.
pub struct PoweredExponential;

impl CorrelationFamily for PoweredExponential {
    fn name(&self) -> &'static str {
        "powexp"
    }

    fn shape_name(&self) -> &'static str {
        "alpha"
    }

    fn shape_bounds(&self) -> (f64, f64, bool) {
        (0.0, 2.0, true)
    }

    fn phi(&self, h: f64, lambda: f64, alpha: f64) -> f64 {
        (-(h / lambda).powf(alpha)).exp()
    }

    fn dphi(&self, h: f64, lambda: f64, alpha: f64) -> f64 {
        let x = h / lambda;
        -(alpha / lambda) * x.powf(alpha - 1.0) * (-x.powf(alpha)).exp()
    }

    fn spectral_density(&self, w2: f64, lambda: f64, alpha: f64) -> Option<f64> {
        let l2 = lambda * lambda;
        if alpha == 1.0 {
            Some(l2 / (2.0 * PI * (1.0 + l2 * w2).powf(1.5)))
        } else if alpha == 2.0 {
            Some(l2 / (4.0 * PI) * (-l2 * w2 / 4.0).exp())
        } else {
            None
        }
    }
}

/// `φ(h) = x^ν K_ν(x) / (2^{ν-1} Γ(ν))` with `x = h/λ`; `ν` capped at 50
/// where the Bessel evaluation stops being reliable.
pub struct Matern;

pub const MATERN_NU_MAX: f64 = 50.0;

// Beyond this argument I_ν(x), which besselik computes alongside K_ν,
// overflows; the correlation there is below 1e-200 anyway.
const BESSEL_X_MAX: f64 = 700.0;

// puruspe's ln_gamma carries ~1e-11 error; Γ itself is exact to roundoff for ν < 50.
fn ln_matern_norm(nu: f64) -> f64 {
    -((nu - 1.0) * std::f64::consts::LN_2 + gamma(nu).ln())
}

/// `x^ν K_ν(x) / (2^{ν-1}Γ(ν))`, falling back to the small-argument series
/// when `K_ν` overflows.
fn matern_unit(x: f64, nu: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x > BESSEL_X_MAX {
        return 0.0;
    }
    let (_, k, _, _) = besselik(nu, x);
    let v = (ln_matern_norm(nu) + nu * x.ln() + k.ln()).exp();
    if v.is_finite() && k.is_finite() && k > 0.0 {
        v.min(1.0)
    } else if nu > 1.0 {
        (1.0 - x * x / (4.0 * (nu - 1.0))).max(0.0)
    } else {
        1.0
    }
}

impl CorrelationFamily for Matern {
    fn name(&self) -> &'static str {
        "matern"
    }

    fn shape_name(&self) -> &'static str {
        "nu"
    }

    fn shape_bounds(&self) -> (f64, f64, bool) {
        (0.0, MATERN_NU_MAX, false)
    }

    fn phi(&self, h: f64, lambda: f64, nu: f64) -> f64 {
        matern_unit(h / lambda, nu)
    }

    fn dphi(&self, h: f64, lambda: f64, nu: f64) -> f64 {
        // d/dx [x^ν K_ν(x)] = -x^ν K_{ν-1}(x), and K_{ν-1} = K_{|ν-1|}.
        let x = h / lambda;
        if x <= 0.0 || x > BESSEL_X_MAX {
            return 0.0;
        }
        let (_, k, _, _) = besselik((nu - 1.0).abs(), x);
        let v = (ln_matern_norm(nu) + nu * x.ln() + k.ln()).exp();
        if v.is_finite() && k.is_finite() && k > 0.0 {
            -v / lambda
        } else if nu > 1.0 {
            -x / (2.0 * (nu - 1.0) * lambda)
        } else {
            f64::NEG_INFINITY
        }
    }

    fn spectral_density(&self, w2: f64, lambda: f64, nu: f64) -> Option<f64> {
        let l2 = lambda * lambda;
        Some(nu * l2 / (PI * (1.0 + l2 * w2).powf(nu + 1.0)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn powexp_values() {
        let f = PoweredExponential;
        assert_eq!(f.phi(0.0, 0.2, 1.0), 1.0);
        assert!((f.phi(0.2, 0.2, 1.0) - (-1.0f64).exp()).abs() < 1e-15);
        assert!(f.phi(1e3, 0.2, 1.5) < 1e-300);
    }

    #[test]
    fn matern_closed_forms() {
        let f = Matern;
        for &h in &[0.01, 0.1, 0.5, 1.0, 3.0, 10.0] {
            let x: f64 = h / 0.3;
            assert!((f.phi(h, 0.3, 0.5) - (-x).exp()).abs() < 1e-12, "nu=0.5 at {h}");
            let k32 = (1.0 + x) * (-x).exp();
            assert!((f.phi(h, 0.3, 1.5) - k32).abs() < 1e-12, "nu=1.5 at {h}");
        }
        assert_eq!(f.phi(0.0, 0.3, 2.5), 1.0);
        assert_eq!(f.phi(1e6, 0.3, 2.5), 0.0);
        // Small argument with large ν takes the series branch.
        let v = f.phi(1e-8, 1.0, 45.0);
        assert!((v - 1.0).abs() < 1e-12);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let fams: [(&dyn CorrelationFamily, f64); 4] = [
            (&PoweredExponential, 1.0),
            (&PoweredExponential, 1.7),
            (&Matern, 0.8),
            (&Matern, 2.5),
        ];
        for (f, shape) in fams {
            for &h in &[0.05, 0.3, 1.0] {
                let e = 1e-6;
                let fd = (f.phi(h + e, 0.25, shape) - f.phi(h - e, 0.25, shape)) / (2.0 * e);
                let d = f.dphi(h, 0.25, shape);
                assert!((fd - d).abs() < 1e-6 * (1.0 + d.abs()), "{} {shape} {h}", f.name());
            }
        }
    }

    #[test]
    fn shape_transforms_round_trip() {
        let p = PoweredExponential;
        for a in [0.1, 1.0, 1.9] {
            assert!((p.shape_from_free(p.shape_to_free(a)) - a).abs() < 1e-12);
        }
        let m = Matern;
        for nu in [0.3, 2.5, 40.0] {
            assert!((m.shape_from_free(m.shape_to_free(nu)) - nu).abs() < 1e-9);
        }
        assert!(p.check_shape(2.0).is_ok());
        assert!(p.check_shape(2.1).is_err());
        assert!(p.check_shape(0.0).is_err());
        assert!(m.check_shape(50.0).is_err());
    }

    #[test]
    fn shape_jacobian_matches_finite_difference() {
        let fams: [&dyn CorrelationFamily; 2] = [&PoweredExponential, &Matern];
        for f in fams {
            for shape in [0.4, 1.0, 1.7] {
                let z = f.shape_to_free(shape);
                let e = 1e-6;
                let d = (f.shape_from_free(z + e) - f.shape_from_free(z - e)) / (2.0 * e);
                assert!((d.ln() - f.shape_log_jacobian(shape)).abs() < 1e-7);
            }
        }
    }
}
