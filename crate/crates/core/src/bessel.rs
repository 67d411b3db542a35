//! Modified Bessel function of the second kind for real order and positive
//! argument, and the variance coefficient of tempered fractional Brownian motion.

use std::f64::consts::{FRAC_PI_2, PI};

use statrs::function::gamma::gamma;

use crate::error::{domain, Error, Result};
use crate::quadrature::integrate;

/// Largest order accepted by [`bessel_k`].
pub const MAX_ORDER: f64 = 4.0;

/// Integration stops where the integrand falls below this fraction of its peak.
const TRUNCATION_LOG: f64 = -41.446_531_673_892_82; // ln(1e-18)

/// Below this value of λt the variance uses the power series of z^H K_H(z).
const SERIES_CUTOFF: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BesselMethod {
    Quadrature,
    ClosedForm,
}

#[derive(Debug, Clone, Copy)]
pub struct BesselEval {
    pub order: f64,
    pub argument: f64,
    pub value: f64,
    pub method: BesselMethod,
}

impl BesselEval {
    pub fn new(order: f64, argument: f64, method: BesselMethod) -> Result<Self> {
        let value = match method {
            BesselMethod::Quadrature => bessel_k(order, argument)?,
            BesselMethod::ClosedForm => bessel_k_closed_form(order, argument)?.ok_or_else(|| {
                Error::Domain(format!("no closed form for order {order}"))
            })?,
        };
        Ok(Self { order, argument, value, method })
    }
}

fn check_argument(v: f64, z: f64) -> Result<()> {
    if !(z > 0.0) || !z.is_finite() {
        return domain(format!("Bessel K needs a positive finite argument, got {z}"));
    }
    if !v.is_finite() || v.abs() > MAX_ORDER {
        return domain(format!("Bessel K order {v} outside [-{MAX_ORDER}, {MAX_ORDER}]"));
    }
    Ok(())
}

// ln cosh(y) without overflow
fn ln_cosh(y: f64) -> f64 {
    let a = y.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

/// K_v(z) from the integral representation, integrated in the original variable.
pub fn bessel_k(v: f64, z: f64) -> Result<f64> {
    check_argument(v, z)?;
    let v = v.abs();
    // scaled log-integrand: e^{z} is factored out so the peak stays moderate
    let log_f = |x: f64| -z * ((x.cosh() - 1.0).max(0.0)) + ln_cosh(v * x);

    let step = 0.0625;
    let mut peak_x = 0.0;
    let mut peak = log_f(0.0);
    let mut x = 0.0;
    loop {
        x += step;
        let lf = log_f(x);
        if lf > peak {
            peak = lf;
            peak_x = x;
        } else if lf < peak + TRUNCATION_LOG {
            break;
        }
        if x > 200.0 {
            return Err(Error::Numeric(format!(
                "Bessel K({v}, {z}): integrand did not decay by x = 200"
            )));
        }
    }
    let upper = x;
    let f = |x: f64| (log_f(x) - peak).exp();

    let mut total = 0.0;
    let mut breakpoints = vec![0.0];
    if peak_x > 0.0 {
        breakpoints.push(peak_x);
    }
    breakpoints.push(upper);
    for w in breakpoints.windows(2) {
        let r = integrate(f, w[0], w[1], 0.0, 1e-15, 2000).map_err(|e| {
            Error::Numeric(format!("Bessel K({v}, {z}) on [{}, {}]: {e}", w[0], w[1]))
        })?;
        total += r.value;
    }
    let value = total * (peak - z).exp();
    if !(value > 0.0) || !value.is_finite() {
        return Err(Error::Numeric(format!("Bessel K({v}, {z}) evaluated to {value}")));
    }
    Ok(value)
}

fn half_integer_index(v: f64) -> Option<usize> {
    let twice = 2.0 * v.abs();
    let r = twice.round();
    if (twice - r).abs() < 1e-12 && (r as i64) % 2 == 1 {
        Some((r as usize - 1) / 2)
    } else {
        None
    }
}

/// Elementary closed form of K_{n+1/2}; `None` when the order is not a half integer.
pub fn bessel_k_closed_form(v: f64, z: f64) -> Result<Option<f64>> {
    if !(z > 0.0) || !z.is_finite() {
        return domain(format!("Bessel K needs a positive finite argument, got {z}"));
    }
    let Some(n) = half_integer_index(v) else {
        return Ok(None);
    };
    let mut prev = (FRAC_PI_2 / z).sqrt() * (-z).exp();
    if n == 0 {
        return Ok(Some(prev));
    }
    let mut cur = prev * (1.0 + 1.0 / z);
    let mut order = 1.5;
    for _ in 1..n {
        let next = prev + 2.0 * order / z * cur;
        prev = cur;
        cur = next;
        order += 1.0;
    }
    Ok(Some(cur))
}

/// |central difference of z^v K_v at z + z^v K_{v-1}(z)|.
pub fn bessel_k_derivative_identity_residual(v: f64, z: f64, h: f64) -> Result<f64> {
    if !(h > 0.0) || !(z > h) {
        return domain(format!("derivative residual needs z > h > 0, got z = {z}, h = {h}"));
    }
    let g = |x: f64| -> Result<f64> { Ok(x.powf(v) * bessel_k(v, x)?) };
    let diff = (g(z + h)? - g(z - h)?) / (2.0 * h);
    let rhs = -z.powf(v) * bessel_k(v - 1.0, z)?;
    Ok((diff - rhs).abs())
}

/// |K_{v-1}(z) - K_{v+1}(z) + (2v/z) K_v(z)| / K_{v+1}(z).
pub fn bessel_k_recurrence_residual(v: f64, z: f64) -> Result<f64> {
    let lower = bessel_k(v - 1.0, z)?;
    let upper = bessel_k(v + 1.0, z)?;
    let mid = bessel_k(v, z)?;
    Ok((lower - upper + 2.0 * v / z * mid).abs() / upper)
}

/// Upper bound for K_v(x) valid for v in (1/2, 3/2).
pub fn k_bound_upper_range(v: f64, x: f64) -> f64 {
    FRAC_PI_2.sqrt() * (1.0 + 1.0 / x).powf(v) * (-x).exp() / (x + 1.0).sqrt()
}

/// Upper bound for K_v(x) valid for v in (0, 1/2).
pub fn k_bound_lower_range(v: f64, x: f64) -> f64 {
    2f64.powf(v - 1.0) * gamma(v) * (1.0 + 1.0 / x).powf(v) * (-x).exp() / (x + 1.0).sqrt()
}

/// The applicable strict upper bound for K_v(x), if v lies in either range.
pub fn k_upper_bound(v: f64, x: f64) -> Option<f64> {
    if v > 0.0 && v < 0.5 {
        Some(k_bound_lower_range(v, x))
    } else if v > 0.5 && v < 1.5 {
        Some(k_bound_upper_range(v, x))
    } else {
        None
    }
}

fn check_tfbm_params(hurst: f64, lambda: f64) -> Result<()> {
    if !(hurst > 0.0 && hurst < 1.0) {
        return domain(format!("Hurst index must lie in (0,1), got {hurst}"));
    }
    if !(lambda > 0.0) || !lambda.is_finite() {
        return domain(format!("tempering rate must be positive, got {lambda}"));
    }
    Ok(())
}

// g(0) - g(z) for g(z) = z^H K_H(z), from the series of I_{±H}
fn zk_deficit_series(hurst: f64, z: f64) -> f64 {
    let q = 0.25 * z * z;
    let mut neg = 0.0;
    let mut pos = 0.0;
    let mut pow_k = 1.0; // (z/2)^{2k} / k!
    for k in 0..60usize {
        if k > 0 {
            pow_k *= q / k as f64;
            neg += pow_k / gamma(k as f64 - hurst + 1.0);
        }
        pos += pow_k / gamma(k as f64 + hurst + 1.0);
        if k > 2 && pow_k < 1e-18 * (neg.abs() + pos.abs()) {
            break;
        }
    }
    let prefactor = PI / (2.0 * (hurst * PI).sin());
    prefactor * (-(2f64.powf(hurst)) * neg + z.powf(2.0 * hurst) * 2f64.powf(-hurst) * pos)
}

/// Variance E[B_t^2] = C_t^2 t^{2H} of the tempered fractional Brownian motion.
pub fn variance_function(hurst: f64, lambda: f64, t: f64) -> Result<f64> {
    check_tfbm_params(hurst, lambda)?;
    if !(t >= 0.0) || !t.is_finite() {
        return domain(format!("time must be nonnegative, got {t}"));
    }
    if t == 0.0 {
        return Ok(0.0);
    }
    let z = lambda * t;
    let scale = 2.0 * gamma(hurst + 0.5) / (PI.sqrt() * 2f64.powf(hurst) * lambda.powf(2.0 * hurst));
    if z < SERIES_CUTOFF {
        Ok(scale * zk_deficit_series(hurst, z))
    } else {
        let at_zero = gamma(hurst) * 2f64.powf(hurst - 1.0);
        Ok(scale * (at_zero - z.powf(hurst) * bessel_k(hurst, z)?))
    }
}

/// The coefficient C_t^2, with C_0^2 = 0.
pub fn tempering_coefficient(hurst: f64, lambda: f64, t: f64) -> Result<f64> {
    let v = variance_function(hurst, lambda, t)?;
    if t == 0.0 {
        return Ok(0.0);
    }
    Ok(v / t.powf(2.0 * hurst))
}

#[derive(Debug, Clone, Copy)]
pub struct TemperingCoefficient {
    pub hurst: f64,
    pub lambda: f64,
    pub t: f64,
    pub c_sq: f64,
}

impl TemperingCoefficient {
    pub fn evaluate(hurst: f64, lambda: f64, t: f64) -> Result<Self> {
        Ok(Self { hurst, lambda, t, c_sq: tempering_coefficient(hurst, lambda, t)? })
    }

    pub fn variance(&self) -> f64 {
        self.c_sq * self.t.powf(2.0 * self.hurst)
    }
}

/// Covariance E[B_s B_t].
pub fn tfbm_covariance(hurst: f64, lambda: f64, s: f64, t: f64) -> Result<f64> {
    if !(s >= 0.0 && t >= 0.0) {
        return domain(format!("covariance needs nonnegative times, got ({s}, {t})"));
    }
    let vt = variance_function(hurst, lambda, t)?;
    let vs = variance_function(hurst, lambda, s)?;
    let vd = variance_function(hurst, lambda, (t - s).abs())?;
    Ok(0.5 * (vt + vs - vd))
}
