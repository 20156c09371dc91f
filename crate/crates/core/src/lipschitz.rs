//! Lipschitz constant estimation from extreme-value statistics.
//!
//! Slopes `‖φ(x,u,w) − φ(x',u,w')‖ / ‖(x,w) − (x',w')‖` (infinity norms) are
//! grouped into blocks; the block maxima are fitted with a reverse Weibull
//! distribution whose finite upper endpoint is the estimate.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sampling::{draw_symmetric, draw_uniform, purpose, stream_rng};
use crate::systems::{SystemError, SystemModel};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LipschitzError {
    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("reverse Weibull fit did not converge: {0}")]
    NoConvergence(String),
    #[error("could not draw a distinct nearby point after {0} attempts")]
    DegenerateNeighbourhood(usize),
    #[error("every input failed; first error: {0}")]
    AllInputsFailed(String),
    #[error(transparent)]
    System(#[from] SystemError),
}

/// `G(s) = exp(-((a - s)/b)^c)` for `s < a`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeibullFit {
    pub location: f64,
    pub scale: f64,
    pub shape: f64,
    pub log_likelihood: f64,
    /// False when the sample was constant; `scale` and `shape` are then meaningless.
    pub valid: bool,
}

const MIN_FIT_SAMPLES: usize = 20;
const MAX_OUTER_ITER: usize = 200;

/// Shape and scale of a two-parameter Weibull MLE on positive `y`, with
/// the profile log-likelihood at the optimum.
fn weibull_mle(y: &[f64]) -> Result<(f64, f64, f64), LipschitzError> {
    let m = y.len() as f64;
    let ymax = y.iter().copied().fold(0.0, f64::max);
    let lt: Vec<f64> = y.iter().map(|v| (v / ymax).ln()).collect();
    let mean_lt = lt.iter().sum::<f64>() / m;

    // g(c) = 1/c + mean ln t − Σ tᶜ ln t / Σ tᶜ, strictly decreasing
    let eval = |c: f64| {
        let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
        for &l in &lt {
            let p = (c * l).exp();
            s0 += p;
            s1 += p * l;
            s2 += p * l * l;
        }
        let h = s1 / s0;
        (1.0 / c + mean_lt - h, -1.0 / (c * c) - (s2 / s0 - h * h), s0)
    };
    let (mut lo, mut hi) = (1e-8, 1.0);
    while eval(hi).0 > 0.0 {
        lo = hi;
        hi *= 2.0;
        if hi > 1e8 {
            return Err(LipschitzError::NoConvergence("shape parameter diverges".into()));
        }
    }
    let mut c = 0.5 * (lo + hi);
    for _ in 0..200 {
        let (g, dg, _) = eval(c);
        if g > 0.0 {
            lo = c;
        } else {
            hi = c;
        }
        let newton = c - g / dg;
        let next = if newton > lo && newton < hi && dg < 0.0 {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if (next - c).abs() <= 1e-14 * c.max(1.0) {
            c = next;
            break;
        }
        c = next;
    }
    let s0 = eval(c).2;
    let b = ymax * (s0 / m).powf(1.0 / c);
    let sum_ln_y: f64 = lt.iter().sum::<f64>() + m * ymax.ln();
    let ll = m * c.ln() - m * c * b.ln() + (c - 1.0) * sum_ln_y - m;
    Ok((c, b, ll))
}

/// Maximum-likelihood reverse Weibull fit, profiling over the location.
pub fn fit_reverse_weibull(samples: &[f64]) -> Result<WeibullFit, LipschitzError> {
    if samples.len() < MIN_FIT_SAMPLES {
        return Err(LipschitzError::TooFewSamples {
            need: MIN_FIT_SAMPLES,
            got: samples.len(),
        });
    }
    if samples.iter().any(|s| !s.is_finite()) {
        return Err(LipschitzError::InvalidParameter("samples must be finite".into()));
    }
    let max = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = samples.iter().copied().fold(f64::INFINITY, f64::min);
    let range = max - min;
    if range <= 1e-12 * max.abs().max(1.0) {
        return Ok(WeibullFit {
            location: max,
            scale: 0.0,
            shape: 0.0,
            log_likelihood: f64::NAN,
            valid: false,
        });
    }

    let mut y = vec![0.0; samples.len()];
    let mut profile = |offset: f64| -> Result<(f64, f64, f64), LipschitzError> {
        let a = max + offset;
        for (yi, s) in y.iter_mut().zip(samples) {
            *yi = a - s;
        }
        let (c, b, ll) = weibull_mle(&y)?;
        Ok((ll, b, c))
    };

    // coarse log-spaced scan over offsets in [range·1e-6, 10·range]
    const GRID: usize = 61;
    let (lo_off, hi_off) = (range * 1e-6, 10.0 * range);
    let ratio = (hi_off / lo_off).ln() / (GRID - 1) as f64;
    let offsets: Vec<f64> = (0..GRID).map(|i| lo_off * (ratio * i as f64).exp()).collect();
    let mut best = (0, f64::NEG_INFINITY);
    for (i, &o) in offsets.iter().enumerate() {
        let ll = profile(o)?.0;
        if ll > best.1 {
            best = (i, ll);
        }
    }
    // golden-section search in log-offset between the neighbours of the best point
    let mut a = offsets[best.0.saturating_sub(1)].ln();
    let mut b = offsets[(best.0 + 1).min(GRID - 1)].ln();
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = b - phi * (b - a);
    let mut x2 = a + phi * (b - a);
    let mut f1 = profile(x1.exp())?.0;
    let mut f2 = profile(x2.exp())?.0;
    let mut converged = false;
    for _ in 0..MAX_OUTER_ITER {
        if (b - a).abs() < 1e-10 {
            converged = true;
            break;
        }
        if f1 < f2 {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + phi * (b - a);
            f2 = profile(x2.exp())?.0;
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - phi * (b - a);
            f1 = profile(x1.exp())?.0;
        }
    }
    if !converged {
        return Err(LipschitzError::NoConvergence("location search exceeded 200 iterations".into()));
    }
    let offset = (0.5 * (a + b)).exp();
    let (ll, scale, shape) = profile(offset)?;
    let (offset, ll, scale, shape) = if ll >= best.1 {
        (offset, ll, scale, shape)
    } else {
        let o = offsets[best.0];
        let (ll, scale, shape) = profile(o)?;
        (o, ll, scale, shape)
    };
    Ok(WeibullFit {
        location: max + offset,
        scale,
        shape,
        log_likelihood: ll,
        valid: true,
    })
}

/// One slope between a uniform point of `X × W` and a uniform point of its
/// δ-neighbourhood (intersected with `X × W`).
pub fn slope_sample(system: &SystemModel, u: &[f64], delta: f64, rng: &mut impl Rng) -> Result<f64, LipschitzError> {
    if !(delta > 0.0) {
        return Err(LipschitzError::InvalidParameter(format!("delta must be positive, got {delta}")));
    }
    let n = system.state_dim();
    let xbox = system.state_box();
    let wbar = system.disturbance_bound();
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    draw_uniform(rng, xbox.lower(), xbox.upper(), &mut x);
    draw_symmetric(rng, wbar, &mut w);

    let clip = |v: f64, l: f64, h: f64| ((v - delta).max(l), (v + delta).min(h));
    let (mut xl, mut xh) = (vec![0.0; n], vec![0.0; n]);
    let (mut wl, mut wh) = (vec![0.0; n], vec![0.0; n]);
    for k in 0..n {
        (xl[k], xh[k]) = clip(x[k], xbox.lower()[k], xbox.upper()[k]);
        (wl[k], wh[k]) = clip(w[k], -wbar[k], wbar[k]);
    }
    let mut x2 = vec![0.0; n];
    let mut w2 = vec![0.0; n];
    const ATTEMPTS: usize = 1000;
    for _ in 0..ATTEMPTS {
        draw_uniform(rng, &xl, &xh, &mut x2);
        draw_uniform(rng, &wl, &wh, &mut w2);
        let den = x
            .iter()
            .zip(&x2)
            .chain(w.iter().zip(&w2))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if den < 1e-12 {
            continue;
        }
        let y1 = system.step(&x, u, &w)?;
        let y2 = system.step(&x2, u, &w2)?;
        let num = y1.iter().zip(&y2).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        return Ok(num / den);
    }
    Err(LipschitzError::DegenerateNeighbourhood(ATTEMPTS))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzParams {
    /// Slopes per block (𝔫).
    pub n_inner: usize,
    /// Number of blocks (𝔪).
    pub m_outer: usize,
    pub delta: f64,
    pub seed: u64,
    /// Multiplier applied to every fitted location.
    pub safety: f64,
}

impl LipschitzParams {
    /// 𝔫 = 100, 𝔪 = 200, δ = (smallest state-box width)/100.
    pub fn defaults_for(system: &SystemModel, seed: u64) -> Self {
        let b = system.state_box();
        let delta = (0..b.dim()).map(|k| b.width(k)).fold(f64::INFINITY, f64::min) / 100.0;
        Self {
            n_inner: 100,
            m_outer: 200,
            delta,
            seed,
            safety: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InputEstimate {
    pub lipschitz: f64,
    pub fit: WeibullFit,
    pub block_max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LipschitzEstimate {
    /// One entry per input, in input order.
    pub per_input: Vec<Result<InputEstimate, LipschitzError>>,
    pub global_max: f64,
    pub params: LipschitzParams,
}

impl LipschitzEstimate {
    /// Estimate for input `i`, or the global maximum if that input failed.
    pub fn for_input(&self, i: usize) -> f64 {
        match &self.per_input[i] {
            Ok(e) => e.lipschitz,
            Err(_) => self.global_max,
        }
    }
}

/// Block maxima of slopes for one input.
pub fn block_maxima(system: &SystemModel, u: &[f64], input_index: usize, params: &LipschitzParams) -> Result<Vec<f64>, LipschitzError> {
    let mut rng = stream_rng(params.seed, 0, input_index, purpose::LIPSCHITZ);
    (0..params.m_outer)
        .map(|_| {
            let mut best = 0.0f64;
            for _ in 0..params.n_inner {
                best = best.max(slope_sample(system, u, params.delta, &mut rng)?);
            }
            Ok(best)
        })
        .collect()
}

pub fn estimate_lipschitz(system: &SystemModel, inputs: &[Vec<f64>], params: &LipschitzParams) -> Result<LipschitzEstimate, LipschitzError> {
    if params.n_inner < 10 || params.m_outer < 20 {
        return Err(LipschitzError::InvalidParameter(format!(
            "need n_inner ≥ 10 and m_outer ≥ 20, got {} and {}",
            params.n_inner, params.m_outer
        )));
    }
    if !(params.safety >= 1.0) {
        return Err(LipschitzError::InvalidParameter(format!("safety multiplier must be ≥ 1, got {}", params.safety)));
    }
    let per_input: Vec<Result<InputEstimate, LipschitzError>> = inputs
        .par_iter()
        .enumerate()
        .map(|(i, u)| {
            let maxima = block_maxima(system, u, i, params)?;
            let fit = fit_reverse_weibull(&maxima)?;
            Ok(InputEstimate {
                lipschitz: params.safety * fit.location,
                fit,
                block_max: maxima.iter().copied().fold(0.0, f64::max),
            })
        })
        .collect();
    let ok: Vec<f64> = per_input.iter().filter_map(|r| r.as_ref().ok().map(|e| e.lipschitz)).collect();
    if ok.is_empty() {
        let first = per_input
            .iter()
            .find_map(|r| r.as_ref().err().map(|e| e.to_string()))
            .unwrap_or_else(|| "no inputs".into());
        return Err(LipschitzError::AllInputsFailed(first));
    }
    Ok(LipschitzEstimate {
        global_max: ok.iter().copied().fold(0.0, f64::max),
        per_input,
        params: params.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Hyperrect;
    use crate::systems::{identity_system, scalar_linear};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn reverse_weibull(a: f64, b: f64, c: f64, m: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..m)
            .map(|_| {
                let u: f64 = 1.0 - rng.random::<f64>();
                a - b * (-u.ln()).powf(1.0 / c)
            })
            .collect()
    }

    #[test]
    fn slope_closed_forms() {
        let id = identity_system(Hyperrect::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap(), vec![vec![0.0]], vec![0.0, 0.0], 1.0).unwrap();
        let lin = scalar_linear(0.3, Hyperrect::new(vec![-1.0], vec![1.0]).unwrap(), vec![0.0], 0.0, 0.5).unwrap();
        let contraction = scalar_linear(-1.0, Hyperrect::new(vec![-1.0], vec![1.0]).unwrap(), vec![0.0], 0.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            assert!((slope_sample(&id, &[0.0], 0.01, &mut rng).unwrap() - 1.0).abs() < 1e-9);
            assert!((slope_sample(&lin, &[0.0], 0.01, &mut rng).unwrap() - 0.15f64.exp()).abs() < 1e-9);
            assert!((slope_sample(&contraction, &[0.0], 0.01, &mut rng).unwrap() - (-1.0f64).exp()).abs() < 1e-9);
        }
        assert!(slope_sample(&id, &[0.0], 0.0, &mut rng).is_err());
    }

    #[test]
    fn recovers_known_location() {
        let s = reverse_weibull(2.0, 1.0, 3.0, 500, 8);
        let fit = fit_reverse_weibull(&s).unwrap();
        assert!(fit.valid);
        assert!((fit.location - 2.0).abs() < 0.1, "{fit:?}");
        assert!(fit.location >= s.iter().copied().fold(f64::MIN, f64::max));
    }

    #[test]
    fn degenerate_and_small_inputs() {
        let fit = fit_reverse_weibull(&[1.0; 30]).unwrap();
        assert!(!fit.valid);
        assert_eq!(fit.location, 1.0);
        assert!(matches!(fit_reverse_weibull(&[1.0; 5]), Err(LipschitzError::TooFewSamples { .. })));
    }

    #[test]
    fn location_never_below_sample_max() {
        for seed in 0..10 {
            let s = reverse_weibull(1.0, 0.3, 1.5 + seed as f64 * 0.3, 60, seed);
            let fit = fit_reverse_weibull(&s).unwrap();
            assert!(fit.location >= s.iter().copied().fold(f64::MIN, f64::max));
        }
    }

    #[test]
    fn identity_estimate_is_one_and_deterministic() {
        let id = identity_system(Hyperrect::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap(), vec![vec![0.0], vec![1.0]], vec![0.0, 0.0], 1.0).unwrap();
        let params = LipschitzParams { n_inner: 10, m_outer: 20, ..LipschitzParams::defaults_for(&id, 3) };
        let est = estimate_lipschitz(&id, &[vec![0.0], vec![1.0]], &params).unwrap();
        for i in 0..2 {
            assert!((est.for_input(i) - 1.0).abs() < 0.01);
        }
        let again = estimate_lipschitz(&id, &[vec![0.0], vec![1.0]], &params).unwrap();
        assert_eq!(est.global_max.to_bits(), again.global_max.to_bits());
        let bad = LipschitzParams { n_inner: 5, ..params };
        assert!(estimate_lipschitz(&id, &[vec![0.0]], &bad).is_err());
    }
}
