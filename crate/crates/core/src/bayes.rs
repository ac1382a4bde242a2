// Copyright 2026 The Skyjoin Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

//! Bayes factor of the Fisher-distribution cross-match model.
//!
//! For detections `x_i` with concentrations `w_i = 1/sigma_i^2` the Bayes
//! factor of "one common source" against "independent sources" under an
//! isotropic prior is
//!
//! ```text
//! B = sinh(w)/w * prod_i w_i / sinh(w_i),     w = |sum_i w_i x_i|
//! ```
//!
//! At survey precision (`sigma ~ 0.1"`, `w ~ 4e12`) neither `sinh` nor the
//! difference `w - sum w_i` can be formed directly, so everything is kept in
//! log space and the accumulator tracks the exact deficit
//! `D = sum_{i<j} w_i w_j |x_i - x_j|^2 = (sum w_i)^2 - w^2`, which is built
//! from chord lengths and never suffers cancellation.

use std::f64::consts::{LN_2, PI};

use thiserror::Error;

use crate::geometry::{UnitVector, ARCSEC};

/// Below this `|sum w_i x_i|` a tuple is treated as antipodal and rejected.
pub const DEGENERACY_THRESHOLD: f64 = 1e-300;

/// Relative slack added to search radii derived from weight ranges.
const SEARCH_MARGIN: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BayesError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("degenerate configuration: weighted direction sum vanishes")]
    DegenerateConfiguration,
}

/// Astrometric precision of a detection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Precision {
    w: f64,
    sigma: f64,
}

impl Precision {
    /// From a 1-sigma error in radians.
    pub fn from_sigma(sigma: f64) -> Result<Self, BayesError> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(BayesError::Domain(format!("sigma must be positive, got {sigma}")));
        }
        Ok(Self {
            w: 1.0 / (sigma * sigma),
            sigma,
        })
    }

    pub fn from_arcsec(sigma_arcsec: f64) -> Result<Self, BayesError> {
        Self::from_sigma(sigma_arcsec * ARCSEC)
    }

    pub fn from_weight(w: f64) -> Result<Self, BayesError> {
        if !(w.is_finite() && w > 0.0) {
            return Err(BayesError::Domain(format!("weight must be positive, got {w}")));
        }
        Ok(Self {
            w,
            sigma: 1.0 / w.sqrt(),
        })
    }

    pub fn w(&self) -> f64 {
        self.w
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }
}

/// `log(sinh(w))` for `w > 0` without overflow.
pub fn logsinh(w: f64) -> Result<f64, BayesError> {
    if w.is_nan() || w <= 0.0 {
        return Err(BayesError::Domain(format!("logsinh requires w > 0, got {w}")));
    }
    Ok(w + logsinh_minus_w(w))
}

/// `log(sinh(w)) - w`, bounded for large `w`.
fn logsinh_minus_w(w: f64) -> f64 {
    if w > 34.0 {
        -LN_2 + (-(-2.0 * w).exp()).ln_1p()
    } else {
        w.sinh().ln() - w
    }
}

/// Running state of an N-way match: enough to evaluate the Bayes factor and
/// the best position of the combined detections.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchAccumulator {
    weighted_sum: [f64; 3],
    total_weight: f64,
    deficit: f64,
    // sum_i (ln w_i - (logsinh w_i - w_i))
    log_norm: f64,
    n: u32,
}

impl Default for MatchAccumulator {
    fn default() -> Self {
        Self::empty()
    }
}

impl MatchAccumulator {
    pub fn empty() -> Self {
        Self {
            weighted_sum: [0.0; 3],
            total_weight: 0.0,
            deficit: 0.0,
            log_norm: 0.0,
            n: 0,
        }
    }

    pub fn single(x: &UnitVector, p: Precision) -> Self {
        let w = p.w();
        Self {
            weighted_sum: [w * x.x(), w * x.y(), w * x.z()],
            total_weight: w,
            deficit: 0.0,
            log_norm: w.ln() - logsinh_minus_w(w),
            n: 1,
        }
    }

    pub fn accumulate(&self, x: &UnitVector, p: Precision) -> Self {
        self.merge(&Self::single(x, p))
    }

    /// Combines two disjoint detection sets.
    pub fn merge(&self, other: &Self) -> Self {
        if self.n == 0 {
            return *other;
        }
        if other.n == 0 {
            return *self;
        }
        let cross = cross_term(self, other);
        let s = &self.weighted_sum;
        let o = &other.weighted_sum;
        Self {
            weighted_sum: [s[0] + o[0], s[1] + o[1], s[2] + o[2]],
            total_weight: self.total_weight + other.total_weight,
            deficit: self.deficit + other.deficit + 2.0 * cross,
            log_norm: self.log_norm + other.log_norm,
            n: self.n + other.n,
        }
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn weighted_sum(&self) -> [f64; 3] {
        self.weighted_sum
    }

    /// `|sum_i w_i x_i|`.
    pub fn resultant(&self) -> f64 {
        norm3(&self.weighted_sum)
    }

    pub fn total_weight(&self) -> f64 {
        self.total_weight
    }

    /// `sum_i (log w_i - logsinh w_i)`.
    pub fn sum_log_w_over_sinh(&self) -> f64 {
        self.log_norm - self.total_weight
    }

    /// `(sum w_i) - |sum w_i x_i|`, computed without cancellation.
    fn weight_gap(&self) -> f64 {
        if self.n <= 1 {
            return 0.0;
        }
        self.deficit / (self.total_weight + self.resultant())
    }
}

fn norm3(v: &[f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

// W_a W_b - S_a . S_b, i.e. half the pairwise deficit between the two sets.
fn cross_term(a: &MatchAccumulator, b: &MatchAccumulator) -> f64 {
    let sa = a.resultant();
    let sb = b.resultant();
    if sa < DEGENERACY_THRESHOLD || sb < DEGENERACY_THRESHOLD {
        let dot: f64 = (0..3).map(|k| a.weighted_sum[k] * b.weighted_sum[k]).sum();
        return a.total_weight * b.total_weight - dot;
    }
    let ua: Vec<f64> = a.weighted_sum.iter().map(|c| c / sa).collect();
    let ub: Vec<f64> = b.weighted_sum.iter().map(|c| c / sb).collect();
    let half_chord_sq: f64 = (0..3).map(|k| (ua[k] - ub[k]).powi(2)).sum::<f64>() / 2.0;
    a.weight_gap() * b.total_weight + sa * b.weight_gap() + sa * sb * half_chord_sq
}

/// Natural log of the Bayes factor. A single detection has `log B = 0`.
pub fn log_bayes_factor(acc: &MatchAccumulator) -> Result<f64, BayesError> {
    match acc.n {
        0 => Err(BayesError::Domain("empty accumulator".into())),
        1 => Ok(0.0),
        _ => {
            let w = acc.resultant();
            if w < DEGENERACY_THRESHOLD {
                return Err(BayesError::DegenerateConfiguration);
            }
            Ok(-acc.weight_gap() + logsinh_minus_w(w) - w.ln() + acc.log_norm)
        }
    }
}

/// Maximum-likelihood direction of the combined detections.
pub fn best_position(acc: &MatchAccumulator) -> Result<UnitVector, BayesError> {
    if acc.n == 0 {
        return Err(BayesError::Domain("empty accumulator".into()));
    }
    let [x, y, z] = acc.weighted_sum;
    if norm3(&acc.weighted_sum) < DEGENERACY_THRESHOLD {
        return Err(BayesError::DegenerateConfiguration);
    }
    UnitVector::new(x, y, z).map_err(|_| BayesError::DegenerateConfiguration)
}

/// High-accuracy (Gaussian) limit of the two-detection log Bayes factor:
/// `log(2/(s1^2+s2^2)) - psi^2 / (2 (s1^2+s2^2))`.
pub fn gaussian_limit_log_bf(sigmas: &[f64], positions: &[UnitVector]) -> Result<f64, BayesError> {
    if sigmas.len() != 2 || positions.len() != 2 {
        return Err(BayesError::Domain(format!(
            "Gaussian limit is implemented for two detections, got {}",
            sigmas.len().max(positions.len())
        )));
    }
    let s2 = sigmas[0] * sigmas[0] + sigmas[1] * sigmas[1];
    let psi = crate::geometry::angular_distance(&positions[0], &positions[1]);
    Ok((2.0 / s2).ln() - psi * psi / (2.0 * s2))
}

/// Log Bayes factor of two detections with weights `w1`, `w2` at separation `psi`.
pub fn two_detection_log_bf(w1: f64, w2: f64, psi: f64) -> Result<f64, BayesError> {
    let p1 = Precision::from_weight(w1)?;
    let p2 = Precision::from_weight(w2)?;
    let a = UnitVector::new(1.0, 0.0, 0.0).expect("axis");
    let (s, c) = psi.sin_cos();
    let b = UnitVector::new(c, s, 0.0).expect("unit circle point");
    log_bayes_factor(&MatchAccumulator::single(&a, p1).accumulate(&b, p2))
}

/// Largest separation at which two detections with errors `sigma_a` and
/// `sigma_b` (radians) still reach `log B >= log_limit`.
///
/// Returns `PI` when every separation passes (including `log_limit = -inf`)
/// and 0 when even coincident detections fail.
pub fn cutoff_radius(sigma_a: f64, sigma_b: f64, log_limit: f64) -> f64 {
    if log_limit == f64::NEG_INFINITY {
        return PI;
    }
    let wa = 1.0 / (sigma_a * sigma_a);
    let wb = 1.0 / (sigma_b * sigma_b);
    let f = |psi: f64| two_detection_log_bf(wa, wb, psi).unwrap_or(f64::NEG_INFINITY);
    let peak = f(0.0);
    if peak.is_nan() || peak < log_limit {
        return 0.0;
    }
    if f(PI) >= log_limit {
        return PI;
    }
    // f is strictly decreasing; keep f(lo) >= limit > f(hi)
    let (mut lo, mut hi) = (0.0f64, PI);
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) >= log_limit {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

/// Closed interval of possible concentration values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightRange {
    pub min: f64,
    pub max: f64,
}

impl WeightRange {
    pub fn exact(w: f64) -> Self {
        Self { min: w, max: w }
    }

    /// Weights of errors between `sigma_min` and `sigma_max` radians.
    pub fn from_sigmas(sigma_min: f64, sigma_max: f64) -> Self {
        Self {
            min: 1.0 / (sigma_max * sigma_max),
            max: 1.0 / (sigma_min * sigma_min),
        }
    }
}

fn harmonic(a: f64, b: f64) -> f64 {
    a * b / (a + b)
}

/// Search radius for pairing a combined position of concentration in `left`
/// with a detection of weight in `right` such that no pair reaching
/// `log B >= log_threshold` is missed.
///
/// In the high-accuracy limit the two-detection Bayes factor depends on the
/// weights only through `v = kw/(k+w)` and the admissible radius
/// `2 (ln 2v - L) / v` peaks at `v = e^{L+1}/2`; the radius is evaluated at
/// the admissible `v` closest to that peak and at the corners of the box.
pub fn pair_search_radius(left: WeightRange, right: WeightRange, log_threshold: f64) -> f64 {
    if log_threshold == f64::NEG_INFINITY {
        return PI;
    }
    let kmin = left.min.max(f64::MIN_POSITIVE);
    let wmin = right.min.max(f64::MIN_POSITIVE);
    let (kmax, wmax) = (left.max.max(kmin), right.max.max(wmin));
    let v_lo = harmonic(kmin, wmin);
    let v_hi = harmonic(kmax, wmax);
    let v_peak = 0.5 * (log_threshold + 1.0).exp();
    let v = v_peak.clamp(v_lo, v_hi);
    let v_mid = harmonic(kmax, wmin);
    let (k, w) = if v <= v_mid {
        let k = if wmin > v { v * wmin / (wmin - v) } else { kmax };
        (k.clamp(kmin, kmax), wmin)
    } else {
        let w = if kmax > v { v * kmax / (kmax - v) } else { wmax };
        (kmax, w.clamp(wmin, wmax))
    };
    let radius = |k: f64, w: f64| cutoff_radius(1.0 / k.sqrt(), 1.0 / w.sqrt(), log_threshold);
    let best = [(k, w), (kmin, wmin), (kmax, wmin), (kmin, wmax), (kmax, wmax)]
        .iter()
        .map(|&(k, w)| radius(k, w))
        .fold(0.0f64, f64::max);
    if best == 0.0 {
        0.0
    } else {
        (best * (1.0 + SEARCH_MARGIN)).min(PI)
    }
}

/// Largest log Bayes factor contribution a pair step can make: both sides
/// at maximal concentration and zero separation.
pub fn max_pair_log_bf(left_max: f64, right_max: f64) -> f64 {
    two_detection_log_bf(left_max, right_max, 0.0).unwrap_or(f64::NEG_INFINITY)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{to_unit_vector, SkyCoord};

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    fn at(ra: f64, dec: f64) -> UnitVector {
        to_unit_vector(SkyCoord::new(ra, dec).unwrap())
    }

    #[test]
    fn logsinh_examples() {
        assert!(rel(logsinh(1000.0).unwrap(), 1000.0 - LN_2) < 1e-15);
        // log(sinh 1) = log(1.1752011936438014569)
        assert!(rel(logsinh(1.0).unwrap(), 1.175_201_193_643_801_4_f64.ln()) < 1e-15);
        assert!(rel(logsinh(1e-8).unwrap(), (1e-8f64).ln()) < 1e-12);
        assert!(logsinh(0.0).is_err());
        assert!(logsinh(-1.0).is_err());
    }

    #[test]
    fn logsinh_continuous_at_switch() {
        let below = 34.0f64.sinh().ln();
        let above = 34.0 - LN_2 + (-(-68.0f64).exp()).ln_1p();
        assert!(rel(below, above) < 1e-13);
        let l = logsinh(34.0).unwrap();
        let r = logsinh(34.0 + 1e-12).unwrap();
        assert!(rel(l, r) < 1e-13);
    }

    #[test]
    fn accumulate_examples() {
        let x = at(10.0, 20.0);
        let p = Precision::from_arcsec(0.2).unwrap();
        let one = MatchAccumulator::empty().accumulate(&x, p);
        assert_eq!(one.n(), 1);
        assert!(rel(one.resultant(), p.w()) < 1e-15);
        let two = one.accumulate(&x, p);
        assert!(rel(two.resultant(), 2.0 * p.w()) < 1e-15);
        let anti = one.accumulate(&at(190.0, -20.0), p);
        assert!(anti.resultant() < 1e-3 * p.w());
    }

    #[test]
    fn single_detection_is_neutral() {
        let acc = MatchAccumulator::single(&at(1.0, 2.0), Precision::from_arcsec(0.1).unwrap());
        assert_eq!(log_bayes_factor(&acc).unwrap(), 0.0);
        assert!(log_bayes_factor(&MatchAccumulator::empty()).is_err());
    }

    #[test]
    fn antipodal_pair_is_degenerate() {
        let p = Precision::from_sigma(0.5).unwrap();
        let a = UnitVector::new(1.0, 0.0, 0.0).unwrap();
        let b = UnitVector::new(-1.0, 0.0, 0.0).unwrap();
        let acc = MatchAccumulator::single(&a, p).accumulate(&b, p);
        assert_eq!(log_bayes_factor(&acc), Err(BayesError::DegenerateConfiguration));
        assert_eq!(best_position(&acc), Err(BayesError::DegenerateConfiguration));
    }

    #[test]
    fn coincident_pair_approaches_log_w() {
        // B = sinh(2w)/(2w) (w/sinh w)^2, evaluated directly in log space
        for &w in &[50.0f64, 1e4, 1e8, 4.25e12] {
            let direct = logsinh(2.0 * w).unwrap() - (2.0 * w).ln() + 2.0 * (w.ln() - logsinh(w).unwrap());
            let v = two_detection_log_bf(w, w, 0.0).unwrap();
            // the direct form cancels catastrophically once w*eps approaches 1e-6
            if w <= 1e8 {
                assert!((v - direct).abs() < 1e-9 * direct.abs().max(1.0), "w={w}: {v} vs {direct}");
            }
            if w > 1e3 {
                assert!(rel(v, w.ln()) < 1e-9);
            }
        }
    }

    #[test]
    fn gaussian_limit_zero_separation() {
        let s = 0.3 * ARCSEC;
        let x = at(5.0, 5.0);
        let v = gaussian_limit_log_bf(&[s, s], &[x, x]).unwrap();
        assert!(rel(v, (1.0 / (s * s)).ln()) < 1e-15);
        assert!(gaussian_limit_log_bf(&[s], &[x]).is_err());
        assert!(gaussian_limit_log_bf(&[s, s, s], &[x, x, x]).is_err());
    }

    #[test]
    fn gaussian_limit_breaks_down_at_large_sigma() {
        let s = 10f64.to_radians();
        let a = at(0.0, 0.0);
        let b = at(0.0, 10.0);
        let exact = log_bayes_factor(
            &MatchAccumulator::single(&a, Precision::from_sigma(s).unwrap())
                .accumulate(&b, Precision::from_sigma(s).unwrap()),
        )
        .unwrap();
        let gauss = gaussian_limit_log_bf(&[s, s], &[a, b]).unwrap();
        assert!(rel(exact, gauss) > 1e-4);
    }

    #[test]
    fn best_position_weighted() {
        let p = Precision::from_arcsec(0.1).unwrap();
        let x = at(33.0, -12.0);
        let one = MatchAccumulator::single(&x, p);
        assert!(crate::geometry::angular_distance(&best_position(&one).unwrap(), &x) < 1e-15);
        let two = one.accumulate(&x, p);
        assert!(crate::geometry::angular_distance(&best_position(&two).unwrap(), &x) < 1e-15);

        // w1 = 3 w2: the estimate sits a quarter of the way from detection 1
        let sep = 1e-5f64;
        let a = UnitVector::new(1.0, 0.0, 0.0).unwrap();
        let b = UnitVector::new(sep.cos(), sep.sin(), 0.0).unwrap();
        let p1 = Precision::from_weight(3e10).unwrap();
        let p2 = Precision::from_weight(1e10).unwrap();
        let m = best_position(&MatchAccumulator::single(&a, p1).accumulate(&b, p2)).unwrap();
        let d1 = crate::geometry::angular_distance(&a, &m);
        assert!(rel(d1, sep / 4.0) < 1e-9, "{d1}");
        assert!(m.z().abs() < 1e-18);
    }

    #[test]
    fn cutoff_examples() {
        let s = 0.1 * ARCSEC;
        assert_eq!(cutoff_radius(s, s, f64::NEG_INFINITY), PI);
        // ln(1/s^2) ~ 28.5 at zero separation
        assert_eq!(cutoff_radius(s, s, 40.0), 0.0);
        let limit = 1e6f64.ln();
        let sa = 0.1 * ARCSEC;
        let sb = 0.2 * ARCSEC;
        let psi = cutoff_radius(sa, sb, limit);
        let at_cut = two_detection_log_bf(1.0 / (sa * sa), 1.0 / (sb * sb), psi).unwrap();
        assert!(rel(at_cut.exp(), 1e6) < 1e-6, "{}", at_cut.exp());
        // dense grid: every separation below the cutoff passes, above fails
        for k in 1..2000 {
            let t = psi * k as f64 / 1000.0;
            let v = two_detection_log_bf(1.0 / (sa * sa), 1.0 / (sb * sb), t).unwrap();
            assert_eq!(v >= limit, t < psi, "psi={t}");
        }
        // larger errors, larger radius
        assert!(cutoff_radius(sa, 0.5 * ARCSEC, limit) > psi);
    }

    #[test]
    fn search_radius_covers_exact_weights() {
        let sa = 0.1 * ARCSEC;
        let sb = 0.2 * ARCSEC;
        let limit = 1e6f64.ln();
        let exact = cutoff_radius(sa, sb, limit);
        let r = pair_search_radius(
            WeightRange::exact(1.0 / (sa * sa)),
            WeightRange::exact(1.0 / (sb * sb)),
            limit,
        );
        assert!(r >= exact && r <= exact * 1.001);
        let wide = pair_search_radius(
            WeightRange::from_sigmas(0.05 * ARCSEC, 2.0 * ARCSEC),
            WeightRange::exact(1.0 / (sb * sb)),
            limit,
        );
        for k in 0..200 {
            let s = 0.05 * ARCSEC * (40f64).powf(k as f64 / 199.0);
            assert!(cutoff_radius(s, sb, limit) <= wide, "sigma {s}");
        }
    }

    #[test]
    fn merge_is_associative() {
        let p = [0.1, 0.2, 0.5, 0.3].map(|s| Precision::from_arcsec(s).unwrap());
        let x = [at(10.0, 10.0), at(10.00001, 10.0), at(10.0, 10.00002), at(10.00003, 9.99999)];
        let left = MatchAccumulator::single(&x[0], p[0])
            .accumulate(&x[1], p[1])
            .merge(&MatchAccumulator::single(&x[2], p[2]).accumulate(&x[3], p[3]));
        let seq = (0..4).fold(MatchAccumulator::empty(), |a, i| a.accumulate(&x[i], p[i]));
        let l = log_bayes_factor(&left).unwrap();
        let s = log_bayes_factor(&seq).unwrap();
        assert!(rel(l, s) < 1e-9);
    }
}
