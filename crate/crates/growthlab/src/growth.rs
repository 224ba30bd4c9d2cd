//! Exponent analytics over growth series: windowed critical-exponent
//! estimates, Fekete limits for window-multiplicative sequences, inequality
//! verification, purely-exponential ratio bounds, Poincare partial sums,
//! growth-tightness gap reports, and contracting-element density.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::contracting::{
    is_contracting_element_in, CertificateStatus, ContractingError, ScanOptions,
};
use crate::space::{GrowthSeries, SpaceError, SpaceGraph};

#[derive(Debug, Error)]
pub enum GrowthError {
    #[error("series `{label}` has {got} positive terms, need {need}")]
    TooShort { label: String, got: usize, need: usize },
    #[error("series `{label}` has delta {got}, expected {want}")]
    DeltaMismatch { label: String, got: u32, want: u32 },
    #[error("window hypothesis fails at (n, m) = ({n}, {m}): {lhs} > {rhs}")]
    HypothesisViolated { n: u32, m: u32, lhs: u128, rhs: u128 },
    #[error("exponent must be positive, got {0}")]
    NonPositiveExponent(f64),
    #[error("theta must lie in (0, 1], got {0}")]
    BadTheta(f64),
    #[error("estimate `{label}` too loose for a gap verdict (spread {spread:.4})")]
    LowConfidence { label: String, spread: f64 },
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error(transparent)]
    Contracting(#[from] ContractingError),
}

// ---------------------------------------------------------------------------
// Series construction

/// Annulus counts of the orbit vertices selected by `pred`.
pub fn count_series<F>(
    ball: &SpaceGraph,
    delta: u32,
    label: &str,
    pred: F,
) -> Result<GrowthSeries, GrowthError>
where
    F: Fn(&SpaceGraph, u32) -> bool,
{
    if delta > ball.radius() {
        return Err(SpaceError::OutOfRadius { needed: delta, explored: ball.radius() }.into());
    }
    let radius = ball.radius();
    // Marked count per sphere; the predicate runs once per orbit vertex.
    let mut marked = vec![0u64; radius as usize + 1];
    for v in 0..ball.vertex_count() as u32 {
        if ball.in_orbit(v) && pred(ball, v) {
            marked[ball.dist0(v) as usize] += 1;
        }
    }
    let top = radius - delta;
    let counts = (0..=top)
        .map(|n| {
            let lo = n.saturating_sub(delta) as usize;
            let hi = (n + delta) as usize;
            marked[lo..=hi].iter().sum()
        })
        .collect();
    Ok(GrowthSeries { delta, counts, label: label.to_string() })
}

/// Partial sums of a series (ball counts from annulus counts at delta 0).
pub fn cumulative(series: &GrowthSeries) -> GrowthSeries {
    let mut total = 0u64;
    let counts = series.counts.iter().map(|&c| {
        total += c;
        total
    });
    GrowthSeries {
        delta: series.delta,
        counts: counts.collect(),
        label: format!("{} (cumulative)", series.label),
    }
}

// ---------------------------------------------------------------------------
// Critical exponents

/// Windowed critical-exponent estimate. `window` is the log-count slope over
/// the trailing third, `naive` the max of log(a_n)/n; [lo, hi] spans the two
/// most recent trailing windows.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExponentEstimate {
    pub naive: f64,
    pub window: f64,
    pub fekete: Option<f64>,
    /// sup of a_n exp(-omega n) when a Fekete estimate exists.
    pub constant: Option<f64>,
    pub lo: f64,
    pub hi: f64,
    pub label: String,
}

impl ExponentEstimate {
    pub fn spread(&self) -> f64 {
        self.hi - self.lo
    }
}

/// Indices n >= 1 with a_n > 0, paired with log a_n.
fn usable_terms(series: &GrowthSeries) -> Result<Vec<(u32, f64)>, GrowthError> {
    let terms: Vec<(u32, f64)> = series
        .counts
        .iter()
        .enumerate()
        .skip(1)
        .filter(|&(_, &c)| c > 0)
        .map(|(n, &c)| (n as u32, (c as f64).ln()))
        .collect();
    if terms.len() < 4 {
        return Err(GrowthError::TooShort {
            label: series.label.clone(),
            got: terms.len(),
            need: 4,
        });
    }
    Ok(terms)
}

fn window_span(top: u32) -> u32 {
    ((top + 2) / 3).max(2)
}

/// Slope of log counts over [hi - span, hi]; the lower end slides down past
/// zero entries. None when the window does not fit or hi has count zero.
fn windowed_slope(series: &GrowthSeries, hi: u32, span: u32) -> Option<f64> {
    let count_at = |n: u32| series.counts.get(n as usize).copied().unwrap_or(0);
    if hi <= span || count_at(hi) == 0 {
        return None;
    }
    let mut lo = hi - span;
    while lo >= 1 && count_at(lo) == 0 {
        lo -= 1;
    }
    if lo == 0 || count_at(lo) == 0 {
        return None;
    }
    let rise = (count_at(hi) as f64).ln() - (count_at(lo) as f64).ln();
    Some(rise / (hi - lo) as f64)
}

pub fn critical_exponent(series: &GrowthSeries) -> Result<ExponentEstimate, GrowthError> {
    let usable = usable_terms(series)?;
    let top = usable.last().unwrap().0;
    let span = window_span(top);
    let window = windowed_slope(series, top, span).ok_or_else(|| GrowthError::TooShort {
        label: series.label.clone(),
        got: usable.len(),
        need: span as usize + 2,
    })?;
    let prev = windowed_slope(series, top - 1, span).unwrap_or(window);
    let naive = usable.iter().map(|&(n, l)| l / n as f64).fold(f64::MIN, f64::max);
    Ok(ExponentEstimate {
        naive,
        window,
        fekete: None,
        constant: None,
        lo: window.min(prev),
        hi: window.max(prev),
        label: series.label.clone(),
    })
}

// ---------------------------------------------------------------------------
// Fekete limits

/// Sum of counts over the index window [center - k, center + k], None when
/// the window leaves the available range.
fn window_sum(series: &GrowthSeries, center: u32, k: u32) -> Option<u128> {
    if center < k || (center + k) as usize >= series.counts.len() {
        return None;
    }
    Some(
        ((center - k)..=(center + k))
            .map(|i| series.counts[i as usize] as u128)
            .sum(),
    )
}

/// Verifies the k-window multiplicative hypothesis on the available range,
/// both directions: a_n a_m <= sum_{|j|<=k} a_{n+m-j}, and the counterpart
/// a_{n+m} <= sum_{|j|<=k} a_{n+j} a_m that pins the limit finite (a
/// superexponential sequence like n! passes the first and fails the second).
fn check_fekete_hypothesis(series: &GrowthSeries, k: u32) -> Result<(u32, u32), GrowthError> {
    let top = (series.counts.len() - 1) as u32;
    let mut tested_hi = 0;
    for n in 1..=top {
        for m in n..=top {
            if n + m + k > top {
                break;
            }
            tested_hi = tested_hi.max(n + m);
            let lhs = series.counts[n as usize] as u128 * series.counts[m as usize] as u128;
            let rhs = window_sum(series, n + m, k).expect("window checked in range");
            if lhs > rhs {
                return Err(GrowthError::HypothesisViolated { n, m, lhs, rhs });
            }
            if n > k {
                let lhs2 = series.counts[(n + m) as usize] as u128;
                let rhs2: u128 = ((n - k)..=(n + k))
                    .map(|i| {
                        series.counts[i as usize] as u128 * series.counts[m as usize] as u128
                    })
                    .sum();
                if lhs2 > rhs2 {
                    return Err(GrowthError::HypothesisViolated { n, m, lhs: lhs2, rhs: rhs2 });
                }
            }
        }
    }
    Ok((2, tested_hi))
}

/// Fekete-limit estimate for a sequence satisfying the k-window hypothesis:
/// omega = lim log(a_1 + ... + a_n)/n, estimated as the sup of trailing
/// windowed slopes of the log partial sums.
pub fn fekete_limit(series: &GrowthSeries, k: u32) -> Result<ExponentEstimate, GrowthError> {
    let usable = usable_terms(series)?;
    check_fekete_hypothesis(series, k)?;
    let sums = cumulative(series);
    let top = usable.last().unwrap().0;
    let span = window_span(top);
    let mut best = f64::MIN;
    // Early cumulative windows overshoot; the sup runs over the last quarter.
    for hi in (top - (top / 4).max(1)).max(span + 1)..=top {
        if let Some(s) = windowed_slope(&sums, hi, span) {
            best = best.max(s);
        }
    }
    if best == f64::MIN {
        return Err(GrowthError::TooShort {
            label: series.label.clone(),
            got: usable.len(),
            need: span as usize + 2,
        });
    }
    let constant = usable
        .iter()
        .map(|&(n, l)| (l - best * n as f64).exp())
        .fold(f64::MIN, f64::max);
    let base = critical_exponent(series)?;
    Ok(ExponentEstimate {
        naive: base.naive,
        window: base.window,
        fekete: Some(best),
        constant: Some(constant),
        lo: base.window.min(best),
        hi: base.window.max(best),
        label: series.label.clone(),
    })
}

/// Smallest k <= k_max whose two-sided window hypothesis passes.
pub fn measured_fekete_k(series: &GrowthSeries, k_max: u32) -> Option<u32> {
    (0..=k_max).find(|&k| check_fekete_hypothesis(series, k).is_ok())
}

// ---------------------------------------------------------------------------
// Inequality reports

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Violation {
    /// Index tuple (n, m) or (s,) the inequality fails at.
    pub indices: Vec<u32>,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InequalityReport {
    pub id: String,
    /// Inclusive index range the check covered.
    pub range: (u32, u32),
    pub violations: Vec<Violation>,
    pub delta: Option<u32>,
    pub k: Option<u32>,
    pub m: Option<u32>,
    pub theta: Option<f64>,
}

impl InequalityReport {
    pub fn pass(&self) -> bool {
        self.violations.is_empty()
    }
}

/// V(s) <= sum_{k+j<=s} V(k) O(s-k-j) V(j) with the unit counted in every
/// O-annulus. Requires v at delta = 4M and o at delta = 8M.
pub fn check_threeunion(
    v: &GrowthSeries,
    o: &GrowthSeries,
    m: u32,
) -> Result<InequalityReport, GrowthError> {
    if v.delta != 4 * m {
        return Err(GrowthError::DeltaMismatch {
            label: v.label.clone(),
            got: v.delta,
            want: 4 * m,
        });
    }
    if o.delta != 8 * m {
        return Err(GrowthError::DeltaMismatch {
            label: o.label.clone(),
            got: o.delta,
            want: 8 * m,
        });
    }
    // Unit convention: 1 lies in every O-annulus, so counts floor at 1.
    let o_at = |r: u32| o.counts.get(r as usize).copied().unwrap_or(0).max(1) as u128;
    let top = (v.counts.len() - 1) as u32;
    let mut violations = Vec::new();
    for s in 0..=top {
        let lhs = v.counts[s as usize] as u128;
        let mut rhs = 0u128;
        for k in 0..=s {
            for j in 0..=(s - k) {
                rhs += v.counts[k as usize] as u128
                    * o_at(s - k - j)
                    * v.counts[j as usize] as u128;
            }
        }
        if lhs > rhs {
            violations.push(Violation {
                indices: vec![s],
                lhs: lhs as f64,
                rhs: rhs as f64,
            });
        }
    }
    Ok(InequalityReport {
        id: "threeunion".into(),
        range: (0, top),
        violations,
        delta: Some(v.delta),
        k: None,
        m: Some(m),
        theta: None,
    })
}

/// theta a_n a_m <= sum_{|j|<=k} a_{n+m+j} over the in-range pairs.
pub fn check_supermultiplicative(
    series: &GrowthSeries,
    k: u32,
    theta: f64,
) -> Result<InequalityReport, GrowthError> {
    if !(theta > 0.0 && theta <= 1.0) {
        return Err(GrowthError::BadTheta(theta));
    }
    let top = (series.counts.len() - 1) as u32;
    let mut violations = Vec::new();
    let mut hi = 0;
    for n in 1..=top {
        for m in n..=top {
            if n + m + k > top {
                break;
            }
            hi = hi.max(n + m);
            let lhs = theta
                * series.counts[n as usize] as f64
                * series.counts[m as usize] as f64;
            let rhs = window_sum(series, n + m, k).expect("window checked in range") as f64;
            if lhs > rhs * (1.0 + 1e-12) {
                violations.push(Violation { indices: vec![n, m], lhs, rhs });
            }
        }
    }
    Ok(InequalityReport {
        id: "supmultipl".into(),
        range: (2, hi),
        violations,
        delta: Some(series.delta),
        k: Some(k),
        m: None,
        theta: Some(theta),
    })
}

/// Smallest k <= k_max with a passing supermultiplicative report.
pub fn measured_supmult_k(series: &GrowthSeries, theta: f64, k_max: u32) -> Option<u32> {
    (0..=k_max).find(|&k| {
        check_supermultiplicative(series, k, theta)
            .map(|r| r.pass())
            .unwrap_or(false)
    })
}

// ---------------------------------------------------------------------------
// Purely exponential growth

#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum RatioVerdict {
    /// c1 <= a_n exp(-omega n) <= c2 over the stable window.
    Bounded { c1: f64, c2: f64, window: (u32, u32) },
    /// The ratio moves monotonically toward 0 or infinity across the window.
    Refuted { to_zero: bool, window: (u32, u32) },
}

/// Bounds the normalized ratio a_n exp(-omega n) over the trailing third.
pub fn purely_exponential_ratio(
    series: &GrowthSeries,
    omega: f64,
) -> Result<RatioVerdict, GrowthError> {
    if omega <= 0.0 {
        return Err(GrowthError::NonPositiveExponent(omega));
    }
    let usable = usable_terms(series)?;
    let top = usable.last().unwrap().0;
    let span = window_span(top);
    let w_lo = top - span;
    let ratios: Vec<f64> = usable
        .iter()
        .filter(|&&(n, _)| n >= w_lo && n <= top)
        .map(|&(n, l)| (l - omega * n as f64).exp())
        .collect();
    if ratios.len() < 2 {
        return Err(GrowthError::TooShort {
            label: series.label.clone(),
            got: ratios.len(),
            need: 2,
        });
    }
    let first = ratios[0];
    let last = *ratios.last().unwrap();
    let falling = ratios.windows(2).all(|w| w[1] <= w[0]);
    let rising = ratios.windows(2).all(|w| w[1] >= w[0]);
    if falling && last <= first * 0.9 {
        return Ok(RatioVerdict::Refuted { to_zero: true, window: (w_lo, top) });
    }
    if rising && last >= first / 0.9 {
        return Ok(RatioVerdict::Refuted { to_zero: false, window: (w_lo, top) });
    }
    let c1 = ratios.iter().cloned().fold(f64::MAX, f64::min);
    let c2 = ratios.iter().cloned().fold(f64::MIN, f64::max);
    Ok(RatioVerdict::Bounded { c1, c2, window: (w_lo, top) })
}

// ---------------------------------------------------------------------------
// Poincare partial sums

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PoincareReport {
    pub s: f64,
    /// partials[n] = sum_{j<=n} a_j exp(-s j).
    pub partials: Vec<f64>,
    /// Partial sums still grow at least half as fast as in the previous
    /// window: the finite proxy for divergence at s.
    pub divergent: bool,
    pub window: (u32, u32),
}

pub fn poincare_partial(series: &GrowthSeries, s: f64, n_cap: u32) -> PoincareReport {
    let top = ((series.counts.len() - 1) as u32).min(n_cap);
    let mut partials = Vec::with_capacity(top as usize + 1);
    let mut total = 0.0;
    for n in 0..=top {
        total += series.counts[n as usize] as f64 * (-s * n as f64).exp();
        partials.push(total);
    }
    let span = window_span(top).min(top / 2);
    let (divergent, window) = if span == 0 {
        (false, (0, top))
    } else {
        let recent = partials[top as usize] - partials[(top - span) as usize];
        let mid_hi = top - span;
        let mid_lo = mid_hi.saturating_sub(span);
        let mid = partials[mid_hi as usize] - partials[mid_lo as usize];
        (recent > 0.0 && recent >= 0.5 * mid, (mid_lo, top))
    };
    PoincareReport { s, partials, divergent, window }
}

// ---------------------------------------------------------------------------
// Growth tightness

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TightnessReport {
    pub gap: f64,
    /// (ambient.lo - sub.hi, ambient.hi - sub.lo).
    pub interval: (f64, f64),
    /// The whole interval sits above zero.
    pub tight: bool,
    pub sub_label: String,
    pub ambient_label: String,
}

const CONFIDENCE_SPREAD: f64 = 0.35;

pub fn tightness_report(
    sub: &ExponentEstimate,
    ambient: &ExponentEstimate,
) -> Result<TightnessReport, GrowthError> {
    for est in [sub, ambient] {
        if est.spread() > CONFIDENCE_SPREAD {
            return Err(GrowthError::LowConfidence {
                label: est.label.clone(),
                spread: est.spread(),
            });
        }
    }
    let interval = (ambient.lo - sub.hi, ambient.hi - sub.lo);
    Ok(TightnessReport {
        gap: ambient.window - sub.window,
        interval,
        tight: interval.0 > 0.0,
        sub_label: sub.label.clone(),
        ambient_label: ambient.label.clone(),
    })
}

// ---------------------------------------------------------------------------
// Density of contracting elements

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DensityReport {
    pub radius: u32,
    /// Orbit vertices within the radius.
    pub population: usize,
    /// Every stride-th element in id order; 1 when under the sampling cap.
    pub stride: usize,
    pub tested: usize,
    pub certified: usize,
    pub refuted: usize,
    pub undecided: usize,
    /// certified / tested.
    pub density: f64,
    pub label: String,
}

/// Deterministic sampling cap: balls at or under it are swept exhaustively.
const DENSITY_CAP: usize = 2400;

/// Per-element contraction certificates over the orbit ball. The identity
/// counts as refuted; scan errors land in the undecided bucket.
pub fn positive_density(ball: &SpaceGraph, radius: u32) -> Result<DensityReport, GrowthError> {
    if radius > ball.radius() {
        return Err(SpaceError::OutOfRadius { needed: radius, explored: ball.radius() }.into());
    }
    let ids: Vec<u32> = (0..ball.vertex_count() as u32)
        .filter(|&v| ball.in_orbit(v) && ball.dist0(v) <= radius)
        .collect();
    let population = ids.len();
    let stride = population.div_ceil(DENSITY_CAP).max(1);
    let opts = ScanOptions::default();
    let mut certified = 0;
    let mut refuted = 0;
    let mut undecided = 0;
    let mut tested = 0;
    for &v in ids.iter().step_by(stride) {
        tested += 1;
        match is_contracting_element_in(ball, ball.rep(v), &opts) {
            Ok(cert) if cert.status == CertificateStatus::CertifiedUpToRadius => certified += 1,
            Ok(_) => refuted += 1,
            Err(ContractingError::TrivialElement) => refuted += 1,
            Err(_) => undecided += 1,
        }
    }
    Ok(DensityReport {
        radius,
        population,
        stride,
        tested,
        certified,
        refuted,
        undecided,
        density: certified as f64 / tested as f64,
        label: format!("contracting density of {}", ball.space_label()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presentation::stock;
    use crate::space::build_ball;

    fn geometric(base: u64, top: u32) -> GrowthSeries {
        GrowthSeries {
            delta: 0,
            counts: (0..=top).map(|n| base.pow(n)).collect(),
            label: format!("{base}^n"),
        }
    }

    fn f2_series(top: u32) -> GrowthSeries {
        let mut counts = vec![1u64];
        counts.extend((1..=top).map(|n| 4 * 3u64.pow(n - 1)));
        GrowthSeries { delta: 0, counts, label: "F2 spheres".into() }
    }

    const LN3: f64 = 1.0986122886681098;

    #[test]
    fn count_series_partitions() {
        let ball = build_ball(&stock::cayley(stock::free2()), 6).unwrap();
        let full = count_series(&ball, 0, "all", |_, _| true).unwrap();
        let even = count_series(&ball, 0, "even", |b, v| b.dist0(v) % 2 == 0).unwrap();
        let odd = count_series(&ball, 0, "odd", |b, v| b.dist0(v) % 2 == 1).unwrap();
        for n in 0..full.counts.len() {
            assert_eq!(even.counts[n] + odd.counts[n], full.counts[n]);
        }
        assert_eq!(full.counts[6], 4 * 3u64.pow(5));
    }

    #[test]
    fn window_estimate_is_exact_on_f2() {
        let est = critical_exponent(&f2_series(12)).unwrap();
        assert!((est.window - LN3).abs() < 1e-12);
        assert!((est.lo - LN3).abs() < 1e-12 && (est.hi - LN3).abs() < 1e-12);
        // log(a_n)/n overshoots the slope at every finite n.
        assert!(est.naive > est.window);
    }

    #[test]
    fn short_series_rejected() {
        let s = GrowthSeries { delta: 0, counts: vec![1, 2, 3], label: "short".into() };
        assert!(matches!(
            critical_exponent(&s),
            Err(GrowthError::TooShort { need: 4, .. })
        ));
    }

    #[test]
    fn exponent_monotone_in_naive_field() {
        let small = GrowthSeries {
            delta: 0,
            counts: vec![1, 2, 4, 8, 16, 32],
            label: "2^n".into(),
        };
        let big = geometric(3, 5);
        let a = critical_exponent(&small).unwrap();
        let b = critical_exponent(&big).unwrap();
        assert!(a.naive <= b.naive);
    }

    #[test]
    fn fekete_geometric_equality() {
        let est = fekete_limit(&geometric(3, 12), 0).unwrap();
        let omega = est.fekete.unwrap();
        assert!((omega - LN3).abs() < 1e-3);
        assert!((est.constant.unwrap() - 1.0).abs() < 1e-2);
        assert!(est.lo <= omega && omega <= est.hi);
    }

    #[test]
    fn fekete_rejects_factorials() {
        let counts: Vec<u64> = (0..=9u32).map(|n| (1..=n.max(1) as u64).product()).collect();
        let s = GrowthSeries { delta: 0, counts, label: "n!".into() };
        match fekete_limit(&s, 0) {
            Err(GrowthError::HypothesisViolated { n, m, lhs, rhs }) => {
                // Re-checkable witness: a_2 = 2 > a_1 * a_1 = 1.
                assert_eq!((n, m, lhs, rhs), (1, 1, 2, 1));
            }
            other => panic!("expected violation, got {other:?}"),
        }
    }

    #[test]
    fn fekete_matches_window_on_f2_annuli() {
        let ball = build_ball(&stock::cayley(stock::free2()), 12).unwrap();
        let series = ball.growth_series(1);
        let k = measured_fekete_k(&series, 4).expect("some window passes");
        assert_eq!(k, 2);
        let est = fekete_limit(&series, k).unwrap();
        assert!((est.fekete.unwrap() - est.window).abs() < 0.02);
        assert!((est.fekete.unwrap() - LN3).abs() < 0.02);
    }

    #[test]
    fn threeunion_trivial_and_adversarial() {
        let unit = GrowthSeries { delta: 0, counts: vec![1], label: "unit".into() };
        let report = check_threeunion(&f2_series(8), &unit, 0).unwrap();
        assert!(report.pass());

        // With V(0) = 0 the unit decomposition is unavailable, so both the
        // n = 1 and n = 2 terms overshoot their convolution bounds.
        let bad = GrowthSeries { delta: 0, counts: vec![0, 1, 100], label: "spike".into() };
        let report = check_threeunion(&bad, &unit, 0).unwrap();
        assert_eq!(report.violations.len(), 2);
        assert_eq!(report.violations[1].indices, vec![2]);

        let wrong = GrowthSeries { delta: 3, counts: vec![1], label: "unit".into() };
        assert!(matches!(
            check_threeunion(&f2_series(8), &wrong, 0),
            Err(GrowthError::DeltaMismatch { .. })
        ));
    }

    #[test]
    fn supermultiplicative_cases() {
        let report = check_supermultiplicative(&geometric(3, 10), 0, 1.0).unwrap();
        assert!(report.pass());

        let falling = GrowthSeries {
            delta: 0,
            counts: vec![100, 100, 50, 25, 12, 6, 3, 1],
            label: "decay".into(),
        };
        let report = check_supermultiplicative(&falling, 0, 1.0).unwrap();
        assert!(!report.pass());
        assert!(check_supermultiplicative(&falling, 0, 0.0).is_err());
    }

    #[test]
    fn ratio_window_on_f2_is_four_thirds() {
        match purely_exponential_ratio(&f2_series(12), LN3).unwrap() {
            RatioVerdict::Bounded { c1, c2, .. } => {
                assert!((c1 - 4.0 / 3.0).abs() < 1e-9);
                assert!((c2 - 4.0 / 3.0).abs() < 1e-9);
            }
            other => panic!("expected bounds, got {other:?}"),
        }
    }

    #[test]
    fn ratio_refutes_polynomial_growth() {
        let grid = GrowthSeries {
            delta: 0,
            counts: (0..=30).map(|n| if n == 0 { 1 } else { 4 * n }).collect(),
            label: "Z^2 spheres".into(),
        };
        match purely_exponential_ratio(&grid, 0.5).unwrap() {
            RatioVerdict::Refuted { to_zero, .. } => assert!(to_zero),
            other => panic!("expected refutation, got {other:?}"),
        }
        assert!(purely_exponential_ratio(&grid, 0.0).is_err());
    }

    #[test]
    fn poincare_divergence_flag() {
        let series = f2_series(12);
        let at_omega = poincare_partial(&series, LN3, 12);
        assert!(at_omega.divergent);
        // Constant increments of 4/3 per step above n = 0.
        let last = *at_omega.partials.last().unwrap();
        assert!((last - (1.0 + 12.0 * 4.0 / 3.0)).abs() < 1e-9);
        let beyond = poincare_partial(&series, LN3 + 0.5, 12);
        assert!(!beyond.divergent);
    }

    #[test]
    fn tightness_of_cyclic_subgroup() {
        let ball = build_ball(&stock::cayley(stock::free2()), 12).unwrap();
        let full = count_series(&ball, 0, "all", |_, _| true).unwrap();
        let axis = count_series(&ball, 0, "a-powers", |b, v| {
            b.rep(v).letters().iter().all(|l| l.generator() == 0)
        })
        .unwrap();
        let report = tightness_report(
            &critical_exponent(&axis).unwrap(),
            &critical_exponent(&full).unwrap(),
        )
        .unwrap();
        assert!(report.tight);
        assert!((report.gap - LN3).abs() < 1e-9);
    }

    #[test]
    fn density_zero_on_grid() {
        let ball = build_ball(&stock::cayley(stock::grid()), 4).unwrap();
        let report = positive_density(&ball, 4).unwrap();
        assert_eq!(report.stride, 1);
        assert_eq!(report.tested, report.population);
        assert_eq!(report.certified, 0);
        assert_eq!(report.density, 0.0);
        assert_eq!(report.refuted + report.undecided, report.tested);
    }
}
