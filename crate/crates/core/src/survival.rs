//! Null-model martingale residuals and the two-group Cox model.

use serde::{Deserialize, Serialize};

use crate::data::TrialDataset;
use crate::error::{Error, Result};

/// z-quantile for two-sided 95% normal-approximation intervals.
pub const Z_95: f64 = 1.96;

const COX_SCORE_TOL: f64 = 1e-10;
const COX_MAX_ITER: usize = 50;

/// Nelson–Aalen cumulative hazard of the pooled sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NullHazardModel {
    /// Ascending distinct event times.
    pub event_times: Vec<f64>,
    /// Λ̂ just after each event time.
    pub cumhaz: Vec<f64>,
}

fn check_survival(times: &[f64], events: &[bool]) -> Result<()> {
    if times.len() != events.len() {
        return Err(Error::DimensionMismatch {
            expected: times.len(),
            found: events.len(),
        });
    }
    if let Some(t) = times.iter().find(|t| !(**t > 0.0 && t.is_finite())) {
        return Err(Error::Validation(format!("time > 0 required (got {t})")));
    }
    Ok(())
}

impl NullHazardModel {
    pub fn fit(times: &[f64], events: &[bool]) -> Result<Self> {
        check_survival(times, events)?;
        let mut order: Vec<usize> = (0..times.len()).collect();
        order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));
        let n = times.len();
        let mut event_times = Vec::new();
        let mut cumhaz = Vec::new();
        let mut running = 0.0;
        let mut pos = 0;
        while pos < n {
            let t = times[order[pos]];
            let at_risk = n - pos;
            let mut end = pos;
            let mut deaths = 0usize;
            while end < n && times[order[end]] == t {
                deaths += usize::from(events[order[end]]);
                end += 1;
            }
            if deaths > 0 {
                running += deaths as f64 / at_risk as f64;
                event_times.push(t);
                cumhaz.push(running);
            }
            pos = end;
        }
        if event_times.is_empty() {
            return Err(Error::InvalidArgument(
                "no events observed; martingale residuals are degenerate".into(),
            ));
        }
        Ok(NullHazardModel {
            event_times,
            cumhaz,
        })
    }

    /// Right-continuous step lookup: includes the jump at `t` itself.
    pub fn cumhaz_at(&self, t: f64) -> f64 {
        let k = self.event_times.partition_point(|&e| e <= t);
        if k == 0 {
            0.0
        } else {
            self.cumhaz[k - 1]
        }
    }
}

/// Mᵢ = eventᵢ − Λ̂(timeᵢ) under the covariate-free model.
pub fn martingale_residuals_raw(times: &[f64], events: &[bool]) -> Result<Vec<f64>> {
    let model = NullHazardModel::fit(times, events)?;
    Ok(times
        .iter()
        .zip(events)
        .map(|(&t, &e)| f64::from(u8::from(e)) - model.cumhaz_at(t))
        .collect())
}

pub fn martingale_residuals(data: &TrialDataset) -> Result<Vec<f64>> {
    let (times, events) = data.survival_outcomes()?;
    martingale_residuals_raw(&times, &events)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HazardRatioReport {
    pub hr: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub log_hr: f64,
    pub se_log_hr: f64,
    pub n_used: usize,
    pub n_events: usize,
}

impl HazardRatioReport {
    fn from_estimate(log_hr: f64, se_log_hr: f64, n_used: usize, n_events: usize) -> Self {
        HazardRatioReport {
            hr: log_hr.exp(),
            ci_low: (log_hr - Z_95 * se_log_hr).exp(),
            ci_high: (log_hr + Z_95 * se_log_hr).exp(),
            log_hr,
            se_log_hr,
            n_used,
            n_events,
        }
    }

    /// `HR & (low,high)` at two decimals.
    pub fn format_row(&self) -> String {
        format!("{:.2} & ({:.2},{:.2})", self.hr, self.ci_low, self.ci_high)
    }

    pub fn covers(&self, hr: f64) -> bool {
        self.ci_low <= hr && hr <= self.ci_high
    }
}

/// Risk-set tallies at each distinct event time.
struct EventTable {
    /// (events, group-1 events, at risk in group 0, at risk in group 1)
    rows: Vec<(f64, f64, f64, f64)>,
}

impl EventTable {
    fn build(times: &[f64], events: &[bool], group: &[bool]) -> Self {
        let n = times.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));
        let mut at_risk1 = group.iter().filter(|&&g| g).count();
        let mut at_risk0 = n - at_risk1;
        let mut rows = Vec::new();
        let mut pos = 0;
        while pos < n {
            let t = times[order[pos]];
            let mut end = pos;
            let (mut d, mut d1, mut leave0, mut leave1) = (0usize, 0usize, 0usize, 0usize);
            while end < n && times[order[end]] == t {
                let i = order[end];
                if events[i] {
                    d += 1;
                    d1 += usize::from(group[i]);
                }
                if group[i] {
                    leave1 += 1;
                } else {
                    leave0 += 1;
                }
                end += 1;
            }
            if d > 0 {
                rows.push((d as f64, d1 as f64, at_risk0 as f64, at_risk1 as f64));
            }
            at_risk0 -= leave0;
            at_risk1 -= leave1;
            pos = end;
        }
        EventTable { rows }
    }

    /// (log partial likelihood, score, observed information) under Breslow ties.
    fn evaluate(&self, beta: f64) -> (f64, f64, f64) {
        let eb = beta.exp();
        let (mut ll, mut score, mut info) = (0.0, 0.0, 0.0);
        for &(d, d1, r0, r1) in &self.rows {
            let denom = r0 + r1 * eb;
            let p = r1 * eb / denom;
            ll += beta * d1 - d * denom.ln();
            score += d1 - d * p;
            info += d * p * (1.0 - p);
        }
        (ll, score, info)
    }

    /// The score at β → ±∞ vanishes exactly when the likelihood is monotone.
    fn is_monotone(&self) -> bool {
        let at_plus: f64 = self
            .rows
            .iter()
            .map(|&(d, d1, _, r1)| d1 - if r1 > 0.0 { d } else { 0.0 })
            .sum();
        let at_minus: f64 = self
            .rows
            .iter()
            .map(|&(d, d1, r0, _)| d1 - if r0 > 0.0 { 0.0 } else { d })
            .sum();
        at_plus == 0.0 || at_minus == 0.0
    }
}

/// Single-coefficient Cox model for the group indicator (group = true is the
/// numerator of the hazard ratio). Breslow ties; Newton–Raphson from β = 0.
pub fn fit_cox_two_group(times: &[f64], events: &[bool], group: &[bool]) -> Result<HazardRatioReport> {
    check_survival(times, events)?;
    if group.len() != times.len() {
        return Err(Error::DimensionMismatch {
            expected: times.len(),
            found: group.len(),
        });
    }
    for arm in [false, true] {
        let has_event = events.iter().zip(group).any(|(&e, &g)| e && g == arm);
        if !has_event {
            return Err(Error::InvalidArgument(format!(
                "group {} has no events; hazard ratio is not estimable",
                u8::from(arm)
            )));
        }
    }
    let table = EventTable::build(times, events, group);
    if table.is_monotone() {
        return Err(Error::Convergence(
            "monotone partial likelihood: the hazard ratio estimate is infinite".into(),
        ));
    }
    let n_events = events.iter().filter(|&&e| e).count();

    let mut beta = 0.0;
    let (mut ll, mut score, mut info) = table.evaluate(beta);
    for _ in 0..COX_MAX_ITER {
        if score.abs() < COX_SCORE_TOL {
            return Ok(HazardRatioReport::from_estimate(beta, info.sqrt().recip(), times.len(), n_events));
        }
        if !(info > 0.0) {
            return Err(Error::Convergence("partial-likelihood information is not positive".into()));
        }
        let mut step = score / info;
        let mut next = table.evaluate(beta + step);
        let mut halvings = 0;
        while next.0 < ll && halvings < 40 {
            step *= 0.5;
            next = table.evaluate(beta + step);
            halvings += 1;
        }
        if step.abs() <= 1e-15 * (1.0 + beta.abs()) {
            // at floating-point resolution of β
            beta += step;
            let info = next.2;
            return Ok(HazardRatioReport::from_estimate(beta, info.sqrt().recip(), times.len(), n_events));
        }
        beta += step;
        (ll, score, info) = next;
    }
    if score.abs() < COX_SCORE_TOL {
        return Ok(HazardRatioReport::from_estimate(beta, info.sqrt().recip(), times.len(), n_events));
    }
    Err(Error::Convergence(format!(
        "Cox Newton–Raphson did not converge in {COX_MAX_ITER} iterations (|score| = {:e})",
        score.abs()
    )))
}

/// Score of the two-group Breslow partial likelihood at `beta`.
pub fn cox_score(times: &[f64], events: &[bool], group: &[bool], beta: f64) -> f64 {
    EventTable::build(times, events, group).evaluate(beta).1
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_subject_hand_example() {
        // Λ̂ jumps 1/2 at t = 1 and 1/1 at t = 2
        let m = NullHazardModel::fit(&[1.0, 2.0], &[true, true]).unwrap();
        assert_eq!(m.cumhaz, vec![0.5, 1.5]);
        let r = martingale_residuals_raw(&[1.0, 2.0], &[true, true]).unwrap();
        assert_eq!(r, vec![0.5, -0.5]);
    }

    #[test]
    fn early_censoring_has_zero_residual() {
        let r = martingale_residuals_raw(&[0.5, 1.0, 2.0], &[false, true, true]).unwrap();
        assert_eq!(r[0], 0.0);
    }

    #[test]
    fn censored_at_event_time_uses_post_jump_value() {
        let times = [1.0, 1.0, 3.0];
        let events = [true, false, true];
        let r = martingale_residuals_raw(&times, &events).unwrap();
        assert!((r[1] + 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn no_events_is_error() {
        assert!(martingale_residuals_raw(&[1.0, 2.0], &[false, false]).is_err());
    }

    #[test]
    fn cumhaz_is_non_decreasing_step() {
        let times = [3.0, 1.0, 4.0, 1.0, 5.0, 9.0, 2.0, 6.0];
        let events = [true, true, false, true, true, false, true, true];
        let m = NullHazardModel::fit(&times, &events).unwrap();
        assert!(m.cumhaz.windows(2).all(|w| w[0] <= w[1]));
        assert!(m.cumhaz[0] >= 0.0);
        assert_eq!(m.cumhaz_at(0.5), 0.0);
        assert_eq!(m.cumhaz_at(1.0), m.cumhaz[0]);
        assert_eq!(m.cumhaz_at(1.5), m.cumhaz[0]);
    }

    #[test]
    fn identical_groups_give_unit_hazard_ratio() {
        let base_t = [2.0, 3.5, 1.2, 7.0, 4.4, 5.1];
        let base_e = [true, true, false, true, true, false];
        let times: Vec<f64> = base_t.iter().chain(&base_t).copied().collect();
        let events: Vec<bool> = base_e.iter().chain(&base_e).copied().collect();
        let group: Vec<bool> = (0..12).map(|i| i >= 6).collect();
        let r = fit_cox_two_group(&times, &events, &group).unwrap();
        assert!((r.hr - 1.0).abs() < 1e-6);
        assert!(r.ci_low <= r.hr && r.hr <= r.ci_high);
    }

    #[test]
    fn separated_groups_are_monotone() {
        // every group-1 subject dies before any group-0 subject
        let times = [1.0, 2.0, 3.0, 4.0];
        let events = [true, true, true, true];
        let group = [true, true, false, false];
        let err = fit_cox_two_group(&times, &events, &group).unwrap_err();
        assert!(matches!(err, Error::Convergence(_)));
    }

    #[test]
    fn group_without_events_is_error() {
        let err = fit_cox_two_group(&[1.0, 2.0, 3.0], &[true, false, true], &[false, true, false]);
        assert!(err.is_err());
    }

    #[test]
    fn row_formatting() {
        let r = HazardRatioReport {
            hr: 0.75,
            ci_low: 0.69,
            ci_high: 0.82,
            log_hr: 0.75f64.ln(),
            se_log_hr: 0.04,
            n_used: 100,
            n_events: 50,
        };
        assert_eq!(r.format_row(), "0.75 & (0.69,0.82)");
    }

    #[test]
    fn interval_matches_definition() {
        let r = HazardRatioReport::from_estimate(-0.3, 0.1, 10, 5);
        assert_eq!(r.ci_low, (-0.3f64 - 1.96 * 0.1).exp());
        assert_eq!(r.ci_high, (-0.3f64 + 1.96 * 0.1).exp());
        assert!(r.ci_low <= r.hr && r.hr <= r.ci_high);
    }
}
