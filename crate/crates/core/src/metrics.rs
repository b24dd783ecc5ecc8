//! NOMDU / NOMDL from incident logs, with Monte Carlo error bars.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::sim_engine::{count_ddf_compatible, DlCause, DlIncident, DuCause, DuScope, EventCounters, IncidentLog, ValidationMode};

/// Contribution of one DU incident: bytes·duration / (usable·mission).
pub fn nomdu_incident(unavailable_bytes: f64, duration: f64, usable_bytes: f64, mission: f64) -> Result<f64> {
    if duration > mission {
        return Err(Error::Accounting(format!("duration {duration} h exceeds mission {mission} h")));
    }
    if duration < 0.0 || unavailable_bytes < 0.0 || !(usable_bytes > 0.0) || !(mission > 0.0) {
        return Err(Error::Accounting("negative bytes/duration or non-positive capacity/mission".into()));
    }
    Ok(unavailable_bytes * duration / (usable_bytes * mission))
}

pub fn nomdl_incident(lost_bytes: f64, usable_bytes: f64) -> f64 {
    lost_bytes / usable_bytes
}

/// Splits a DL incident by survivability: `(1-dos)` of it is lost for good, the
/// rest is unavailable for `recovery_time`. Returns `(nomdl_part, nomdu_part)`.
pub fn apply_dos(dl: &DlIncident, dos: f64, recovery_time: f64, usable_bytes: f64, mission: f64) -> (f64, f64) {
    let nomdl = (1.0 - dos) * dl.lost_bytes / usable_bytes;
    let nomdu = dos * dl.lost_bytes * recovery_time / (usable_bytes * mission);
    (nomdl, nomdu)
}

pub fn z_value(confidence: f64) -> Result<f64> {
    match confidence {
        c if c == 0.90 => Ok(1.645),
        c if c == 0.95 => Ok(1.960),
        c if c == 0.99 => Ok(2.576),
        c => Err(Error::Parameter(format!("confidence must be 0.90, 0.95 or 0.99, got {c}"))),
    }
}

/// Half-width of the normal confidence interval of the mean.
pub fn mc_error(per_array_values: &[f64], confidence: f64) -> Result<f64> {
    let z = z_value(confidence)?;
    let n = per_array_values.len();
    if n < 2 {
        return Err(Error::Parameter(format!("need at least 2 values for an error estimate, got {n}")));
    }
    let mean = exact_order_sum(per_array_values) / n as f64;
    let sq: Vec<f64> = per_array_values.iter().map(|v| (v - mean) * (v - mean)).collect();
    let sd = (exact_order_sum(&sq) / (n - 1) as f64).sqrt();
    Ok(sd * z / (n as f64).sqrt())
}

/// Sum in sorted order so the result does not depend on input order.
fn exact_order_sum(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v.iter().fold(0.0, |a, b| a + b)
}

/// Unavailable byte-hours of one array with overlaps merged: while any
/// whole-array interval is open it alone counts (the largest one); otherwise
/// each stripe counts once at its largest open magnitude.
pub fn merged_du_byte_hours(log: &IncidentLog) -> f64 {
    let mut points: Vec<(f64, bool, usize)> = Vec::with_capacity(log.du_incidents.len() * 2);
    for (i, d) in log.du_incidents.iter().enumerate() {
        points.push((d.start, true, i));
        points.push((d.end, false, i));
    }
    points.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut whole: Vec<f64> = Vec::new();
    let mut stripes: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    let rate = |whole: &Vec<f64>, stripes: &BTreeMap<u64, Vec<f64>>| -> f64 {
        let r = if whole.is_empty() {
            stripes.values().map(|v| v.iter().cloned().fold(0.0, f64::max)).fold(0.0, |a, b| a + b)
        } else {
            whole.iter().cloned().fold(0.0, f64::max)
        };
        r.min(log.usable_bytes)
    };
    let remove = |v: &mut Vec<f64>, x: f64| {
        if let Some(p) = v.iter().position(|&y| y == x) {
            v.swap_remove(p);
        }
    };

    let mut area = 0.0;
    let mut prev = 0.0;
    for (t, is_start, i) in points {
        area += rate(&whole, &stripes) * (t - prev);
        prev = t;
        let d = &log.du_incidents[i];
        match (d.scope, is_start) {
            (DuScope::Array, true) => whole.push(d.bytes),
            (DuScope::Array, false) => remove(&mut whole, d.bytes),
            (DuScope::Stripe(v), true) => stripes.entry(v).or_default().push(d.bytes),
            (DuScope::Stripe(v), false) => {
                if let Some(list) = stripes.get_mut(&v) {
                    remove(list, d.bytes);
                    if list.is_empty() {
                        stripes.remove(&v);
                    }
                }
            }
        }
    }
    area
}

pub fn array_nomdu(log: &IncidentLog) -> f64 {
    merged_du_byte_hours(log) / (log.usable_bytes * log.mission)
}

pub fn array_nomdl(log: &IncidentLog) -> f64 {
    log.dl_incidents.iter().map(|d| (1.0 - log.dos) * d.lost_bytes / log.usable_bytes).fold(0.0, |a, b| a + b)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IncidentCounts {
    pub adl: u64,
    pub sdl: u64,
    pub adu: u64,
    pub sdu: u64,
    /// DL incidents of a single-row-parity code; `None` for other codes.
    pub ddf: Option<u64>,
    /// DL incidents of a double-row-parity code; `None` for other codes.
    pub tdf: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FleetResult {
    pub per_array: Vec<IncidentLog>,
    pub usable_bytes: f64,
    pub mission: f64,
    pub confidence: f64,
    pub counts: IncidentCounts,
    pub counters: EventCounters,
    pub nomdu: f64,
    pub nomdl: f64,
    pub nomdu_err: f64,
    pub nomdl_err: f64,
    /// NOMDL split by cause.
    pub nomdl_adl: f64,
    pub nomdl_sdl: f64,
}

pub fn aggregate(per_array: Vec<IncidentLog>, confidence: f64) -> Result<FleetResult> {
    z_value(confidence)?;
    let (mission, usable_each, dos, r) = match per_array.first() {
        Some(l) => (l.mission, l.usable_bytes, l.dos, l.row_parities),
        None => (0.0, 0.0, 0.0, 0),
    };
    if per_array.iter().any(|l| l.mission != mission || l.usable_bytes != usable_each || l.dos != dos || l.row_parities != r) {
        return Err(Error::Parameter("logs disagree on mission, capacity, dos or code".into()));
    }
    let du: Vec<f64> = per_array.iter().map(array_nomdu).collect();
    let dl: Vec<f64> = per_array.iter().map(array_nomdl).collect();
    let dl_by = |cause: DlCause| -> Vec<f64> {
        per_array
            .iter()
            .map(|l| l.dl_incidents.iter().filter(|d| d.cause == cause).map(|d| (1.0 - dos) * d.lost_bytes / usable_each).fold(0.0, |a, b| a + b))
            .collect()
    };
    let n = per_array.len();
    let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { exact_order_sum(v) / v.len() as f64 };
    let err = |v: &[f64]| if v.len() < 2 { Ok(0.0) } else { mc_error(v, confidence) };

    let mut counts = IncidentCounts::default();
    let mut counters = EventCounters::default();
    for l in &per_array {
        counts.adl += l.count_dl(DlCause::Adl) as u64;
        counts.sdl += l.count_dl(DlCause::Sdl) as u64;
        counts.adu += l.count_du(DuCause::Adu) as u64;
        counts.sdu += l.count_du(DuCause::Sdu) as u64;
        counters += l.counters;
    }
    if n > 0 && r == 1 {
        counts.ddf = Some(per_array.iter().map(|l| count_ddf_compatible(l, ValidationMode::Raid5)).sum::<Result<usize>>()? as u64);
    }
    if n > 0 && r == 2 {
        counts.tdf = Some(per_array.iter().map(|l| count_ddf_compatible(l, ValidationMode::Raid6)).sum::<Result<usize>>()? as u64);
    }

    Ok(FleetResult {
        usable_bytes: usable_each * n as f64,
        mission,
        confidence,
        counts,
        counters,
        nomdu: mean(&du),
        nomdl: mean(&dl),
        nomdu_err: err(&du)?,
        nomdl_err: err(&dl)?,
        nomdl_adl: mean(&dl_by(DlCause::Adl)),
        nomdl_sdl: mean(&dl_by(DlCause::Sdl)),
        per_array,
    })
}

/// Table-style presentation: bytes per usable TB.
pub fn per_tb(value: f64) -> f64 {
    value * 1e12
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim_engine::DuIncident;
    use proptest::prelude::*;

    const TB: f64 = 1e12;

    fn log(usable: f64, mission: f64, dos: f64) -> IncidentLog {
        IncidentLog::empty(0, mission, usable, dos, 1)
    }

    fn du(start: f64, end: f64, bytes: f64, scope: DuScope) -> DuIncident {
        DuIncident { start, end, bytes, cause: DuCause::Adu, scope }
    }

    fn dl(lost: f64) -> DlIncident {
        DlIncident { time: 1.0, lost_bytes: lost, cause: DlCause::Adl, recovery_hours: None }
    }

    #[test]
    fn nomdu_incident_examples() {
        let v = nomdu_incident(7.0 * TB, 1.0, 7.0 * TB, 87600.0).unwrap();
        assert!((v - 1.0 / 87600.0).abs() < 1e-18);
        assert!((v - 1.142e-5).abs() < 1e-8);
        assert_eq!(nomdu_incident(5.0, 10.0, 5.0, 10.0).unwrap(), 1.0);
        assert_eq!(nomdu_incident(5.0, 0.0, 5.0, 10.0).unwrap(), 0.0);
        assert!(matches!(nomdu_incident(5.0, 11.0, 5.0, 10.0), Err(Error::Accounting(_))));
    }

    #[test]
    fn nomdl_incident_examples() {
        assert_eq!(nomdl_incident(7.0 * TB, 7000.0 * TB), 0.001);
        let v = nomdl_incident(128e3, 7000.0 * TB);
        assert!((v - 1.83e-11).abs() < 1e-13);
        assert_eq!(nomdl_incident(0.0, 7.0 * TB), 0.0);
    }

    #[test]
    fn dos_split_examples() {
        let d = dl(7.0 * TB);
        assert_eq!(apply_dos(&d, 0.0, 40.0, 7.0 * TB, 87600.0), (1.0, 0.0));
        let (a, b) = apply_dos(&d, 1.0, 40.0, 7.0 * TB, 87600.0);
        assert_eq!(a, 0.0);
        assert!((b - 40.0 / 87600.0).abs() < 1e-18);
        let (a, b) = apply_dos(&d, 0.5, 40.0, 7.0 * TB, 87600.0);
        assert_eq!(a, 0.5);
        assert!((b - 2.28e-4).abs() < 1e-6);
    }

    #[test]
    fn mc_error_examples() {
        assert_eq!(mc_error(&[3.0; 10], 0.95).unwrap(), 0.0);
        assert!(mc_error(&[1.0], 0.95).is_err());
        assert!(mc_error(&[1.0, 2.0], 0.5).is_err());
        // alternating values have sample sd exactly 0.01 * sqrt(n/(n-1))
        let n = 1000;
        let vals: Vec<f64> = (0..n).map(|i| if i % 2 == 0 { 0.01 } else { -0.01 }).collect();
        let sd = 0.01 * (n as f64 / (n - 1) as f64).sqrt();
        let e = mc_error(&vals, 0.95).unwrap();
        assert!((e - 1.96 * sd / (n as f64).sqrt()).abs() < 1e-15);
        assert!((1.96 * 0.01 / (n as f64).sqrt() - 6.20e-4).abs() < 1e-6);
    }

    #[test]
    fn quadrupling_n_halves_error() {
        let base: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).sin()).collect();
        let four: Vec<f64> = base.iter().cycle().take(200).cloned().collect();
        let e1 = mc_error(&base, 0.99).unwrap();
        let e4 = mc_error(&four, 0.99).unwrap();
        // same empirical distribution; only the (n-1) correction differs
        let corr = ((50.0 - 1.0) / 50.0 * 200.0 / 199.0f64).sqrt();
        assert!((e4 / e1 - 0.5 * corr).abs() < 1e-12);
    }

    #[test]
    fn aggregate_examples() {
        let r = aggregate(Vec::new(), 0.95).unwrap();
        assert_eq!((r.nomdu, r.nomdl), (0.0, 0.0));
        let mut lost = log(7.0 * TB, 87600.0, 0.0);
        lost.dl_incidents.push(dl(7.0 * TB));
        let r = aggregate(vec![lost, log(7.0 * TB, 87600.0, 0.0)], 0.95).unwrap();
        assert_eq!(r.nomdl, 0.5);
        assert_eq!(r.counts.adl, 1);
        assert_eq!(r.counts.ddf, Some(1));
        assert_eq!(r.counts.tdf, None);
        let bad = aggregate(vec![log(1.0, 10.0, 0.0), log(1.0, 20.0, 0.0)], 0.95);
        assert!(matches!(bad, Err(Error::Parameter(_))));
    }

    #[test]
    fn whole_array_supersedes_stripes() {
        let mut l = log(100.0, 10.0, 0.0);
        l.du_incidents = vec![
            du(0.0, 4.0, 100.0, DuScope::Array),
            du(2.0, 6.0, 5.0, DuScope::Stripe(1)),
            du(3.0, 5.0, 5.0, DuScope::Stripe(1)),
            du(5.0, 7.0, 7.0, DuScope::Stripe(2)),
        ];
        // [0,4) whole array, [4,5) stripe 1, [5,6) stripes 1+2, [6,7) stripe 2
        let want = 400.0 + 5.0 + 12.0 + 7.0;
        assert!((merged_du_byte_hours(&l) - want).abs() < 1e-12);
    }

    /// Independent reference: evaluate the merge rule on every elementary segment.
    fn brute_force_byte_hours(l: &IncidentLog) -> f64 {
        let mut ts: Vec<f64> = l.du_incidents.iter().flat_map(|d| [d.start, d.end]).collect();
        ts.sort_by(f64::total_cmp);
        ts.dedup();
        let mut total = 0.0;
        for w in ts.windows(2) {
            let (a, b) = (w[0], w[1]);
            let active: Vec<&DuIncident> = l.du_incidents.iter().filter(|d| d.start <= a && d.end >= b).collect();
            let whole = active.iter().filter(|d| d.scope == DuScope::Array).map(|d| d.bytes).fold(None, |m: Option<f64>, x| Some(m.map_or(x, |m| m.max(x))));
            let rate = match whole {
                Some(w) => w,
                None => {
                    let mut per: Vec<(u64, f64)> = Vec::new();
                    for d in &active {
                        if let DuScope::Stripe(v) = d.scope {
                            match per.iter_mut().find(|(s, _)| *s == v) {
                                Some(e) => e.1 = e.1.max(d.bytes),
                                None => per.push((v, d.bytes)),
                            }
                        }
                    }
                    per.iter().map(|e| e.1).sum()
                }
            };
            total += rate.min(l.usable_bytes) * (b - a);
        }
        total
    }

    fn arb_log() -> impl Strategy<Value = IncidentLog> {
        let inc = (0.0f64..100.0, 0.0f64..30.0, 1.0f64..50.0, prop_oneof![1 => Just(None), 3 => (0u64..5).prop_map(Some)])
            .prop_map(|(s, d, b, st)| {
                let end = (s + d).min(100.0);
                DuIncident {
                    start: s,
                    end: if end > s { end } else { (s + 1e-3).min(100.0) },
                    bytes: b,
                    cause: DuCause::Sdu,
                    scope: st.map_or(DuScope::Array, DuScope::Stripe),
                }
            });
        // an array never loses more than it holds
        let dls = prop::collection::vec((0.0f64..12.0).prop_map(dl), 0..5);
        (prop::collection::vec(inc, 0..100), dls, 0.0f64..=1.0).prop_map(|(du, dl, dos)| {
            let mut l = log(60.0, 100.0, dos);
            l.du_incidents = du;
            l.dl_incidents = dl;
            l
        })
    }

    proptest! {
        #[test]
        fn sweep_matches_brute_force(l in arb_log()) {
            let a = merged_du_byte_hours(&l);
            let b = brute_force_byte_hours(&l);
            prop_assert!((a - b).abs() <= 1e-9 * b.max(1.0), "{} vs {}", a, b);
        }

        #[test]
        fn metrics_stay_in_unit_interval(mut logs in prop::collection::vec(arb_log(), 1..8), dos in 0.0f64..=1.0) {
            logs.iter_mut().for_each(|l| l.dos = dos);
            let r = aggregate(logs, 0.95).unwrap();
            prop_assert!((0.0..=1.0).contains(&r.nomdu));
            prop_assert!((0.0..=1.0).contains(&r.nomdl));
        }

        #[test]
        fn full_survivability_means_no_loss(mut logs in prop::collection::vec(arb_log(), 1..8)) {
            logs.iter_mut().for_each(|l| l.dos = 1.0);
            prop_assert_eq!(aggregate(logs, 0.9).unwrap().nomdl, 0.0);
        }

        #[test]
        fn permutation_invariant(logs in prop::collection::vec(arb_log(), 2..8), rot in 0usize..8) {
            let logs: Vec<_> = logs.into_iter().map(|mut l| { l.dos = 0.25; l }).collect();
            let mut other = logs.clone();
            let k = rot % other.len();
            other.rotate_left(k);
            other.reverse();
            let a = aggregate(logs, 0.95).unwrap();
            let b = aggregate(other, 0.95).unwrap();
            prop_assert_eq!(a.nomdu, b.nomdu);
            prop_assert_eq!(a.nomdl, b.nomdl);
            prop_assert_eq!(a.nomdu_err, b.nomdu_err);
        }

        #[test]
        fn error_scales_with_root_n(vals in prop::collection::vec(-1.0f64..1.0, 2..40)) {
            let n = vals.len() as f64;
            let four: Vec<f64> = vals.iter().flat_map(|&v| [v, v, v, v]).collect();
            let e1 = mc_error(&vals, 0.95).unwrap();
            let e4 = mc_error(&four, 0.95).unwrap();
            let corr = ((n - 1.0) / n * (4.0 * n) / (4.0 * n - 1.0)).sqrt();
            prop_assert!((e4 - 0.5 * corr * e1).abs() <= 1e-12 * e1.max(1e-300));
        }
    }
}
