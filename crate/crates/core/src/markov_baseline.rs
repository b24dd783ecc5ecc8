//! Continuous-time Markov model of a RAID5 array with LSEs and human error,
//! with exponential rates matched to the Weibull inputs.
//!
//! The transient solution steps the exact propagator `exp(A h)` of the
//! augmented system (probabilities, their time integrals, and inflow into
//! loss states). Matched repair rates reach 1e5 per hour next to failure
//! rates near 1e-6 per hour, which is far too stiff for an explicit
//! Runge-Kutta scheme.

use crate::array_config::{CodeConfig, DiskModel, PolicyConfig};
use crate::distributions::{match_exponential_rate, WeibullParams};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MarkovState {
    Op,
    Exp,
    ExpLse,
    ExpR,
    Du,
    DlFf,
    DlFlse,
}

pub const STATES: [MarkovState; 7] =
    [MarkovState::Op, MarkovState::Exp, MarkovState::ExpLse, MarkovState::ExpR, MarkovState::Du, MarkovState::DlFf, MarkovState::DlFlse];

impl MarkovState {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            MarkovState::Op => "OP",
            MarkovState::Exp => "EXP",
            MarkovState::ExpLse => "EXP_LSE",
            MarkovState::ExpR => "EXP_r",
            MarkovState::Du => "DU",
            MarkovState::DlFf => "DL_FF",
            MarkovState::DlFlse => "DL_FLSE",
        }
    }
}

/// How a Weibull delay becomes an exponential rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateRule {
    /// Same cumulative incidence at the mission end, for every process.
    CdfAtMission,
    /// Cumulative incidence for disk failures and LSE arrivals; reciprocal
    /// mean for replacement, rebuild, human-error recovery, crash and scrub.
    MeanForRepairs,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Raid5Rates {
    pub disk_failure: f64,
    pub lse: f64,
    pub scrub: f64,
    pub replacement: f64,
    pub rebuild: f64,
    pub her: f64,
    pub crash: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarkovSpec {
    pub states: Vec<MarkovState>,
    /// Row-major generator, per hour.
    pub generator: Vec<Vec<f64>>,
    pub initial: usize,
    /// Logical bytes unavailable while in each state.
    pub du_bytes: Vec<f64>,
    /// Logical bytes lost on each entry into a state.
    pub dl_bytes_on_entry: Vec<f64>,
    pub rates: Option<Raid5Rates>,
}

impl MarkovSpec {
    pub fn check(&self) -> Result<()> {
        let k = self.states.len();
        if self.generator.len() != k || self.generator.iter().any(|r| r.len() != k) {
            return Err(Error::Parameter("generator must be square over the state set".into()));
        }
        for (i, row) in self.generator.iter().enumerate() {
            if row.iter().enumerate().any(|(j, &q)| i != j && (q < 0.0 || !q.is_finite())) {
                return Err(Error::Parameter(format!("negative or non-finite rate in row {i}")));
            }
            let sum: f64 = row.iter().sum();
            let scale: f64 = row.iter().map(|q| q.abs()).sum::<f64>().max(1.0);
            if sum.abs() > 1e-12 * scale {
                return Err(Error::Parameter(format!("row {i} sums to {sum}, not zero")));
            }
        }
        if self.initial >= k || self.du_bytes.len() != k || self.dl_bytes_on_entry.len() != k {
            return Err(Error::Parameter("initial state or tags do not match the state set".into()));
        }
        Ok(())
    }
}

fn weibull_mean(p: &WeibullParams) -> f64 {
    p.gamma + p.eta * statrs::function::gamma::gamma(1.0 + 1.0 / p.beta)
}

pub fn raid5_rates(disk: &DiskModel, policy: &PolicyConfig, mission: f64, rule: RateRule) -> Result<Raid5Rates> {
    let cdf = |p: &WeibullParams| match_exponential_rate(p, mission);
    let repair = |p: &WeibullParams| -> Result<f64> {
        match rule {
            RateRule::CdfAtMission => match_exponential_rate(p, mission),
            RateRule::MeanForRepairs => {
                p.check()?;
                Ok(1.0 / weibull_mean(p))
            }
        }
    };
    Ok(Raid5Rates {
        disk_failure: cdf(&disk.d_df)?,
        lse: cdf(&disk.d_lse)?,
        scrub: repair(&disk.d_scrub)?,
        replacement: repair(&policy.d_dr)?,
        rebuild: repair(&disk.d_rec)?,
        her: repair(&policy.d_her)?,
        crash: repair(&policy.d_crash)?,
    })
}

pub fn build_raid5_markov(disk: &DiskModel, code: &CodeConfig, policy: &PolicyConfig, mission: f64) -> Result<MarkovSpec> {
    build_raid5_markov_with(disk, code, policy, mission, RateRule::CdfAtMission)
}

/// RAID5 chain. A loss of LSE-damaged data (DL_FLSE) leaves the array with one
/// failed disk, so DL_FLSE carries on like EXP; only DL_FF absorbs.
pub fn build_raid5_markov_with(
    disk: &DiskModel,
    code: &CodeConfig,
    policy: &PolicyConfig,
    mission: f64,
    rule: RateRule,
) -> Result<MarkovSpec> {
    if !code.is_raid5() {
        return Err(Error::Parameter(format!("Markov baseline covers RAID5 only, got {code}")));
    }
    if policy.spare {
        return Err(Error::Parameter("Markov baseline covers the manual replacement policy only".into()));
    }
    if policy.dos != 0.0 {
        return Err(Error::Parameter("Markov baseline assumes non-survivable data (dos = 0)".into()));
    }
    let rates = raid5_rates(disk, policy, mission, rule)?;
    let n = code.n as f64;
    let hep = policy.hep;
    let Raid5Rates { disk_failure: l, lse, scrub, replacement: dr, rebuild, her, crash } = rates;
    use MarkovState::*;
    let k = STATES.len();
    let mut q = vec![vec![0.0; k]; k];
    let mut set = |from: MarkovState, to: MarkovState, rate: f64| q[from.index()][to.index()] += rate;
    set(Op, Exp, n * l);
    set(Op, ExpLse, n * lse);
    set(ExpLse, Op, scrub);
    set(ExpLse, Exp, l);
    set(ExpLse, DlFlse, (n - 1.0) * l);
    for exposed in [Exp, DlFlse] {
        set(exposed, ExpR, (1.0 - hep) * dr);
        set(exposed, Du, hep * dr);
        set(exposed, DlFf, (n - 1.0) * l);
    }
    set(ExpR, Op, rebuild);
    set(ExpR, DlFf, (n - 1.0) * l);
    set(Du, ExpR, her);
    set(Du, DlFf, crash + (n - 2.0) * l);
    for (i, row) in q.iter_mut().enumerate() {
        row[i] = 0.0;
        row[i] = -row.iter().sum::<f64>();
    }
    let usable = code.array_usable_bytes(disk);
    let mut du_bytes = vec![0.0; k];
    du_bytes[Du.index()] = usable;
    let mut dl = vec![0.0; k];
    dl[DlFf.index()] = usable;
    dl[DlFlse.index()] = code.stripe_logical_bytes() as f64;
    let spec = MarkovSpec { states: STATES.to_vec(), generator: q, initial: Op.index(), du_bytes, dl_bytes_on_entry: dl, rates: Some(rates) };
    spec.check()?;
    Ok(spec)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// (time, distribution) at each step boundary.
    pub samples: Vec<(f64, Vec<f64>)>,
    /// Time integral of each state's probability over the mission (hours).
    pub occupancy: Vec<f64>,
    /// Total probability flow into each state over the mission.
    pub entry_mass: Vec<f64>,
    pub final_distribution: Vec<f64>,
    /// Largest difference found by the step-doubling check.
    pub doubling_error: f64,
}

impl Trajectory {
    /// Mass in absorbing states at the end.
    pub fn absorbed(&self, spec: &MarkovSpec) -> Vec<(MarkovState, f64)> {
        spec.states
            .iter()
            .enumerate()
            .filter(|(i, _)| spec.generator[*i].iter().all(|&q| q == 0.0))
            .map(|(i, &s)| (s, self.final_distribution[i]))
            .collect()
    }
}

type Mat = Vec<Vec<f64>>;

fn matmul(a: &Mat, b: &Mat) -> Mat {
    let n = a.len();
    let mut c = vec![vec![0.0; n]; n];
    for i in 0..n {
        for k in 0..n {
            let aik = a[i][k];
            if aik != 0.0 {
                for j in 0..n {
                    c[i][j] += aik * b[k][j];
                }
            }
        }
    }
    c
}

/// exp(A) - I by scaling and squaring. Carrying the offset from the identity
/// keeps rounding at machine precision through many squarings, which plain
/// squaring of exp(A) does not for stiff generators.
fn expm_minus_identity(a: &Mat) -> Mat {
    let norm = a.iter().map(|r| r.iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max);
    let mut squarings = 0;
    let mut scale = 1.0;
    while norm * scale > 0.25 {
        scale *= 0.5;
        squarings += 1;
    }
    let scaled: Mat = a.iter().map(|r| r.iter().map(|x| x * scale).collect()).collect();
    let mut m = scaled.clone();
    let mut term = scaled.clone();
    for k in 2..=18 {
        term = matmul(&term, &scaled);
        let inv = 1.0 / k as f64;
        for (ri, ti) in m.iter_mut().zip(term.iter_mut()) {
            for (r, t) in ri.iter_mut().zip(ti.iter_mut()) {
                *t *= inv;
                *r += *t;
            }
        }
    }
    // (I + M)^2 = I + (2M + M^2)
    for _ in 0..squarings {
        let sq = matmul(&m, &m);
        for (ri, si) in m.iter_mut().zip(sq) {
            for (r, s) in ri.iter_mut().zip(si) {
                *r = 2.0 * *r + s;
            }
        }
    }
    m
}

/// Augmented generator over [pi, integral of pi, inflow per state], row-vector form.
fn augmented(spec: &MarkovSpec) -> Mat {
    let k = spec.states.len();
    let mut a = vec![vec![0.0; 3 * k]; 3 * k];
    for i in 0..k {
        for j in 0..k {
            a[i][j] = spec.generator[i][j];
            if i != j {
                a[i][2 * k + j] = spec.generator[i][j];
            }
        }
        a[i][k + i] = 1.0;
    }
    a
}

fn integrate(spec: &MarkovSpec, mission: f64, step: f64, keep_samples: bool) -> Result<(Vec<f64>, Vec<(f64, Vec<f64>)>)> {
    let k = spec.states.len();
    let steps = (mission / step).ceil().max(1.0) as usize;
    let h = mission / steps as f64;
    let a: Mat = augmented(spec).into_iter().map(|r| r.into_iter().map(|x| x * h).collect()).collect();
    let m = expm_minus_identity(&a);
    let mut x = vec![0.0; 3 * k];
    x[spec.initial] = 1.0;
    let mut samples = Vec::new();
    if keep_samples {
        samples.push((0.0, x[..k].to_vec()));
    }
    for s in 1..=steps {
        let mut y = x.clone();
        for (i, &xi) in x.iter().enumerate() {
            if xi != 0.0 {
                for (yj, pij) in y.iter_mut().zip(&m[i]) {
                    *yj += xi * pij;
                }
            }
        }
        x = y;
        let total: f64 = x[..k].iter().sum();
        if (total - 1.0).abs() > 1e-9 || !total.is_finite() {
            return Err(Error::Numerical(format!(
                "probability mass {total} at t = {} h (step {h} h) drifted beyond 1e-9",
                s as f64 * h
            )));
        }
        if keep_samples {
            samples.push((s as f64 * h, x[..k].to_vec()));
        }
    }
    Ok((x, samples))
}

pub fn transient_solve(spec: &MarkovSpec, mission: f64, step: f64) -> Result<Trajectory> {
    spec.check()?;
    if !(step > 0.0) || !(mission > 0.0) {
        return Err(Error::Parameter(format!("step and mission must be positive (step {step}, mission {mission})")));
    }
    let k = spec.states.len();
    let (x, samples) = integrate(spec, mission, step, true)?;
    let (half, _) = integrate(spec, mission, step / 2.0, false)?;
    let mut err: f64 = 0.0;
    for i in 0..k {
        err = err.max((x[i] - half[i]).abs());
        err = err.max((x[k + i] - half[k + i]).abs() / mission);
        err = err.max((x[2 * k + i] - half[2 * k + i]).abs());
    }
    if err > 1e-8 {
        return Err(Error::Numerical(format!("step doubling changed the solution by {err:e} (step {step} h)")));
    }
    Ok(Trajectory {
        samples,
        occupancy: x[k..2 * k].to_vec(),
        entry_mass: x[2 * k..].to_vec(),
        final_distribution: x[..k].to_vec(),
        doubling_error: err,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarkovMetrics {
    pub nomdu: f64,
    pub nomdl: f64,
    /// Loss through whole-array failure (DL_FF).
    pub nomdl_ff: f64,
    /// Loss of LSE-damaged data (DL_FLSE).
    pub nomdl_flse: f64,
}

pub fn markov_metrics(spec: &MarkovSpec, traj: &Trajectory, usable_bytes: f64, mission: f64) -> MarkovMetrics {
    let nomdu = spec.du_bytes.iter().zip(&traj.occupancy).map(|(b, o)| b * o).sum::<f64>() / (usable_bytes * mission);
    let dl = |s: MarkovState| spec.dl_bytes_on_entry[s.index()] * traj.entry_mass[s.index()] / usable_bytes;
    let nomdl_ff = dl(MarkovState::DlFf);
    let nomdl_flse = dl(MarkovState::DlFlse);
    MarkovMetrics { nomdu, nomdl: nomdl_ff + nomdl_flse, nomdl_ff, nomdl_flse }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_state(rate: f64) -> MarkovSpec {
        let mut spec = MarkovSpec {
            states: vec![MarkovState::Op, MarkovState::DlFf],
            generator: vec![vec![-rate, rate], vec![0.0, 0.0]],
            initial: 0,
            du_bytes: vec![0.0, 0.0],
            dl_bytes_on_entry: vec![0.0, 1.0],
            rates: None,
        };
        spec.du_bytes[0] = 0.0;
        spec
    }

    #[test]
    fn zero_generator_stays_put() {
        let mut spec = two_state(0.0);
        spec.generator = vec![vec![0.0; 2]; 2];
        let t = transient_solve(&spec, 100.0, 1.0).unwrap();
        assert!(t.samples.iter().all(|(_, p)| p[0] == 1.0 && p[1] == 0.0));
        assert!((t.occupancy[0] - 100.0).abs() < 1e-9);
    }

    #[test]
    fn two_state_absorption_is_analytic() {
        let rate = 1e-3;
        let t = transient_solve(&two_state(rate), 5000.0, 10.0).unwrap();
        for (time, p) in &t.samples {
            assert!((p[1] - (1.0 - (-rate * time).exp())).abs() < 1e-12);
        }
        let want_occ = (1.0 - (-rate * 5000.0f64).exp()) / rate;
        assert!((t.occupancy[0] - want_occ).abs() < 1e-8);
        assert!((t.entry_mass[1] - t.final_distribution[1]).abs() < 1e-12);
        assert_eq!(t.absorbed(&two_state(rate)), vec![(MarkovState::DlFf, t.final_distribution[1])]);
    }

    #[test]
    fn stiff_chain_conserves_probability() {
        // fast repair next to slow failure, as produced by rate matching
        let spec = MarkovSpec {
            states: vec![MarkovState::Op, MarkovState::Exp, MarkovState::DlFf],
            generator: vec![vec![-3e-6, 3e-6, 0.0], vec![3.5e5, -3.5e5 - 2e-5, 2e-5], vec![0.0, 0.0, 0.0]],
            initial: 0,
            du_bytes: vec![0.0, 1.0, 0.0],
            dl_bytes_on_entry: vec![0.0, 0.0, 1.0],
            rates: None,
        };
        let t = transient_solve(&spec, 87600.0, 10.0).unwrap();
        let total: f64 = t.final_distribution.iter().sum();
        assert!((total - 1.0).abs() < 1e-9);
        // quasi-stationary occupancy of EXP is 3e-6 / 3.5e5 per hour of OP
        let expect = 87600.0 * 3e-6 / 3.5e5;
        assert!((t.occupancy[1] - expect).abs() / expect < 1e-3);
    }

    fn disk_a_spec(hep: f64) -> MarkovSpec {
        build_raid5_markov(&DiskModel::disk_a(), &CodeConfig::raid5(7), &PolicyConfig::with_hep(hep), 87600.0).unwrap()
    }

    #[test]
    fn rows_sum_to_zero_and_rates_match() {
        let spec = disk_a_spec(0.01);
        spec.check().unwrap();
        let r = spec.rates.unwrap();
        assert!((r.disk_failure - 2.82e-6).abs() / 2.82e-6 < 0.005);
        assert!((r.lse - 1.0 / 12325.0).abs() < 1e-15);
    }

    #[test]
    fn no_human_error_means_no_du() {
        let spec = disk_a_spec(0.0);
        let du = MarkovState::Du.index();
        assert!(spec.generator.iter().enumerate().all(|(i, row)| i == du || row[du] == 0.0));
        let t = transient_solve(&spec, 87600.0, 24.0).unwrap();
        let m = markov_metrics(&spec, &t, 7e12, 87600.0);
        assert_eq!(m.nomdu, 0.0);
        assert!(m.nomdl > 0.0);
    }

    #[test]
    fn halving_step_is_stable() {
        let spec = disk_a_spec(0.01);
        let a = transient_solve(&spec, 87600.0, 24.0).unwrap();
        let b = transient_solve(&spec, 87600.0, 12.0).unwrap();
        let ma = markov_metrics(&spec, &a, 7e12, 87600.0);
        let mb = markov_metrics(&spec, &b, 7e12, 87600.0);
        assert!((ma.nomdu - mb.nomdu).abs() <= 1e-6 * ma.nomdu);
        assert!((ma.nomdl - mb.nomdl).abs() <= 1e-6 * ma.nomdl);
    }

    #[test]
    fn unsupported_inputs() {
        let d = DiskModel::disk_a();
        let p = PolicyConfig::default();
        assert!(build_raid5_markov(&d, &CodeConfig::raid6(6), &p, 87600.0).is_err());
        let spare = PolicyConfig { spare: true, ..Default::default() };
        assert!(build_raid5_markov(&d, &CodeConfig::raid5(7), &spare, 87600.0).is_err());
        assert!(matches!(
            build_raid5_markov(&DiskModel::elerath(168.0), &CodeConfig::raid5(7), &p, 87600.0),
            Err(Error::Unsupported(_))
        ));
        let mut bad = two_state(1.0);
        bad.generator[0][0] = 0.0;
        assert!(transient_solve(&bad, 1.0, 0.1).is_err());
        assert!(transient_solve(&two_state(1.0), 1.0, 0.0).is_err());
    }
}
