//! What one simulated array reports: DU intervals, DL incidents and event counts.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DuCause {
    Adu,
    Sdu,
    SurvivableRecovery,
}

/// What a DU interval makes unavailable. Whole-array intervals supersede
/// stripe intervals that overlap them in time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DuScope {
    Array,
    Stripe(u64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DuIncident {
    pub start: f64,
    pub end: f64,
    pub bytes: f64,
    pub cause: DuCause,
    pub scope: DuScope,
}

impl DuIncident {
    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DlCause {
    /// Whole array lost (DDF in RAID5 terms, TDF in RAID6 terms).
    Adl,
    /// Stripes lost to LSEs the remaining redundancy could not cover.
    Sdl,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DlIncident {
    pub time: f64,
    pub lost_bytes: f64,
    pub cause: DlCause,
    /// Backup recovery time of the survivable share; `None` when dos = 0.
    pub recovery_hours: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EventCounters {
    pub disk_failures: u64,
    pub lses: u64,
    pub replacements: u64,
    pub human_errors: u64,
    pub crashes: u64,
}

impl std::ops::AddAssign for EventCounters {
    fn add_assign(&mut self, o: Self) {
        self.disk_failures += o.disk_failures;
        self.lses += o.lses;
        self.replacements += o.replacements;
        self.human_errors += o.human_errors;
        self.crashes += o.crashes;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IncidentLog {
    pub array: u64,
    pub mission: f64,
    /// Logical capacity of this array.
    pub usable_bytes: f64,
    pub dos: f64,
    /// Row parities of the code that produced the log.
    pub row_parities: u32,
    pub du_incidents: Vec<DuIncident>,
    pub dl_incidents: Vec<DlIncident>,
    pub counters: EventCounters,
}

impl IncidentLog {
    pub fn empty(array: u64, mission: f64, usable_bytes: f64, dos: f64, row_parities: u32) -> Self {
        IncidentLog {
            array,
            mission,
            usable_bytes,
            dos,
            row_parities,
            du_incidents: Vec::new(),
            dl_incidents: Vec::new(),
            counters: EventCounters::default(),
        }
    }

    pub fn count_dl(&self, cause: DlCause) -> usize {
        self.dl_incidents.iter().filter(|d| d.cause == cause).count()
    }

    pub fn count_du(&self, cause: DuCause) -> usize {
        self.du_incidents.iter().filter(|d| d.cause == cause).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValidationMode {
    Raid5,
    Raid6,
}

/// DL incidents of either kind, the way the Elerath-style DDF/TDF counts treat them.
pub fn count_ddf_compatible(log: &IncidentLog, mode: ValidationMode) -> Result<usize> {
    let want = match mode {
        ValidationMode::Raid5 => 1,
        ValidationMode::Raid6 => 2,
    };
    if log.row_parities != want {
        return Err(Error::Parameter(format!(
            "{mode:?} counting needs a code with r = {want}, log has r = {}",
            log.row_parities
        )));
    }
    Ok(log.dl_incidents.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dl(cause: DlCause) -> DlIncident {
        DlIncident { time: 1.0, lost_bytes: 1.0, cause, recovery_hours: None }
    }

    #[test]
    fn ddf_counts() {
        let mut log = IncidentLog::empty(0, 10.0, 1.0, 0.0, 1);
        assert_eq!(count_ddf_compatible(&log, ValidationMode::Raid5).unwrap(), 0);
        log.dl_incidents = vec![dl(DlCause::Adl), dl(DlCause::Adl), dl(DlCause::Sdl), dl(DlCause::Sdl), dl(DlCause::Sdl)];
        assert_eq!(count_ddf_compatible(&log, ValidationMode::Raid5).unwrap(), 5);
        assert!(count_ddf_compatible(&log, ValidationMode::Raid6).is_err());
        log.row_parities = 2;
        assert_eq!(count_ddf_compatible(&log, ValidationMode::Raid6).unwrap(), 5);
    }
}
