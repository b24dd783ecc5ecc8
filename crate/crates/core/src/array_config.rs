//! Disk models, PMDS(m,n,r,s) geometry, policies and whole-experiment configs.

use std::fmt;

use crate::distributions::WeibullParams;

pub const TB: u64 = 1_000_000_000_000;
pub const GB: u64 = 1_000_000_000;
pub const DEFAULT_SECTOR: u64 = 4096;
pub const DEFAULT_CHUNK: u64 = 16 * 1024;
pub const DEFAULT_MISSION: f64 = 87600.0;

fn w(gamma: f64, eta: f64, beta: f64) -> WeibullParams {
    WeibullParams { gamma, eta, beta }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiskModel {
    pub name: String,
    pub capacity: u64,
    pub sector_size: u64,
    pub d_df: WeibullParams,
    pub d_rec: WeibullParams,
    pub d_lse: WeibullParams,
    pub d_scrub: WeibullParams,
}

impl DiskModel {
    pub fn disk_a() -> Self {
        DiskModel {
            name: "diskA".into(),
            capacity: TB,
            sector_size: DEFAULT_SECTOR,
            d_df: w(0.0, 302016.0, 1.13),
            d_rec: w(0.0, 22.7, 1.65),
            d_lse: w(0.0, 12325.0, 1.0),
            d_scrub: w(0.0, 186.0, 1.0),
        }
    }

    pub fn disk_b() -> Self {
        DiskModel {
            name: "diskB".into(),
            capacity: TB,
            sector_size: DEFAULT_SECTOR,
            d_df: w(0.0, 4833522.0, 0.576),
            d_rec: w(0.0, 20.25, 1.15),
            d_lse: w(0.0, 42857.0, 1.0),
            d_scrub: w(0.0, 160.0, 0.97),
        }
    }

    pub fn disk_c() -> Self {
        DiskModel {
            name: "diskC".into(),
            capacity: 288 * GB,
            sector_size: DEFAULT_SECTOR,
            d_df: w(0.0, 1058364.0, 0.721),
            d_rec: w(0.0, 6.75, 1.4),
            d_lse: w(0.0, 50254.0, 1.0),
            d_scrub: w(0.0, 124.0, 2.1),
        }
    }

    /// The parameter set used for the RAID5 comparison against Elerath and Pecht,
    /// with the scrub characteristic life as the swept knob.
    pub fn elerath(eta_scrub: f64) -> Self {
        DiskModel {
            name: format!("elerath-scrub{eta_scrub}"),
            capacity: TB,
            sector_size: DEFAULT_SECTOR,
            d_df: w(0.0, 461386.0, 1.12),
            d_rec: w(6.0, 12.0, 2.0),
            d_lse: w(0.0, 9259.0, 1.0),
            d_scrub: w(6.0, eta_scrub, 3.0),
        }
    }

    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "diskA" => Some(Self::disk_a()),
            "diskB" => Some(Self::disk_b()),
            "diskC" => Some(Self::disk_c()),
            "elerath" => Some(Self::elerath(168.0)),
            _ => None,
        }
    }

    /// Same distributions, capacity divided by `divisor` (rounded down to whole sectors).
    pub fn scaled(&self, divisor: u64) -> Self {
        let mut d = self.clone();
        if divisor > 1 {
            let sectors = self.capacity / self.sector_size / divisor;
            d.capacity = sectors.max(1) * self.sector_size;
        }
        d
    }
}

/// PMDS(m,n,r,s): `m` rows per stripe, `n` devices, `r` row parities, `s` global
/// parities. Each device holds one `chunk_size` strip per stripe, split into `m` symbols.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CodeConfig {
    pub m: u32,
    pub n: u32,
    pub r: u32,
    pub s: u32,
    pub chunk_size: u64,
}

impl CodeConfig {
    pub fn pmds(m: u32, n: u32, r: u32, s: u32) -> Self {
        CodeConfig { m, n, r, s, chunk_size: DEFAULT_CHUNK }
    }

    /// PMDS with the default row count (one row per sector of a chunk).
    pub fn pmds_default(n: u32, r: u32, s: u32) -> Self {
        Self::pmds((DEFAULT_CHUNK / DEFAULT_SECTOR) as u32, n, r, s)
    }

    pub fn raid1() -> Self {
        Self::pmds_default(2, 1, 0)
    }

    pub fn raid5(data: u32) -> Self {
        Self::pmds_default(data + 1, 1, 0)
    }

    pub fn raid6(data: u32) -> Self {
        Self::pmds_default(data + 2, 2, 0)
    }

    pub fn is_raid5(&self) -> bool {
        self.r == 1 && self.s == 0
    }

    pub fn is_raid6(&self) -> bool {
        self.r == 2 && self.s == 0
    }

    pub fn is_raid1(&self) -> bool {
        self.n == 2 && self.r == 1 && self.s == 0
    }

    /// Symbols per stripe that carry user data: m(n-r) - s.
    pub fn data_symbols(&self) -> i64 {
        self.m as i64 * (self.n as i64 - self.r as i64) - self.s as i64
    }

    pub fn symbol_size(&self) -> u64 {
        self.chunk_size / self.m as u64
    }

    pub fn stripe_physical_bytes(&self) -> u64 {
        self.n as u64 * self.chunk_size
    }

    pub fn stripe_logical_bytes(&self) -> u64 {
        self.data_symbols().max(0) as u64 * self.symbol_size()
    }

    pub fn stripes_per_device(&self, disk: &DiskModel) -> u64 {
        disk.capacity / self.chunk_size
    }

    /// Logical bytes of one array: stripes times data symbols, which equals
    /// physical capacity over the ERF.
    pub fn array_usable_bytes(&self, disk: &DiskModel) -> f64 {
        self.n as f64 * disk.capacity as f64 / erf(self)
    }

    pub fn check(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        if self.m < 1 {
            v.push(Violation::new("code.m", "rows per stripe must be at least 1"));
        }
        if self.n < 2 {
            v.push(Violation::new("code.n", "an array needs at least 2 devices"));
        }
        if self.n > 64 {
            v.push(Violation::new("code.n", "at most 64 devices per array are supported"));
        }
        if self.r >= self.n {
            v.push(Violation::new("code.r", "row parities must be fewer than devices"));
        }
        if self.m >= 1 && self.r < self.n && self.data_symbols() <= 0 {
            v.push(Violation::new("code.s", "m(n-r) - s must be positive"));
        }
        if self.chunk_size == 0 || (self.m >= 1 && self.chunk_size % self.m as u64 != 0) {
            v.push(Violation::new("code.chunk_size", "chunk size must be a positive multiple of m"));
        }
        v
    }
}

impl fmt::Display for CodeConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.s == 0 && self.r == 1 && self.n == 2 {
            write!(f, "RAID1(1+1)")
        } else if self.s == 0 && (self.r == 1 || self.r == 2) {
            write!(f, "RAID{}({}+{})", if self.r == 1 { 5 } else { 6 }, self.n - self.r, self.r)
        } else {
            write!(f, "PMDS({},{},{},{})", self.m, self.n, self.r, self.s)
        }
    }
}

/// Effective replication factor m·n / (m(n-r) - s).
pub fn erf(code: &CodeConfig) -> f64 {
    (code.m as f64 * code.n as f64) / code.data_symbols() as f64
}

pub fn usable_capacity(code: &CodeConfig, disk: &DiskModel, n_arrays: u64) -> f64 {
    n_arrays as f64 * code.array_usable_bytes(disk)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyConfig {
    pub hep: f64,
    pub spare: bool,
    pub dos: f64,
    pub d_dr: WeibullParams,
    pub d_her: WeibullParams,
    pub d_crash: WeibullParams,
    pub d_br: WeibullParams,
    pub d_sbr: WeibullParams,
    pub ignore_lse_during_rebuild: bool,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            hep: 0.0,
            spare: false,
            dos: 0.0,
            d_dr: w(0.0, 0.5, 2.0),
            d_her: w(0.0, 1.0, 2.0),
            d_crash: w(0.0, 8760.0, 1.4),
            d_br: w(20.0, 40.0, 2.0),
            d_sbr: w(2.7e-7, 5.5e-7, 2.0),
            ignore_lse_during_rebuild: true,
        }
    }
}

impl PolicyConfig {
    pub fn with_hep(hep: f64) -> Self {
        PolicyConfig { hep, ..Default::default() }
    }

    pub fn check(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        if !(0.0..=1.0).contains(&self.hep) {
            v.push(Violation::new("policy.hep", "human error probability must be in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.dos) {
            v.push(Violation::new("policy.dos", "survivability must be in [0, 1]"));
        }
        for (name, p) in [
            ("policy.d_dr", &self.d_dr),
            ("policy.d_her", &self.d_her),
            ("policy.d_crash", &self.d_crash),
            ("policy.d_br", &self.d_br),
            ("policy.d_sbr", &self.d_sbr),
        ] {
            if let Err(e) = p.check() {
                v.push(Violation::new(name, &e.to_string()));
            }
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    pub disk: DiskModel,
    pub code: CodeConfig,
    pub policy: PolicyConfig,
    pub mission_hours: f64,
    pub n_arrays: u64,
    pub seed: u64,
    pub capacity_scale: u64,
    pub confidence: f64,
}

impl ExperimentConfig {
    pub fn new(name: &str, disk: DiskModel, code: CodeConfig, policy: PolicyConfig) -> Self {
        ExperimentConfig {
            name: name.into(),
            disk,
            code,
            policy,
            mission_hours: DEFAULT_MISSION,
            n_arrays: 1000,
            seed: 1,
            capacity_scale: 1,
            confidence: 0.95,
        }
    }

    /// The disk actually simulated, after applying `capacity_scale`.
    pub fn effective_disk(&self) -> DiskModel {
        self.disk.scaled(self.capacity_scale)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub location: String,
    pub message: String,
}

impl Violation {
    pub fn new(location: &str, message: &str) -> Self {
        Violation { location: location.into(), message: message.into() }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.location, self.message)
    }
}

pub fn validate(config: &ExperimentConfig) -> Result<(), Vec<Violation>> {
    let mut v = Vec::new();
    let d = &config.disk;
    if d.sector_size == 0 || d.capacity == 0 || d.capacity % d.sector_size != 0 {
        v.push(Violation::new("disk.capacity", "capacity must be a positive multiple of the sector size"));
    }
    for (name, p) in [("disk.d_df", &d.d_df), ("disk.d_rec", &d.d_rec), ("disk.d_lse", &d.d_lse), ("disk.d_scrub", &d.d_scrub)] {
        if let Err(e) = p.check() {
            v.push(Violation::new(name, &e.to_string()));
        }
    }
    v.extend(config.code.check());
    v.extend(config.policy.check());
    if !(config.mission_hours > 0.0 && config.mission_hours.is_finite()) {
        v.push(Violation::new("experiment.mission_hours", "mission must be a positive number of hours"));
    }
    if config.n_arrays < 1 {
        v.push(Violation::new("experiment.n_arrays", "at least one array is required"));
    }
    if config.n_arrays >= 1 << 48 {
        v.push(Violation::new("experiment.n_arrays", "fleet size must be below 2^48"));
    }
    if ![1, 64, 16384].contains(&config.capacity_scale) {
        v.push(Violation::new("experiment.capacity_scale", "capacity scale must be 1, 64 or 16384"));
    }
    if ![0.90, 0.95, 0.99].contains(&config.confidence) {
        v.push(Violation::new("experiment.confidence", "confidence must be 0.90, 0.95 or 0.99"));
    }
    if v.is_empty() {
        let disk = config.effective_disk();
        if config.code.stripes_per_device(&disk) == 0 {
            v.push(Violation::new("code.chunk_size", "chunk size exceeds the (scaled) disk capacity"));
        }
    }
    if v.is_empty() {
        Ok(())
    } else {
        Err(v)
    }
}
