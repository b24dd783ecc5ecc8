//! Experiment plans: config files, built-in suites, and the CSV/text outputs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ini::Ini;

use crate::array_config::{validate, CodeConfig, DiskModel, ExperimentConfig, PolicyConfig};
use crate::distributions::WeibullParams;
use crate::error::{Error, Result};
use crate::markov_baseline::{build_raid5_markov_with, markov_metrics, transient_solve, RateRule};
use crate::metrics::{aggregate, FleetResult};
use crate::sim_engine::{simulate_fleet, DlCause, DlIncident, DuCause, DuIncident, DuScope, IncidentLog};

pub const RESULTS_HEADER: [&str; 19] = [
    "experiment",
    "disk",
    "code",
    "hep",
    "dos",
    "spare",
    "n_arrays",
    "mission_hours",
    "seed",
    "nomdu",
    "nomdu_err",
    "nomdl",
    "nomdl_err",
    "adl",
    "sdl",
    "adu",
    "sdu",
    "ddf_compat",
    "tdf_compat",
];

const INCIDENTS_HEADER: [&str; 16] = [
    "experiment",
    "kind",
    "array",
    "cause",
    "scope",
    "stripe",
    "start",
    "end",
    "bytes",
    "recovery_hours",
    "n_arrays",
    "usable_bytes",
    "mission_hours",
    "dos",
    "row_parities",
    "confidence",
];

pub const TIMESERIES_BUCKETS: usize = 100;

pub const SUITES: [&str; 10] = [
    "validate-elerath-raid5",
    "validate-elerath-raid6",
    "table-vi",
    "hep-sweep",
    "spare-policy",
    "equal-capacity",
    "markov-comparison",
    "pmds",
    "pmds-small",
    "pmds-ultra-small",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OutputOptions {
    pub incidents: bool,
    pub timeseries: bool,
}

impl Default for OutputOptions {
    fn default() -> Self {
        OutputOptions { incidents: true, timeseries: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunPlan {
    pub experiments: Vec<ExperimentConfig>,
    /// Also solve the RAID5 Markov model for every eligible experiment.
    pub markov: bool,
    pub output: OutputOptions,
    /// Output directory named in the config file, if any.
    pub out_dir: Option<String>,
}

impl RunPlan {
    fn new(experiments: Vec<ExperimentConfig>) -> Self {
        RunPlan { experiments, markov: false, output: OutputOptions::default(), out_dir: None }
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.experiments.iter_mut().for_each(|e| e.seed = seed);
    }

    pub fn set_confidence(&mut self, confidence: f64) {
        self.experiments.iter_mut().for_each(|e| e.confidence = confidence);
    }

    pub fn validate(&self) -> Result<()> {
        let mut msgs = Vec::new();
        for e in &self.experiments {
            if let Err(v) = validate(e) {
                msgs.extend(v.iter().map(|v| format!("{}: {v}", e.name)));
            }
        }
        if self.experiments.is_empty() {
            msgs.push("plan has no experiments".into());
        }
        if msgs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(msgs.join("; ")))
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub config: ExperimentConfig,
    pub result: FleetResult,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarkovRow {
    pub nomdu: f64,
    pub nomdl: f64,
    pub nomdl_ddf: f64,
    pub mean_rates_nomdu: f64,
    pub mean_rates_nomdl_ddf: f64,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub outcomes: Vec<ExperimentOutcome>,
    /// Parallel to `outcomes`; `None` where the Markov model does not apply.
    pub markov: Vec<Option<MarkovRow>>,
}

fn cfg_err(section: &str, key: &str, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("[{section}] {key}: {msg}"))
}

fn parse_f64(section: &str, key: &str, v: &str) -> Result<f64> {
    v.trim().parse::<f64>().map_err(|_| cfg_err(section, key, format!("expected a number, got {v:?}")))
}

fn parse_u64(section: &str, key: &str, v: &str) -> Result<u64> {
    let t = v.trim().replace('_', "");
    t.parse::<u64>().map_err(|_| cfg_err(section, key, format!("expected a non-negative integer, got {v:?}")))
}

fn parse_bool(section: &str, key: &str, v: &str) -> Result<bool> {
    match v.trim().to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(cfg_err(section, key, format!("expected true/false, got {v:?}"))),
    }
}

fn list(v: &str) -> Vec<&str> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty()).collect()
}

fn parse_weibull(section: &str, key: &str, v: &str) -> Result<WeibullParams> {
    let parts = list(v);
    if parts.len() != 3 {
        return Err(cfg_err(section, key, "expected \"gamma, eta, beta\""));
    }
    let g = parse_f64(section, key, parts[0])?;
    let e = parse_f64(section, key, parts[1])?;
    let b = parse_f64(section, key, parts[2])?;
    WeibullParams::new(g, e, b).map_err(|e| cfg_err(section, key, e))
}

fn parse_confidence(v: &str) -> Result<f64> {
    let c = parse_f64("experiment", "confidence", v)?;
    let c = if c > 1.0 { c / 100.0 } else { c };
    [0.90, 0.95, 0.99]
        .into_iter()
        .find(|k| (k - c).abs() < 1e-9)
        .ok_or_else(|| cfg_err("experiment", "confidence", "must be 90, 95 or 99"))
}

pub fn parse_confidence_flag(v: &str) -> Result<f64> {
    parse_confidence(v)
}

/// Parses a config file. `hep`, `spare` and `model` accept comma-separated
/// lists; the plan holds one experiment per combination.
pub fn parse_config(text: &str) -> Result<RunPlan> {
    let ini = Ini::load_from_str(text).map_err(|e| Error::Config(format!("malformed config: {e}")))?;
    let allowed: BTreeMap<&str, &[&str]> = BTreeMap::from([
        ("experiment", &["name", "mission_hours", "n_arrays", "seed", "capacity_scale", "confidence", "markov"][..]),
        ("disk", &["model", "name", "capacity_bytes", "sector_size", "df", "rec", "lse", "scrub"][..]),
        ("code", &["kind", "data", "m", "n", "r", "s", "chunk_size"][..]),
        ("policy", &["hep", "spare", "dos", "dr", "her", "crash", "br", "sbr", "ignore_lse_during_rebuild"][..]),
        ("output", &["dir", "incidents", "timeseries"][..]),
    ]);
    for (sec, props) in ini.iter() {
        let Some(sec) = sec else {
            if let Some((k, _)) = props.iter().next() {
                return Err(Error::Config(format!("key {k:?} outside any section")));
            }
            continue;
        };
        let keys = allowed.get(sec).ok_or_else(|| Error::Config(format!("unknown section [{sec}]")))?;
        for (k, _) in props.iter() {
            if !keys.contains(&k) {
                return Err(cfg_err(sec, k, "unknown key"));
            }
        }
    }
    let get = |sec: &str, key: &str| ini.section(Some(sec)).and_then(|s| s.get(key));

    let mut template = ExperimentConfig::new("experiment", DiskModel::disk_a(), CodeConfig::raid5(7), PolicyConfig::default());
    if let Some(v) = get("experiment", "name") {
        template.name = v.trim().to_string();
    }
    if let Some(v) = get("experiment", "mission_hours") {
        template.mission_hours = parse_f64("experiment", "mission_hours", v)?;
    }
    if let Some(v) = get("experiment", "n_arrays") {
        template.n_arrays = parse_u64("experiment", "n_arrays", v)?;
    }
    if let Some(v) = get("experiment", "seed") {
        template.seed = parse_u64("experiment", "seed", v)?;
    }
    if let Some(v) = get("experiment", "capacity_scale") {
        template.capacity_scale = parse_u64("experiment", "capacity_scale", v)?;
    }
    if let Some(v) = get("experiment", "confidence") {
        template.confidence = parse_confidence(v)?;
    }
    let markov = get("experiment", "markov").map(|v| parse_bool("experiment", "markov", v)).transpose()?.unwrap_or(false);

    let models: Vec<String> = match get("disk", "model") {
        Some(v) => list(v).into_iter().map(String::from).collect(),
        None => vec!["diskA".into()],
    };
    let mut disks = Vec::new();
    for name in &models {
        let mut d = DiskModel::builtin(name)
            .ok_or_else(|| cfg_err("disk", "model", format!("unknown built-in {name:?} (diskA, diskB, diskC, elerath)")))?;
        if let Some(v) = get("disk", "name") {
            d.name = v.trim().to_string();
        }
        if let Some(v) = get("disk", "capacity_bytes") {
            d.capacity = parse_u64("disk", "capacity_bytes", v)?;
        }
        if let Some(v) = get("disk", "sector_size") {
            d.sector_size = parse_u64("disk", "sector_size", v)?;
        }
        for (key, slot) in [("df", &mut d.d_df), ("rec", &mut d.d_rec), ("lse", &mut d.d_lse), ("scrub", &mut d.d_scrub)] {
            if let Some(v) = get("disk", key) {
                *slot = parse_weibull("disk", key, v)?;
            }
        }
        disks.push(d);
    }

    let num = |key: &str| get("code", key).map(|v| parse_u64("code", key, v)).transpose();
    let narrow = |key: &str, v: Option<u64>| -> Result<Option<u32>> {
        v.map(|x| u32::try_from(x).map_err(|_| cfg_err("code", key, "out of range"))).transpose()
    };
    let kind = get("code", "kind").map(|v| v.trim().to_ascii_lowercase()).unwrap_or_else(|| "raid5".into());
    let data = narrow("data", num("data")?)?;
    let mut code = match kind.as_str() {
        "raid1" => CodeConfig::raid1(),
        "raid5" => CodeConfig::raid5(data.unwrap_or(7)),
        "raid6" => CodeConfig::raid6(data.unwrap_or(7)),
        "pmds" => {
            let need = |key: &str| -> Result<u32> {
                narrow(key, num(key)?)?.ok_or_else(|| cfg_err("code", key, "required for kind = pmds"))
            };
            CodeConfig::pmds_default(need("n")?, need("r")?, need("s")?)
        }
        other => return Err(cfg_err("code", "kind", format!("unknown code kind {other:?} (raid1, raid5, raid6, pmds)"))),
    };
    if let Some(m) = narrow("m", num("m")?)? {
        code.m = m;
    }
    if let Some(c) = num("chunk_size")? {
        code.chunk_size = c;
    }

    let mut policy = PolicyConfig::default();
    if let Some(v) = get("policy", "dos") {
        policy.dos = parse_f64("policy", "dos", v)?;
    }
    for (key, slot) in [
        ("dr", &mut policy.d_dr),
        ("her", &mut policy.d_her),
        ("crash", &mut policy.d_crash),
        ("br", &mut policy.d_br),
        ("sbr", &mut policy.d_sbr),
    ] {
        if let Some(v) = get("policy", key) {
            *slot = parse_weibull("policy", key, v)?;
        }
    }
    if let Some(v) = get("policy", "ignore_lse_during_rebuild") {
        policy.ignore_lse_during_rebuild = parse_bool("policy", "ignore_lse_during_rebuild", v)?;
    }
    let heps: Vec<f64> = match get("policy", "hep") {
        Some(v) => list(v).into_iter().map(|x| parse_f64("policy", "hep", x)).collect::<Result<_>>()?,
        None => vec![0.0],
    };
    let spares: Vec<bool> = match get("policy", "spare") {
        Some(v) => list(v).into_iter().map(|x| parse_bool("policy", "spare", x)).collect::<Result<_>>()?,
        None => vec![false],
    };
    if heps.is_empty() || spares.is_empty() || disks.is_empty() {
        return Err(Error::Config("empty list in [disk] model, [policy] hep or [policy] spare".into()));
    }

    let sweep = disks.len() * heps.len() * spares.len() > 1;
    let mut experiments = Vec::new();
    for d in &disks {
        for &hep in &heps {
            for &spare in &spares {
                let mut e = template.clone();
                e.disk = d.clone();
                e.code = code;
                e.policy = PolicyConfig { hep, spare, ..policy.clone() };
                if sweep {
                    e.name = format!("{}/{}/hep={hep}/spare={spare}", template.name, d.name);
                }
                experiments.push(e);
            }
        }
    }
    let mut plan = RunPlan::new(experiments);
    plan.markov = markov;
    if let Some(v) = get("output", "incidents") {
        plan.output.incidents = parse_bool("output", "incidents", v)?;
    }
    if let Some(v) = get("output", "timeseries") {
        plan.output.timeseries = parse_bool("output", "timeseries", v)?;
    }
    plan.out_dir = get("output", "dir").map(|v| v.trim().to_string());
    plan.validate()?;
    Ok(plan)
}

pub fn load_config(path: &Path) -> Result<RunPlan> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text)
}

fn exp(name: String, disk: DiskModel, code: CodeConfig, policy: PolicyConfig, n_arrays: u64, seed: u64) -> ExperimentConfig {
    let mut e = ExperimentConfig::new(&name, disk, code, policy);
    e.n_arrays = n_arrays;
    e.seed = seed;
    e
}

fn table_disks() -> [DiskModel; 3] {
    [DiskModel::disk_a(), DiskModel::disk_b(), DiskModel::disk_c()]
}

/// Three fleets of equal usable capacity (21 000 disks' worth of data) on Disk A.
pub fn equal_capacity_configs(seed: u64, hep: f64) -> Vec<ExperimentConfig> {
    [(CodeConfig::raid1(), 21000), (CodeConfig::raid5(3), 7000), (CodeConfig::raid5(7), 3000)]
        .into_iter()
        .map(|(code, n)| exp(format!("equal-capacity/{code}/hep={hep}"), DiskModel::disk_a(), code, PolicyConfig::with_hep(hep), n, seed))
        .collect()
}

pub fn run_equal_capacity_comparison(seed: u64, hep: f64) -> Result<Vec<ExperimentOutcome>> {
    run_fleets(&equal_capacity_configs(seed, hep))
}

pub fn pmds_codes() -> [CodeConfig; 5] {
    [
        CodeConfig::raid5(7),
        CodeConfig::raid6(7),
        CodeConfig::pmds_default(8, 1, 1),
        CodeConfig::pmds_default(8, 1, 2),
        CodeConfig::pmds_default(9, 2, 2),
    ]
}

/// Hep used by the code comparison runs.
pub const PMDS_HEP: f64 = 0.001;

pub fn pmds_suite_configs(disk: &DiskModel, seed: u64, capacity_scale: u64, n_arrays: u64) -> Vec<ExperimentConfig> {
    pmds_codes()
        .into_iter()
        .map(|code| {
            let mut e = exp(
                format!("pmds/scale={capacity_scale}/{}/{code}", disk.name),
                disk.clone(),
                code,
                PolicyConfig::with_hep(PMDS_HEP),
                n_arrays,
                seed,
            );
            e.capacity_scale = capacity_scale;
            e
        })
        .collect()
}

/// Default fleet size per capacity scale.
pub fn pmds_fleet_size(capacity_scale: u64) -> u64 {
    match capacity_scale {
        1 => 10_000,
        _ => 1_000_000,
    }
}

pub fn run_pmds_suite(seed: u64, capacity_scale: u64) -> Result<Vec<ExperimentOutcome>> {
    let configs: Vec<ExperimentConfig> = table_disks()
        .iter()
        .flat_map(|d| pmds_suite_configs(d, seed, capacity_scale, pmds_fleet_size(capacity_scale)))
        .collect();
    run_fleets(&configs)
}

pub fn suite(name: &str, seed: u64) -> Result<RunPlan> {
    let mut markov = false;
    let experiments: Vec<ExperimentConfig> = match name {
        "validate-elerath-raid5" => [336.0, 168.0, 48.0, 12.0]
            .into_iter()
            .map(|eta| {
                let mut e = exp(format!("elerath-raid5/scrub={eta}"), DiskModel::elerath(eta), CodeConfig::raid5(7), PolicyConfig::default(), 1000, seed);
                e.mission_hours = 8760.0;
                e
            })
            .collect(),
        "validate-elerath-raid6" => table_disks()
            .into_iter()
            .map(|d| exp(format!("elerath-raid6/{}", d.name), d, CodeConfig::raid6(14), PolicyConfig::default(), 1000, seed))
            .collect(),
        "table-vi" => table_disks()
            .into_iter()
            .map(|d| exp(format!("table-vi/{}", d.name), d, CodeConfig::raid5(7), PolicyConfig::with_hep(0.001), 1000, seed))
            .collect(),
        "hep-sweep" => table_disks()
            .into_iter()
            .flat_map(|d| {
                [0.0, 1e-3, 1e-2, 1e-1].into_iter().map(move |h| {
                    exp(format!("hep-sweep/{}/hep={h}", d.name), d.clone(), CodeConfig::raid5(7), PolicyConfig::with_hep(h), 1000, seed)
                })
            })
            .collect(),
        "spare-policy" => [0.0, 1e-5, 1e-3, 1e-1]
            .into_iter()
            .flat_map(|h| {
                [false, true].into_iter().map(move |spare| {
                    let policy = PolicyConfig { spare, ..PolicyConfig::with_hep(h) };
                    exp(format!("spare-policy/hep={h}/spare={spare}"), DiskModel::disk_a(), CodeConfig::raid5(7), policy, 1000, seed)
                })
            })
            .collect(),
        "equal-capacity" => [0.0, 0.01, 0.1].into_iter().flat_map(|h| equal_capacity_configs(seed, h)).collect(),
        "markov-comparison" => {
            markov = true;
            table_disks()
                .into_iter()
                .flat_map(|d| {
                    [0.0, 1e-3, 1e-2, 1e-1].into_iter().map(move |h| {
                        exp(format!("markov/{}/hep={h}", d.name), d.clone(), CodeConfig::raid5(7), PolicyConfig::with_hep(h), 1000, seed)
                    })
                })
                .collect()
        }
        "pmds" | "pmds-small" | "pmds-ultra-small" => {
            let scale = match name {
                "pmds" => 1,
                "pmds-small" => 64,
                _ => 16384,
            };
            table_disks().iter().flat_map(|d| pmds_suite_configs(d, seed, scale, pmds_fleet_size(scale))).collect()
        }
        other => return Err(Error::Config(format!("unknown suite {other:?}; available: {}", SUITES.join(", ")))),
    };
    let mut plan = RunPlan::new(experiments);
    plan.markov = markov;
    plan.validate()?;
    Ok(plan)
}

pub fn run_fleets(configs: &[ExperimentConfig]) -> Result<Vec<ExperimentOutcome>> {
    configs
        .iter()
        .map(|c| {
            validate(c).map_err(|v| Error::Config(v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")))?;
            Ok(ExperimentOutcome { config: c.clone(), result: simulate_fleet(c.n_arrays, c)? })
        })
        .collect()
}

/// Markov metrics for one experiment, or `None` if the model does not cover it.
pub fn markov_for(config: &ExperimentConfig) -> Result<Option<MarkovRow>> {
    let disk = config.effective_disk();
    let (code, policy) = (&config.code, &config.policy);
    let eligible = code.is_raid5()
        && !policy.spare
        && policy.dos == 0.0
        && [&disk.d_df, &disk.d_lse, &disk.d_scrub, &disk.d_rec, &policy.d_dr, &policy.d_her, &policy.d_crash]
            .iter()
            .all(|p| p.gamma == 0.0);
    if !eligible {
        return Ok(None);
    }
    let mission = config.mission_hours;
    let step = mission / 3650.0;
    let usable = code.array_usable_bytes(&disk);
    let solve = |rule| -> Result<_> {
        let spec = build_raid5_markov_with(&disk, code, policy, mission, rule)?;
        let traj = transient_solve(&spec, mission, step)?;
        Ok(markov_metrics(&spec, &traj, usable, mission))
    };
    let lit = solve(RateRule::CdfAtMission)?;
    let mean = solve(RateRule::MeanForRepairs)?;
    Ok(Some(MarkovRow {
        nomdu: lit.nomdu,
        nomdl: lit.nomdl,
        nomdl_ddf: lit.nomdl_ff,
        mean_rates_nomdu: mean.nomdu,
        mean_rates_nomdl_ddf: mean.nomdl_ff,
    }))
}

pub fn execute(plan: &RunPlan) -> Result<RunReport> {
    plan.validate()?;
    let outcomes = run_fleets(&plan.experiments)?;
    let markov = if plan.markov {
        plan.experiments.iter().map(markov_for).collect::<Result<_>>()?
    } else {
        vec![None; outcomes.len()]
    };
    Ok(RunReport { outcomes, markov })
}

fn sci(v: f64) -> String {
    format!("{v:.9e}")
}

fn opt(v: Option<u64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn identity_columns(c: &ExperimentConfig) -> Vec<String> {
    vec![
        c.name.clone(),
        c.disk.name.clone(),
        c.code.to_string(),
        sci(c.policy.hep),
        sci(c.policy.dos),
        c.policy.spare.to_string(),
        c.n_arrays.to_string(),
        sci(c.mission_hours),
        c.seed.to_string(),
    ]
}

fn metric_columns(r: &FleetResult) -> Vec<String> {
    vec![
        sci(r.nomdu),
        sci(r.nomdu_err),
        sci(r.nomdl),
        sci(r.nomdl_err),
        r.counts.adl.to_string(),
        r.counts.sdl.to_string(),
        r.counts.adu.to_string(),
        r.counts.sdu.to_string(),
        opt(r.counts.ddf),
        opt(r.counts.tdf),
    ]
}

pub fn results_row(o: &ExperimentOutcome) -> Vec<String> {
    let mut row = identity_columns(&o.config);
    row.extend(metric_columns(&o.result));
    row
}

fn du_cause(c: DuCause) -> &'static str {
    match c {
        DuCause::Adu => "adu",
        DuCause::Sdu => "sdu",
        DuCause::SurvivableRecovery => "survivable-recovery",
    }
}

fn dl_cause(c: DlCause) -> &'static str {
    match c {
        DlCause::Adl => "adl",
        DlCause::Sdl => "sdl",
    }
}

/// Shortest text that parses back to the same f64.
fn exact(v: f64) -> String {
    format!("{v:e}")
}

fn write_incidents(path: &Path, outcomes: &[ExperimentOutcome]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(INCIDENTS_HEADER)?;
    for o in outcomes {
        let c = &o.config;
        let r = &o.result;
        let usable_each = r.usable_bytes / c.n_arrays as f64;
        w.write_record([
            c.name.as_str(),
            "fleet",
            "",
            "",
            "",
            "",
            "",
            "",
            "",
            "",
            &c.n_arrays.to_string(),
            &exact(usable_each),
            &exact(r.mission),
            &exact(c.policy.dos),
            &c.code.r.to_string(),
            &exact(r.confidence),
        ])?;
        for log in &r.per_array {
            let array = log.array.to_string();
            for d in &log.du_incidents {
                let (scope, stripe) = match d.scope {
                    DuScope::Array => ("array", String::new()),
                    DuScope::Stripe(s) => ("stripe", s.to_string()),
                };
                w.write_record([
                    c.name.as_str(),
                    "du",
                    &array,
                    du_cause(d.cause),
                    scope,
                    &stripe,
                    &exact(d.start),
                    &exact(d.end),
                    &exact(d.bytes),
                    "",
                    "",
                    "",
                    "",
                    "",
                    "",
                    "",
                ])?;
            }
            for d in &log.dl_incidents {
                w.write_record([
                    c.name.as_str(),
                    "dl",
                    &array,
                    dl_cause(d.cause),
                    "",
                    "",
                    &exact(d.time),
                    "",
                    &exact(d.lost_bytes),
                    &d.recovery_hours.map(exact).unwrap_or_default(),
                    "",
                    "",
                    "",
                    "",
                    "",
                    "",
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Cumulative incident counts at the end of each of 100 equal time buckets.
pub fn timeseries(result: &FleetResult) -> Vec<[u64; 4]> {
    let width = result.mission / TIMESERIES_BUCKETS as f64;
    let bucket = |t: f64| ((t / width) as usize).min(TIMESERIES_BUCKETS - 1);
    let mut per = vec![[0u64; 4]; TIMESERIES_BUCKETS];
    for log in &result.per_array {
        for d in &log.dl_incidents {
            per[bucket(d.time)][if d.cause == DlCause::Adl { 0 } else { 1 }] += 1;
        }
        for d in &log.du_incidents {
            match d.cause {
                DuCause::Adu => per[bucket(d.start)][2] += 1,
                DuCause::Sdu => per[bucket(d.start)][3] += 1,
                DuCause::SurvivableRecovery => {}
            }
        }
    }
    let mut acc = [0u64; 4];
    per.into_iter()
        .map(|b| {
            for k in 0..4 {
                acc[k] += b[k];
            }
            acc
        })
        .collect()
}

fn write_timeseries(path: &Path, outcomes: &[ExperimentOutcome]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["experiment", "bucket", "t_hours", "adl", "sdl", "adu", "sdu"])?;
    for o in outcomes {
        let width = o.result.mission / TIMESERIES_BUCKETS as f64;
        for (i, c) in timeseries(&o.result).iter().enumerate() {
            let mut rec = vec![o.config.name.clone(), i.to_string(), sci(width * (i + 1) as f64)];
            rec.extend(c.iter().map(u64::to_string));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn write_markov(path: &Path, report: &RunReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "experiment",
        "mc_nomdu",
        "markov_nomdu",
        "nomdu_rel_diff",
        "mc_nomdl_ddf",
        "markov_nomdl_ddf",
        "nomdl_ddf_rel_diff",
        "markov_nomdl",
        "mean_rates_nomdu",
        "mean_rates_nomdl_ddf",
    ])?;
    for (o, m) in report.outcomes.iter().zip(&report.markov) {
        let Some(m) = m else { continue };
        let r = &o.result;
        w.write_record([
            o.config.name.clone(),
            sci(r.nomdu),
            sci(m.nomdu),
            sci(rel_diff(m.nomdu, r.nomdu)),
            sci(r.nomdl_adl),
            sci(m.nomdl_ddf),
            sci(rel_diff(m.nomdl_ddf, r.nomdl_adl)),
            sci(m.nomdl),
            sci(m.mean_rates_nomdu),
            sci(m.mean_rates_nomdl_ddf),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// |a - b| / b, with 0 when both are zero.
pub fn rel_diff(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / b.abs()
    }
}

pub fn summary_text(report: &RunReport) -> String {
    let mut s = String::new();
    for (o, m) in report.outcomes.iter().zip(&report.markov) {
        let (c, r) = (&o.config, &o.result);
        let z = (c.confidence * 100.0).round();
        let _ = writeln!(s, "{}", c.name);
        let _ = writeln!(
            s,
            "  {} x {} on {} (scale 1/{}), hep {}, dos {}, spare {}, {} h, seed {}",
            c.n_arrays, c.code, c.disk.name, c.capacity_scale, c.policy.hep, c.policy.dos, c.policy.spare, c.mission_hours, c.seed
        );
        let _ = writeln!(s, "  NOMDU {:.4e} +/- {:.2e} ({z}%)   per TB: {:.4e} bytes", r.nomdu, r.nomdu_err, crate::metrics::per_tb(r.nomdu));
        let _ = writeln!(
            s,
            "  NOMDL {:.4e} +/- {:.2e} ({z}%)   per TB: {:.4e} bytes   [ADL {:.4e}, SDL {:.4e}]",
            r.nomdl,
            r.nomdl_err,
            crate::metrics::per_tb(r.nomdl),
            r.nomdl_adl,
            r.nomdl_sdl
        );
        let k = &r.counts;
        let _ = write!(s, "  incidents: ADL {} SDL {} ADU {} SDU {}", k.adl, k.sdl, k.adu, k.sdu);
        if let Some(d) = k.ddf {
            let _ = write!(s, "  DDF-compatible {d}");
        }
        if let Some(t) = k.tdf {
            let _ = write!(s, "  TDF-compatible {t}");
        }
        let e = &r.counters;
        let _ = writeln!(
            s,
            "\n  events: {} disk failures, {} LSEs, {} replacements, {} human errors, {} crashes",
            e.disk_failures, e.lses, e.replacements, e.human_errors, e.crashes
        );
        if let Some(m) = m {
            let _ = writeln!(
                s,
                "  Markov: NOMDU {:.4e} (rel diff {:.3e}), NOMDL-DDF {:.4e} (rel diff {:.3e}); mean-rate variant NOMDU {:.4e}, NOMDL-DDF {:.4e}",
                m.nomdu,
                rel_diff(m.nomdu, r.nomdu),
                m.nomdl_ddf,
                rel_diff(m.nomdl_ddf, r.nomdl_adl),
                m.mean_rates_nomdu,
                m.mean_rates_nomdl_ddf
            );
        }
        s.push('\n');
    }
    s
}

/// Writes results.csv, summary.txt and, as enabled, incidents.csv,
/// timeseries.csv and markov.csv.
pub fn write_outputs(report: &RunReport, dir: &Path, options: OutputOptions) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join("results.csv"))?;
    w.write_record(RESULTS_HEADER)?;
    for o in &report.outcomes {
        w.write_record(results_row(o))?;
    }
    w.flush()?;
    if options.incidents {
        write_incidents(&dir.join("incidents.csv"), &report.outcomes)?;
    }
    if options.timeseries {
        write_timeseries(&dir.join("timeseries.csv"), &report.outcomes)?;
    }
    if report.markov.iter().any(Option::is_some) {
        write_markov(&dir.join("markov.csv"), report)?;
    }
    fs::write(dir.join("summary.txt"), summary_text(report))?;
    Ok(())
}

pub fn run(plan: &RunPlan, dir: &Path) -> Result<RunReport> {
    let report = execute(plan)?;
    write_outputs(&report, dir, plan.output)?;
    Ok(report)
}

fn field<'a>(rec: &'a csv::StringRecord, i: usize) -> &'a str {
    rec.get(i).unwrap_or("")
}

fn num(rec: &csv::StringRecord, i: usize) -> Result<f64> {
    field(rec, i).parse::<f64>().map_err(|_| Error::Config(format!("bad number {:?} in column {}", field(rec, i), INCIDENTS_HEADER[i])))
}

fn int(rec: &csv::StringRecord, i: usize) -> Result<u64> {
    field(rec, i).parse::<u64>().map_err(|_| Error::Config(format!("bad integer {:?} in column {}", field(rec, i), INCIDENTS_HEADER[i])))
}

/// Recomputes results.csv from results.csv identity columns and incidents.csv alone.
pub fn rederive_results(results_csv: &Path, incidents_csv: &Path) -> Result<Vec<Vec<String>>> {
    let mut fleets: BTreeMap<String, (Vec<IncidentLog>, f64)> = BTreeMap::new();
    let mut rdr = csv::Reader::from_path(incidents_csv)?;
    for rec in rdr.records() {
        let rec = rec?;
        let name = field(&rec, 0).to_string();
        match field(&rec, 1) {
            "fleet" => {
                let n = int(&rec, 10)?;
                let (usable, mission, dos) = (num(&rec, 11)?, num(&rec, 12)?, num(&rec, 13)?);
                let r = int(&rec, 14)? as u32;
                let logs = (0..n).map(|a| IncidentLog::empty(a, mission, usable, dos, r)).collect();
                fleets.insert(name, (logs, num(&rec, 15)?));
            }
            kind @ ("du" | "dl") => {
                let (logs, _) = fleets.get_mut(&name).ok_or_else(|| Error::Config(format!("incident before fleet row for {name}")))?;
                let a = int(&rec, 2)? as usize;
                let log = logs.get_mut(a).ok_or_else(|| Error::Config(format!("array {a} out of range for {name}")))?;
                if kind == "du" {
                    let cause = match field(&rec, 3) {
                        "adu" => DuCause::Adu,
                        "sdu" => DuCause::Sdu,
                        "survivable-recovery" => DuCause::SurvivableRecovery,
                        c => return Err(Error::Config(format!("unknown DU cause {c:?}"))),
                    };
                    let scope = match field(&rec, 4) {
                        "array" => DuScope::Array,
                        _ => DuScope::Stripe(int(&rec, 5)?),
                    };
                    log.du_incidents.push(DuIncident { start: num(&rec, 6)?, end: num(&rec, 7)?, bytes: num(&rec, 8)?, cause, scope });
                } else {
                    let cause = if field(&rec, 3) == "adl" { DlCause::Adl } else { DlCause::Sdl };
                    let recovery_hours = if field(&rec, 9).is_empty() { None } else { Some(num(&rec, 9)?) };
                    log.dl_incidents.push(DlIncident { time: num(&rec, 6)?, lost_bytes: num(&rec, 8)?, cause, recovery_hours });
                }
            }
            k => return Err(Error::Config(format!("unknown incident kind {k:?}"))),
        }
    }
    let mut rows = Vec::new();
    let mut rdr = csv::Reader::from_path(results_csv)?;
    for rec in rdr.records() {
        let rec = rec?;
        let name = field(&rec, 0);
        let (logs, confidence) = fleets.remove(name).ok_or_else(|| Error::Config(format!("no incidents for {name}")))?;
        let result = aggregate(logs, confidence)?;
        let mut row: Vec<String> = rec.iter().take(9).map(String::from).collect();
        row.extend(metric_columns(&result));
        rows.push(row);
    }
    Ok(rows)
}

pub fn read_results(results_csv: &Path) -> Result<Vec<Vec<String>>> {
    let mut rdr = csv::Reader::from_path(results_csv)?;
    let header: Vec<String> = rdr.headers()?.iter().map(String::from).collect();
    if header != RESULTS_HEADER {
        return Err(Error::Config(format!("unexpected results header {header:?}")));
    }
    rdr.records().map(|r| Ok(r?.iter().map(String::from).collect())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "
[experiment]
name = sample
n_arrays = 40
seed = 9
mission_hours = 20000
confidence = 90

[disk]
model = diskA, diskC

[code]
kind = raid5
data = 3

[policy]
hep = 0, 0.1
dr = 0, 0.5, 2

[output]
incidents = true
";

    #[test]
    fn parses_sweeps() {
        let plan = parse_config(SAMPLE).unwrap();
        assert_eq!(plan.experiments.len(), 4);
        let e = &plan.experiments[3];
        assert_eq!(e.name, "sample/diskC/hep=0.1/spare=false");
        assert_eq!(e.code, CodeConfig::raid5(3));
        assert_eq!(e.n_arrays, 40);
        assert_eq!(e.confidence, 0.90);
        assert_eq!(e.disk, DiskModel::disk_c());
    }

    #[test]
    fn explicit_disk_parameters_override_builtin() {
        let plan = parse_config("[disk]\nmodel = elerath\nscrub = 6, 336, 3\n[experiment]\nmission_hours = 8760\n").unwrap();
        assert_eq!(plan.experiments[0].disk.d_scrub, WeibullParams { gamma: 6.0, eta: 336.0, beta: 3.0 });
        let p = parse_config("[code]\nkind = pmds\nn = 8\nr = 1\ns = 2\n").unwrap();
        assert_eq!(p.experiments[0].code, CodeConfig::pmds(4, 8, 1, 2));
    }

    #[test]
    fn rejects_bad_configs() {
        for bad in [
            "[experiment]\nbogus = 1\n",
            "[nonsense]\n",
            "[disk]\nmodel = diskZ\n",
            "[policy]\nhep = 2\n",
            "[policy]\nhep = abc\n",
            "[code]\nkind = pmds\nn = 8\n",
            "[experiment]\ncapacity_scale = 3\n",
            "[experiment]\nconfidence = 80\n",
            "[disk]\ndf = 1, 2\n",
        ] {
            assert!(matches!(parse_config(bad), Err(Error::Config(_))), "{bad}");
        }
    }

    #[test]
    fn every_suite_builds() {
        for s in SUITES {
            let p = suite(s, 3).unwrap();
            assert!(p.experiments.iter().all(|e| e.seed == 3));
        }
        assert!(suite("nope", 1).is_err());
    }

    #[test]
    fn equal_capacity_is_equal() {
        let cs = equal_capacity_configs(1, 0.0);
        let caps: Vec<f64> = cs.iter().map(|c| c.n_arrays as f64 * c.code.array_usable_bytes(&c.disk)).collect();
        assert!(caps.iter().all(|&c| c == 21000e12));
    }

    #[test]
    fn outputs_round_trip() {
        let mut plan = parse_config(SAMPLE).unwrap();
        plan.markov = true;
        let dir = tempfile::tempdir().unwrap();
        let report = run(&plan, dir.path()).unwrap();
        assert!(report.markov.iter().all(Option::is_some));
        let written = read_results(&dir.path().join("results.csv")).unwrap();
        assert_eq!(written.len(), 4);
        let again = rederive_results(&dir.path().join("results.csv"), &dir.path().join("incidents.csv")).unwrap();
        assert_eq!(written, again);
        let ts = fs::read_to_string(dir.path().join("timeseries.csv")).unwrap();
        assert_eq!(ts.lines().count(), 1 + 4 * TIMESERIES_BUCKETS);
        assert!(dir.path().join("markov.csv").exists() && dir.path().join("summary.txt").exists());
    }

    #[test]
    fn timeseries_is_cumulative() {
        let plan = parse_config(SAMPLE).unwrap();
        let report = execute(&plan).unwrap();
        for o in &report.outcomes {
            let ts = timeseries(&o.result);
            assert!(ts.windows(2).all(|w| (0..4).all(|k| w[0][k] <= w[1][k])));
            let k = &o.result.counts;
            assert_eq!(ts[TIMESERIES_BUCKETS - 1], [k.adl, k.sdl, k.adu, k.sdu]);
        }
    }
}
