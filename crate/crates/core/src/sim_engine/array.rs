//! Event loop for a single array.

use std::collections::{BTreeMap, VecDeque};

use crate::array_config::{CodeConfig, DiskModel, PolicyConfig};
use crate::distributions::{Purpose, RandomStream, StreamId, WeibullParams, ARRAY_LEVEL};
use crate::failure_conditions::{stripe_lost, stripe_unavailable, ArrayState, DeviceStatus};

use super::log::{DlCause, DlIncident, DuCause, DuIncident, DuScope, IncidentLog};
use super::queue::EventQueue;

/// Identifies the random substreams of one array within a seeded fleet.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArraySeed {
    pub seed: u64,
    pub array: u64,
}

#[derive(Debug, Clone, Copy)]
enum Event {
    DiskFail { dev: usize, epoch: u32 },
    LseArrive { dev: usize },
    ScrubComplete { dev: usize, lse: u64 },
    ReplaceComplete { visit: u64 },
    RebuildComplete { token: u64 },
    HumanErrorRecovered { err: usize },
    WrongDiskCrashed { err: usize },
    BackupRecoveryComplete { epoch: u32 },
    MissionEnd,
}

const PURPOSES: usize = 12;
/// Positional draws per disk generation (attempt counts beyond this reuse the last slot).
const ATTEMPT_SLOTS: u64 = 64;

#[derive(Debug, Default)]
struct Slot {
    /// Bumped whenever a scheduled DiskFail for this slot becomes stale.
    epoch: u32,
    /// Disks installed in this slot so far; keys the positional draws.
    generation: u32,
    fail_at: f64,
    lses: Vec<(u64, u64)>,
    /// LSEs of a wrongly removed disk, restored on reinsertion.
    stash: Vec<(u64, u64)>,
}

/// A dead disk waiting for the service agent.
#[derive(Debug, Clone, Copy)]
struct Job {
    dev: usize,
    generation: u32,
    attempts: u32,
}

impl Job {
    fn draw_index(&self) -> u64 {
        self.generation as u64 * ATTEMPT_SLOTS + (self.attempts as u64).min(ATTEMPT_SLOTS - 1)
    }
}

#[derive(Debug)]
struct HumanError {
    removed: usize,
    resolved: bool,
}

#[derive(Debug, Clone, Copy)]
enum Rebuild {
    Idle,
    Running { end: f64, token: u64 },
    Paused { remaining: f64 },
}

pub(crate) struct Sim<'a> {
    disk: &'a DiskModel,
    code: CodeConfig,
    policy: &'a PolicyConfig,
    mission: f64,
    seed: ArraySeed,
    streams: Vec<Option<RandomStream>>,
    queue: EventQueue<Event>,
    now: f64,
    state: ArrayState,
    slots: Vec<Slot>,
    stripes: u64,
    stripe_bytes: f64,
    next_lse: u64,
    jobs: Vec<Job>,
    awaiting: VecDeque<usize>,
    spare_ready: bool,
    visit: Option<u64>,
    visit_seq: u64,
    rebuild_queue: VecDeque<usize>,
    rebuild: Rebuild,
    rebuild_token: u64,
    errors: Vec<HumanError>,
    restoring: bool,
    restore_epoch: u32,
    absorbed: bool,
    open_adu: Option<f64>,
    open_sdu: BTreeMap<u64, f64>,
    log: IncidentLog,
    trace: Option<Vec<(ArrayState, DuCause)>>,
}

impl<'a> Sim<'a> {
    pub(crate) fn new(
        disk: &'a DiskModel,
        code: CodeConfig,
        policy: &'a PolicyConfig,
        mission: f64,
        seed: ArraySeed,
        trace: bool,
    ) -> Self {
        let n = code.n as usize;
        let usable = code.array_usable_bytes(disk);
        Sim {
            disk,
            code,
            policy,
            mission,
            seed,
            streams: (0..(n + 1) * PURPOSES).map(|_| None).collect(),
            queue: EventQueue::default(),
            now: 0.0,
            state: ArrayState::new(code),
            slots: (0..n).map(|_| Slot::default()).collect(),
            stripes: code.stripes_per_device(disk).max(1),
            stripe_bytes: code.stripe_logical_bytes() as f64,
            next_lse: 0,
            jobs: Vec::new(),
            awaiting: VecDeque::new(),
            spare_ready: policy.spare,
            visit: None,
            visit_seq: 0,
            rebuild_queue: VecDeque::new(),
            rebuild: Rebuild::Idle,
            rebuild_token: 0,
            errors: Vec::new(),
            restoring: false,
            restore_epoch: 0,
            absorbed: false,
            open_adu: None,
            open_sdu: BTreeMap::new(),
            log: IncidentLog::empty(seed.array, mission, usable, policy.dos, code.r),
            trace: trace.then(Vec::new),
        }
    }

    pub(crate) fn run(mut self) -> (IncidentLog, Option<Vec<(ArrayState, DuCause)>>) {
        self.queue.push(self.mission, Event::MissionEnd);
        for dev in 0..self.slots.len() {
            self.install_disk(dev);
            let first = self.sample(dev, Purpose::LseArrival, self.disk.d_lse);
            self.queue.push(first, Event::LseArrive { dev });
        }
        while let Some((t, ev)) = self.queue.pop() {
            self.now = t;
            if let Event::MissionEnd = ev {
                self.close_all_du();
                break;
            }
            self.handle(ev);
            if self.absorbed {
                break;
            }
            if !self.restoring {
                self.evaluate();
            }
            if self.absorbed {
                break;
            }
            self.maybe_schedule_visit();
        }
        (self.log, self.trace)
    }

    // ------------------------------------------------------------------
    // random draws

    fn stream(&mut self, dev: usize, purpose: Purpose) -> &mut RandomStream {
        let slot = dev * PURPOSES + (purpose as usize - 1);
        let n = self.slots.len();
        let seed = self.seed;
        self.streams[slot].get_or_insert_with(|| {
            let device = if dev == n { ARRAY_LEVEL } else { dev as u8 };
            RandomStream::new(seed.seed, StreamId::new(seed.array, device, purpose))
        })
    }

    fn sample(&mut self, dev: usize, purpose: Purpose, dist: WeibullParams) -> f64 {
        dist.sample(self.stream(dev, purpose))
    }

    fn keyed_uniform(&mut self, dev: usize, purpose: Purpose, index: u64) -> f64 {
        self.stream(dev, purpose).uniform_at(index)
    }

    fn keyed_sample(&mut self, dev: usize, purpose: Purpose, index: u64, dist: WeibullParams) -> f64 {
        dist.quantile(self.keyed_uniform(dev, purpose, index))
    }

    // ------------------------------------------------------------------
    // counts and bookkeeping

    fn df(&self) -> u32 {
        self.state.device_status.iter().filter(|s| s.counts_as_failed()).count() as u32
    }

    fn he(&self) -> u32 {
        self.state.device_status.iter().filter(|s| **s == DeviceStatus::WronglyRemoved).count() as u32
    }

    fn add_count(&mut self, stripe: u64, dev: usize) {
        let n = self.slots.len();
        self.state.lse_counts.entry(stripe).or_insert_with(|| vec![0; n])[dev] += 1;
    }

    fn remove_count(&mut self, stripe: u64, dev: usize) {
        if let Some(c) = self.state.lse_counts.get_mut(&stripe) {
            c[dev] -= 1;
            if c.iter().all(|&x| x == 0) {
                self.state.lse_counts.remove(&stripe);
            }
        }
    }

    /// Puts a fresh disk in `dev` and arms its failure clock.
    fn install_disk(&mut self, dev: usize) {
        let life = self.sample(dev, Purpose::DiskLife, self.disk.d_df);
        let slot = &mut self.slots[dev];
        slot.generation += 1;
        slot.epoch += 1;
        slot.fail_at = self.now + life;
        let epoch = slot.epoch;
        self.queue.push(self.now + life, Event::DiskFail { dev, epoch });
    }

    fn drop_lses(&mut self, dev: usize) {
        let lses = std::mem::take(&mut self.slots[dev].lses);
        for (_, stripe) in lses {
            self.remove_count(stripe, dev);
        }
        self.slots[dev].stash.clear();
    }

    // ------------------------------------------------------------------
    // event handlers

    fn handle(&mut self, ev: Event) {
        match ev {
            Event::DiskFail { dev, epoch } => {
                if self.slots[dev].epoch == epoch && !self.restoring {
                    self.log.counters.disk_failures += 1;
                    self.lose_device(dev);
                }
            }
            Event::LseArrive { dev } => self.lse_arrive(dev),
            Event::ScrubComplete { dev, lse } => self.scrub_complete(dev, lse),
            Event::ReplaceComplete { visit } => {
                if self.visit == Some(visit) {
                    self.visit = None;
                    self.replacement_visit();
                }
            }
            Event::RebuildComplete { token } => {
                if matches!(self.rebuild, Rebuild::Running { token: t, .. } if t == token) {
                    let dev = self.rebuild_queue.pop_front().expect("running rebuild has a device");
                    self.state.device_status[dev] = DeviceStatus::Operational;
                    self.rebuild = Rebuild::Idle;
                    self.start_next_rebuild();
                }
            }
            Event::HumanErrorRecovered { err } => {
                if !self.errors[err].resolved {
                    self.errors[err].resolved = true;
                    let dev = self.errors[err].removed;
                    self.reinsert(dev);
                    if !self.policy.spare {
                        self.visit = None;
                        for job in std::mem::take(&mut self.jobs) {
                            self.replace_ok(job);
                        }
                    }
                }
            }
            Event::WrongDiskCrashed { err } => {
                if !self.errors[err].resolved {
                    self.errors[err].resolved = true;
                    self.log.counters.crashes += 1;
                    self.lose_device(self.errors[err].removed);
                }
            }
            Event::BackupRecoveryComplete { epoch } => {
                if self.restoring && epoch == self.restore_epoch {
                    self.restoring = false;
                    for dev in 0..self.slots.len() {
                        self.install_disk(dev);
                        self.state.device_status[dev] = DeviceStatus::Operational;
                    }
                    self.spare_ready = self.policy.spare;
                }
            }
            Event::MissionEnd => unreachable!("handled by the loop"),
        }
    }

    fn lse_arrive(&mut self, dev: usize) {
        let next = self.sample(dev, Purpose::LseArrival, self.disk.d_lse);
        self.queue.push(self.now + next, Event::LseArrive { dev });
        let stripes = self.stripes;
        let stripe = self.stream(dev, Purpose::LseStripe).below(stripes);
        let residence = self.sample(dev, Purpose::Scrub, self.disk.d_scrub);
        if self.restoring || self.state.device_status[dev] != DeviceStatus::Operational {
            return;
        }
        self.add_count(stripe, dev);
        if self.policy.ignore_lse_during_rebuild {
            let df = self.df();
            if df > 0 && stripe_lost(&self.state.lse_counts[&stripe], &self.code, df) {
                self.remove_count(stripe, dev);
                return;
            }
        }
        let id = self.next_lse;
        self.next_lse += 1;
        self.slots[dev].lses.push((id, stripe));
        self.log.counters.lses += 1;
        self.queue.push(self.now + residence, Event::ScrubComplete { dev, lse: id });
    }

    fn scrub_complete(&mut self, dev: usize, lse: u64) {
        let slot = &mut self.slots[dev];
        if let Some(pos) = slot.lses.iter().position(|&(id, _)| id == lse) {
            let (_, stripe) = slot.lses.swap_remove(pos);
            self.remove_count(stripe, dev);
        } else if let Some(pos) = slot.stash.iter().position(|&(id, _)| id == lse) {
            slot.stash.swap_remove(pos);
        }
    }

    /// A disk stops for good: natural failure, or crash while wrongly removed.
    fn lose_device(&mut self, dev: usize) {
        self.drop_lses(dev);
        self.slots[dev].epoch += 1;
        if self.state.device_status[dev] == DeviceStatus::Rebuilding {
            let head = self.rebuild_queue.front() == Some(&dev);
            self.rebuild_queue.retain(|&d| d != dev);
            if head {
                self.rebuild = Rebuild::Idle;
            }
        }
        self.jobs.push(Job { dev, generation: self.slots[dev].generation, attempts: 0 });
        if self.spare_ready {
            self.spare_ready = false;
            self.begin_rebuild(dev);
        } else {
            self.state.device_status[dev] = DeviceStatus::Failed;
            self.awaiting.push_back(dev);
        }
        if matches!(self.rebuild, Rebuild::Idle) {
            self.start_next_rebuild();
        }
    }

    fn begin_rebuild(&mut self, dev: usize) {
        self.install_disk(dev);
        self.state.device_status[dev] = DeviceStatus::Rebuilding;
        self.rebuild_queue.push_back(dev);
        if matches!(self.rebuild, Rebuild::Idle) {
            self.start_next_rebuild();
        }
    }

    fn start_next_rebuild(&mut self) {
        if let Some(&dev) = self.rebuild_queue.front() {
            let d = self.sample(dev, Purpose::Rebuild, self.disk.d_rec);
            self.rebuild = Rebuild::Paused { remaining: d };
            self.resume_rebuild_if_possible();
        }
    }

    fn rebuild_blocked(&self) -> bool {
        self.df() + self.he() > self.code.r
    }

    fn resume_rebuild_if_possible(&mut self) {
        if let Rebuild::Paused { remaining } = self.rebuild {
            if !self.rebuild_blocked() {
                self.rebuild_token += 1;
                let token = self.rebuild_token;
                self.rebuild = Rebuild::Running { end: self.now + remaining, token };
                self.queue.push(self.now + remaining, Event::RebuildComplete { token });
            }
        }
    }

    fn pause_rebuild_if_blocked(&mut self) {
        if let Rebuild::Running { end, .. } = self.rebuild {
            if self.rebuild_blocked() {
                self.rebuild = Rebuild::Paused { remaining: end - self.now };
            }
        }
    }

    fn maybe_schedule_visit(&mut self) {
        if self.visit.is_some() || self.jobs.is_empty() || self.restoring || self.absorbed {
            return;
        }
        // the agent sorts out a wrong removal before attempting another replacement
        if self.errors.iter().any(|e| !e.resolved) {
            return;
        }
        // delayed replacement: the agent comes only after the rebuild onto the spare
        if self.policy.spare && !self.rebuild_queue.is_empty() {
            return;
        }
        let job = self.jobs[0];
        let delay = self.keyed_sample(job.dev, Purpose::Replacement, job.draw_index(), self.policy.d_dr);
        self.visit_seq += 1;
        self.visit = Some(self.visit_seq);
        self.queue.push(self.now + delay, Event::ReplaceComplete { visit: self.visit_seq });
    }

    /// All pending dead disks are handled in one visit; each attempt can go wrong.
    fn replacement_visit(&mut self) {
        let jobs = std::mem::take(&mut self.jobs);
        for mut job in jobs {
            let idx = job.draw_index();
            let u = self.keyed_uniform(job.dev, Purpose::HumanError, idx);
            job.attempts += 1;
            let operational: Vec<usize> = (0..self.slots.len())
                .filter(|&d| self.state.device_status[d] == DeviceStatus::Operational)
                .collect();
            if u < self.policy.hep && !operational.is_empty() {
                self.log.counters.human_errors += 1;
                let pick = self.keyed_uniform(job.dev, Purpose::WrongPick, idx);
                let victim = operational[((pick * operational.len() as f64) as usize).min(operational.len() - 1)];
                self.wrongly_remove(victim, job, idx);
                self.jobs.push(job);
            } else {
                self.replace_ok(job);
            }
        }
    }

    fn replace_ok(&mut self, job: Job) {
        self.log.counters.replacements += 1;
        if !self.policy.spare {
            if let Some(pos) = self.awaiting.iter().position(|&d| d == job.dev) {
                self.awaiting.remove(pos);
                self.begin_rebuild(job.dev);
            }
        } else if let Some(dev) = self.awaiting.pop_front() {
            self.begin_rebuild(dev);
        } else {
            self.spare_ready = true;
        }
    }

    fn wrongly_remove(&mut self, dev: usize, job: Job, idx: u64) {
        let lses = std::mem::take(&mut self.slots[dev].lses);
        for &(_, stripe) in &lses {
            self.remove_count(stripe, dev);
        }
        self.slots[dev].stash = lses;
        self.slots[dev].epoch += 1;
        self.state.device_status[dev] = DeviceStatus::WronglyRemoved;
        let err = self.errors.len();
        self.errors.push(HumanError { removed: dev, resolved: false });
        let her = self.keyed_sample(job.dev, Purpose::HumanErrorRecovery, idx, self.policy.d_her);
        let crash = self.keyed_sample(job.dev, Purpose::Crash, idx, self.policy.d_crash);
        if crash < her {
            self.queue.push(self.now + crash, Event::WrongDiskCrashed { err });
        } else {
            self.queue.push(self.now + her, Event::HumanErrorRecovered { err });
        }
    }

    fn reinsert(&mut self, dev: usize) {
        self.state.device_status[dev] = DeviceStatus::Operational;
        let lses = std::mem::take(&mut self.slots[dev].stash);
        for &(_, stripe) in &lses {
            self.add_count(stripe, dev);
        }
        self.slots[dev].lses = lses;
        let slot = &mut self.slots[dev];
        slot.epoch += 1;
        let at = slot.fail_at.max(self.now);
        let epoch = slot.epoch;
        self.queue.push(at, Event::DiskFail { dev, epoch });
    }

    // ------------------------------------------------------------------
    // classification and incident accounting

    fn evaluate(&mut self) {
        let df = self.df();
        let he = self.he();
        let r = self.code.r;
        if df > r {
            self.array_lost();
            return;
        }
        let lost: Vec<u64> = self
            .state
            .lse_counts
            .iter()
            .filter(|(_, c)| stripe_lost(c, &self.code, df))
            .map(|(&v, _)| v)
            .collect();
        if !lost.is_empty() {
            self.stripes_lost(&lost);
        }

        let adu = df + he > r;
        match (adu, self.open_adu) {
            (true, None) => {
                self.open_adu = Some(self.now);
                self.snapshot(DuCause::Adu);
            }
            (false, Some(start)) => {
                self.open_adu = None;
                self.push_du(start, self.now, self.log.usable_bytes, DuCause::Adu, DuScope::Array);
            }
            _ => {}
        }

        if he > 0 || !self.open_sdu.is_empty() {
            let unavailable: Vec<u64> = self
                .state
                .lse_counts
                .iter()
                .filter(|(_, c)| stripe_unavailable(c, &self.code, df, he))
                .map(|(&v, _)| v)
                .collect();
            let closed: Vec<(u64, f64)> = self
                .open_sdu
                .iter()
                .filter(|(v, _)| unavailable.binary_search(v).is_err())
                .map(|(&v, &s)| (v, s))
                .collect();
            for (v, start) in closed {
                self.open_sdu.remove(&v);
                self.push_du(start, self.now, self.stripe_bytes, DuCause::Sdu, DuScope::Stripe(v));
            }
            let mut opened = false;
            for v in unavailable {
                if let std::collections::btree_map::Entry::Vacant(e) = self.open_sdu.entry(v) {
                    e.insert(self.now);
                    opened = true;
                }
            }
            if opened {
                self.snapshot(DuCause::Sdu);
            }
        }

        self.pause_rebuild_if_blocked();
        self.resume_rebuild_if_possible();
    }

    fn snapshot(&mut self, cause: DuCause) {
        if let Some(t) = self.trace.as_mut() {
            t.push((self.state.clone(), cause));
        }
    }

    fn push_du(&mut self, start: f64, end: f64, bytes: f64, cause: DuCause, scope: DuScope) {
        let end = end.min(self.mission);
        if end > start {
            self.log.du_incidents.push(DuIncident { start, end, bytes, cause, scope });
        }
    }

    fn close_all_du(&mut self) {
        if let Some(start) = self.open_adu.take() {
            self.push_du(start, self.now, self.log.usable_bytes, DuCause::Adu, DuScope::Array);
        }
        for (v, start) in std::mem::take(&mut self.open_sdu) {
            self.push_du(start, self.now, self.stripe_bytes, DuCause::Sdu, DuScope::Stripe(v));
        }
    }

    fn stripes_lost(&mut self, lost: &[u64]) {
        let lost_bytes = (lost.len() as f64 * self.stripe_bytes).min(self.log.usable_bytes);
        let recovery = (self.policy.dos > 0.0)
            .then(|| self.sample(self.slots.len(), Purpose::SectorRecovery, self.policy.d_sbr));
        self.log.dl_incidents.push(DlIncident { time: self.now, lost_bytes, cause: DlCause::Sdl, recovery_hours: recovery });
        if let Some(rec) = recovery {
            for &v in lost {
                let bytes = self.policy.dos * self.stripe_bytes;
                self.push_du(self.now, self.now + rec, bytes, DuCause::SurvivableRecovery, DuScope::Stripe(v));
            }
        }
        for &v in lost {
            self.state.lse_counts.remove(&v);
            for slot in &mut self.slots {
                slot.lses.retain(|&(_, s)| s != v);
                slot.stash.retain(|&(_, s)| s != v);
            }
        }
    }

    fn array_lost(&mut self) {
        self.close_all_du();
        let usable = self.log.usable_bytes;
        if self.policy.dos == 0.0 {
            self.log.dl_incidents.push(DlIncident { time: self.now, lost_bytes: usable, cause: DlCause::Adl, recovery_hours: None });
            self.absorbed = true;
            return;
        }
        let rec = self.sample(self.slots.len(), Purpose::BackupRecovery, self.policy.d_br);
        self.log.dl_incidents.push(DlIncident { time: self.now, lost_bytes: usable, cause: DlCause::Adl, recovery_hours: Some(rec) });
        self.push_du(self.now, self.now + rec, self.policy.dos * usable, DuCause::SurvivableRecovery, DuScope::Array);

        self.restoring = true;
        self.restore_epoch += 1;
        for slot in &mut self.slots {
            slot.epoch += 1;
            slot.lses.clear();
            slot.stash.clear();
        }
        self.state.lse_counts.clear();
        self.jobs.clear();
        self.awaiting.clear();
        self.rebuild_queue.clear();
        self.rebuild = Rebuild::Idle;
        self.visit = None;
        for e in &mut self.errors {
            e.resolved = true;
        }
        let epoch = self.restore_epoch;
        self.queue.push(self.now + rec, Event::BackupRecoveryComplete { epoch });
    }
}
