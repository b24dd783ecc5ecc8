//! ADL / SDL / ADU / SDU classification of an instantaneous array state.
//!
//! A stripe survives when its lost symbols can be covered by `s` global parities
//! plus the row parities left over after failed devices: each spare row parity
//! absorbs every LSE of one non-failed device, so the best choice is the devices
//! holding the most LSEs.

use std::collections::BTreeMap;
use std::fmt;

use crate::array_config::CodeConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DeviceStatus {
    Operational,
    Failed,
    WronglyRemoved,
    Rebuilding,
}

impl DeviceStatus {
    /// Failed or rebuilding: contents not readable for erasure purposes.
    pub fn counts_as_failed(self) -> bool {
        matches!(self, DeviceStatus::Failed | DeviceStatus::Rebuilding)
    }
}

/// Device statuses plus sparse per-stripe LSE counts.
///
/// Counts held by a device that is not `Operational` are ignored by the
/// classifier; the simulator never stores any there.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrayState {
    pub device_status: Vec<DeviceStatus>,
    pub lse_counts: BTreeMap<u64, Vec<u32>>,
    pub code: CodeConfig,
}

impl ArrayState {
    pub fn new(code: CodeConfig) -> Self {
        ArrayState {
            device_status: vec![DeviceStatus::Operational; code.n as usize],
            lse_counts: BTreeMap::new(),
            code,
        }
    }

    /// Per-device counts of one stripe with non-operational devices zeroed.
    pub fn effective_counts(&self, counts: &[u32]) -> Vec<u32> {
        counts
            .iter()
            .zip(&self.device_status)
            .map(|(&c, &st)| if st == DeviceStatus::Operational { c } else { 0 })
            .collect()
    }
}

pub fn count_df(state: &ArrayState) -> u32 {
    state.device_status.iter().filter(|s| s.counts_as_failed()).count() as u32
}

pub fn count_he(state: &ArrayState) -> u32 {
    state.device_status.iter().filter(|s| **s == DeviceStatus::WronglyRemoved).count() as u32
}

/// Sum of the `k` largest counts. Ties go to the lowest index, which does not
/// change the sum.
pub fn top_k_sum(counts: &[u32], k: usize) -> u64 {
    if k == 0 {
        return 0;
    }
    if k >= counts.len() {
        return counts.iter().map(|&c| c as u64).sum();
    }
    let mut buf: Vec<u32> = counts.to_vec();
    buf.select_nth_unstable_by(k - 1, |a, b| b.cmp(a));
    buf[..k].iter().map(|&c| c as u64).sum()
}

/// Device indices of the `k` largest counts, lowest index first among ties.
pub fn top_k_devices(counts: &[u32], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..counts.len()).collect();
    idx.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// `s` plus the LSEs of the `r - df` non-failed devices with the most LSEs.
pub fn max_correctable_lse(stripe_counts: &[u32], code: &CodeConfig, df: u32) -> Result<u64> {
    if df > code.r {
        return Err(Error::Precondition(format!("df = {df} exceeds r = {}", code.r)));
    }
    Ok(code.s as u64 + top_k_sum(stripe_counts, (code.r - df) as usize))
}

/// Lost stripe: more LSEs than the remaining parities can cover. `counts` must
/// already be zeroed for non-operational devices.
#[inline]
pub fn stripe_lost(counts: &[u32], code: &CodeConfig, df: u32) -> bool {
    if df > code.r {
        return true;
    }
    let total: u64 = counts.iter().map(|&c| c as u64).sum();
    total > code.s as u64 + top_k_sum(counts, (code.r - df) as usize)
}

/// Unavailable stripe: recoverable with every non-failed device present, but not
/// with only the operational ones while `he` devices are out.
#[inline]
pub fn stripe_unavailable(counts: &[u32], code: &CodeConfig, df: u32, he: u32) -> bool {
    if he == 0 || df + he > code.r {
        return false;
    }
    let total: u64 = counts.iter().map(|&c| c as u64).sum();
    if total == 0 {
        return false;
    }
    let full = code.s as u64 + top_k_sum(counts, (code.r - df) as usize);
    let op_only = code.s as u64 + top_k_sum(counts, (code.r - df - he) as usize);
    total <= full && op_only < total
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct Classification {
    pub adl: bool,
    pub sdl: bool,
    pub adu: bool,
    pub sdu: bool,
}

impl Classification {
    pub fn is_empty(&self) -> bool {
        !(self.adl || self.sdl || self.adu || self.sdu)
    }
}

impl fmt::Display for Classification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = [(self.adl, "ADL"), (self.sdl, "SDL"), (self.adu, "ADU"), (self.sdu, "SDU")]
            .iter()
            .filter(|(on, _)| *on)
            .map(|(_, n)| *n)
            .collect();
        write!(f, "{{{}}}", names.join(","))
    }
}

pub fn classify(state: &ArrayState) -> Classification {
    let code = &state.code;
    let df = count_df(state);
    let he = count_he(state);
    let mut c = Classification { adl: code.r < df, ..Default::default() };
    if df <= code.r {
        c.adu = code.r < df + he;
        let mut eff = vec![0u32; state.device_status.len()];
        for counts in state.lse_counts.values() {
            for (i, e) in eff.iter_mut().enumerate() {
                *e = if state.device_status[i] == DeviceStatus::Operational { counts[i] } else { 0 };
            }
            if !c.sdl && stripe_lost(&eff, code, df) {
                c.sdl = true;
            }
            if !c.sdu && stripe_unavailable(&eff, code, df, he) {
                c.sdu = true;
            }
            if c.sdl && (c.sdu || he == 0) {
                break;
            }
        }
    }
    c
}

/// Brute-force reference for `classify`: recoverability is decided by trying
/// every subset of devices whose LSEs the spare row parities could absorb.
pub fn oracle_classify(state: &ArrayState) -> Result<Classification> {
    let n = state.device_status.len();
    if n > 8 {
        return Err(Error::Size(format!("oracle handles at most 8 devices, got {n}")));
    }
    let r = state.code.r as i64;
    let s = state.code.s as i64;
    let mut df = 0i64;
    let mut he = 0i64;
    let mut readable = 0u32; // non-failed devices
    let mut present = 0u32; // operational devices
    for (i, st) in state.device_status.iter().enumerate() {
        match st {
            DeviceStatus::Failed | DeviceStatus::Rebuilding => df += 1,
            DeviceStatus::WronglyRemoved => {
                he += 1;
                readable |= 1 << i;
            }
            DeviceStatus::Operational => {
                readable |= 1 << i;
                present |= 1 << i;
            }
        }
    }
    let adl = df > r;
    let adu = !adl && df + he > r;
    let mut sdl = false;
    let mut sdu = false;
    if !adl {
        for counts in state.lse_counts.values() {
            let lse = |i: usize| if present & (1 << i) != 0 { counts[i] as i64 } else { 0 };
            // LSEs held by each device subset, built from the subset minus its lowest member
            let mut held = [0i64; 256];
            for set in 1usize..1 << n {
                held[set] = held[set & (set - 1)] + lse(set.trailing_zeros() as usize);
            }
            let total = held[(1 << n) - 1];
            let recoverable_with = |pool: u32, budget: i64| -> bool {
                budget >= 0
                    && (0u32..1 << n).any(|set| {
                        set & !pool == 0 && set.count_ones() as i64 <= budget && total - held[set as usize] <= s
                    })
            };
            let full = recoverable_with(readable, r - df);
            if !full {
                sdl = true;
            }
            if he > 0 && df + he <= r && full && total > 0 && !recoverable_with(present, r - df - he) {
                sdu = true;
            }
        }
    }
    Ok(Classification { adl, sdl, adu, sdu })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use DeviceStatus::*;

    fn state(code: CodeConfig, status: &[DeviceStatus], stripes: &[&[u32]]) -> ArrayState {
        let mut st = ArrayState::new(code);
        st.device_status = status.to_vec();
        for (i, c) in stripes.iter().enumerate() {
            st.lse_counts.insert(i as u64 * 7, c.to_vec());
        }
        st
    }

    fn cl(adl: bool, sdl: bool, adu: bool, sdu: bool) -> Classification {
        Classification { adl, sdl, adu, sdu }
    }

    #[test]
    fn counts() {
        let c = CodeConfig::raid5(3);
        let st = state(c, &[Operational; 4], &[]);
        assert_eq!((count_df(&st), count_he(&st)), (0, 0));
        let st = state(c, &[Failed, WronglyRemoved, Operational, Operational], &[]);
        assert_eq!((count_df(&st), count_he(&st)), (1, 1));
        let st = state(CodeConfig::raid6(4), &[Failed, Operational, Rebuilding, Operational, Operational, Operational], &[]);
        assert_eq!(count_df(&st), 2);
    }

    #[test]
    fn correctable_examples() {
        let c = CodeConfig::pmds(4, 4, 1, 1);
        assert_eq!(max_correctable_lse(&[3, 1, 0, 0], &c, 0).unwrap(), 4);
        assert_eq!(max_correctable_lse(&[3, 1, 0, 0], &c, 1).unwrap(), 1);
        assert_eq!(max_correctable_lse(&[0, 0, 0, 0], &c, 0).unwrap(), 1);
        assert!(matches!(max_correctable_lse(&[0; 4], &c, 2), Err(Error::Precondition(_))));
    }

    #[test]
    fn classify_examples() {
        let cases = [
            (state(CodeConfig::raid6(3), &[Failed, Failed, Failed, Operational, Operational], &[]), cl(true, false, false, false)),
            (state(CodeConfig::raid5(3), &[Failed, WronglyRemoved, Operational, Operational], &[]), cl(false, false, true, false)),
            (state(CodeConfig::pmds(4, 4, 1, 1), &[Operational; 4], &[&[2, 2, 0, 0]]), cl(false, true, false, false)),
            (
                state(CodeConfig::pmds(4, 4, 1, 1), &[WronglyRemoved, Operational, Operational, Operational], &[&[0, 1, 1, 0]]),
                cl(false, false, false, true),
            ),
            (state(CodeConfig::raid5(7), &[Operational; 8], &[]), cl(false, false, false, false)),
            (state(CodeConfig::pmds(4, 4, 2, 0), &[Operational; 4], &[&[1, 1, 1, 0]]), cl(false, true, false, false)),
        ];
        for (st, want) in cases {
            assert_eq!(classify(&st), want, "{st:?}");
            assert_eq!(oracle_classify(&st).unwrap(), want, "{st:?}");
        }
    }

    #[test]
    fn oracle_size_bound() {
        let st = state(CodeConfig::raid5(8), &[Operational; 9], &[]);
        assert!(matches!(oracle_classify(&st), Err(Error::Size(_))));
    }

    #[test]
    fn display() {
        assert_eq!(cl(false, true, true, false).to_string(), "{SDL,ADU}");
        assert_eq!(Classification::default().to_string(), "{}");
    }

    #[test]
    fn ties_pick_lowest_index() {
        assert_eq!(top_k_devices(&[2, 5, 5, 1, 5], 2), vec![1, 2]);
        assert_eq!(top_k_sum(&[2, 5, 5, 1, 5], 2), 10);
    }

    /// Every state with n in 3..=4 and counts up to 2 on one stripe.
    #[test]
    fn small_exhaustive_agreement() {
        let statuses = [Operational, Failed, WronglyRemoved, Rebuilding];
        for n in 3..=4u32 {
            for r in 0..n.min(3) {
                for s in 0..=2 {
                    let code = CodeConfig::pmds(4, n, r, s);
                    if code.data_symbols() <= 0 {
                        continue;
                    }
                    for st_code in 0..4usize.pow(n) {
                        let status: Vec<_> = (0..n).map(|i| statuses[st_code / 4usize.pow(i) % 4]).collect();
                        for lse_code in 0..3usize.pow(n) {
                            let counts: Vec<u32> = (0..n).map(|i| (lse_code / 3usize.pow(i) % 3) as u32).collect();
                            let st = state(code, &status, &[&counts]);
                            assert_eq!(classify(&st), oracle_classify(&st).unwrap(), "{st:?}");
                        }
                    }
                }
            }
        }
    }

    fn arb_state() -> impl Strategy<Value = ArrayState> {
        (3u32..=8, 0u32..=3, 0u32..=3).prop_flat_map(|(n, r, s)| {
            let r = r.min(n - 1);
            let status = prop::collection::vec(
                prop_oneof![4 => Just(Operational), 1 => Just(Failed), 1 => Just(WronglyRemoved), 1 => Just(Rebuilding)],
                n as usize,
            );
            let stripes = prop::collection::vec(prop::collection::vec(0u32..4, n as usize), 0..3);
            (Just(CodeConfig::pmds(8, n, r, s)), status, stripes).prop_map(|(code, status, stripes)| {
                let mut st = ArrayState::new(code);
                st.device_status = status;
                for (i, c) in stripes.into_iter().enumerate() {
                    st.lse_counts.insert(i as u64, c);
                }
                st
            })
        })
    }

    proptest! {
        #[test]
        fn matches_oracle(st in arb_state()) {
            prop_assert_eq!(classify(&st), oracle_classify(&st).unwrap());
        }

        #[test]
        fn extra_lse_never_clears_sdl(st in arb_state(), dev in 0usize..8) {
            prop_assume!(!st.lse_counts.is_empty());
            let before = classify(&st);
            let mut more = st.clone();
            let dev = dev % more.device_status.len();
            let first = *more.lse_counts.keys().next().unwrap();
            more.lse_counts.get_mut(&first).unwrap()[dev] += 1;
            prop_assert!(!before.sdl || classify(&more).sdl);
        }

        #[test]
        fn extra_failure_never_clears_adl(st in arb_state(), dev in 0usize..8) {
            let before = classify(&st);
            let mut more = st.clone();
            let dev = dev % more.device_status.len();
            more.device_status[dev] = Failed;
            more.lse_counts.values_mut().for_each(|c| c[dev] = 0);
            prop_assert!(!before.adl || classify(&more).adl);
        }

        #[test]
        fn adl_and_adu_exclusive(st in arb_state()) {
            let c = classify(&st);
            prop_assert!(!(c.adl && c.adu));
        }

        #[test]
        fn top_k_is_the_best_subset(counts in prop::collection::vec(0u32..10, 1..8), k in 0usize..8) {
            let n = counts.len();
            let k = k.min(n);
            let best = top_k_sum(&counts, k);
            for set in 0u32..1 << n {
                if set.count_ones() as usize == k {
                    let sum: u64 = (0..n).filter(|i| set & (1 << i) != 0).map(|i| counts[i] as u64).sum();
                    prop_assert!(sum <= best);
                }
            }
            let picked: u64 = top_k_devices(&counts, k).iter().map(|&i| counts[i] as u64).sum();
            prop_assert_eq!(picked, best);
        }
    }
}
