//! Bit-sliced batch kernel: 64 independent samples evolve under one shared
//! realization, lane `k` of every word belonging to sample `k`.
//!
//! Each tracked string is stored as one `u64` per site, so every gate is a
//! handful of word operations regardless of which lanes it changes. Signs
//! are kept as one word per string with bit set meaning −1.

use crate::circuit::{Gate, GateEvent, Outcome, Step};
use crate::lattice::{BitString, Partition};

pub const LANES: usize = 64;

/// Lane mask for the first `n` lanes.
#[inline]
pub fn lane_mask(n: usize) -> u64 {
    if n >= LANES {
        u64::MAX
    } else {
        (1u64 << n) - 1
    }
}

/// Species labels of the difference between strings 0 and 1.
#[derive(Debug, Clone)]
pub struct SlicedLabels {
    pub x: Vec<u64>,
    pub y: Vec<u64>,
    pub met: u64,
    pub met_time: [u32; LANES],
}

#[derive(Debug, Clone)]
pub struct LaneBatch {
    l: usize,
    n_strings: usize,
    active: u64,
    /// `bits[k * l + site]`
    bits: Vec<u64>,
    signs: Vec<u64>,
    labels: Option<SlicedLabels>,
}

impl LaneBatch {
    /// `n_strings` zero strings of `l` sites in `n_lanes` active lanes.
    pub fn new(l: usize, n_strings: usize, n_lanes: usize) -> Self {
        assert!(n_lanes <= LANES && n_strings > 0);
        LaneBatch {
            l,
            n_strings,
            active: lane_mask(n_lanes),
            bits: vec![0; n_strings * l],
            signs: vec![0; n_strings],
            labels: None,
        }
    }

    pub fn l(&self) -> usize {
        self.l
    }

    pub fn active(&self) -> u64 {
        self.active
    }

    pub fn n_strings(&self) -> usize {
        self.n_strings
    }

    /// Load string `k` of `lane`.
    pub fn set_string(&mut self, k: usize, lane: usize, s: &BitString) {
        assert_eq!(s.len(), self.l);
        let bit = 1u64 << lane;
        let row = &mut self.bits[k * self.l..(k + 1) * self.l];
        for (site, w) in row.iter_mut().enumerate() {
            if s.get(site) {
                *w |= bit;
            } else {
                *w &= !bit;
            }
        }
    }

    /// Load string `k` of lanes `0..values.len()` from integers, bit `i` of
    /// each value being site `i`. Requires `l <= 64`.
    pub fn load_u64(&mut self, k: usize, values: &[u64]) {
        assert!(self.l <= 64 && values.len() <= LANES);
        let row = &mut self.bits[k * self.l..(k + 1) * self.l];
        for (site, w) in row.iter_mut().enumerate() {
            let mut word = 0;
            for (lane, v) in values.iter().enumerate() {
                word |= ((v >> site) & 1) << lane;
            }
            *w = word;
        }
    }

    pub fn string(&self, k: usize, lane: usize) -> BitString {
        let row = self.row(k);
        let bits: Vec<u8> = row.iter().map(|w| ((w >> lane) & 1) as u8).collect();
        BitString::from_bits(&bits)
    }

    #[inline]
    pub fn row(&self, k: usize) -> &[u64] {
        &self.bits[k * self.l..(k + 1) * self.l]
    }

    /// Sign word of string `k` (bit set = −1).
    pub fn sign_word(&self, k: usize) -> u64 {
        self.signs[k]
    }

    /// XOR of all sign words: bit set where the relative phase is −1.
    pub fn phase_parity(&self) -> u64 {
        self.signs.iter().fold(0, |a, s| a ^ s) & self.active
    }

    /// Label the difference of strings 0 and 1: X inside A, Y outside.
    pub fn init_labels(&mut self, part: &Partition) {
        assert!(self.n_strings >= 2);
        let (r0, r1) = (self.row(0), self.row(1));
        let mut x = vec![0; self.l];
        let mut y = vec![0; self.l];
        for site in 0..self.l {
            let h = r0[site] ^ r1[site];
            if part.in_a(site) {
                x[site] = h;
            } else {
                y[site] = h;
            }
        }
        self.labels = Some(SlicedLabels {
            x,
            y,
            met: 0,
            met_time: [0; LANES],
        });
    }

    pub fn labels(&self) -> Option<&SlicedLabels> {
        self.labels.as_ref()
    }

    /// Lanes whose species have met.
    pub fn met(&self) -> u64 {
        self.labels.as_ref().map_or(0, |lb| lb.met) & self.active
    }

    /// Particle word `h` at `site`.
    #[inline]
    pub fn field(&self, site: usize) -> u64 {
        self.bits[site] ^ self.bits[self.l + site]
    }

    /// Apply one event to every string of every lane. `t` is the time
    /// recorded for lanes that meet on this event.
    #[inline]
    pub fn apply(&mut self, ev: &GateEvent, t: u32) {
        let s = ev.support();
        let l = self.l;
        let before = self.labels.as_ref().map(|lb| {
            let mut hx = 0;
            let mut hy = 0;
            for &site in s {
                hx |= lb.x[site as usize];
                hy |= lb.y[site as usize];
            }
            (hx, hy)
        });

        let (a, b) = (s[0] as usize, s[1] as usize);
        match ev.gate {
            Gate::Fredkin => {
                let c = s[2] as usize;
                for row in self.bits.chunks_exact_mut(l) {
                    let d = (row[a] ^ row[c]) & row[b];
                    row[a] ^= d;
                    row[c] ^= d;
                }
            }
            Gate::Swap => {
                for row in self.bits.chunks_exact_mut(l) {
                    row.swap(a, b);
                }
            }
            Gate::Cz => {
                for (row, sign) in self.bits.chunks_exact(l).zip(self.signs.iter_mut()) {
                    *sign ^= row[a] & row[b];
                }
            }
            Gate::Cswap4 => {
                let (c, d4) = (s[2] as usize, s[3] as usize);
                for row in self.bits.chunks_exact_mut(l) {
                    let cond = !row[a] | row[d4];
                    let d = (row[b] ^ row[c]) & cond;
                    row[b] ^= d;
                    row[c] ^= d;
                }
            }
            Gate::Measure(outcome) => {
                for row in self.bits.chunks_exact_mut(l) {
                    let anti = row[a] ^ row[b];
                    match outcome {
                        Outcome::One => {
                            row[a] &= !anti;
                            row[b] |= anti;
                        }
                        Outcome::Two => {
                            row[a] |= anti;
                            row[b] &= !anti;
                        }
                    }
                }
            }
        }

        if let Some((hx, hy)) = before {
            let lb = self.labels.as_mut().expect("labels present");
            let mut newly = hx & hy & !lb.met;
            lb.met |= newly;
            while newly != 0 {
                let lane = newly.trailing_zeros() as usize;
                lb.met_time[lane] = t;
                newly &= newly - 1;
            }
            if matches!(ev.gate, Gate::Cz) {
                return;
            }
            let live = !lb.met;
            for &site in s {
                let site = site as usize;
                let h = self.bits[site] ^ self.bits[l + site];
                debug_assert_eq!(h & live & !(hx | hy) & self.active, 0, "particle created from vacuum");
                lb.x[site] = (lb.x[site] & !live) | (h & hx & live);
                lb.y[site] = (lb.y[site] & !live) | (h & hy & live);
            }
        }
    }

    /// Apply a step in physical order.
    pub fn apply_step_forward(&mut self, step: &Step, t: u32) {
        for sub in &step.sublayers {
            for ev in &sub.events {
                self.apply(ev, t);
            }
        }
    }

    /// Apply a step in reverse order, as amplitude tracing requires.
    /// Events within one sublayer commute.
    pub fn apply_step_backward(&mut self, step: &Step, t: u32) {
        for sub in step.sublayers.iter().rev() {
            for ev in &sub.events {
                self.apply(ev, t);
            }
        }
    }

    /// Lanes (among active, unmet ones) whose labels disagree with the field.
    pub fn label_mismatch(&self) -> u64 {
        let Some(lb) = &self.labels else { return 0 };
        let live = !lb.met & self.active;
        let mut bad = 0;
        for site in 0..self.l {
            let h = self.field(site);
            bad |= (h ^ (lb.x[site] | lb.y[site])) & live;
            bad |= lb.x[site] & lb.y[site] & live;
        }
        bad
    }

    /// Number of particles per lane.
    pub fn particle_counts(&self) -> [u32; LANES] {
        let mut counts = [0u32; LANES];
        for site in 0..self.l {
            let mut h = self.field(site) & self.active;
            while h != 0 {
                counts[h.trailing_zeros() as usize] += 1;
                h &= h - 1;
            }
        }
        counts
    }

    /// Rightmost X site of each lane (`None` when the species is extinct).
    pub fn rightmost_x(&self) -> [Option<u32>; LANES] {
        let mut out = [None; LANES];
        let Some(lb) = &self.labels else { return out };
        let mut remaining = self.active;
        for site in (0..self.l).rev() {
            let mut hit = lb.x[site] & remaining;
            remaining &= !hit;
            while hit != 0 {
                out[hit.trailing_zeros() as usize] = Some(site as u32);
                hit &= hit - 1;
            }
            if remaining == 0 {
                break;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::{sample_realization, Model, ModelSpec};
    use crate::dynamics::{Label, PairTrajectory};
    use crate::lattice::{sample_bitstring, swap_a, Boundary, SectorSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Scalar and sliced engines agree lane by lane on bits, signs, labels
    /// and meeting times.
    #[test]
    fn matches_scalar_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for (model, l) in [(Model::FredkinSwap, 24), (Model::SwapOnly, 20), (Model::Cswap4, 24)] {
            for p in [0.0, 0.5, 1.0] {
                let part = Partition::new(l, l / 2, Boundary::Periodic).unwrap();
                let spec = ModelSpec::new(model, part, 0.5, p).unwrap();
                let real = sample_realization(&spec, 12, &mut rng).unwrap();
                let lanes = 37;
                let mut batch = LaneBatch::new(l, 4, lanes);
                let mut scalars = Vec::new();
                for lane in 0..lanes {
                    let n1 = sample_bitstring(l, SectorSpec::Mixed, &mut rng).unwrap();
                    let n2 = sample_bitstring(l, SectorSpec::Mixed, &mut rng).unwrap();
                    let (n1p, n2p) = swap_a(&n1, &n2, part.l_a);
                    for (k, s) in [&n1, &n2, &n1p, &n2p].into_iter().enumerate() {
                        batch.set_string(k, lane, s);
                    }
                    scalars.push(PairTrajectory::new(n1, n2, &part));
                }
                batch.init_labels(&part);
                for (i, step) in real.steps.iter().enumerate().rev() {
                    let t = (real.steps.len() - i) as u32;
                    batch.apply_step_backward(step, t);
                    for pt in scalars.iter_mut() {
                        for sub in step.sublayers.iter().rev() {
                            for ev in &sub.events {
                                pt.apply_event(ev, t as usize).unwrap();
                            }
                        }
                    }
                }
                assert_eq!(batch.label_mismatch(), 0);
                let lb = batch.labels().unwrap();
                for (lane, pt) in scalars.iter().enumerate() {
                    for k in 0..4 {
                        assert_eq!(batch.string(k, lane), pt.strings[k].bits);
                        assert_eq!((batch.sign_word(k) >> lane) & 1 == 1, pt.strings[k].sign() < 0);
                    }
                    assert_eq!((lb.met >> lane) & 1 == 1, pt.met, "{model} p={p} lane {lane}");
                    if pt.met {
                        assert_eq!(Some(lb.met_time[lane] as usize), pt.met_time);
                    } else {
                        for site in 0..l {
                            let want = pt.labels[site];
                            assert_eq!((lb.x[site] >> lane) & 1 == 1, want == Label::X);
                            assert_eq!((lb.y[site] >> lane) & 1 == 1, want == Label::Y);
                        }
                        assert_eq!(batch.rightmost_x()[lane], pt.endpoints().0.map(|x| x as u32));
                    }
                }
            }
        }
    }

    #[test]
    fn lane_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut b = LaneBatch::new(70, 2, 64);
        let s = sample_bitstring(70, SectorSpec::Mixed, &mut rng).unwrap();
        b.set_string(1, 63, &s);
        assert_eq!(b.string(1, 63), s);
        assert_eq!(b.string(0, 63), BitString::zeros(70));
        assert_eq!(lane_mask(3), 0b111);
        assert_eq!(lane_mask(64), u64::MAX);
    }
}
