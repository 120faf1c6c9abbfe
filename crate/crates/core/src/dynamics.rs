//! Reference (one sample at a time) bit-string dynamics.
//!
//! Every event in every model maps a basis label to another basis label and
//! multiplies the amplitude by ±1, so a tracked string is a [`BitString`] plus
//! a sign. [`PairTrajectory`] evolves the four strings of one purity-sum term
//! together with the two-species labelling of their difference field.
//!
//! The batched kernel in [`crate::kernel`] is the production path; this
//! module is its specification and test oracle.

use crate::circuit::{Gate, GateEvent, Outcome, Sublayer};
use crate::error::{Error, Result};
use crate::lattice::{swap_a, BitString, Partition};

/// A basis label with its accumulated sign.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvolvingString {
    pub bits: BitString,
    negative: bool,
}

impl EvolvingString {
    pub fn new(bits: BitString) -> Self {
        EvolvingString { bits, negative: false }
    }

    /// +1 or −1.
    pub fn sign(&self) -> i8 {
        if self.negative {
            -1
        } else {
            1
        }
    }

    pub fn with_sign(mut self, sign: i8) -> Self {
        self.negative = sign < 0;
        self
    }

    pub fn apply(&mut self, ev: &GateEvent) {
        let s = ev.support();
        let b = &mut self.bits;
        let (s0, s1) = (s[0] as usize, s[1] as usize);
        match ev.gate {
            Gate::Fredkin => {
                let s2 = s[2] as usize;
                if b.get(s1) {
                    let (x, z) = (b.get(s0), b.get(s2));
                    b.set(s0, z);
                    b.set(s2, x);
                }
            }
            Gate::Swap => {
                let (x, y) = (b.get(s0), b.get(s1));
                b.set(s0, y);
                b.set(s1, x);
            }
            Gate::Cz => {
                if b.get(s0) && b.get(s1) {
                    self.negative = !self.negative;
                }
            }
            Gate::Cswap4 => {
                let (s2, s3) = (s[2] as usize, s[3] as usize);
                if !b.get(s0) || b.get(s3) {
                    let (x, y) = (b.get(s1), b.get(s2));
                    b.set(s1, y);
                    b.set(s2, x);
                }
            }
            Gate::Measure(outcome) => {
                if b.get(s0) != b.get(s1) {
                    let first_one = outcome == Outcome::Two;
                    b.set(s0, first_one);
                    b.set(s1, !first_one);
                }
            }
        }
    }
}

/// Apply one event to a tracked string.
pub fn apply_event(ev: &GateEvent, s: &EvolvingString) -> EvolvingString {
    let mut out = s.clone();
    out.apply(ev);
    out
}

/// Difference field `h(x) = |n1(x) − n2(x)|`.
pub fn particle_field(n1: &BitString, n2: &BitString) -> BitString {
    n1.xor(n2)
}

/// Species of a particle of the difference field.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Label {
    None,
    /// Descends from a difference initially in A.
    X,
    /// Descends from a difference initially in B.
    Y,
}

/// The four strings `n1, n2, n1', n2'` of one purity-sum term, the species
/// labels of `n1 ⊕ n2`, and whether the species have met.
#[derive(Debug, Clone)]
pub struct PairTrajectory {
    pub strings: [EvolvingString; 4],
    pub labels: Vec<Label>,
    pub met: bool,
    pub met_time: Option<usize>,
}

impl PairTrajectory {
    /// Build the term for `(n1, n2)`: the primed strings are their A-swap,
    /// differences in A are labelled X and differences in B are labelled Y.
    pub fn new(n1: BitString, n2: BitString, part: &Partition) -> Self {
        let (n1p, n2p) = swap_a(&n1, &n2, part.l_a);
        let h = particle_field(&n1, &n2);
        let labels = (0..part.l)
            .map(|x| match (h.get(x), part.in_a(x)) {
                (false, _) => Label::None,
                (true, true) => Label::X,
                (true, false) => Label::Y,
            })
            .collect();
        PairTrajectory {
            strings: [n1, n2, n1p, n2p].map(EvolvingString::new),
            labels,
            met: false,
            met_time: None,
        }
    }

    pub fn field(&self) -> BitString {
        particle_field(&self.strings[0].bits, &self.strings[1].bits)
    }

    /// Apply one fired event at time `t`, updating labels and the meeting flag.
    pub fn apply_event(&mut self, ev: &GateEvent, t: usize) -> Result<()> {
        let support = ev.support();
        let (has_x, has_y) = if self.met {
            (false, false)
        } else {
            support.iter().fold((false, false), |(x, y), &s| {
                let l = self.labels[s as usize];
                (x || l == Label::X, y || l == Label::Y)
            })
        };
        for s in self.strings.iter_mut() {
            s.apply(ev);
        }
        if self.met {
            return Ok(());
        }
        if has_x && has_y {
            self.met = true;
            self.met_time = Some(t);
            return Ok(());
        }
        let inherited = if has_x {
            Label::X
        } else if has_y {
            Label::Y
        } else {
            Label::None
        };
        for &s in support {
            let s = s as usize;
            let occupied = self.strings[0].bits.get(s) != self.strings[1].bits.get(s);
            if occupied && inherited == Label::None {
                return Err(Error::Invariant(format!(
                    "{:?} on sites {support:?} created a particle from vacuum",
                    ev.gate
                )));
            }
            self.labels[s] = if occupied { inherited } else { Label::None };
        }
        Ok(())
    }

    /// Check that, before meeting, labels sit exactly on the particles.
    pub fn check_labels(&self) -> Result<()> {
        if self.met {
            return Ok(());
        }
        let h = self.field();
        for (x, &l) in self.labels.iter().enumerate() {
            if h.get(x) != (l != Label::None) {
                return Err(Error::Invariant(format!("label {l:?} at site {x} disagrees with h = {}", h.get(x) as u8)));
            }
        }
        Ok(())
    }

    /// Product of the four signs: the relative phase `e^{iΘ_r}`.
    pub fn relative_phase(&self) -> i8 {
        self.strings.iter().map(|s| s.sign()).product()
    }

    /// Rightmost X site and leftmost Y site.
    pub fn endpoints(&self) -> (Option<usize>, Option<usize>) {
        let x = self.labels.iter().rposition(|&l| l == Label::X);
        let y = self.labels.iter().position(|&l| l == Label::Y);
        (x, y)
    }

    pub fn particle_count(&self) -> u32 {
        crate::lattice::charge(&self.field())
    }
}

/// Apply every event of a sublayer to a pair at time `t`.
pub fn step_pair(sub: &Sublayer, pt: &mut PairTrajectory, t: usize) -> Result<()> {
    pt.check_labels()?;
    for ev in &sub.events {
        pt.apply_event(ev, t)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{charge, Boundary};

    fn bs(s: &str) -> BitString {
        s.parse().unwrap()
    }

    fn ev(gate: Gate, sites: &[usize]) -> GateEvent {
        GateEvent::new(gate, sites)
    }

    fn run(gate: Gate, bits: &str) -> EvolvingString {
        let n = bits.len();
        apply_event(&ev(gate, &(0..n).collect::<Vec<_>>()), &EvolvingString::new(bs(bits)))
    }

    #[test]
    fn gate_examples() {
        assert_eq!(run(Gate::Fredkin, "011").bits, bs("110"));
        assert_eq!(run(Gate::Fredkin, "001").bits, bs("001"));
        let cz = run(Gate::Cz, "11");
        assert_eq!((cz.bits.clone(), cz.sign()), (bs("11"), -1));
        assert_eq!(run(Gate::Cz, "10").sign(), 1);
        assert_eq!(run(Gate::Measure(Outcome::One), "10").bits, bs("01"));
        assert_eq!(run(Gate::Measure(Outcome::One), "11").bits, bs("11"));
        assert_eq!(run(Gate::Measure(Outcome::Two), "01").bits, bs("10"));
        assert_eq!(run(Gate::Cswap4, "1100").bits, bs("1100"));
        assert_eq!(run(Gate::Cswap4, "0101").bits, bs("0011"));
        assert_eq!(run(Gate::Cswap4, "1011").bits, bs("1101"));
    }

    #[test]
    fn every_gate_conserves_charge_exhaustively() {
        let gates = [
            Gate::Fredkin,
            Gate::Swap,
            Gate::Cz,
            Gate::Cswap4,
            Gate::Measure(Outcome::One),
            Gate::Measure(Outcome::Two),
        ];
        for g in gates {
            let k = g.arity();
            for v in 0..1u64 << k {
                let s = EvolvingString::new(BitString::from_u64(v, k));
                let out = apply_event(&ev(g, &(0..k).collect::<Vec<_>>()), &s);
                assert_eq!(charge(&out.bits), charge(&s.bits), "{g:?} on {v:b}");
                if !matches!(g, Gate::Cz) {
                    assert_eq!(out.sign(), 1, "only CZ changes signs");
                }
            }
        }
    }

    #[test]
    fn particle_field_is_xor() {
        assert_eq!(particle_field(&bs("0110"), &bs("0101")), bs("0011"));
        assert_eq!(particle_field(&bs("0110"), &bs("0110")), bs("0000"));
        assert_eq!(particle_field(&bs("0101"), &bs("0110")), bs("0011"));
    }

    fn pair(n1: &str, n2: &str, l_a: usize) -> PairTrajectory {
        let part = Partition::new(n1.len(), l_a, Boundary::Open).unwrap();
        PairTrajectory::new(bs(n1), bs(n2), &part)
    }

    #[test]
    fn fredkin_branches_one_particle_into_three() {
        let mut pt = pair("011", "001", 2);
        pt.apply_event(&ev(Gate::Fredkin, &[0, 1, 2]), 1).unwrap();
        assert_eq!(pt.strings[0].bits, bs("110"));
        assert_eq!(pt.strings[1].bits, bs("001"));
        assert_eq!(pt.field(), bs("111"));
        assert_eq!(pt.labels, vec![Label::X; 3]);
    }

    #[test]
    fn fredkin_leaves_blocked_pair_invariant() {
        let mut pt = pair("111", "101", 2);
        pt.apply_event(&ev(Gate::Fredkin, &[0, 1, 2]), 1).unwrap();
        assert_eq!(pt.field(), bs("010"));
    }

    #[test]
    fn measurement_annihilates_pair() {
        let mut pt = pair("10", "01", 1);
        // X at site 0, Y at site 1: the fired measurement is a meeting
        pt.apply_event(&ev(Gate::Measure(Outcome::One), &[0, 1]), 1).unwrap();
        assert_eq!(pt.strings[0].bits, bs("01"));
        assert_eq!(pt.strings[1].bits, bs("01"));
        assert_eq!(pt.field(), bs("00"));
        assert!(pt.met);
        assert_eq!(pt.met_time, Some(1));

        let mut pt = pair("1000", "0100", 3);
        pt.apply_event(&ev(Gate::Measure(Outcome::One), &[0, 1]), 1).unwrap();
        assert_eq!(pt.field(), bs("0000"));
        assert!(!pt.met);
        assert_eq!(pt.endpoints(), (None, None));
    }

    #[test]
    fn endpoints_and_phase() {
        let pt = pair("0100100000", "0000000010", 6);
        assert_eq!(pt.endpoints(), (Some(4), Some(8)));
        assert_eq!(pt.relative_phase(), 1);
        let pt = pair("01001", "00000", 5 - 1);
        assert_eq!(pt.endpoints(), (Some(1), Some(4)));
        let pt = pair("0100100000", "0000000000", 5);
        assert_eq!(pt.endpoints().1, None);
        let mut pt = pair("11", "00", 1);
        pt.strings[2] = pt.strings[2].clone().with_sign(-1);
        assert_eq!(pt.relative_phase(), -1);
    }

    #[test]
    fn cz_across_species_meets() {
        // {n1,n2,n1',n2'} = {10,01,00,11}: CZ gives relative phase −1
        let mut pt = pair("10", "01", 1);
        assert_eq!(pt.strings[2].bits, bs("00"));
        assert_eq!(pt.strings[3].bits, bs("11"));
        pt.apply_event(&ev(Gate::Cz, &[0, 1]), 4).unwrap();
        assert!(pt.met);
        assert_eq!(pt.met_time, Some(4));
        assert_eq!(pt.relative_phase(), -1);
    }
}
