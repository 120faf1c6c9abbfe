//! Bit strings, charge sectors and the samplers for every initial ensemble.
//!
//! Sites are 0-based in code. Anything written to disk or shown to a user is
//! 1-based.

use std::fmt;
use std::str::FromStr;

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Computational-basis label of `len` qubits, packed 64 sites per word.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BitString {
    len: usize,
    words: Vec<u64>,
}

impl BitString {
    pub fn zeros(len: usize) -> Self {
        BitString {
            len,
            words: vec![0; len.div_ceil(64)],
        }
    }

    pub fn from_bits(bits: &[u8]) -> Self {
        let mut s = BitString::zeros(bits.len());
        for (i, &b) in bits.iter().enumerate() {
            s.set(i, b != 0);
        }
        s
    }

    /// Build from the low `len` bits of `value`; bit `i` of `value` is site `i`.
    pub fn from_u64(value: u64, len: usize) -> Self {
        assert!(len <= 64);
        let mut s = BitString::zeros(len);
        if len > 0 {
            s.words[0] = value & low_mask(len);
        }
        s
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        debug_assert!(i < self.len);
        (self.words[i >> 6] >> (i & 63)) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize, v: bool) {
        debug_assert!(i < self.len);
        let m = 1u64 << (i & 63);
        if v {
            self.words[i >> 6] |= m;
        } else {
            self.words[i >> 6] &= !m;
        }
    }

    /// Low 64 sites as an integer (site `i` is bit `i`).
    pub fn to_u64(&self) -> u64 {
        self.words.first().copied().unwrap_or(0)
    }

    /// Number of ones on sites `lo..hi`.
    pub fn charge_in(&self, lo: usize, hi: usize) -> u32 {
        (lo..hi).filter(|&i| self.get(i)).count() as u32
    }

    pub fn bits(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(move |i| self.get(i))
    }

    /// Sitewise XOR.
    pub fn xor(&self, other: &BitString) -> BitString {
        assert_eq!(self.len, other.len, "bit strings of different length");
        BitString {
            len: self.len,
            words: self
                .words
                .iter()
                .zip(&other.words)
                .map(|(a, b)| a ^ b)
                .collect(),
        }
    }
}

#[inline]
fn low_mask(n: usize) -> u64 {
    if n >= 64 {
        u64::MAX
    } else {
        (1u64 << n) - 1
    }
}

impl fmt::Display for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in self.bits() {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl fmt::Debug for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BitString({self})")
    }
}

impl FromStr for BitString {
    type Err = Error;

    /// Parses `"0101"`; the first character is site 1.
    fn from_str(s: &str) -> Result<Self> {
        let bits = s
            .chars()
            .map(|c| match c {
                '0' => Ok(0u8),
                '1' => Ok(1u8),
                _ => Err(Error::Parse(format!("invalid bit character {c:?} in {s:?}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(BitString::from_bits(&bits))
    }
}

/// Total charge: the number of sites holding a 1.
pub fn charge(b: &BitString) -> u32 {
    b.words.iter().map(|w| w.count_ones()).sum()
}

/// A filling factor kept as an exact rational.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Filling {
    pub num: u32,
    pub den: u32,
}

impl Filling {
    pub fn new(num: u32, den: u32) -> Result<Self> {
        if den == 0 || num > den {
            return Err(Error::Domain(format!("filling {num}/{den} outside [0,1]")));
        }
        let g = gcd(num, den);
        Ok(Filling {
            num: num / g,
            den: den / g,
        })
    }

    /// Charge `ν·L`, provided it is an integer.
    pub fn charge_for(&self, l: usize) -> Result<u32> {
        let prod = self.num as u64 * l as u64;
        if !prod.is_multiple_of(self.den as u64) {
            return Err(Error::Domain(format!(
                "filling {self} times L={l} is not an integer"
            )));
        }
        Ok((prod / self.den as u64) as u32)
    }

    pub fn value(&self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

fn gcd(mut a: u32, mut b: u32) -> u32 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a.max(1)
}

impl fmt::Display for Filling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

impl FromStr for Filling {
    type Err = Error;

    /// Accepts `"1/3"` or a terminating decimal such as `"0.15"`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::Parse(format!("invalid filling {s:?}"));
        if let Some((n, d)) = s.split_once('/') {
            let n = n.trim().parse().map_err(|_| bad())?;
            let d = d.trim().parse().map_err(|_| bad())?;
            return Filling::new(n, d);
        }
        let (int, frac) = s.split_once('.').unwrap_or((s, ""));
        if frac.len() > 8 || !frac.chars().all(|c| c.is_ascii_digit()) {
            return Err(bad());
        }
        let den = 10u32.pow(frac.len() as u32);
        let int: u32 = if int.is_empty() { 0 } else { int.parse().map_err(|_| bad())? };
        let frac_v: u32 = if frac.is_empty() { 0 } else { frac.parse().map_err(|_| bad())? };
        Filling::new(int * den + frac_v, den)
    }
}

impl Serialize for Filling {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Filling {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl Serialize for SectorSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for SectorSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Initial ensemble: every basis state, or only those of charge `ν·L`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SectorSpec {
    Mixed,
    Fixed(Filling),
}

impl SectorSpec {
    /// Validates the sector against `l` and returns the fixed charge, if any.
    pub fn charge_for(&self, l: usize) -> Result<Option<u32>> {
        match self {
            SectorSpec::Mixed => Ok(None),
            SectorSpec::Fixed(f) => f.charge_for(l).map(Some),
        }
    }
}

impl fmt::Display for SectorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SectorSpec::Mixed => f.write_str("mixed"),
            SectorSpec::Fixed(nu) => write!(f, "fixed:{nu}"),
        }
    }
}

impl FromStr for SectorSpec {
    type Err = Error;

    /// `"mixed"` or `"fixed:1/3"`.
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "mixed" => Ok(SectorSpec::Mixed),
            other => match other.strip_prefix("fixed:") {
                Some(nu) => Ok(SectorSpec::Fixed(nu.parse()?)),
                None => Err(Error::Parse(format!("invalid sector {s:?}"))),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    Open,
    Periodic,
}

/// Bipartition of an `l`-site chain: A is sites `0..l_a`, B the rest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub l: usize,
    pub l_a: usize,
    pub boundary: Boundary,
}

impl Partition {
    pub fn new(l: usize, l_a: usize, boundary: Boundary) -> Result<Self> {
        if l_a == 0 || l_a >= l {
            return Err(Error::config(
                "l_a",
                format!("subsystem size {l_a} must satisfy 1 <= l_a < L = {l}"),
            ));
        }
        Ok(Partition { l, l_a, boundary })
    }

    pub fn l_b(&self) -> usize {
        self.l - self.l_a
    }

    pub fn in_a(&self, site: usize) -> bool {
        site < self.l_a
    }
}

/// Exact binomial coefficient `C(n, k)`.
pub fn binomial(n: u64, k: u64) -> BigUint {
    if k > n {
        return BigUint::zero();
    }
    let k = k.min(n - k);
    let mut acc = BigUint::one();
    for i in 0..k {
        acc *= n - i;
        acc /= i + 1;
    }
    acc
}

/// Number of basis states of `l` sites with charge `q`.
pub fn sector_size(l: usize, q: u32) -> Result<BigUint> {
    if q as usize > l {
        return Err(Error::Domain(format!("charge {q} outside [0, {l}]")));
    }
    Ok(binomial(l as u64, q as u64))
}

/// `ln C(n, k)` through the log-gamma function.
pub fn ln_binomial(n: u64, k: u64) -> f64 {
    assert!(k <= n, "ln_binomial({n}, {k})");
    statrs::function::factorial::ln_binomial(n, k)
}

/// Natural log of an arbitrarily large integer.
pub fn ln_big(x: &BigUint) -> f64 {
    let bits = x.bits();
    if bits <= 1000 {
        return x.to_f64().map(f64::ln).unwrap_or(f64::INFINITY);
    }
    let shift = bits - 64;
    let top = (x >> shift).to_f64().unwrap_or(f64::INFINITY);
    top.ln() + shift as f64 * std::f64::consts::LN_2
}

/// Fill `sites` of `out` with a uniformly random arrangement of `q` ones.
fn fill_fixed_weight<R: Rng + ?Sized>(out: &mut BitString, sites: std::ops::Range<usize>, q: u32, rng: &mut R) {
    let n = sites.len();
    debug_assert!(q as usize <= n);
    let mut template: Vec<bool> = (0..n).map(|i| i < q as usize).collect();
    template.shuffle(rng);
    for (site, bit) in sites.zip(template) {
        out.set(site, bit);
    }
}

fn fill_uniform<R: Rng + ?Sized>(out: &mut BitString, rng: &mut R) {
    let len = out.len;
    for (w, word) in out.words.iter_mut().enumerate() {
        let valid = (len - 64 * w).min(64);
        *word = rng.random::<u64>() & low_mask(valid);
    }
}

/// Uniform sample from the sector: i.i.d. fair bits (mixed) or a uniform
/// arrangement of `ν·L` ones (fixed).
pub fn sample_bitstring<R: Rng + ?Sized>(l: usize, sector: SectorSpec, rng: &mut R) -> Result<BitString> {
    let mut s = BitString::zeros(l);
    match sector.charge_for(l)? {
        None => fill_uniform(&mut s, rng),
        Some(q) => fill_fixed_weight(&mut s, 0..l, q, rng),
    }
    Ok(s)
}

/// Sampler for pairs uniform over the set of charge-`Q` pairs that also
/// agree in their A-charge, i.e. pairs whose A-swapped partners remain in
/// the sector.
#[derive(Debug, Clone)]
pub struct ConstrainedPairSampler {
    part: Partition,
    charge: u32,
    /// Admissible A-charges.
    q_a: Vec<u32>,
    dist: WeightedIndex<f64>,
}

impl ConstrainedPairSampler {
    pub fn new(part: Partition, filling: Filling) -> Result<Self> {
        let charge = filling.charge_for(part.l)?;
        let (l_a, l_b) = (part.l_a as u64, part.l_b() as u64);
        let q = charge as u64;
        let lo = q.saturating_sub(l_b);
        let hi = q.min(l_a);
        if lo > hi {
            return Err(Error::Domain("empty constrained pair set".into()));
        }
        let q_a: Vec<u32> = (lo..=hi).map(|x| x as u32).collect();
        let logw: Vec<f64> = (lo..=hi)
            .map(|x| 2.0 * (ln_binomial(l_a, x) + ln_binomial(l_b, q - x)))
            .collect();
        let max = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = logw.iter().map(|w| (w - max).exp()).collect();
        let dist = WeightedIndex::new(&weights).map_err(|e| Error::Domain(e.to_string()))?;
        Ok(ConstrainedPairSampler {
            part,
            charge,
            q_a,
            dist,
        })
    }

    /// Probability of each admissible A-charge, in increasing order of charge.
    pub fn a_charge_probabilities(&self) -> Vec<(u32, f64)> {
        let (l_a, l_b) = (self.part.l_a as u64, self.part.l_b() as u64);
        let q = self.charge as u64;
        let logw: Vec<f64> = self
            .q_a
            .iter()
            .map(|&x| 2.0 * (ln_binomial(l_a, x as u64) + ln_binomial(l_b, q - x as u64)))
            .collect();
        let max = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = logw.iter().map(|w| (w - max).exp()).sum();
        self.q_a
            .iter()
            .zip(&logw)
            .map(|(&x, w)| (x, (w - max).exp() / total))
            .collect()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (BitString, BitString) {
        let q_a = self.q_a[self.dist.sample(rng)];
        let (l, l_a) = (self.part.l, self.part.l_a);
        let mut pair = [BitString::zeros(l), BitString::zeros(l)];
        for s in pair.iter_mut() {
            fill_fixed_weight(s, 0..l_a, q_a, rng);
            fill_fixed_weight(s, l_a..l, self.charge - q_a, rng);
        }
        let [n1, n2] = pair;
        (n1, n2)
    }
}

/// One pair from [`ConstrainedPairSampler`]; prefer the sampler when drawing many.
pub fn sample_pair_constrained<R: Rng + ?Sized>(
    part: Partition,
    filling: Filling,
    rng: &mut R,
) -> Result<(BitString, BitString)> {
    Ok(ConstrainedPairSampler::new(part, filling)?.sample(rng))
}

/// Size of the constrained pair set: `Σ_q [C(L_A,q)·C(L_B,Q−q)]²`.
pub fn constrained_set_size(part: Partition, filling: Filling) -> Result<BigUint> {
    let q = filling.charge_for(part.l)? as u64;
    let (l_a, l_b) = (part.l_a as u64, part.l_b() as u64);
    let mut total = BigUint::zero();
    for x in q.saturating_sub(l_b)..=q.min(l_a) {
        let c = binomial(l_a, x) * binomial(l_b, q - x);
        total += &c * &c;
    }
    Ok(total)
}

/// `ln(constrained_set_size / N²)`: the purity prefactor of the fixed sector.
pub fn ln_constrained_fraction(part: Partition, filling: Filling) -> Result<f64> {
    let q = filling.charge_for(part.l)?;
    let set = constrained_set_size(part, filling)?;
    let n = sector_size(part.l, q)?;
    Ok(ln_big(&set) - 2.0 * ln_big(&n))
}

/// Exchange sites `0..l_a` between the two strings.
pub fn swap_a(n1: &BitString, n2: &BitString, l_a: usize) -> (BitString, BitString) {
    assert_eq!(n1.len, n2.len, "bit strings of different length");
    let mut a = n1.clone();
    let mut b = n2.clone();
    for w in 0..a.words.len() {
        let lo = 64 * w;
        if lo >= l_a {
            break;
        }
        let m = low_mask(l_a - lo);
        let d = (a.words[w] ^ b.words[w]) & m;
        a.words[w] ^= d;
        b.words[w] ^= d;
    }
    (a, b)
}

/// Two strings with independent uniform charge-`ν_A·L_A` configurations on A
/// and all zeros on B.
pub fn make_dead_region<R: Rng + ?Sized>(
    part: Partition,
    filling_a: Filling,
    rng: &mut R,
) -> Result<(BitString, BitString)> {
    let q_a = filling_a.charge_for(part.l_a)?;
    let mut pair = [BitString::zeros(part.l), BitString::zeros(part.l)];
    for s in pair.iter_mut() {
        fill_fixed_weight(s, 0..part.l_a, q_a, rng);
    }
    let [n1, n1p] = pair;
    Ok((n1, n1p))
}

/// Two strings sharing a uniformly sampled B configuration and carrying
/// independent A configurations, so that their difference lies in A only.
/// In a fixed sector the second A configuration keeps the A-charge of the
/// first, so both strings have charge `ν·L`.
pub fn sample_shared_bulk_pair<R: Rng + ?Sized>(
    part: Partition,
    sector: SectorSpec,
    rng: &mut R,
) -> Result<(BitString, BitString)> {
    let n1 = sample_bitstring(part.l, sector, rng)?;
    let q_a = n1.charge_in(0, part.l_a);
    let mut n1p = n1.clone();
    match sector {
        SectorSpec::Fixed(_) => fill_fixed_weight(&mut n1p, 0..part.l_a, q_a, rng),
        SectorSpec::Mixed => {
            for i in 0..part.l_a {
                n1p.set(i, rng.random::<bool>());
            }
        }
    }
    Ok((n1, n1p))
}
