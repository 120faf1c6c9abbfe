//! Exact oracle for small systems.
//!
//! Every gate and composite measurement keeps the state an equal-weight
//! superposition `Σ_n s_n |n⟩ / √N` with `s_n = ±1`, so the oracle stores
//! one sign per basis state and evolves the whole state forward in time.

use crate::circuit::{Gate, GateEvent, Outcome, Step};
use crate::error::{Error, Result};
use crate::lattice::SectorSpec;

/// Largest system the oracle accepts.
pub const MAX_SITES: usize = 20;

/// Colex rank of a weight-`q` bit pattern among all weight-`q` patterns:
/// `Σ_k C(i_k, k)` over the positions `i_1 < i_2 < …` of its ones.
pub fn colex_rank(value: u64, binom: &BinomialTable) -> usize {
    let mut r = 0;
    let mut k = 0;
    let mut v = value;
    while v != 0 {
        let i = v.trailing_zeros() as usize;
        k += 1;
        r += binom.get(i, k);
        v &= v - 1;
    }
    r
}

/// Inverse of [`colex_rank`] for patterns of `q` ones.
pub fn colex_unrank(mut rank: usize, q: usize, binom: &BinomialTable) -> u64 {
    let mut value = 0u64;
    for k in (1..=q).rev() {
        // largest i with C(i, k) <= rank
        let mut i = k - 1;
        while binom.get(i + 1, k) <= rank {
            i += 1;
        }
        value |= 1 << i;
        rank -= binom.get(i, k);
    }
    value
}

/// Pascal triangle up to `n = MAX_SITES`.
#[derive(Debug, Clone)]
pub struct BinomialTable {
    rows: Vec<Vec<usize>>,
}

impl BinomialTable {
    pub fn new(n_max: usize) -> Self {
        let mut rows = vec![vec![1usize]];
        for n in 1..=n_max + 1 {
            let prev = &rows[n - 1];
            let mut row = vec![1usize; n + 1];
            for k in 1..n {
                row[k] = prev[k - 1] + prev[k];
            }
            rows.push(row);
        }
        BinomialTable { rows }
    }

    #[inline]
    pub fn get(&self, n: usize, k: usize) -> usize {
        if k > n {
            0
        } else {
            self.rows[n][k]
        }
    }
}

/// Equal-weight sign state over all `2^L` basis states or one charge sector.
#[derive(Debug, Clone)]
pub struct SignState {
    l: usize,
    charge: Option<u32>,
    basis: Vec<u64>,
    /// `true` = −1
    negative: Vec<bool>,
    binom: BinomialTable,
}

impl SignState {
    /// The uniform `+` superposition over the sector.
    pub fn uniform(l: usize, sector: SectorSpec) -> Result<Self> {
        if l == 0 || l > MAX_SITES {
            return Err(Error::Domain(format!("exact oracle supports 1 <= L <= {MAX_SITES}, got {l}")));
        }
        let charge = sector.charge_for(l)?;
        let binom = BinomialTable::new(l);
        let basis: Vec<u64> = match charge {
            None => (0..1u64 << l).collect(),
            Some(q) => {
                let n = binom.get(l, q as usize);
                (0..n).map(|r| colex_unrank(r, q as usize, &binom)).collect()
            }
        };
        let negative = vec![false; basis.len()];
        Ok(SignState {
            l,
            charge,
            basis,
            negative,
            binom,
        })
    }

    pub fn l(&self) -> usize {
        self.l
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn basis(&self) -> &[u64] {
        &self.basis
    }

    /// Index of `value` in the basis, if present.
    pub fn rank(&self, value: u64) -> Option<usize> {
        match self.charge {
            None => (value < 1u64 << self.l).then_some(value as usize),
            Some(q) => (value.count_ones() == q && value < 1u64 << self.l).then(|| colex_rank(value, &self.binom)),
        }
    }

    pub fn sign_of(&self, value: u64) -> Option<i8> {
        self.rank(value).map(|r| if self.negative[r] { -1 } else { 1 })
    }

    pub fn signs(&self) -> impl Iterator<Item = i8> + '_ {
        self.negative.iter().map(|&n| if n { -1 } else { 1 })
    }

    /// Apply one event in physical time order.
    pub fn apply(&mut self, ev: &GateEvent) -> Result<()> {
        let s: Vec<u32> = ev.support().to_vec();
        let bit = |v: u64, i: u32| (v >> i) & 1 == 1;
        match ev.gate {
            Gate::Cz => {
                let m = (1u64 << s[0]) | (1u64 << s[1]);
                for (v, neg) in self.basis.iter().zip(self.negative.iter_mut()) {
                    if v & m == m {
                        *neg = !*neg;
                    }
                }
            }
            Gate::Measure(outcome) => {
                // The surviving anti-parallel configuration spreads its sign
                // over both anti-parallel basis states.
                let (kept_first, kept_second) = match outcome {
                    Outcome::One => (false, true),
                    Outcome::Two => (true, false),
                };
                let (i, j) = (s[0], s[1]);
                let old = self.negative.clone();
                for (r, &v) in self.basis.iter().enumerate() {
                    if bit(v, i) == !kept_first && bit(v, j) == !kept_second {
                        let partner = v ^ (1u64 << i) ^ (1u64 << j);
                        let pr = self.rank(partner).ok_or_else(|| {
                            Error::Invariant(format!("basis not closed under measurement on {i},{j}"))
                        })?;
                        self.negative[r] = old[pr];
                    }
                }
            }
            _ => {
                // permutation gates: ψ'(π(n)) = ψ(n)
                let old = self.negative.clone();
                for (r, &v) in self.basis.iter().enumerate() {
                    let image = permute(ev.gate, &s, v);
                    let ir = self
                        .rank(image)
                        .ok_or_else(|| Error::Invariant(format!("basis not closed under {:?}", ev.gate)))?;
                    self.negative[ir] = old[r];
                }
            }
        }
        Ok(())
    }

    /// Born probability of outcome 1 for a measurement on sites `(i, j)`.
    pub fn born_probability(&self, i: usize, j: usize) -> f64 {
        let mut weight = 0.0;
        for &v in &self.basis {
            weight += match ((v >> i) & 1, (v >> j) & 1) {
                (0, 1) => 1.0,
                (1, 0) => 0.0,
                _ => 0.5,
            };
        }
        weight / self.basis.len() as f64
    }

    /// Amplitude vector over all `2^L` states (test support).
    pub fn amplitudes(&self) -> Vec<f64> {
        let norm = (self.basis.len() as f64).sqrt();
        let mut out = vec![0.0; 1 << self.l];
        for (&v, s) in self.basis.iter().zip(self.signs()) {
            out[v as usize] = s as f64 / norm;
        }
        out
    }
}

fn permute(gate: Gate, s: &[u32], v: u64) -> u64 {
    let bit = |i: u32| (v >> i) & 1;
    let swap = |v: u64, i: u32, j: u32| {
        let d = ((v >> i) ^ (v >> j)) & 1;
        v ^ (d << i) ^ (d << j)
    };
    match gate {
        Gate::Fredkin if bit(s[1]) == 1 => swap(v, s[0], s[2]),
        Gate::Swap => swap(v, s[0], s[1]),
        Gate::Cswap4 if bit(s[0]) == 0 || bit(s[3]) == 1 => swap(v, s[1], s[2]),
        _ => v,
    }
}

/// Evolve `st` forward through `steps` in physical order.
pub fn evolve_exact(steps: &[Step], st: &mut SignState) -> Result<()> {
    for step in steps {
        for ev in step.events() {
            st.apply(ev)?;
        }
    }
    Ok(())
}

/// Integer numerator of the purity: `Σ_{α,α'} (Σ_β s(αβ)s(α'β))²`.
/// The purity is this divided by `N²`.
pub fn purity_numerator(st: &SignState, l_a: usize) -> u128 {
    assert!(l_a >= 1 && l_a < st.l);
    let l_b = st.l - l_a;
    // contract over the larger side
    let (rows_bits, cols_bits, row_of, col_of): (usize, usize, fn(u64, usize) -> u64, fn(u64, usize) -> u64) =
        if l_a <= l_b {
            (l_a, l_b, |v, la| v & ((1 << la) - 1), |v, la| v >> la)
        } else {
            (l_b, l_a, |v, la| v >> la, |v, la| v & ((1 << la) - 1))
        };
    let n_rows = 1usize << rows_bits;
    let n_cols = 1usize << cols_bits;
    let mut m = vec![0i8; n_rows * n_cols];
    for (&v, s) in st.basis.iter().zip(st.signs()) {
        m[row_of(v, l_a) as usize * n_cols + col_of(v, l_a) as usize] = s;
    }
    let mut total: u128 = 0;
    for r1 in 0..n_rows {
        let a = &m[r1 * n_cols..(r1 + 1) * n_cols];
        if a.iter().all(|&x| x == 0) {
            continue;
        }
        for r2 in r1..n_rows {
            let b = &m[r2 * n_cols..(r2 + 1) * n_cols];
            let g: i64 = a.iter().zip(b).map(|(&x, &y)| (x as i64) * (y as i64)).sum();
            let g2 = (g * g) as u128;
            total += if r1 == r2 { g2 } else { 2 * g2 };
        }
    }
    total
}

/// `Tr ρ_A²` of the state for the cut after `l_a` sites.
pub fn purity_exact(st: &SignState, l_a: usize) -> f64 {
    let n = st.dim() as f64;
    purity_numerator(st, l_a) as f64 / (n * n)
}
