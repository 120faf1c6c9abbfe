//! Layer layouts of the three circuit models and sampling of random
//! circuit realizations.
//!
//! A realization is stored in physical time order: `steps[0]` acts first on
//! the state. Every event is charge conserving and acts on a contiguous block
//! of sites (wrapped mod L under periodic boundaries).

use std::fmt::{self, Write as _};
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{Boundary, Partition};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Model {
    /// Three layers of Fredkin, SWAP and CZ gates per step.
    FredkinSwap,
    /// Two layers of SWAP and CZ gates per step.
    SwapOnly,
    /// Four layers of four-site controlled swaps and CZ gates per step.
    Cswap4,
}

impl Model {
    /// Sites per unit cell of the gate layout; `L` must be a multiple.
    pub fn period(&self) -> usize {
        match self {
            Model::FredkinSwap => 6,
            Model::SwapOnly => 2,
            Model::Cswap4 => 4,
        }
    }
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Model::FredkinSwap => "fredkin_swap",
            Model::SwapOnly => "swap_only",
            Model::Cswap4 => "cswap4",
        })
    }
}

impl FromStr for Model {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fredkin_swap" => Ok(Model::FredkinSwap),
            "swap_only" => Ok(Model::SwapOnly),
            "cswap4" => Ok(Model::Cswap4),
            _ => Err(Error::Parse(format!("unknown model {s:?}"))),
        }
    }
}

/// Measurement outcome of the composite two-site measurement. Outcome 1
/// forces anti-parallel neighbours to `01`, outcome 2 to `10`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Outcome {
    One,
    Two,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Gate {
    Fredkin,
    Swap,
    Cz,
    Cswap4,
    Measure(Outcome),
}

impl Gate {
    pub fn arity(&self) -> usize {
        match self {
            Gate::Fredkin => 3,
            Gate::Swap | Gate::Cz | Gate::Measure(_) => 2,
            Gate::Cswap4 => 4,
        }
    }

    pub fn kind(&self) -> SlotKind {
        match self {
            Gate::Fredkin => SlotKind::Fredkin,
            Gate::Swap => SlotKind::Swap,
            Gate::Cz => SlotKind::Cz,
            Gate::Cswap4 => SlotKind::Cswap4,
            Gate::Measure(_) => SlotKind::Measure,
        }
    }
}

/// A fired gate or measurement with its ordered support.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GateEvent {
    pub gate: Gate,
    sites: [u32; 4],
}

impl GateEvent {
    pub fn new(gate: Gate, support: &[usize]) -> Self {
        assert_eq!(support.len(), gate.arity(), "support size for {gate:?}");
        let mut sites = [0u32; 4];
        for (d, &s) in sites.iter_mut().zip(support) {
            *d = s as u32;
        }
        GateEvent { gate, sites }
    }

    #[inline]
    pub fn support(&self) -> &[u32] {
        &self.sites[..self.gate.arity()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotKind {
    Fredkin,
    Swap,
    Cz,
    Cswap4,
    Measure,
}

impl SlotKind {
    fn name(&self) -> &'static str {
        match self {
            SlotKind::Fredkin => "fredkin",
            SlotKind::Swap => "swap",
            SlotKind::Cz => "cz",
            SlotKind::Cswap4 => "cswap4",
            SlotKind::Measure => "measure",
        }
    }

    pub fn arity(&self) -> usize {
        match self {
            SlotKind::Fredkin => 3,
            SlotKind::Cswap4 => 4,
            _ => 2,
        }
    }
}

/// Where the two-row measurement layers sit inside a time step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasurementPlacement {
    /// After every unitary layer.
    PerLayer,
    /// Once, at the end of the step.
    PerStep,
}

/// Order of the sublayers inside one unitary layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitaryOrder {
    /// Kinetic gate (Fredkin or CSWAP4), then SWAP, then CZ.
    KineticFirst,
    /// SWAP, then kinetic gate, then CZ.
    SwapFirst,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CircuitOptions {
    pub measurement_placement: MeasurementPlacement,
    pub unitary_order: UnitaryOrder,
    /// Firing probability of CZ slots.
    pub cz_prob: f64,
}

impl Default for CircuitOptions {
    fn default() -> Self {
        CircuitOptions {
            measurement_placement: MeasurementPlacement::PerLayer,
            unitary_order: UnitaryOrder::KineticFirst,
            cz_prob: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub model: Model,
    pub part: Partition,
    /// Firing probability of Fredkin, SWAP and CSWAP4 slots.
    pub p_u: f64,
    /// Firing probability of measurement slots.
    pub p: f64,
    #[serde(default)]
    pub options: CircuitOptions,
}

impl ModelSpec {
    pub fn new(model: Model, part: Partition, p_u: f64, p: f64) -> Result<Self> {
        let spec = ModelSpec {
            model,
            part,
            p_u,
            p,
            options: CircuitOptions::default(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_options(mut self, options: CircuitOptions) -> Result<Self> {
        self.options = options;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.part.l;
        for (name, v) in [("p_u", self.p_u), ("p", self.p), ("cz_prob", self.options.cz_prob)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(name, format!("probability {v} outside [0,1]")));
            }
        }
        let (modulus, why) = match self.model {
            Model::FredkinSwap => (6, "fredkin_swap needs L divisible by 6"),
            Model::Cswap4 => (4, "cswap4 needs L divisible by 4"),
            Model::SwapOnly => (2, "swap_only needs even L"),
        };
        if l == 0 || !l.is_multiple_of(modulus) {
            return Err(Error::config("l", format!("{why}, got L = {l}")));
        }
        if self.part.l_a == 0 || self.part.l_a >= l {
            return Err(Error::config("l_a", format!("need 1 <= l_a < L, got {}", self.part.l_a)));
        }
        Ok(())
    }

    /// True for parameter choices outside the studied regimes.
    pub fn is_exploratory(&self) -> bool {
        self.model == Model::SwapOnly && self.p > 0.0
    }

    /// Translation period of the layout under periodic boundaries.
    pub fn layout_period(&self) -> usize {
        self.model.period()
    }
}

/// Static slots of one sublayer: every support on which an event of `kind`
/// may fire.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SublayerPlan {
    /// 1-based index of the unitary layer this sublayer belongs to.
    pub layer: u8,
    pub kind: SlotKind,
    pub supports: Vec<Vec<usize>>,
}

/// The ordered sublayers making up one time step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerPlan {
    pub l: usize,
    pub sublayers: Vec<SublayerPlan>,
}

impl LayerPlan {
    pub fn unitary_layer(&self, layer: u8, kind: SlotKind) -> Option<&SublayerPlan> {
        self.sublayers.iter().find(|s| s.layer == layer && s.kind == kind)
    }
}

/// Blocks of `width` consecutive sites starting at `offset`, `offset + stride`, ...
fn blocks(l: usize, boundary: Boundary, width: usize, stride: usize, offset: usize) -> Vec<Vec<usize>> {
    (0..l / stride)
        .map(|j| offset + stride * j)
        .filter(|&start| boundary == Boundary::Periodic || start + width <= l)
        .map(|start| (0..width).map(|k| (start + k) % l).collect())
        .collect()
}

/// Static layout of one time step of the model.
pub fn build_layer_plan(spec: &ModelSpec) -> Result<LayerPlan> {
    spec.validate()?;
    let l = spec.part.l;
    let bc = spec.part.boundary;
    let (kinetic, kinetic_width, kinetic_stride, n_layers, pair_offsets): (
        Option<SlotKind>,
        usize,
        usize,
        u8,
        &[usize],
    ) = match spec.model {
        Model::FredkinSwap => (Some(SlotKind::Fredkin), 3, 3, 3, &[0, 1, 0]),
        Model::SwapOnly => (None, 0, 0, 2, &[0, 1]),
        Model::Cswap4 => (Some(SlotKind::Cswap4), 4, 4, 4, &[0, 1, 0, 1]),
    };
    let mut sublayers = Vec::new();
    let measure_rows = |layer: u8, out: &mut Vec<SublayerPlan>| {
        for off in [0, 1] {
            out.push(SublayerPlan {
                layer,
                kind: SlotKind::Measure,
                supports: blocks(l, bc, 2, 2, off),
            });
        }
    };
    for layer in 1..=n_layers {
        let idx = (layer - 1) as usize;
        let pair_off = pair_offsets[idx];
        let kin = kinetic.map(|kind| SublayerPlan {
            layer,
            kind,
            supports: blocks(l, bc, kinetic_width, kinetic_stride, idx),
        });
        // the SWAP model has no separate kinetic gate: its SWAPs are the kinetics
        let swap = match spec.model {
            Model::Cswap4 => None,
            _ => Some(SublayerPlan {
                layer,
                kind: SlotKind::Swap,
                supports: blocks(l, bc, 2, 2, pair_off),
            }),
        };
        let cz = SublayerPlan {
            layer,
            kind: SlotKind::Cz,
            supports: blocks(l, bc, 2, 2, pair_off),
        };
        let ordered = match spec.options.unitary_order {
            UnitaryOrder::KineticFirst => [kin, swap],
            UnitaryOrder::SwapFirst => [swap, kin],
        };
        sublayers.extend(ordered.into_iter().flatten());
        sublayers.push(cz);
        if spec.options.measurement_placement == MeasurementPlacement::PerLayer {
            measure_rows(layer, &mut sublayers);
        }
    }
    if spec.options.measurement_placement == MeasurementPlacement::PerStep {
        measure_rows(n_layers, &mut sublayers);
    }
    Ok(LayerPlan { l, sublayers })
}

/// Fired events of one sublayer. Supports are pairwise disjoint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sublayer {
    pub layer: u8,
    pub kind: SlotKind,
    pub events: Vec<GateEvent>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Step {
    pub sublayers: Vec<Sublayer>,
}

impl Step {
    pub fn events(&self) -> impl DoubleEndedIterator<Item = &GateEvent> + '_ {
        self.sublayers.iter().flat_map(|s| s.events.iter())
    }
}

/// One sampled circuit instance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Realization {
    pub l: usize,
    pub steps: Vec<Step>,
}

impl Realization {
    pub fn t_max(&self) -> usize {
        self.steps.len()
    }

    pub fn event_count(&self) -> usize {
        self.steps.iter().map(|s| s.events().count()).sum()
    }

    /// The last `depth` steps, still in physical order.
    pub fn suffix(&self, depth: usize) -> &[Step] {
        &self.steps[self.steps.len() - depth..]
    }
}

/// Sample which slots fire (and measurement outcomes) for `t_max` steps.
pub fn sample_realization<R: Rng + ?Sized>(spec: &ModelSpec, t_max: usize, rng: &mut R) -> Result<Realization> {
    let plan = build_layer_plan(spec)?;
    Ok(sample_from_plan(spec, &plan, t_max, rng))
}

/// As [`sample_realization`] with a prebuilt plan.
pub fn sample_from_plan<R: Rng + ?Sized>(spec: &ModelSpec, plan: &LayerPlan, t_max: usize, rng: &mut R) -> Realization {
    let steps = (0..t_max).map(|_| sample_step(spec, plan, rng)).collect();
    Realization { l: plan.l, steps }
}

/// Sample one time step.
pub fn sample_step<R: Rng + ?Sized>(spec: &ModelSpec, plan: &LayerPlan, rng: &mut R) -> Step {
    let fire = |prob: f64, rng: &mut R| prob >= 1.0 || (prob > 0.0 && rng.random_bool(prob));
    let sublayers = plan
        .sublayers
        .iter()
        .map(|sub| {
            let mut events = Vec::with_capacity(sub.supports.len());
            for support in &sub.supports {
                let gate = match sub.kind {
                    SlotKind::Fredkin | SlotKind::Swap | SlotKind::Cswap4 => {
                        if !fire(spec.p_u, rng) {
                            continue;
                        }
                        match sub.kind {
                            SlotKind::Fredkin => Gate::Fredkin,
                            SlotKind::Swap => Gate::Swap,
                            _ => Gate::Cswap4,
                        }
                    }
                    SlotKind::Cz => {
                        if !fire(spec.options.cz_prob, rng) {
                            continue;
                        }
                        Gate::Cz
                    }
                    SlotKind::Measure => {
                        if !fire(spec.p, rng) {
                            continue;
                        }
                        Gate::Measure(if rng.random_bool(0.5) { Outcome::One } else { Outcome::Two })
                    }
                };
                events.push(GateEvent::new(gate, support));
            }
            Sublayer {
                layer: sub.layer,
                kind: sub.kind,
                events,
            }
        })
        .collect();
    Step { sublayers }
}

const TEXT_HEADER: &str = "# u1qa realization v1";

/// Serialize as text: a header line, then one event per line as
/// `step layer kind sites outcome` with 1-based step and site numbers.
/// Each sublayer, including each measurement row, opens with a
/// `sublayer step layer kind` marker line.
pub fn realization_to_text(real: &Realization) -> String {
    let mut out = format!("{TEXT_HEADER} L={} steps={}\n", real.l, real.steps.len());
    for (t, step) in real.steps.iter().enumerate() {
        for sub in &step.sublayers {
            writeln!(out, "sublayer {} {} {}", t + 1, sub.layer, sub.kind.name()).unwrap();
            for ev in &sub.events {
                let sites: Vec<String> = ev.support().iter().map(|s| (s + 1).to_string()).collect();
                let outcome = match ev.gate {
                    Gate::Measure(Outcome::One) => "1",
                    Gate::Measure(Outcome::Two) => "2",
                    _ => "-",
                };
                writeln!(out, "{} {} {} {} {}", t + 1, sub.layer, sub.kind.name(), sites.join(","), outcome).unwrap();
            }
        }
    }
    out
}

pub fn realization_from_text(text: &str) -> Result<Realization> {
    let bad = |line: usize, msg: &str| Error::Parse(format!("realization line {line}: {msg}"));
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| bad(1, "empty input"))?;
    let rest = header
        .strip_prefix(TEXT_HEADER)
        .ok_or_else(|| bad(1, "missing header"))?;
    let mut l = None;
    let mut n_steps = None;
    for tok in rest.split_whitespace() {
        if let Some(v) = tok.strip_prefix("L=") {
            l = v.parse::<usize>().ok();
        } else if let Some(v) = tok.strip_prefix("steps=") {
            n_steps = v.parse::<usize>().ok();
        }
    }
    let l = l.ok_or_else(|| bad(1, "missing L"))?;
    let n_steps = n_steps.ok_or_else(|| bad(1, "missing steps"))?;
    let mut steps: Vec<Step> = vec![Step::default(); n_steps];
    let parse_kind = |s: &str, ln: usize| -> Result<SlotKind> {
        Ok(match s {
            "fredkin" => SlotKind::Fredkin,
            "swap" => SlotKind::Swap,
            "cz" => SlotKind::Cz,
            "cswap4" => SlotKind::Cswap4,
            "measure" => SlotKind::Measure,
            _ => return Err(bad(ln, "unknown kind")),
        })
    };
    let mut current: Option<usize> = None;
    for (i, line) in lines {
        let ln = i + 1;
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.is_empty() {
            continue;
        }
        if toks[0] == "sublayer" {
            if toks.len() != 4 {
                return Err(bad(ln, "malformed sublayer line"));
            }
            let t: usize = toks[1].parse().map_err(|_| bad(ln, "bad step"))?;
            if t == 0 || t > n_steps {
                return Err(bad(ln, "step out of range"));
            }
            let layer: u8 = toks[2].parse().map_err(|_| bad(ln, "bad layer"))?;
            let kind = parse_kind(toks[3], ln)?;
            steps[t - 1].sublayers.push(Sublayer {
                layer,
                kind,
                events: Vec::new(),
            });
            current = Some(t - 1);
            continue;
        }
        if toks.len() != 5 {
            return Err(bad(ln, "expected `step layer kind sites outcome`"));
        }
        let t = current.ok_or_else(|| bad(ln, "event before any sublayer"))?;
        let kind = parse_kind(toks[2], ln)?;
        let sites = toks[3]
            .split(',')
            .map(|s| match s.parse::<usize>() {
                Ok(v) if v >= 1 && v <= l => Ok(v - 1),
                _ => Err(bad(ln, "site out of range")),
            })
            .collect::<Result<Vec<_>>>()?;
        let gate = match (kind, toks[4]) {
            (SlotKind::Fredkin, "-") => Gate::Fredkin,
            (SlotKind::Swap, "-") => Gate::Swap,
            (SlotKind::Cz, "-") => Gate::Cz,
            (SlotKind::Cswap4, "-") => Gate::Cswap4,
            (SlotKind::Measure, "1") => Gate::Measure(Outcome::One),
            (SlotKind::Measure, "2") => Gate::Measure(Outcome::Two),
            _ => return Err(bad(ln, "bad outcome field")),
        };
        if sites.len() != gate.arity() {
            return Err(bad(ln, "wrong number of sites"));
        }
        let sub = steps[t].sublayers.last_mut().expect("sublayer pushed above");
        if sub.kind != kind {
            return Err(bad(ln, "event kind differs from its sublayer"));
        }
        sub.events.push(GateEvent::new(gate, &sites));
    }
    Ok(Realization { l, steps })
}
