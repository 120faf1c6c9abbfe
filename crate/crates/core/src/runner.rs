//! Manifest-driven batch runs: parse, expand sweeps, validate every point,
//! execute, and write one CSV per observable and point.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::circuit::{CircuitOptions, MeasurementPlacement, Model, ModelSpec, UnitaryOrder};
use crate::error::{Error, Result};
use crate::lattice::{Boundary, Filling, Partition, SectorSpec};
use crate::observables::{
    estimate_correlation, estimate_density, estimate_displacement, estimate_entropy_phase_sum, estimate_p_fraction,
    estimate_q_decay, Averaging, DisplacementMode, ExperimentConfig, InitialState, QCut, TimeSeries,
};
use crate::rng::derive_seed;

/// Version string with the git description captured at build time.
pub const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), " (", env!("U1QA_GIT_DESCRIBE"), ")");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Observable {
    Entropy,
    Pfrac,
    Displacement,
    Density,
    Correlation,
    Qdecay,
}

impl Observable {
    pub fn name(&self) -> &'static str {
        match self {
            Observable::Entropy => "entropy",
            Observable::Pfrac => "pfrac",
            Observable::Displacement => "displacement",
            Observable::Density => "density",
            Observable::Correlation => "correlation",
            Observable::Qdecay => "qdecay",
        }
    }

    fn default_initial(&self, nu_a: Option<Filling>) -> InitialState {
        match self {
            Observable::Entropy | Observable::Pfrac | Observable::Density => InitialState::StandardPair,
            Observable::Displacement => match nu_a {
                Some(nu_a) => InitialState::DeadRegion { nu_a },
                None => InitialState::SharedBulk,
            },
            Observable::Correlation => InitialState::SingleString,
            Observable::Qdecay => InitialState::SharedBulk,
        }
    }

    fn default_boundary(&self) -> Boundary {
        match self {
            Observable::Displacement => Boundary::Open,
            _ => Boundary::Periodic,
        }
    }
}

impl fmt::Display for Observable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Observable {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "entropy" => Observable::Entropy,
            "pfrac" => Observable::Pfrac,
            "displacement" => Observable::Displacement,
            "density" => Observable::Density,
            "correlation" => Observable::Correlation,
            "qdecay" => Observable::Qdecay,
            _ => return Err(Error::Parse(format!("unknown observable {s:?}"))),
        })
    }
}

fn one() -> usize {
    1
}

fn offsets() -> Vec<i64> {
    vec![0]
}

/// The `[experiment]` section: one parameter point, flat.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub model: Model,
    pub l: usize,
    /// Size of A; defaults to `l_a_fraction · L`.
    pub l_a: Option<usize>,
    pub l_a_fraction: Option<f64>,
    /// Defaults to open for displacement and periodic otherwise.
    pub boundary: Option<Boundary>,
    pub p_u: f64,
    pub p: f64,
    #[serde(default = "mixed")]
    pub sector: SectorSpec,
    /// `standard_pair`, `dead_region`, `shared_bulk` or `single_string`;
    /// defaults depend on the observable.
    pub initial: Option<String>,
    pub nu_a: Option<Filling>,
    pub t_max: usize,
    pub realizations: usize,
    #[serde(default = "one")]
    pub pairs_per_realization: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub record_stride: usize,
    #[serde(default)]
    pub exhaustive: bool,
    #[serde(default)]
    pub averaging: Averaging,
    #[serde(default)]
    pub displacement: DisplacementMode,
    #[serde(default)]
    pub q_cut: QCut,
    #[serde(default = "offsets")]
    pub offsets: Vec<i64>,
    #[serde(default)]
    pub origin_average: bool,
    pub measurement_placement: Option<MeasurementPlacement>,
    pub unitary_order: Option<UnitaryOrder>,
    pub cz_prob: Option<f64>,
}

fn mixed() -> SectorSpec {
    SectorSpec::Mixed
}

/// The `[sweep]` section. Each list replaces the matching experiment value;
/// points are the cross product, ordered `l`, `nu`, `nu_a`, `p_u`, `p`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub l: Option<Vec<usize>>,
    pub nu: Option<Vec<Filling>>,
    pub nu_a: Option<Vec<Filling>>,
    pub p_u: Option<Vec<f64>>,
    pub p: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub name: String,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub sweep: Sweep,
}

impl RunManifest {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let field = e.span().map(|s| text[s].lines().next().unwrap_or("").to_string());
            Error::config(field.unwrap_or_else(|| "manifest".into()), e.message().to_string())
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("manifest", format!("cannot read {}: {e}", path.display())))?;
        RunManifest::from_toml(&text)
    }
}

/// One resolved sweep point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub index: usize,
    pub label: String,
    pub config: ExperimentConfig,
}

fn fmt_num(v: f64) -> String {
    let s = format!("{v}");
    s.replace('.', "p")
}

fn resolve(
    exp: &ExperimentSection,
    observable: Observable,
    index: usize,
    label: String,
) -> Result<SweepPoint> {
    let ctx = |e: Error| match e {
        Error::Config { field, reason } => Error::Config {
            field: format!("{field} (point {label})"),
            reason,
        },
        other => Error::config(format!("experiment (point {label})"), other.to_string()),
    };
    let l = exp.l;
    let l_a = match (exp.l_a, exp.l_a_fraction) {
        (Some(_), Some(_)) => return Err(ctx(Error::config("l_a", "set either l_a or l_a_fraction"))),
        (Some(a), None) => a,
        (None, f) => (f.unwrap_or(0.5) * l as f64).round() as usize,
    };
    let boundary = exp.boundary.unwrap_or(observable.default_boundary());
    let part = Partition::new(l, l_a, boundary).map_err(|e| ctx(Error::config("l_a", e.to_string())))?;
    let defaults = CircuitOptions::default();
    let options = CircuitOptions {
        measurement_placement: exp.measurement_placement.unwrap_or(defaults.measurement_placement),
        unitary_order: exp.unitary_order.unwrap_or(defaults.unitary_order),
        cz_prob: exp.cz_prob.unwrap_or(defaults.cz_prob),
    };
    let spec = ModelSpec {
        model: exp.model,
        part,
        p_u: exp.p_u,
        p: exp.p,
        options,
    };
    let initial = match exp.initial.as_deref() {
        None => observable.default_initial(exp.nu_a),
        Some("standard_pair") => InitialState::StandardPair,
        Some("shared_bulk") => InitialState::SharedBulk,
        Some("single_string") => InitialState::SingleString,
        Some("dead_region") => InitialState::DeadRegion {
            nu_a: exp
                .nu_a
                .ok_or_else(|| ctx(Error::config("nu_a", "dead_region needs nu_a")))?,
        },
        Some(other) => return Err(ctx(Error::config("initial", format!("unknown initial state {other:?}")))),
    };
    let mut cfg = ExperimentConfig::new(
        spec,
        exp.sector,
        initial,
        exp.t_max,
        exp.realizations,
        exp.pairs_per_realization,
        derive_seed(exp.seed, &[index as u64]),
    );
    cfg.record_stride = exp.record_stride;
    cfg.exhaustive = exp.exhaustive;
    cfg.averaging = exp.averaging;
    cfg.displacement = exp.displacement;
    cfg.q_cut = exp.q_cut;
    cfg.offsets = exp.offsets.clone();
    cfg.origin_average = exp.origin_average;
    cfg.validate().map_err(ctx)?;
    Ok(SweepPoint { index, label, config: cfg })
}

/// Expand the sweep and validate every point before anything runs.
pub fn plan(manifest: &RunManifest, observable: Observable) -> Result<Vec<SweepPoint>> {
    let exp = &manifest.experiment;
    let sw = &manifest.sweep;
    let ls = sw.l.clone().unwrap_or_else(|| vec![exp.l]);
    let base_nu = match exp.sector {
        SectorSpec::Fixed(f) => Some(f),
        SectorSpec::Mixed => None,
    };
    let nus: Vec<Option<Filling>> = match &sw.nu {
        Some(v) => v.iter().map(|&f| Some(f)).collect(),
        None => vec![base_nu],
    };
    let nu_as: Vec<Option<Filling>> = match &sw.nu_a {
        Some(v) => v.iter().map(|&f| Some(f)).collect(),
        None => vec![exp.nu_a],
    };
    let pus = sw.p_u.clone().unwrap_or_else(|| vec![exp.p_u]);
    let ps = sw.p.clone().unwrap_or_else(|| vec![exp.p]);
    if sw.l.is_some() && exp.l_a.is_some() {
        return Err(Error::config("experiment.l_a", "an l sweep needs l_a_fraction instead of l_a"));
    }

    let mut points = Vec::new();
    for &l in &ls {
        for &nu in &nus {
            for &nu_a in &nu_as {
                for &p_u in &pus {
                    for &p in &ps {
                        let mut e = exp.clone();
                        e.l = l;
                        e.sector = nu.map_or(SectorSpec::Mixed, SectorSpec::Fixed);
                        e.nu_a = nu_a;
                        e.p_u = p_u;
                        e.p = p;
                        let mut label = format!("L{l}_pu{}_p{}", fmt_num(p_u), fmt_num(p));
                        if let Some(f) = nu {
                            label.push_str(&format!("_nu{}-{}", f.num, f.den));
                        }
                        if let Some(f) = nu_a {
                            label.push_str(&format!("_nua{}-{}", f.num, f.den));
                        }
                        let index = points.len();
                        points.push(resolve(&e, observable, index, label)?);
                    }
                }
            }
        }
    }
    Ok(points)
}

/// File name of one artifact: `<name>__<observable>__<label>[_x<offset>].csv`.
pub fn csv_name(manifest: &str, observable: Observable, label: &str, offset: Option<i64>) -> String {
    match offset {
        Some(x) => format!("{manifest}__{observable}__{label}_x{x}.csv"),
        None => format!("{manifest}__{observable}__{label}.csv"),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PointReport {
    pub label: String,
    pub files: Vec<String>,
    pub seconds: f64,
    pub error: Option<String>,
    #[serde(skip)]
    pub exit_code: i32,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub name: String,
    pub observable: Observable,
    pub version: String,
    pub workers: usize,
    pub n_points: usize,
    pub seconds: f64,
    pub manifest: RunManifest,
    pub points: Vec<PointReport>,
}

impl RunReport {
    /// 0 when every point succeeded, else the most severe point code.
    pub fn exit_code(&self) -> i32 {
        self.points.iter().map(|p| p.exit_code).max().unwrap_or(0)
    }
}

/// Compute the series of one point, keyed by correlation offset where
/// relevant.
pub fn run_point(observable: Observable, cfg: &ExperimentConfig) -> Result<Vec<(Option<i64>, TimeSeries)>> {
    Ok(match observable {
        Observable::Entropy => vec![(None, estimate_entropy_phase_sum(cfg)?)],
        Observable::Pfrac => vec![(None, estimate_p_fraction(cfg)?)],
        Observable::Displacement => vec![(None, estimate_displacement(cfg)?)],
        Observable::Density => vec![(None, estimate_density(cfg)?)],
        Observable::Qdecay => vec![(None, estimate_q_decay(cfg)?)],
        Observable::Correlation => estimate_correlation(cfg)?
            .into_iter()
            .map(|(x, s)| (Some(x), s))
            .collect(),
    })
}

/// Run every point on a pool of `workers` threads and write the artifacts
/// plus `<name>__<observable>__manifest.json` into `out`.
pub fn run(manifest: &RunManifest, observable: Observable, out: &Path, workers: usize) -> Result<RunReport> {
    let points = plan(manifest, observable)?;
    std::fs::create_dir_all(out)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::config("workers", e.to_string()))?;
    let start = Instant::now();
    let mut reports = Vec::with_capacity(points.len());
    for pt in &points {
        let t0 = Instant::now();
        let result = pool.install(|| run_point(observable, &pt.config));
        let mut report = PointReport {
            label: pt.label.clone(),
            files: vec![],
            seconds: 0.0,
            error: None,
            exit_code: 0,
            warnings: vec![],
        };
        match result {
            Ok(series) => {
                for (offset, s) in series {
                    let name = csv_name(&manifest.name, observable, &pt.label, offset);
                    s.write_csv(&out.join(&name))?;
                    report.warnings.extend(s.meta.warnings.iter().cloned());
                    report.files.push(name);
                }
            }
            Err(e) => {
                report.exit_code = e.exit_code();
                report.error = Some(e.to_string());
            }
        }
        report.seconds = t0.elapsed().as_secs_f64();
        reports.push(report);
    }
    let report = RunReport {
        name: manifest.name.clone(),
        observable,
        version: VERSION.to_string(),
        workers: workers.max(1),
        n_points: points.len(),
        seconds: start.elapsed().as_secs_f64(),
        manifest: manifest.clone(),
        points: reports,
    };
    let echo = out.join(format!("{}__{}__manifest.json", manifest.name, observable));
    std::fs::write(&echo, serde_json::to_string_pretty(&report).expect("report serializes"))?;
    Ok(report)
}
