//! The entropy estimator in exhaustive mode against the exact oracle, through
//! the same configuration path the runner uses.

use u1qa::circuit::{build_layer_plan, Model, ModelSpec};
use u1qa::exact::{evolve_exact, purity_exact, SignState};
use u1qa::lattice::{Boundary, Filling, Partition, SectorSpec};
use u1qa::observables::{estimate_entropy_phase_sum, Averaging, ExperimentConfig, InitialState};

fn check(model: Model, l: usize, sector: SectorSpec, p: f64, averaging: Averaging) {
    let part = Partition::new(l, l / 2, Boundary::Periodic).unwrap();
    let spec = ModelSpec::new(model, part, 0.5, p).unwrap();
    let mut cfg = ExperimentConfig::new(spec, sector, InitialState::StandardPair, 10, 3, 0, 5);
    cfg.exhaustive = true;
    cfg.averaging = averaging;
    let s = estimate_entropy_phase_sum(&cfg).unwrap();
    let plan = build_layer_plan(&spec).unwrap();
    let exact: Vec<Vec<f64>> = (0..cfg.realizations)
        .map(|r| {
            let real = cfg.realization(&plan, r);
            (0..=cfg.t_max)
                .map(|d| {
                    let mut st = SignState::uniform(l, sector).unwrap();
                    evolve_exact(real.suffix(d), &mut st).unwrap();
                    purity_exact(&st, part.l_a)
                })
                .collect()
        })
        .collect();
    for (i, &t) in s.times.iter().enumerate() {
        let col: Vec<f64> = exact.iter().map(|row| row[t as usize]).collect();
        let want = match averaging {
            Averaging::Quenched => col.iter().map(|p| -p.ln()).sum::<f64>() / col.len() as f64,
            Averaging::Annealed => -(col.iter().sum::<f64>() / col.len() as f64).ln(),
        };
        assert!((s.mean[i] - want).abs() < 1e-10, "{model} L={l} p={p} t={t}: {} vs {want}", s.mean[i]);
    }
}

#[test]
fn exhaustive_entropy_equals_exact_entropy() {
    let half = SectorSpec::Fixed(Filling::new(1, 2).unwrap());
    for p in [0.0, 0.5, 1.0] {
        check(Model::SwapOnly, 8, SectorSpec::Mixed, p, Averaging::Quenched);
        check(Model::FredkinSwap, 6, SectorSpec::Mixed, p, Averaging::Quenched);
        check(Model::Cswap4, 8, SectorSpec::Mixed, p, Averaging::Annealed);
        check(Model::FredkinSwap, 12, half, p, Averaging::Annealed);
        check(Model::Cswap4, 12, half, p, Averaging::Quenched);
    }
}

#[test]
fn initial_entropies() {
    let one = |l: usize, sector: SectorSpec| {
        let part = Partition::new(l, l / 2, Boundary::Periodic).unwrap();
        let spec = ModelSpec::new(Model::SwapOnly, part, 0.5, 0.0).unwrap();
        let mut cfg = ExperimentConfig::new(spec, sector, InitialState::StandardPair, 1, 1, 0, 1);
        cfg.exhaustive = true;
        estimate_entropy_phase_sum(&cfg).unwrap().mean[0]
    };
    // product state: pure on A
    assert_eq!(one(8, SectorSpec::Mixed), 0.0);
    // L = 4 at half filling: 18 of the 36 pairs keep their A-swapped partner
    let s = one(4, SectorSpec::Fixed(Filling::new(1, 2).unwrap()));
    assert!((s - 2f64.ln()).abs() < 1e-15, "{s}");
    let mut st = SignState::uniform(4, SectorSpec::Fixed(Filling::new(1, 2).unwrap())).unwrap();
    evolve_exact(&[], &mut st).unwrap();
    assert!((-purity_exact(&st, 2).ln() - 2f64.ln()).abs() < 1e-15);
}
