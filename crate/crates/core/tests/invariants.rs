use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use u1qa::circuit::{sample_realization, Model, ModelSpec, Realization};
use u1qa::dynamics::{step_pair, EvolvingString, PairTrajectory};
use u1qa::kernel::LaneBatch;
use u1qa::lattice::{charge, sample_bitstring, swap_a, Boundary, Filling, Partition, SectorSpec};
use u1qa::scaling::{collapse_fit, CollapseForm, Curve, Grid};

fn model() -> impl Strategy<Value = Model> {
    prop_oneof![Just(Model::FredkinSwap), Just(Model::SwapOnly), Just(Model::Cswap4)]
}

fn setup(model: Model, cells: usize, p_u: f64, p: f64, open: bool, t: usize, seed: u64) -> (Partition, Realization) {
    let l = model.period() * cells;
    let boundary = if open { Boundary::Open } else { Boundary::Periodic };
    let part = Partition::new(l, l / 2, boundary).unwrap();
    let spec = ModelSpec::new(model, part, p_u, p).unwrap();
    let real = sample_realization(&spec, t, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    (part, real)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Pairs whose species have not met carry relative phase +1, and labels
    /// sit exactly on the difference field.
    #[test]
    fn unmet_pairs_have_trivial_phase(
        model in model(), cells in 1usize..5, p_u in 0.0..1.0f64, p in 0.0..1.0f64,
        open: bool, seed: u64,
    ) {
        let (part, real) = setup(model, cells, p_u, p, open, 16, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        for _ in 0..8 {
            let n1 = sample_bitstring(part.l, SectorSpec::Mixed, &mut rng).unwrap();
            let n2 = sample_bitstring(part.l, SectorSpec::Mixed, &mut rng).unwrap();
            let mut pt = PairTrajectory::new(n1, n2, &part);
            for (i, step) in real.steps.iter().enumerate().rev() {
                for sub in step.sublayers.iter().rev() {
                    step_pair(sub, &mut pt, real.t_max() - i).unwrap();
                }
                pt.check_labels().unwrap();
                if !pt.met {
                    prop_assert_eq!(pt.relative_phase(), 1);
                }
            }
        }
    }

    /// Every event conserves the charge of every string.
    #[test]
    fn events_conserve_charge(model in model(), cells in 1usize..6, p in 0.0..1.0f64, seed: u64) {
        let (part, real) = setup(model, cells, 0.5, p, false, 6, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = EvolvingString::new(sample_bitstring(part.l, SectorSpec::Mixed, &mut rng).unwrap());
        let q = charge(&s.bits);
        for step in &real.steps {
            for ev in step.events() {
                s.apply(ev);
                prop_assert_eq!(charge(&s.bits), q);
            }
        }
    }

    /// The bit-sliced kernel reproduces the scalar reference lane by lane.
    #[test]
    fn kernel_matches_scalar(
        model in model(), cells in 1usize..4, p in 0.0..1.0f64, lanes in 1usize..=64, seed: u64,
    ) {
        let (part, real) = setup(model, cells, 0.5, p, false, 8, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(!seed);
        let mut batch = LaneBatch::new(part.l, 4, lanes);
        let mut scalars = Vec::new();
        for lane in 0..lanes {
            let n1 = sample_bitstring(part.l, SectorSpec::Mixed, &mut rng).unwrap();
            let n2 = sample_bitstring(part.l, SectorSpec::Mixed, &mut rng).unwrap();
            let (n1p, n2p) = swap_a(&n1, &n2, part.l_a);
            for (k, s) in [&n1, &n2, &n1p, &n2p].into_iter().enumerate() {
                batch.set_string(k, lane, s);
            }
            scalars.push(PairTrajectory::new(n1, n2, &part));
        }
        batch.init_labels(&part);
        for (i, step) in real.steps.iter().enumerate().rev() {
            let t = real.t_max() - i;
            batch.apply_step_backward(step, t as u32);
            for pt in scalars.iter_mut() {
                for sub in step.sublayers.iter().rev() {
                    step_pair(sub, pt, t).unwrap();
                }
            }
        }
        for (lane, pt) in scalars.iter().enumerate() {
            for k in 0..4 {
                prop_assert_eq!(batch.string(k, lane), pt.strings[k].bits.clone());
                prop_assert_eq!((batch.sign_word(k) >> lane) & 1 == 1, pt.strings[k].sign() < 0);
            }
            prop_assert_eq!((batch.met() >> lane) & 1 == 1, pt.met);
        }
        prop_assert_eq!(batch.phase_parity() & !batch.met(), 0);
    }

    /// Curves built from an exact scaling function collapse at the
    /// generating exponents, whatever the overall scale.
    #[test]
    fn collapse_recovers_generating_exponents(alpha in 0.15..0.45f64, z in 1.5..2.8f64, scale in 0.1..10.0f64) {
        let curves: Vec<Curve> = [16.0f64, 32.0, 64.0]
            .iter()
            .map(|&l| Curve {
                label: l,
                points: (0..60)
                    .map(|i| {
                        let t = 2f64.powf(1.0 + i as f64 * 0.25);
                        (t, scale * t.powf(-alpha) / (1.0 + t / l.powf(z)))
                    })
                    .collect(),
            })
            .collect();
        let r = collapse_fit(&curves, CollapseForm::Density, Grid::new(0.1, 0.5, 0.02), Grid::new(1.4, 3.0, 0.1)).unwrap();
        prop_assert!((r.alpha - alpha).abs() < 0.005, "alpha {} vs {}", r.alpha, alpha);
        prop_assert!((r.z - z).abs() < 0.03, "z {} vs {}", r.z, z);
    }

    /// Fixed-sector samples stay in the sector for every filling.
    #[test]
    fn fixed_sector_samples_have_the_sector_charge(num in 1u32..6, seed: u64) {
        let f = Filling::new(num, 6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = sample_bitstring(60, SectorSpec::Fixed(f), &mut rng).unwrap();
        prop_assert_eq!(charge(&s), 10 * num);
    }
}
