use std::f64::consts::PI;

use proptest::prelude::*;

use pilir::autodiff::{AxisOrder, Jet, Tape, Tensor};
use pilir::checkpoint::{self, Checkpoint};
use pilir::grid::{self, Weighting};
use pilir::networks::{predict, Activation, Field, Model, ModelSpec};
use pilir::pde::{ConvectionIc, PdeProblem};
use pilir::sampling::PointCounts;
use pilir::training::{train, TrainConfig};

fn scheme() -> impl Strategy<Value = Weighting> {
    prop_oneof![Just(Weighting::Multilinear), Just(Weighting::Cosine)]
}

fn pilir_spec(dim: usize, grids: usize, res: usize, weighting: Weighting) -> ModelSpec {
    ModelSpec::Pilir {
        grids,
        resolution: vec![res; dim],
        channels: 3,
        synth_hidden: vec![6],
        synth_out: 4,
        synth_activation: Activation::Tanh,
        head_hidden: vec![5],
        weighting,
        grid_init: 0.5,
    }
}

fn scalar_loss(model: &Model, x: &Tensor) -> f64 {
    let mut t = Tape::new();
    let input = Jet::seed(&mut t, x, &[AxisOrder { axis: 0, second: true }]).unwrap();
    let u = model.eval(&mut t, &input).unwrap();
    let j = u.axis(&mut t, 0).unwrap();
    let a = t.square(u.v).unwrap();
    let a = t.add(a, j.d2).unwrap();
    let s = t.sum(a).unwrap();
    t.value(s).item().unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn corner_weights_are_a_partition_of_unity(local in prop::collection::vec(0.0f64..=1.0, 1..=3), s in scheme()) {
        let w = grid::weights(s, &local);
        prop_assert_eq!(w.len(), 1 << local.len());
        prop_assert!(w.iter().all(|&v| (0.0..=1.0).contains(&v)));
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn single_point_gradients_stay_in_one_cell(
        dim in 1usize..=3,
        u in prop::collection::vec(0.01f64..0.99, 3),
        s in scheme(),
        seed in 0u64..1000,
    ) {
        let bounds = vec![(-1.0, 1.0); dim];
        let model = Model::new(&pilir_spec(dim, 2, 4, s), &bounds, 1, seed).unwrap();
        let x = Tensor::from_fn(1, dim, |_, c| -1.0 + 2.0 * u[c]);
        let mut t = Tape::new();
        let input = Jet::seed(&mut t, &x, &[]).unwrap();
        let out = model.eval(&mut t, &input).unwrap();
        let loss = t.sum(out.v).unwrap();
        let g = t.backward(loss).unwrap();
        for &id in &model.grid().unwrap().params {
            let gt = g.get(id).unwrap();
            let touched = (0..gt.rows()).filter(|&r| gt.row_slice(r).iter().any(|v| *v != 0.0)).count();
            prop_assert!(touched <= 1 << dim);
        }
    }

    #[test]
    fn identity_synth_matches_interpolation(seed in 0u64..1000, s in scheme()) {
        let bounds = [(0.0, 1.0), (-2.0, 2.0)];
        let mut pilir = Model::new(
            &ModelSpec::Pilir {
                grids: 1,
                resolution: vec![3, 4],
                channels: 2,
                synth_hidden: vec![],
                synth_out: 2,
                synth_activation: Activation::Tanh,
                head_hidden: vec![3],
                weighting: s,
                grid_init: 1.0,
            },
            &bounds,
            1,
            seed,
        )
        .unwrap();
        pilir.set_identity_synth().unwrap();
        let interp_spec = ModelSpec::InterpGrid {
            grids: 1,
            resolution: vec![3, 4],
            channels: 2,
            head_hidden: vec![3],
            weighting: s,
            grid_init: 1.0,
        };
        let mut interp = Model::new(&interp_spec, &bounds, 1, seed + 1).unwrap();
        for id in interp.params.ids().collect::<Vec<_>>() {
            let src = pilir.params.find(&interp.params.entry(id).name).unwrap();
            *interp.params.value_mut(id) = pilir.params.value(src).clone();
        }
        let x = Tensor::from_fn(50, 2, |r, c| {
            let f = ((r * 37 + c * 11) % 50) as f64 / 49.0;
            bounds[c].0 + f * (bounds[c].1 - bounds[c].0)
        });
        let a = predict(&pilir, &x, 64).unwrap();
        let b = predict(&interp, &x, 64).unwrap();
        for (p, q) in a.data().iter().zip(b.data()) {
            prop_assert!((p - q).abs() <= 1e-14);
        }
    }

    #[test]
    fn mlp_gradients_match_central_differences(
        hidden in prop::collection::vec(1usize..=6, 1..=2),
        wavelet in any::<bool>(),
        seed in 0u64..1000,
    ) {
        let spec = if wavelet { ModelSpec::WaveletPinn { hidden } } else { ModelSpec::MlpPinn { hidden } };
        let mut model = Model::new(&spec, &[(-1.0, 1.0)], 1, seed).unwrap();
        let x = Tensor::from_fn(4, 1, |r, _| -0.8 + 0.5 * r as f64);

        let mut t = Tape::new();
        let input = Jet::seed(&mut t, &x, &[AxisOrder { axis: 0, second: true }]).unwrap();
        let u = model.eval(&mut t, &input).unwrap();
        let j = u.axis(&mut t, 0).unwrap();
        let a = t.square(u.v).unwrap();
        let a = t.add(a, j.d2).unwrap();
        let loss = t.sum(a).unwrap();
        let g = t.backward(loss).unwrap();

        let h = 1e-6;
        let (mut err, mut scale) = (0.0f64, 0.0f64);
        for id in model.params.ids().collect::<Vec<_>>() {
            let analytic = g.get(id).map(|v| v.data().to_vec()).unwrap_or_default();
            for k in 0..model.params.value(id).data().len() {
                let orig = model.params.value(id).data()[k];
                model.params.value_mut(id).data_mut()[k] = orig + h;
                let fp = scalar_loss(&model, &x);
                model.params.value_mut(id).data_mut()[k] = orig - h;
                let fm = scalar_loss(&model, &x);
                model.params.value_mut(id).data_mut()[k] = orig;
                let fd = (fp - fm) / (2.0 * h);
                err = err.max((analytic.get(k).copied().unwrap_or(0.0) - fd).abs());
                scale = scale.max(fd.abs());
            }
        }
        prop_assert!(err <= 1e-6 * scale.max(1e-6), "err {err} scale {scale}");
    }

    #[test]
    fn helmholtz_exact_solution_has_zero_residual(a1 in 1.0f64..6.0, a2 in 1.0f64..6.0, k in 0.0f64..4.0) {
        let problem = PdeProblem::helmholtz(&[a1, a2], k).unwrap();
        let x = Tensor::from_fn(40, 2, |r, c| -1.0 + 2.0 * ((r * 7 + c * 13) % 40) as f64 / 39.0);
        let field = problem.exact_field().unwrap();
        let mut t = Tape::new();
        let input = Jet::seed(&mut t, &x, &problem.derivative_axes()).unwrap();
        let u = field.eval(&mut t, &input).unwrap();
        let r = problem.residual(&mut t, &x, &u).unwrap();
        let scale = PI * PI * (a1 * a1 + a2 * a2);
        prop_assert!(t.value(r).data().iter().all(|v| v.abs() <= 1e-12 * scale));
    }

    #[test]
    fn saved_checkpoints_reload_bit_exactly(seed in 0u64..1000, kind in 0usize..4) {
        let problem = PdeProblem::convection(30.0, ConvectionIc::SingleSine);
        let spec = match kind {
            0 => pilir_spec(2, 2, 3, Weighting::Cosine),
            1 => ModelSpec::InterpGrid {
                grids: 1,
                resolution: vec![3, 5],
                channels: 2,
                head_hidden: vec![4],
                weighting: Weighting::Multilinear,
                grid_init: 0.3,
            },
            2 => ModelSpec::MlpPinn { hidden: vec![5, 3] },
            _ => ModelSpec::WaveletPinn { hidden: vec![4] },
        };
        let model = Model::new(&spec, &problem.bounds, 1, seed).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        checkpoint::save(&path, &model, &problem).unwrap();
        let ckpt = Checkpoint::decode(&std::fs::read(&path).unwrap()).unwrap();
        prop_assert_eq!(ckpt.problem().unwrap(), problem);
        let back = ckpt.to_model().unwrap();
        for (p, q) in model.params.entries().iter().zip(back.params.entries()) {
            prop_assert_eq!(&p.name, &q.name);
            prop_assert!(p.value.data().iter().zip(q.value.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }
}

#[test]
fn training_is_deterministic_and_reduces_the_loss() {
    let problem = PdeProblem::helmholtz(&[1.0, 1.0], 1.0).unwrap();
    let spec = pilir_spec(2, 1, 4, Weighting::Cosine);
    let mut cfg = TrainConfig::for_problem(&problem, 7);
    cfg.epochs = 300;
    cfg.eval_every = 100;
    cfg.resample_every = 50;
    cfg.counts = PointCounts {
        interior: 128,
        initial: 0,
        boundary: 64,
    };
    let run = |_| {
        let model = Model::new(&spec, &problem.bounds, 1, 7).unwrap();
        train(&problem, model, &cfg, None, |_, _| {}).unwrap()
    };
    let (a, b) = (run(0), run(1));
    assert_eq!(a.history, b.history);
    assert_eq!(a.model, b.model);
    let first = a.history.first().unwrap().loss;
    let last = a.history.last().unwrap().loss;
    assert!(last < 0.5 * first, "loss {first} -> {last}");
}
