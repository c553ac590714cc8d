use proptest::prelude::*;
use relrank::diffcore::checkpoint;
use relrank::marketdata::{fractional_split, synth_market, Dataset, SynthConfig, N_FEATURES};
use relrank::ranker::*;

fn small_dataset(seed: u64) -> Dataset {
    let m = synth_market(&SynthConfig { n_stocks: 6, n_days: 90, seed, ..Default::default() }).unwrap();
    Dataset::from_prices(&m.prices).unwrap().with_relations(m.relations).unwrap()
}

fn small_config(mode: ModelMode) -> RankModelConfig {
    RankModelConfig { mode, window: 3, hidden: 4, epochs: 3, lambda: 0.5, lr: 1e-2, seed: 7, ..Default::default() }
}

fn hinge_oracle(p: &[f64], r: &[f64]) -> f64 {
    let mut h = 0.0;
    for i in 0..p.len() {
        for j in 0..p.len() {
            h += (-(p[i] - p[j]) * (r[i] - r[j])).max(0.0);
        }
    }
    h
}

fn pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (1usize..12).prop_flat_map(|n| (prop::collection::vec(-1.0..1.0f64, n), prop::collection::vec(-1.0..1.0f64, n)))
}

proptest! {
    #[test]
    fn loss_is_nonnegative((p, r) in pair(), alpha in 0.0..10.0f64) {
        prop_assert!(ranking_loss(&p, &r, alpha, true).unwrap() >= 0.0);
    }

    #[test]
    fn zero_alpha_is_mse((p, r) in pair()) {
        let mse = p.iter().zip(&r).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / p.len() as f64;
        prop_assert!((ranking_loss(&p, &r, 0.0, true).unwrap() - mse).abs() < 1e-12);
    }

    #[test]
    fn order_preserving_scores_have_no_hinge(r in prop::collection::vec(-1.0..1.0f64, 1..12), a in 0.1..5.0f64, c in -1.0..1.0f64) {
        let p: Vec<f64> = r.iter().map(|x| a * x * x * x + c).collect();
        prop_assert_eq!(hinge_oracle(&p, &r), 0.0);
        let plain = ranking_loss(&p, &r, 0.0, true).unwrap();
        prop_assert!((ranking_loss(&p, &r, 3.0, true).unwrap() - plain).abs() < 1e-12);
    }

    #[test]
    fn hinge_is_shift_invariant((p, r) in pair(), c in -5.0..5.0f64) {
        let shifted: Vec<f64> = p.iter().map(|x| x + c).collect();
        prop_assert!((hinge_oracle(&shifted, &r) - hinge_oracle(&p, &r)).abs() < 1e-9);
    }

    #[test]
    fn loss_matches_oracle_and_tape((p, r) in pair(), alpha in 0.0..10.0f64) {
        let n = p.len() as f64;
        let mse = p.iter().zip(&r).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        let expected = mse / n + alpha * hinge_oracle(&p, &r) / (n * n);
        prop_assert!((ranking_loss(&p, &r, alpha, true).unwrap() - expected).abs() < 1e-12);
        prop_assert!((ranking_loss(&p, &r, alpha, false).unwrap() - (mse + alpha * hinge_oracle(&p, &r))).abs() < 1e-12);
        let mut tape = relrank::Tape64::new();
        let s = tape.constant(relrank::Tensor64::vector(p.clone())).unwrap();
        let l = ranking_loss_on_tape(&mut tape, s, &r, alpha, true).unwrap();
        prop_assert!((tape.value(l).data()[0] - expected).abs() < 1e-12);
    }
}

#[test]
fn every_mode_passes_gradient_check() {
    for mode in ModelMode::ALL {
        for seed in 0..5 {
            let r = check_model_gradients(mode, ToyScale::default(), seed, GRADCHECK_EPS, false).unwrap();
            assert!(r.passes(1e-4), "{mode} seed {seed}: {r:?}");
        }
    }
}

#[test]
fn zero_learning_rate_keeps_initial_parameters() {
    let ds = small_dataset(1);
    let split = fractional_split(ds.n_days(), 0.6, 0.2).unwrap();
    let config = RankModelConfig { lr: 0.0, epochs: 1, ..small_config(ModelMode::RsrI) };
    let (model, history) = train(&ds, &split, &config).unwrap();
    assert_eq!(history.epochs.len(), 1);
    assert_eq!(history.selected_epoch, 1);
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(config.seed);
    let init = RankModel::init_with_rng(&config, N_FEATURES, ds.relations(), &mut rng).unwrap();
    assert_eq!(model.params(), init.params());
}

#[test]
fn training_is_deterministic_per_seed() {
    let ds = small_dataset(2);
    let split = fractional_split(ds.n_days(), 0.6, 0.2).unwrap();
    for mode in ModelMode::ALL {
        let config = small_config(mode);
        let (a, ha) = train(&ds, &split, &config).unwrap();
        let (b, hb) = train(&ds, &split, &config).unwrap();
        assert_eq!(a.params(), b.params(), "{mode}");
        assert_eq!(ha, hb);
        assert_eq!(ha.epochs.len(), 3);
        let best = ha.epochs.iter().map(|e| e.validation.irr).fold(f64::MIN, f64::max);
        assert_eq!(ha.selected().validation.irr, best);
        assert!(ha.epochs[..ha.selected_epoch - 1].iter().all(|e| e.validation.irr < best));
    }
}

#[test]
fn checkpoint_round_trip_predicts_identically() {
    let ds = small_dataset(3);
    let split = fractional_split(ds.n_days(), 0.6, 0.2).unwrap();
    let config = small_config(ModelMode::RsrE);
    let (model, _) = train(&ds, &split, &config).unwrap();
    let bytes = checkpoint::encode(model.params());
    let back = RankModel::from_params(&config, N_FEATURES, ds.relations(), checkpoint::decode(&bytes).unwrap()).unwrap();
    for t in split.test.clone() {
        let w = ds.window(t, config.window).unwrap();
        let (a, b) = (model.predict(&w).unwrap(), back.predict(&w).unwrap());
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
    let other = RankModelConfig { hidden: 5, ..config };
    assert!(RankModel::<f64>::from_params(&other, N_FEATURES, ds.relations(), checkpoint::decode(&bytes).unwrap()).is_err());
}

#[test]
fn relational_modes_need_relations() {
    for mode in [ModelMode::Gbr, ModelMode::Gcn, ModelMode::RsrE, ModelMode::RsrI] {
        let err = RankModel::<f64>::init(&small_config(mode), N_FEATURES, None).unwrap_err();
        assert!(matches!(err, relrank::Error::Config(_)), "{mode}");
    }
    assert!(RankModel::<f64>::init(&small_config(ModelMode::RankLstm), N_FEATURES, None).is_ok());
}

#[test]
fn single_point_grid_equals_plain_training() {
    let ds = small_dataset(4);
    let split = fractional_split(ds.n_days(), 0.6, 0.2).unwrap();
    let base = small_config(ModelMode::Gcn);
    let grid = GridSpec { window: vec![3], hidden: vec![4], alpha: vec![1.0], lambda: vec![] };
    let outcome = grid_search(&ds, &split, &base, &grid, 2).unwrap();
    let (model, history) = train(&ds, &split, &base).unwrap();
    assert_eq!(outcome.best, 0);
    assert_eq!(outcome.cells[0].history, history);
    assert_eq!(outcome.model.params(), model.params());
}

#[test]
fn grid_search_is_independent_of_thread_count() {
    let ds = small_dataset(5);
    let split = fractional_split(ds.n_days(), 0.6, 0.2).unwrap();
    let base = RankModelConfig { epochs: 2, ..small_config(ModelMode::RankLstm) };
    let grid = GridSpec { window: vec![2, 3], hidden: vec![3], alpha: vec![0.1, 1.0], lambda: vec![] };
    let a = grid_search(&ds, &split, &base, &grid, 1).unwrap();
    let b = grid_search(&ds, &split, &base, &grid, 4).unwrap();
    assert_eq!(a.cells, b.cells);
    assert_eq!(a.best, b.best);
    let best_irr = a.cells.iter().map(|c| c.validation().irr).fold(f64::MIN, f64::max);
    assert_eq!(a.cells[a.best].validation().irr, best_irr);
}

#[test]
fn high_alpha_is_accepted() {
    let config = RankModelConfig { alpha: 10.0, ..small_config(ModelMode::RankLstm) };
    assert!(config.validate().is_ok());
    assert!(RankModelConfig { alpha: -1.0, ..config }.validate().is_err());
}
