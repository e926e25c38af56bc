use ndarray::{array, Array2};
use proptest::prelude::*;

use super::*;
use crate::nn::Rng;
use crate::schema::FeatureSpec;

fn levels(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("l{i}")).collect()
}

fn toy_schema() -> Schema {
    Schema::new(vec![
        FeatureSpec::discrete("cat", levels(4)),
        FeatureSpec::discrete("bin", levels(2)),
        FeatureSpec::numerical("num", 0.0, 1.0),
    ])
    .unwrap()
}

fn toy_config(mode: Mode) -> TrainConfig {
    TrainConfig {
        mode,
        latent_dim: 3,
        hidden_dim: 6,
        batch_size: 5,
        epochs: 3,
        ..TrainConfig::default()
    }
}

fn toy_batch<T: Real>() -> Batch<T> {
    Batch {
        n: 5,
        columns: vec![
            BatchColumn::Codes(vec![0, 3, 1, 3, 2]),
            BatchColumn::Codes(vec![1, 0, 0, 1, 1]),
            BatchColumn::Values(
                Array2::from_shape_vec(
                    (5, 1),
                    vec![0.3, -0.7, 0.1, 0.9, -0.2]
                        .into_iter()
                        .map(T::lit)
                        .collect(),
                )
                .unwrap(),
            ),
        ],
    }
}

fn toy_eps(seed: u64) -> Array2<f64> {
    crate::nn::gauss_sample(&mut Rng::new(seed), 5, 3)
}

fn model(mode: Mode, seed: u64) -> Model<f64> {
    Model::new(&toy_schema(), toy_config(mode), &mut Rng::new(seed)).unwrap()
}

/// Central-difference check of d(total)/d(param) for every scalar parameter.
fn check_gradients(
    m: &mut Model<f64>,
    batch: &Batch<f64>,
    eps: &Array2<f64>,
    cond: Option<&Array2<f64>>,
) {
    let mut tape = Tape::new();
    let vars = m.record_loss(&mut tape, batch, eps, cond).unwrap();
    tape.backward(vars.total, m.params_mut()).unwrap();
    let ids: Vec<_> = m.params().ids().collect();
    let h = 1e-6;
    for id in ids {
        let analytic = m.params().grad(id).clone();
        let name = m.params().get(id).name.clone();
        for idx in 0..analytic.len() {
            let (r, c) = (idx / analytic.ncols(), idx % analytic.ncols());
            let orig = m.params().value(id)[[r, c]];
            m.params_mut().value_mut(id)[[r, c]] = orig + h;
            let up = m.loss(batch, eps, cond).unwrap().total;
            m.params_mut().value_mut(id)[[r, c]] = orig - h;
            let down = m.loss(batch, eps, cond).unwrap().total;
            m.params_mut().value_mut(id)[[r, c]] = orig;
            let fd = (up - down) / (2.0 * h);
            let a = analytic[[r, c]];
            assert!(
                (fd - a).abs() <= 1e-6 + 1e-4 * fd.abs().max(a.abs()),
                "{name}[{r},{c}]: analytic {a} vs numeric {fd}"
            );
        }
    }
}

#[test]
fn finite_difference_gradients_cardicat() {
    let mut m = model(Mode::Cardicat, 1);
    check_gradients(&mut m, &toy_batch(), &toy_eps(2), None);
}

#[test]
fn finite_difference_gradients_baseline() {
    let mut m = model(Mode::BaselineOnehot, 1);
    check_gradients(&mut m, &toy_batch(), &toy_eps(2), None);
}

#[test]
fn finite_difference_gradients_with_regularizer_away_from_init() {
    let mut m = model(Mode::Cardicat, 4);
    let t = m.params().find("emb.cat").unwrap();
    m.params_mut().value_mut(t).mapv_inplace(|v| v * 1.7);
    let reg = m.loss(&toy_batch(), &toy_eps(5), None).unwrap().reg;
    assert!(reg > 1e-4, "regularizer inactive: {reg}");
    check_gradients(&mut m, &toy_batch(), &toy_eps(5), None);
}

#[test]
fn finite_difference_gradients_linear_head() {
    let mut cfg = toy_config(Mode::Cardicat);
    cfg.numeric_head = NumericHead::Linear;
    let mut m = Model::<f64>::new(&toy_schema(), cfg, &mut Rng::new(8)).unwrap();
    check_gradients(&mut m, &toy_batch(), &toy_eps(9), None);
}

fn zero_param(m: &mut Model<f64>, name: &str) {
    let id = m.params().find(name).unwrap();
    m.params_mut().value_mut(id).fill(0.0);
}

#[test]
fn target_path_gradient_is_scaled_mse_derivative() {
    let mut m = model(Mode::Cardicat, 3);
    // With a zero first encoder layer the table reaches the loss only as a target.
    zero_param(&mut m, "enc.in.w");
    zero_param(&mut m, "enc.in.b");
    let mut cfg_reg0 = m.config.clone();
    cfg_reg0.reg_weight = 0.0;
    m.config = cfg_reg0;
    let batch = toy_batch::<f64>();
    let eps = toy_eps(6);

    let (mu, sigma) = m.encode_batch(&batch, None).unwrap();
    let z = &mu + &(&sigma * &eps);
    let e_hat = match &m.decode_batch(&z, None).unwrap()[0] {
        HeadOutput::Embedding(e) => e.clone(),
        other => panic!("unexpected head {other:?}"),
    };
    let table_id = m.params().find("emb.cat").unwrap();
    let table = m.params().value(table_id).clone();
    let codes = [0usize, 3, 1, 3, 2];
    let mut expected = Array2::<f64>::zeros(table.dim());
    for (i, &c) in codes.iter().enumerate() {
        for j in 0..table.ncols() {
            expected[[c, j]] += m.config.loss_factor * 2.0 * (table[[c, j]] - e_hat[[i, j]]) / 5.0;
        }
    }

    let mut tape = Tape::new();
    let vars = m.record_loss(&mut tape, &batch, &eps, None).unwrap();
    tape.backward(vars.total, m.params_mut()).unwrap();
    let got = m.params().grad(table_id);
    for (g, e) in got.iter().zip(expected.iter()) {
        assert!((g - e).abs() < 1e-10, "{got:?} vs {expected:?}");
    }
}

#[test]
fn embedding_table_receives_gradient_through_both_paths() {
    let batch = toy_batch::<f64>();
    let eps = toy_eps(6);
    let grad_of = |m: &mut Model<f64>| {
        let mut tape = Tape::new();
        let vars = m.record_loss(&mut tape, &batch, &eps, None).unwrap();
        tape.backward(vars.total, m.params_mut()).unwrap();
        m.params().grad(m.params().find("emb.cat").unwrap()).clone()
    };
    let mut full = model(Mode::Cardicat, 3);
    let g_full = grad_of(&mut full);
    // Zeroing only the columns of enc.in.w that read the embedding removes the
    // encoder path while leaving the decoder target identical.
    let mut target_only = full.clone();
    let w = target_only.params().find("enc.in.w").unwrap();
    for r in 0..2 {
        target_only.params_mut().value_mut(w).row_mut(r).fill(0.0);
    }
    let g_target = grad_of(&mut target_only);
    let diff: f64 = (&g_full - &g_target).iter().map(|v| v.abs()).sum();
    assert!(diff > 1e-8, "encoder path contributes nothing");
    // Unused level 0..3 are all present in the batch; every row gets gradient.
    for row in g_full.rows() {
        assert!(row.iter().any(|v| v.abs() > 0.0));
    }
}

#[test]
fn kl_is_zero_for_standard_posterior() {
    let mut m = model(Mode::Cardicat, 1);
    for n in ["enc.mu.w", "enc.mu.b", "enc.logvar.w", "enc.logvar.b"] {
        zero_param(&mut m, n);
    }
    let t = m.loss(&toy_batch(), &toy_eps(1), None).unwrap();
    assert!(t.kl.abs() < 1e-15, "{}", t.kl);
}

#[test]
fn kl_for_unit_mean_shift_is_half() {
    let mut m = model(Mode::Cardicat, 1);
    for n in ["enc.mu.w", "enc.mu.b", "enc.logvar.w", "enc.logvar.b"] {
        zero_param(&mut m, n);
    }
    let b = m.params().find("enc.mu.b").unwrap();
    m.params_mut().value_mut(b)[[0, 0]] = 1.0;
    let t = m.loss(&toy_batch(), &toy_eps(1), None).unwrap();
    assert!((t.kl - 0.5).abs() < 1e-12, "{}", t.kl);
}

#[test]
fn regularizer_is_zero_at_initialisation() {
    let m = model(Mode::Cardicat, 11);
    let t = m.loss(&toy_batch(), &toy_eps(1), None).unwrap();
    assert!(t.reg.abs() < 1e-20, "{}", t.reg);
    let m32 =
        Model::<f32>::new(&toy_schema(), toy_config(Mode::Cardicat), &mut Rng::new(11)).unwrap();
    let t = m32
        .loss(&toy_batch(), &toy_eps(1).mapv(|v| v as f32), None)
        .unwrap();
    assert!(t.reg.abs() < 1e-10, "{}", t.reg);
}

#[test]
fn regularizer_matches_direct_variance_computation() {
    let mut m = model(Mode::Cardicat, 2);
    let id = m.params().find("emb.cat").unwrap();
    *m.params_mut().value_mut(id) = array![[0.5, -0.1], [0.2, 0.3], [-0.4, 0.0], [0.1, 0.9]];
    // Population variance per column, then averaged over columns.
    let col = |j: usize| {
        let v: Vec<f64> = m.params().value(id).column(j).to_vec();
        let mean = v.iter().sum::<f64>() / 4.0;
        v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 4.0
    };
    let vj = (col(0) + col(1)) / 2.0;
    let expected = (vj - m.initial_variances()[0]).powi(2);
    let t = m.loss(&toy_batch(), &toy_eps(1), None).unwrap();
    assert!((t.reg - expected).abs() < 1e-14);
}

#[test]
fn total_combines_weighted_terms() {
    for mode in [Mode::Cardicat, Mode::BaselineOnehot] {
        let mut cfg = toy_config(mode);
        cfg.kl_weight = 0.7;
        cfg.reg_weight = 3.0;
        cfg.loss_factor = 2.5;
        let mut m = Model::<f64>::new(&toy_schema(), cfg.clone(), &mut Rng::new(5)).unwrap();
        if let Some(id) = m.params().find("emb.cat") {
            m.params_mut().value_mut(id).mapv_inplace(|v| v * 0.5);
        }
        let t = m.loss(&toy_batch(), &toy_eps(3), None).unwrap();
        let want = cfg.loss_factor * t.recon + cfg.kl_weight * t.kl + cfg.reg_weight * t.reg;
        assert!((t.total - want).abs() < 1e-12);
        assert!((combine_loss(&cfg, t.recon, t.kl, t.reg) - t.total).abs() < 1e-12);
    }
}

#[test]
fn without_categorical_features_cardicat_equals_baseline() {
    let schema = Schema::new(vec![
        FeatureSpec::discrete("bin", levels(2)),
        FeatureSpec::numerical("num", 1.0, 2.0),
    ])
    .unwrap();
    let a = Model::<f64>::new(&schema, toy_config(Mode::Cardicat), &mut Rng::new(7)).unwrap();
    let b = Model::<f64>::new(&schema, toy_config(Mode::BaselineOnehot), &mut Rng::new(7)).unwrap();
    assert_eq!(a.parameter_count(), b.parameter_count());
    let batch = Batch {
        n: 5,
        columns: vec![
            BatchColumn::Codes(vec![0, 1, 1, 0, 1]),
            BatchColumn::Values(array![[0.1], [0.2], [-0.3], [0.0], [1.0]]),
        ],
    };
    let eps = toy_eps(4);
    assert_eq!(
        a.loss(&batch, &eps, None).unwrap(),
        b.loss(&batch, &eps, None).unwrap()
    );
    assert_eq!(a.loss(&batch, &eps, None).unwrap().reg, 0.0);
}

#[test]
fn input_width_counts_embedding_dims() {
    assert_eq!(model(Mode::Cardicat, 0).input_width(), 2 + 2 + 1);
    assert_eq!(model(Mode::BaselineOnehot, 0).input_width(), 4 + 2 + 1);
    let m = model(Mode::Cardicat, 0);
    assert_eq!(m.embedding_table(0).unwrap().dim(), (4, 2));
    assert!(m.embedding_table(1).is_none());
}

#[test]
fn parameter_count_matches_layer_arithmetic() {
    let cfg = toy_config(Mode::Cardicat);
    let (h, a) = (cfg.hidden_dim, cfg.latent_dim);
    let dense = |i: usize, o: usize| i * o + o;
    let want = 4 * 2
        + dense(5, h)
        + dense(h, h)
        + 2 * dense(h, a)
        + dense(a, h)
        + dense(h, h)
        + dense(h, 2)
        + dense(h, 2)
        + dense(h, 1);
    assert_eq!(parameter_count(&toy_schema(), &cfg).unwrap(), want);
}

#[test]
fn decoder_outputs_are_in_range() {
    let m = model(Mode::Cardicat, 2);
    let z = crate::nn::gauss_sample::<f64>(&mut Rng::new(3), 50, 3).mapv(|v| v * 5.0);
    let out = m.decode_batch(&z, None).unwrap();
    match &out[0] {
        HeadOutput::Embedding(e) => assert!(e.iter().all(|v| v.abs() < 1.0)),
        _ => panic!(),
    }
    match &out[1] {
        HeadOutput::Probabilities(p) => {
            assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
            assert!(row_sums(p).iter().all(|s| (s - 1.0).abs() < 1e-12));
        }
        _ => panic!(),
    }
    match &out[2] {
        HeadOutput::Value(v) => assert!(v.iter().all(|x| x.abs() < 1.0)),
        _ => panic!(),
    }
}

#[test]
fn rejects_bad_inputs() {
    let m = model(Mode::Cardicat, 0);
    let mut batch = toy_batch::<f64>();
    batch.columns[0] = BatchColumn::Codes(vec![0, 4, 0, 0, 0]);
    assert!(matches!(
        m.loss(&batch, &toy_eps(0), None),
        Err(Error::Data(_))
    ));
    assert!(matches!(
        m.loss(&toy_batch(), &Array2::zeros((5, 2)), None),
        Err(Error::Shape(_))
    ));
    assert!(m
        .loss(&toy_batch(), &toy_eps(0), Some(&Array2::zeros((5, 2))))
        .is_err());
    assert!(m.decode_batch(&Array2::zeros((2, 4)), None).is_err());
    assert!(matches!(
        m.decode_batch(&Array2::from_elem((1, 3), f64::NAN), None),
        Err(Error::NonFinite(_))
    ));
}

#[test]
fn exploding_loss_is_reported_as_non_finite() {
    let mut m = model(Mode::Cardicat, 0);
    let b = m.params().find("enc.logvar.b").unwrap();
    m.params_mut().value_mut(b).fill(2000.0);
    assert!(matches!(
        m.loss(&toy_batch(), &toy_eps(0), None),
        Err(Error::NonFinite(_))
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn posterior_scale_is_positive(seed in 0u64..1000, codes in proptest::collection::vec(0usize..4, 5)) {
        let m = model(Mode::Cardicat, seed);
        let mut batch = toy_batch::<f64>();
        batch.columns[0] = BatchColumn::Codes(codes);
        let (_, sigma) = m.encode_batch(&batch, None).unwrap();
        prop_assert!(sigma.iter().all(|&s| s > 0.0 && s.is_finite()));
    }
}

#[test]
fn conditional_prepare_appends_mask_to_categoricals_only() {
    let s = conditional_prepare(&toy_schema());
    assert_eq!(s.features[0].levels.last().unwrap(), MASK_LEVEL);
    assert_eq!(s.features[0].cardinality(), 5);
    assert_eq!(s.features[1].cardinality(), 2);
    assert_eq!(s.features[2], toy_schema().features[2]);
}

#[test]
fn conditional_vector_has_one_block_per_categorical() {
    let m = model(Mode::Conditional, 0);
    // c = 4 + mask -> k = ceil(sqrt(5)) = 3
    assert_eq!(m.cond_width(), 3);
    let mut cond = Condition::new();
    let masked = m.conditional_vector(&cond).unwrap();
    let table = m.embedding_table(0).unwrap();
    assert_eq!(masked, table.row(4).to_vec());
    cond.insert("cat".into(), "l2".into());
    assert_eq!(m.conditional_vector(&cond).unwrap(), table.row(2).to_vec());

    for (k, v) in [
        ("bin", "l0"),
        ("num", "1"),
        ("nope", "l0"),
        ("cat", MASK_LEVEL),
    ] {
        let c = Condition::from([(k.to_string(), v.to_string())]);
        assert!(m.conditional_vector(&c).is_err(), "{k}={v}");
    }
    assert!(model(Mode::Cardicat, 0)
        .conditional_vector(&Condition::new())
        .is_err());
}

#[test]
fn conditional_mode_requires_condition_matrix() {
    let m = model(Mode::Conditional, 0);
    assert!(m.loss(&toy_batch(), &toy_eps(0), None).is_err());
    let cond = Array2::zeros((5, 3));
    assert!(m.loss(&toy_batch(), &toy_eps(0), Some(&cond)).is_ok());
}

#[test]
fn conditional_vector_is_detached_from_tables() {
    let mut m = model(Mode::Conditional, 6);
    let cond = Condition::from([("cat".to_string(), "l1".to_string())]);
    let v = m.conditional_vector(&cond).unwrap();
    let c = m.condition_matrix(&v, 5);
    // Finite differences hold the copied vector fixed; agreement means no
    // gradient flows back into the table through it.
    check_gradients(&mut m, &toy_batch(), &toy_eps(7), Some(&c));
}

#[test]
fn zero_condition_ignores_condition_weights() {
    let mut m = model(Mode::Conditional, 2);
    let zero = Array2::zeros((5, m.cond_width()));
    let before = m.loss(&toy_batch(), &toy_eps(1), Some(&zero)).unwrap();
    let w = m.cond_width();
    for (name, rows) in [("enc.in.w", m.input_width()), ("dec.in.w", m.latent_dim())] {
        let id = m.params().find(name).unwrap();
        for r in rows..rows + w {
            m.params_mut().value_mut(id).row_mut(r).fill(9.0);
        }
    }
    let after = m.loss(&toy_batch(), &toy_eps(1), Some(&zero)).unwrap();
    assert_eq!(before, after);
}

#[test]
fn self_condition_rows_come_from_table() {
    let m = model(Mode::Conditional, 3);
    let batch = toy_batch::<f64>();
    let c = m.self_condition(&batch, &mut Rng::new(0)).unwrap();
    let table = m.embedding_table(0).unwrap();
    let codes = [0usize, 3, 1, 3, 2];
    // Single categorical feature: always chosen, so each row is its own level.
    for (i, &code) in codes.iter().enumerate() {
        assert_eq!(c.row(i), table.row(code));
    }
}

fn toy_dataset(n: usize, seed: u64) -> EncodedDataset {
    let mut rng = Rng::new(seed);
    let mut cat = Vec::new();
    let mut bin = Vec::new();
    let mut num = Vec::new();
    for _ in 0..n {
        let c = rng.below(4);
        cat.push(c);
        bin.push(usize::from(c >= 2));
        num.push(c as f64 * 0.4 - 0.6 + 0.05 * rng.normal());
    }
    EncodedDataset {
        n_rows: n,
        columns: vec![Column::Codes(cat), Column::Codes(bin), Column::Numeric(num)],
    }
}

#[test]
fn training_is_deterministic_and_reduces_loss() {
    let data = toy_dataset(200, 1);
    let mut cfg = toy_config(Mode::Cardicat);
    cfg.epochs = 30;
    cfg.batch_size = 50;
    cfg.learning_rate = 0.01;
    let run = || {
        let mut m = Model::<f32>::new(&toy_schema(), cfg.clone(), &mut Rng::new(3)).unwrap();
        let log = m.train(&data, &mut Rng::new(4)).unwrap();
        (m, log)
    };
    let (a, la) = run();
    let (b, lb) = run();
    assert_eq!(la.epochs, lb.epochs);
    for (pa, pb) in a.params().iter().zip(b.params().iter()) {
        assert_eq!(pa.value, pb.value);
    }
    let first = la.epochs.first().unwrap().recon;
    let last = la.epochs.last().unwrap().recon;
    assert!(last < first * 0.8, "recon {first} -> {last}");
}

#[test]
fn every_mode_trains_without_error() {
    let data = toy_dataset(60, 2);
    for mode in [Mode::Cardicat, Mode::BaselineOnehot, Mode::Conditional] {
        let mut m = Model::<f32>::new(&toy_schema(), toy_config(mode), &mut Rng::new(0)).unwrap();
        let log = m.train(&data, &mut Rng::new(1)).unwrap();
        assert_eq!(log.epochs.len(), 3);
        assert!(log.epochs.iter().all(|e| e.total.is_finite()));
    }
}

#[test]
fn checkpoint_roundtrip_preserves_model() {
    for mode in [Mode::Cardicat, Mode::BaselineOnehot, Mode::Conditional] {
        let mut m = Model::<f32>::new(&toy_schema(), toy_config(mode), &mut Rng::new(5)).unwrap();
        m.train(&toy_dataset(40, 3), &mut Rng::new(6)).unwrap();
        let mut buf = Vec::new();
        m.save(&mut buf, 50, &[1, 7, 9]).unwrap();
        let ck = Checkpoint::load(buf.as_slice()).unwrap();
        assert_eq!(ck.meta.test_indices, vec![1, 7, 9]);
        assert_eq!(ck.meta.n_rows, 50);
        assert_eq!(ck.model.initial_variances(), m.initial_variances());
        for (pa, pb) in m.params().iter().zip(ck.model.params().iter()) {
            assert_eq!(pa.name, pb.name);
            assert_eq!(pa.value, pb.value);
        }
        assert!(ck.check_schema(&toy_schema()).is_ok());
        let mut other = toy_schema();
        other.features[0].levels.swap(0, 1);
        assert!(ck.check_schema(&other).is_err());

        let mut bad = buf.clone();
        let last = bad.len() - 1;
        bad.truncate(last);
        assert!(Checkpoint::load(bad.as_slice()).is_err());
    }
}
