use super::*;
use crate::datamodel::tests::flat_record;
use crate::mechsim::cohort::{generate_cohort, CohortSpec};
use crate::nn::gradcheck_sampled;
use crate::transforms::{kl_normal, ExpertPrior};

fn tiny() -> HybridModel {
    HybridModel::new(HybridConfig::with_hidden(4), 1)
}

fn prior_posterior(prior: &ExpertPrior) -> LatentPosterior {
    LatentPosterior {
        mean: prior.mean.clone(),
        sd: prior.sd.clone(),
    }
}

fn meal_record() -> PpgrRecord {
    let (ds, _) = generate_cohort(&CohortSpec::sized(1, 1), 5).unwrap();
    ds.records[0].clone()
}

#[test]
fn default_model_is_about_forty_thousand_parameters() {
    let m = HybridModel::new(HybridConfig::default(), 0);
    let n = m.param_count();
    assert!((35_000..48_000).contains(&n), "{n}");
    assert!((m.sigma_obs() - 5.0).abs() < 1e-12);
}

#[test]
fn kl_vanishes_at_prior() {
    let prior = default_prior();
    let rec = meal_record();
    let t = elbo_from_posterior(&rec, &prior_posterior(&prior), 5.0, &ElboNoise::zero(1), 0.01, &prior, &SimConfig::default()).unwrap();
    assert!(t.kl.abs() < 1e-9, "{}", t.kl);
    assert!((t.elbo - t.recon).abs() < 1e-9);
}

#[test]
fn single_shifted_dimension_costs_half_a_nat() {
    let prior = ExpertPrior::standard(LATENT_DIM);
    let mut q = prior_posterior(&prior);
    q.mean[3] = 1.0;
    let rec = meal_record();
    let t = elbo_from_posterior(&rec, &q, 5.0, &ElboNoise::zero(1), 0.01, &prior, &SimConfig::default()).unwrap();
    assert!((t.kl - 0.5).abs() < 1e-12, "{}", t.kl);
    assert!((kl_normal(1.0, 1.0, 0.0, 1.0) - 0.5).abs() < 1e-15);
}

#[test]
fn narrow_posterior_matches_mean_decode() {
    let model = tiny();
    let mut rec = meal_record();
    let mut q = model.encode(&rec);
    q.sd.iter_mut().for_each(|s| *s = 1e-6);
    // Observations at the decoded mean, so the bound's limit is the exact likelihood.
    let decoded = decode(&q, &model.config.sim).unwrap();
    for (x, g) in rec.glucose.iter_mut().zip(&decoded.glucose) {
        if x.is_some() {
            *x = Some(*g);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let noisy = ElboNoise::draw(1, None, &mut rng);
    let sampled = elbo_from_posterior(&rec, &q, 5.0, &noisy, 0.01, &model.prior, &model.config.sim).unwrap();
    let ll: f64 = rec
        .glucose
        .iter()
        .zip(&decoded.glucose)
        .filter_map(|(x, g)| x.map(|x| -0.5 * (2.0 * std::f64::consts::PI).ln() - 5f64.ln() - (x - g).powi(2) / 50.0))
        .sum();
    assert!((sampled.recon - ll).abs() < 1e-6, "{} vs {ll}", sampled.recon);
}

#[test]
fn masking_glucose_removes_exact_summands() {
    let model = tiny();
    let rec = meal_record();
    let q = model.encode(&rec);
    let sim = model.config.sim;
    let full = elbo_from_posterior(&rec, &q, 7.0, &ElboNoise::zero(1), 0.01, &model.prior, &sim).unwrap();
    let decoded = decode(&q, &sim).unwrap();
    let mut holed = rec.clone();
    let drop = [3usize, 17, 40];
    let mut removed = 0.0;
    for &t in &drop {
        let x = holed.glucose[t].take().unwrap();
        let g = decoded.glucose[t];
        removed += -0.5 * (2.0 * std::f64::consts::PI).ln() - 7f64.ln() - (x - g).powi(2) / 98.0;
    }
    let part = elbo_from_posterior(&holed, &q, 7.0, &ElboNoise::zero(1), 0.01, &model.prior, &sim).unwrap();
    assert!((full.recon - removed - part.recon).abs() < 1e-9);
    assert_eq!(part.n_obs, full.n_obs - drop.len());
}

#[test]
fn zero_observations_is_degenerate() {
    let model = tiny();
    let mut rec = meal_record();
    rec.glucose.iter_mut().for_each(|g| *g = None);
    assert!(matches!(model.elbo(&rec, 0, 0.01, false), Err(Error::DegenerateRecord(_))));
}

#[test]
fn missing_meals_still_encode_finitely() {
    let model = tiny();
    let mut rec = meal_record();
    rec.meals.iter_mut().for_each(|m| *m = [None; N_MEAL]);
    let q = model.encode(&rec);
    assert!(q.mean.iter().chain(&q.sd).all(|v| v.is_finite()));
    assert!(q.sd.iter().all(|&s| s > 0.0));
}

#[test]
fn encode_is_deterministic_and_glucose_sensitive() {
    let model = tiny();
    let rec = meal_record();
    assert_eq!(model.encode(&rec), model.encode(&rec));
    let mut bumped = rec.clone();
    bumped.glucose[30] = bumped.glucose[30].map(|g| g + 40.0);
    let (a, b) = (model.encode(&rec), model.encode(&bumped));
    assert!(a.mean[..U_DIM].iter().zip(&b.mean[..U_DIM]).any(|(x, y)| x != y));
}

#[test]
fn embeddings_stay_in_range() {
    let model = tiny();
    let mut rec = meal_record();
    let e = model.embed(&rec);
    let a = e.to_array();
    for (v, t) in a[..4].iter().zip(&W_RANGES[..4]) {
        assert!(t.contains(*v));
    }
    assert!((1e-5..=3e-3).contains(&e.si_mi));
    assert!(X0_RANGES[0].contains(e.g0));
    rec.demographics.age += 20.0;
    assert_eq!(model.embed(&rec), model.embed(&rec));
}

#[test]
fn reconstruction_is_finite_and_zero_u_relaxes_to_basal() {
    let model = tiny();
    let rec = meal_record();
    let r = model.reconstruct(&rec).unwrap();
    assert_eq!(r.glucose.len(), SEQ_LEN);
    assert!(r.glucose.iter().all(|g| g.is_finite()));

    let mut q = model.encode(&rec);
    q.mean[LatentLayout::U].iter_mut().for_each(|v| *v = -60.0);
    q.mean[LatentLayout::X0.start] = X0_RANGES[0].unconstrain(250.0).unwrap();
    let d = decode(&q, &model.config.sim).unwrap();
    let g_b = q.constrained_mean()[LatentLayout::W.start + 1];
    let gap: Vec<f64> = d.glucose.iter().map(|g| (g - g_b).abs()).collect();
    assert!(gap[59] < 0.5 * gap[0], "{} -> {}", gap[0], gap[59]);
}

#[test]
fn elbo_gradient_matches_finite_differences() {
    let model = tiny();
    let rec = meal_record();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let noise = ElboNoise::draw(1, Some(0.5), &mut rng);
    let params = model.store.values().to_vec();
    let report = gradcheck_sampled(&params, 1e-4, 50, 12, |tape, vars| {
        let p = Bound::from_vars(vars.to_vec());
        model.batch_loss(tape, &p, &[&rec], &noise, 0.01).unwrap().0
    })
    .unwrap();
    assert!(report.max_rel_err < 1e-3, "{report:?}");
}

#[test]
fn zero_beta_excludes_kl_from_gradient() {
    let model = tiny();
    let rec = meal_record();
    let noise = ElboNoise::zero(1);
    let grads_with = |prior: &ExpertPrior| {
        let mut m = model.clone();
        m.prior = prior.clone();
        let mut tape = Tape::new();
        let p = m.store.bind(&mut tape);
        let (loss, _) = m.batch_loss(&mut tape, &p, &[&rec], &noise, 0.0).unwrap();
        let g = tape.backward(loss).unwrap();
        m.store.collect_grads(&p, &g)
    };
    let a = grads_with(&default_prior());
    let b = grads_with(&ExpertPrior::standard(LATENT_DIM));
    assert_eq!(a, b);
}

#[test]
fn short_training_is_seed_deterministic_and_improves() {
    let (ds, _) = generate_cohort(&CohortSpec::sized(2, 3), 9).unwrap();
    let cfg = TrainConfig {
        epochs: 12,
        batch: 4,
        seed: 4,
        ..TrainConfig::default()
    };
    let run = || {
        let mut m = tiny();
        let out = train(&ds, &mut m, &cfg, |_| {}).unwrap();
        (m.store.values().to_vec(), out.history)
    };
    let (p1, h1) = run();
    let (p2, h2) = run();
    assert_eq!(p1, p2);
    assert_eq!(h1, h2);
    let first: f64 = h1[..3].iter().map(|s| s.elbo).sum();
    let last: f64 = h1[h1.len() - 3..].iter().map(|s| s.elbo).sum();
    assert!(last > first, "{first} -> {last}");
}

#[test]
fn checkpoint_restores_model() {
    let model = tiny();
    let ck = model.to_checkpoint("h", 1, None);
    let back = HybridModel::from_checkpoint(&ck).unwrap();
    let rec = meal_record();
    assert_eq!(back.encode(&rec), model.encode(&rec));
}

#[test]
fn embedding_csv_layout() {
    let rec = flat_record("p1", "p1_m01", 100.0);
    let ds = Dataset::new(vec![rec.clone()]).unwrap();
    let model = tiny();
    let e = model.embed_dataset(&ds);
    let mut buf = Vec::new();
    write_embeddings(&ds, &e, &mut buf, Some("meta")).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[1], "ppgr_id,person_id,tau_m,G_b,S_G,p_2,SI_MI,G0,total_u");
    assert!(lines[2].starts_with("p1_m01,p1,"));
}

#[test]
fn trained_embeddings_separate_groups_better_than_noise() {
    use crate::evalcluster::{evaluate_method, EmbeddingTable};
    use rand::{Rng, SeedableRng};
    let (ds, _) = generate_cohort(&CohortSpec::sized(6, 4), 21).unwrap();
    let labels = ds.person_labels();
    let mut m = HybridModel::new(HybridConfig::with_hidden(8), 2);
    let cfg = TrainConfig {
        epochs: 25,
        batch: 16,
        seed: 2,
        ..TrainConfig::default()
    };
    train(&ds, &mut m, &cfg, |_| {}).unwrap();
    let vectors = m.embed_dataset(&ds).iter().map(|e| e.to_array().to_vec()).collect();
    let table = EmbeddingTable::from_dataset(&ds, vectors, None).unwrap();
    let hybrid = evaluate_method("hybrid", &table, &labels, 2, 0).unwrap().scores.nmi;

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    let random: f64 = (0..5)
        .map(|s| {
            let noise = ds.records.iter().map(|_| (0..7).map(|_| rng.random::<f64>()).collect()).collect();
            let t = EmbeddingTable::from_dataset(&ds, noise, None).unwrap();
            evaluate_method("random", &t, &labels, 2, s).unwrap().scores.nmi
        })
        .sum::<f64>()
        / 5.0;
    assert!(hybrid > random + 0.2, "hybrid {hybrid} vs random {random}");
}
