//! URF trained on synthetic action logs against the latent Bayes predictor.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use cpf_core::synthlog::{gen_action_log, gen_world, Context, WorldConfig};
use cpf_core::urf::{action_samples, auc, train_urf, UrfHyper};

#[test]
fn fm_approaches_bayes_auc_and_permutation_is_null() {
    let world = gen_world(&WorldConfig { n_users: 5000, ..WorldConfig::default() }, 21).unwrap();
    let train_log = gen_action_log(&world, 150_000, 1).unwrap();
    let test_log = gen_action_log(&world, 50_000, 2).unwrap();
    let train = action_samples::<f64>(&train_log, &world, false).unwrap();
    let test = action_samples::<f64>(&test_log, &world, false).unwrap();
    let hyper = UrfHyper { lr: 0.01, epochs: 6, ..UrfHyper::default() };
    let (model, trace) = train_urf(&train, &hyper).unwrap();
    assert!(trace.epoch_loss.last().unwrap() <= trace.epoch_loss.first().unwrap());

    let labels: Vec<bool> = test.iter().map(|s| s.label).collect();
    let scores: Vec<f64> = test
        .iter()
        .map(|s| model.predict_raw(&s.fields, &s.dense).unwrap())
        .collect();
    let bayes: Vec<f64> = test_log
        .iter()
        .map(|a| {
            world
                .true_pctr(&Context {
                    user_id: a.user_id,
                    advertiser_id: a.advertiser_id,
                    hour: a.hour,
                    adzone_id: a.adzone_id,
                })
                .unwrap()
        })
        .collect();
    let model_auc = auc(&scores, &labels).unwrap();
    let bayes_auc = auc(&bayes, &labels).unwrap();
    eprintln!("model auc {model_auc:.4}, bayes auc {bayes_auc:.4}");
    assert!((model_auc - bayes_auc).abs() < 0.05);

    // labels permuted against features: held-out AUC must be chance level
    let mut labels_perm: Vec<bool> = train.iter().map(|s| s.label).collect();
    labels_perm.shuffle(&mut ChaCha8Rng::seed_from_u64(99));
    let mut shuffled = train.clone();
    for (s, l) in shuffled.iter_mut().zip(labels_perm) {
        s.label = l;
    }
    let (null_model, _) = train_urf(&shuffled, &hyper).unwrap();
    let null_scores: Vec<f64> = test
        .iter()
        .map(|s| null_model.predict_raw(&s.fields, &s.dense).unwrap())
        .collect();
    let null_auc = auc(&null_scores, &labels).unwrap();
    eprintln!("permutation auc {null_auc:.4}");
    assert!((0.45..=0.55).contains(&null_auc));
}
