use ods_core::models::{
    accuracy, generate_blobs, load_split, save_split, train, AdversarialConfig, BlobSpec,
    MlpClassifier, OptimizerKind, Split, TrainConfig,
};
use ods_core::rng::seeded;
use ods_core::schedule::Schedule;
use ods_core::whitebox::{run_pgd_with_restarts, Norm, WhiteboxAttackConfig};

fn blobs(dim: usize, classes: usize, seed: u64) -> Split {
    generate_blobs(&BlobSpec {
        dim,
        classes,
        samples_per_class: 60,
        latent_dim: None,
        spread: 0.15,
        noise: 0.05,
        latent_noise: 0.0,
        seed,
    })
    .unwrap()
}

fn adam(epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 16,
        optimizer: OptimizerKind::Adam,
        schedule: Schedule::constant(0.01),
        weight_decay: 0.0,
        seed,
        adversarial: None,
    }
}

#[test]
fn linear_probe_separates_blobs() {
    for (dim, classes) in [(16, 3), (32, 5), (64, 8)] {
        let split = blobs(dim, classes, dim as u64);
        let mut m = MlpClassifier::new(&[dim, classes], 1).unwrap();
        train(&mut m, &split.train, &adam(30, 2)).unwrap();
        let acc = accuracy(&m, &split.test).unwrap();
        assert!(
            acc >= 0.95,
            "D={dim} K={classes}: linear probe accuracy {acc}"
        );
    }
}

#[test]
fn training_is_deterministic() {
    let split = blobs(16, 3, 5);
    let run = || {
        let mut m = MlpClassifier::new(&[16, 8, 3], 9).unwrap();
        let r = train(&mut m, &split.train, &adam(5, 4)).unwrap();
        (m.params_flat(), r.loss_history)
    };
    let (a, la) = run();
    let (b, lb) = run();
    assert_eq!(
        a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
    assert_eq!(la, lb);
}

#[test]
fn dataset_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.json");
    let split = blobs(16, 3, 6);
    save_split(&split, None, &path).unwrap();
    assert_eq!(load_split(&path).unwrap(), split);
}

#[test]
fn adversarial_training_reduces_accuracy_drop() {
    let split = blobs(32, 4, 11);
    let eps = 0.15;
    let mut natural = MlpClassifier::new(&[32, 32, 4], 1).unwrap();
    train(&mut natural, &split.train, &adam(20, 2)).unwrap();
    let mut robust = MlpClassifier::new(&[32, 32, 4], 1).unwrap();
    let mut cfg = adam(20, 2);
    cfg.adversarial = Some(AdversarialConfig {
        epsilon: eps,
        step: eps / 4.0,
        steps: 7,
    });
    train(&mut robust, &split.train, &cfg).unwrap();

    let attack = WhiteboxAttackConfig::pgd(Norm::Linf, eps, eps / 4.0, 10, 1);
    let drop = |m: &MlpClassifier| {
        let clean = accuracy(m, &split.test).unwrap();
        let mut survived = 0;
        for i in 0..split.test.len() {
            let (x, y) = (split.test.input(i), split.test.labels[i]);
            if m.predict(&x).unwrap() != y {
                continue;
            }
            let (r, _) = run_pgd_with_restarts(m, &x, y, &attack, &mut seeded(i as u64)).unwrap();
            if !r.success {
                survived += 1;
            }
        }
        clean - survived as f64 / split.test.len() as f64
    };
    let (dn, dr) = (drop(&natural), drop(&robust));
    eprintln!("natural drop {dn}, robust drop {dr}");
    assert!(dr < dn, "robust drop {dr} vs natural drop {dn}");
}
