mod common;

use fdfm::haar::{dwt2, FreqState, ImageShape};
use fdfm::oracle::{marginal_velocity, PointMixture, PosteriorMeanPredictor};
use fdfm::predictor::CleanPredictor;
use fdfm::sampler::{sample, SampleConfig};
use fdfm::trainer::sweep::reference_samples;
use fdfm::trainer::{energy_distance, fit, fit_to_dir, DatasetKind, DatasetSpec, TrainConfig};
use fdfm::transport::xpred_to_velocity;

fn single_point() -> TrainConfig {
    let mut c = TrainConfig::new(DatasetSpec::new(
        DatasetKind::SinglePoint,
        ImageShape::new(1, 4, 4).unwrap(),
    ));
    c.hidden = vec![32, 32];
    c.batch_size = 64;
    c.optimizer.lr = 1e-3;
    c.steps = 5000;
    c
}

#[test]
fn single_point_loss_goes_to_zero_and_decreases() {
    let (_, metrics) = fit(&single_point()).unwrap();
    let totals: Vec<f64> = metrics.losses.iter().map(|l| l.total).collect();
    let tail = totals[totals.len() - 100..].iter().sum::<f64>() / 100.0;
    assert!(tail < 1e-4, "tail loss {tail:e}");

    let blocks: Vec<f64> = totals[..2000]
        .chunks(100)
        .map(|c| c.iter().sum::<f64>() / 100.0)
        .collect();
    for w in blocks.windows(2) {
        assert!(w[1] <= 1.05 * w[0], "moving average rose from {} to {}", w[0], w[1]);
    }
}

#[test]
fn checkpoints_are_reproducible() {
    let mut c = single_point();
    c.steps = 50;
    c.ema = true;
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    fit_to_dir(&c, a.path()).unwrap();
    fit_to_dir(&c, b.path()).unwrap();
    for name in ["params.fpxt", "ema.fpxt", "checkpoint.json", "metrics.csv"] {
        let x = std::fs::read(a.path().join(name)).unwrap();
        let y = std::fs::read(b.path().join(name)).unwrap();
        assert_eq!(x, y, "{name} differs");
    }
}

#[test]
fn oracle_sampler_matches_held_out_data() {
    let (train, _) = common::frozen_end_to_end();
    let dataset = train.dataset.build().unwrap();
    let sch = train.schedule().unwrap();
    let n = 2000;
    let mut baseline: Vec<f64> = (0..50u64)
        .map(|k| {
            let a = reference_samples(&dataset, n, 5000 + 2 * k);
            let b = reference_samples(&dataset, n, 5001 + 2 * k);
            energy_distance(&a, &b).unwrap()
        })
        .collect();
    baseline.sort_by(f64::total_cmp);
    let threshold = baseline[47];

    let mix = dataset.mixture().unwrap();
    let pred = PosteriorMeanPredictor::new(mix, sch, train.dataset.shape).unwrap();
    let cfg = SampleConfig {
        steps: 50,
        seed: 3,
        ..Default::default()
    };
    let out = sample(&pred, n, &cfg, &sch, None).unwrap();
    let held_out = reference_samples(&dataset, n, 4999);
    let ed = energy_distance(&out, &held_out).unwrap();
    assert!(ed < threshold, "energy distance {ed:e} vs threshold {threshold:e}");
}

#[test]
fn learned_velocity_tracks_the_oracle() {
    let (train, _) = common::frozen_end_to_end();
    let (trainer, _) = fit(&train).unwrap();
    let model = trainer.sampling_model().unwrap();
    let sch = train.schedule().unwrap();
    let shape = train.dataset.shape;
    let mix: PointMixture = trainer.dataset().mixture().unwrap();
    let mut ss = 0.0;
    let mut count = 0;
    for t in [0.2, 0.3, 0.4, 0.5, 0.6] {
        let states: Vec<FreqState> = (0..21)
            .map(|i| {
                let mut v = vec![0.0; shape.len()];
                v[0] = -1.0 + 0.1 * i as f64;
                FreqState::from_vec(shape, &v).unwrap()
            })
            .collect();
        let x_hat = model.predict_clean(&states, t, None).unwrap();
        for (s, xh) in states.iter().zip(&x_hat) {
            let v = xpred_to_velocity(xh, s, t, &sch).unwrap().to_vec();
            let exact = marginal_velocity(&mix, &s.to_vec(), t, &sch).unwrap();
            ss += v.iter().zip(&exact).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            count += 1;
        }
    }
    let rms = (ss / count as f64).sqrt();
    assert!(rms <= 0.05, "rms {rms}");
    // the low band carries the whole mixture
    assert_eq!(dwt2(&trainer.dataset().atoms()[0]).high_norm_sq(), 0.0);
}
