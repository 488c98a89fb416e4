use ifid_core::diffusion::{
    denoise_from, forward_sample, gfid_t, log_sum_exp, prior_samples, reverse_sample, sample_chains, softmax,
    DiffusionSchedule, EmpiricalScore, SamplerConfig, Score,
};
use ifid_core::frechet::fid;
use ifid_core::toygmm::{make_grid_gmm, sample_gmm, GmmSpec};
use ifid_core::{Result, TensorSet};

const RF: DiffusionSchedule = DiffusionSchedule::RectifiedFlow;

fn grid16() -> TensorSet {
    let rows: Vec<Vec<f64>> = (0..16).map(|i| vec![(i % 4) as f64 - 1.5, (i / 4) as f64 - 1.5]).collect();
    TensorSet::from_rows(&rows).unwrap()
}

fn near_train_fraction(out: &TensorSet, train: &TensorSet, tol: f64) -> usize {
    (0..out.rows())
        .filter(|&i| {
            (0..train.rows()).any(|k| {
                let d2: f64 = out.row(i).iter().zip(train.row(k)).map(|(a, b)| (f64::from(*a) - f64::from(*b)).powi(2)).sum();
                d2.sqrt() <= tol
            })
        })
        .count()
}

/// Exact score of an isotropic GMM pushed through the forward process.
struct GmmScore {
    spec: GmmSpec,
    sched: DiffusionSchedule,
}

impl Score for GmmScore {
    fn dim(&self) -> usize {
        self.spec.dim()
    }

    fn score(&self, z: &[f64], t: f64) -> Result<Vec<f64>> {
        let (a, s) = (self.sched.alpha(t), self.sched.sigma(t));
        let vars: Vec<f64> = self.spec.stds.iter().map(|sd| s * s + a * a * sd * sd).collect();
        let d = z.len() as f64;
        let logits: Vec<f64> = (0..self.spec.modes())
            .map(|m| {
                let d2: f64 = z.iter().zip(&self.spec.centers[m]).map(|(zi, c)| (zi - a * c).powi(2)).sum();
                self.spec.weights[m].ln() - 0.5 * d * vars[m].ln() - d2 / (2.0 * vars[m])
            })
            .collect();
        let w = softmax(&logits);
        let mut out = vec![0.0; z.len()];
        for m in 0..self.spec.modes() {
            for (o, (zi, c)) in out.iter_mut().zip(z.iter().zip(&self.spec.centers[m])) {
                *o += w[m] * (a * c - zi) / vars[m];
            }
        }
        Ok(out)
    }
}

#[test]
fn single_point_score_is_analytic() {
    let x = [2.0, -1.0, 0.5];
    let train = TensorSet::from_rows(&[x.to_vec()]).unwrap();
    for sched in [RF, DiffusionSchedule::VpCosine] {
        let score = EmpiricalScore::new(&train, 0.0, sched).unwrap();
        for t in [0.1, 0.5, 0.9] {
            let z = [0.3, 0.7, -1.2];
            let got = score.score(&z, t).unwrap();
            let (a, s) = (sched.alpha(t), sched.sigma(t));
            for j in 0..3 {
                let want = -(z[j] - a * x[j]) / (s * s);
                assert!((got[j] - want).abs() <= 1e-12 * want.abs().max(1.0), "t={t}");
            }
        }
    }
}

#[test]
fn score_matches_naive_softmax_oracle() {
    let train = grid16();
    let score = EmpiricalScore::new(&train, 0.0, RF).unwrap();
    let (t, z) = (0.5, [0.4, -0.9]);
    let (a, s) = (0.5f64, 0.5f64);
    // unshifted exponentials are safe at this scale
    let e: Vec<f64> = (0..16)
        .map(|k| {
            let r = train.row_f64(k);
            (-((z[0] - a * r[0]).powi(2) + (z[1] - a * r[1]).powi(2)) / (2.0 * s * s)).exp()
        })
        .collect();
    let total: f64 = e.iter().sum();
    let w = score.weights(&z, t).unwrap();
    for k in 0..16 {
        assert!((w[k] - e[k] / total).abs() < 1e-10);
    }
    let got = score.score(&z, t).unwrap();
    for j in 0..2 {
        let pull: f64 = (0..16).map(|k| e[k] / total * train.row_f64(k)[j]).sum();
        let want = (a * pull - z[j]) / (s * s);
        assert!((got[j] - want).abs() < 1e-10);
    }
}

#[test]
fn weights_sum_to_one_at_extreme_logits() {
    let train = grid16();
    let score = EmpiricalScore::new(&train, 0.0, RF).unwrap();
    for (z, t) in [([1e3, -1e3], 0.01), ([0.0, 0.0], 0.999), ([5.0, 5.0], 0.2)] {
        let w = score.weights(&z, t).unwrap();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(w.iter().all(|v| v.is_finite() && *v >= 0.0));
    }
    assert!((log_sum_exp(&[1000.0, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-12);
}

#[test]
fn forward_at_one_forgets_the_input() {
    let z = [10.0, 10.0];
    let n = 100_000;
    let mut mean = [0.0; 2];
    for row in 0..n {
        let v = forward_sample(&z, 1.0, RF, 7, row);
        mean[0] += v[0];
        mean[1] += v[1];
    }
    for m in mean {
        assert!((m / n as f64).abs() < 0.02);
    }
    assert_eq!(forward_sample(&z, 0.0, RF, 7, 0), z.to_vec());
}

#[test]
fn empirical_score_memorizes() {
    let train = grid16();
    let score = EmpiricalScore::new(&train, 0.0, RF).unwrap();
    let starts = prior_samples(1000, 2, 11).unwrap();
    let out = sample_chains(&starts, &SamplerConfig::default(), &score, RF).unwrap();
    let hits = near_train_fraction(&out, &train, 0.05);
    assert!(hits >= 950, "{hits}/1000 memorized");
}

#[test]
fn memorization_grows_with_steps() {
    let train = grid16();
    let score = EmpiricalScore::new(&train, 0.0, RF).unwrap();
    let starts = prior_samples(1000, 2, 11).unwrap();
    let count = |steps| {
        let out = sample_chains(&starts, &SamplerConfig { steps, ..Default::default() }, &score, RF).unwrap();
        near_train_fraction(&out, &train, 0.05)
    };
    let coarse: Vec<usize> = [4, 8, 16].into_iter().map(count).collect();
    assert!(coarse[0] < coarse[1] && coarse[1] < coarse[2], "{coarse:?}");
    assert!(count(100) <= count(400));
}

#[test]
fn single_training_point_collapses() {
    let train = TensorSet::from_rows(&[vec![2.0, -1.0]]).unwrap();
    let score = EmpiricalScore::new(&train, 0.0, RF).unwrap();
    let starts = prior_samples(200, 2, 3).unwrap();
    let out = sample_chains(&starts, &SamplerConfig::default(), &score, RF).unwrap();
    for i in 0..out.rows() {
        let r = out.row_f64(i);
        assert!((r[0] - 2.0).abs() < 1e-3 && (r[1] + 1.0).abs() < 1e-3);
    }
}

#[test]
fn gfid_at_zero_is_reconstruction() {
    let spec = make_grid_gmm(3, 1.0, 0.1).unwrap();
    let src = sample_gmm(&spec, 300, 1).unwrap();
    let score = EmpiricalScore::new(&src, 0.0, RF).unwrap();
    let out = denoise_from(&src, 0.0, &score, &SamplerConfig::default(), RF).unwrap();
    assert!(out.bit_eq(&src));
    let g = gfid_t(&src, 0.0, &score, &SamplerConfig::default(), RF, &src, |t| Ok(t.clone())).unwrap();
    assert!(g.abs() < 1e-9);
}

#[test]
fn exact_score_reaches_sampling_floor() {
    let spec = make_grid_gmm(5, 1.0, 0.25).unwrap();
    let reference = sample_gmm(&spec, 500, 3).unwrap();
    let score = GmmScore { spec: spec.clone(), sched: RF };
    let gfid: f64 = (0..5)
        .map(|seed| {
            let cfg = SamplerConfig { seed, ..Default::default() };
            gfid_t(&reference, 1.0, &score, &cfg, RF, &reference, |t| Ok(t.clone())).unwrap()
        })
        .sum::<f64>()
        / 5.0;
    let floor: f64 = (0..20).map(|r| fid(&reference, &sample_gmm(&spec, 500, 100 + r).unwrap()).unwrap()).sum::<f64>() / 20.0;
    assert!(gfid <= 2.0 * floor, "gfid {gfid}, floor {floor}");
}

#[test]
fn smoothed_sweep_is_finite() {
    let spec = make_grid_gmm(3, 1.0, 0.1).unwrap();
    let src = sample_gmm(&spec, 200, 4).unwrap();
    let score = EmpiricalScore::new(&src, 0.3, RF).unwrap();
    let cfg = SamplerConfig { steps: 50, ..Default::default() };
    for t in [0.0, 0.2, 0.5, 1.0] {
        let g = gfid_t(&src, t, &score, &cfg, RF, &src, |t| Ok(t.clone())).unwrap();
        assert!(g.is_finite() && g >= 0.0, "t={t}: {g}");
    }
}

#[test]
fn chains_identical_across_thread_counts() {
    let train = grid16();
    let score = EmpiricalScore::new(&train, 0.1, RF).unwrap();
    let starts = prior_samples(200, 2, 5).unwrap();
    let cfg = SamplerConfig { steps: 30, stochastic: true, eta: 0.5, seed: 9, ..Default::default() };
    let run = |n| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .unwrap()
            .install(|| sample_chains(&starts, &cfg, &score, RF).unwrap())
    };
    let base = run(1);
    assert!(base.bit_eq(&run(2)) && base.bit_eq(&run(8)));
}

#[test]
fn deterministic_eta_one_matches_ddim() {
    let train = grid16();
    let score = EmpiricalScore::new(&train, 0.2, RF).unwrap();
    let z = [0.3, -0.4];
    let det = reverse_sample(&z, &SamplerConfig { steps: 20, ..Default::default() }, &score, RF, 0).unwrap();
    let sto = SamplerConfig { steps: 20, stochastic: true, eta: 1.0, ..Default::default() };
    let got = reverse_sample(&z, &sto, &score, RF, 0).unwrap();
    for (a, b) in det.iter().zip(&got) {
        assert!((a - b).abs() < 1e-12);
    }
}
