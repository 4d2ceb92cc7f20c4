use nalgebra::{DMatrix, DVector};

use scatterlab::diffusion::{simulate_ensemble, EulerConfig, SdeModel};
use scatterlab::operators::{drift_vector, second_order_matrix, ScatterMatrices};
use scatterlab::rng::stream_rng;
use scatterlab::scattering::HiddenLaw;
use scatterlab::stats::{ks_test, sample_mb_full, ReferenceLaw};

fn mats(sigma2: f64) -> ScatterMatrices {
    let lambda = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 0.25, 0.0]));
    ScatterMatrices::new(lambda, &HiddenLaw::gaussian(1, sigma2).unwrap()).unwrap()
}

#[test]
fn drift_is_the_divergence_form_for_the_stationary_density() {
    // For a generator symmetric in rho: Z_i = sum_j d_j S_ij + (S grad log rho)_i.
    let m = mats(0.6);
    let h = 1e-5;
    for v in [[0.3, -0.7], [-1.2, -0.2], [0.05, -2.0], [2.0, -1.0]] {
        let s = |x: &[f64]| second_order_matrix(&m, x).unwrap();
        let log_rho = |x: &[f64]| m.stationary_density(x).ln();
        let mut div = DVector::zeros(2);
        let mut grad = DVector::zeros(2);
        for j in 0..2 {
            let mut p = v.to_vec();
            let mut q = v.to_vec();
            p[j] += h;
            q[j] -= h;
            let ds = (s(&p) - s(&q)) / (2.0 * h);
            for i in 0..2 {
                div[i] += ds[(i, j)];
            }
            grad[j] = (log_rho(&p) - log_rho(&q)) / (2.0 * h);
        }
        let want = div + s(&v) * grad;
        let got = drift_vector(&m, &v).unwrap();
        assert!((got - &want).amax() < 1e-6 * want.amax().max(1.0), "{v:?}");
    }
}

#[test]
fn maxwell_boltzmann_law_is_preserved() {
    let sigma2 = 0.6;
    let model = SdeModel::mb(mats(sigma2)).unwrap();
    let n_paths = 3000u64;
    let mut rng = stream_rng(71, 0);
    let starts: Vec<Vec<f64>> = (0..n_paths).map(|_| sample_mb_full(2, sigma2, &mut rng)).collect();
    let mut speeds = Vec::new();
    // One ensemble per start point: each path keeps its own stream.
    for (i, start) in starts.iter().enumerate() {
        let cfg = EulerConfig::new(2e-3, 500, start.clone(), 1000 + i as u64);
        let (finals, _) = simulate_ensemble(&model, &cfg, 1).unwrap();
        let v = &finals[0];
        speeds.push((v[0] * v[0] + v[1] * v[1]).sqrt());
    }
    let law = ReferenceLaw::MbSpeed { m: 2, sigma2 };
    let rep = ks_test(&speeds, |x| law.cdf(x)).unwrap();
    assert!(rep.p_value > 0.001, "{rep:?}");
}

#[test]
fn legendre_diffusion_keeps_the_disc_uniform() {
    let model = SdeModel::legendre(vec![1.0, 0.5]).unwrap();
    let mut radii = Vec::new();
    let mut rng = stream_rng(72, 0);
    for i in 0..2000u64 {
        let start = ReferenceLaw::UniformBall { n: 2 }.sample(&mut rng);
        let cfg = EulerConfig::new(1e-4, 2000, start, 2000 + i);
        let (finals, _) = simulate_ensemble(&model, &cfg, 1).unwrap();
        radii.push((finals[0][0].powi(2) + finals[0][1].powi(2)).sqrt());
    }
    let rep = ks_test(&radii, |r| r.clamp(0.0, 1.0).powi(2)).unwrap();
    assert!(rep.p_value > 0.001, "{rep:?}");
}
