use plinfer_elasticity::layout::{generate_training, solve_realization};
use plinfer_elasticity::material::{realization_rng, sample_prior, PriorHyper, SpectralField, CASE_LENGTHS, MEAN_BULK};
use plinfer_elasticity::report::{kde_mode, moment_report, silverman_bandwidth};
use plinfer_elasticity::Mesh;
use rand_distr::{Distribution, Gamma, LogNormal};

#[test]
fn bulk_modulus_moments() {
    // same Gamma parameters as the prior, drawn without the field to keep the test fast
    let shape = 1.0 / (0.5f64 * 0.5);
    let gamma = Gamma::new(shape, MEAN_BULK / shape).unwrap();
    let mut rng = realization_rng(2024, 0);
    let x: Vec<f64> = (0..10_000).map(|_| gamma.sample(&mut rng)).collect();
    let m = x.iter().sum::<f64>() / x.len() as f64;
    let sd = (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64).sqrt();
    assert!((m / MEAN_BULK - 1.0).abs() < 0.02, "mean {m:e}");
    assert!((sd / m / 0.5 - 1.0).abs() < 0.05, "cov {}", sd / m);

    // the full prior sampler draws the same law
    let mesh = Mesh::new([2, 2, 2], [1.0, 1.0, 0.1]).unwrap();
    let h = PriorHyper {
        n_modes: 1,
        ..PriorHyper::default()
    };
    let draws: Vec<f64> = (0..4000)
        .map(|j| sample_prior(&mesh, &h, 9, j).unwrap().mean_bulk())
        .collect();
    let m2 = draws.iter().sum::<f64>() / draws.len() as f64;
    assert!((m2 / MEAN_BULK - 1.0).abs() < 0.035);
}

#[test]
fn field_correlation_at_one_length() {
    let lengths = [0.2, 0.3, 0.1];
    let lag = lengths[0];
    let expected = (-std::f64::consts::PI / 4.0).exp();
    let (mut num, mut den) = (0.0, 0.0);
    for j in 0..100 {
        let field = SpectralField::draw(&mut realization_rng(31, j), lengths, 256);
        for p in 0..40 {
            let x = [0.1 + 0.015 * p as f64, 0.37 * ((p * 7) % 11) as f64 / 11.0, 0.05];
            let a = field.eval(x);
            let b = field.eval([x[0] + lag, x[1], x[2]]);
            num += a * b;
            den += 0.5 * (a * a + b * b);
        }
    }
    let rho = num / den;
    assert!((rho / expected - 1.0).abs() < 0.1, "correlation {rho} vs {expected}");
}

#[test]
fn lognormal_mode_is_recovered() {
    let (mu, sigma) = (-3.0f64, 0.25f64);
    let dist = LogNormal::new(mu, sigma).unwrap();
    let mut rng = realization_rng(5, 0);
    let x: Vec<f64> = (0..10_000).map(|_| dist.sample(&mut rng)).collect();
    let mode = (mu - sigma * sigma).exp();
    let est = kde_mode(&x, silverman_bandwidth(&x));
    assert!((est / mode - 1.0).abs() < 0.1, "{est} vs {mode}");
}

#[test]
fn training_generation_is_deterministic_and_sized() {
    let mesh = Mesh::new([3, 3, 2], [1.0, 1.0, 0.1]).unwrap();
    let h = PriorHyper::default();
    let a = generate_training(&mesh, &h, 4, 12).unwrap();
    let b = generate_training(&mesh, &h, 4, 12).unwrap();
    assert_eq!(a.raw, b.raw);
    assert_eq!(a.raw.shape(), (a.layout.n_x(), 4));
    assert!(a.rho_hat.iter().all(|r| r.is_finite()));
    assert!(generate_training(&mesh, &h, 1, 12).is_err());
}

#[test]
fn effective_matrices_fluctuate() {
    let mesh = Mesh::reduced_default();
    let set = generate_training(&mesh, &PriorHyper::with_lengths(CASE_LENGTHS[0]), 50, 3).unwrap();
    let r = moment_report(&set.effective).unwrap();
    assert!(r.delta_eff > 0.0 && r.delta_ml > 0.0);
    assert!(set.effective.iter().all(|c| c.iter().all(|v| v.is_finite())));
}

/// Longer correlation lengths leave less averaging inside the plate, so the
/// dispersion of the effective matrix should not drop. The moduli scales and
/// `δ_C` are held at their means so only the field geometry varies, and the
/// three cases share random numbers.
#[test]
fn dispersion_grows_with_correlation_length() {
    let mesh = Mesh::reduced_default();
    let mut ml = Vec::new();
    for lengths in CASE_LENGTHS {
        let hyper = PriorHyper {
            cov_bulk: 1e-6,
            cov_shear: 1e-6,
            delta_lo: 0.3,
            delta_hi: 0.3,
            ..PriorHyper::with_lengths(lengths)
        };
        let c: Vec<_> = (0..60)
            .map(|j| {
                let mat = sample_prior(&mesh, &hyper, 404, j).unwrap();
                solve_realization(&mesh, mat).unwrap().effective
            })
            .collect();
        ml.push(moment_report(&c).unwrap().delta_ml);
    }
    eprintln!("delta_ML by case: {ml:?}");
    for w in ml.windows(2) {
        assert!(w[1] >= 0.8 * w[0], "{ml:?}");
    }
}
