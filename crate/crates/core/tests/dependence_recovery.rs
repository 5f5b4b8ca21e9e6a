use std::time::Instant;

use dynalloc::dependence::{
    fit_correlation, fit_t_copula, sample_t_copula, simulate_dcc, CorrelationMode, DccParams, TCopulaParams, NU_CAP,
};
use dynalloc::{rng, stats};
use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};

fn corr3(r: f64) -> DMatrix<f64> {
    DMatrix::from_fn(3, 3, |i, j| if i == j { 1.0 } else { r })
}

#[test]
fn dcc_recovers_simulated_dynamics() {
    let truth = DccParams {
        a: 0.03,
        b: 0.95,
        rbar: DMatrix::from_row_slice(3, 3, &[1.0, 0.4, -0.2, 0.4, 1.0, 0.1, -0.2, 0.1, 1.0]),
    };
    let z = simulate_dcc(&truth, 10_000, 2024).unwrap();
    let start = Instant::now();
    let fit = fit_correlation(&z, CorrelationMode::Dcc).unwrap();
    println!("dcc fit a={:.4} b={:.4} in {:?}", fit.a, fit.b, start.elapsed());
    assert!((fit.a - 0.03).abs() < 0.05 && (fit.b - 0.95).abs() < 0.05);
}

#[test]
fn dcc_on_constant_correlation_data_collapses() {
    let truth = DccParams::constant(corr3(0.3));
    let z = simulate_dcc(&truth, 3000, 7).unwrap();
    let fit = fit_correlation(&z, CorrelationMode::Dcc).unwrap();
    assert!(fit.a + fit.b < 0.05, "a={} b={}", fit.a, fit.b);
    let sample = stats::correlation_matrix(&z);
    assert!((&fit.rbar - &sample).amax() < 0.02);
    let ccc = fit_correlation(&z, CorrelationMode::Ccc).unwrap();
    assert_eq!((ccc.a, ccc.b), (0.0, 0.0));
}

#[test]
fn t_copula_recovers_nu_and_rho() {
    let truth = TCopulaParams {
        corr: DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]),
        nu: 4.0,
    };
    let u = sample_t_copula(&truth, 20_000, 99).unwrap();
    let start = Instant::now();
    let fit = fit_t_copula(&u).unwrap();
    println!("copula nu={:.3} rho={:.4} in {:?}", fit.nu, fit.corr[(0, 1)], start.elapsed());
    assert!((3.0..=5.0).contains(&fit.nu));
    assert!((fit.corr[(0, 1)] - 0.5).abs() < 0.05);
}

#[test]
fn gaussian_copula_hits_nu_cap() {
    let l = nalgebra::Cholesky::new(corr3(0.4)).unwrap().l();
    let mut rng = rng::stream(3, 0);
    let u = DMatrix::from_fn(20_000, 3, |_, _| 0.0);
    let mut u = u;
    for i in 0..20_000 {
        let g: Vec<f64> = (0..3).map(|_| StandardNormal.sample(&mut rng)).collect();
        for a in 0..3 {
            let x: f64 = (0..=a).map(|k| l[(a, k)] * g[k]).sum();
            u[(i, a)] = stats::norm_cdf(x);
        }
    }
    let fit = fit_t_copula(&u).unwrap();
    assert_eq!(fit.nu, NU_CAP);
}
