use loopon::limitlaws::*;
use loopon::quad::integrate;
use loopon::rng::stream;
use rand::Rng;
use rand_distr::{Distribution, Exp1, Gamma};

#[test]
fn psi_at_three_halves_matches_alternate_integral() {
    for x in [0.01, 0.3, 1.0, 4.0, 25.0] {
        let (alt, _) = integrate(|u: f64| {
            // t = e^u in int_0^inf e^{-x/t - t} dt
            let t = u.exp();
            t * (-x / t - t).exp()
        }, -40.0, 5.0, 1e-15, 1e-13)
        .unwrap();
        let v = psi(1.5, 2.0, x).unwrap();
        assert!((v - alt).abs() < 1e-9, "x={x}: {v} vs {alt}");
    }
}

#[test]
fn dilute_limit_is_inverse_gamma() {
    let a = 1.75;
    for q in [0.5, 1.0, 2.0] {
        let lhs = dilute_w_laplace(a, q).unwrap();
        let rhs = inverse_gamma_laplace(a - 0.5, a - 1.5, q).unwrap();
        assert!((lhs - rhs).abs() < 1e-8, "q={q}: {lhs} vs {rhs}");
    }
}

#[test]
fn psi_is_completely_monotone_on_grid() {
    let h = 0.05;
    for (a, t) in [(1.25, 1.5), (1.5, 2.0), (1.75, 2.0)] {
        let v: Vec<f64> = (0..60).map(|i| psi(a, t, i as f64 * h).unwrap()).collect();
        let mut diff = v.clone();
        for order in 1..=3 {
            diff = diff.windows(2).map(|w| w[1] - w[0]).collect();
            let sign = if order % 2 == 1 { -1.0 } else { 1.0 };
            assert!(diff.iter().all(|d| sign * d >= -1e-12), "a={a} order {order}");
        }
    }
}

#[test]
fn inverse_gamma_cdf_matches_density_quadrature() {
    let (a, b) = (1.25, 0.25);
    let lg = loopon::special::ln_gamma(a);
    for w in [0.05, 0.2, 1.0, 5.0] {
        let (num, _) = integrate(|t: f64| {
            let x = t.exp();
            x * (a * f64::ln(b) - (a + 1.0) * t - b / x - lg).exp()
        }, -30.0, f64::ln(w), 1e-15, 1e-13)
        .unwrap();
        assert!((inverse_gamma_cdf(a, b, w) - num).abs() < 1e-12, "w={w}");
    }
}

fn ks_pass_rate<G: Fn(&mut loopon::rng::Stream) -> f64, F: Fn(f64) -> f64 + Copy>(gen: G, cdf: F) -> f64 {
    let n = 10_000;
    let reps = 100;
    let mut pass = 0;
    for r in 0..reps {
        let mut rng = stream(99, r);
        let law = EmpiricalLaw::new((0..n).map(|_| gen(&mut rng)).collect());
        let d = ks_statistic(&law, cdf).unwrap().statistic;
        if d <= 1.63 / (n as f64).sqrt() {
            pass += 1;
        }
    }
    pass as f64 / reps as f64
}

#[test]
fn ks_is_calibrated() {
    assert!(ks_pass_rate(|r| Exp1.sample(r), exp_cdf) >= 0.97);
    assert!(ks_pass_rate(|r| { let e: f64 = Exp1.sample(r); 1.0 / e }, inverse_exp_cdf) >= 0.97);
    let g = Gamma::new(1.25, 4.0).unwrap();
    assert!(ks_pass_rate(|r| 1.0 / g.sample(r), |w| inverse_gamma_cdf(1.25, 0.25, w)) >= 0.97);
}

#[test]
fn weighted_ks_reduces_to_plain_with_equal_weights() {
    let mut rng = stream(5, 0);
    let xs: Vec<f64> = (0..500).map(|_| Exp1.sample(&mut rng)).collect();
    let a = ks_statistic(&EmpiricalLaw::new(xs.clone()), exp_cdf).unwrap();
    let b = ks_statistic(&EmpiricalLaw::weighted(xs, vec![3.0; 500]).unwrap(), exp_cdf).unwrap();
    assert!((a.statistic - b.statistic).abs() < 1e-14);
    assert!((b.effective_n - 500.0).abs() < 1e-9);
}

#[test]
fn weighted_ks_corrects_importance_sampling() {
    // Exp(1) targeted through Exp(1/2) proposals with weights 2 e^{-x/2}
    let mut rng = stream(6, 0);
    let xs: Vec<f64> = (0..20_000).map(|_| { let e: f64 = Exp1.sample(&mut rng); 2.0 * e }).collect();
    let ws: Vec<f64> = xs.iter().map(|x| (-x / 2.0).exp()).collect();
    let r = ks_statistic(&EmpiricalLaw::weighted(xs, ws).unwrap(), exp_cdf).unwrap();
    assert!(r.statistic < 1.63 / r.effective_n.sqrt(), "{r:?}");
}

#[test]
fn laplace_jackknife_covers_truth() {
    let mut rng = stream(7, 0);
    let law = EmpiricalLaw::new((0..5000).map(|_| Exp1.sample(&mut rng)).collect());
    let pts = laplace_compare(&law, &[0.25, 1.0, 4.0], |q| Ok(1.0 / (1.0 + q))).unwrap();
    for p in pts {
        assert!(p.z().abs() < 4.0, "{p:?}");
        assert!(p.stderr > 0.0);
    }
}

#[test]
fn hill_recovers_pareto_index() {
    let mut rng = stream(8, 0);
    let law = EmpiricalLaw::new((0..100_000).map(|_| (1.0 - rng.random::<f64>()).powf(-1.0 / 1.5)).collect());
    let t = tail_exponent(&law, 2000).unwrap();
    assert!(t.hill_ci.0 < 1.5 && 1.5 < t.hill_ci.1, "{t:?}");
    assert!((t.loglog - 1.5).abs() < 0.1, "{t:?}");
}

#[test]
fn too_few_samples_is_an_error() {
    let law = EmpiricalLaw::new(vec![1.0; 10]);
    assert!(matches!(ks_statistic(&law, exp_cdf), Err(loopon::Error::InsufficientData { .. })));
}

#[test]
fn dense_target_is_normalized_and_decreasing() {
    let a = 7.0 / 6.0;
    assert!((dense_w_laplace(a, 0.0).unwrap() - 1.0).abs() < 1e-10);
    assert!(dense_w_laplace(a, 1.0).unwrap() < dense_w_laplace(a, 0.5).unwrap());
}
