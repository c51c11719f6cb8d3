use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use qoc::asymptotics::{sandwich_variance, Allocation, AnalysisModel, AsymptoticTriple, DesignMap};
use qoc::designs::{q_bar_run, q_multistage_stop_prob, q_two_arm_power, BarProtocol, StageSizes, TwoArmProtocol};
use qoc::mc::mc_two_arm_power;
use qoc::mvn::{superiority_probabilities, MvnLaw};
use qoc::qlik::{posterior_update, CenterLaw, GaussianPrior, QLikelihood, QPosterior};
use qoc::rng::Streams;
use rand_distr::{Binomial, Distribution};

use super::common::{logistic_mle, logistic_two_arm, Grouped};

fn spd(d: usize) -> impl Strategy<Value = DMatrix<f64>> {
    (prop::collection::vec(-1.0f64..1.0, d * d), 0.1f64..2.0).prop_map(move |(v, ridge)| {
        let a = DMatrix::from_vec(d, d, v);
        &a * a.transpose() + DMatrix::identity(d, d) * ridge
    })
}

fn stage(d: usize) -> impl Strategy<Value = QLikelihood> {
    (prop::collection::vec(-3.0f64..3.0, d), spd(d))
        .prop_map(move |(c, v)| QLikelihood::new(DVector::from_vec(c), v).unwrap())
}

/// No regression files: the suites also run from the acceptance target.
fn config(cases: u32) -> ProptestConfig {
    ProptestConfig {
        failure_persistence: None,
        ..ProptestConfig::with_cases(cases)
    }
}

fn close(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) -> bool {
    (a - b).amax() <= tol * a.amax().max(1.0)
}

pub fn combine_adds_precision() {
    proptest!(config(64), |(stages in prop::collection::vec(stage(3), 1..6))| {
        let out = QLikelihood::combine(&stages).unwrap();
        let sum = stages.iter().fold(DMatrix::zeros(3, 3), |a, s| a + s.curvature());
        prop_assert_eq!(out.curvature(), &sum);
    });
}

pub fn combine_is_associative_and_order_free() {
    proptest!(config(64), |(a in stage(2), b in stage(2), c in stage(2))| {
        let flat = QLikelihood::combine(&[a.clone(), b.clone(), c.clone()]).unwrap();
        let nested = QLikelihood::combine(&[QLikelihood::combine(&[a.clone(), b.clone()]).unwrap(), c.clone()]).unwrap();
        let swapped = QLikelihood::combine(&[c, a, b]).unwrap();
        let fc = flat.center().unwrap();
        prop_assert!((nested.center().unwrap() - &fc).amax() <= 1e-12 * fc.amax().max(1.0));
        prop_assert!((swapped.center().unwrap() - &fc).amax() <= 1e-12 * fc.amax().max(1.0));
        prop_assert!(close(nested.curvature(), flat.curvature(), 1e-12));
    });
}

pub fn flat_prior_is_the_identity() {
    proptest!(config(64), |(s in stage(4))| {
        let post = posterior_update(&s, &GaussianPrior::flat(4)).unwrap();
        let c = s.center().unwrap();
        prop_assert!((post.center() - &c).amax() <= 1e-10 * c.amax().max(1.0));
        prop_assert!(close(post.curvature(), s.curvature(), 1e-15));
    });
}

pub fn sandwich_reduces_to_inverse() {
    proptest!(config(64), |(j in spd(4))| {
        let v = sandwich_variance(&j, &j).unwrap();
        let inv = j.clone().try_inverse().unwrap();
        prop_assert!(close(&v, &inv, 1e-9));
    });
}

pub fn tail_decreases_in_threshold() {
    proptest!(config(64), |(c in -2.0f64..2.0, v in 0.5f64..500.0, t1 in -3.0f64..3.0, dt in 0.0f64..2.0)| {
        let post = QPosterior::new(DVector::from_element(1, c), DMatrix::from_element(1, 1, v)).unwrap();
        let a = DVector::from_element(1, 1.0);
        let p1 = post.tail_probability(&a, 0.0, t1).unwrap();
        let p2 = post.tail_probability(&a, 0.0, t1 + dt).unwrap();
        prop_assert!(p2 <= p1 && (0.0..=1.0).contains(&p1));
    });
}

pub fn superiority_is_a_distribution() {
    proptest!(config(32), |(
        mean in prop::collection::vec(-1.0f64..1.0, 4),
        cov in spd(4),
        shift in -5.0f64..5.0)| {
        let law = MvnLaw::new(DVector::from_vec(mean.clone()), cov.clone()).unwrap();
        let p = superiority_probabilities(&law).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 2e-3);
        prop_assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));

        let moved = MvnLaw::new(DVector::from_vec(mean.iter().map(|m| m + shift).collect()), cov.clone()).unwrap();
        let q = superiority_probabilities(&moved).unwrap();
        for k in 0..4 {
            prop_assert!((p[k] - q[k]).abs() <= 1e-3);
        }

        // Reverse the component order.
        let perm = [3usize, 2, 1, 0];
        let pm = DVector::from_fn(4, |i, _| mean[perm[i]]);
        let pc = DMatrix::from_fn(4, 4, |i, j| cov[(perm[i], perm[j])]);
        let r = superiority_probabilities(&MvnLaw::new(pm, pc).unwrap()).unwrap();
        for k in 0..4 {
            prop_assert!((r[k] - p[perm[k]]).abs() <= 1e-3);
        }
    });
}

pub fn exchangeable_components_are_uniform() {
    proptest!(config(32), |(k in 2usize..7, var in 0.1f64..3.0, rho in 0.0f64..0.8, m in -2.0f64..2.0)| {
        let cov = DMatrix::from_fn(k, k, |i, j| if i == j { var } else { rho * var });
        let p = superiority_probabilities(&MvnLaw::new(DVector::from_element(k, m), cov).unwrap()).unwrap();
        for v in p {
            prop_assert!((v - 1.0 / k as f64).abs() <= 5e-4, "{v}");
        }
    });
}

pub fn results_do_not_depend_on_thread_count() {
    proptest!(config(8), |(seed in any::<u64>())| {
        let t = TwoArmProtocol::single_stage(40, 40, 0.9);
        let ms = TwoArmProtocol::multistage(vec![StageSizes { n0: 20, n1: 20 }; 3], vec![0.2, 0.4], 0.9);
        let bar = BarProtocol::new(40, 10, DesignMap::ArmInteractions { covariates: 1, arms: 3 });
        let scenario = qoc::asymptotics::Scenario {
            profiles: super::common::binary_profiles(&[0.4]),
            outcome: qoc::asymptotics::OutcomeLaw::Logistic {
                coefficients: vec![-0.2, 0.3, 0.0, 0.4, 0.1, -0.2],
                design: DesignMap::ArmInteractions { covariates: 1, arms: 3 },
            },
        };
        let s = Streams::new(seed);
        let work = || {
            let a = q_two_arm_power(&t, [0.4, 0.55], 500, &s).unwrap()[0].estimate;
            let b: Vec<f64> = q_multistage_stop_prob(&ms, [0.4, 0.5], 500, &s).unwrap().iter().map(|e| e.estimate).collect();
            let c: Vec<f64> = q_bar_run(&bar, &scenario, 20, &s).unwrap().flatten().iter().map(|e| e.estimate).collect();
            let d = {
                let mut p = t.clone();
                p.posterior_draws = 200;
                mc_two_arm_power(&p, [0.4, 0.55], 30, &s).unwrap()[0].estimate
            };
            (a.to_bits(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), c.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), d.to_bits())
        };
        let pool = |n| rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap();
        let one = pool(1).install(work);
        prop_assert_eq!(&one, &pool(2).install(work));
        prop_assert_eq!(&one, &pool(5).install(work));
    });
}

pub fn power_increases_with_the_treatment_rate() {
    let t = TwoArmProtocol::single_stage(50, 50, 0.9);
    let mut last: Option<qoc::OcEstimate> = None;
    for w1 in [0.40, 0.45, 0.50, 0.55, 0.61] {
        let e = q_two_arm_power(&t, [0.4, w1], 20_000, &Streams::new(1)).unwrap().remove(0);
        if let Some(prev) = &last {
            assert!(e.estimate >= prev.estimate - 2.0 * e.se.hypot(prev.se), "{w1}");
        }
        last = Some(e);
    }
}

pub fn stopping_increases_with_the_futility_threshold() {
    for rates in [[0.4, 0.4], [0.4, 0.55]] {
        let mut last: Option<qoc::OcEstimate> = None;
        for lambda in [0.0, 0.1, 0.2, 0.3, 0.5, 0.7, 1.0] {
            let p = TwoArmProtocol::multistage(vec![StageSizes { n0: 50, n1: 50 }; 2], vec![lambda], 0.9);
            let est = q_multistage_stop_prob(&p, rates, 20_000, &Streams::new(2)).unwrap();
            let e = est.into_iter().find(|e| e.name == "stop_prob").unwrap();
            if let Some(prev) = &last {
                assert!(e.estimate >= prev.estimate - 2.0 * e.se.hypot(prev.se), "λ={lambda}");
            }
            last = Some(e);
        }
    }
}

/// Two-sample Kolmogorov-Smirnov statistic.
fn ks(mut a: Vec<f64>, mut b: Vec<f64>) -> f64 {
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        if a[i] <= b[j] {
            i += 1;
        } else {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    d
}

pub fn sampled_centers_match_simulated_mles() {
    // Misspecified logistic fit: x3 is dropped from the analysis.
    let scenario = logistic_two_arm(&[0.5, 0.4, 0.5], &[-1.0, 0.5, -0.5, 1.5, 0.9]);
    let model = AnalysisModel::logistic(DesignMap::MainEffects { covariates: 2, arms: 2 }, vec![0, 1]);
    let rho = [1.0 / 3.0, 2.0 / 3.0];
    let alloc = Allocation::fixed(&rho, scenario.profiles.len());
    let n = 1000;
    let triple = AsymptoticTriple::compute(&scenario, &model, &alloc).unwrap();
    let law = CenterLaw::from_triple(&triple, n as f64).unwrap();

    let reps = 2000;
    let mut rng = Streams::new(3).rng(0, 0);
    let mut centers = vec![Vec::new(); 4];
    let mut mles = vec![Vec::new(); 4];
    for _ in 0..reps {
        let c = law.sample(&mut rng);
        for k in 0..4 {
            centers[k].push(c[k]);
        }
        let mut g = Grouped {
            rows: Vec::new(),
            ones: Vec::new(),
            zeros: Vec::new(),
        };
        let mut left = n as u64;
        let mut mass = 1.0;
        let cells: Vec<(usize, usize, f64)> = (0..scenario.profiles.len())
            .flat_map(|x| (0..2).map(move |k| (x, k)))
            .map(|(x, k)| (x, k, scenario.profiles[x].prob * rho[k]))
            .collect();
        for (i, &(x, k, w)) in cells.iter().enumerate() {
            let count = if i + 1 == cells.len() {
                left
            } else {
                Binomial::new(left, (w / mass).clamp(0.0, 1.0)).unwrap().sample(&mut rng)
            };
            left -= count;
            mass -= w;
            let ones = Binomial::new(count, scenario.response_prob(x, k)).unwrap().sample(&mut rng);
            g.rows.push(model.row(&scenario.profiles[x].covariates, k).as_slice().to_vec());
            g.ones.push(ones as f64);
            g.zeros.push((count - ones) as f64);
        }
        let mle = logistic_mle(&g);
        for k in 0..4 {
            mles[k].push(mle[k]);
        }
    }
    // Critical value of the two-sample test at level 0.001.
    let crit = 1.95 * (2.0 / reps as f64).sqrt();
    for k in 0..4 {
        let d = ks(centers[k].clone(), mles[k].clone());
        assert!(d < crit, "component {k}: D = {d}");
    }
}

pub fn observed_information_ratio_concentrates() {
    let rates = [0.4, 0.61];
    let mut spreads = Vec::new();
    for n in [50usize, 200, 800] {
        let mut rng = Streams::new(4).derive_index(n as u64).rng(0, 0);
        let per_arm = n / 2;
        let ratios: Vec<f64> = (0..4000)
            .filter_map(|_| {
                let mut r = 0.0;
                for &w in &rates {
                    let y = Binomial::new(per_arm as u64, w).unwrap().sample(&mut rng) as f64;
                    let p = y / per_arm as f64;
                    if p <= 0.0 || p >= 1.0 {
                        return None;
                    }
                    // Observed over expected information of the arm rate.
                    r += (w * (1.0 - w)) / (p * (1.0 - p)) / 2.0;
                }
                Some(r)
            })
            .collect();
        let m = ratios.iter().sum::<f64>() / ratios.len() as f64;
        let sd = (ratios.iter().map(|r| (r - m).powi(2)).sum::<f64>() / ratios.len() as f64).sqrt();
        spreads.push((n, m, sd));
    }
    for w in spreads.windows(2) {
        assert!(w[1].2 < w[0].2 * 0.7, "{spreads:?}");
    }
    let (_, m, sd) = spreads[2];
    assert!((m - 1.0).abs() < 0.01 && sd < 0.05, "{spreads:?}");
}

/// Every suite, by name.
#[allow(dead_code)]
pub const SUITES: &[(&str, fn())] = &[
    ("combine_adds_precision", combine_adds_precision),
    ("combine_is_associative_and_order_free", combine_is_associative_and_order_free),
    ("flat_prior_is_the_identity", flat_prior_is_the_identity),
    ("sandwich_reduces_to_inverse", sandwich_reduces_to_inverse),
    ("tail_decreases_in_threshold", tail_decreases_in_threshold),
    ("superiority_is_a_distribution", superiority_is_a_distribution),
    ("exchangeable_components_are_uniform", exchangeable_components_are_uniform),
    ("results_do_not_depend_on_thread_count", results_do_not_depend_on_thread_count),
    ("power_increases_with_the_treatment_rate", power_increases_with_the_treatment_rate),
    ("stopping_increases_with_the_futility_threshold", stopping_increases_with_the_futility_threshold),
    ("sampled_centers_match_simulated_mles", sampled_centers_match_simulated_mles),
    ("observed_information_ratio_concentrates", observed_information_ratio_concentrates),
];
