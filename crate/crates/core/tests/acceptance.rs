//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//! `cargo test --test acceptance -- 3 5` runs only criteria 3 and 5.

mod common;

use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use common::*;
use nalgebra::DMatrix;
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sbmca::dictionaries::{build_pulse_dictionary, dct_dictionary, identity_dictionary, symmetric_shifts};
use sbmca::dictlearn::{learn_dictionary, DictLearnOptions};
use sbmca::metrics::{grid_search, histogram, log_grid, EvalReport, GridSpec, Method, Truth};
use sbmca::separators::mca_separate_with;
use sbmca::solvers::kkt_violation;
use sbmca::synth::DatasetConfig;
use sbmca::{blockify, deblockify, lasso, sbmca_separate, soft_threshold, truncated_svd_denoise, LassoOptions, SbmcaParams};

const DATA_SEED: u64 = 2024;
const SHIFT_RANGE: i64 = 8;
const ERROR_THRESHOLD: f64 = 0.2;
const GRID_BUDGET_S: f64 = 15.0 * 60.0;
const LEARNED_ATOMS: usize = 32;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

/// Best-x_p reports of the three methods on one dataset.
struct Tuned {
    sigma: f64,
    sbmca: EvalReport,
    mca_dct: EvalReport,
    mca_id: EvalReport,
    seconds: f64,
}

fn mca_lambdas() -> Vec<f64> {
    log_grid(1e-3, 1.0, 4).unwrap()
}

fn sbmca_spec() -> GridSpec {
    GridSpec::sbmca(vec![0.1], vec![1.0, 3.0], vec![0.003, 0.01, 0.03], false)
}

fn tune(sigma: f64) -> Tuned {
    let cfg = DatasetConfig::default_with(DATA_SEED, sigma);
    let ds = cfg.generate().unwrap();
    let x = blockify(&ds.x, cfg.block_len).unwrap();
    let d1 = build_pulse_dictionary(&cfg.prototypes().unwrap(), &symmetric_shifts(SHIFT_RANGE)).unwrap();
    let truth = Truth { x_p: &ds.x_p, x_u: &ds.x_u };
    let base = SbmcaParams::new(0.1, 1.0, 0.01, LEARNED_ATOMS, 7);
    let t = Instant::now();
    let best = |spec: &GridSpec| grid_search(&x, truth, &d1, spec, &base).unwrap().best_xp;
    let mca_id = best(&GridSpec::mca(Method::McaIdentity, mca_lambdas()));
    let mca_dct = best(&GridSpec::mca(Method::McaDct, mca_lambdas()));
    let sbmca = best(&sbmca_spec());
    Tuned {
        sigma,
        sbmca,
        mca_dct,
        mca_id,
        seconds: t.elapsed().as_secs_f64(),
    }
}

fn criterion_1(runs: &[Tuned]) -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    for r in runs {
        let (s, d, i) = (r.sbmca.snr_xp_db.db(), r.mca_dct.snr_xp_db.db(), r.mca_id.snr_xp_db.db());
        let ok = s >= d && s >= i + 5.0 && r.seconds <= GRID_BUDGET_S;
        pass &= ok;
        parts.push(format!(
            "sigma={}: SNR(x_p) sbmca {s:.2} dB, mca-dct {d:.2} dB, mca-identity {i:.2} dB, grid {:.0}s",
            r.sigma, r.seconds
        ));
    }
    verdict(pass, parts.join("; "))
}

fn criterion_2(runs: &[Tuned]) -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    for r in runs {
        let f = |e: &EvalReport| e.block_errors_xp.fraction_below(ERROR_THRESHOLD);
        let (s, d, i) = (f(&r.sbmca), f(&r.mca_dct), f(&r.mca_id));
        pass &= s > i;
        parts.push(format!(
            "sigma={}: blocks with x_p error < {ERROR_THRESHOLD}: sbmca {s:.3}, mca-identity {i:.3}, mca-dct {d:.3} ({})",
            r.sigma,
            if s > d { "above mca-dct" } else { "not above mca-dct" }
        ));
    }
    verdict(pass, parts.join("; "))
}

fn criterion_3() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst_err: f64 = 0.0;
    let mut worst_kkt: f64 = 0.0;
    let mut converged = 0;
    for _ in 0..50 {
        let m = rng.random_range(2..=8);
        let d = rng.random_range(1..=10);
        let q = rng.random_range(1..=4);
        let lambda = 10f64.powf(rng.random_range(-2.0..0.5));
        let dict = random_unit_dictionary(m, d, &mut rng);
        let x = gaussian_matrix(m, q, &mut rng);
        let fit = lasso(&dict, &x, lambda, &LassoOptions::default()).unwrap();
        let mut oracle = DMatrix::zeros(d, q);
        for j in 0..q {
            oracle.set_column(j, &exhaustive_lasso(dict.atoms(), &x.column(j).into_owned(), lambda));
        }
        worst_err = worst_err.max((&fit.code.coeffs - oracle).norm());
        if fit.diagnostics.converged {
            converged += 1;
            let g = dict.atoms().transpose() * dict.atoms();
            let c = dict.atoms().transpose() * &x;
            for j in 0..q {
                let a: Vec<f64> = fit.code.coeffs.column(j).iter().copied().collect();
                worst_kkt = worst_kkt.max(kkt_violation(&g, c.column(j).as_slice(), &a, lambda));
            }
        }
    }
    verdict(
        worst_err <= 1e-5 && worst_kkt <= 1e-5,
        format!("50 instances, max |A - A_oracle|_F = {worst_err:.2e}, max KKT residual = {worst_kkt:.2e} over {converged} converged runs"),
    )
}

fn criterion_4() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for m in [8, 64, 400] {
        let d = dct_dictionary(m).unwrap();
        let x = gaussian_matrix(m, 5, &mut rng);
        let lambda = 0.5;
        let fit = lasso(&d, &x, lambda, &LassoOptions::default()).unwrap();
        let want = (d.atoms().transpose() * &x).map(|v| soft_threshold(v, lambda / 2.0));
        worst = worst.max((&fit.code.coeffs - want).amax());
    }
    verdict(worst <= 1e-8, format!("m in {{8, 64, 400}}, max entrywise deviation {worst:.2e}"))
}

fn criterion_5() -> Verdict {
    let mut recovered = 0;
    let mut monotone = 0;
    for trial in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(5000 + trial);
        let p = planted_two_atoms(20, 200, &mut rng);
        let out = learn_dictionary(&p.data, &DictLearnOptions::new(2, 0.05, trial)).unwrap();
        if greedy_match(&p.atoms, out.dictionary.atoms()).iter().all(|c| *c >= 0.99) {
            recovered += 1;
        }
        let ok = out
            .trace
            .windows(2)
            .all(|w| w[1].dead_atoms > 0 || w[1].objective <= w[0].objective * (1.0 + 1e-12));
        monotone += ok as usize;
    }
    verdict(
        recovered >= 45 && monotone == 50,
        format!("recovered both atoms in {recovered}/50 trials, monotone trace in {monotone}/50"),
    )
}

fn criterion_6() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let m = rng.random_range(2..30);
        let q = rng.random_range(2..30);
        let x = gaussian_matrix(m, q, &mut rng);
        let b = sbmca::BlockMatrix::from_parts(x.clone(), m * q, 0).unwrap();
        let sv2 = squared_singular_values(&x);
        let r = rng.random_range(1..=m.min(q));
        let approx = truncated_svd_denoise(&b, r).unwrap();
        let err = (&x - &approx.data).norm();
        let tail = sv2[r..].iter().sum::<f64>().sqrt();
        worst = worst.max((err - tail).abs());
    }
    verdict(worst <= 1e-8, format!("20 matrices, max |error - tail energy| = {worst:.2e}"))
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap())
        .filter(|e| e.file_name() != "timing.json")
        .map(|e| (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap()))
        .collect()
}

fn criterion_7() -> Verdict {
    let run = |root: &Path| {
        for args in [
            &["synth", "--seed", "17", "--out", "data"][..],
            &["separate", "--dataset", "data", "--method", "sbmca", "--lambda1", "0.1", "--lambda2", "1", "--lambda3", "0.01", "--seed", "3", "--out", "res"][..],
        ] {
            let out = Command::new(env!("CARGO_BIN_EXE_sbmca"))
                .args(["--threads", "2"])
                .args(args)
                .current_dir(root)
                .output()
                .unwrap();
            assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        }
        (snapshot(&root.join("data")), snapshot(&root.join("res")))
    };
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (da, ra) = run(a.path());
    let (db, rb) = run(b.path());
    let mut differing = Vec::new();
    for (dir, x, y) in [("data", &da, &db), ("res", &ra, &rb)] {
        for name in x.keys().chain(y.keys()) {
            if x.get(name) != y.get(name) && !differing.contains(&format!("{dir}/{name}")) {
                differing.push(format!("{dir}/{name}"));
            }
        }
    }
    verdict(
        differing.is_empty(),
        format!(
            "{} dataset files and {} result files compared, differing: [{}]",
            da.len(),
            ra.len(),
            differing.join(", ")
        ),
    )
}

fn criterion_8() -> Verdict {
    let mut failures = Vec::new();
    let mut check = |name: &str, outcome: Result<(), String>| {
        if let Err(e) = outcome {
            failures.push(format!("{name}: {e}"));
        }
    };
    let runner = |cases| {
        let config = Config {
            failure_persistence: None,
            ..Config::with_cases(cases)
        };
        TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha))
    };

    check(
        "blockify round trip",
        runner(256).run(&(prop::collection::vec(-1e6f64..1e6, 1..500), 1usize..64), |(x, m)| {
            let back = deblockify(&blockify(&x, m).unwrap()).unwrap();
            prop_assert_eq!(back, x);
            Ok(())
        }).map_err(|e| e.to_string()),
    );
    check(
        "histogram conservation",
        runner(256).run(&(prop::collection::vec(prop_oneof![-1f64..3.0, Just(f64::NAN)], 0..300), 1usize..50), |(v, bins)| {
            let h = histogram(&v, bins, 0.0, 1.5).unwrap();
            prop_assert_eq!(h.iter().map(|b| b.count).sum::<usize>(), v.iter().filter(|x| !x.is_nan()).count());
            Ok(())
        }).map_err(|e| e.to_string()),
    );
    check(
        "unit-norm atoms",
        runner(64).run(&(4usize..48, 1usize..4, 0i64..6, any::<u64>()), |(m, p, r, seed)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let protos: Vec<Vec<f64>> = (0..p).map(|_| (0..m).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
            let mut dicts = vec![dct_dictionary(m).unwrap(), identity_dictionary(m).unwrap()];
            if let Ok(d) = build_pulse_dictionary(&protos, &symmetric_shifts(r)) {
                dicts.push(d);
            }
            let data = gaussian_matrix(m, 12, &mut rng);
            dicts.push(learn_dictionary(&data, &DictLearnOptions::new(3, 0.1, seed)).unwrap().dictionary);
            for d in &dicts {
                for c in d.atoms().column_iter() {
                    prop_assert!((c.norm() - 1.0).abs() <= 1e-10, "{} atom norm {}", d.id(), c.norm());
                }
            }
            Ok(())
        }).map_err(|e| e.to_string()),
    );
    check(
        "reconstruction consistency",
        runner(16).run(&(8usize..24, 4usize..12, any::<u64>()), |(m, q, seed)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let protos = vec![(0..m).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>()];
            let d1 = build_pulse_dictionary(&protos, &symmetric_shifts(1)).unwrap();
            let x = blockify(gaussian_matrix(m, q, &mut rng).as_slice(), m).unwrap();
            let mut p = SbmcaParams::new(0.1, 0.1, 0.1, 3, seed);
            p.max_outer_iters = 2;
            p.dict_opts.inner_iters = 3;
            let s = sbmca_separate(&x, &d1, &p).unwrap();
            let d2 = s.d2_hat.as_ref().unwrap();
            prop_assert!((d1.atoms() * &s.a1_hat.coeffs - &s.xp_hat.data).amax() <= 1e-12);
            prop_assert!((d2.atoms() * &s.a2_hat.coeffs - &s.xu_hat.data).amax() <= 1e-12);
            for bg in [dct_dictionary(m).unwrap(), identity_dictionary(m).unwrap(), gaussian_dictionary(m, &mut rng)] {
                let s = mca_separate_with(&x, &d1, &bg, 0.1, &LassoOptions::default()).unwrap();
                prop_assert!((d1.atoms() * &s.a1_hat.coeffs - &s.xp_hat.data).amax() <= 1e-12);
                prop_assert!((bg.atoms() * &s.a2_hat.coeffs - &s.xu_hat.data).amax() <= 1e-12);
            }
            Ok(())
        }).map_err(|e| e.to_string()),
    );
    let n = failures.len();
    verdict(
        n == 0,
        if n == 0 {
            "blockify round trip, histogram conservation, unit-norm atoms, reconstruction consistency hold".into()
        } else {
            failures.join("; ")
        },
    )
}

fn gaussian_dictionary(m: usize, rng: &mut ChaCha8Rng) -> sbmca::Dictionary {
    random_unit_dictionary(m, m + 3, rng)
}

fn main() -> ExitCode {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |n: usize| selected.is_empty() || selected.contains(&n);
    let runs: Vec<Tuned> = if wanted(1) || wanted(2) {
        [0.0, 0.1].into_iter().map(tune).collect()
    } else {
        Vec::new()
    };
    let criteria: [(usize, &dyn Fn() -> Verdict); 8] = [
        (1, &|| criterion_1(&runs)),
        (2, &|| criterion_2(&runs)),
        (3, &criterion_3),
        (4, &criterion_4),
        (5, &criterion_5),
        (6, &criterion_6),
        (7, &criterion_7),
        (8, &criterion_8),
    ];
    let mut failed = 0;
    for (n, f) in criteria {
        if !wanted(n) {
            continue;
        }
        let v = f();
        failed += !v.pass as usize;
        println!("{} criterion {n}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
    }
    if failed > 0 {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
