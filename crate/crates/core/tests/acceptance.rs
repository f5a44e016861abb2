//! Acceptance suite. Each check prints one PASS/FAIL line with its runtime
//! against a budget; the process exits non-zero if any check fails.

use std::time::{Duration, Instant};

use livsurv::features::io::SurvivalRecord;
use livsurv::features::{apply_normalizer, fit_normalizer, FeatureMatrix};
use livsurv::pipeline::{run_cv, run_pipeline, PipelineConfig};
use livsurv::samonai::{binarize, propagate, ObjectSegmentation, OracleSegmenter, SamonaiConfig};
use livsurv::stats::{c_index, cox_fit, dice, kaplan_meier, log_rank, wilcoxon_rank_sum, DetectionReport, TieRule};
use livsurv::survaminn::{gradient_check, loss_cox, pool, Architecture, Network, GradCheckConfig, PatientBag, Pooling};
use livsurv::synthetic::{cube_phantom, multifocal_cohort, planted_cohort, sphere_phantom, Phantom};
use livsurv::Execution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn detection_f1() -> Outcome {
    let r = DetectionReport::from_counts(36, 14, 5);
    let want = [(r.precision, 0.720), (r.recall, 0.878), (r.f1, 0.791)];
    for (got, reference) in want {
        ensure((got - reference).abs() <= 1e-3, || format!("got {got:.4}, want {reference:.3} ± 0.001"))?;
    }
    // independent arithmetic
    let (p, q) = (36.0 / 50.0, 36.0 / 41.0);
    ensure((r.f1 - 2.0 * p * q / (p + q)).abs() < 1e-12, || "F1 is not the harmonic mean".into())?;
    Ok(format!("precision {:.3} recall {:.3} F1 {:.3}", r.precision, r.recall, r.f1))
}

fn gradients() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let arch = Architecture { input_dim: 6, encoder: vec![10, 8, 4], regressor: vec![3] };
    let mut net = Network::init(arch, &mut rng).map_err(|e| e.to_string())?;
    // positive biases keep most ReLUs away from their kink
    for l in net.layers().to_vec() {
        for b in &mut net.params_mut()[l.offset + l.fan_in * l.fan_out..l.offset + l.n_params()] {
            *b = rng.gen_range(0.05..0.3);
        }
    }
    let bags: Vec<PatientBag> = (0..8)
        .map(|i| {
            let k = rng.gen_range(1..5);
            PatientBag {
                patient_id: format!("p{i}"),
                instances: (0..k).map(|_| (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect(),
                time: rng.gen_range(1.0..20.0),
                event: i % 3 != 1,
                largest: Some(rng.gen_range(0..k)),
            }
        })
        .collect();
    let mut worst = 0.0f64;
    let mut checked = 0;
    for alpha in [0.0, 0.5, 1.0] {
        for pooling in Pooling::ALL {
            let cfg = GradCheckConfig { pooling, alpha, h: 1e-5, n_coords: usize::MAX, ..Default::default() };
            let r = gradient_check(&net, &bags, &cfg).map_err(|e| e.to_string())?;
            ensure(r.checked > net.n_params() / 2, || format!("{pooling} α={alpha}: only {} coordinates smooth", r.checked))?;
            ensure(r.max_rel_error < 1e-4, || format!("{pooling} α={alpha}: relative error {:.2e}", r.max_rel_error))?;
            worst = worst.max(r.max_rel_error);
            checked += r.checked;
        }
    }
    Ok(format!("max relative error {worst:.2e} over {checked} coordinate checks"))
}

fn brute_c_index(t: &[f64], d: &[bool], h: &[f64], half: bool) -> Option<f64> {
    let (mut num, mut den) = (0u64, 0u64);
    for i in 0..t.len() {
        for j in 0..t.len() {
            if d[j] && t[j] < t[i] {
                den += 2;
                num += if h[j] > h[i] { 2 } else if half && h[j] == h[i] { 1 } else { 0 };
            }
        }
    }
    (den > 0).then(|| num as f64 / den as f64)
}

fn concordance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut compared = 0;
    for case in 0..500 {
        let n = rng.gen_range(1..=12);
        // small integer grids force tied times and tied hazards
        let t: Vec<f64> = (0..n).map(|_| rng.gen_range(1..6) as f64).collect();
        let d: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.6)).collect();
        let h: Vec<f64> = (0..n).map(|_| rng.gen_range(-3..4) as f64 * 0.5).collect();
        for (rule, half) in [(TieRule::Strict, false), (TieRule::Half, true)] {
            let got = c_index(&t, &d, &h, rule).ok();
            let want = brute_c_index(&t, &d, &h, half);
            ensure(got == want, || format!("case {case} {rule:?}: {got:?} vs {want:?}"))?;
            compared += want.is_some() as usize;
        }
    }
    Ok(format!("500 instances, {compared} defined indices equal"))
}

fn lse_bounds() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for case in 0..10_000 {
        let n = rng.gen_range(2..=20);
        let eta: Vec<f64> = (0..n).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let max = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let l = pool(&eta, Pooling::Lse, None).map_err(|e| e.to_string())?;
        let upper = max + (n as f64).ln();
        ensure(max < l && l <= upper, || format!("case {case}: max {max} lse {l} bound {upper}"))?;
        ensure(l < upper, || format!("case {case}: unequal entries reached the upper bound"))?;
    }
    for (n, v) in [(1usize, 0.3), (2, -4.0), (5, 7.25), (17, 0.0)] {
        let l = pool(&vec![v; n], Pooling::Lse, None).map_err(|e| e.to_string())?;
        ensure((l - (v + (n as f64).ln())).abs() < 1e-12, || format!("{n} equal entries: lse {l}"))?;
    }
    let l = pool(&[1.0, 1.0, 1.0 - 1e-6], Pooling::Lse, None).map_err(|e| e.to_string())?;
    ensure(l < 1.0 + 3f64.ln(), || "near-equal entries reached the upper bound".into())?;
    Ok("10⁴ random vectors inside (max, max + ln n]; equality only when all equal".into())
}

fn toy_partial_ll(z: &[f64], t: &[f64], d: &[bool], beta: f64) -> f64 {
    (0..t.len())
        .filter(|&i| d[i])
        .map(|i| {
            let s: f64 = (0..t.len()).filter(|&j| t[j] >= t[i]).map(|j| (beta * z[j]).exp()).sum();
            beta * z[i] - s.ln()
        })
        .sum()
}

fn cox_toy() -> Outcome {
    let z = [1.0, 0.0, 1.0, 0.0];
    let t = [1.0, 2.0, 3.0, 4.0];
    let d = [true, true, false, true];
    let argmax = |lo: f64, hi: f64, step: f64| {
        let k = ((hi - lo) / step).round() as usize;
        (0..=k).map(|i| lo + i as f64 * step).fold((f64::NAN, f64::NEG_INFINITY), |best, b| {
            let ll = toy_partial_ll(&z, &t, &d, b);
            if ll > best.1 { (b, ll) } else { best }
        })
    };
    let (coarse, _) = argmax(-10.0, 10.0, 1e-3);
    let (star, _) = argmax(coarse - 2e-3, coarse + 2e-3, 1e-7);
    let rows: Vec<Vec<f64>> = z.iter().map(|&v| vec![v]).collect();
    let fit = cox_fit(&rows, &t, &d).map_err(|e| e.to_string())?;
    ensure(fit.converged, || "Newton iteration did not converge".into())?;
    let err = (fit.beta[0] - star).abs();
    ensure(err < 1e-4, || format!("β̂ {} vs grid {star}", fit.beta[0]))?;

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let n = rng.gen_range(2..30);
        let eta: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let tt: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..10.0)).collect();
        let mut dd: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.6)).collect();
        dd[0] = true;
        let base = loss_cox(&eta, &tt, &dd).map_err(|e| e.to_string())?;
        for c in [-50.0, -1.5, 3.7, 100.0] {
            let shifted: Vec<f64> = eta.iter().map(|e| e + c).collect();
            let l = loss_cox(&shifted, &tt, &dd).map_err(|e| e.to_string())?;
            worst = worst.max((l - base).abs());
        }
    }
    ensure(worst < 1e-10, || format!("shift changed the loss by {worst:.2e}"))?;
    Ok(format!("β̂ = {:.7}, grid β* = {star:.7}, |Δ| = {err:.1e}; max shift drift {worst:.1e}", fit.beta[0]))
}

fn segment(p: &Phantom, exec: Execution) -> Result<ObjectSegmentation, String> {
    let cfg = SamonaiConfig { execution: exec, ..Default::default() };
    let mut out = propagate(&p.image, &p.seeds, &OracleSegmenter::new(0.0), &cfg).map_err(|e| e.to_string())?;
    out.remove(0).map_err(|e| e.to_string())
}

fn bits(s: &ObjectSegmentation) -> (Vec<u64>, Vec<u8>, u64) {
    (s.logits.logits.data().iter().map(|v| v.to_bits()).collect(), s.mask.data().to_vec(), s.logits.threshold.to_bits())
}

fn phantoms() -> Outcome {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(4).build().map_err(|e| e.to_string())?;
    let mut scores = Vec::new();
    for (name, p, min) in [("cube", cube_phantom(40, 20, 100.0), 0.99), ("sphere", sphere_phantom(40, 10.0, 100.0), 0.90)] {
        let seq = segment(&p, Execution::Sequential)?;
        let par = pool.install(|| segment(&p, Execution::Parallel))?;
        ensure(bits(&seq) == bits(&par), || format!("{name}: 1-thread and 4-thread outputs differ"))?;
        ensure(seq.jobs == par.jobs, || format!("{name}: prompt sequences differ"))?;
        let mask = binarize(&seq.logits);
        let d = dice(&mask, &p.truth, 1).map_err(|e| e.to_string())?;
        ensure(d >= min, || format!("{name} dice {d:.4} < {min}"))?;
        scores.push(format!("{name} dice {d:.4}"));
    }
    Ok(format!("{}; 1- vs 4-thread bit-identical", scores.join(", ")))
}

fn shuffled(survival: &[SurvivalRecord], seed: u64) -> Vec<SurvivalRecord> {
    let mut labels: Vec<(f64, bool)> = survival.iter().map(|s| (s.time_months, s.event)).collect();
    labels.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    survival
        .iter()
        .zip(labels)
        .map(|(s, (time_months, event))| SurvivalRecord { patient_id: s.patient_id.clone(), time_months, event })
        .collect()
}

fn planted_signal() -> Outcome {
    let cohort = planted_cohort(200, 6, 2.5, 0.4, 11);
    let censored = cohort.survival.iter().filter(|s| !s.event).count();
    ensure(censored == 80, || format!("{censored} censored, want 80"))?;
    let cfg = PipelineConfig {
        folds: 3,
        repeats: 3,
        bootstrap_replicates: 0,
        randomization_replicates: 200,
        ..Default::default()
    };
    let m = run_pipeline(&cfg, &cohort.features, &cohort.survival).map_err(|e| e.to_string())?;
    ensure(m.mean_c_index >= 0.75, || format!("planted mean C {:.3} < 0.75", m.mean_c_index))?;
    let r = m.randomization.as_ref().ok_or("no randomization result")?;
    let p = r.p.ok_or("no p-value")?;
    ensure(p <= 1.0 / 200.0, || format!("randomization p {p} > 1/200"))?;

    let null_cfg = PipelineConfig { randomization_replicates: 0, ..cfg };
    let s = run_cv(&null_cfg, &cohort.features, &shuffled(&cohort.survival, 99)).map_err(|e| e.to_string())?;
    ensure((0.4..=0.6).contains(&s.mean_c_index), || format!("shuffled mean C {:.3} outside [0.4, 0.6]", s.mean_c_index))?;
    let null_max = r.null.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(format!(
        "planted C {:.3}, shuffled C {:.3}, randomization p {p} (null max {null_max:.3})",
        m.mean_c_index, s.mean_c_index
    ))
}

fn pooling_order() -> Outcome {
    let cohort = multifocal_cohort(200, 6, 8, 2.0, 0.4, 1);
    let mut c = Vec::new();
    for pooling in [Pooling::Lse, Pooling::Max, Pooling::Mean] {
        let cfg = PipelineConfig { folds: 3, repeats: 3, pooling, bootstrap_replicates: 0, ..Default::default() };
        let m = run_cv(&cfg, &cohort.features, &cohort.survival).map_err(|e| e.to_string())?;
        c.push(m.mean_c_index);
    }
    let msg = format!("lse {:.3}, max {:.3}, mean {:.3}", c[0], c[1], c[2]);
    ensure(c[0] >= c[1] && c[1] >= c[2], || format!("order violated: {msg}"))?;
    Ok(msg)
}

fn normalization() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (mut cols, mut constant) = (0, 0);
    for case in 0..1000 {
        let n = rng.gen_range(2..40);
        let k = rng.gen_range(1..6);
        let const_col = rng.gen_bool(0.3).then(|| rng.gen_range(0..k));
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                (0..k)
                    .map(|j| match (Some(j) == const_col, j % 3) {
                        (true, _) => 42.5,
                        (false, 0) => rng.gen_range(-50.0..50.0),
                        (false, 1) => rng.gen_range(0.0f64..8.0).exp(),
                        // a coarse grid gives ties and mass at the minimum
                        (false, _) => rng.gen_range(0..4) as f64,
                    })
                    .collect()
            })
            .collect();
        let names = (0..k).map(|j| format!("c{j}")).collect();
        let x = FeatureMatrix::new(names, rows).map_err(|e| e.to_string())?;
        let state = fit_normalizer(&x).map_err(|e| e.to_string())?;
        let y = apply_normalizer(&x, &state).map_err(|e| e.to_string())?;
        for j in 0..k {
            let (xc, yc) = (x.column(j), y.column(j));
            let spread = xc.iter().any(|&v| v != xc[0]);
            if !spread {
                ensure(yc.iter().all(|&v| v == 0.0), || format!("case {case} col {j}: constant column not zero"))?;
                constant += 1;
                continue;
            }
            let mean = yc.iter().sum::<f64>() / n as f64;
            let std = (yc.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
            ensure(mean.abs() < 1e-9 && (std - 1.0).abs() < 1e-9, || format!("case {case} col {j}: mean {mean:e} std {std}"))?;
            for a in 0..n {
                for b in 0..n {
                    ensure(!(xc[a] < xc[b] && yc[a] > yc[b]), || format!("case {case} col {j}: order reversed"))?;
                }
            }
            cols += 1;
        }
    }
    Ok(format!("1000 matrices, {cols} spread columns standardized and monotone, {constant} constant columns zeroed"))
}

fn statistics() -> Outcome {
    let km = kaplan_meier(&[1.0, 2.0], &[true, true]).map_err(|e| e.to_string())?;
    ensure((km.eval(1.0) - 0.5).abs() < 1e-6 && km.eval(2.0).abs() < 1e-6, || "KM toy values".into())?;
    let (t, d) = ([1.0, 3.0, 4.0, 6.0, 7.0], [true, false, true, true, false]);
    let lr = log_rank(&t, &d, &t, &d).map_err(|e| e.to_string())?;
    ensure(lr.chi2.abs() < 1e-6, || format!("identical groups chi2 {}", lr.chi2))?;
    let p = wilcoxon_rank_sum(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).map_err(|e| e.to_string())?;
    ensure((p - 0.1).abs() < 1e-6, || format!("rank-sum p {p}"))?;
    Ok(format!("S(1) {}, S(2) {}, chi2 {}, rank-sum p {p}", km.eval(1.0), km.eval(2.0), lr.chi2))
}

fn main() {
    type Check = (&'static str, u64, fn() -> Outcome);
    let checks: [Check; 10] = [
        ("detection F1 arithmetic", 1, detection_f1),
        ("analytic vs numeric gradients", 30, gradients),
        ("c-index vs pair enumeration", 5, concordance),
        ("log-sum-exp bounds", 1, lse_bounds),
        ("Cox fit vs grid search", 5, cox_toy),
        ("phantom propagation", 60, phantoms),
        ("planted-signal survival run", 600, planted_signal),
        ("pooling order on multifocal data", 300, pooling_order),
        ("normalization properties", 5, normalization),
        ("statistics golden values", 1, statistics),
    ];
    // optional check numbers select a subset, e.g. `-- 2 6`
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let (mut passed, mut failed) = (0, 0);
    for (i, (name, budget, check)) in checks.into_iter().enumerate() {
        if !only.is_empty() && !only.contains(&(i + 1)) {
            continue;
        }
        let start = Instant::now();
        let outcome = check();
        let took = start.elapsed();
        let outcome = outcome.and_then(|msg| {
            if took <= Duration::from_secs(budget) {
                Ok(msg)
            } else {
                Err(format!("{msg}; over the {budget} s budget"))
            }
        });
        let (tag, msg) = match outcome {
            Ok(m) => {
                passed += 1;
                ("PASS", m)
            }
            Err(m) => {
                failed += 1;
                ("FAIL", m)
            }
        };
        println!("{tag} [{:>2}] {name} ({:.2} s): {msg}", i + 1, took.as_secs_f64());
    }
    println!("acceptance: {passed} passed, {failed} failed");
    if failed > 0 {
        std::process::exit(1);
    }
}
