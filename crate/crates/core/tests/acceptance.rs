//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails. Extra arguments filter criteria by name.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use tcp_core::conformal::random_split;
use tcp_core::data::synthetic::SyntheticSpec;
use tcp_core::harness::{execute, ExperimentConfig, Method};
use tcp_core::{
    full_conformal, kkt_check, lasso_fit, region_scan, ridge_trim, split_conformal, tcp_predict,
    CandidateGrid, Dataset, Error, LassoFitter, LassoOptions, RidgeFitter, ScanOptions, TcpConfig,
    TrimMethod,
};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

struct Instance {
    data: Dataset,
    x_new: DVector<f64>,
}

fn instance(rng: &mut ChaCha8Rng, n: usize, p: usize) -> Instance {
    let k = rng.random_range(0..=p.min(4));
    let x = DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(rng));
    let beta = DVector::from_fn(p, |j, _| if j < k { 2.0 } else { 0.0 });
    let noise = DVector::from_fn(n, |_, _| StandardNormal.sample(rng));
    let y = &x * beta + noise;
    let x_new = DVector::from_fn(p, |_, _| StandardNormal.sample(rng));
    Instance {
        data: Dataset::new(x, y).unwrap(),
        x_new,
    }
}

fn tight() -> LassoOptions {
    LassoOptions {
        tol: 1e-11,
        max_iter: None,
    }
}

fn se_floor(target: f64, trials: usize) -> f64 {
    target - 3.0 * (0.1 * 0.9 / trials as f64).sqrt()
}

fn coverage_desk_scale() -> Outcome {
    let trials = 1000;
    let mut cfg = ExperimentConfig::synthetic(SyntheticSpec::new(40, 60, 4, 0), trials, 2024);
    cfg.methods = vec![Method::RidgeTrim, Method::SplitTrim];
    cfg.tcp.alpha_trim = Some(1.0 / 41.0);
    cfg.tcp.alpha_predict = 0.1;
    let run = execute(&cfg).map_err(|e| e.to_string())?;
    run.check_failures().map_err(|e| e.to_string())?;
    let floor = se_floor(0.875, trials);
    let mut detail = Vec::new();
    let mut ok = true;
    for m in &run.metrics.methods {
        let cov = m.coverage_pct / 100.0;
        ok &= cov >= floor;
        detail.push(format!("{} {:.3}", m.method, cov));
    }
    let msg = format!("{} (floor {floor:.3})", detail.join(", "));
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn intersection_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let methods = [
        TrimMethod::MaxTrim,
        TrimMethod::RidgeTrim,
        TrimMethod::SplitTrim,
    ];
    let mut total_points = 0;
    for inst_id in 0..50 {
        let n = rng.random_range(8..=30);
        let p = rng.random_range(4..=40);
        let inst = instance(&mut rng, n, p);
        let lambda = (n as f64 * (p as f64).ln()).sqrt() * rng.random_range(0.5..1.5);
        let method = methods[inst_id % 3];
        let cfg = TcpConfig {
            alpha_trim: 1.0 / (n as f64 + 1.0),
            alpha_predict: rng.random_range(0.1..0.3),
            trim_method: method,
            lambda,
            trim_lambda: Some(lambda / 2f64.sqrt()),
            rho: 1.0,
            grid_step: 1e-2,
            seed: inst_id as u64,
        };
        let res = tcp_predict(&cfg, &inst.data, &inst.x_new)
            .map_err(|e| format!("instance {inst_id}: {e}"))?;
        let Some(grid) = res.prediction_set.grid else {
            continue;
        };
        let brute = full_conformal(
            &LassoFitter {
                lambda,
                options: tight(),
            },
            &inst.data,
            &inst.x_new,
            &grid,
            cfg.alpha_predict,
        )
        .map_err(|e| format!("instance {inst_id}: {e}"))?;
        let trim = res.trim_set.unwrap();
        let expected: Vec<f64> = brute
            .accepted_points
            .iter()
            .copied()
            .filter(|&y| trim.contains(y))
            .collect();
        total_points += grid.points().len();
        if expected != res.prediction_set.accepted_points {
            return Err(format!(
                "instance {inst_id} ({method}): {} accepted by the trimmed pass vs {} by brute force",
                res.prediction_set.accepted_points.len(),
                expected.len()
            ));
        }
    }
    Ok(format!(
        "50 instances, {total_points} grid points, identical"
    ))
}

fn region_scan_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let mut worst = 0.0f64;
    let mut solves = 0;
    let mut points = 0;
    for inst_id in 0..100 {
        let n = rng.random_range(5..=20);
        let p = rng.random_range(3..=30);
        let inst = instance(&mut rng, n, p);
        let lambda = (n as f64 * (p as f64).ln()).sqrt() * rng.random_range(0.3..1.5);
        let ymax = inst.data.y().amax() + 1.0;
        let grid = CandidateGrid::with_count(-ymax, ymax, 249).unwrap();
        let scan = region_scan(
            &inst.data,
            &inst.x_new,
            lambda,
            &grid,
            &ScanOptions::default(),
        )
        .map_err(|e| format!("instance {inst_id}: {e}"))?;
        if scan.points.len() < 200 {
            return Err(format!(
                "instance {inst_id}: only {} grid points",
                scan.points.len()
            ));
        }
        solves += scan.n_solver_calls;
        points += scan.points.len();
        for (y, fast) in scan.points.iter().zip(&scan.abs_residuals) {
            let aug = inst.data.augmented(&inst.x_new, *y).unwrap();
            let fit = lasso_fit(&aug, lambda, &tight()).map_err(|e| e.to_string())?;
            let r = aug.y() - aug.x() * &fit.beta;
            for (a, b) in r.iter().zip(fast) {
                worst = worst.max((a.abs() - b).abs());
            }
        }
    }
    let msg = format!("max deviation {worst:.2e} over {points} points ({solves} solver calls)");
    if worst <= 1e-6 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn ridge_trim_closed_form() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let mut checked = 0;
    let mut skipped = 0;
    let mut worst_steps = 0.0f64;
    while checked < 50 {
        let n = rng.random_range(5..=30);
        let p = rng.random_range(2..=40);
        let inst = instance(&mut rng, n, p);
        let rho = rng.random_range(0.1..10.0);
        let alpha = if rng.random_bool(0.5) {
            1.0 / (n as f64 + 1.0)
        } else {
            rng.random_range(0.05..0.3)
        };
        let trim = match ridge_trim(&inst.data, &inst.x_new, rho, alpha) {
            Ok(t) => t,
            Err(Error::UnboundedTrimSet) | Err(Error::EmptyTrimSet) => {
                skipped += 1;
                continue;
            }
            Err(e) => return Err(e.to_string()),
        };
        let pad = trim.width() + 1.0;
        let grid = CandidateGrid::with_count(trim.lo - pad, trim.hi + pad, 3000).unwrap();
        let set = full_conformal(&RidgeFitter { rho }, &inst.data, &inst.x_new, &grid, alpha)
            .map_err(|e| e.to_string())?;
        let (Some(first), Some(last)) = (set.accepted_points.first(), set.accepted_points.last())
        else {
            return Err(format!("instance {checked}: grid accepted nothing"));
        };
        let dev = (first - trim.lo).abs().max((last - trim.hi).abs()) / grid.step;
        worst_steps = worst_steps.max(dev);
        if dev > 1.0 {
            return Err(format!(
                "instance {checked}: closed form [{:.4}, {:.4}] vs grid [{first:.4}, {last:.4}]",
                trim.lo, trim.hi
            ));
        }
        checked += 1;
    }
    Ok(format!(
        "50 instances, worst {worst_steps:.2} grid steps ({skipped} unbounded draws skipped)"
    ))
}

fn table_pattern_reduced_scale() -> Outcome {
    let trials = 200;
    let cfg = ExperimentConfig::synthetic(SyntheticSpec::new(100, 400, 5, 0), trials, 77);
    let run = execute(&cfg).map_err(|e| e.to_string())?;
    run.check_failures().map_err(|e| e.to_string())?;
    let m = |method| run.metrics.get(method).unwrap();
    let mut failures = Vec::new();
    let mut cov = Vec::new();
    for mm in &run.metrics.methods {
        cov.push(format!("{} {:.1}%", mm.method, mm.coverage_pct));
        if !(86.0..=95.0).contains(&mm.coverage_pct) {
            failures.push(format!(
                "(a) {} coverage {:.1}%",
                mm.method, mm.coverage_pct
            ));
        }
    }
    let split = m(Method::Split).mean_pi_width;
    let tcp_widths: Vec<f64> = [Method::MaxTrim, Method::RidgeTrim, Method::SplitTrim]
        .iter()
        .map(|&t| m(t).mean_pi_width)
        .collect();
    let tcp_max = tcp_widths.iter().copied().fold(f64::MIN, f64::max);
    if split < 1.15 * tcp_max {
        failures.push(format!("(b) Split width {split:.3} vs TCP {tcp_max:.3}"));
    }
    let tw = |t| m(t).mean_trial_width.unwrap();
    let (s, r, x) = (
        tw(Method::SplitTrim),
        tw(Method::RidgeTrim),
        tw(Method::MaxTrim),
    );
    if !(s < r && r < x) {
        failures.push(format!(
            "(c) trial widths SplitTrim {s:.2} RidgeTrim {r:.2} MaxTrim {x:.2}"
        ));
    }
    let msg = format!(
        "{}; PI Split {split:.2} vs TCP max {tcp_max:.2}; trial widths {s:.2} < {r:.2} < {x:.2}",
        cov.join(", ")
    );
    if failures.is_empty() {
        Ok(msg)
    } else {
        Err(format!("{}; {msg}", failures.join("; ")))
    }
}

fn split_conformal_definition() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(66);
    let mut worst_steps = 0.0f64;
    for inst_id in 0..50 {
        let n = rng.random_range(10..=40);
        let p = rng.random_range(2..=30);
        let inst = instance(&mut rng, n, p);
        let lambda = rng.random_range(0.5..5.0);
        let alpha = rng.random_range(0.05..0.4);
        let split = random_split(n, inst_id);
        let fitter = LassoFitter {
            lambda,
            options: tight(),
        };
        let got = split_conformal(&fitter, &inst.data, &inst.x_new, alpha, &split)
            .map_err(|e| e.to_string())?;

        let calib: Vec<usize> = (0..n).filter(|i| !split.contains(i)).collect();
        let m = calib.len();
        if alpha * (m as f64 + 1.0) < 1.0 {
            continue;
        }
        let half = inst.data.subset(&split).unwrap();
        let beta = lasso_fit(&half, lambda, &tight())
            .map_err(|e| e.to_string())?
            .beta;
        let scores: Vec<f64> = calib
            .iter()
            .map(|&i| (inst.data.y()[i] - inst.data.x().row(i).dot(&beta.transpose())).abs())
            .collect();
        let center = inst.x_new.dot(&beta);
        let reach = scores.iter().copied().fold(0.0, f64::max) * 2.0 + 1.0;
        let grid = CandidateGrid::with_count(center - reach, center + reach, 8000).unwrap();
        let accepted: Vec<f64> = grid
            .points()
            .into_iter()
            .filter(|&y| {
                let s = (y - center).abs();
                let at_least = scores.iter().filter(|&&r| r >= s).count();
                (at_least as f64 + 1.0) / (m as f64 + 1.0) > alpha
            })
            .collect();
        let (Some(lo), Some(hi)) = (accepted.first(), accepted.last()) else {
            return Err(format!("instance {inst_id}: empty set on the grid"));
        };
        let iv = got.interval();
        let dev = (lo - iv.lo).abs().max((hi - iv.hi).abs()) / grid.step;
        worst_steps = worst_steps.max(dev);
        if dev > 1.0 {
            return Err(format!(
                "instance {inst_id}: [{:.4}, {:.4}] vs grid [{lo:.4}, {hi:.4}]",
                iv.lo, iv.hi
            ));
        }
    }
    Ok(format!("50 instances, worst {worst_steps:.2} grid steps"))
}

fn soft(z: f64, t: f64) -> f64 {
    z.signum() * (z.abs() - t).max(0.0)
}

/// Accelerated proximal gradient with restarts, run to stagnation.
fn fista(x: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> (DVector<f64>, f64) {
    let xtx = x.transpose() * x;
    let xty = x.transpose() * y;
    let lip = xtx.clone().symmetric_eigen().eigenvalues.max().max(1e-12);
    let obj = |b: &DVector<f64>| 0.5 * (y - x * b).norm_squared() + lambda * b.lp_norm(1);
    let p = x.ncols();
    let mut beta = DVector::zeros(p);
    let mut z = beta.clone();
    let mut t = 1.0f64;
    let mut f_prev = obj(&beta);
    for _ in 0..400_000 {
        let grad = &xtx * &z - &xty;
        let next = DVector::from_fn(p, |j, _| soft(z[j] - grad[j] / lip, lambda / lip));
        let f_next = obj(&next);
        if f_next > f_prev {
            z = beta.clone();
            t = 1.0;
            continue;
        }
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        z = &next + (&next - &beta) * ((t - 1.0) / t_next);
        let moved = (&next - &beta).amax();
        beta = next;
        t = t_next;
        f_prev = f_next;
        if moved < 1e-14 {
            break;
        }
    }
    (beta, f_prev)
}

fn solver_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst = 0.0f64;
    for inst_id in 0..100 {
        let n = rng.random_range(5..=30);
        let p = rng.random_range(2..=40);
        let inst = instance(&mut rng, n, p);
        let lmax = (inst.data.x().transpose() * inst.data.y()).amax();
        let lambda = lmax * rng.random_range(0.05..0.9);
        let fit = lasso_fit(&inst.data, lambda, &LassoOptions::default())
            .map_err(|e| format!("instance {inst_id}: {e}"))?;
        if !kkt_check(&inst.data, &fit, 1e-4) {
            return Err(format!("instance {inst_id}: KKT check failed"));
        }
        let (_, f_oracle) = fista(inst.data.x(), inst.data.y(), lambda);
        let gap = (fit.objective - f_oracle).abs();
        worst = worst.max(gap);
        if gap > 1e-6 {
            return Err(format!(
                "instance {inst_id}: objective {} vs oracle {f_oracle} (gap {gap:.2e})",
                fit.objective
            ));
        }
    }
    Ok(format!(
        "100 instances, worst objective gap {worst:.2e}, all KKT at 1e-4"
    ))
}

fn determinism() -> Outcome {
    let mut cfg = ExperimentConfig::synthetic(SyntheticSpec::new(30, 40, 3, 0), 24, 5);
    cfg.tcp.grid_step = 0.02;
    let log = |threads: usize| -> Result<Vec<u8>, String> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| e.to_string())?;
        let run = pool.install(|| execute(&cfg)).map_err(|e| e.to_string())?;
        let mut buf = Vec::new();
        run.write_trial_log(&mut buf).map_err(|e| e.to_string())?;
        Ok(buf)
    };
    let a = log(4)?;
    let b = log(4)?;
    let c = log(1)?;
    if a.is_empty() {
        return Err("empty trial log".into());
    }
    if a != b {
        return Err("rerun produced a different trial log".into());
    }
    if a != c {
        return Err("single-threaded run produced a different trial log".into());
    }
    Ok(format!(
        "{} bytes identical across reruns and thread counts",
        a.len()
    ))
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("coverage at desk scale", coverage_desk_scale),
        ("intersection identity", intersection_identity),
        ("fast-path exactness", region_scan_exactness),
        ("ridge-trim closed form", ridge_trim_closed_form),
        ("reduced-scale table pattern", table_pattern_reduced_scale),
        ("split-conformal equivalence", split_conformal_definition),
        ("solver oracle", solver_oracle),
        ("determinism", determinism),
    ];
    let filters: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome =
            catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|_| Err("panicked".to_string()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(msg) => println!("criterion {}: PASS {name}: {msg} [{secs:.1}s]", i + 1),
            Err(msg) => {
                failed += 1;
                println!("criterion {}: FAIL {name}: {msg} [{secs:.1}s]", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
