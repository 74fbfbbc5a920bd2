//! Acceptance suite: one line per criterion, non-zero exit if any fails.
//!
//! Run with `cargo test --test acceptance`. The end-to-end criterion invokes
//! the `urlbench` binary twice with the default configuration.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use urlbench::autodiff::{finite_diff_check, Graph};
use urlbench::data::{read_dump, write_dump};
use urlbench::estimators::{losses, Batch, Encoder, EncoderDims, Method, MethodConfig};
use urlbench::harness::{read_results, summarize};
use urlbench::knn::{top1_neighbors, EmbeddingMatrix, Metric};
use urlbench::metrics::{auroc, r_auroc, EvalRecord, Origin};
use urlbench::vmf::{elk_sim, log_norm_const, mean_resultant_length, VonMisesFisher};
use urlbench::Tensor;

type Check = std::result::Result<String, String>;
type Criterion<'a> = (&'static str, Duration, Box<dyn FnOnce() -> Check + 'a>);

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------- oracles

fn mann_whitney(scores: &[f64], positive: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0u64);
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if positive[i] && !positive[j] {
                pairs += 1;
                wins += if si > sj {
                    1.0
                } else if si == sj {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    wins / pairs as f64
}

fn naive_top1(rows: &[Vec<f64>], metric: Metric) -> Vec<usize> {
    let rows: Vec<Vec<f64>> = match metric {
        Metric::Cosine => rows
            .iter()
            .map(|r| {
                let n = r.iter().map(|v| v * v).sum::<f64>().sqrt();
                r.iter().map(|v| v / n).collect()
            })
            .collect(),
        Metric::Euclidean => rows.to_vec(),
    };
    let score = |a: &[f64], b: &[f64]| -> f64 {
        match metric {
            Metric::Cosine => a.iter().zip(b).map(|(x, y)| x * y).sum(),
            Metric::Euclidean => -a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>(),
        }
    };
    (0..rows.len())
        .map(|i| {
            let mut best = usize::MAX;
            let mut best_s = f64::NEG_INFINITY;
            for j in 0..rows.len() {
                if j != i {
                    let s = score(&rows[i], &rows[j]);
                    if best == usize::MAX || s > best_s {
                        best = j;
                        best_s = s;
                    }
                }
            }
            best
        })
        .collect()
}

/// Composite Simpson on [-1, 1] with `m` (even) intervals.
fn simpson(m: usize, f: impl Fn(f64) -> f64) -> f64 {
    let h = 2.0 / m as f64;
    let mut s = f(-1.0) + f(1.0);
    for k in 1..m {
        s += f(-1.0 + k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

/// `E[t]` under the vMF marginal of `t = μᵀx`, density ∝ e^{κt}(1-t²)^{(p-3)/2}.
fn quadrature_mean_resultant_length(p: usize, kappa: f64) -> f64 {
    let e = (p as f64 - 3.0) / 2.0;
    let log_w = |t: f64| {
        let base = kappa * (t - 1.0);
        if p == 3 {
            base
        } else if t.abs() >= 1.0 {
            f64::NEG_INFINITY
        } else {
            base + e * (1.0 - t * t).ln()
        }
    };
    let m = 400_000;
    simpson(m, |t| t * log_w(t).exp()) / simpson(m, |t| log_w(t).exp())
}

/// `log C_3(κ) = log(κ / (4π sinh κ))`, evaluated without overflow.
fn closed_form_log_c3(kappa: f64) -> f64 {
    let log_sinh = kappa + (-(-2.0 * kappa).exp_m1()).ln() - std::f64::consts::LN_2;
    kappa.ln() - (4.0 * std::f64::consts::PI).ln() - log_sinh
}

fn unit_gaussian(rng: &mut ChaCha8Rng, p: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

// ------------------------------------------------------------- criteria

fn auroc_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst, mut min_tied) = (0.0f64, 1.0f64);
    let mut done = 0;
    while done < 1000 {
        let n = rng.random_range(2..=200);
        let levels = rng.random_range(1..=(n / 4).max(1));
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64 * 0.37).collect();
        let pos: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < 0.3).collect();
        if pos.iter().all(|&b| b) || pos.iter().all(|&b| !b) {
            continue;
        }
        let tied = (0..n).filter(|&i| (0..n).any(|j| j != i && scores[j] == scores[i])).count() as f64 / n as f64;
        if tied < 0.3 {
            continue;
        }
        min_tied = min_tied.min(tied);
        let got = auroc(&scores, &pos).map_err(|e| e.to_string())?;
        worst = worst.max((got - mann_whitney(&scores, &pos)).abs());
        done += 1;
    }
    ensure(worst <= 1e-9, format!("1000 instances, min tied fraction {min_tied:.2}, max |diff| {worst:.2e}"))
}

fn nn_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut mismatches = 0;
    for inst in 0..100 {
        let n = rng.random_range(2..=500);
        let p = rng.random_range(1..=64);
        let mut rows: Vec<Vec<f64>> =
            (0..n).map(|_| (0..p).map(|_| rng.random_range(-3..=3) as f64 + rng.random::<f64>() * 0.5).collect()).collect();
        for _ in 0..n / 10 {
            let (a, b) = (rng.random_range(0..n), rng.random_range(0..n));
            rows[a] = rows[b].clone();
        }
        for r in rows.iter_mut().filter(|r| r.iter().all(|&v| v == 0.0)) {
            r[0] = 1.0;
        }
        for metric in [Metric::Cosine, Metric::Euclidean] {
            let m = EmbeddingMatrix::new(&rows, metric).map_err(|e| format!("instance {inst}: {e}"))?;
            if top1_neighbors(&m).map_err(|e| e.to_string())? != naive_top1(&rows, metric) {
                mismatches += 1;
            }
        }
    }
    ensure(mismatches == 0, format!("100 instances x 2 metrics, {mismatches} mismatches"))
}

fn vmf_numerics() -> Check {
    let mut worst_c = 0.0f64;
    for k in 0..=4000 {
        let kappa = 10f64.powf(-3.0 + k as f64 * (500f64.log10() + 3.0) / 4000.0);
        let cf = closed_form_log_c3(kappa);
        let got = log_norm_const(3, kappa).map_err(|e| e.to_string())?;
        worst_c = worst_c.max(((got - cf) / cf).abs());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut worst_s, mut worst_bessel) = (0.0f64, 0.0f64);
    for p in [3, 16, 128] {
        for kappa in [0.0, 1.0, 10.0, 100.0] {
            let oracle = if kappa == 0.0 { 0.0 } else { quadrature_mean_resultant_length(p, kappa) };
            let mu = unit_gaussian(&mut rng, p);
            let d = VonMisesFisher::new(mu.clone(), kappa).map_err(|e| e.to_string())?;
            let (xs, _) = d.sample(20_000, &mut rng).map_err(|e| e.to_string())?;
            let mrl = xs.iter().map(|x| x.iter().zip(&mu).map(|(a, b)| a * b).sum::<f64>()).sum::<f64>() / xs.len() as f64;
            worst_s = worst_s.max((mrl - oracle).abs());
            if kappa > 0.0 {
                worst_bessel = worst_bessel.max((mean_resultant_length(p, kappa) - oracle).abs());
            }
        }
    }

    let mut worst_int = 0.0f64;
    for kappa in [1e-3, 0.5, 5.0, 50.0, 500.0] {
        let d = VonMisesFisher::new(vec![0.0, 0.0, 1.0], kappa).map_err(|e| e.to_string())?;
        let total = 2.0
            * std::f64::consts::PI
            * simpson(2_000_000, |t| {
                let s = (1.0 - t * t).max(0.0).sqrt();
                d.log_pdf(&[s, 0.0, t]).expect("unit point").exp()
            });
        worst_int = worst_int.max((total - 1.0).abs());
    }
    ensure(
        worst_c <= 1e-8 && worst_s <= 0.02 && worst_int <= 1e-6,
        format!(
            "log C_3 max rel err {worst_c:.2e}; sampler MRL max |diff| {worst_s:.4} (Bessel ratio vs quadrature {worst_bessel:.1e}); p=3 integral max |1 - I| {worst_int:.2e}"
        ),
    )
}

fn elk_sim_mc() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let density = |mu: &[f64], kappa: f64, x: &[f64]| -> f64 {
        closed_form_log_c3(kappa).exp() * (kappa * mu.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()).exp()
    };
    let n = 1_000_000;
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let (ma, mb) = (unit_gaussian(&mut rng, 3), unit_gaussian(&mut rng, 3));
        let (ka, kb) = (rng.random_range(0.5..20.0), rng.random_range(0.5..20.0));
        let analytic = elk_sim(&VonMisesFisher::new(ma.clone(), ka).unwrap(), &VonMisesFisher::new(mb.clone(), kb).unwrap())
            .map_err(|e| e.to_string())?
            .exp();
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let x = unit_gaussian(&mut rng, 3);
            let f = 4.0 * std::f64::consts::PI * density(&ma, ka, &x) * density(&mb, kb, &x);
            s += f;
            s2 += f * f;
        }
        let mean = s / n as f64;
        let se = ((s2 / n as f64 - mean * mean) / (n as f64 - 1.0)).sqrt();
        worst = worst.max((analytic - mean).abs() / se);
    }
    ensure(worst <= 3.0, format!("20 instances, 1e6 samples each, max deviation {worst:.2} SE"))
}

fn gradient_suite() -> Check {
    let dims = EncoderDims { input: 4, hidden: 6, embed: 3, unc_hidden: 4, classes: 3, rff: 5 };
    let matrix = |rng: &mut ChaCha8Rng, r: usize, c: usize| {
        Tensor::new(vec![r, c], (0..r * c).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
    };
    let mut worst = (0.0f64, "");
    for method in Method::ALL {
        let mut cfg = MethodConfig::new(method).with_seed(7);
        cfg.t = 8.0;
        cfg.n_mc = 3;
        cfg.n_members = 3;
        cfg.spectral_norm = method == Method::Sngp;
        let enc = Encoder::new(cfg, dims).map_err(|e| e.to_string())?;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = matrix(&mut rng, 6, 4);
        let x2 = method.is_unsupervised().then(|| matrix(&mut rng, 6, 4));
        let batch = Batch { x, x2, labels: vec![0, 1, 2, 0, 1, 2] };
        let (mut g, loss, _) = enc.loss_graph(&batch, &mut rng).map_err(|e| e.to_string())?;
        let err = finite_diff_check(&mut g, loss, 1e-5).map_err(|e| format!("{method}: {e}"))?;
        if err > worst.0 {
            worst = (err, method.id());
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let logits = matrix(&mut rng, 4, 3);
    let grad_for = |kappa: f64| {
        let mut g = Graph::new();
        let l = g.param(logits.clone());
        let k = g.input(Tensor::filled(&[4, 1], kappa));
        let loss = losses::losspred_loss(&mut g, l, &[0, 2, 1, 1], k, 0.7).unwrap();
        g.backward(loss).unwrap().wrt(&g, l)
    };
    let detached = grad_for(0.2).data() == grad_for(5.0).data();
    ensure(
        worst.0 <= 1e-4 && detached,
        format!(
            "11 losses, max rel err {:.2e} ({}); losspred logit gradient identical under kappa change: {detached}",
            worst.0, worst.1
        ),
    )
}

fn algorithm_one() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("crafted.urld");
    let n = 500;
    let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..6).map(|_| rng.random::<f32>() as f64 - 0.5).collect()).collect();
    let labels: Vec<i64> = (0..n).map(|_| rng.random_range(0..5)).collect();
    let nn = naive_top1(&rows, Metric::Cosine);
    let records: Vec<EvalRecord> = (0..n)
        .map(|i| EvalRecord {
            id: i as u64,
            label: labels[i],
            embedding: rows[i].clone(),
            uncertainty: if labels[nn[i]] != labels[i] { 1.0 } else { 0.0 },
            soft_labels: None,
            origin: Origin::Downstream,
        })
        .collect();
    write_dump(&records, &path).map_err(|e| e.to_string())?;
    let indicator = r_auroc(&read_dump(&path).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;

    let n = 2000;
    let noise: Vec<EvalRecord> = (0..n)
        .map(|i| EvalRecord {
            id: i as u64,
            label: rng.random_range(0..10),
            embedding: (0..4).map(|_| rng.random::<f64>() - 0.5).collect(),
            uncertainty: rng.random(),
            soft_labels: None,
            origin: Origin::Downstream,
        })
        .collect();
    let noisy = r_auroc(&noise).map_err(|e| e.to_string())?;
    ensure(
        indicator == 1.0 && (noisy - 0.5).abs() <= 0.03,
        format!("indicator dump R-AUROC {indicator}; noise R-AUROC at n=2000 {noisy:.4}"),
    )
}

fn run_benchmark(out: &Path) -> std::result::Result<Duration, String> {
    let t = Instant::now();
    let status = Command::new(env!("CARGO_BIN_EXE_urlbench"))
        .args(["benchmark", "--quiet", "--out"])
        .arg(out)
        .stdout(std::process::Stdio::null())
        .status()
        .map_err(|e| e.to_string())?;
    if !status.success() {
        return Err(format!("benchmark exited with {status}"));
    }
    Ok(t.elapsed())
}

fn end_to_end(dir: &Path) -> Check {
    let elapsed = run_benchmark(dir)?;
    let result = read_results(&dir.join("results.json")).map_err(|e| e.to_string())?;
    let rows = summarize(&result);
    let n_methods = result.methods.len();
    let avg = |label: &str| rows.iter().find(|r| r.label == label).and_then(|r| r.r_auroc).map(|s| s.avg);
    let oracle = avg("oracle").ok_or("no oracle row")?;
    let many = avg("many-shot-ce").ok_or("no many-shot row")?;

    let a = oracle >= 0.65;
    let mut best_b = String::from("none");
    let mut b = false;
    for r in rows.iter().take(n_methods).filter(|r| r.label == "mcinfonce" || r.label == "elk") {
        let (ra, sp) = (r.r_auroc.map(|s| s.avg), r.oracle_spearman);
        if let (Some(ra), Some(sp)) = (ra, sp) {
            if sp >= 0.5 && oracle - ra <= 0.15 {
                b = true;
                best_b = format!("{} R-AUROC {ra:.3} Spearman {sp:.3}", r.label);
            } else if !b {
                best_b = format!("{} R-AUROC {ra:.3} Spearman {sp:.3} (short)", r.label);
            }
        }
    }
    let top_zero_shot = rows
        .iter()
        .take(n_methods)
        .filter_map(|r| Some((r.r_auroc?.avg, r.label.clone())))
        .max_by(|x, y| x.0.total_cmp(&y.0))
        .ok_or("no zero-shot rows")?;
    let c = many >= top_zero_shot.0;
    let corruption = rows
        .iter()
        .find(|r| r.label == "oracle")
        .and_then(|r| r.upstream.as_ref()?.corruption_rate)
        .ok_or("no oracle corruption rate")?;
    let d = corruption >= 0.9;
    let fast = elapsed < Duration::from_secs(15 * 60);
    let mark = |ok: bool| if ok { "ok" } else { "FAIL" };
    ensure(
        a && b && c && d && fast,
        format!(
            "{:.0} s; (a) oracle R-AUROC {oracle:.3} {}; (b) {best_b} {}; (c) many-shot {many:.3} vs best zero-shot {} {:.3} {}; (d) oracle corruption rate {corruption:.3} {}",
            elapsed.as_secs_f64(),
            mark(a),
            mark(b),
            top_zero_shot.1,
            top_zero_shot.0,
            mark(c),
            mark(d)
        ),
    )
}

fn reproducibility(first: &Path, second: &Path) -> Check {
    run_benchmark(second)?;
    let mut names: Vec<String> = std::fs::read_dir(first)
        .map_err(|e| e.to_string())?
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    let mut differing = Vec::new();
    for name in &names {
        let a = std::fs::read(first.join(name)).map_err(|e| e.to_string())?;
        let b = std::fs::read(second.join(name)).map_err(|e| format!("{name}: {e}"))?;
        if a != b {
            differing.push(name.clone());
        }
    }
    ensure(
        differing.is_empty() && !names.is_empty(),
        format!("{} report files compared, differing: {:?}", names.len(), differing),
    )
}

fn main() {
    let tmp = tempfile::tempdir().expect("temp dir");
    let (first, second) = (tmp.path().join("run1"), tmp.path().join("run2"));
    let criteria: Vec<Criterion> = vec![
        ("AUROC oracle equivalence", Duration::from_secs(10), Box::new(auroc_oracle)),
        ("NN oracle equivalence", Duration::from_secs(30), Box::new(nn_oracle)),
        ("vMF numerics", Duration::from_secs(120), Box::new(vmf_numerics)),
        ("elk_sim correctness", Duration::MAX, Box::new(elk_sim_mc)),
        ("Gradient suite", Duration::MAX, Box::new(gradient_suite)),
        ("Algorithm-1 fidelity", Duration::MAX, Box::new(algorithm_one)),
        ("Synthetic end-to-end", Duration::MAX, Box::new(|| end_to_end(&first))),
        ("Protocol reproducibility", Duration::MAX, Box::new(|| reproducibility(&first, &second))),
    ];
    let mut failed = 0;
    for (name, limit, check) in criteria {
        let t = Instant::now();
        let outcome = check();
        let took = t.elapsed();
        let (ok, detail) = match outcome {
            Ok(d) if took <= limit => (true, d),
            Ok(d) => (false, format!("{d}; exceeded {:.0} s limit", limit.as_secs_f64())),
            Err(d) => (false, d),
        };
        failed += usize::from(!ok);
        println!("{} {name}: {detail} [{:.2} s]", if ok { "PASS" } else { "FAIL" }, took.as_secs_f64());
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
