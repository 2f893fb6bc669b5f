//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit when a
//! mandatory criterion fails. Criterion 8 runs only when `SFDANN_CWRU_DIR`
//! points at a recording tree.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use sfdann::adversarial::{classification_loss, domain_loss, lambda_schedule};
use sfdann::harness::{self, ExperimentConfig};
use sfdann::signal::{add_noise, measure_snr_db, Domain, NoiseSpec, Sample};
use sfdann::smartfilter::{guidance_loss, Strategy};
use sfdann::train::{Model, Variant};
use sfdann::wavelet::{wpt_decode, wpt_encode, CoeffGrid, FilterParams, Wavelet};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn perfect_reconstruction() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let params = FilterParams::wpt(Wavelet::Db4, 5);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let x = gaussian(&mut rng, 2048);
        let grid = wpt_encode(&x, &params).map_err(|e| e.to_string())?;
        let y = wpt_decode(&grid, &params).map_err(|e| e.to_string())?;
        worst = worst.max(max_abs_diff(&x, &y));
    }
    let t = start.elapsed();
    check(
        worst < 1e-9 && t < Duration::from_secs(10),
        format!("max error {worst:.2e} over 100 windows in {:.2}s", t.as_secs_f64()),
    )
}

fn identity_at_init() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let lwpt = FilterParams::lwpt(Wavelet::Db4, 5);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let x = gaussian(&mut rng, 2048);
        let grid = wpt_encode(&x, &lwpt).map_err(|e| e.to_string())?;
        worst = worst.max(max_abs_diff(&x, &wpt_decode(&grid, &lwpt).map_err(|e| e.to_string())?));
    }
    let windows: Vec<Vec<f64>> = (0..16).map(|_| gaussian(&mut rng, 512)).collect();
    let build = |variant: Variant| {
        Model::new(
            variant,
            variant.default_strategy(),
            Wavelet::Db4,
            3,
            4,
            &mut ChaCha8Rng::seed_from_u64(7),
        )
    };
    let smart = build(Variant::Sfdann).map_err(|e| e.to_string())?;
    let plain = build(Variant::DannPlain).map_err(|e| e.to_string())?;
    let mut forward = 0.0f64;
    for domain in [Domain::Source, Domain::Target] {
        let a = smart.predict_proba(&windows, domain).map_err(|e| e.to_string())?;
        let b = plain.predict_proba(&windows, domain).map_err(|e| e.to_string())?;
        for (pa, pb) in a.iter().zip(&b) {
            forward = forward.max(max_abs_diff(pa, pb));
        }
    }
    check(
        worst < 1e-6 && forward < 1e-6,
        format!("LWPT round trip {worst:.2e}, SFDANN vs DANN_PLAIN forward {forward:.2e}"),
    )
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let (text, ok, _) = harness::gradcheck(None).map_err(|e| e.to_string())?;
    let t = start.elapsed();
    let summary = text.lines().take(4).map(str::trim).collect::<Vec<_>>().join("; ");
    check(
        ok && t < Duration::from_secs(120),
        format!("{summary} ({:.1}s)", t.as_secs_f64()),
    )
}

/// Guidance loss evaluated with explicit loops over bands, samples and coefficients.
fn brute_guidance(s: &[CoeffGrid], t: &[CoeffGrid]) -> f64 {
    let bands = s[0].bands();
    let mut total = 0.0;
    for j in 0..bands {
        let mut es = 0.0;
        for g in s {
            let mut acc = 0.0;
            for k in 0..g.len() {
                acc += g.band(j)[k].abs();
            }
            es += acc / g.len() as f64;
        }
        es /= s.len() as f64;
        let mut et = 0.0;
        for g in t {
            let mut acc = 0.0;
            for k in 0..g.len() {
                acc += g.band(j)[k].abs();
            }
            et += acc / g.len() as f64;
        }
        et /= t.len() as f64;
        total += (es - et) * (es - et);
    }
    total / bands as f64
}

fn loss_oracles() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;
    let mut expect = |name: &str, got: f64, want: f64, tol: f64| {
        let pass = (got - want).abs() <= tol;
        ok &= pass;
        if !pass {
            notes.push(format!("{name} = {got} (want {want})"));
        }
    };
    let lam = |p| lambda_schedule(p).unwrap_or(f64::NAN);
    expect("lambda(0)", lam(0.0), 0.0, 0.0);
    expect("lambda(0.5)", lam(0.5), 0.986614, 1e-6);
    expect("lambda(1)", lam(1.0), 0.999909, 1e-6);
    let uniform = vec![vec![0.1; 10]; 5];
    let labels = [0, 3, 5, 7, 9];
    expect(
        "L_C uniform",
        classification_loss(&uniform, &labels).unwrap_or(f64::NAN),
        10f64.ln(),
        1e-9,
    );
    expect("L_D at 0.5", domain_loss(&[0.5; 4], &[0.5; 6]), 2.0 * 2f64.ln(), 1e-9);

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let levels = rng.random_range(1..=3);
        let bands = 1 << levels;
        let len = rng.random_range(1..=6);
        let batch = rng.random_range(1..=4);
        let mut grids = |n: usize| -> Vec<CoeffGrid> {
            (0..n)
                .map(|_| CoeffGrid::new(bands, len, gaussian(&mut rng, bands * len)).unwrap())
                .collect()
        };
        let s = grids(batch);
        let t = grids(batch);
        let fast = guidance_loss(&s, &t).unwrap_or(f64::NAN);
        worst = worst.max((fast - brute_guidance(&s, &t)).abs());
    }
    expect("guidance vs brute force", worst, 0.0, 1e-12);
    let detail = if notes.is_empty() {
        format!("lambda, L_C, L_D exact; guidance brute-force gap {worst:.1e} on 50 grids")
    } else {
        notes.join("; ")
    };
    check(ok, detail)
}

fn snr_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for snr in [-5.0, 0.0, 10.0] {
        for _ in 0..20 {
            let clean = Sample::new(gaussian(&mut rng, 512), Some(0), Domain::Target);
            let spec = NoiseSpec { snr_db: snr, seed: 0 };
            let noisy = add_noise(&clean, &spec, &mut rng).map_err(|e| e.to_string())?;
            worst = worst.max((measure_snr_db(&clean.window, &noisy.window) - snr).abs());
        }
    }
    check(worst < 1e-9, format!("max |realized - requested| = {worst:.2e} dB"))
}

/// The scaled transfer task behind criterion 6.
const TRANSFER: &str = "\
task = T01
seeds = 0, 1, 2, 3, 4

[noise]
domain = target
snr_db = -5

[filter]
layers = 3

[data]
kind = synthetic
window = 512

[train]
batch = 32
epochs = 60
";

fn transfer_trend(out: &Path) -> Outcome {
    let start = Instant::now();
    let cfg = ExperimentConfig::parse(TRANSFER, out).map_err(|e| e.to_string())?;
    let arms = [
        (Variant::Sfdann, Strategy::TargetToLwpt),
        (Variant::DannPlain, Strategy::None),
        (Variant::CnnOnly, Strategy::None),
    ];
    let report = harness::ablate_arms(&cfg, &arms).map_err(|e| e.to_string())?;
    let t = start.elapsed();
    let mean = |v, s| report.mean(v, s).unwrap_or(f64::NAN);
    let sf = mean(Variant::Sfdann, Strategy::TargetToLwpt);
    let dp = mean(Variant::DannPlain, Strategy::None);
    let cnn = mean(Variant::CnnOnly, Strategy::None);
    let mut detail = String::new();
    let _ = write!(
        detail,
        "SFDANN {:.1}%, DANN_PLAIN {:.1}%, CNN_ONLY {:.1}% ({:.0}s)",
        100.0 * sf,
        100.0 * dp,
        100.0 * cnn,
        t.as_secs_f64()
    );
    check(
        sf >= dp + 0.05 && sf >= cnn + 0.15 && t < Duration::from_secs(30 * 60),
        detail,
    )
}

const REPEAT: &str = "\
task = T01
seeds = 0, 1

[noise]
domain = target
snr_db = -5

[filter]
layers = 3

[data]
window = 256

[synth]
samples_per_class = 20

[train]
batch = 16
epochs = 4
";

fn determinism(out: &Path) -> Outcome {
    let mut csvs = Vec::new();
    for run in ["a", "b"] {
        let dir = out.join(run);
        let cfg = ExperimentConfig::parse(REPEAT, &dir).map_err(|e| e.to_string())?;
        harness::run(&cfg).map_err(|e| e.to_string())?;
        csvs.push(fs::read(cfg.out_dir.join("results.csv")).map_err(|e| e.to_string())?);
    }
    let ok = !csvs[0].is_empty() && csvs[0] == csvs[1];
    let detail = format!("results.csv identical across two runs ({} bytes)", csvs[0].len());
    check(ok, detail)
}

fn cwru_reproduction(root: &Path, out: &Path) -> Outcome {
    let mut clean = Vec::new();
    for task in ["T01", "T02", "T03"] {
        let text = format!(
            "task = {task}\n[data]\nkind = cwru-dir\npath = {}\nwindow = 2048\n",
            root.display()
        );
        let cfg = ExperimentConfig::parse(&text, &out.join(task)).map_err(|e| e.to_string())?;
        clean.push(harness::run(&cfg).map_err(|e| e.to_string())?.result.mean);
    }
    let mut noisy = Vec::new();
    for task in ["T01", "T02", "T03"] {
        let text = format!(
            "task = {task}\n[noise]\ndomain = target\nsnr_db = 0\n[data]\nkind = cwru-dir\npath = {}\nwindow = 2048\n",
            root.display()
        );
        let cfg = ExperimentConfig::parse(&text, &out.join(format!("{task}-snr0")))
            .map_err(|e| e.to_string())?;
        noisy.push(harness::run(&cfg).map_err(|e| e.to_string())?.result.mean);
    }
    let avg = noisy.iter().sum::<f64>() / noisy.len() as f64;
    check(
        clean.iter().all(|m| *m >= 0.98) && (avg - 0.963).abs() <= 0.05,
        format!(
            "no-noise means {:?}, SNR 0 average {:.1}%",
            clean.iter().map(|m| format!("{:.1}%", 100.0 * m)).collect::<Vec<_>>(),
            100.0 * avg
        ),
    )
}

fn main() -> ExitCode {
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let wanted = |n: usize| only.as_ref().is_none_or(|v| v.contains(&n));
    let scratch = tempfile::tempdir().expect("temp dir");
    let dir = scratch.path();

    let mut failed = 0;
    let mut report = |n: usize, name: &str, outcome: Outcome| {
        match &outcome {
            Ok(d) => println!("criterion {n} PASS  {name}: {d}"),
            Err(d) => {
                failed += 1;
                println!("criterion {n} FAIL  {name}: {d}");
            }
        }
    };
    let criteria: [(usize, &str, &dyn Fn() -> Outcome); 7] = [
        (1, "perfect reconstruction", &perfect_reconstruction),
        (2, "LWPT identity at init", &identity_at_init),
        (3, "gradient correctness", &gradient_correctness),
        (4, "closed-form loss oracles", &loss_oracles),
        (5, "SNR exactness", &snr_exactness),
        (6, "synthetic transfer trend", &|| transfer_trend(&dir.join("transfer"))),
        (7, "determinism", &|| determinism(&dir.join("repeat"))),
    ];
    for (n, name, f) in criteria {
        if wanted(n) {
            report(n, name, f());
        }
    }
    if wanted(8) {
        match std::env::var_os("SFDANN_CWRU_DIR") {
            Some(root) => match cwru_reproduction(Path::new(&root), &dir.join("cwru")) {
                Ok(d) => println!("criterion 8 PASS  CWRU reproduction (optional): {d}"),
                Err(d) => println!("criterion 8 FAIL  CWRU reproduction (optional, not gating): {d}"),
            },
            None => println!("criterion 8 SKIP  CWRU reproduction (optional): SFDANN_CWRU_DIR not set"),
        }
    }
    if failed > 0 {
        println!("{failed} mandatory criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
