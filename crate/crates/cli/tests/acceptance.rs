//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.
//!
//! Criteria 3 to 6 read the artifacts of one default-grid run of the binary,
//! kept under the cargo target tmpdir for inspection.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use redcmp::corpus::{build_corpus, SetId, Subset};
use redcmp::eval::{decode_accuracy, windows_for};
use redcmp::numerics::Vector;
use redcmp::red::red_loss;
use redcmp::train::{train, HyperParams};
use redcmp::{LstmParams, LstmState};
use redcmp::{ParamSet, RedModel, Rng, Variant};
use redcmp_cli::report::{self, Claim, Tables, Verdict};
use redcmp_cli::Cell;

const FD_EPS: f64 = 1e-5;

struct Outcome {
    pass: bool,
    detail: String,
}

fn run_dir(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR"))
        .join("acceptance")
        .join(name);
    let _ = fs::remove_dir_all(&dir);
    dir
}

fn redcmp(args: &[&str], out: &Path) -> Result<Duration, String> {
    let started = Instant::now();
    let output = Command::new(env!("CARGO_BIN_EXE_redcmp"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env("RUST_LOG", "warn")
        .output()
        .map_err(|e| e.to_string())?;
    if output.status.success() {
        Ok(started.elapsed())
    } else {
        Err(format!(
            "redcmp {args:?} exited with {}: {}",
            output.status,
            String::from_utf8_lossy(&output.stderr).trim()
        ))
    }
}

fn gaussian_vec(rng: &mut Rng, n: usize, scale: f64) -> Vector<f64> {
    (0..n).map(|_| scale * rng.gaussian()).collect()
}

fn one_hot(k: usize, n: usize) -> Vector<f64> {
    (0..n).map(|i| if i == k { 1.0 } else { 0.0 }).collect()
}

/// `|a - n| / max(|a|, |n|)` over whole gradient vectors, plus the worst
/// entry-wise error relative to the largest entry.
fn gradient_errors(analytic: &[f64], numeric: &[f64]) -> (f64, f64) {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    let scale = norm(analytic).max(norm(numeric)).max(f64::MIN_POSITIVE);
    let inf = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let inf_scale = inf(analytic).max(inf(numeric)).max(f64::MIN_POSITIVE);
    (norm(&diff) / scale, inf(&diff) / inf_scale)
}

/// Central differences of `f` with respect to every entry of `params`.
fn central_differences<P: ParamSet<f64> + Clone>(params: &P, f: impl Fn(&P) -> f64) -> Vec<f64> {
    let mut out = Vec::new();
    let arrays = params.slices().len();
    for a in 0..arrays {
        for k in 0..params.slices()[a].len() {
            let mut plus = params.clone();
            plus.slices_mut()[a][k] += FD_EPS;
            let mut minus = params.clone();
            minus.slices_mut()[a][k] -= FD_EPS;
            out.push((f(&plus) - f(&minus)) / (2.0 * FD_EPS));
        }
    }
    out
}

/// A random linear functional of every hidden state and the final cell state,
/// differentiated through BPTT, including the initial-state gradient.
fn cell_instance(rng: &mut Rng) -> (f64, f64) {
    let input = 1 + rng.below(5);
    let hidden = 1 + rng.below(4);
    let len = 1 + rng.below(6);
    let p = LstmParams::init(input, hidden, rng);
    let xs: Vec<Vector<f64>> = (0..len).map(|_| gaussian_vec(rng, input, 1.0)).collect();
    let s0 = LstmState {
        h: gaussian_vec(rng, hidden, 0.5),
        c: gaussian_vec(rng, hidden, 0.5),
    };
    let r: Vec<Vector<f64>> = (0..len).map(|_| gaussian_vec(rng, hidden, 1.0)).collect();
    let q = LstmState {
        h: gaussian_vec(rng, hidden, 1.0),
        c: gaussian_vec(rng, hidden, 1.0),
    };
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let objective = |p: &LstmParams, s0: &LstmState| {
        let (traces, last) = p.forward(&xs, s0).unwrap();
        traces
            .iter()
            .zip(&r)
            .map(|(t, w)| dot(&t.h, w))
            .sum::<f64>()
            + dot(&last.h, &q.h)
            + dot(&last.c, &q.c)
    };

    let (traces, _) = p.forward(&xs, &s0).unwrap();
    let (grads, d0) = p.bptt(&traces, &r, &q).unwrap();
    let mut analytic = grads.slices().concat();
    analytic.extend(d0.h.iter().chain(d0.c.iter()));

    let mut numeric = central_differences(&p, |pp| objective(pp, &s0));
    let state: Vec<f64> = s0.h.iter().chain(s0.c.iter()).copied().collect();
    numeric.extend(central_differences(&state, |s| {
        let (h, c) = s.split_at(hidden);
        objective(
            &p,
            &LstmState {
                h: h.to_vec().into(),
                c: c.to_vec().into(),
            },
        )
    }));
    gradient_errors(&analytic, &numeric)
}

fn model_instance(rng: &mut Rng) -> (f64, f64) {
    let alphabet = 2 + rng.below(4);
    let hidden = 1 + rng.below(4);
    let len = 1 + rng.below(6);
    let variant = [Variant::A, Variant::B, Variant::C][rng.below(3)];
    let m = RedModel::init(alphabet, hidden, len, variant, rng);
    let noisy = rng.below(2) == 1;
    let xs: Vec<Vector<f64>> = (0..len)
        .map(|_| {
            let mut v = one_hot(rng.below(alphabet), alphabet);
            if noisy {
                for x in v.iter_mut() {
                    *x += 0.2 * rng.gaussian();
                }
            }
            v
        })
        .collect();
    let ys: Vec<Vector<f64>> = (0..len)
        .map(|_| one_hot(rng.below(alphabet), alphabet))
        .collect();
    let analytic = m
        .backward(&m.forward(&xs).unwrap(), &ys)
        .unwrap()
        .slices()
        .concat();
    let numeric = central_differences(&m.params, |params| {
        let mm = RedModel {
            params: params.clone(),
            ..m.clone()
        };
        red_loss(&mm.forward(&xs).unwrap(), &ys).unwrap()
    });
    gradient_errors(&analytic, &numeric)
}

fn criterion_1() -> Outcome {
    let started = Instant::now();
    let mut rng = Rng::new(2024);
    let worst = |errs: Vec<(f64, f64)>| {
        errs.iter()
            .fold((0.0f64, 0.0f64), |(a, b), &(x, y)| (a.max(x), b.max(y)))
    };
    let cell = worst((0..100).map(|_| cell_instance(&mut rng)).collect());
    let model = worst((0..25).map(|_| model_instance(&mut rng)).collect());
    let secs = started.elapsed().as_secs_f64();
    Outcome {
        pass: cell.0 < 1e-6 && model.0 < 1e-5 && secs < 30.0,
        detail: format!(
            "cell max rel {:.2e} (< 1e-6, entry-wise {:.2e}) over 100; model max rel {:.2e} (< 1e-5, entry-wise {:.2e}) over 25; {secs:.1}s (< 30s)",
            cell.0, cell.1, model.0, model.1
        ),
    }
}

fn criterion_2() -> Outcome {
    let mut rng = Rng::new(7);
    let mut checked = 0;
    let mut mismatches = Vec::new();
    for alphabet in [5, 15] {
        for hidden in [1, 4, 64] {
            for len in [3, 8] {
                let counts: Vec<usize> = [Variant::A, Variant::B, Variant::C]
                    .iter()
                    .map(|&v| RedModel::init(alphabet, hidden, len, v, &mut rng).param_count())
                    .collect();
                let formula = 2 * 4 * (hidden * alphabet + hidden * hidden + hidden)
                    + alphabet * hidden
                    + alphabet;
                if counts.iter().any(|&c| c != formula) {
                    mismatches.push(format!("K={alphabet} H={hidden} L={len}: {counts:?}"));
                }
                checked += 1;
            }
        }
    }
    Outcome {
        pass: mismatches.is_empty(),
        detail: format!(
            "{checked} dimension settings, A = B = C = 8H(K+H+1) + K(H+1); mismatches: {}",
            if mismatches.is_empty() {
                "none".to_string()
            } else {
                mismatches.join("; ")
            }
        ),
    }
}

fn claims_outcome(claims: &[Claim]) -> Outcome {
    Outcome {
        pass: !claims.is_empty() && claims.iter().all(|c| c.verdict == Verdict::Pass),
        detail: claims
            .iter()
            .map(Claim::line)
            .collect::<Vec<_>>()
            .join("\n      "),
    }
}

fn criterion_3(tables: &Tables, grid_time: Duration) -> Outcome {
    let mut o = claims_outcome(&report::c_lowest_claims(tables));
    let mins = grid_time.as_secs_f64() / 60.0;
    o.pass &= mins < 30.0;
    o.detail = format!(
        "default grid (gen+train+eval+report) {mins:.1} min (< 30)\n      {}",
        o.detail
    );
    o
}

fn criterion_4(tables: &Tables) -> Outcome {
    let mut claims = vec![report::separation_claim(tables)];
    claims.extend(report::auc_claims(tables));
    claims_outcome(&claims)
}

fn criterion_7() -> Outcome {
    let started = Instant::now();
    let cell = Cell {
        seed: 1,
        set: SetId::A,
        train_subset: Subset::Clear,
        seq_len: 5,
        variant: Variant::C,
        probe: false,
    };
    let corpus = build_corpus(SetId::A, Subset::Clear, 3000, cell.seed).unwrap();
    let model = RedModel::init(5, 64, 5, Variant::C, &mut Rng::new(cell.init_seed()));
    let pairs = windows_for(&model, &corpus, None);
    let hyper = HyperParams {
        seed: cell.shuffle_seed(),
        ..HyperParams::default()
    };
    let result = train(model, &pairs, &hyper);
    let secs = started.elapsed().as_secs_f64();
    match result {
        Ok((trained, curve)) => {
            let acc = decode_accuracy(&trained, &pairs).unwrap();
            Outcome {
                pass: acc == 1.0 && curve.losses.len() <= 200 && secs < 60.0,
                detail: format!(
                    "training decode accuracy {acc} after {} epochs, final loss {:.2e}; {secs:.1}s (< 60s)",
                    curve.losses.len(),
                    curve.final_loss().unwrap_or(f64::NAN)
                ),
            }
        }
        Err(e) => Outcome {
            pass: false,
            detail: format!("training failed: {e}"),
        },
    }
}

fn files_under(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).into_iter().flatten().flatten() {
            let p = entry.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

/// Two complete runs of a one-seed, all-dataset config at different worker
/// counts; every file in the two trees must match byte for byte.
fn criterion_8() -> Outcome {
    let dir = run_dir("determinism");
    fs::create_dir_all(&dir).unwrap();
    let cfg = dir.join("config.txt");
    fs::write(
        &cfg,
        "seeds = 3\nseq_lens_a = 3,5,8\nseq_lens_b = 4,15\nseq_lens_c = 8,15\nepochs = 20\n",
    )
    .unwrap();
    let cfg = cfg.to_str().unwrap();
    let (one, two) = (dir.join("first"), dir.join("second"));
    if let Err(e) = redcmp(&["--config", cfg, "--jobs", "1", "run"], &one)
        .and_then(|_| redcmp(&["--config", cfg, "--jobs", "3", "run"], &two))
    {
        return Outcome {
            pass: false,
            detail: e,
        };
    }
    let (a, b) = (files_under(&one), files_under(&two));
    let differing: Vec<String> = a
        .iter()
        .filter(|p| fs::read(one.join(p)).ok() != fs::read(two.join(p)).ok())
        .map(|p| p.display().to_string())
        .collect();
    let csvs = a
        .iter()
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .count();
    Outcome {
        pass: a == b && differing.is_empty() && a.iter().any(|p| p.ends_with("report.txt")),
        detail: format!(
            "{} files ({csvs} CSV) compared across --jobs 1 and --jobs 3; {} differ{}",
            a.len(),
            differing.len(),
            if a == b { "" } else { "; file sets differ" }
        ),
    }
}

fn main() {
    // Criteria 1, 2, 7 and 8 need no grid run.
    let mut results: Vec<(usize, &str, Outcome)> = vec![
        (1, "gradient correctness", criterion_1()),
        (2, "parameter parity", criterion_2()),
        (7, "convergence sanity", criterion_7()),
        (8, "determinism", criterion_8()),
    ];

    let grid = run_dir("default_grid");
    let jobs = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .to_string();
    let grid_run = redcmp(&["--jobs", &jobs, "run"], &grid);
    match grid_run.map_err(|e| e.to_string()).and_then(|t| {
        Tables::load(&grid)
            .map(|tab| (t, tab))
            .map_err(|e| e.to_string())
    }) {
        Ok((elapsed, tables)) => {
            results.push((3, "training-loss ordering", criterion_3(&tables, elapsed)));
            results.push((4, "class separation", criterion_4(&tables)));
            results.push((
                5,
                "asynchronous Set-C gap",
                claims_outcome(&[report::async_claim(&tables)]),
            ));
            results.push((
                6,
                "noise robustness",
                claims_outcome(&[report::noise_claim(&tables)]),
            ));
        }
        Err(e) => {
            for (k, name) in [
                (3, "training-loss ordering"),
                (4, "class separation"),
                (5, "asynchronous Set-C gap"),
                (6, "noise robustness"),
            ] {
                results.push((
                    k,
                    name,
                    Outcome {
                        pass: false,
                        detail: format!("default grid run failed: {e}"),
                    },
                ));
            }
        }
    }
    results.sort_by_key(|r| r.0);

    println!("\nacceptance (default grid artifacts: {})", grid.display());
    for (k, name, o) in &results {
        println!(
            "{} criterion {k} {name}\n      {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
    }
    let failed = results.iter().filter(|r| !r.2.pass).count();
    println!("\n{} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
