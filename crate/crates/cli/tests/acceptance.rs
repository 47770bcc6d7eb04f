//! Acceptance suite: one PASS/FAIL/SKIP line per criterion. Exits nonzero
//! when any criterion fails.

#[path = "../../core/tests/support/mod.rs"]
mod support;

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use biascope::coref_eval::{
    ar_test, bias_report, max_weight_assignment, parse_predictions, parse_winobias, phi4_matrix, score, Clustering,
    Condition, Metric, ReportOptions, Span, TaskType,
};
use biascope::corpus_stats::Scanner;
use biascope::embedding_store::{AlignedPair, EmbeddingStore, StoreError, StoreWriter};
use biascope::genderswap::{
    augment_corpus, read_conll, swap_coref_document, AugmentOptions, CasePattern, GenderSwapper,
};
use biascope::lexicon::GenderLexicon;
use biascope::neutralize::{neutralize_pair, neutralize_store};
use biascope::probe::{evaluate_by_group, split_indices, train, ProbeConfig};
use biascope::subspace::{pca, DifferenceMatrix, PcaResult};
use biascope::Gender;
use ndarray::{array, Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde_json::Value;
use support::*;

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

type Check = fn() -> Outcome;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Outcome::Fail(format!($($msg)+));
        }
    };
}

fn main() {
    let criteria: [(&str, Check); 10] = [
        ("corpus-stats", corpus_stats),
        ("large-corpus-ratio", large_corpus_ratio),
        ("swap-properties", swap_properties),
        ("embedding-store", embedding_store),
        ("pca", pca_criterion),
        ("probe", probe_criterion),
        ("neutralization", neutralization),
        ("coref-metrics", coref_metrics),
        ("bias-report-harness", bias_report_harness),
        ("audit-end-to-end", audit_end_to_end),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Outcome::Fail(format!("panicked: {msg}"))
        });
        let (tag, detail) = match outcome {
            Outcome::Pass(d) => ("PASS", d),
            Outcome::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Outcome::Skip(d) => ("SKIP", d),
        };
        println!("{tag} {name}: {detail}");
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

fn fixture_lines() -> Vec<String> {
    fs::read_to_string(fixture("corpus.txt"))
        .unwrap()
        .lines()
        .map(str::to_string)
        .collect()
}

fn corpus_stats() -> Outcome {
    let expected: Value = serde_json::from_str(&fs::read_to_string(fixture("corpus_expected.json")).unwrap()).unwrap();
    let scanner = Scanner::new(&GenderLexicon::default_lexicon());
    let lines = fixture_lines();
    let start = Instant::now();
    let runs: Vec<String> = [1, 2, 8]
        .iter()
        .map(|&t| scanner.scan_lines(&lines, false, t).to_json_pretty())
        .collect();
    let elapsed = start.elapsed().as_secs_f64();
    let got: Value = serde_json::from_str(&runs[0]).unwrap();
    for key in ["male_total", "female_total", "cooc", "sentences_seen", "tokens_seen"] {
        ensure!(got[key] == expected[key], "{key}: {} vs {}", got[key], expected[key]);
    }
    ensure!(runs[1] == runs[0] && runs[2] == runs[0], "worker counts disagree");
    ensure!(elapsed < 1.0, "took {elapsed:.3}s");
    Outcome::Pass(format!("exact match, 1/2/8 workers identical, {:.1} ms", elapsed * 1e3))
}

/// Optional: `BIASCOPE_LARGE_CORPUS` names a corpus file or a directory of
/// shards (one sentence per line).
fn large_corpus_ratio() -> Outcome {
    let Some(root) = std::env::var_os("BIASCOPE_LARGE_CORPUS") else {
        return Outcome::Skip("BIASCOPE_LARGE_CORPUS not set".into());
    };
    let root = Path::new(&root);
    let mut files = Vec::new();
    if root.is_dir() {
        for e in fs::read_dir(root).unwrap() {
            files.push(e.unwrap().path());
        }
        files.sort();
    } else {
        files.push(root.to_path_buf());
    }
    let scanner = Scanner::new(&GenderLexicon::default_lexicon());
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    let (mut male, mut female) = (0u64, 0u64);
    for f in files.iter().filter(|f| f.is_file()) {
        let s = scanner
            .scan_reader(std::io::BufReader::new(fs::File::open(f).unwrap()), false, threads)
            .unwrap();
        male += s.male_total;
        female += s.female_total;
    }
    ensure!(female > 0, "no female pronouns found");
    let ratio = male as f64 / female as f64;
    let target = 5.3 / 1.6;
    ensure!((ratio / target - 1.0).abs() <= 0.10, "ratio {ratio:.3} vs {target:.3}");
    Outcome::Pass(format!("male {male}, female {female}, ratio {ratio:.3}"))
}

fn swap_properties() -> Outcome {
    let lex = GenderLexicon::default_lexicon();
    let sw = GenderSwapper::new(&lex);
    let gendered: Vec<String> = lex.unambiguous_pairs().into_iter().flat_map(|(m, f)| [m, f]).collect();
    let fillers = ["the", "dog", "ran", "to", "school", ",", "."];
    let mut r = rng(21);
    for i in 0..1000 {
        let s: Vec<String> = (0..r.gen_range(1..16))
            .map(|_| {
                if r.gen_bool(0.4) {
                    let w = gendered.choose(&mut r).unwrap();
                    [CasePattern::Lower, CasePattern::Initial, CasePattern::Upper][r.gen_range(0..3)].apply(w)
                } else {
                    fillers.choose(&mut r).unwrap().to_string()
                }
            })
            .collect();
        let once = sw.swap_sentence::<_, &str>(&s, None).unwrap();
        ensure!(once.tokens.len() == s.len(), "sentence {i}: length changed");
        for rec in &once.direction_map {
            ensure!(
                CasePattern::of(&rec.original) == CasePattern::of(&rec.replacement),
                "sentence {i}: case of {rec:?}"
            );
        }
        let twice = sw.swap_sentence::<_, &str>(&once.tokens, None).unwrap();
        ensure!(twice.tokens == s, "sentence {i}: not an involution");
    }
    let docs = read_conll(&fs::read_to_string(fixture("docs.conll")).unwrap()).unwrap();
    for d in &docs {
        let out = swap_coref_document(d, &sw, AugmentOptions::default()).unwrap();
        ensure!(
            out.coref_spans == d.coref_spans && out.ner == d.ner && out.pos == d.pos,
            "{}: annotations changed",
            d.doc_id
        );
    }
    let aug = augment_corpus(&docs, &sw, AugmentOptions::default(), 4).unwrap();
    ensure!(aug.len() == 2 * docs.len(), "{} documents", aug.len());
    let stats = Scanner::new(&lex).scan(aug.iter().flat_map(|d| d.sentences.iter()));
    ensure!(
        stats.male_total == stats.female_total,
        "{} vs {}",
        stats.male_total,
        stats.female_total
    );
    Outcome::Pass(format!(
        "1000 sentences involutive, {} -> {} docs, pronouns {}/{}",
        docs.len(),
        aug.len(),
        stats.male_total,
        stats.female_total
    ))
}

fn embedding_store() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("big.cemb");
    let mut r = rng(1);
    let dim = 8;
    let mut writer = StoreWriter::create(&path, dim, "top").unwrap();
    let mut expected = Vec::new();
    let mut written = 0;
    let specials = [
        0.0f32,
        -0.0,
        f32::from_bits(1),
        -f32::from_bits(0x007f_ffff),
        f32::MAX,
        f32::MIN,
    ];
    while written < 10_000 {
        let tokens = r.gen_range(1..12).min(10_000 - written);
        let data: Vec<f32> = (0..tokens * dim)
            .map(|k| {
                if written == 0 && k < specials.len() {
                    return specials[k];
                }
                loop {
                    let v = f32::from_bits(r.gen());
                    if v.is_finite() {
                        break v;
                    }
                }
            })
            .collect();
        let m = Array2::from_shape_vec((tokens, dim), data).unwrap();
        let id = format!("s{}", expected.len());
        let words: Vec<String> = (0..tokens).map(|t| format!("w{t}")).collect();
        writer.append(&id, &words, m.view()).unwrap();
        expected.push((id, m));
        written += tokens;
    }
    writer.finish().unwrap();
    let store = EmbeddingStore::open(&path).unwrap();
    let (mut neg_zero, mut subnormal) = (false, false);
    for (id, m) in &expected {
        let back = store.read_vectors(id, None).unwrap();
        for (a, b) in back.iter().zip(m) {
            ensure!(a.to_bits() == b.to_bits(), "{id}: {a:e} != {b:e}");
            neg_zero |= b.to_bits() == 0x8000_0000;
            subnormal |= b.is_subnormal();
        }
    }
    ensure!(neg_zero && subnormal, "special values missing from the sample");

    let classes: Value = serde_json::from_str(&fs::read_to_string(fixture("corrupt/expected.json")).unwrap()).unwrap();
    let classes = classes.as_object().unwrap();
    for (name, class) in classes {
        let got = match EmbeddingStore::open(fixture(&format!("corrupt/{name}"))) {
            Err(StoreError::CorruptHeader { .. }) => "corrupt_header",
            Err(StoreError::Inconsistent { .. }) => "inconsistent",
            Err(e) => return Outcome::Fail(format!("{name}: unexpected error {e}")),
            Ok(_) => return Outcome::Fail(format!("{name}: opened")),
        };
        ensure!(class == got, "{name}: {got}, expected {class}");
    }
    Outcome::Pass(format!(
        "10000 vectors bit-exact, {} corrupt files classified",
        classes.len()
    ))
}

fn fit(x: Array2<f64>, k: usize) -> PcaResult {
    pca(&DifferenceMatrix::from_rows(x).unwrap(), k, true).unwrap()
}

fn same_up_to_sign(a: &Array1<f64>, b: &Array1<f64>, tol: f64) -> bool {
    let plus = (a - b).iter().all(|v| v.abs() <= tol);
    let minus = (a + b).iter().all(|v| v.abs() <= tol);
    plus || minus
}

fn pca_criterion() -> Outcome {
    let mut r = rng(3);
    let mut worst_ortho = 0.0f64;
    for _ in 0..30 {
        let d = r.gen_range(1..12);
        let n = r.gen_range(2..40);
        let p = fit(gaussian_matrix(&mut r, n, d, 1.0), d);
        worst_ortho = worst_ortho.max(p.orthonormality_residual());
        let sum: f64 = p.explained_ratio.iter().sum();
        ensure!((sum - 1.0).abs() <= 1e-9, "ratios sum to {sum}");
    }
    ensure!(worst_ortho <= 1e-6, "orthonormality residual {worst_ortho:e}");

    for _ in 0..50 {
        let n = r.gen_range(3..30);
        let scale = r.gen_range(0.1..10.0);
        let x = gaussian_matrix(&mut r, n, 2, scale);
        let mean = [x.column(0).sum() / n as f64, x.column(1).sum() / n as f64];
        let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
        for row in x.rows() {
            let (u, v) = (row[0] - mean[0], row[1] - mean[1]);
            a += u * u;
            b += u * v;
            c += v * v;
        }
        let s = (n - 1) as f64;
        let (a, b, c) = (a / s, b / s, c / s);
        let mid = (a + c) / 2.0;
        let rad = (((a - c) / 2.0).powi(2) + b * b).sqrt();
        let theta = 0.5 * (2.0 * b).atan2(a - c);
        let p = fit(x, 2);
        ensure!(
            (p.eigenvalues[0] - (mid + rad)).abs() <= 1e-9 * (1.0 + mid),
            "2-D eigenvalue"
        );
        ensure!(
            (p.eigenvalues[1] - (mid - rad)).abs() <= 1e-9 * (1.0 + mid),
            "2-D eigenvalue"
        );
        ensure!(
            same_up_to_sign(&p.components.row(0).to_owned(), &array![theta.cos(), theta.sin()], 1e-9),
            "2-D eigenvector"
        );
    }

    for trial in 0..100 {
        let d = r.gen_range(2..6);
        let x = gaussian_matrix(&mut r, 20, d, 1.0);
        let base = fit(x.clone(), d);
        let rot = random_rotation(&mut r, d);
        let rotated = fit(x.dot(&rot.t()), d);
        let scale: f64 = r.gen_range(0.01..100.0);
        let scaled = fit(&x * scale, d);
        for i in 0..d {
            let expected = rot.dot(&base.components.row(i));
            ensure!(
                same_up_to_sign(&rotated.components.row(i).to_owned(), &expected, 1e-8),
                "trial {trial}: rotation"
            );
            ensure!(
                (rotated.explained_ratio[i] - base.explained_ratio[i]).abs() <= 1e-8,
                "trial {trial}: rotation ratio"
            );
            let moved = &scaled.components.row(i) - &base.components.row(i);
            ensure!(moved.iter().all(|v| v.abs() <= 1e-8), "trial {trial}: scale");
        }
    }

    let d = 64;
    let unit = |v: Array1<f64>| &v / v.dot(&v).sqrt();
    let c_dir = unit(gaussian_matrix(&mut r, 1, d, 1.0).row(0).to_owned());
    let o_dir = unit(gaussian_matrix(&mut r, 1, d, 1.0).row(0).to_owned());
    let mut x = Array2::zeros((400, d));
    for mut row in x.rows_mut() {
        let ctx = if r.gen::<bool>() { 1.0 } else { -1.0 };
        let occ = if r.gen::<bool>() { 0.5 } else { -0.5 };
        let noise = gaussian_matrix(&mut r, 1, d, 0.01);
        row.assign(&(&c_dir * ctx + &o_dir * occ + noise.row(0)));
    }
    let p = fit(x, 10);
    let top2 = p.explained_ratio[0] + p.explained_ratio[1];
    ensure!(top2 >= 0.95, "rank-2 construction top-2 {top2:.4}");
    Outcome::Pass(format!(
        "residual {worst_ortho:.1e}, 100 equivariance trials, rank-2 top-2 {top2:.4}"
    ))
}

fn probe_criterion() -> Outcome {
    let mut r = rng(11);
    let mut worst = 0.0f64;
    for case in 0..50 {
        let n = r.gen_range(2..=6);
        let d = r.gen_range(1..=3);
        let x = gaussian_matrix(&mut r, n, d, 1.0);
        let mut y: Vec<i8> = (0..n).map(|_| if r.gen::<bool>() { 1 } else { -1 }).collect();
        y[0] = 1;
        y[1] = -1;
        let pos = y.iter().filter(|&&v| v > 0).count();
        let nu = r.gen_range(0.05..=2.0 * pos.min(n - pos) as f64 / n as f64);
        let gamma = r.gen_range(0.2..2.0);
        let cfg = ProbeConfig {
            nu,
            gamma: Some(gamma),
            kkt_tolerance: 1e-6,
            ..Default::default()
        };
        let model = train(x.view(), &y, &cfg).unwrap();
        let yf: Vec<f64> = y.iter().map(|&v| v as f64).collect();
        let Some(oracle) = nu_svc_dual_oracle(&rbf_kernel(&x, gamma), &yf, nu) else {
            return Outcome::Fail(format!("case {case}: oracle found no feasible point"));
        };
        worst = worst.max((model.dual_objective - oracle).abs());
    }
    ensure!(worst <= 1e-3, "dual objective off by {worst:e}");

    let mut checked = 0;
    for seed in 0..50 {
        let mut r = rng(1000 + seed);
        let x = gaussian_matrix(&mut r, 40, 2, 1.0);
        let y: Vec<i8> = (0..40)
            .map(|i| {
                if x[[i, 0]] + 0.5 * x[[i, 1]] + 0.7 * gaussian(&mut r) >= 0.0 {
                    1
                } else {
                    -1
                }
            })
            .collect();
        let pos = y.iter().filter(|&&v| v > 0).count();
        if !(4..=36).contains(&pos) {
            continue;
        }
        let nu = r.gen_range(0.1..(2.0 * pos.min(40 - pos) as f64 / 40.0).min(0.9));
        let cfg = ProbeConfig {
            nu,
            ..Default::default()
        };
        let m = train(x.view(), &y, &cfg).unwrap();
        let l = 40.0;
        let errors = x
            .rows()
            .into_iter()
            .zip(&y)
            .filter(|(row, yi)| **yi as f64 * m.decision(row.view()).unwrap() < m.rho - cfg.kkt_tolerance / l)
            .count() as f64;
        let sv = m.n_support() as f64;
        ensure!(
            errors / l <= nu + 1.0 / l && nu <= sv / l + 1.0 / l,
            "seed {seed}: nu-property"
        );
        checked += 1;
    }

    let (x, y) = separable_data(200, 5, 8);
    let (tr, te) = split_indices(y.len(), 0.25, 0);
    let yt: Vec<i8> = tr.iter().map(|&i| y[i]).collect();
    let m = train(
        x.select(Axis(0), &tr).view(),
        &yt,
        &ProbeConfig {
            nu: 0.2,
            ..Default::default()
        },
    )
    .unwrap();
    let preds = m.predict_all(x.select(Axis(0), &te).view(), 2).unwrap();
    let acc = preds.iter().zip(&te).filter(|(p, &i)| p.label == y[i]).count() as f64 / te.len() as f64;
    ensure!(acc >= 0.99, "separable accuracy {acc}");

    let mut gaps = Vec::new();
    for seed in 0..5 {
        let gap = |seed: u64| {
            let (x, y) = gender_signal_data(300, 8, 0.4, seed);
            let groups: Vec<Gender> = y
                .iter()
                .map(|&v| if v > 0 { Gender::Male } else { Gender::Female })
                .collect();
            let (tr, te) = split_indices(y.len(), 0.5, seed);
            let yt: Vec<i8> = tr.iter().map(|&i| y[i]).collect();
            let cfg = ProbeConfig {
                nu: 0.3,
                seed,
                ..Default::default()
            };
            let m = train(x.select(Axis(0), &tr).view(), &yt, &cfg).unwrap();
            let ye: Vec<i8> = te.iter().map(|&i| y[i]).collect();
            let ge: Vec<Gender> = te.iter().map(|&i| groups[i]).collect();
            let acc = evaluate_by_group(&m, x.select(Axis(0), &te).view(), &ye, &ge).unwrap();
            acc.male.unwrap().accuracy - acc.female.unwrap().accuracy
        };
        let g = gap(seed);
        ensure!(g > 0.0, "seed {seed}: gap {g}");
        ensure!(gap(seed) == g, "seed {seed}: not reproducible");
        gaps.push(format!("{g:+.1}"));
    }
    Outcome::Pass(format!(
        "dual within {worst:.1e}, nu-property on {checked} sets, separable {:.1}%, M-F gap [{}] pts",
        100.0 * acc,
        gaps.join(" ")
    ))
}

fn all_bits(s: &EmbeddingStore) -> Vec<(String, Vec<u32>)> {
    s.ids()
        .map(|id| {
            (
                id.to_string(),
                s.read_vectors(id, None).unwrap().iter().map(|v| v.to_bits()).collect(),
            )
        })
        .collect()
}

fn neutralization() -> Outcome {
    let mut r = rng(3);
    for i in 0..100 {
        let n = r.gen_range(1..6);
        let mut m = || Array2::from_shape_fn((n, 4), |_| r.gen_range(-100.0f32..100.0));
        let pair = AlignedPair {
            sentence_id: "x".into(),
            tokens_a: vec!["he".into(); n],
            tokens_b: vec!["she".into(); n],
            vectors_a: m(),
            vectors_b: m(),
        };
        let ab = neutralize_pair(&pair).unwrap().vectors;
        let flipped = AlignedPair {
            vectors_a: pair.vectors_b.clone(),
            vectors_b: pair.vectors_a.clone(),
            ..pair.clone()
        };
        ensure!(
            neutralize_pair(&flipped).unwrap().vectors == ab,
            "pair {i}: not symmetric"
        );
        let again = AlignedPair {
            vectors_a: ab.clone(),
            vectors_b: ab.clone(),
            ..pair.clone()
        };
        ensure!(
            neutralize_pair(&again).unwrap().vectors == ab,
            "pair {i}: not idempotent"
        );
    }
    for i in 0..50 {
        let v = Array2::from_shape_fn((4, 8), |_| r.gen_range(-512i32..512) as f32 / 64.0);
        let g: Vec<f32> = (0..8).map(|_| r.gen_range(-64i32..64) as f32 / 32.0).collect();
        let row = r.gen_range(0..4);
        let (mut a, mut b) = (v.clone(), v.clone());
        for j in 0..8 {
            a[[row, j]] += g[j];
            b[[row, j]] -= g[j];
        }
        let pair = AlignedPair {
            sentence_id: "x".into(),
            tokens_a: vec!["t".into(); 4],
            tokens_b: vec!["t".into(); 4],
            vectors_a: a,
            vectors_b: b,
        };
        ensure!(
            neutralize_pair(&pair).unwrap().vectors == v,
            "case {i}: v+g and v-g did not cancel"
        );
    }
    let a = EmbeddingStore::open(fixture("pairs_a.cemb")).unwrap();
    let b = EmbeddingStore::open(fixture("pairs_b.cemb")).unwrap();
    let expected = EmbeddingStore::open(fixture("neutral_expected.cemb")).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("n.cemb");
    neutralize_store(&a, &b, &out, 4).unwrap();
    ensure!(
        all_bits(&EmbeddingStore::open(&out).unwrap()) == all_bits(&expected),
        "fixture average differs"
    );
    Outcome::Pass(format!(
        "identities exact, {} fixture sentences equal to the hand average",
        expected.len()
    ))
}

fn clustering(c: &[Vec<usize>]) -> Clustering {
    Clustering::new(c.iter().map(|k| k.iter().map(|&m| Span::new(m, m)).collect()).collect()).unwrap()
}

fn round1(v: f64) -> f64 {
    (v * 10.0).round() / 10.0
}

fn coref_metrics() -> Outcome {
    let eq = |g: &[Vec<usize>], s: &[Vec<usize>], m: Metric| score(&clustering(g), &clustering(s), m).unwrap();
    let gold = [vec![0, 1], vec![2]];
    for m in Metric::ALL {
        let p = eq(&gold, &gold, m);
        ensure!(
            round1(p.f1) == 100.0 && round1(p.precision) == 100.0 && round1(p.recall) == 100.0,
            "identity {m:?}"
        );
    }
    let p = eq(&gold, &[vec![0], vec![1], vec![2]], Metric::Muc);
    ensure!(
        (round1(p.precision), round1(p.recall), round1(p.f1)) == (0.0, 0.0, 0.0),
        "all-singletons MUC {p:?}"
    );
    let p = eq(&[vec![0, 1, 2]], &[vec![0, 1], vec![2]], Metric::Muc);
    ensure!(
        (round1(p.precision), round1(p.recall), round1(p.f1)) == (100.0, 50.0, 66.7),
        "split MUC {p:?}"
    );

    let mut r = rng(32);
    for i in 0..200 {
        let universe = r.gen_range(1..12);
        let g = clustering(&random_partition(&mut r, universe, 6));
        let s = clustering(&random_partition(&mut r, universe, 6));
        let w = phi4_matrix(&g, &s);
        let (total, _) = max_weight_assignment(&w);
        ensure!(
            (total - brute_force_assignment(&w)).abs() < 1e-9,
            "case {i}: assignment not optimal"
        );
    }

    let mut worst = 0.0f64;
    for _ in 0..30 {
        let n = r.gen_range(1..=10);
        let pairs: Vec<(f64, f64)> = (0..n)
            .map(|_| (r.gen_range(0..3) as f64 / 2.0, r.gen_range(0..3) as f64 / 2.0))
            .collect();
        let p = ar_test(&pairs, 10_000, r.gen(), 2).unwrap();
        worst = worst.max((p - exact_ar_p(&pairs)).abs());
    }
    ensure!(worst <= 0.02, "ar_test off by {worst}");
    Outcome::Pass(format!(
        "hand cases exact, 200/200 optimal alignments, ar_test within {worst:.4}"
    ))
}

fn bias_report_harness() -> Outcome {
    let n = 1000;
    let pro = parse_winobias(&winobias_lines(n, "he"), Condition::Pro, TaskType::SemanticsOnly).unwrap();
    let anti = parse_winobias(&winobias_lines(n, "she"), Condition::Anti, TaskType::SemanticsOnly).unwrap();
    let pp = parse_predictions(&winobias_predictions(n, |i| i < 791)).unwrap();
    let ap = parse_predictions(&winobias_predictions(n, |i| i < 495)).unwrap();
    let report = bias_report(
        &pro,
        &pp,
        &anti,
        &ap,
        ReportOptions {
            threads: 4,
            ..ReportOptions::default()
        },
    )
    .unwrap();
    ensure!((report.avg_f1 - 64.3).abs() <= 0.1, "Avg {}", report.avg_f1);
    ensure!((report.abs_diff - 29.6).abs() <= 0.1, "|Diff| {}", report.abs_diff);
    ensure!(report.p_value < 0.05, "p = {}", report.p_value);
    Outcome::Pass(format!(
        "Pro {:.1} Anti {:.1} Avg {:.1} |Diff| {:.1} p = {:.5}",
        report.pro_f1, report.anti_f1, report.avg_f1, report.abs_diff, report.p_value
    ))
}

fn audit_end_to_end() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    let mut slowest = 0.0f64;
    for run in 0..2 {
        let out = dir.path().join(format!("audit{run}.json"));
        let start = Instant::now();
        let status = Command::new(env!("CARGO_BIN_EXE_biascope"))
            .args(["audit", "--strict", "--corpus"])
            .arg(fixture("corpus.txt"))
            .arg("--pairs-a")
            .arg(fixture("pairs_a.cemb"))
            .arg("--pairs-b")
            .arg(fixture("pairs_b.cemb"))
            .arg("--targets")
            .arg(fixture("targets.jsonl"))
            .arg("--probe-dataset")
            .arg(fixture("probe.jsonl"))
            .arg("--out")
            .arg(&out)
            .output()
            .unwrap();
        slowest = slowest.max(start.elapsed().as_secs_f64());
        ensure!(
            status.status.success(),
            "run {run}: {}",
            String::from_utf8_lossy(&status.stderr)
        );
        outputs.push(fs::read(&out).unwrap());
    }
    ensure!(outputs[0] == outputs[1], "audit output differs between runs");
    let report: Value = serde_json::from_slice(&outputs[0]).unwrap();
    for section in ["corpus_stats", "subspace", "probe"] {
        ensure!(report[section]["status"] == "ok", "{section}: {}", report[section]);
    }
    ensure!(slowest < 10.0, "took {slowest:.2}s");
    Outcome::Pass(format!("all sections ok, byte-identical, {slowest:.2}s"))
}
