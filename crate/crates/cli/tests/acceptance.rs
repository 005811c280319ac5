//! One line per acceptance criterion, each checked against an independent
//! oracle. Exits non-zero if any criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use mimicry_cli::report::{self, CountsFile};
use mimicry_core::classifier::{
    cross_validate, evaluate, train_forest, DecisionTree, ForestConfig, GrowParams, LabeledSample,
};
use mimicry_core::embedder::{grad_check, train, EmbedderConfig};
use mimicry_core::exec::Execution;
use mimicry_core::harness::FailSet;
use mimicry_core::lex::{abstract_tokens, default_idioms, parse_abstract_id, tokenize, Category};
use mimicry_core::mutate::{generate_all, GenerateConfig, LexicalValidator, ManifestEntry, SourceUnit};
use mimicry_core::predictor::BuiltinPredictor;
use mimicry_core::semantics::{ochiai, Label, MutantLabel};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Check {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn check(name: &'static str, f: impl FnOnce() -> Result<String, String>) -> Check {
    let started = Instant::now();
    let (pass, detail) = match f() {
        Ok(d) => (true, d),
        Err(d) => (false, d),
    };
    Check {
        name,
        pass,
        detail: format!("{detail}; {:.2}s", started.elapsed().as_secs_f64()),
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn fixture(name: &str) -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

// Ochiai over fail sets of at most 10 tests, against membership counting.
fn ochiai_oracle() -> Result<String, String> {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let universe: Vec<String> = (0..10).map(|i| format!("t{i}")).collect();
    for _ in 0..1000 {
        let pick = |rng: &mut ChaCha8Rng| -> Vec<String> {
            universe.iter().filter(|_| rng.gen_bool(0.4)).cloned().collect()
        };
        let (a, b) = (pick(&mut rng), pick(&mut rng));
        let mut both = 0u32;
        for t in &a {
            if b.iter().any(|u| u == t) {
                both += 1;
            }
        }
        let expected = if a.is_empty() || b.is_empty() {
            0.0
        } else {
            both as f64 / ((a.len() * b.len()) as f64).sqrt()
        };
        let got = ochiai(&FailSet::new(a.clone()), &FailSet::new(b.clone()));
        ensure((got - expected).abs() <= 1e-12, || format!("{a:?} {b:?}: {got} vs {expected}"))?;
    }
    let elapsed = started.elapsed();
    ensure(elapsed < Duration::from_secs(5), || format!("took {elapsed:?}"))?;
    Ok("1000 pairs exact within 1e-12".into())
}

fn mcc_formula(tp: f64, fp: f64, fn_: f64, tn: f64) -> f64 {
    let den = ((tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_)).sqrt();
    if den == 0.0 {
        0.0
    } else {
        (tp * tn - fp * fn_) / den
    }
}

fn from_matrix(tp: usize, fp: usize, fn_: usize, tn: usize) -> (Vec<bool>, Vec<bool>) {
    let mut preds = Vec::new();
    let mut truths = Vec::new();
    for (n, p, t) in [(tp, true, true), (fp, true, false), (fn_, false, true), (tn, false, false)] {
        preds.extend(std::iter::repeat_n(p, n));
        truths.extend(std::iter::repeat_n(t, n));
    }
    (preds, truths)
}

fn metric_formulas() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut checked = 0;
    let mut flips = 0;
    while checked < 40 {
        let m: [usize; 4] = std::array::from_fn(|_| rng.gen_range(0..30));
        if m.iter().sum::<usize>() == 0 {
            continue;
        }
        let (preds, truths) = from_matrix(m[0], m[1], m[2], m[3]);
        let r = evaluate(&preds, &truths).map_err(|e| e.to_string())?;
        let [tp, fp, fn_, tn] = m.map(|v| v as f64);
        let precision = if tp + fp == 0.0 { 0.0 } else { tp / (tp + fp) };
        let recall = if tp + fn_ == 0.0 { 0.0 } else { tp / (tp + fn_) };
        let mcc = mcc_formula(tp, fp, fn_, tn);
        ensure(
            (r.precision - precision).abs() < 1e-9 && (r.recall - recall).abs() < 1e-9 && (r.mcc - mcc).abs() < 1e-9,
            || format!("{m:?}: {r:?}"),
        )?;
        if !r.degenerate.mcc {
            let flipped: Vec<bool> = preds.iter().map(|p| !p).collect();
            let f = evaluate(&flipped, &truths).map_err(|e| e.to_string())?;
            ensure((f.mcc + r.mcc).abs() < 1e-12, || format!("{m:?}: sign flip {} vs {}", f.mcc, r.mcc))?;
            flips += 1;
        }
        checked += 1;
    }
    let (preds, truths) = from_matrix(2, 1, 3, 94);
    let r = evaluate(&preds, &truths).map_err(|e| e.to_string())?;
    ensure((r.mcc - 0.4976).abs() < 1e-3, || format!("TP2/FP1/FN3/TN94 mcc {}", r.mcc))?;
    Ok(format!("{checked} matrices within 1e-9, {flips} sign flips, mcc(2,1,3,94) = {:.4}", r.mcc))
}

fn report_arithmetic() -> Result<String, String> {
    let text = fs::read_to_string(fixture("counts_45.json")).map_err(|e| e.to_string())?;
    let counts: CountsFile = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    let r = report::build(&counts.projects, None, None);
    let t = &r.totals;
    let got = [
        (t.mutants, 16409),
        (t.mimicking, 646),
        (t.vulnerabilities_mimicked, 25),
        (t.ochiai_positive, 2720),
        (t.vulnerabilities_ochiai_positive, 40),
        (t.vulnerabilities, 45),
    ];
    ensure(got.iter().all(|(a, b)| a == b), || format!("fixture counts {got:?}"))?;
    let pcts = [
        t.mimicking_pct.as_str(),
        &t.vulnerabilities_mimicked_pct,
        &t.ochiai_positive_pct,
        &t.vulnerabilities_ochiai_positive_pct,
    ];
    ensure(pcts == ["3.9%", "55.6%", "16.6%", "88.9%"], || format!("{pcts:?}"))?;
    let md = report::render_markdown(&r);
    for p in pcts {
        ensure(md.contains(p), || format!("markdown lacks {p}"))?;
    }
    ensure(report::count_cell(8, 375) == "8, 2.13%", || report::count_cell(8, 375))?;
    Ok(pcts.join(", "))
}

/// Random Java-like file plus the token sequence it must lex to once
/// comments are stripped.
fn fuzz_file(rng: &mut ChaCha8Rng) -> (String, Vec<String>) {
    const IDENTS: &[&str] = &["position", "total", "data", "n", "i", "out", "buf", "Buffer", "Reader", "List"];
    const WORDS: &[&str] = &["int", "return", "if", "new", "while", "null", "true", "this", "class", "void"];
    const OPS: &[&str] = &["+", "*", "/", "<", "<=", ">=", "==", "!=", "&&", "||", "=", "+=", "!", "(", ")", "{", "}", "[", "]", ";", ",", "."];
    const SEPS: &[&str] = &[" ", "\n", "  ", "\t"];
    let mut src = String::new();
    let mut tokens = Vec::new();
    for _ in 0..rng.gen_range(20..120) {
        let tok = match rng.gen_range(0..8) {
            0 | 1 => IDENTS.choose(rng).unwrap().to_string(),
            2 => WORDS.choose(rng).unwrap().to_string(),
            3 => rng.gen_range(0..5000).to_string(),
            4 => format!("\"{}\"", ["", "a b", "x", "out of range"].choose(rng).unwrap()),
            5 => "'c'".to_string(),
            6 => OPS.choose(rng).unwrap().to_string(),
            _ => {
                src.push_str(["// note\n", "/* block */"].choose(rng).unwrap());
                src.push(' ');
                continue;
            }
        };
        src.push_str(&tok);
        src.push_str(SEPS.choose(rng).unwrap());
        tokens.push(tok);
    }
    (src, tokens)
}

fn abstraction_round_trip() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let idioms = default_idioms();
    let mut total = 0;
    for file in 0..50 {
        let (src, expected) = fuzz_file(&mut rng);
        let ts = tokenize(&src).map_err(|e| format!("file {file}: {e}"))?;
        ensure(ts.lexemes() == expected, || format!("file {file}: lexing differs from the generator"))?;
        let unit = abstract_tokens(&ts, &idioms);
        ensure(unit.deabstract() == expected, || format!("file {file}: round trip differs"))?;
        let mut seen: BTreeMap<Category, usize> = BTreeMap::new();
        for t in &unit.abstract_tokens {
            if let Some((c, n)) = parse_abstract_id(t) {
                let max = seen.entry(c).or_default();
                ensure(n <= *max + 1, || format!("file {file}: {t} skips an id"))?;
                *max = (*max).max(n);
            }
        }
        total += expected.len();
    }
    Ok(format!("50/50 files, {total} tokens"))
}

fn java_unit(n: u32, op: &str) -> String {
    format!(
        "class Buffer {{\n  int limit = {n};\n  int[] data;\n  int read(int pos) {{\n    // bounds\n    if (pos < 0 || pos {op} limit) {{ return -1; }}\n    return data[pos] + this.data.length * 2;\n  }}\n}}\n"
    )
}

fn manifest_bytes(units: &[SourceUnit], exec: Execution) -> Result<(Vec<u8>, usize), String> {
    let cfg = GenerateConfig::default();
    let mut out = Vec::new();
    let mut count = 0;
    for u in units {
        let (ms, fails) = generate_all(u, &BuiltinPredictor, &LexicalValidator, &cfg, exec);
        ensure(fails.is_empty(), || format!("{}: site failures", u.file))?;
        let original = u.tokens.lexemes();
        for m in &ms {
            ensure(m.replacement != m.site.original, || format!("{}: candidate equals original", m.id))?;
            let patched = tokenize(&m.patched_source).map_err(|e| e.to_string())?.lexemes();
            let diffs = (0..original.len().max(patched.len()))
                .filter(|&i| original.get(i) != patched.get(i))
                .count();
            ensure(diffs == 1, || format!("{}: {diffs} tokens differ", m.id))?;
            let e: ManifestEntry = m.manifest_entry();
            out.extend(serde_json::to_vec(&e).unwrap());
            out.push(b'\n');
        }
        count += ms.len();
    }
    Ok((out, count))
}

fn mutant_well_formedness() -> Result<String, String> {
    let idioms = default_idioms();
    let units: Vec<SourceUnit> = [(7, ">="), (64, ">"), (3, "=="), (128, "<=")]
        .iter()
        .enumerate()
        .map(|(i, (n, op))| SourceUnit::new(&format!("src/B{i}.java"), &java_unit(*n, op), &idioms).unwrap())
        .collect();
    let (a, count) = manifest_bytes(&units, Execution::Parallel)?;
    let (b, _) = manifest_bytes(&units, Execution::Parallel)?;
    let (c, _) = manifest_bytes(&units, Execution::Sequential)?;
    ensure(a == b && a == c, || "manifests differ between runs".into())?;

    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut manifests = Vec::new();
    for run in ["a", "b"] {
        let out = tmp.path().join(run);
        let cfg = fixture("guarded.json");
        for stage in ["abstract", "mutate"] {
            let o = mimicry(&["--config", cfg.to_str().unwrap(), stage], &out)?;
            ensure(o.status.success(), || format!("{stage}: {}", String::from_utf8_lossy(&o.stderr)))?;
        }
        manifests.push(fs::read(out.join("mutate.manifest.jsonl")).map_err(|e| e.to_string())?);
    }
    ensure(manifests[0] == manifests[1], || "fixture manifests differ".into())?;
    Ok(format!("{count} library mutants and the fixture manifest, single-token and byte-identical"))
}

fn mimicry(args: &[&str], out: &Path) -> Result<std::process::Output, String> {
    Command::new(env!("CARGO_BIN_EXE_mimicry"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .map_err(|e| e.to_string())
}

fn end_to_end() -> Result<String, String> {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let started = Instant::now();
    let cfg = fixture("guarded.json");
    let o = mimicry(&["--config", cfg.to_str().unwrap(), "pipeline"], tmp.path())?;
    let elapsed = started.elapsed();
    ensure(o.status.success(), || String::from_utf8_lossy(&o.stderr).into_owned())?;
    ensure(elapsed < Duration::from_secs(60), || format!("took {elapsed:?}"))?;
    let labels: Vec<MutantLabel> = fs::read_to_string(tmp.path().join("label.labels.jsonl"))
        .map_err(|e| e.to_string())?
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let mimics = labels.iter().filter(|l| l.label == Label::Mimicking && l.ochiai == 1.0).count();
    let coupled = labels
        .iter()
        .filter(|l| l.label == Label::Coupled && l.ochiai > 0.0 && l.ochiai < 1.0)
        .count();
    ensure(mimics >= 1 && coupled >= 1, || format!("{mimics} mimicking, {coupled} coupled"))?;
    Ok(format!("{} mutants: {mimics} mimicking (ochiai 1.0), {coupled} coupled", labels.len()))
}

fn toy_corpus(n: usize, seed: u64) -> Vec<Vec<String>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let len = rng.gen_range(8..=20);
            (0..len).map(|_| format!("VAR_{}", rng.gen_range(0..30))).collect()
        })
        .collect()
}

fn embedder_checks() -> Result<String, String> {
    let started = Instant::now();
    let small = EmbedderConfig {
        embed_dim: 8,
        hidden_dim: 16,
        max_len: 16,
        epochs: 1,
        seed: 5,
        ..EmbedderConfig::default()
    };
    let model = train(&toy_corpus(3, 8), &small).map_err(|e| e.to_string())?;
    let sample = &toy_corpus(1, 8)[0][..10];
    let err = grad_check(&model, sample, 1e-5);
    ensure(err < 1e-4, || format!("gradient relative error {err}"))?;

    let seq: Vec<String> = "TYPE_1 VAR_1 = new TYPE_1 ( ) ; if ( VAR_1 >= INT_1 ) return ;"
        .split(' ')
        .map(String::from)
        .collect();
    let repeated = vec![seq; 32];
    let cfg = EmbedderConfig::default();
    let m = train(&repeated, &cfg).map_err(|e| e.to_string())?;
    let acc_one = m.reconstruction_accuracy(&repeated).map_err(|e| e.to_string())?;
    ensure(acc_one == 1.0, || format!("repeated sequence accuracy {acc_one}"))?;

    let corpus = toy_corpus(50, 1);
    let m = train(&corpus, &cfg).map_err(|e| e.to_string())?;
    let acc = m.reconstruction_accuracy(&corpus).map_err(|e| e.to_string())?;
    ensure(cfg.epochs == 10 && acc >= 0.95, || format!("50-sequence accuracy {acc}"))?;
    let elapsed = started.elapsed();
    ensure(elapsed < Duration::from_secs(600), || format!("took {elapsed:?}"))?;
    Ok(format!("grad rel err {err:.2e}, repeated {:.0}%, 50-seq {:.1}%", acc_one * 100.0, acc * 100.0))
}

fn exhaustive_split(x: &[Vec<f64>], y: &[bool], samples: &[usize], features: &[usize]) -> Option<(usize, f64)> {
    // Weighted child Gini times n is 2*lp*ln/l + 2*rp*rn/r, kept as an exact
    // fraction and compared by cross-multiplication.
    let mut best: Option<(usize, f64, (u128, u128))> = None;
    for &f in features {
        let mut values: Vec<f64> = samples.iter().map(|&i| x[i][f]).collect();
        values.sort_by(f64::total_cmp);
        values.dedup();
        for w in values.windows(2) {
            let t = (w[0] + w[1]) / 2.0;
            let side = |left: bool| {
                let ids: Vec<usize> = samples.iter().copied().filter(|&i| (x[i][f] <= t) == left).collect();
                let pos = ids.iter().filter(|&&i| y[i]).count() as u128;
                (pos, ids.len() as u128 - pos, ids.len() as u128)
            };
            let (lp, ln, l) = side(true);
            let (rp, rn, r) = side(false);
            let score = (2 * lp * ln * r + 2 * rp * rn * l, l * r);
            let better = match best {
                None => true,
                Some((_, _, b)) => score.0 * b.1 < b.0 * score.1,
            };
            if better {
                best = Some((f, t, score));
            }
        }
    }
    best.map(|(f, t, _)| (f, t))
}

fn forest_checks() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut splits = 0;
    for case in 0..300 {
        let n = rng.gen_range(2..=8);
        let x: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.gen_range(0..4) as f64, rng.gen_range(0..4) as f64]).collect();
        let y: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
        let idx: Vec<usize> = (0..n).collect();
        let params = GrowParams {
            features_per_split: rng.gen_range(1..=2),
            min_samples_leaf: 1,
        };
        let (_, trace) = DecisionTree::fit_traced(&x, &y, &idx, &params, &mut ChaCha8Rng::seed_from_u64(case));
        for rec in trace {
            let want = exhaustive_split(&x, &y, &rec.samples, &rec.candidates);
            ensure(want == Some((rec.split.feature, rec.split.threshold)), || {
                format!("case {case}: {:?} vs {want:?}", rec.split)
            })?;
            splits += 1;
        }
    }

    let sample = |rng: &mut ChaCha8Rng, i: usize| {
        let features: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        LabeledSample {
            mutant_id: format!("m{i}"),
            group_id: format!("g{}", i % 10),
            truth: features[0] + 0.5 * features[1] > 0.1,
            features,
        }
    };
    let train_set: Vec<LabeledSample> = (0..200).map(|i| sample(&mut rng, i)).collect();
    let test_set: Vec<LabeledSample> = (0..200).map(|i| sample(&mut rng, i)).collect();
    let cfg = ForestConfig {
        seed: 21,
        ..ForestConfig::default()
    };
    let a = train_forest(&train_set, &cfg, Execution::Parallel).map_err(|e| e.to_string())?;
    let b = train_forest(&train_set, &cfg, Execution::Sequential).map_err(|e| e.to_string())?;
    ensure(a == b, || "forests differ across runs".into())?;
    let correct = test_set
        .iter()
        .filter(|s| a.predict(&s.features).map(|p| p.0 == s.truth).unwrap_or(false))
        .count();
    let acc = correct as f64 / test_set.len() as f64;
    ensure(acc >= 0.95, || format!("held-out accuracy {acc}"))?;
    Ok(format!("{splits} splits match the exhaustive scan; held-out accuracy {acc:.3}; deterministic"))
}

fn grouped_cv() -> Result<String, String> {
    let data: Vec<LabeledSample> = (0..45 * 6)
        .map(|i| LabeledSample {
            mutant_id: format!("m{i}"),
            group_id: format!("CVE-{:02}", i % 45),
            features: vec![(i % 7) as f64, (i % 13) as f64],
            truth: i % 7 == 0,
        })
        .collect();
    let cfg = ForestConfig {
        n_trees: 10,
        seed: 2,
        ..ForestConfig::default()
    };
    let r = cross_validate(&data, 5, 9, &cfg, Execution::Parallel).map_err(|e| e.to_string())?;
    let sizes: Vec<usize> = r.folds.iter().map(|f| f.groups.len()).collect();
    ensure(sizes == [9; 5], || format!("fold sizes {sizes:?}"))?;
    let mut fold_of: BTreeMap<&str, BTreeSet<usize>> = BTreeMap::new();
    for p in &r.predictions {
        fold_of.entry(&p.group_id).or_default().insert(p.fold);
    }
    ensure(fold_of.len() == 45 && fold_of.values().all(|f| f.len() == 1), || "a group spans folds".into())?;
    ensure(r.predictions.len() == data.len(), || "not every sample was predicted once".into())?;
    Ok("5 folds of 9 groups, no group spans folds".into())
}

fn main() {
    let checks = vec![
        check("ochiai oracle", ochiai_oracle),
        check("metric formulas", metric_formulas),
        check("report arithmetic", report_arithmetic),
        check("abstraction round trip", abstraction_round_trip),
        check("mutant well-formedness", mutant_well_formedness),
        check("end-to-end fixture", end_to_end),
        check("embedder gradient check and reconstruction", embedder_checks),
        check("forest oracle", forest_checks),
        check("grouped cross-validation", grouped_cv),
    ];
    for c in &checks {
        println!("{} {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    let failed = checks.iter().filter(|c| !c.pass).count();
    println!("acceptance: {} passed, {failed} failed", checks.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
