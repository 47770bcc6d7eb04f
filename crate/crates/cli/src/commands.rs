use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};

use biascope::coref_eval::{self, Metric, ReportOptions, TaskType};
use biascope::corpus_stats::{CorpusStats, Scanner};
use biascope::embedding_store::{align_pair, AlignedPair, EmbeddingStore};
use biascope::genderswap::{self, AugmentOptions, GenderSwapper};
use biascope::lexicon::{Gender, GenderLexicon};
use biascope::neutralize;
use biascope::par;
use biascope::probe::{self, ProbeConfig, ProbeDataset, ProbeModel};
use biascope::subspace::{self, PcaResult, ScatterPoint};
use ndarray::Axis;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::{
    AuditArgs, AugmentArgs, Cli, CliError, Command, EvalArgs, GlobalArgs, MetricArg, NeutralizeArgs, PcaArgs,
    ProbeEvalArgs, ProbeOptions, ProbeTrainArgs, StatsArgs, SwapArgs, SwapFormat, TaskArg,
};

pub(crate) fn dispatch(cli: &Cli) -> Result<(), CliError> {
    let g = &cli.global;
    if g.threads == 0 {
        return Err(CliError::Usage("--threads must be at least 1".into()));
    }
    match &cli.command {
        Command::Stats(a) => stats(g, a),
        Command::Swap(a) => swap(g, a),
        Command::Augment(a) => augment(g, a),
        Command::Pca(a) => pca(g, a),
        Command::ProbeTrain(a) => probe_train(g, a),
        Command::ProbeEval(a) => probe_eval(g, a),
        Command::Neutralize(a) => neutralize_cmd(g, a),
        Command::Eval(a) => eval(g, a),
        Command::Audit(a) => {
            let (_, result) = audit(g, a)?;
            result
        }
    }
}

fn require(paths: &[&Path]) -> Result<(), CliError> {
    for p in paths {
        if !p.exists() {
            return Err(CliError::Input(format!("input not found: {}", p.display())));
        }
    }
    Ok(())
}

fn output(g: &GlobalArgs, explicit: &Option<PathBuf>, default_name: &str) -> Result<PathBuf, CliError> {
    let path = explicit.clone().unwrap_or_else(|| g.out_dir.join(default_name));
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|source| CliError::Io {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    Ok(path)
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    biascope::io::atomic_write(path, contents.as_ref()).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    write(path, text)
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn load_lexicon(path: &Option<PathBuf>) -> Result<GenderLexicon, CliError> {
    match path {
        Some(p) => {
            require(&[p])?;
            Ok(GenderLexicon::load(p)?)
        }
        None => Ok(GenderLexicon::default_lexicon()),
    }
}

fn run_stats(
    g: &GlobalArgs,
    corpus: &Path,
    lexicon: &GenderLexicon,
    pretokenized: bool,
) -> Result<CorpusStats, CliError> {
    let file = File::open(corpus).map_err(|source| CliError::Io {
        path: corpus.to_path_buf(),
        source,
    })?;
    Ok(Scanner::new(lexicon).scan_reader(BufReader::new(file), pretokenized, g.threads)?)
}

fn stats(g: &GlobalArgs, a: &StatsArgs) -> Result<(), CliError> {
    require(&[&a.corpus])?;
    let lexicon = load_lexicon(&a.lexicon)?;
    let out = output(g, &a.out, "stats.json")?;
    let stats = run_stats(g, &a.corpus, &lexicon, a.pretokenized)?;
    write_json(&out, &stats)
}

fn swap(g: &GlobalArgs, a: &SwapArgs) -> Result<(), CliError> {
    require(&[&a.input])?;
    let lexicon = load_lexicon(&a.lexicon)?;
    let swapper = GenderSwapper::new(&lexicon);
    let text = read_text(&a.input)?;
    match a.format {
        SwapFormat::Text => {
            let out = output(g, &a.out, "swapped.txt")?;
            let lines: Vec<&str> = text.lines().collect();
            let swapped = par::map(&lines, g.threads, |l| swapper.swap_line(l));
            let mut body = swapped.join("\n");
            if !lines.is_empty() {
                body.push('\n');
            }
            write(&out, body)
        }
        SwapFormat::Conll => {
            let out = output(g, &a.out, "swapped.conll")?;
            let docs = genderswap::read_conll(&text)?;
            let options = AugmentOptions { anonymize: a.anonymize };
            let swapped = par::map(&docs, g.threads, |d| {
                genderswap::swap_coref_document(d, &swapper, options)
            })
            .into_iter()
            .collect::<Result<Vec<_>, _>>()?;
            write(&out, genderswap::write_conll(&swapped))
        }
    }
}

fn pronoun_totals(docs: &[genderswap::CorefDocument], lexicon: &GenderLexicon) -> (u64, u64) {
    let scanner = Scanner::new(lexicon);
    let stats = scanner.scan(docs.iter().flat_map(|d| d.sentences.iter()));
    (stats.male_total, stats.female_total)
}

fn augment(g: &GlobalArgs, a: &AugmentArgs) -> Result<(), CliError> {
    require(&[&a.conll])?;
    let lexicon = load_lexicon(&a.lexicon)?;
    let out = output(g, &a.out, "augmented.conll")?;
    let docs = genderswap::read_conll(&read_text(&a.conll)?)?;
    let swapper = GenderSwapper::new(&lexicon);
    let augmented = genderswap::augment_corpus(&docs, &swapper, AugmentOptions { anonymize: a.anonymize }, g.threads)?;
    write(&out, genderswap::write_conll(&augmented))?;
    let (m_in, f_in) = pronoun_totals(&docs, &lexicon);
    let (m_out, f_out) = pronoun_totals(&augmented, &lexicon);
    println!(
        "{}",
        json!({
            "documents_in": docs.len(),
            "documents_out": augmented.len(),
            "male_pronouns_in": m_in,
            "female_pronouns_in": f_in,
            "male_pronouns_out": m_out,
            "female_pronouns_out": f_out,
            "output": out.display().to_string(),
        })
    );
    Ok(())
}

#[derive(Debug, Deserialize)]
struct TargetRow {
    sentence_id: String,
    token_index: usize,
}

fn read_targets(path: &Path) -> Result<Vec<(String, usize)>, CliError> {
    let mut out = Vec::new();
    let mut seen = HashMap::new();
    for (i, line) in read_text(path)?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: TargetRow = serde_json::from_str(line)
            .map_err(|e| CliError::Input(format!("{} line {}: {e}", path.display(), i + 1)))?;
        if seen.insert(row.sentence_id.clone(), row.token_index).is_some() {
            return Err(CliError::Input(format!(
                "{} line {}: duplicate sentence_id `{}`",
                path.display(),
                i + 1,
                row.sentence_id
            )));
        }
        out.push((row.sentence_id, row.token_index));
    }
    Ok(out)
}

struct SubspaceRun {
    fit: PcaResult,
    alternate: Result<PcaResult, String>,
    points: Vec<ScatterPoint>,
    skipped: usize,
    n_pairs: usize,
}

fn run_subspace(
    g: &GlobalArgs,
    pairs_a: &Path,
    pairs_b: &Path,
    targets: &Path,
    components: Option<usize>,
    center: bool,
    lexicon: &GenderLexicon,
) -> Result<SubspaceRun, CliError> {
    let a = EmbeddingStore::open(pairs_a)?;
    let b = EmbeddingStore::open(pairs_b)?;
    let targets = read_targets(targets)?;
    let pairs = par::map(&targets, g.threads, |(id, _)| align_pair(&a, &b, id))
        .into_iter()
        .collect::<Result<Vec<AlignedPair>, _>>()?;
    let tmap: HashMap<String, usize> = targets.into_iter().collect();
    let m = subspace::difference_matrix(&pairs, &tmap, g.threads)?;
    let k = components.unwrap_or_else(|| m.dim().min(10));
    let fit = subspace::pca(&m, k, center)?;
    let alternate = subspace::pca(&m, k, !center).map_err(|e| e.to_string());
    let (points, skipped) = subspace::scatter(&pairs, &tmap, &fit, lexicon)?;
    Ok(SubspaceRun {
        fit,
        alternate,
        points,
        skipped,
        n_pairs: pairs.len(),
    })
}

fn scatter_summary(points: &[ScatterPoint]) -> Value {
    let mut groups: BTreeMap<&str, (usize, f64, f64)> = BTreeMap::new();
    for p in points {
        let e = groups.entry(p.context_gender.code()).or_default();
        e.0 += 1;
        e.1 += p.pc1;
        e.2 += p.pc2;
    }
    let mut out = serde_json::Map::new();
    for (g, (n, s1, s2)) in groups {
        out.insert(
            g.to_string(),
            json!({"count": n, "mean_pc1": s1 / n as f64, "mean_pc2": s2 / n as f64}),
        );
    }
    Value::Object(out)
}

fn subspace_summary(run: &SubspaceRun) -> Value {
    let alternate = match &run.alternate {
        Ok(p) => json!({"centered": p.centered, "explained_ratio": p.explained_ratio}),
        Err(e) => json!({"centered": !run.fit.centered, "error": e}),
    };
    json!({
        "n_pairs": run.n_pairs,
        "dim": run.fit.dim(),
        "components": run.fit.k(),
        "centered": run.fit.centered,
        "total_variance": run.fit.total_variance,
        "explained_ratio": run.fit.explained_ratio,
        "top2_explained": run.fit.explained_ratio.iter().take(2).sum::<f64>(),
        "alternate": alternate,
        "scatter_points": run.points.len(),
        "scatter_skipped_pairs": run.skipped,
        "scatter_by_context_gender": scatter_summary(&run.points),
    })
}

fn pca(g: &GlobalArgs, a: &PcaArgs) -> Result<(), CliError> {
    require(&[&a.pairs_a, &a.pairs_b, &a.targets])?;
    let lexicon = load_lexicon(&a.lexicon)?;
    let run = run_subspace(
        g,
        &a.pairs_a,
        &a.pairs_b,
        &a.targets,
        a.components,
        !a.no_center,
        &lexicon,
    )?;
    write(&output(g, &None, "scree.csv")?, run.fit.scree_csv())?;
    write(&output(g, &None, "scatter.csv")?, subspace::scatter_csv(&run.points))?;
    write_json(&output(g, &None, "pca.json")?, &subspace_summary(&run))
}

fn probe_config(g: &GlobalArgs, o: &ProbeOptions) -> ProbeConfig {
    ProbeConfig {
        nu: o.nu.unwrap_or(0.5),
        gamma: o.gamma,
        kkt_tolerance: o.kkt_tolerance,
        max_passes: o.max_passes,
        seed: g.seed,
        standardize: o.standardize,
    }
}

fn run_probe(g: &GlobalArgs, dataset: &Path, o: &ProbeOptions) -> Result<(ProbeModel, Value), CliError> {
    if !(o.test_fraction > 0.0 && o.test_fraction < 1.0) {
        return Err(CliError::Usage("--test-fraction must be in (0, 1)".into()));
    }
    let ds = ProbeDataset::load(dataset)?;
    let (train_rows, test_rows) = probe::split_indices(ds.labels.len(), o.test_fraction, g.seed);
    let pick = |rows: &[usize]| {
        (
            ds.features.select(Axis(0), rows),
            rows.iter().map(|&i| ds.labels[i]).collect::<Vec<i8>>(),
            rows.iter().map(|&i| ds.groups[i]).collect::<Vec<Gender>>(),
        )
    };
    let (xt, yt, gt) = pick(&train_rows);
    let (xe, ye, ge) = pick(&test_rows);

    let mut config = probe_config(g, o);
    let tuning = if o.nu.is_none() {
        let grid = o.grid.clone().unwrap_or_else(probe::default_nu_grid);
        let t = probe::tune_nu(xt.view(), &yt, &grid, o.tune_fraction, &config, g.threads)?;
        config = t.best.clone();
        Some(json!({"grid": grid, "best_nu": t.best.nu, "best_accuracy": t.best_accuracy, "points": t.points}))
    } else {
        None
    };
    let model = probe::train_threaded(xt.view(), &yt, &config, g.threads)?;
    let train_acc = probe::evaluate_by_group(&model, xt.view(), &yt, &gt)?;
    let test_acc = probe::evaluate_by_group(&model, xe.view(), &ye, &ge)?;
    let report = json!({
        "rows": ds.labels.len(),
        "train_rows": train_rows.len(),
        "test_rows": test_rows.len(),
        "seed": g.seed,
        "config": config,
        "tuning": tuning,
        "model": {
            "nu": model.nu,
            "gamma": model.gamma,
            "gamma_from_heuristic": model.gamma_from_heuristic,
            "n_support": model.n_support(),
            "rho": model.rho,
            "b": model.b,
            "kkt_residual": model.kkt_residual,
            "iterations": model.iterations,
        },
        "train_accuracy": train_acc,
        "test_accuracy": test_acc,
    });
    Ok((model, report))
}

fn probe_train(g: &GlobalArgs, a: &ProbeTrainArgs) -> Result<(), CliError> {
    require(&[&a.dataset])?;
    let model_out = output(g, &a.model_out, "model.json")?;
    let (model, report) = run_probe(g, &a.dataset, &a.probe)?;
    write(&model_out, model.to_json() + "\n")?;
    write_json(&output(g, &None, "probe_train.json")?, &report)
}

fn probe_eval(g: &GlobalArgs, a: &ProbeEvalArgs) -> Result<(), CliError> {
    require(&[&a.model, &a.dataset])?;
    let out = output(g, &a.out, "probe_eval.json")?;
    let model = ProbeModel::load(&a.model)?;
    let ds = ProbeDataset::load(&a.dataset)?;
    let acc = probe::evaluate_by_group(&model, ds.features.view(), &ds.labels, &ds.groups)?;
    write_json(&out, &json!({"rows": ds.labels.len(), "accuracy": acc}))
}

fn neutralize_cmd(g: &GlobalArgs, a: &NeutralizeArgs) -> Result<(), CliError> {
    require(&[&a.store, &a.swapped_store])?;
    let out = output(g, &a.out, "neutralized.cemb")?;
    let sa = EmbeddingStore::open(&a.store)?;
    let sb = EmbeddingStore::open(&a.swapped_store)?;
    let manifest = neutralize::neutralize_store(&sa, &sb, &out, g.threads)?;
    println!(
        "{}",
        json!({"sentences": manifest.count(), "dim": manifest.dim, "layer": manifest.layer, "output": out.display().to_string()})
    );
    Ok(())
}

fn eval(g: &GlobalArgs, a: &EvalArgs) -> Result<(), CliError> {
    require(&[&a.gold_pro, &a.gold_anti, &a.pred_pro, &a.pred_anti])?;
    let task = match a.task_type {
        TaskArg::SemanticsOnly => TaskType::SemanticsOnly,
        TaskArg::SyntacticCues => TaskType::SyntacticCues,
    };
    let metric = match a.metric {
        MetricArg::Muc => Metric::Muc,
        MetricArg::B3 => Metric::B3,
        MetricArg::Ceafe => Metric::CeafE,
        MetricArg::Conll => Metric::Conll,
    };
    let pro = coref_eval::parse_winobias(&read_text(&a.gold_pro)?, coref_eval::Condition::Pro, task)?;
    let anti = coref_eval::parse_winobias(&read_text(&a.gold_anti)?, coref_eval::Condition::Anti, task)?;
    let pred_pro = coref_eval::parse_predictions(&read_text(&a.pred_pro)?)?;
    let pred_anti = coref_eval::parse_predictions(&read_text(&a.pred_anti)?)?;
    let report = coref_eval::bias_report(
        &pro,
        &pred_pro,
        &anti,
        &pred_anti,
        ReportOptions {
            metric,
            rounds: a.rounds,
            seed: g.seed,
            threads: g.threads,
        },
    )?;
    let json_path = output(g, &None, "report.json")?;
    let csv_path = output(g, &None, "report.csv")?;
    let mut value = serde_json::to_value(&report).expect("report serializes");
    value["condition"] = json!(a.label);
    write_json(&json_path, &value)?;
    write(&csv_path, report.csv(&a.label))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SectionStatus {
    Ok,
    Failed,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Section {
    pub status: SectionStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub result: Option<Value>,
}

impl Section {
    fn skipped(reason: impl Into<String>) -> Section {
        Section {
            status: SectionStatus::Skipped,
            reason: Some(reason.into()),
            result: None,
        }
    }

    fn from_result(r: Result<Value, CliError>) -> Section {
        match r {
            Ok(v) => Section {
                status: SectionStatus::Ok,
                reason: None,
                result: Some(v),
            },
            Err(e) => Section {
                status: SectionStatus::Failed,
                reason: Some(format!("{}: {}", e.kind(), e.message())),
                result: None,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub seed: u64,
    pub corpus_stats: Section,
    pub subspace: Section,
    pub probe: Section,
}

fn missing(paths: &[(&str, &Option<PathBuf>)]) -> Option<String> {
    for (flag, p) in paths {
        match p {
            None => return Some(format!("--{flag} not given")),
            Some(p) if !p.exists() => return Some(format!("{} not found", p.display())),
            _ => {}
        }
    }
    None
}

/// Runs the three audit sections and writes `audit.json`. Each section is
/// independent unless `--strict`, where the first failure stops the run and
/// later sections are reported as skipped. Returns the report and the
/// command outcome.
pub fn audit(g: &GlobalArgs, a: &AuditArgs) -> Result<(AuditReport, Result<(), CliError>), CliError> {
    let out = output(g, &a.out, "audit.json")?;
    let lexicon = load_lexicon(&a.lexicon)?;
    let mut report = AuditReport {
        seed: g.seed,
        corpus_stats: Section::skipped("not run"),
        subspace: Section::skipped("not run"),
        probe: Section::skipped("not run"),
    };
    let mut failed = Vec::new();

    report.corpus_stats = match missing(&[("corpus", &a.corpus)]) {
        Some(r) => Section::skipped(r),
        None => Section::from_result(
            run_stats(g, a.corpus.as_ref().unwrap(), &lexicon, a.pretokenized)
                .map(|s| serde_json::to_value(s).expect("stats serialize")),
        ),
    };
    if report.corpus_stats.status == SectionStatus::Failed {
        failed.push("corpus_stats".to_string());
    }

    if !(g.strict && !failed.is_empty()) {
        report.subspace = match missing(&[
            ("pairs-a", &a.pairs_a),
            ("pairs-b", &a.pairs_b),
            ("targets", &a.targets),
        ]) {
            Some(r) => Section::skipped(r),
            None => Section::from_result(
                run_subspace(
                    g,
                    a.pairs_a.as_ref().unwrap(),
                    a.pairs_b.as_ref().unwrap(),
                    a.targets.as_ref().unwrap(),
                    a.components,
                    true,
                    &lexicon,
                )
                .map(|run| subspace_summary(&run)),
            ),
        };
        if report.subspace.status == SectionStatus::Failed {
            failed.push("subspace".to_string());
        }
    }

    if !(g.strict && !failed.is_empty()) {
        report.probe = match missing(&[("probe-dataset", &a.probe_dataset)]) {
            Some(r) => Section::skipped(r),
            None => Section::from_result(run_probe(g, a.probe_dataset.as_ref().unwrap(), &a.probe).map(|(_, r)| r)),
        };
        if report.probe.status == SectionStatus::Failed {
            failed.push("probe".to_string());
        }
    }

    write_json(&out, &report)?;
    let outcome = if g.strict && !failed.is_empty() {
        Err(CliError::Strict(failed))
    } else {
        Ok(())
    };
    Ok((report, outcome))
}
