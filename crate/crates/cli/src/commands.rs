use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rulex::data::{build_test_prompts, build_training_set, save_dataset, save_prompts};
use rulex::dynamics::{build_category_set, record_masses, render_svg, sequence_scores, write_mass_csv, write_sequence_csv, MassTrace};
use rulex::eval::{aggregate_best, chance_table, evaluate, judge, render_whole, test_sequences, write_chance_csv, Metric};
use rulex::model::{
    init_model, load_checkpoint, load_train_state, save_checkpoint, save_train_state, train_from, Control, TraceRecord,
    TrainTrace,
};
use rulex::eval::EvalReport;
use rulex::normative::{
    catalogue_for, crossover, parse_catalogue, learning_order_curve, log_kraft_sum, write_curve_csv, write_posterior_csv, Completion,
    Mixture, PretrainSet,
};
use rulex::{Error, Language, Result};
use serde::{Deserialize, Serialize};

use crate::config::Config;

/// Collects the files one command writes and records them in its manifest.
pub struct Output {
    dir: PathBuf,
    files: Vec<String>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    config_hash: String,
    config: &'a BTreeMap<String, String>,
    outputs: &'a [String],
}

impl Output {
    fn new(dir: PathBuf) -> Result<Self> {
        fs::create_dir_all(&dir)?;
        Ok(Output { dir, files: Vec::new() })
    }

    fn path(&mut self, rel: &str) -> Result<PathBuf> {
        let p = self.dir.join(rel);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent)?;
        }
        self.files.push(rel.to_string());
        Ok(p)
    }

    fn write(&mut self, rel: &str, bytes: impl AsRef<[u8]>) -> Result<()> {
        let p = self.path(rel)?;
        fs::write(p, bytes)?;
        Ok(())
    }

    fn json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        let mut s = serde_json::to_string_pretty(value).map_err(json_err)?;
        s.push('\n');
        self.write(rel, s)
    }

    fn finish(self, command: &str, cfg: &Config) -> Result<PathBuf> {
        let m = Manifest {
            command,
            version: env!("CARGO_PKG_VERSION"),
            config_hash: cfg.hash(),
            config: cfg.values(),
            outputs: &self.files,
        };
        let mut s = serde_json::to_string_pretty(&m).map_err(json_err)?;
        s.push('\n');
        fs::write(self.dir.join("manifest.json"), s)?;
        Ok(self.dir)
    }
}

fn json_err(e: serde_json::Error) -> Error {
    Error::Io(e.into())
}

fn jsonl<T: Serialize>(items: &[T]) -> Result<String> {
    let mut s = String::new();
    for it in items {
        s.push_str(&serde_json::to_string(it).map_err(json_err)?);
        s.push('\n');
    }
    Ok(s)
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        }))
        .collect()
}

fn run_name(cfg: &Config) -> Result<String> {
    Ok(format!("{}-{}", cfg.language()?, cfg.architecture()?))
}

pub fn generate(root: &Path, cfg: &Config) -> Result<PathBuf> {
    let lang = cfg.language()?;
    let mut out = Output::new(root.join("data").join(lang.to_string()))?;
    for seed in cfg.seeds()? {
        let ds = build_training_set(lang, cfg.size()?, cfg.max_len()?, seed)?;
        save_dataset(&ds, out.path(&format!("seed-{seed}/train.txt"))?)?;
        save_prompts(&build_test_prompts(lang, seed), seed, out.path(&format!("seed-{seed}/prompts.txt"))?)?;
    }
    out.finish("generate", cfg)
}

pub fn prompts(root: &Path, cfg: &Config) -> Result<PathBuf> {
    let lang = cfg.language()?;
    let seed = cfg.seeds()?[0];
    let ps = build_test_prompts(lang, seed);
    let mut out = Output::new(root.join("prompts").join(lang.to_string()))?;
    save_prompts(&ps, seed, out.path("prompts.txt")?)?;
    println!("{lang}: {} ID and {} OOD prompts ({})", ps.id.len(), ps.ood.len(), ps.recipe);
    out.finish("prompts", cfg)
}

pub fn chance(root: &Path, cfg: &Config) -> Result<PathBuf> {
    let rows = chance_table(
        &cfg.chance_languages()?,
        cfg.support()?,
        cfg.cutoff()?,
        cfg.mc_samples()?,
        cfg.seeds()?[0],
    )?;
    let mut buf = Vec::new();
    write_chance_csv(&rows, &mut buf)?;
    for r in &rows {
        match r.stderr {
            Some(se) => println!("{} {:<20} {:.6} ± {:.6} ({})", r.language, r.metric.name(), r.value, se, r.method),
            None => println!("{} {:<20} {:.6} ({})", r.language, r.metric.name(), r.value, r.method),
        }
    }
    let mut out = Output::new(root.join("chance"))?;
    out.write("chance.csv", buf)?;
    out.finish("chance", cfg)
}

#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Stat {
    /// Sample standard deviation; zero for a single value.
    fn of(xs: &[f64]) -> Option<Stat> {
        if xs.is_empty() {
            return None;
        }
        let n = xs.len();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Some(Stat { mean, std: var.sqrt(), n })
    }
}

/// Across-seed statistics of the per-seed best values.
#[derive(Debug, Serialize, Deserialize)]
pub struct Summary {
    pub language: Language,
    pub architecture: String,
    pub seeds: Vec<u64>,
    pub metrics: BTreeMap<String, Option<Stat>>,
}

fn solved(trace_best: &rulex::eval::BestSummary, threshold: f64) -> bool {
    let a = &trace_best.accuracies;
    a.id_r1 == Some(1.0)
        && a.id_r2 == Some(1.0)
        && a.ood_r2_completion == Some(1.0)
        && a.ood_r1.is_some_and(|v| v >= threshold)
}

pub fn train_cmd(root: &Path, cfg: &Config) -> Result<PathBuf> {
    let lang = cfg.language()?;
    let model_cfg = cfg.model()?;
    let seeds = cfg.seeds()?;
    let max_len = cfg.max_len()?;
    let cutoff = cfg.cutoff()?;
    let stop_at = cfg.early_stop()?;
    let set = if cfg.track_masses()? {
        Some(build_category_set(lang, cfg.content_length()?)?)
    } else {
        None
    };
    let mut out = Output::new(root.join("train").join(run_name(cfg)?))?;
    let mut per_metric: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for &seed in &seeds {
        let data = build_training_set(lang, cfg.size()?, max_len, seed)?;
        let ps = build_test_prompts(lang, seed);
        let test = test_sequences(lang, max_len, seed)?;
        let decoding = cfg.decoding(seed)?;
        let mut model = init_model(model_cfg.clone(), lang.vocab_size(), seed)?;
        let dir = format!("seed-{seed}");
        let state_path = out.dir.join(&dir).join("state.bin");
        let resume = if cfg.resume()? && state_path.exists() {
            Some(load_train_state(&state_path)?)
        } else {
            None
        };
        let mut running = TrainTrace::default();
        let mut reports: Vec<EvalReport> = Vec::new();
        if let Some(st) = &resume {
            // The closing record of an interrupted run is off cadence unless
            // it falls on an evaluation epoch.
            let every = cfg.train(seed)?.eval_every.max(1);
            let kept = |e: usize| e < st.epoch || e % every == 0;
            let seed_dir = out.dir.join(&dir);
            running.records = read_jsonl::<TraceRecord>(&seed_dir.join("trace.jsonl"))?;
            running.records.retain(|r| r.epoch <= st.epoch && kept(r.epoch));
            reports = read_jsonl(&seed_dir.join("evals.jsonl"))?;
            reports.retain(|r| r.epoch.is_some_and(|e| e <= st.epoch && kept(e)));
            eprintln!("seed {seed}: resuming after epoch {}", st.epoch);
        }
        let (tail, state) = train_from(&mut model, &data, &cfg.train(seed)?, resume.as_ref(), |m, rec: &mut TraceRecord| {
            if let Some(s) = &set {
                record_masses(m, s, rec)?;
            }
            let mut r = evaluate(m, &ps, decoding, cutoff, Some(&test))?;
            r.epoch = Some(rec.epoch);
            rec.test_loss = r.test_loss;
            rec.accuracies = Some(r.accuracies);
            eprintln!(
                "seed {seed} epoch {:>6} loss {:.4} test {:.4} id {:?}/{:?} ood {:?}/{:?}",
                rec.epoch,
                rec.train_loss,
                r.test_loss.unwrap_or(f64::NAN),
                r.accuracies.id_r1,
                r.accuracies.id_r2,
                r.accuracies.ood_r1,
                r.accuracies.ood_r2_completion
            );
            reports.push(r);
            running.records.push(rec.clone());
            let done = match stop_at {
                Some(t) => solved(&aggregate_best(&running)?, t),
                None => false,
            };
            Ok(if done { Control::Stop } else { Control::Continue })
        })?;
        let trace = TrainTrace {
            records: running.records,
            epochs_run: tail.epochs_run,
            stopped_early: tail.stopped_early,
        };
        let best = aggregate_best(&trace)?;
        save_train_state(&state, out.path(&format!("{dir}/state.bin"))?)?;
        out.write(&format!("{dir}/trace.jsonl"), jsonl(&trace.records)?)?;
        out.write(&format!("{dir}/evals.jsonl"), jsonl(&reports)?)?;
        out.json(&format!("{dir}/best.json"), &best)?;
        save_checkpoint(&model, out.path(&format!("{dir}/model.ckpt"))?)?;
        if set.is_some() {
            let mut buf = Vec::new();
            write_mass_csv(&MassTrace::from_trace(&trace), &mut buf)?;
            out.write(&format!("{dir}/masses.csv"), buf)?;
        }
        per_metric.entry("test_loss".into()).or_default().extend(best.test_loss);
        for m in Metric::ALL {
            per_metric.entry(m.name().into()).or_default().extend(best.accuracies.get(m));
        }
    }
    let summary = Summary {
        language: lang,
        architecture: model_cfg.architecture().to_string(),
        seeds,
        metrics: per_metric.iter().map(|(k, v)| (k.clone(), Stat::of(v))).collect(),
    };
    for (k, s) in &summary.metrics {
        match s {
            Some(s) => println!("{k:<20} {:.4} ± {:.4} (n={})", s.mean, s.std, s.n),
            None => println!("{k:<20} -"),
        }
    }
    out.json("summary.json", &summary)?;
    out.finish("train", cfg)
}

pub fn eval_cmd(root: &Path, cfg: &Config) -> Result<PathBuf> {
    let lang = cfg.language()?;
    let path = cfg
        .checkpoint()
        .ok_or_else(|| Error::Config("eval needs checkpoint=<path>".into()))?;
    let model = load_checkpoint(path)?;
    let seed = cfg.seeds()?[0];
    let ps = build_test_prompts(lang, seed);
    let test = test_sequences(lang, cfg.max_len()?, seed)?;
    let report = evaluate(&model, &ps, cfg.decoding(seed)?, cfg.cutoff()?, Some(&test))?;
    println!("{}", serde_json::to_string(&report).map_err(json_err)?);
    let mut out = Output::new(root.join("eval").join(format!("{lang}-{}", model.architecture())))?;
    out.write("report.jsonl", jsonl(&[report])?)?;
    out.finish("eval", cfg)
}

pub fn dynamics_cmd(root: &Path, cfg: &Config) -> Result<PathBuf> {
    let name = run_name(cfg)?;
    let run = root.join("train").join(&name);
    let set = build_category_set(cfg.language()?, cfg.content_length()?)?;
    let mut out = Output::new(root.join("dynamics").join(&name))?;
    for seed in cfg.seeds()? {
        let dir = run.join(format!("seed-{seed}"));
        let records: Vec<TraceRecord> = read_jsonl(&dir.join("trace.jsonl"))?;
        if records.iter().any(|r| r.masses.is_none()) {
            return Err(Error::Contract(format!(
                "{} has no category masses; train with track_masses=true",
                dir.display()
            )));
        }
        let trace = MassTrace::from_trace(&TrainTrace { records, ..Default::default() });
        let stats = trace.order_stats()?;
        println!(
            "seed {seed}: R2-only peak {:.3} at epoch {}, R1∩R2 majority at {:?}, final {:.3}, R2 first: {}",
            stats.r2_only_peak_mass,
            stats.r2_only_peak_epoch,
            stats.majority_epoch,
            stats.final_r1_and_r2,
            stats.r2_first()
        );
        let rel = format!("seed-{seed}");
        let mut buf = Vec::new();
        write_mass_csv(&trace, &mut buf)?;
        out.write(&format!("{rel}/masses.csv"), buf)?;
        out.write(&format!("{rel}/masses.svg"), render_svg(&trace, &format!("{name} seed {seed}")))?;
        out.json(&format!("{rel}/order.json"), &stats)?;
        let model = load_checkpoint(dir.join("model.ckpt"))?;
        let mut buf = Vec::new();
        write_sequence_csv(&set, &sequence_scores(&model, &set)?, &mut buf)?;
        out.write(&format!("{rel}/sequences.csv"), buf)?;
    }
    out.finish("dynamics", cfg)
}

#[derive(Serialize, Deserialize)]
pub struct NormativeSummary {
    pub language: Language,
    pub log_kraft_sum: f64,
    pub pretrain_words: usize,
    pub masses: BTreeMap<String, f64>,
    pub crossover_r2_to_both: Option<usize>,
    pub id_r1: Option<f64>,
    pub id_r2: Option<f64>,
    pub ood_r1: Option<f64>,
    pub ood_r2_completion: Option<f64>,
}

fn rate(hits: usize, n: usize) -> Option<f64> {
    (n > 0).then(|| hits as f64 / n as f64)
}

pub fn normative_cmd(root: &Path, cfg: &Config) -> Result<PathBuf> {
    let lang = cfg.language()?;
    let seed = cfg.seeds()?[0];
    let cat = match cfg.catalogue() {
        Some(p) => parse_catalogue(&fs::read_to_string(p)?, p)?,
        None => catalogue_for(lang)?,
    };
    let ds = build_training_set(lang, cfg.size()?, cfg.max_len()?, seed)?;
    let mix = Mixture::fit(cat.clone(), &PretrainSet::from_words(&ds.words))?;
    let curve = learning_order_curve(
        &cat,
        lang,
        &cfg.curve_sizes()?,
        cfg.curve_max_len()?,
        rulex::seed::derive_seed(seed, "normative.curve"),
    )?;
    let index = |suffix: &str| cat.iter().position(|m| m.id.ends_with(suffix));
    let cross = match (index(".r2"), index(".r1_and_r2")) {
        (Some(a), Some(b)) => crossover(&curve, a, b),
        _ => None,
    };

    let ps = build_test_prompts(lang, seed);
    let cutoff = cfg.cutoff()?;
    let mut lines = String::from("split\tsequence\tr1\tr2\n");
    let mut hits = [[0usize; 2]; 2];
    let mut n = [0usize; 2];
    for (ood, set) in [(false, &ps.id), (true, &ps.ood)] {
        for p in set {
            let c = mix.complete(p, cutoff, Completion::Greedy)?;
            let verdict = judge(lang, p, &c, ood);
            if let Some((r1, r2)) = verdict {
                n[ood as usize] += 1;
                hits[ood as usize][0] += r1 as usize;
                hits[ood as usize][1] += r2 as usize;
            }
            let (r1, r2) = verdict.map_or(("-", "-"), |(a, b)| (yes(a), yes(b)));
            let split = if ood { "ood" } else { "id" };
            lines.push_str(&format!("{split}\t{}\t{r1}\t{r2}\n", render_whole(lang, p, &c)));
        }
    }
    let summary = NormativeSummary {
        language: lang,
        log_kraft_sum: log_kraft_sum(&cat),
        pretrain_words: ds.words.len(),
        masses: cat
            .iter()
            .zip(mix.posterior.weights())
            .map(|(m, w)| (m.id.clone(), w))
            .collect(),
        crossover_r2_to_both: cross,
        id_r1: rate(hits[0][0], n[0]),
        id_r2: rate(hits[0][1], n[0]),
        ood_r1: rate(hits[1][0], n[1]),
        ood_r2_completion: rate(hits[1][1], n[1]),
    };
    for (id, w) in &summary.masses {
        println!("{id:<16} {w:.6}");
    }
    let mut out = Output::new(root.join("normative").join(lang.to_string()))?;
    let mut buf = Vec::new();
    write_posterior_csv(&mix.posterior, &cat, &mut buf)?;
    out.write("posterior.csv", buf)?;
    let mut buf = Vec::new();
    write_curve_csv(&curve, &cat, &mut buf)?;
    out.write("curve.csv", buf)?;
    out.write("completions.tsv", lines)?;
    out.json("summary.json", &summary)?;
    out.finish("normative", cfg)
}

fn yes(b: bool) -> &'static str {
    if b {
        "yes"
    } else {
        "no"
    }
}

fn cell(s: Option<f64>) -> String {
    s.map_or("-".into(), |v| format!("{v:.3}"))
}

fn stat_cell(s: Option<&Option<Stat>>) -> String {
    match s {
        Some(Some(s)) if s.n > 1 => format!("{:.3} ± {:.3}", s.mean, s.std),
        Some(Some(s)) => format!("{:.3}", s.mean),
        _ => "-".into(),
    }
}

fn sorted_dirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut v = match fs::read_dir(dir) {
        Ok(rd) => rd.map(|e| e.map(|e| e.path())).collect::<std::io::Result<Vec<_>>>()?,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
        Err(e) => return Err(e.into()),
    };
    v.sort();
    Ok(v)
}

/// Markdown summary of every training, chance and normative result under
/// the output root.
pub fn report(root: &Path, cfg: &Config) -> Result<PathBuf> {
    let metrics = ["test_loss", "id_r1", "id_r2", "ood_r1", "ood_r2_completion"];
    let mut rows: BTreeMap<Language, Vec<String>> = BTreeMap::new();
    for d in sorted_dirs(&root.join("train"))? {
        let p = d.join("summary.json");
        if !p.exists() {
            continue;
        }
        let s: Summary = serde_json::from_str(&fs::read_to_string(&p)?).map_err(json_err)?;
        let cells: Vec<String> = metrics.iter().map(|m| stat_cell(s.metrics.get(*m))).collect();
        rows.entry(s.language)
            .or_default()
            .push(format!("| {} | {} |", s.architecture, cells.join(" | ")));
    }
    for d in sorted_dirs(&root.join("normative"))? {
        let p = d.join("summary.json");
        if !p.exists() {
            continue;
        }
        let s: NormativeSummary = serde_json::from_str(&fs::read_to_string(&p)?).map_err(json_err)?;
        rows.entry(s.language).or_default().push(format!(
            "| normative | - | {} | {} | {} | {} |",
            cell(s.id_r1),
            cell(s.id_r2),
            cell(s.ood_r1),
            cell(s.ood_r2_completion)
        ));
    }
    let chance_path = root.join("chance").join("chance.csv");
    if chance_path.exists() {
        let mut table: BTreeMap<Language, BTreeMap<String, f64>> = BTreeMap::new();
        for line in fs::read_to_string(&chance_path)?.lines().skip(1) {
            let f: Vec<&str> = line.split(',').collect();
            if let (Some(l), Some(m), Some(v)) = (f.first(), f.get(1), f.get(3)) {
                let lang: Language = l.parse()?;
                let v: f64 = v
                    .parse()
                    .map_err(|_| Error::Format {
                        path: chance_path.clone(),
                        line: 0,
                        message: format!("bad value {v:?}"),
                    })?;
                table.entry(lang).or_default().insert(m.to_string(), v);
            }
        }
        for (lang, t) in table {
            let cells: Vec<String> = metrics[1..].iter().map(|m| cell(t.get(*m).copied())).collect();
            rows.entry(lang)
                .or_default()
                .push(format!("| chance | - | {} |", cells.join(" | ")));
        }
    }
    let mut md = String::from("# rulex report\n");
    for (lang, lines) in &rows {
        md.push_str(&format!(
            "\n## {lang}\n\n| model | test loss | ID R1 | ID R2 | OOD R1 | OOD R2 completion |\n|---|---|---|---|---|---|\n"
        ));
        for l in lines {
            md.push_str(l);
            md.push('\n');
        }
    }
    std::io::stdout().write_all(md.as_bytes())?;
    let mut out = Output::new(root.to_path_buf())?;
    out.write("report.md", md)?;
    let _ = out.finish("report", cfg)?;
    Ok(root.to_path_buf())
}
