use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use templar::grammar::{Component, ComponentSet};
use templar::render::{escape_visible, render, Demonstration, Mode, PromptContext};
use templar::runner::{
    self, component_analysis, export_csv, rank_curve_for, read_results, summarize, template_scores, transfer_matrix,
    wins_between, BackendSpec, EnsembleConfig, GroupBy, RunConfig, RunRecord,
};
use templar::select::load_demonstrations;

#[derive(Parser)]
#[command(
    name = "templar",
    version,
    about = "Measure how much in-context classification depends on the prompt template"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// List every template of a grammar, or a seeded sample of them.
    Templates {
        /// `preset:<name>` or a grammar JSON file.
        #[arg(long, default_value = "preset:sst2")]
        grammar: String,
        #[arg(long)]
        sample: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        json: bool,
    },
    /// Show the prompts a template produces for one test input.
    Render {
        #[arg(long, default_value = "preset:sst2")]
        grammar: String,
        #[arg(long)]
        template: u64,
        /// direct, channel or content-free.
        #[arg(long, default_value = "direct")]
        mode: Mode,
        /// Test input (the content-free token in content-free mode).
        #[arg(long)]
        text: String,
        /// Demonstrations as `{text, label}` lines, used in file order.
        #[arg(long)]
        demos: Option<PathBuf>,
        /// Only this class; all classes when absent.
        #[arg(long)]
        class: Option<usize>,
    },
    /// Run an evaluation config.
    Run(RunArgs),
    /// Run an evaluation config with template ensembles enabled.
    Ensemble {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        size: Option<usize>,
        #[arg(long)]
        seeds: Option<usize>,
    },
    /// Mean and std of per-template accuracy.
    Summarize {
        #[arg(required = true)]
        results: Vec<PathBuf>,
        /// Comma-separated: backend, method, demo_seed, template_id, ensemble_seed.
        #[arg(long, default_value = "backend,method", value_delimiter = ',')]
        group_by: Vec<GroupBy>,
        #[arg(long)]
        json: bool,
    },
    /// Top-k overlap and rank correlation of template rankings across runs.
    AnalyzeTransfer {
        #[arg(required = true, num_args = 2..)]
        results: Vec<PathBuf>,
        #[arg(long, default_value = "direct")]
        method: String,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long)]
        json: bool,
    },
    /// Accuracy grouped by the variant of each template component.
    AnalyzeComponents {
        results: PathBuf,
        #[arg(long, default_value = "preset:sst2")]
        grammar: String,
        #[arg(long, default_value = "direct")]
        method: String,
        #[arg(long)]
        json: bool,
    },
    /// Template accuracies sorted and divided by the best one.
    RankCurve {
        results: PathBuf,
        #[arg(long, default_value = "direct")]
        method: String,
    },
    /// Count settings where few-shot beats zero-shot.
    Wins {
        /// Zero-shot results, paired in order with --few.
        #[arg(long, required = true)]
        zero: Vec<PathBuf>,
        #[arg(long, required = true)]
        few: Vec<PathBuf>,
    },
    /// Convert results to CSV.
    Export {
        results: PathBuf,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    workers: Option<usize>,
    /// Overrides the endpoint of a remote backend.
    #[arg(long)]
    endpoint: Option<String>,
}

fn main() {
    if let Err(e) = real_main() {
        let msg = format!("{e:#}");
        if msg.contains("Broken pipe") {
            // downstream reader closed stdout, e.g. `| head`
            return;
        }
        eprintln!("error: {msg}");
        std::process::exit(1);
    }
}

fn real_main() -> Result<()> {
    match Cli::parse().command {
        Command::Templates { grammar, sample, seed, json } => templates(&grammar, sample, seed, json),
        Command::Render { grammar, template, mode, text, demos, class } => {
            render_cmd(&grammar, template, mode, &text, demos.as_deref(), class)
        }
        Command::Run(args) => run(&args, None),
        Command::Ensemble { run: args, size, seeds } => {
            let d = EnsembleConfig::default();
            run(&args, Some((size.unwrap_or(d.size), seeds.unwrap_or(d.seeds))))
        }
        Command::Summarize { results, group_by, json } => {
            let records = read_many(&results)?;
            let rows = summarize(&records, &group_by)?;
            if json {
                return print_json(&rows);
            }
            for r in rows {
                let key: Vec<String> = r.key.iter().map(|(k, v)| format!("{k}={v}")).collect();
                let errors = if r.errors > 0 { format!("  errors={}", r.errors) } else { String::new() };
                println!("{}  {:.4} ± {:.4}  (n={}){errors}", key.join(" "), r.mean, r.std, r.n);
            }
            Ok(())
        }
        Command::AnalyzeTransfer { results, method, k, json } => {
            let mut settings = Vec::new();
            for p in &results {
                settings.push(template_scores(&read_results(p)?, &method).with_context(|| p.display().to_string())?);
            }
            let labels: Vec<String> = results.iter().map(|p| p.display().to_string()).collect();
            let m = transfer_matrix(labels, &settings, k)?;
            if json {
                return print_json(&m);
            }
            for (i, l) in m.labels.iter().enumerate() {
                println!("[{i}] {l}");
            }
            println!("top-{} IoU", m.k);
            for row in &m.iou {
                println!("{}", row.iter().map(|x| format!("{x:6.3}")).collect::<Vec<_>>().join(" "));
            }
            println!("Spearman");
            for row in &m.spearman {
                let cells: Vec<String> =
                    row.iter().map(|x| x.map(|v| format!("{v:6.3}")).unwrap_or_else(|| "     -".into())).collect();
                println!("{}", cells.join(" "));
            }
            Ok(())
        }
        Command::AnalyzeComponents { results, grammar, method, json } => {
            let g = ComponentSet::load(&grammar)?;
            let dims = component_analysis(&read_results(&results)?, &g, &method)?;
            if json {
                return print_json(&dims);
            }
            for (component, groups) in Component::ALL.iter().zip(&dims) {
                println!("{}", component.name());
                for grp in groups {
                    println!(
                        "  {:<24} {:.4} ± {:.4}  (n={})",
                        escape_visible(&grp.variant),
                        grp.mean,
                        grp.std,
                        grp.scores.len()
                    );
                }
            }
            Ok(())
        }
        Command::RankCurve { results, method } => {
            for (i, v) in rank_curve_for(&read_results(&results)?, &method)?.iter().enumerate() {
                println!("{}\t{v:.6}", i + 1);
            }
            Ok(())
        }
        Command::Wins { zero, few } => {
            if zero.len() != few.len() {
                bail!("{} --zero files but {} --few files", zero.len(), few.len());
            }
            let pairs = zero
                .iter()
                .zip(&few)
                .map(|(z, f)| Ok((read_results(z)?, read_results(f)?)))
                .collect::<Result<Vec<_>>>()?;
            let report = wins_between(&pairs)?;
            for (label, z, f) in &report.positions {
                println!("{label}\t{z:.4}\t{f:.4}\t{}", if f > z { "win" } else { "" });
            }
            println!("{}/{} wins", report.wins, report.total);
            Ok(())
        }
        Command::Export { results, out } => {
            let records = read_results(&results)?;
            match out {
                Some(p) => {
                    let f = std::fs::File::create(&p).with_context(|| p.display().to_string())?;
                    export_csv(&records, f)?;
                }
                None => export_csv(&records, std::io::stdout().lock())?,
            }
            Ok(())
        }
    }
}

fn templates(grammar: &str, sample: Option<usize>, seed: u64, json: bool) -> Result<()> {
    let g = ComponentSet::load(grammar)?;
    let list = match sample {
        Some(k) => g.sample_templates(k, seed)?,
        None => g.enumerate_templates(),
    };
    if json {
        return print_json(&list);
    }
    let mut out = std::io::stdout().lock();
    for t in &list {
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}",
            t.id,
            escape_visible(&t.input_verbalizer),
            escape_visible(&t.output_verbalizer),
            escape_visible(&t.intra_separator),
            escape_visible(&t.inter_separator)
        )?;
    }
    if sample.is_none() {
        eprintln!("{} templates", list.len());
    }
    Ok(())
}

fn render_cmd(
    grammar: &str,
    id: u64,
    mode: Mode,
    text: &str,
    demos: Option<&Path>,
    class: Option<usize>,
) -> Result<()> {
    let g = ComponentSet::load(grammar)?;
    let t = g.template(id)?;
    let demos: Vec<Demonstration> = match demos {
        Some(p) => load_demonstrations(p, g.num_classes())?.demos,
        None => Vec::new(),
    };
    let ctx = PromptContext::new(&g, &t, &demos);
    let classes: Vec<usize> = match class {
        Some(c) => vec![c],
        None => (0..g.num_classes()).collect(),
    };
    for c in classes {
        let p = render(&ctx, mode, text, c)?;
        println!("class {c} ({})", g.label_word(c)?);
        println!("  prefix:       \"{}\"", escape_visible(&p.prefix));
        println!("  continuation: \"{}\"", escape_visible(&p.continuation));
    }
    Ok(())
}

fn run(args: &RunArgs, ensemble: Option<(usize, usize)>) -> Result<()> {
    let mut config = RunConfig::load(&args.config).with_context(|| format!("loading {}", args.config.display()))?;
    if args.workers.is_some() {
        config.workers = args.workers;
    }
    if let Some(url) = &args.endpoint {
        match &mut config.backend {
            BackendSpec::Remote { config } => config.endpoint = url.clone(),
            _ => bail!("--endpoint given but the config backend is not remote"),
        }
    }
    if let Some((size, seeds)) = ensemble {
        config.ensemble = Some(EnsembleConfig { size, seeds });
    }
    let out = runner::run_evaluation(&config, &args.out)?;
    let m = &out.manifest;
    eprintln!(
        "{} records ({} errors) in {}; {} backend calls, {} cache hits, {} ms",
        m.records,
        m.errors,
        args.out.display(),
        out.stats.backend_calls,
        out.stats.cache_hits,
        out.stats.elapsed_ms
    );
    if m.errors > 0 {
        if let Some(r) = out.records.iter().find(|r| r.is_error()) {
            eprintln!("first error: {}", r.error.as_deref().unwrap_or_default());
        }
    }
    Ok(())
}

fn read_many(paths: &[PathBuf]) -> Result<Vec<RunRecord>> {
    let mut all = Vec::new();
    for p in paths {
        all.extend(read_results(p)?);
    }
    Ok(all)
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}
