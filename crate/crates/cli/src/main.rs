use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use fuseqa_core::error::{Error, ErrorKind, Result};
use fuseqa_core::experiment::{
    compare_reports, run_experiment, split_questions, ExperimentConfig, RunReport, SplitRegime, Step,
    SynthPreset, SynthSpec,
};
use fuseqa_core::io::{read_jsonl, to_jsonl, write_atomic, Matrix};
use fuseqa_core::questions::{parse_question, PromptRecord, QaRecord, QuestionMix};
use fuseqa_core::sarprep::{
    assemble_sar_input, compute_saturation_bounds, raster_files, raw_sar_stack, read_raster,
    write_raster, SarMode, DEFAULT_LOWER_QUANTILE, DEFAULT_UPPER_QUANTILE,
};
use fuseqa_core::synth::{gen_dataset, labels_from_matrix, write_synth_dataset, SplitName};
use fuseqa_core::taxonomy::{load_nomenclature, Nomenclature, NomenclatureKind};

const THREADS_ENV: &str = "FUSEQA_THREADS";

#[derive(Parser)]
#[command(name = "fuseqa", version, about = "SAR/optical land-cover fusion and template VQA")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    #[value(name = "2ch")]
    Two,
    #[value(name = "3ch")]
    Three,
}

impl From<Mode> for SarMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Two => SarMode::TwoChannel,
            Mode::Three => SarMode::ThreeChannel,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Complementary,
    Imbalanced,
    Uniform,
}

impl From<Preset> for SynthPreset {
    fn from(p: Preset) -> Self {
        match p {
            Preset::Complementary => SynthPreset::Complementary,
            Preset::Imbalanced => SynthPreset::Imbalanced,
            Preset::Uniform => SynthPreset::Uniform,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Saturate and normalize `<id>_vv` / `<id>_vh` raster pairs.
    Preprocess {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "3ch")]
        mode: Mode,
        #[arg(long, default_value_t = DEFAULT_LOWER_QUANTILE)]
        lower_q: f64,
        #[arg(long, default_value_t = DEFAULT_UPPER_QUANTILE)]
        upper_q: f64,
    },
    /// Run an experiment and emit its report.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Directory for report files; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
    },
    /// Compare the final stages of two or more run reports.
    Compare {
        #[arg(required = true, num_args = 2..)]
        reports: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
    /// Write language-model prompts for label sets and questions.
    ExportPrompts {
        /// CSV of 0/1 labels (`sample_id,c0,c1,…`).
        #[arg(long)]
        labels: PathBuf,
        /// Q&A JSONL.
        #[arg(long)]
        questions: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// `benmm19`, `rsvqa61` or a nomenclature JSON file.
        #[arg(long, default_value = "benmm19")]
        nomenclature: String,
    },
    /// Write a synthetic dataset with questions for every split.
    Generate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "benmm19")]
        nomenclature: String,
        #[arg(long, value_enum, default_value = "complementary")]
        preset: Preset,
        #[arg(long, default_value_t = 5000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Test-split domain shift; 0 keeps a random split.
        #[arg(long, default_value_t = 0.0)]
        shift: f64,
        #[arg(long, default_value_t = 25)]
        questions: usize,
    },
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Config => 1,
        ErrorKind::Io => 2,
        ErrorKind::DataContract => 3,
    }
}

fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("{THREADS_ENV} must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(e.to_string()))
}

fn nomenclature_arg(arg: &str) -> Result<Nomenclature> {
    match arg.parse::<NomenclatureKind>() {
        Ok(NomenclatureKind::Custom) | Err(_) => load_nomenclature(arg, NomenclatureKind::Custom),
        Ok(kind) => Nomenclature::bundled(kind),
    }
}

fn write_or_print(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => write_atomic(p, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// Ids with `<id>_vv` or `<id>_vh` files, and every expected file that is absent.
fn raster_pairs(dir: &Path) -> Result<(Vec<String>, Vec<PathBuf>)> {
    let mut ids = BTreeSet::new();
    for entry in fs::read_dir(dir)? {
        let name = entry?.file_name().to_string_lossy().into_owned();
        let Some(stem) = name.strip_suffix(".bin").or_else(|| name.strip_suffix(".json")) else {
            continue;
        };
        if let Some(id) = stem.strip_suffix("_vv").or_else(|| stem.strip_suffix("_vh")) {
            ids.insert(id.to_string());
        }
    }
    let mut missing = Vec::new();
    for id in &ids {
        for pol in ["vv", "vh"] {
            missing.extend(
                raster_files(dir.join(format!("{id}_{pol}")))
                    .into_iter()
                    .filter(|p| !p.exists()),
            );
        }
    }
    Ok((ids.into_iter().collect(), missing))
}

fn cmd_preprocess(input: &Path, out: &Path, mode: SarMode, lower_q: f64, upper_q: f64) -> Result<()> {
    let (ids, missing) = raster_pairs(input)?;
    if !missing.is_empty() {
        let list: Vec<String> = missing.iter().map(|p| p.display().to_string()).collect();
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("missing raster files:\n  {}", list.join("\n  ")),
        )));
    }
    if ids.is_empty() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("no `<id>_vv` / `<id>_vh` rasters in {}", input.display()),
        )));
    }
    let pairs = ids
        .iter()
        .map(|id| {
            let vv = read_raster(input.join(format!("{id}_vv")))?;
            let vh = read_raster(input.join(format!("{id}_vh")))?;
            Ok((vv, vh))
        })
        .collect::<Result<Vec<_>>>()?;
    let raw = pairs
        .iter()
        .map(|(vv, vh)| raw_sar_stack(vv, vh))
        .collect::<Result<Vec<_>>>()?;
    let bounds = compute_saturation_bounds(&raw, lower_q, upper_q)?;
    fs::create_dir_all(out)?;
    for (id, (vv, vh)) in ids.iter().zip(&pairs) {
        write_raster(out.join(id), &assemble_sar_input(vv, vh, mode, &bounds)?)?;
    }
    write_atomic(out.join("bounds.json"), serde_json::to_string_pretty(&bounds)?.as_bytes())?;
    eprintln!("preprocessed {} raster pairs into {}", ids.len(), out.display());
    Ok(())
}

fn read_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path)?;
    let bad = |e: serde_json::Error| Error::Config(format!("{}: {e}", path.display()));
    let user: serde_json::Value = serde_json::from_str(&text).map_err(bad)?;
    // a step preset supplies defaults for the fields the file leaves out
    let Some(step) = user.get("step") else {
        return serde_json::from_value(user).map_err(bad);
    };
    let step: Step = serde_json::from_value(step.clone()).map_err(bad)?;
    let mut merged = serde_json::to_value(ExperimentConfig::preset(step))?;
    if let (Some(base), serde_json::Value::Object(fields)) = (merged.as_object_mut(), user) {
        base.extend(fields);
    }
    serde_json::from_value(merged).map_err(bad)
}

fn cmd_run(config: &Path, seed: Option<u64>, out: Option<&Path>, format: Format) -> Result<()> {
    let mut cfg = read_config(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let report = run_experiment(&cfg)?;
    let json = serde_json::to_string_pretty(&report)?;
    match (out, format) {
        (Some(dir), Format::Json) => {
            fs::create_dir_all(dir)?;
            write_atomic(dir.join("report.json"), json.as_bytes())
        }
        (Some(dir), Format::Csv) => {
            fs::create_dir_all(dir)?;
            write_atomic(dir.join("table.csv"), report.table_csv()?.as_bytes())?;
            write_atomic(dir.join("per_class.csv"), report.per_class_csv()?.as_bytes())
        }
        (None, Format::Json) => write_or_print(None, &(json + "\n")),
        (None, Format::Csv) => write_or_print(None, &report.table_csv()?),
    }
}

fn cmd_compare(paths: &[PathBuf], out: Option<&Path>, format: Format) -> Result<()> {
    let reports = paths
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p)?;
            serde_json::from_str::<RunReport>(&text)
                .map_err(|e| Error::Format(format!("{}: {e}", p.display())))
        })
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<String> = paths.iter().map(|p| p.display().to_string()).collect();
    let cmp = compare_reports(&labels, &reports)?;
    let text = match format {
        Format::Csv => cmp.to_csv()?,
        Format::Json => serde_json::to_string_pretty(&cmp)? + "\n",
    };
    write_or_print(out, &text)
}

fn cmd_export_prompts(labels: &Path, questions: &Path, out: &Path, nom: &str) -> Result<()> {
    let nom = nomenclature_arg(nom)?;
    let matrix = Matrix::read(labels)?;
    let label_sets = labels_from_matrix(&matrix, nom.len())?;
    let index: HashMap<&str, usize> = matrix
        .ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    let mut by_sample: Vec<Vec<QaRecord>> = vec![Vec::new(); matrix.ids.len()];
    for q in read_jsonl::<QaRecord>(questions)? {
        let i = *index
            .get(q.sample_id.as_str())
            .ok_or_else(|| Error::Format(format!("question for sample `{}` has no labels", q.sample_id)))?;
        let ast = parse_question(&q.question, &nom)?;
        if ast.qtype() != q.qtype {
            return Err(Error::Format(format!("question type disagrees with text: {}", q.question)));
        }
        by_sample[i].push(q);
    }
    let prompts: Vec<PromptRecord> = by_sample
        .iter()
        .zip(&label_sets)
        .flat_map(|(qs, l)| qs.iter().map(|q| PromptRecord::new(l, &nom, q)))
        .collect();
    write_atomic(out, to_jsonl(&prompts)?.as_bytes())?;
    eprintln!("wrote {} prompts to {}", prompts.len(), out.display());
    Ok(())
}

fn cmd_generate(
    out: &Path,
    nom: &str,
    preset: SynthPreset,
    samples: usize,
    seed: u64,
    shift: f64,
    questions: usize,
) -> Result<()> {
    let nom = nomenclature_arg(nom)?;
    let spec = SynthSpec {
        preset,
        n_samples: samples,
        domain_shift: Some(shift),
        ..Default::default()
    };
    let regime = if shift > 0.0 {
        SplitRegime::Shifted
    } else {
        SplitRegime::Random
    };
    let ds = gen_dataset(&spec.to_config(&nom, regime, seed)?)?;
    write_synth_dataset(out, &ds)?;
    let mix = QuestionMix::default();
    for name in SplitName::ALL {
        let qs = split_questions(ds.data.split(name), &nom, questions, &mix, seed)?;
        let flat: Vec<QaRecord> = qs.into_iter().flatten().collect();
        write_atomic(
            out.join(format!("{}_questions.jsonl", name.as_str())),
            to_jsonl(&flat)?.as_bytes(),
        )?;
    }
    eprintln!("wrote {samples} samples to {}", out.display());
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Preprocess {
            input,
            out,
            mode,
            lower_q,
            upper_q,
        } => cmd_preprocess(&input, &out, mode.into(), lower_q, upper_q),
        Command::Run {
            config,
            seed,
            out,
            format,
        } => cmd_run(&config, seed, out.as_deref(), format),
        Command::Compare {
            reports,
            out,
            format,
        } => cmd_compare(&reports, out.as_deref(), format),
        Command::ExportPrompts {
            labels,
            questions,
            out,
            nomenclature,
        } => cmd_export_prompts(&labels, &questions, &out, &nomenclature),
        Command::Generate {
            out,
            nomenclature,
            preset,
            samples,
            seed,
            shift,
            questions,
        } => cmd_generate(&out, &nomenclature, preset.into(), samples, seed, shift, questions),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return if usage { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.kind()))
        }
    }
}
