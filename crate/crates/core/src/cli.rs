//! The `geoprompt` command line.
//!
//! Every command writes its outputs atomically, logs to stderr and prints one
//! JSON summary line to stdout. Exit status: 0 success, 1 data error, 2 usage error.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::augment::{augment, AugmentPolicy};
use crate::error::{Error, Result};
use crate::ingest::{parse_coco, parse_manifest, split_subset, stats, write_manifest, DatasetManifest, DEFAULT_QUANTILES};
use crate::io::{read, write_atomic};
use crate::layout::{default_views, ensure_valid, GridSpec};
use crate::mask::{build_mask, encode_mask, MaskParams, MaskSidecar, DEFAULT_P, DEFAULT_W};
use crate::metrics::{evaluate, parse_predictions, EvalConfig};
use crate::prompt::{build_prompt, parse_jsonl, parse_prompt, write_jsonl, PromptOptions, Template, DEFAULT_DROPOUT_P};
use crate::token::{build_embeddings, encode_embeddings, EmbeddingSidecar, TokenVocabulary};

/// `WxH` pair, e.g. `400x228`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub w: u32,
    pub h: u32,
}

fn parse_dims(s: &str) -> std::result::Result<Dims, String> {
    let (w, h) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected WxH, got {s:?}"))?;
    let w: u32 = w.trim().parse().map_err(|e| format!("bad width in {s:?}: {e}"))?;
    let h: u32 = h.trim().parse().map_err(|e| format!("bad height in {s:?}: {e}"))?;
    if w == 0 || h == 0 {
        return Err(format!("dimensions must be positive, got {s:?}"));
    }
    Ok(Dims { w, h })
}

fn parse_template(s: &str) -> std::result::Result<Template, String> {
    match s {
        "auto" => Ok(Template::Auto),
        "base" => Ok(Template::Base),
        "extended" => Ok(Template::Extended),
        _ => Err(format!("unknown template {s:?} (auto, base, extended)")),
    }
}

#[derive(Debug, Parser)]
#[command(name = "geoprompt", version, about = "Layout to prompt, mask and metric tooling for detection data generation")]
pub struct Cli {
    /// Seed for every random decision.
    #[arg(long, global = true, env = "GEOPROMPT_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Worker threads; 0 picks one per core. Output order never depends on it.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    /// Comma-separated camera views accepted in manifests.
    #[arg(long, global = true, value_delimiter = ',')]
    pub views: Option<Vec<String>>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// COCO JSON to canonical manifest.
    Convert {
        #[arg(long)]
        coco: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Manifest to prompt records (JSON Lines).
    Encode(EncodeArgs),
    /// Prompt records back to a manifest at bin-center resolution.
    Decode {
        #[arg(long)]
        prompts: PathBuf,
        /// Reference manifest supplying class names and image sizes.
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_parser = parse_dims, default_value = "400x228")]
        grid: Dims,
        #[arg(long)]
        out: PathBuf,
    },
    /// One GEOM re-weighting mask per image.
    Mask(MaskArgs),
    /// Filter / flip / shift augmentation of a manifest.
    Augment {
        #[arg(long)]
        manifest: PathBuf,
        /// TOML policy file; defaults apply when omitted.
        #[arg(long)]
        policy: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-class statistics report (JSON).
    Stats {
        #[arg(long, required_unless_present = "coco", conflicts_with = "coco")]
        manifest: Option<PathBuf>,
        #[arg(long)]
        coco: Option<PathBuf>,
        #[arg(long, default_value_t = 0.015)]
        rare_fraction: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Seeded image subset.
    Split {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        fraction: f64,
        /// Take prefixes of one permutation so smaller subsets nest in larger ones.
        #[arg(long)]
        nested: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// COCO-style AP of predictions against a manifest.
    EvalMap {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long, default_value_t = 100)]
        max_dets: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sine-cosine location-token embedding table (GEOE + JSON sidecar).
    Embed {
        #[arg(long, value_parser = parse_dims, default_value = "400x228")]
        grid: Dims,
        #[arg(long, value_parser = parse_dims, default_value = "800x456")]
        size: Dims,
        #[arg(long, default_value_t = 768)]
        dim: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Bins as W_binxH_bin; image size comes from each layout.
    #[arg(long, value_parser = parse_dims, default_value = "400x228")]
    pub grid: Dims,
    #[arg(long, value_parser = parse_template, default_value = "auto")]
    pub template: Template,
    /// Replace prompts by the null text with probability --dropout-p.
    #[arg(long)]
    pub dropout: bool,
    #[arg(long, default_value_t = DEFAULT_DROPOUT_P)]
    pub dropout_p: f64,
    #[arg(long, default_value = "")]
    pub null_text: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MaskArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Latent grid as W'xH'.
    #[arg(long, value_parser = parse_dims)]
    pub latent: Dims,
    #[arg(long, default_value_t = DEFAULT_W)]
    pub w: f64,
    #[arg(long, default_value_t = DEFAULT_P)]
    pub p: f64,
    #[arg(long)]
    pub no_normalize: bool,
    /// Also write `<image>.json` with parameters and checksum.
    #[arg(long)]
    pub sidecar: bool,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

/// Resolved settings shared by every command.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub seed: u64,
    pub jobs: usize,
    pub views: Vec<String>,
}

impl RunConfig {
    fn from_cli(cli: &Cli) -> Self {
        Self { seed: cli.seed, jobs: cli.jobs, views: cli.views.clone().unwrap_or_else(default_views) }
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.jobs)
            .build()
            .map_err(|e| Error::Argument(format!("cannot start {} workers: {e}", self.jobs)))
    }

    fn load_manifest(&self, path: &Path, log: &mut dyn Write) -> Result<DatasetManifest> {
        let parsed = parse_manifest(&read(path)?, &self.views, &path.display().to_string())?;
        for w in &parsed.warnings {
            let _ = writeln!(log, "warning: {}: {w}", path.display());
        }
        Ok(parsed.manifest)
    }
}

/// Parses `argv` (program name first) and runs the command.
pub fn run<I, T>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = write!(stderr, "{}", e.render());
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let config = RunConfig::from_cli(&cli);
    let name = command_name(&cli.command);
    match execute(&cli.command, &config, stderr) {
        Ok(mut summary) => {
            summary["command"] = json!(name);
            summary["ok"] = json!(true);
            let _ = writeln!(stdout, "{summary}");
            0
        }
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            let _ = writeln!(stdout, "{}", json!({ "command": name, "ok": false, "error": e.to_string() }));
            1
        }
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Convert { .. } => "convert",
        Command::Encode(_) => "encode",
        Command::Decode { .. } => "decode",
        Command::Mask(_) => "mask",
        Command::Augment { .. } => "augment",
        Command::Stats { .. } => "stats",
        Command::Split { .. } => "split",
        Command::EvalMap { .. } => "eval-map",
        Command::Embed { .. } => "embed",
    }
}

fn execute(command: &Command, config: &RunConfig, log: &mut dyn Write) -> Result<Value> {
    match command {
        Command::Convert { coco, out } => {
            let m = parse_coco(&read(coco)?, &coco.display().to_string())?;
            write_atomic(out, &write_manifest(&m))?;
            Ok(json!({ "images": m.layouts.len(), "annotations": m.annotation_count(), "out": out }))
        }
        Command::Encode(args) => encode(args, config, log),
        Command::Decode { prompts, manifest, grid, out } => {
            let reference = config.load_manifest(manifest, log)?;
            let records = parse_jsonl(&read(prompts)?)?;
            let mut decoded = DatasetManifest { categories: reference.categories.clone(), ..Default::default() };
            let mut skipped = 0;
            for r in &records {
                if r.dropped {
                    skipped += 1;
                    continue;
                }
                let size = reference
                    .find(&r.image_id)
                    .ok_or_else(|| Error::Argument(format!("prompt for unknown image {:?}", r.image_id)))?;
                let vocab = TokenVocabulary::new(GridSpec::new(grid.w, grid.h, size.width, size.height)?);
                let mut layout = parse_prompt(&r.prompt, &vocab, &reference.categories)?;
                layout.image_id = r.image_id.clone();
                decoded.layouts.push(layout);
            }
            write_atomic(out, &write_manifest(&decoded))?;
            Ok(json!({ "records": records.len(), "decoded": decoded.layouts.len(), "skipped_dropped": skipped, "out": out }))
        }
        Command::Mask(args) => mask(args, config, log),
        Command::Augment { manifest, policy, out } => {
            let policy = match policy {
                Some(p) => AugmentPolicy::from_toml(&String::from_utf8_lossy(&read(p)?))?,
                None => AugmentPolicy::default(),
            };
            let m = config.load_manifest(manifest, log)?;
            let layouts = config.pool()?.install(|| {
                m.layouts
                    .par_iter()
                    .map(|l| {
                        ensure_valid(l)?;
                        augment(l, &policy, config.seed)
                    })
                    .collect::<Result<Vec<_>>>()
            })?;
            let out_manifest = DatasetManifest { layouts, ..m.clone() };
            write_atomic(out, &write_manifest(&out_manifest))?;
            Ok(json!({
                "images": out_manifest.layouts.len(),
                "boxes_in": m.annotation_count(),
                "boxes_out": out_manifest.annotation_count(),
                "out": out,
            }))
        }
        Command::Stats { manifest, coco, rare_fraction, out } => {
            let m = match (manifest, coco) {
                (Some(p), _) => config.load_manifest(p, log)?,
                (None, Some(p)) => parse_coco(&read(p)?, &p.display().to_string())?,
                (None, None) => unreachable!("clap requires one input"),
            };
            let s = stats(&m, *rare_fraction, &DEFAULT_QUANTILES);
            let mut bytes = serde_json::to_vec_pretty(&s).expect("stats serialize");
            bytes.push(b'\n');
            write_atomic(out, &bytes)?;
            let rare: Vec<_> = s.classes.iter().filter(|c| c.rare).map(|c| c.class_id).collect();
            Ok(json!({ "annotations": s.total, "classes": s.classes.len(), "rare": rare, "out": out }))
        }
        Command::Split { manifest, fraction, nested, out } => {
            let m = config.load_manifest(manifest, log)?;
            let subset = split_subset(&m, *fraction, config.seed, *nested)?;
            write_atomic(out, &write_manifest(&subset))?;
            Ok(json!({ "images_in": m.layouts.len(), "images_out": subset.layouts.len(), "out": out }))
        }
        Command::EvalMap { pred, truth, max_dets, out } => {
            let truths = config.load_manifest(truth, log)?;
            let preds = parse_predictions(&read(pred)?)?;
            let eval_config = EvalConfig { max_dets: *max_dets, ..Default::default() };
            let report = config.pool()?.install(|| evaluate(&preds, &truths, &eval_config))?;
            if let Some(out) = out {
                let mut bytes = serde_json::to_vec_pretty(&report).expect("report serializes");
                bytes.push(b'\n');
                write_atomic(out, &bytes)?;
            }
            Ok(json!({
                "mAP": report.map,
                "AP50": report.ap50,
                "AP75": report.ap75,
                "AP_medium": report.ap_medium,
                "AP_large": report.ap_large,
                "detections": preds.len(),
            }))
        }
        Command::Embed { grid, size, dim, out } => {
            let vocab = TokenVocabulary::new(GridSpec::new(grid.w, grid.h, size.w, size.h)?);
            let table = build_embeddings(&vocab, *dim)?;
            write_atomic(out, &encode_embeddings(&table))?;
            let sidecar_path = sidecar_path(out);
            let mut sidecar = serde_json::to_vec_pretty(&EmbeddingSidecar::new(&vocab, &table)).expect("sidecar serializes");
            sidecar.push(b'\n');
            write_atomic(&sidecar_path, &sidecar)?;
            Ok(json!({ "rows": table.rows(), "dim": table.dim(), "out": out, "sidecar": sidecar_path }))
        }
    }
}

fn sidecar_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn encode(args: &EncodeArgs, config: &RunConfig, log: &mut dyn Write) -> Result<Value> {
    let m = config.load_manifest(&args.manifest, log)?;
    let options = PromptOptions {
        template: args.template,
        dropout: args.dropout,
        dropout_p: args.dropout_p,
        null_text: args.null_text.clone(),
    };
    if !(0.0..=1.0).contains(&options.dropout_p) {
        return Err(Error::Argument(format!("dropout probability {} outside [0, 1]", options.dropout_p)));
    }
    let records = config.pool()?.install(|| {
        m.layouts
            .par_iter()
            .map(|l| {
                let vocab = TokenVocabulary::new(GridSpec::new(args.grid.w, args.grid.h, l.width, l.height)?);
                build_prompt(l, &vocab, config.seed, &options)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let mut bytes = Vec::new();
    write_jsonl(&records, &mut bytes);
    write_atomic(&args.out, &bytes)?;
    let dropped = records.iter().filter(|r| r.dropped).count();
    let _ = writeln!(log, "encoded {} layouts ({dropped} dropped to null text)", records.len());
    Ok(json!({ "records": records.len(), "dropped": dropped, "seed": config.seed, "out": args.out }))
}

/// Filename-safe form of an image id.
pub fn file_stem(image_id: &str) -> String {
    let stem: String =
        image_id.chars().map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' }).collect();
    if stem.is_empty() || stem.chars().all(|c| c == '.') {
        format!("_{stem}")
    } else {
        stem
    }
}

fn mask(args: &MaskArgs, config: &RunConfig, log: &mut dyn Write) -> Result<Value> {
    let m = config.load_manifest(&args.manifest, log)?;
    let params = MaskParams { w: args.w, p: args.p, normalize: !args.no_normalize };
    params.check()?;
    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    let mut stems = std::collections::HashSet::new();
    for l in &m.layouts {
        if !stems.insert(file_stem(&l.image_id)) {
            return Err(Error::Argument(format!("image id {:?} collides with another after filename mapping", l.image_id)));
        }
    }
    config.pool()?.install(|| {
        m.layouts.par_iter().try_for_each(|l| {
            ensure_valid(l)?;
            let mask = build_mask(l, args.latent.w, args.latent.h, params)?;
            let bytes = encode_mask(&mask);
            let stem = file_stem(&l.image_id);
            write_atomic(&args.out.join(format!("{stem}.geom")), &bytes)?;
            if args.sidecar {
                let mut side = serde_json::to_vec_pretty(&MaskSidecar::new(&l.image_id, &mask, &bytes)).expect("sidecar serializes");
                side.push(b'\n');
                write_atomic(&args.out.join(format!("{stem}.json")), &side)?;
            }
            Ok::<_, Error>(())
        })
    })?;
    Ok(json!({
        "masks": m.layouts.len(),
        "latent": format!("{}x{}", args.latent.w, args.latent.h),
        "w": params.w,
        "p": params.p,
        "normalize": params.normalize,
        "out": args.out,
    }))
}
