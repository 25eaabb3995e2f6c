//! The subcommands of the `spectrapipe` binary.

use crate::config::{camera_config_text, Config};
use crate::data::{load_labelled, load_train_data};
use crate::formats::{decode_cube, decode_pfm, encode_cube, encode_pfm, read_cube, read_pfm, read_pgm, write_cube, write_pfm, write_pgm, write_ppm};
use crate::synth::{generate, write_set, SynthMode, SynthSpec};
use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use spectrapipe_core::camera::camera_forward;
use spectrapipe_core::filters::{FilterBank, FILTER_SWEEP};
use spectrapipe_core::matching::SpectralDb;
use spectrapipe_core::metrics::mse;
use spectrapipe_core::params::ParamStore;
use spectrapipe_core::recovery::{evaluate, recover, train, Dataset, LossBreakdown, RecoveryModel};
use spectrapipe_core::response::ResponseMatrix;
use spectrapipe_core::rng::CounterRng;
use spectrapipe_core::segmentation::{mean_acc, pixel_acc, segment, train_seg, SegModel, SegTrainConfig};
use spectrapipe_core::table::fmt_sig9;
use spectrapipe_core::{LabelMap, RgbImage, SpectralCube};
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Debug, Parser)]
#[command(name = "spectrapipe", version, about = "Spectral recovery, camera simulation and material segmentation")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct Global {
    /// key=value configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configuration seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset.
    GenSynth(GenSynthArgs),
    /// Render a cube through the camera model.
    Simulate(SimulateArgs),
    /// Train the recovery network or the segmentation head.
    Train(TrainArgs),
    /// Recover a cube from an RGB image.
    Recover(RecoverArgs),
    /// Label every pixel of a cube.
    Segment(SegmentArgs),
    /// Accuracy of a label map, and optionally the loss terms of a model.
    Eval(EvalArgs),
    /// Write filter and response curves as CSV.
    ExportCurves(ExportArgs),
}

#[derive(Debug, Args)]
pub struct GenSynthArgs {
    #[arg(long, default_value_t = 16)]
    pub count: usize,
    #[arg(long, default_value_t = 32)]
    pub size: usize,
    /// Spectra linear in three coefficients instead of eight.
    #[arg(long)]
    pub linear: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub cube: PathBuf,
    /// Response curve CSV; defaults to the configured or bundled curves.
    #[arg(long)]
    pub curves: Option<PathBuf>,
    /// Output PFM.
    #[arg(long)]
    pub out: PathBuf,
    /// 8-bit PPM preview.
    #[arg(long)]
    pub preview: Option<PathBuf>,
    /// Prints `mse=` between the output and this PFM.
    #[arg(long)]
    pub reference: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Target {
    Recovery,
    Segmentation,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory written by `gen-synth`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = Target::Recovery)]
    pub target: Target,
    #[arg(long)]
    pub out: PathBuf,
    /// Filter counts to compare (segmentation only), e.g. `4,8,12,16`.
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    pub sweep: Option<Vec<usize>>,
}

#[derive(Debug, Args)]
pub struct RecoverArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// RGB image (PFM).
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    /// Segmentation checkpoint written by `train --target segmentation`.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub cube: PathBuf,
    /// Spectral database CSV; defaults to the configured one.
    #[arg(long)]
    pub db: Option<PathBuf>,
    /// Output label map (PGM).
    #[arg(long)]
    pub out: PathBuf,
    /// Per-pixel class probabilities as CSV.
    #[arg(long)]
    pub probs: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, requires = "gt")]
    pub pred: Option<PathBuf>,
    #[arg(long, requires = "pred")]
    pub gt: Option<PathBuf>,
    /// Recovery checkpoint whose loss terms are printed (needs `--data`).
    #[arg(long, requires = "data")]
    pub model: Option<PathBuf>,
    #[arg(long, requires = "model")]
    pub data: Option<PathBuf>,
    /// Items averaged in the loss table.
    #[arg(long, default_value_t = 8)]
    pub items: usize,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// Segmentation checkpoint: writes `filters.csv`.
    #[arg(long)]
    pub seg_model: Option<PathBuf>,
    /// Recovery checkpoint: writes `curves_spectral.csv` and
    /// `curves_material.csv` (trained displacements, no per-image terms).
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    let cfg = Config::resolve(cli.global.config.as_deref(), cli.global.seed)?;
    match cli.command {
        Command::GenSynth(a) => cmd_gen_synth(&cfg, &a),
        Command::Simulate(a) => cmd_simulate(&cfg, &a, out),
        Command::Train(a) => cmd_train(&cfg, &a, out),
        Command::Recover(a) => cmd_recover(&a),
        Command::Segment(a) => cmd_segment(&cfg, &a),
        Command::Eval(a) => cmd_eval(&cfg, &a, out),
        Command::ExportCurves(a) => cmd_export_curves(&a),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn load_curves(path: Option<&Path>) -> Result<ResponseMatrix> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading curves {}", p.display()))?;
            ResponseMatrix::parse_curves(&text).with_context(|| format!("in {}", p.display()))
        }
        None => Ok(ResponseMatrix::standard()),
    }
}

fn load_db(path: Option<&Path>) -> Result<SpectralDb> {
    let path = path.context("no spectral database: pass --db or set `db` in the config")?;
    SpectralDb::load(path).with_context(|| format!("loading database {}", path.display()))
}

fn load_recovery(path: &Path) -> Result<RecoveryModel> {
    let store = ParamStore::load(path).with_context(|| format!("loading model {}", path.display()))?;
    RecoveryModel::from_params(store).with_context(|| format!("in {}", path.display()))
}

fn load_seg(path: &Path) -> Result<(SegModel, FilterBank)> {
    let store = ParamStore::load(path).with_context(|| format!("loading model {}", path.display()))?;
    SegModel::unbundle(&store).with_context(|| format!("in {}", path.display()))
}

/// Values as they come back from the cube and PFM files.
fn through_cube_file(h: &SpectralCube) -> Result<SpectralCube> {
    decode_cube(&encode_cube(h))
}

fn through_pfm_file(x: &RgbImage) -> Result<RgbImage> {
    decode_pfm(&encode_pfm(x))
}

pub fn cmd_gen_synth(cfg: &Config, a: &GenSynthArgs) -> Result<()> {
    ensure!(a.count > 0, "--count must be at least 1");
    let spec = SynthSpec {
        seed: cfg.seed,
        count: a.count,
        size: a.size,
        classes: cfg.classes,
        mode: if a.linear { SynthMode::Linear } else { SynthMode::Standard },
        camera: cfg.camera,
    };
    write_set(&generate(&spec)?, &a.out)
}

pub fn cmd_simulate(cfg: &Config, a: &SimulateArgs, out: &mut dyn Write) -> Result<()> {
    let cube = read_cube(&a.cube)?;
    let curves = load_curves(a.curves.as_deref().or(cfg.curves.as_deref()))?;
    let img = camera_forward(&cube, &curves, &cfg.camera, &CounterRng::new(cfg.seed))
        .with_context(|| format!("simulating {}", a.cube.display()))?;
    write_pfm(&a.out, &img)?;
    if let Some(p) = &a.preview {
        write_ppm(p, &img)?;
    }
    if let Some(r) = &a.reference {
        let reference = read_pfm(r)?;
        let written = through_pfm_file(&img)?;
        writeln!(out, "mse={}", fmt_sig9(mse(&reference, &written)?))?;
    }
    Ok(())
}

fn trace_csv(trace: &[LossBreakdown]) -> String {
    let mut s = String::from("step,band,rgb,spectral,domain,trans,total\n");
    for (i, l) in trace.iter().enumerate() {
        let cols: Vec<String> = [l.band, l.rgb, l.spectral, l.domain, l.trans, l.total]
            .iter()
            .map(|v| fmt_sig9(*v))
            .collect();
        s.push_str(&format!("{i},{}\n", cols.join(",")));
    }
    s
}

pub fn cmd_train(cfg: &Config, a: &TrainArgs, out: &mut dyn Write) -> Result<()> {
    match a.target {
        Target::Recovery => {
            ensure!(a.sweep.is_none(), "--sweep applies to --target segmentation only");
            train_recovery(cfg, a, out)
        }
        Target::Segmentation => train_segmentation(cfg, a, out),
    }
}

fn train_recovery(cfg: &Config, a: &TrainArgs, out: &mut dyn Write) -> Result<()> {
    let data = load_train_data(&a.data)?;
    let curves_s = load_curves(cfg.curves.as_deref())?;
    let curves_m = match &cfg.curves_material {
        Some(p) => load_curves(Some(p))?,
        None => curves_s.clone(),
    };
    let outcome = train(&data, &curves_s, &curves_m, &cfg.train)?;
    create_dir(&a.out)?;
    let model_path = a.out.join("model.msnm");
    outcome.best.params().save(&model_path)?;
    outcome.model.params().save(&a.out.join("last.msnm"))?;
    write_text(&a.out.join("trace.csv"), &trace_csv(&outcome.trace))?;

    // The best checkpoint as stored, applied to material image 0 through
    // its effective camera, exactly as `recover` and `simulate` would.
    let best = load_recovery(&model_path)?;
    let x_m = &data.material[0];
    let (rm, p) = best.effective_camera(Dataset::Material, x_m, cfg.camera.jpeg_quality)?;
    let curves_path = a.out.join("camera_m.csv");
    let conf_path = a.out.join("camera_m.conf");
    write_text(&curves_path, &rm.to_csv())?;
    write_text(&conf_path, &format!("seed={}\n{}", cfg.seed, camera_config_text(&p)))?;
    let rm = load_curves(Some(&curves_path))?;
    let p = Config::load(&conf_path)?.camera;
    let h = through_cube_file(&recover(&best, x_m))?;
    let y = through_pfm_file(&camera_forward(&h, &rm, &p, &CounterRng::new(cfg.seed))?)?;
    let trans = mse(x_m, &y)?;

    if let (Some(first), Some(last)) = (outcome.trace.first(), outcome.trace.last()) {
        writeln!(out, "initial_loss_total={}", fmt_sig9(first.total))?;
        writeln!(out, "final_loss_total={}", fmt_sig9(last.total))?;
    }
    if let Some(step) = outcome.best_step {
        writeln!(out, "best_step={step}")?;
    }
    writeln!(out, "final_loss_trans={}", fmt_sig9(trans))?;
    Ok(())
}

fn seg_trace_csv(trace: &[f64]) -> String {
    let mut s = String::from("step,cross_entropy\n");
    for (i, v) in trace.iter().enumerate() {
        s.push_str(&format!("{i},{}\n", fmt_sig9(*v)));
    }
    s
}

fn db_for(cfg: &Config, dir: &Path) -> Result<SpectralDb> {
    let fallback = dir.join("db.csv");
    load_db(Some(cfg.db.as_deref().unwrap_or(&fallback)))
}

fn train_segmentation(cfg: &Config, a: &TrainArgs, out: &mut dyn Write) -> Result<()> {
    let samples = load_labelled(&a.data, false)?;
    let db = db_for(cfg, &a.data)?;
    create_dir(&a.out)?;
    if let Some(counts) = &a.sweep {
        let counts = if counts.is_empty() { FILTER_SWEEP.to_vec() } else { counts.clone() };
        let test = load_labelled(&a.data, true)?;
        let rows = filter_sweep(&samples, &test, &db, &cfg.seg, &counts)?;
        let table = sweep_csv(&rows);
        write_text(&a.out.join("sweep.csv"), &table)?;
        write!(out, "{table}")?;
        return Ok(());
    }
    let fb = FilterBank::new(cfg.n_filters)?;
    let outcome = train_seg(&samples, &fb, &db, &cfg.seg)?;
    let bundle = a.out.join("seg_model.msnm");
    outcome.model.bundle(&outcome.filters).save(&bundle)?;
    // The table as stored, so it matches `export-curves` on the checkpoint.
    let (_, stored) = load_seg(&bundle)?;
    write_text(&a.out.join("filters.csv"), &stored.effective().to_csv())?;
    write_text(&a.out.join("seg_trace.csv"), &seg_trace_csv(&outcome.trace))?;
    if let Some(last) = outcome.trace.last() {
        writeln!(out, "final_cross_entropy={}", fmt_sig9(*last))?;
    }
    Ok(())
}

/// Accuracy of a segmentation head trained with a given number of filters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub n_filters: usize,
    pub pixel_acc: f64,
    pub mean_acc: f64,
}

/// Stacks label maps of equal width into one.
fn stack(maps: &[LabelMap]) -> Result<LabelMap> {
    let width = maps.first().map(|m| m.width()).context("no label maps")?;
    ensure!(maps.iter().all(|m| m.width() == width), "label maps differ in width");
    let labels: Vec<u8> = maps.iter().flat_map(|m| m.labels().iter().copied()).collect();
    Ok(LabelMap::new(labels.len() / width, width, labels)?)
}

/// Trains on `train` with each filter count and scores the labeled pixels of
/// `test`, all scenes pooled.
pub fn filter_sweep(
    train: &[(SpectralCube, LabelMap)],
    test: &[(SpectralCube, LabelMap)],
    db: &SpectralDb,
    cfg: &SegTrainConfig,
    counts: &[usize],
) -> Result<Vec<SweepRow>> {
    let gt = stack(&test.iter().map(|(_, l)| l.clone()).collect::<Vec<_>>())?;
    counts
        .iter()
        .map(|&n| {
            let outcome = train_seg(train, &FilterBank::new(n)?, db, cfg)?;
            let mut pred = Vec::with_capacity(test.len());
            for (cube, _) in test {
                pred.push(segment(cube, &outcome.filters, db, &outcome.model)?.labels);
            }
            let pred = stack(&pred)?;
            Ok(SweepRow {
                n_filters: n,
                pixel_acc: pixel_acc(&pred, &gt)?,
                mean_acc: mean_acc(&pred, &gt, label_classes(&gt))?,
            })
        })
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("n_filters,pixel_acc,mean_acc\n");
    for r in rows {
        s.push_str(&format!("{},{},{}\n", r.n_filters, fmt_sig9(r.pixel_acc), fmt_sig9(r.mean_acc)));
    }
    s
}

pub fn cmd_recover(a: &RecoverArgs) -> Result<()> {
    let model = load_recovery(&a.model)?;
    let x = read_pfm(&a.input)?;
    write_cube(&a.out, &recover(&model, &x))
}

pub fn cmd_segment(cfg: &Config, a: &SegmentArgs) -> Result<()> {
    let (model, fb) = load_seg(&a.model)?;
    let cube = read_cube(&a.cube)?;
    let db = load_db(a.db.as_deref().or(cfg.db.as_deref()))?;
    let seg = segment(&cube, &fb, &db, &model)?;
    write_pgm(&a.out, &seg.labels)?;
    if let Some(path) = &a.probs {
        let mut s = String::from("pixel");
        for c in 0..seg.classes {
            s.push_str(&format!(",p{c}"));
        }
        s.push('\n');
        for (p, row) in seg.probabilities.chunks(seg.classes).enumerate() {
            s.push_str(&p.to_string());
            for v in row {
                s.push(',');
                s.push_str(&fmt_sig9(*v));
            }
            s.push('\n');
        }
        write_text(path, &s)?;
    }
    Ok(())
}

/// One more than the largest labeled class in `gt`.
fn label_classes(gt: &LabelMap) -> usize {
    gt.labels()
        .iter()
        .filter(|l| LabelMap::is_labeled(**l))
        .map(|l| *l as usize + 1)
        .max()
        .unwrap_or(1)
}

pub fn cmd_eval(cfg: &Config, a: &EvalArgs, out: &mut dyn Write) -> Result<()> {
    if a.pred.is_none() && a.model.is_none() {
        bail!("nothing to evaluate: pass --pred/--gt and/or --model/--data");
    }
    if let (Some(pred), Some(gt)) = (&a.pred, &a.gt) {
        let pred = read_pgm(pred)?;
        let gt = read_pgm(gt)?;
        let pa = pixel_acc(&pred, &gt)?;
        let ma = mean_acc(&pred, &gt, label_classes(&gt))?;
        writeln!(out, "pixel_acc={} mean_acc={}", fmt_sig9(pa), fmt_sig9(ma))?;
    }
    if let (Some(model), Some(dir)) = (&a.model, &a.data) {
        let model = load_recovery(model)?;
        let data = load_train_data(dir)?;
        let l = evaluate(&model, &data, &cfg.train, a.items)?;
        writeln!(out, "term,value")?;
        for (name, v) in l.terms() {
            writeln!(out, "{name},{}", fmt_sig9(v))?;
        }
        writeln!(out, "total,{}", fmt_sig9(l.total))?;
    }
    Ok(())
}

pub fn cmd_export_curves(a: &ExportArgs) -> Result<()> {
    if a.seg_model.is_none() && a.model.is_none() {
        bail!("nothing to export: pass --seg-model and/or --model");
    }
    create_dir(&a.out)?;
    if let Some(path) = &a.seg_model {
        let (_, fb) = load_seg(path)?;
        write_text(&a.out.join("filters.csv"), &fb.effective().to_csv())?;
    }
    if let Some(path) = &a.model {
        let model = load_recovery(path)?;
        for (ds, name) in [(Dataset::Spectral, "curves_spectral.csv"), (Dataset::Material, "curves_material.csv")] {
            let disp = model.params().get(&format!("{}.displacement", ds.prefix()))?;
            let rm = ResponseMatrix::new(model.base_curves(ds), std::array::from_fn(|b| disp[b]))?;
            write_text(&a.out.join(name), &rm.to_csv())?;
        }
    }
    Ok(())
}
