//! The `deepntl` command line.
//!
//! Data directories use a fixed layout: `dmsp/<YYYY><Fnn>.ntlr` and
//! `viirs/VIIRS<YYYY>.ntlr` (`.asc` ESRI grids are accepted in place of
//! `.ntlr`). Every run writes the fully resolved configuration next to its
//! outputs: `config.txt` inside output directories, `<file>.config.txt`
//! beside single-file outputs.

use std::ffi::OsString;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::calib::{apply_calibration, calibration_fields, fit_stack, read_fits_csv, tlv, write_fits_csv, write_tlv_csv, CalibrationStack, ProductId, Sensor};
use crate::dataset::{
    build_examples, clean_viirs, load_examples, read_manifest_file, sample_points, split_manifest, synth_series, viirs_ceiling,
    write_manifest_file, DatasetManifest, Split, TargetYear,
};
use crate::error::{Error, Result};
use crate::model::{load_checkpoint_file, save_checkpoint_file};
use crate::pipeline::{bilinear_upsample2x, export_pgm, reconstruct_year, RunConfig};
use crate::raster::{parse_ascii_grid, read_raster_file, write_raster_file, Raster, TileRef};
use crate::train::{evaluate_pair, fit_viirs_scale, loss_log_csv, metrics_csv, train_loop};

#[derive(Parser, Debug)]
#[command(name = "deepntl", version, about = "Nighttime-light calibration, reconstruction and evaluation")]
struct Cli {
    /// key = value configuration file
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides the `seed` key
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Overrides the `threads` key (0 = all cores)
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    /// Overrides any configuration key; repeatable
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Progress on stderr
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Calibration-field mask, quadratic fits and calibrated rasters for a DMSP stack
    Calibrate {
        /// PRODUCT=PATH, one per product (e.g. 1999F12=f12_1999.ntlr)
        #[arg(long = "input", required = true, value_name = "PRODUCT=PATH")]
        inputs: Vec<String>,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Total light value per product, optionally after calibration
    Tlv {
        #[arg(long = "input", required = true, value_name = "PRODUCT=PATH")]
        inputs: Vec<String>,
        /// Fits CSV from `calibrate`; products without a fit are left as is
        #[arg(long, value_name = "CSV")]
        fits: Option<PathBuf>,
        #[arg(long, value_name = "CSV")]
        out: PathBuf,
    },
    /// Synthetic DMSP/VIIRS series in the data-directory layout
    Synth {
        #[arg(long)]
        rows: Option<usize>,
        #[arg(long)]
        cols: Option<usize>,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Random lit tile anchors on the reference pair
    Sample {
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        /// Overrides `dataset.points`
        #[arg(long)]
        points: Option<usize>,
        #[arg(long, value_name = "CSV")]
        out: PathBuf,
    },
    /// Tile extraction and train/val/test splitting
    #[command(subcommand)]
    Dataset(DatasetCmd),
    /// Trains a network on the train/val entries of a manifest
    Train {
        #[arg(long, value_name = "CSV")]
        manifest: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Reconstructs a VIIRS-like raster for one target year
    Infer {
        #[arg(long, value_name = "NTLC")]
        checkpoint: PathBuf,
        #[arg(long, value_name = "PATH")]
        dmsp_ref: PathBuf,
        #[arg(long, value_name = "PATH")]
        dmsp_tgt: PathBuf,
        #[arg(long, value_name = "PATH")]
        viirs_ref: PathBuf,
        #[arg(long, value_name = "NTLR")]
        out: PathBuf,
        #[command(flatten)]
        pgm: PgmArg,
    },
    /// Pearson r, PSNR and SSIM of a reconstruction against ground truth
    Eval {
        #[arg(long, value_name = "PATH")]
        gt: PathBuf,
        #[arg(long, value_name = "PATH")]
        sr: PathBuf,
        /// Also write the metrics as CSV
        #[arg(long, value_name = "CSV")]
        out: Option<PathBuf>,
    },
    /// Reference reconstructions without a network
    #[command(subcommand)]
    Baseline(BaselineCmd),
    /// Prints the resolved configuration
    Config,
}

#[derive(Subcommand, Debug)]
enum DatasetCmd {
    /// Cuts paired tiles for every target year and writes a manifest
    Build {
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        #[arg(long, value_name = "CSV")]
        points: PathBuf,
        /// Dataset root; receives manifest.csv and tiles/
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Assigns train/val/test labels
    Split {
        #[arg(long, value_name = "CSV")]
        manifest: PathBuf,
        #[arg(long, value_name = "CSV")]
        out: PathBuf,
    },
}

#[derive(Subcommand, Debug)]
enum BaselineCmd {
    /// 2x bilinear upsampling of a DMSP raster
    Bilinear {
        #[arg(long, value_name = "PATH")]
        dmsp: PathBuf,
        #[arg(long, value_name = "NTLR")]
        out: PathBuf,
        #[command(flatten)]
        pgm: PgmArg,
    },
}

#[derive(Args, Debug)]
struct PgmArg {
    /// Also export a 16-bit PGM preview
    #[arg(long, value_name = "PATH")]
    pgm: Option<PathBuf>,
}

/// Runs the CLI and returns the process exit code.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn resolve(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for kv in &cli.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Usage(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k.trim(), v)?;
    }
    if let Some(s) = cli.seed {
        cfg.set("seed", &s.to_string())?;
    }
    if let Some(t) = cli.threads {
        cfg.set("threads", &t.to_string())?;
    }
    Ok(cfg)
}

fn execute(cli: Cli) -> Result<()> {
    let mut cfg = resolve(&cli)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.usize("threads"))
        .build()
        .map_err(|e| Error::Internal(format!("thread pool: {e}")))?;
    let verbose = cli.verbose;
    pool.install(|| match cli.cmd {
        Cmd::Calibrate { inputs, out } => calibrate(&cfg, &inputs, &out),
        Cmd::Tlv { inputs, fits, out } => tlv_cmd(&cfg, &inputs, fits.as_deref(), &out),
        Cmd::Synth { rows, cols, out } => {
            if let Some(r) = rows {
                cfg.set("synth.rows", &r.to_string())?;
            }
            if let Some(c) = cols {
                cfg.set("synth.cols", &c.to_string())?;
            }
            synth(&cfg, &out)
        }
        Cmd::Sample { data, points, out } => {
            if let Some(n) = points {
                cfg.set("dataset.points", &n.to_string())?;
            }
            sample(&cfg, &data, &out)
        }
        Cmd::Dataset(DatasetCmd::Build { data, points, out }) => dataset_build(&cfg, &data, &points, &out),
        Cmd::Dataset(DatasetCmd::Split { manifest, out }) => dataset_split(&cfg, &manifest, &out),
        Cmd::Train { manifest, out } => train(&mut cfg, &manifest, &out, verbose),
        Cmd::Infer {
            checkpoint,
            dmsp_ref,
            dmsp_tgt,
            viirs_ref,
            out,
            pgm,
        } => infer(&mut cfg, &checkpoint, [&dmsp_ref, &dmsp_tgt, &viirs_ref], &out, pgm.pgm.as_deref()),
        Cmd::Eval { gt, sr, out } => eval(&cfg, &gt, &sr, out.as_deref()),
        Cmd::Baseline(BaselineCmd::Bilinear { dmsp, out, pgm }) => {
            let r = bilinear_upsample2x(&read_any(&dmsp)?);
            write_raster_file(&out, &r)?;
            if let Some(p) = pgm.pgm {
                export_pgm(&r, &p)?;
            }
            cfg.write(&sidecar(&out))
        }
        Cmd::Config => {
            print!("{}", cfg.to_text());
            Ok(())
        }
    })
}

fn sidecar(file: &Path) -> PathBuf {
    let mut s = file.as_os_str().to_owned();
    s.push(".config.txt");
    s.into()
}

/// NTLR, or an ESRI ASCII grid when the extension is `.asc`.
fn read_any(path: &Path) -> Result<Raster> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("asc")) {
        let text = fs::read_to_string(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
        parse_ascii_grid(&text)
    } else {
        read_raster_file(path).map_err(|e| match e {
            Error::Io(io) => Error::Io(std::io::Error::new(io.kind(), format!("{}: {io}", path.display()))),
            e => e,
        })
    }
}

fn parse_inputs(inputs: &[String]) -> Result<Vec<(ProductId, PathBuf)>> {
    inputs
        .iter()
        .map(|s| {
            let (p, path) = s
                .split_once('=')
                .ok_or_else(|| Error::Usage(format!("--input expects PRODUCT=PATH, got {s:?}")))?;
            let id: ProductId = p.parse().map_err(|e: Error| Error::Usage(e.to_string()))?;
            Ok((id, PathBuf::from(path)))
        })
        .collect()
}

fn mask_raster(m: &crate::raster::Mask) -> Result<Raster> {
    Raster::new(m.rows(), m.cols(), m.bits().iter().map(|&b| b as f32).collect())
}

fn calibrate(cfg: &RunConfig, inputs: &[String], out: &Path) -> Result<()> {
    let inputs = parse_inputs(inputs)?;
    let base = cfg.product("calib.base");
    let base_idx = inputs
        .iter()
        .position(|(p, _)| *p == base)
        .ok_or_else(|| Error::Usage(format!("base product {base} is not among the inputs")))?;
    let rasters = inputs.iter().map(|(_, p)| read_any(p)).collect::<Result<Vec<_>>>()?;
    let products: Vec<ProductId> = inputs.iter().map(|(p, _)| p.clone()).collect();
    let stack = CalibrationStack::new(products, rasters)?;
    let cf = calibration_fields(&stack, cfg.f64("calib.spatial_q"), cfg.f64("calib.temporal_q"))?;
    let fits = fit_stack(&stack, base_idx, &cf)?;
    fs::create_dir_all(out.join("calibrated"))?;
    write_raster_file(out.join("cf_mask.ntlr"), &mask_raster(&cf)?)?;
    let mut csv = Vec::new();
    write_fits_csv(&mut csv, &fits)?;
    fs::write(out.join("fits.csv"), csv)?;
    for (fit, r) in fits.iter().zip(stack.rasters()) {
        write_raster_file(out.join("calibrated").join(format!("{}.ntlr", fit.product)), &apply_calibration(r, fit)?)?;
    }
    cfg.write(&out.join("config.txt"))
}

fn tlv_cmd(cfg: &RunConfig, inputs: &[String], fits: Option<&Path>, out: &Path) -> Result<()> {
    let fits = match fits {
        Some(p) => read_fits_csv(std::io::BufReader::new(fs::File::open(p)?))?,
        None => Vec::new(),
    };
    let mut rows = Vec::new();
    for (p, path) in parse_inputs(inputs)? {
        let mut r = read_any(&path)?;
        if let Some(f) = fits.iter().find(|f| f.product == p) {
            r = apply_calibration(&r, f)?;
        }
        rows.push((p, tlv(&r)));
    }
    let mut csv = Vec::new();
    write_tlv_csv(&mut csv, &rows)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(out, csv)?;
    cfg.write(&sidecar(out))
}

fn synth(cfg: &RunConfig, out: &Path) -> Result<()> {
    let (rows, cols) = (cfg.usize("synth.rows"), cfg.usize("synth.cols"));
    let ref_dmsp = cfg.product("dataset.ref_dmsp");
    let mut products = cfg.products("synth.years")?;
    if products.iter().any(|p| p.sensor != Sensor::Dmsp) {
        return Err(Error::Config("synth.years must list DMSP products".into()));
    }
    if !products.contains(&ref_dmsp) {
        products.push(ref_dmsp.clone());
    }
    let series = synth_series(cfg.seed(), rows, cols, ref_dmsp.year, &products)?;
    fs::create_dir_all(out.join("dmsp"))?;
    fs::create_dir_all(out.join("viirs"))?;
    for t in &series {
        write_raster_file(out.join("dmsp").join(format!("{}.ntlr", t.product)), &t.dmsp)?;
        if let Ok(v) = ProductId::viirs(t.product.year) {
            write_raster_file(out.join("viirs").join(format!("{v}.ntlr")), &t.viirs)?;
        }
    }
    cfg.write(&out.join("config.txt"))
}

/// The raster of `id` in a data directory.
fn data_file(data: &Path, id: &ProductId) -> Result<PathBuf> {
    let dir = data.join(match id.sensor {
        Sensor::Dmsp => "dmsp",
        Sensor::Viirs => "viirs",
    });
    for ext in ["ntlr", "asc"] {
        let p = dir.join(format!("{id}.{ext}"));
        if p.exists() {
            return Ok(p);
        }
    }
    Err(Error::Io(std::io::Error::new(
        std::io::ErrorKind::NotFound,
        format!("no raster for {id} under {}", dir.display()),
    )))
}

/// Every product with a raster in `<data>/<sub>`, sorted.
fn data_products(data: &Path, sub: &str) -> Result<Vec<ProductId>> {
    let mut out = Vec::new();
    for e in fs::read_dir(data.join(sub))? {
        let p = e?.path();
        if !p.extension().is_some_and(|x| x == "ntlr" || x == "asc") {
            continue;
        }
        if let Some(id) = p.file_stem().and_then(|s| s.to_str()).and_then(|s| s.parse::<ProductId>().ok()) {
            out.push(id);
        }
    }
    out.sort_by(|a, b| (a.year, &a.satellite).cmp(&(b.year, &b.satellite)));
    out.dedup();
    Ok(out)
}

/// Cleaned VIIRS rasters of the data directory keyed by year. The ceiling
/// comes from `dataset.ceil`, or from the pooled lit-pixel quantile when
/// that is `auto`.
fn load_viirs(cfg: &RunConfig, data: &Path) -> Result<Vec<(u16, Raster)>> {
    let raw = data_products(data, "viirs")?
        .into_iter()
        .map(|id| Ok((id.year, read_any(&data_file(data, &id)?)?)))
        .collect::<Result<Vec<_>>>()?;
    let ceil = match cfg.f64_or_auto("dataset.ceil") {
        Some(c) => c,
        None => viirs_ceiling(&raw.iter().map(|(_, r)| r.clone()).collect::<Vec<_>>(), cfg.f64("dataset.ceiling_q"))?,
    };
    raw.into_iter()
        .map(|(y, r)| Ok((y, clean_viirs(&r, cfg.f64("dataset.floor") as f32, ceil as f32)?)))
        .collect()
}

fn reference_pair(cfg: &RunConfig, data: &Path, viirs: &[(u16, Raster)]) -> Result<(Raster, Raster)> {
    let dmsp = read_any(&data_file(data, &cfg.product("dataset.ref_dmsp"))?)?;
    dmsp.check_dmsp_range()?;
    let ref_viirs = cfg.product("dataset.ref_viirs");
    let v = viirs
        .iter()
        .find(|(y, _)| *y == ref_viirs.year)
        .map(|(_, r)| r.clone())
        .ok_or_else(|| Error::Io(std::io::Error::new(std::io::ErrorKind::NotFound, format!("no raster for {ref_viirs}"))))?;
    Ok((dmsp, v))
}

const POINTS_HEADER: &str = "anchor_row,anchor_col,height,width";

fn sample(cfg: &RunConfig, data: &Path, out: &Path) -> Result<()> {
    let viirs = load_viirs(cfg, data)?;
    let (dmsp, v) = reference_pair(cfg, data, &viirs)?;
    let pts = sample_points(&dmsp, &v, cfg.usize("dataset.points"), &cfg.sample_options())?;
    let mut text = format!("{POINTS_HEADER}\n");
    for p in &pts {
        text.push_str(&format!("{},{},{},{}\n", p.anchor_row, p.anchor_col, p.height, p.width));
    }
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(out, text)?;
    cfg.write(&sidecar(out))
}

fn read_points(path: &Path) -> Result<Vec<TileRef>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(POINTS_HEADER) {
        return Err(Error::Corrupt(format!("{}: expected header {POINTS_HEADER:?}", path.display())));
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let f: Vec<usize> = l
                .split(',')
                .map(|s| s.trim().parse())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::Corrupt(format!("{} line {}: {l:?}", path.display(), i + 2)))?;
            match f[..] {
                [r, c, h, w] => Ok(TileRef::new(r, c, h, w)),
                _ => Err(Error::Corrupt(format!("{} line {}: expected 4 fields", path.display(), i + 2))),
            }
        })
        .collect()
}

fn dataset_build(cfg: &RunConfig, data: &Path, points: &Path, out: &Path) -> Result<()> {
    let viirs = load_viirs(cfg, data)?;
    let (dmsp, v) = reference_pair(cfg, data, &viirs)?;
    let pts = read_points(points)?;
    let mut targets = Vec::new();
    for id in data_products(data, "dmsp")? {
        if let Some((_, vt)) = viirs.iter().find(|(y, _)| *y == id.year) {
            let d = read_any(&data_file(data, &id)?)?;
            d.check_dmsp_range()?;
            targets.push(TargetYear {
                product: id,
                dmsp: d,
                viirs: vt.clone(),
            });
        }
    }
    if targets.is_empty() {
        return Err(Error::Empty(format!("no DMSP product under {} has a same-year VIIRS raster", data.display())));
    }
    let examples = build_examples(&pts, &dmsp, &v, &targets)?;
    let m = DatasetManifest::store(&examples, out, cfg.seed())?;
    write_manifest_file(&out.join("manifest.csv"), &m)?;
    cfg.write(&out.join("config.txt"))
}

fn root_of(manifest: &Path) -> PathBuf {
    match manifest.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn dataset_split(cfg: &RunConfig, manifest: &Path, out: &Path) -> Result<()> {
    let m = read_manifest_file(manifest)?;
    let mut s = split_manifest(&m, &cfg.split_options()?)?;
    let to = root_of(out);
    fs::create_dir_all(&to)?;
    let from = fs::canonicalize(root_of(manifest))?;
    if from != fs::canonicalize(&to)? {
        // tile paths resolve against the manifest's own directory
        for e in &mut s.entries {
            for p in [&mut e.dmsp_ref, &mut e.dmsp_tgt, &mut e.viirs_ref, &mut e.viirs_tgt] {
                *p = from.join(&*p);
            }
        }
    }
    write_manifest_file(out, &s)?;
    cfg.write(&sidecar(out))
}

fn train(cfg: &mut RunConfig, manifest: &Path, out: &Path, verbose: bool) -> Result<()> {
    let m = read_manifest_file(manifest)?;
    let root = root_of(manifest);
    let tr = load_examples(&m, &root, Split::Train)?;
    let va = load_examples(&m, &root, Split::Val)?;
    if tr.is_empty() || va.is_empty() {
        return Err(Error::Empty(format!(
            "manifest has {} train and {} val entries; run `dataset split` first",
            tr.len(),
            va.len()
        )));
    }
    let auto = if cfg.f64_or_auto("model.viirs_scale").is_none() {
        Some(fit_viirs_scale(&tr)?)
    } else {
        None
    };
    let model = cfg.model_config(auto)?;
    let (h, w) = tr[0].dmsp_ref.dims();
    if (model.h, model.w) != (h, w) {
        return Err(Error::Config(format!(
            "model.h x model.w is {}x{} but the dataset tiles are {h}x{w}",
            model.h, model.w
        )));
    }
    cfg.set_model(&model);
    let tc = cfg.train_config()?;
    fs::create_dir_all(out)?;
    let outcome = train_loop(&tr, &va, &model, &tc, |row| {
        if verbose {
            eprintln!(
                "epoch {:>3}  train {:.6}  val {:.6}  lr {:.3e}",
                row.epoch, row.train_loss, row.val_loss, row.lr
            );
        }
    })?;
    save_checkpoint_file(out.join("checkpoint.ntlc"), &outcome.best, &model)?;
    save_checkpoint_file(out.join("last.ntlc"), &outcome.last, &model)?;
    fs::write(out.join("loss.csv"), loss_log_csv(&outcome.log))?;
    cfg.write(&out.join("config.txt"))
}

fn infer(cfg: &mut RunConfig, checkpoint: &Path, inputs: [&Path; 3], out: &Path, pgm: Option<&Path>) -> Result<()> {
    let (params, model) = load_checkpoint_file(checkpoint)?;
    cfg.set_model(&model);
    let [a, b, v] = inputs.map(read_any);
    let (a, b) = (a?, b?);
    a.check_dmsp_range()?;
    b.check_dmsp_range()?;
    let r = reconstruct_year(&params, &model, &a, &b, &v?, &cfg.reconstruct_options())?;
    write_raster_file(out, &r)?;
    if let Some(p) = pgm {
        export_pgm(&r, p)?;
    }
    cfg.write(&sidecar(out))
}

fn eval(cfg: &RunConfig, gt: &Path, sr: &Path, out: Option<&Path>) -> Result<()> {
    let (g, s) = (read_any(gt)?, read_any(sr)?);
    let rep = evaluate_pair(&g, &s, cfg.f64("eval.max"))?;
    let mut stdout = std::io::stdout().lock();
    writeln!(stdout, "r={} psnr={} ssim={} n={}", rep.r, rep.psnr, rep.ssim, rep.n)?;
    if let Some(o) = out {
        if let Some(dir) = o.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        fs::write(o, metrics_csv(&[(sr.display().to_string(), rep)]))?;
        cfg.write(&sidecar(o))?;
    }
    Ok(())
}
