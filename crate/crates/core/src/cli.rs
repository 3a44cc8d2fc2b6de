//! Command-line front end.
//!
//! Every subcommand takes `--key value` flags, optionally layered over a
//! flat `key=value` file given with `--config`. Unknown keys are errors.
//! The fully resolved configuration is echoed to a `run.meta` file that can
//! be passed back with `--config` to repeat the run.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on runtime failures.
//! Timings go to standard output only, so artifact files depend on nothing
//! but the resolved configuration.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::error::ErrorKind;
use clap::{Arg, Command};

use crate::anomaly::{detect, DetectConfig};
use crate::data::{self, load_split, write_dataset, ModelFile, PhantomParams, Split};
use crate::diffusion::GuidanceConfig;
use crate::error::Error;
use crate::eval::{sweep, CohortCase, SweepGrid};
use crate::image::Image;
use crate::net::{Architecture, Class, ClassifierNet, DenoiserNet};
use crate::schedule::NoiseSchedule;
use crate::selftest;
use crate::train::{accuracy, train_classifier, train_denoiser, TrainConfig};

#[derive(Debug)]
enum CliError {
    /// Help or version text requested; printed to stdout with exit code 0.
    Help(String),
    /// Parse error already rendered by clap.
    Parse(String),
    Usage(String),
    Runtime(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Runtime(e)
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// `(key, default)`; `None` marks a required key, `Some("")` an optional one.
type KeySpec = &'static [(&'static str, Option<&'static str>)];

const GEN_KEYS: KeySpec = &[
    ("out", None),
    ("count", Some("2000")),
    ("seed", Some("0")),
    ("size", Some("32")),
    ("margin", Some("8")),
    ("lesion-prob", Some("0.5")),
    ("organ-radius", Some("9,13")),
    ("lesion-radius", Some("2.5,5")),
    ("lesion-contrast", Some("0.05,0.3")),
    ("texture-amplitude", Some("0.15")),
];

const DENOISER_KEYS: KeySpec = &[
    ("data", None),
    ("out", None),
    ("iters", Some("20000")),
    ("batch-size", Some("32")),
    ("lr", Some("0.0001")),
    ("seed", Some("0")),
    ("t-max", Some("1000")),
    ("beta-start", Some("0.0001")),
    ("beta-end", Some("0.02")),
    ("base-width", Some("16")),
    ("deep-width", Some("32")),
    ("time-dim", Some("32")),
];

const CLASSIFIER_KEYS: KeySpec = &[
    ("data", None),
    ("out", None),
    ("iters", Some("5000")),
    ("batch-size", Some("32")),
    ("lr", Some("0.0001")),
    ("seed", Some("0")),
    ("t-max", Some("1000")),
    ("beta-start", Some("0.0001")),
    ("beta-end", Some("0.02")),
    ("base-width", Some("16")),
    ("deep-width", Some("32")),
    ("time-dim", Some("32")),
];

const DETECT_KEYS: KeySpec = &[
    ("denoiser", None),
    ("classifier", None),
    ("input", None),
    ("out", None),
    ("scale", Some("7")),
    ("noise-level", Some("300")),
    ("threshold", Some("0.35")),
    ("guidance", Some("on")),
];

const SWEEP_KEYS: KeySpec = &[
    ("denoiser", None),
    ("classifier", None),
    ("data", None),
    ("out", None),
    ("split", Some("test")),
    ("scales", Some("5,8,10")),
    ("noise-levels", Some("100,200,300")),
    ("thresholds", Some("0.25,0.35,0.45")),
];

const SELFTEST_KEYS: KeySpec = &[("seed", Some("0")), ("out", Some(""))];

const COMMANDS: &[(&str, &str, KeySpec)] = &[
    ("gen-data", "Generate a phantom dataset with a 90/10 train/test split", GEN_KEYS),
    ("train-denoiser", "Train the noise predictor on the training split", DENOISER_KEYS),
    ("train-classifier", "Train the noisy-image classifier on the training split", CLASSIFIER_KEYS),
    ("detect", "Localize anomalies in one image", DETECT_KEYS),
    ("sweep", "Evaluate a grid of guidance scales, noise levels and thresholds", SWEEP_KEYS),
    ("selftest", "Run the built-in numerical checks", SELFTEST_KEYS),
];

fn keys_for(command: &str) -> Option<KeySpec> {
    COMMANDS.iter().find(|(name, _, _)| *name == command).map(|(_, _, spec)| *spec)
}

fn command() -> Command {
    let mut cmd = Command::new("anodiff")
        .about("Weakly supervised anomaly localization with diffusion models")
        .subcommand_required(true)
        .arg_required_else_help(true);
    for (name, about, spec) in COMMANDS {
        let mut sub = Command::new(*name).about(*about).arg(
            Arg::new("config").long("config").value_name("FILE").help("flat key=value file; flags override its values"),
        );
        for (key, default) in spec.iter() {
            let help = match default {
                None => "required".to_string(),
                Some("") => "optional".to_string(),
                Some(d) => format!("default {d}"),
            };
            sub = sub.arg(Arg::new(*key).long(*key).value_name("VALUE").help(help));
        }
        cmd = cmd.subcommand(sub);
    }
    cmd
}

/// A subcommand with every key resolved.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunConfig {
    pub command: String,
    pub values: BTreeMap<String, String>,
}

fn parse_config_text(text: &str, origin: &Path) -> CliResult<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("{}:{}: expected key=value", origin.display(), i + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

impl RunConfig {
    /// Parses `args` (without the program name) and layers flags over the
    /// optional `--config` file and the defaults.
    fn from_args(args: &[String]) -> CliResult<Self> {
        let argv = std::iter::once("anodiff".to_string()).chain(args.iter().cloned());
        let matches = command().try_get_matches_from(argv).map_err(|e| {
            let text = e.render().to_string();
            match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => CliError::Help(text),
                _ => CliError::Parse(text),
            }
        })?;
        let (name, sub) = matches.subcommand().expect("subcommand is required");
        let spec = keys_for(name).expect("subcommands come from COMMANDS");
        let flags =
            spec.iter().filter_map(|(k, _)| sub.get_one::<String>(k).map(|v| (k.to_string(), v.clone()))).collect();
        Self::resolve(name, flags, sub.get_one::<String>("config").map(PathBuf::from))
    }

    fn resolve(command: &str, flags: Vec<(String, String)>, config_file: Option<PathBuf>) -> CliResult<Self> {
        let spec = keys_for(command).ok_or_else(|| CliError::Usage(format!("unknown command {command:?}")))?;
        let mut values: BTreeMap<String, String> = BTreeMap::new();
        let set = |k: String, v: String, values: &mut BTreeMap<String, String>| -> CliResult<()> {
            if !spec.iter().any(|(name, _)| *name == k) {
                return Err(CliError::Usage(format!("unknown key {k:?} for {command}")));
            }
            values.insert(k, v);
            Ok(())
        };
        if let Some(path) = &config_file {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::Runtime(Error::io(path, e)))?;
            for (k, v) in parse_config_text(&text, path)? {
                if k == "command" {
                    if v != command {
                        return Err(CliError::Usage(format!("{} is a {v} config", path.display())));
                    }
                    continue;
                }
                set(k, v, &mut values)?;
            }
        }
        for (k, v) in flags {
            set(k, v, &mut values)?;
        }
        for (name, default) in spec {
            if !values.contains_key(*name) {
                match default {
                    Some(d) => {
                        values.insert(name.to_string(), d.to_string());
                    }
                    None => return Err(CliError::Usage(format!("{command} requires --{name}"))),
                }
            }
        }
        Ok(Self { command: command.to_string(), values })
    }

    fn str(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).expect("every key has a default or is required")
    }

    fn path(&self, key: &str) -> PathBuf {
        PathBuf::from(self.str(key))
    }

    fn get<T: std::str::FromStr>(&self, key: &str) -> CliResult<T> {
        let v = self.str(key);
        v.parse().map_err(|_| CliError::Usage(format!("bad value {v:?} for --{key}")))
    }

    fn list<T: std::str::FromStr>(&self, key: &str) -> CliResult<Vec<T>> {
        let v = self.str(key);
        v.split(',')
            .map(|p| p.trim().parse().map_err(|_| CliError::Usage(format!("bad value {v:?} for --{key}"))))
            .collect()
    }

    fn range(&self, key: &str) -> CliResult<(f64, f64)> {
        match self.list::<f64>(key)?[..] {
            [a, b] => Ok((a, b)),
            _ => Err(CliError::Usage(format!("--{key} expects two comma-separated numbers"))),
        }
    }

    /// `command=...` followed by every resolved key in sorted order.
    pub fn meta_text(&self) -> String {
        let mut s = format!("command={}\n", self.command);
        for (k, v) in &self.values {
            s.push_str(&format!("{k}={v}\n"));
        }
        s
    }

    fn write_meta(&self, path: &Path) -> CliResult<()> {
        std::fs::write(path, self.meta_text()).map_err(|e| CliError::Runtime(Error::io(path, e)))
    }

    fn schedule(&self) -> CliResult<NoiseSchedule> {
        Ok(NoiseSchedule::linear(self.get("t-max")?, self.get("beta-start")?, self.get("beta-end")?)?)
    }

    fn train_config(&self) -> CliResult<TrainConfig> {
        let cfg = TrainConfig {
            iterations: self.get("iters")?,
            batch_size: self.get("batch-size")?,
            learning_rate: self.get("lr")?,
            seed: self.get("seed")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn arch(&self, height: usize, width: usize, t_max: usize) -> CliResult<Architecture> {
        let a = Architecture {
            height,
            width,
            base_width: self.get("base-width")?,
            deep_width: self.get("deep-width")?,
            time_dim: self.get("time-dim")?,
            t_max,
        };
        a.validate()?;
        Ok(a)
    }
}

/// Runs the CLI with the process's standard streams.
pub fn run(args: &[String]) -> i32 {
    run_with(args, &mut std::io::stdout(), &mut std::io::stderr())
}

/// Runs the CLI on `args` (without the program name).
pub fn run_with(args: &[String], out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    match RunConfig::from_args(args).and_then(|cfg| dispatch(&cfg, out)) {
        Ok(code) => code,
        Err(CliError::Help(text)) => {
            let _ = write!(out, "{text}");
            0
        }
        Err(CliError::Parse(text)) => {
            let _ = write!(err, "{text}");
            1
        }
        Err(CliError::Usage(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            1
        }
        Err(CliError::Runtime(e)) => {
            let _ = writeln!(err, "error: {e}");
            2
        }
    }
}

fn dispatch(cfg: &RunConfig, out: &mut dyn Write) -> CliResult<i32> {
    match cfg.command.as_str() {
        "gen-data" => gen_data(cfg, out),
        "train-denoiser" => train_denoiser_cmd(cfg, out),
        "train-classifier" => train_classifier_cmd(cfg, out),
        "detect" => detect_cmd(cfg, out),
        "sweep" => sweep_cmd(cfg, out),
        "selftest" => selftest_cmd(cfg, out),
        other => Err(CliError::Usage(format!("unknown command {other:?}"))),
    }
}

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn say(out: &mut dyn Write, msg: std::fmt::Arguments) {
    let _ = out.write_fmt(msg);
    let _ = out.write_all(b"\n");
}

fn gen_data(cfg: &RunConfig, out: &mut dyn Write) -> CliResult<i32> {
    let params = PhantomParams {
        size: cfg.get("size")?,
        margin: cfg.get("margin")?,
        organ_radius: cfg.range("organ-radius")?,
        texture_amplitude: cfg.get("texture-amplitude")?,
        lesion_probability: cfg.get("lesion-prob")?,
        lesion_radius: cfg.range("lesion-radius")?,
        lesion_contrast: cfg.range("lesion-contrast")?,
    };
    params.validate()?;
    let count: usize = cfg.get("count")?;
    if count == 0 {
        return Err(CliError::Usage("--count must be positive".into()));
    }
    let seed: u64 = cfg.get("seed")?;
    let dir = cfg.path("out");
    let t = Instant::now();
    let set = data::generate_set(seed, count, &params)?;
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let (train, test) = write_dataset(&dir, &set, seed, &params)?;
    cfg.write_meta(&dir.join("run.meta"))?;
    let diseased = set.samples.iter().filter(|s| s.label == Class::Diseased).count();
    say(
        out,
        format_args!(
            "wrote {} samples ({} train, {} test, {} diseased, {} rejected by the slice filter) in {:.1}s",
            count,
            train.entries.len(),
            test.entries.len(),
            diseased,
            set.rejected,
            t.elapsed().as_secs_f64()
        ),
    );
    Ok(0)
}

fn image_shape(images: &[Image<f32>]) -> CliResult<(usize, usize)> {
    let first = images.first().ok_or(Error::EmptyDataset)?;
    Ok(first.shape())
}

fn train_meta(cfg: &RunConfig, tc: &TrainConfig) -> Vec<(String, String)> {
    vec![
        ("iterations".into(), tc.iterations.to_string()),
        ("batch_size".into(), tc.batch_size.to_string()),
        ("learning_rate".into(), tc.learning_rate.to_string()),
        ("seed".into(), tc.seed.to_string()),
        ("data".into(), cfg.str("data").to_string()),
    ]
}

fn train_denoiser_cmd(cfg: &RunConfig, out: &mut dyn Write) -> CliResult<i32> {
    let s = cfg.schedule()?;
    let tc = cfg.train_config()?;
    let data_dir = cfg.path("data");
    let images: Vec<Image<f32>> = load_split(&data_dir, Split::Train)?.into_iter().map(|x| x.image).collect();
    let (h, w) = image_shape(&images)?;
    let arch = cfg.arch(h, w, s.t_max())?;
    let t = Instant::now();
    let trained = train_denoiser(&images, &s, arch, &tc)?;
    let path = cfg.path("out");
    let mut meta = train_meta(cfg, &tc);
    meta.push(("architecture".into(), arch.describe()));
    ModelFile::from_denoiser(&trained.model, &s, meta).write(&path)?;
    trained.loss.write_csv(&sidecar(&path, ".loss.csv"))?;
    cfg.write_meta(&sidecar(&path, ".run.meta"))?;
    let last = trained.loss.smoothed_at(trained.loss.values.len(), 500).unwrap_or(f64::NAN);
    say(
        out,
        format_args!(
            "trained denoiser on {} images for {} iterations in {:.1}s, final smoothed loss {last:.4}",
            images.len(),
            tc.iterations,
            t.elapsed().as_secs_f64()
        ),
    );
    Ok(0)
}

fn labeled(samples: Vec<data::LoadedSample>) -> Vec<(Image<f32>, Class)> {
    samples.into_iter().map(|s| (s.image, s.label)).collect()
}

fn train_classifier_cmd(cfg: &RunConfig, out: &mut dyn Write) -> CliResult<i32> {
    let s = cfg.schedule()?;
    let tc = cfg.train_config()?;
    let data_dir = cfg.path("data");
    let train = labeled(load_split(&data_dir, Split::Train)?);
    let test = labeled(load_split(&data_dir, Split::Test)?);
    let images: Vec<Image<f32>> = train.iter().map(|(x, _)| x.clone()).collect();
    let (h, w) = image_shape(&images)?;
    let arch = cfg.arch(h, w, s.t_max())?;
    let t = Instant::now();
    let trained = train_classifier(&train, &s, arch, &tc)?;
    let train_acc = accuracy(&trained.model, &train, 1)?;
    let test_acc = if test.is_empty() { f64::NAN } else { accuracy(&trained.model, &test, 1)? };
    let path = cfg.path("out");
    let mut meta = train_meta(cfg, &tc);
    meta.push(("architecture".into(), arch.describe()));
    meta.push(("train_accuracy".into(), train_acc.to_string()));
    meta.push(("test_accuracy".into(), test_acc.to_string()));
    ModelFile::from_classifier(&trained.model, &s, meta).write(&path)?;
    trained.loss.write_csv(&sidecar(&path, ".loss.csv"))?;
    if let Some(acc) = &trained.accuracy {
        acc.write_csv(&sidecar(&path, ".accuracy.csv"))?;
    }
    cfg.write_meta(&sidecar(&path, ".run.meta"))?;
    say(
        out,
        format_args!(
            "trained classifier for {} iterations in {:.1}s: accuracy at n=1 train {train_acc:.4}, test {test_acc:.4}",
            tc.iterations,
            t.elapsed().as_secs_f64()
        ),
    );
    Ok(0)
}

fn load_models(cfg: &RunConfig) -> CliResult<(DenoiserNet<f32>, ClassifierNet<f32>, NoiseSchedule)> {
    let dfile = ModelFile::read(&cfg.path("denoiser"))?;
    let cfile = ModelFile::read(&cfg.path("classifier"))?;
    if dfile.schedule != cfile.schedule {
        return Err(
            Error::InvalidArgument("denoiser and classifier were trained with different schedules".into()).into()
        );
    }
    Ok((dfile.denoiser()?, cfile.classifier()?, dfile.schedule))
}

fn detect_cmd(cfg: &RunConfig, out: &mut dyn Write) -> CliResult<i32> {
    let (den, cls, s) = load_models(cfg)?;
    let guidance = match cfg.str("guidance") {
        "on" => GuidanceConfig { scale: cfg.get("scale")?, target: Class::Healthy },
        "off" => GuidanceConfig::disabled(),
        other => return Err(CliError::Usage(format!("--guidance expects on or off, got {other:?}"))),
    };
    let dc = DetectConfig { noise_level: cfg.get("noise-level")?, guidance, threshold: cfg.get("threshold")? };
    dc.validate(&s)?;
    let x = data::read_image(&cfg.path("input"))?;
    let t = Instant::now();
    let r = detect(&x, &dc, &den, &cls, &s)?;
    let dir = cfg.path("out");
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    data::write_image(&dir.join("reconstruction.ptad"), &r.reconstruction)?;
    data::write_pgm(&dir.join("reconstruction.pgm"), &r.reconstruction)?;
    data::write_image(&dir.join("heatmap.ptad"), &r.raw_map)?;
    data::write_pgm(&dir.join("heatmap.pgm"), &r.normalized_map)?;
    data::write_mask(&dir.join("mask.ptad"), &r.mask)?;
    data::write_pgm(&dir.join("mask.pgm"), &r.mask.to_image())?;
    let meta = format!(
        "input={}\nscale={}\nguidance={}\nnoise_level={}\nthreshold={}\nconfidence_healthy={}\nmask_pixels={}\nt_max={}\nbeta_start={}\nbeta_end={}\n",
        cfg.str("input"),
        dc.guidance.scale,
        if dc.guidance.is_active() { "on" } else { "off" },
        dc.noise_level,
        dc.threshold,
        r.confidence,
        r.mask.count(),
        s.t_max(),
        s.beta_start(),
        s.beta_end()
    );
    std::fs::write(dir.join("detect.meta"), meta).map_err(|e| Error::io(dir.join("detect.meta"), e))?;
    cfg.write_meta(&dir.join("run.meta"))?;
    say(
        out,
        format_args!(
            "p(healthy)={:.4}, {} mask pixels, {:.2}s",
            r.confidence,
            r.mask.count(),
            t.elapsed().as_secs_f64()
        ),
    );
    Ok(0)
}

fn sweep_cmd(cfg: &RunConfig, out: &mut dyn Write) -> CliResult<i32> {
    let (den, cls, s) = load_models(cfg)?;
    let split = match cfg.str("split") {
        "test" => Split::Test,
        "train" => Split::Train,
        other => return Err(CliError::Usage(format!("--split expects train or test, got {other:?}"))),
    };
    let grid = SweepGrid {
        scales: cfg.list("scales")?,
        noise_levels: cfg.list("noise-levels")?,
        thresholds: cfg.list("thresholds")?,
    };
    grid.validate(&s)?;
    let cases: Vec<CohortCase<f32>> = load_split(&cfg.path("data"), split)?
        .into_iter()
        .map(|x| CohortCase { image: x.image, label: x.label, lesion: x.lesion })
        .collect();
    let t = Instant::now();
    let mut report = sweep(&grid, &cases, &den, &cls, &s)?;
    report.provenance.insert(0, ("data".into(), cfg.str("data").to_string()));
    report.provenance.insert(1, ("split".into(), split.as_str().to_string()));
    let path = cfg.path("out");
    std::fs::write(&path, report.to_csv()).map_err(|e| Error::io(&path, e))?;
    cfg.write_meta(&sidecar(&path, ".run.meta"))?;
    match report.best() {
        Some(b) => say(
            out,
            format_args!(
                "{} cells in {:.1}s; best dice {:.4} at S={} N={} threshold={} (accuracy {:.4}, {} included, {} excluded)",
                report.rows.len(),
                t.elapsed().as_secs_f64(),
                b.dice.unwrap_or(f64::NAN),
                b.scale,
                b.noise_level,
                b.threshold,
                b.accuracy,
                b.included,
                b.excluded
            ),
        ),
        None => say(out, format_args!("{} cells, no case was included", report.rows.len())),
    }
    Ok(0)
}

fn selftest_cmd(cfg: &RunConfig, out: &mut dyn Write) -> CliResult<i32> {
    let checks = selftest::run_all(cfg.get("seed")?)?;
    let mut failed = 0;
    for c in &checks {
        say(out, format_args!("{c}"));
        failed += (!c.passed) as usize;
    }
    let dir = cfg.str("out");
    if !dir.is_empty() {
        let dir = PathBuf::from(dir);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let report: String = checks.iter().map(|c| format!("{c}\n")).collect();
        std::fs::write(dir.join("selftest.txt"), report).map_err(|e| Error::io(dir.join("selftest.txt"), e))?;
        cfg.write_meta(&dir.join("run.meta"))?;
    }
    say(out, format_args!("{} of {} checks passed", checks.len() - failed, checks.len()));
    Ok(if failed == 0 { 0 } else { 2 })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn resolution_applies_defaults_and_rejects_unknown_keys() {
        let c = RunConfig::from_args(&args("gen-data --out d --count 7")).unwrap();
        assert_eq!(c.str("count"), "7");
        assert_eq!(c.str("size"), "32");
        assert!(matches!(RunConfig::from_args(&args("gen-data --out d --colour red")), Err(CliError::Parse(_))));
        assert!(matches!(RunConfig::from_args(&args("gen-data --count 7")), Err(CliError::Usage(_))));
        assert!(matches!(RunConfig::from_args(&args("gen-data --out")), Err(CliError::Parse(_))));
        assert!(matches!(RunConfig::from_args(&args("frobnicate")), Err(CliError::Parse(_))));
        assert!(matches!(RunConfig::from_args(&args("detect --help")), Err(CliError::Help(_))));
    }

    #[test]
    fn meta_re_resolves_to_the_same_config() {
        let dir = tempfile::tempdir().unwrap();
        let c = RunConfig::from_args(&args("sweep --denoiser a --classifier b --data d --out o --scales 1,2")).unwrap();
        let meta = dir.path().join("run.meta");
        c.write_meta(&meta).unwrap();
        let again = RunConfig::resolve("sweep", vec![], Some(meta.clone())).unwrap();
        assert_eq!(again, c);
        let overridden = RunConfig::resolve("sweep", vec![("scales".into(), "3".into())], Some(meta.clone())).unwrap();
        assert_eq!(overridden.str("scales"), "3");
        assert!(RunConfig::resolve("detect", vec![], Some(meta)).is_err());
        let bad = dir.path().join("bad.cfg");
        std::fs::write(&bad, "out=x\ncolour=red\n").unwrap();
        assert!(matches!(RunConfig::resolve("gen-data", vec![], Some(bad)), Err(CliError::Usage(_))));
    }

    #[test]
    fn exit_codes() {
        let mut o = Vec::new();
        let mut e = Vec::new();
        assert_eq!(run_with(&[], &mut o, &mut e), 1);
        assert_eq!(run_with(&args("gen-data --bogus 1"), &mut o, &mut e), 1);
        assert_eq!(run_with(&args("gen-data --out x --count many"), &mut o, &mut e), 1);
        assert_eq!(run_with(&args("train-denoiser --data /nonexistent/dir --out m"), &mut o, &mut e), 2);
        assert_eq!(run_with(&args("gen-data --help"), &mut o, &mut e), 0);
    }
}
