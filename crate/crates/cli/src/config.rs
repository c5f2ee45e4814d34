//! Flat `key = value` experiment configuration.
//!
//! Blank lines and `#` comments are ignored. Every key is optional and has a
//! default, but unknown keys are rejected so a misspelt setting never falls
//! back silently. `--key=value` flags on the command line override the file.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use fshbmap::pipeline::{default_sparsity_levels, default_spsa};
use fshbmap::{DictionaryKind, HyperParams, SpsaConfig};

use crate::error::{CliError, Result};

/// Environment variable naming the output directory when the config has none.
pub const OUTPUT_DIR_ENV: &str = "FSHBMAP_OUTPUT_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Fshbmap,
    RandomX,
    Omp,
    Cosamp,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::Fshbmap,
        Method::RandomX,
        Method::Omp,
        Method::Cosamp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Fshbmap => "fshbmap",
            Self::RandomX => "random_x",
            Self::Omp => "omp",
            Self::Cosamp => "cosamp",
        }
    }
}

impl FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                format!("unknown method {s:?} (expected fshbmap, random_x, omp or cosamp)")
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Operator {
    Radon,
    /// `Ψ = I`: the measurement is the noisy image itself.
    Identity,
}

impl FromStr for Operator {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "radon" => Ok(Self::Radon),
            "identity" => Ok(Self::Identity),
            _ => Err(format!(
                "unknown operator {s:?} (expected radon or identity)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomKeys {
    pub seed: u64,
    pub shapes: usize,
    pub texture: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub image: Option<PathBuf>,
    /// `None`: taken from `image`, or 16 for the phantom.
    pub width: Option<usize>,
    pub height: Option<usize>,
    pub phantom: PhantomKeys,
    pub operator: Operator,
    pub n_rays: usize,
    /// `None`: [`auto_samples_per_ray`].
    pub samples_per_ray: Option<usize>,
    /// `None`: spread the samples over the image diagonal.
    pub detector_spacing: Option<f64>,
    pub dictionary: DictionaryKind,
    pub params: HyperParams,
    pub estimate_noise: bool,
    pub spsa: SpsaConfig,
    pub method: Method,
    /// `None`: ⌈0.1 n⌉ for `reconstruct`, best of a grid for `compare`.
    pub sparsity: Option<usize>,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub measurement: Option<PathBuf>,
    pub sweep_iters: Vec<usize>,
    pub sweep_dictionaries: Vec<DictionaryKind>,
    pub trials: usize,
    pub compare_seeds: usize,
}

/// Splits a document into key/value pairs, rejecting duplicates.
pub fn parse_document(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(CliError::Config(format!(
                "line {}: expected key = value",
                lineno + 1
            )));
        };
        let key = k.trim().to_string();
        if key.is_empty() {
            return Err(CliError::Config(format!("line {}: empty key", lineno + 1)));
        }
        if out.insert(key.clone(), v.trim().to_string()).is_some() {
            return Err(CliError::Config(format!(
                "line {}: duplicate key {key:?}",
                lineno + 1
            )));
        }
    }
    Ok(out)
}

/// Applies `--key=value` overrides on top of `base`.
pub fn apply_overrides(base: &mut BTreeMap<String, String>, overrides: &[String]) -> Result<()> {
    for o in overrides {
        let Some((k, v)) = o.strip_prefix("--").and_then(|rest| rest.split_once('=')) else {
            return Err(CliError::Config(format!(
                "override {o:?} must look like --key=value"
            )));
        };
        if k.is_empty() {
            return Err(CliError::Config(format!("override {o:?} has an empty key")));
        }
        base.insert(k.to_string(), v.to_string());
    }
    Ok(())
}

/// Consumes keys from a map, remembering which ones were used.
struct Keys {
    map: BTreeMap<String, String>,
}

impl Keys {
    fn raw(&mut self, key: &str) -> Option<String> {
        self.map
            .remove(key)
            .filter(|v| !v.is_empty() && v != "auto")
    }

    fn get<T: FromStr>(&mut self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => parse_value(key, &v),
        }
    }

    fn opt<T: FromStr>(&mut self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(key).map(|v| parse_value(key, &v)).transpose()
    }

    fn list<T: FromStr>(&mut self, key: &str, default: Vec<T>) -> Result<Vec<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.map.remove(key) {
            None => Ok(default),
            Some(v) if v.trim().is_empty() => Ok(Vec::new()),
            Some(v) => v
                .split(',')
                .map(|item| parse_value(key, item.trim()))
                .collect(),
        }
    }
}

fn parse_value<T: FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse()
        .map_err(|e| CliError::Config(format!("{key} = {v:?}: {e}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(CliError::Config(format!(
            "{key} = {v:?}: expected true or false"
        ))),
    }
}

/// Measurements per projection angle giving `m ≈ 1.25 n`, the ratio of the
/// 18 × 71 pattern on a 32 × 32 image.
pub fn auto_samples_per_ray(width: usize, height: usize, n_rays: usize) -> usize {
    ((1.25 * (width * height) as f64 / n_rays.max(1) as f64).round() as usize).max(1)
}

impl ExperimentConfig {
    /// Builds a config from key/value pairs. `env_output_dir` is the value of
    /// [`OUTPUT_DIR_ENV`], used when `output_dir` is absent.
    pub fn from_map(
        map: BTreeMap<String, String>,
        env_output_dir: Option<PathBuf>,
    ) -> Result<Self> {
        let mut k = Keys { map };
        let defaults = HyperParams::default();

        let image: Option<PathBuf> = k.opt("image")?;
        let width = k.opt("width")?;
        let height = k.opt("height")?;
        let phantom = PhantomKeys {
            seed: k.get("phantom_seed", 7u64)?,
            shapes: k.get("phantom_shapes", 5usize)?,
            texture: k.get("phantom_texture", 0.2f64)?,
        };
        let operator = k.get("operator", Operator::Radon)?;
        let n_rays = k.get("n_rays", 18usize)?;
        let samples_per_ray = k.opt("samples_per_ray")?;
        let detector_spacing = k.opt("detector_spacing")?;
        let dictionary = k.get("dictionary", DictionaryKind::Haar2D)?;
        let params = HyperParams {
            sigma_u_sq: k.get("sigma_u_sq", defaults.sigma_u_sq)?,
            sigma_eps_sq: k.get("sigma_eps_sq", defaults.sigma_eps_sq)?,
            a: k.get("a", defaults.a)?,
            sigma_x_sq: k.get("sigma_x_sq", defaults.sigma_x_sq)?,
            tau: k.get("tau", defaults.tau)?,
            z_floor: k.get("z_floor", defaults.z_floor)?,
        };
        let estimate_noise = match k.raw("estimate_noise") {
            None => false,
            Some(v) => parse_bool("estimate_noise", &v)?,
        };
        let seed = k.get("seed", 0u64)?;
        let n_iters = k.get("n_iters", 500usize)?;
        let base = default_spsa(n_iters, seed);
        let spsa = SpsaConfig {
            alpha0: k.get("alpha0", base.alpha0)?,
            stability_a: k.get("stability_a", base.stability_a)?,
            alpha_exp: k.get("alpha_exp", base.alpha_exp)?,
            c0: k.get("c0", base.c0)?,
            gamma_exp: k.get("gamma_exp", base.gamma_exp)?,
            log_every: k.get("log_every", base.log_every)?,
            ..base
        };
        let method = k.get("method", Method::Fshbmap)?;
        let sparsity = k.opt("sparsity")?;
        let output_dir = match k.opt::<PathBuf>("output_dir")? {
            Some(p) => p,
            None => env_output_dir.unwrap_or_else(|| PathBuf::from(".")),
        };
        let measurement = k.opt("measurement")?;
        let sweep_iters = k.list("sweep_iters", vec![260, 360, 460, 560, 660, 760])?;
        let sweep_dictionaries = k.list(
            "sweep_dictionaries",
            vec![DictionaryKind::Haar2D, DictionaryKind::Dct2D],
        )?;
        let trials = k.get("trials", 10usize)?;
        let compare_seeds = k.get("compare_seeds", 1usize)?;

        if let Some(unknown) = k.map.keys().next() {
            return Err(CliError::Config(format!("unknown key {unknown:?}")));
        }

        let cfg = Self {
            image,
            width,
            height,
            phantom,
            operator,
            n_rays,
            samples_per_ray,
            detector_spacing,
            dictionary,
            params,
            estimate_noise,
            spsa,
            method,
            sparsity,
            seed,
            output_dir,
            measurement,
            sweep_iters,
            sweep_dictionaries,
            trials,
            compare_seeds,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(
        path: &Path,
        overrides: &[String],
        env_output_dir: Option<PathBuf>,
    ) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut map = parse_document(&text)?;
        apply_overrides(&mut map, overrides)?;
        Self::from_map(map, env_output_dir)
    }

    fn validate(&self) -> Result<()> {
        if self.width == Some(0) || self.height == Some(0) || self.samples_per_ray == Some(0) {
            return Err(CliError::Config(
                "width, height and samples_per_ray must be positive".into(),
            ));
        }
        if self.trials == 0 {
            return Err(CliError::Config("trials must be at least 1".into()));
        }
        if self.compare_seeds == 0 {
            return Err(CliError::Config("compare_seeds must be at least 1".into()));
        }
        if self.sparsity == Some(0) {
            return Err(CliError::Config("sparsity must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.phantom.texture) {
            return Err(CliError::Config(
                "phantom_texture must lie in [0, 1]".into(),
            ));
        }
        self.params.validate()?;
        self.spsa.validate()?;
        Ok(())
    }

    /// Fills in the image size (from a loaded image, or the 16 × 16 default)
    /// and the sample count. An explicit size that disagrees with the image
    /// is a geometry error.
    pub fn resolve_dims(&self, image_dims: Option<(usize, usize)>) -> Result<Self> {
        let mut c = self.clone();
        let (w, h) = match image_dims {
            Some((w, h)) => {
                for (key, set, actual) in [("width", c.width, w), ("height", c.height, h)] {
                    if set.is_some_and(|v| v != actual) {
                        return Err(CliError::Geometry(format!(
                            "{key} = {} but the image has {key} {actual}",
                            set.unwrap_or(0)
                        )));
                    }
                }
                (w, h)
            }
            None => (c.width.unwrap_or(16), c.height.unwrap_or(16)),
        };
        c.width = Some(w);
        c.height = Some(h);
        c.samples_per_ray = Some(
            c.samples_per_ray
                .unwrap_or_else(|| auto_samples_per_ray(w, h, c.n_rays)),
        );
        Ok(c)
    }

    /// Image size; only meaningful after [`Self::resolve_dims`].
    pub fn dims(&self) -> (usize, usize) {
        (self.width.unwrap_or(16), self.height.unwrap_or(16))
    }

    /// Sparsity grid searched by `compare`.
    pub fn sparsity_levels(&self, n: usize) -> Vec<usize> {
        match self.sparsity {
            Some(s) => vec![s],
            None => default_sparsity_levels(n),
        }
    }

    /// Every setting with its effective value, in a form [`parse_document`]
    /// reads back.
    pub fn resolved(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        let path = |p: &Option<PathBuf>| {
            p.as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default()
        };
        let list = |v: Vec<String>| v.join(",");
        kv("image", path(&self.image));
        kv("width", auto(self.width));
        kv("height", auto(self.height));
        kv("phantom_seed", self.phantom.seed.to_string());
        kv("phantom_shapes", self.phantom.shapes.to_string());
        kv("phantom_texture", num(self.phantom.texture));
        kv(
            "operator",
            match self.operator {
                Operator::Radon => "radon",
                Operator::Identity => "identity",
            }
            .into(),
        );
        kv("n_rays", self.n_rays.to_string());
        kv("samples_per_ray", auto(self.samples_per_ray));
        kv(
            "detector_spacing",
            self.detector_spacing
                .map(num)
                .unwrap_or_else(|| "auto".into()),
        );
        kv("dictionary", self.dictionary.name().into());
        kv("sigma_u_sq", num(self.params.sigma_u_sq));
        kv("sigma_eps_sq", num(self.params.sigma_eps_sq));
        kv("a", num(self.params.a));
        kv("sigma_x_sq", num(self.params.sigma_x_sq));
        kv("tau", num(self.params.tau));
        kv("z_floor", num(self.params.z_floor));
        kv("estimate_noise", self.estimate_noise.to_string());
        kv("n_iters", self.spsa.n_iters.to_string());
        kv("alpha0", num(self.spsa.alpha0));
        kv("stability_a", num(self.spsa.stability_a));
        kv("alpha_exp", num(self.spsa.alpha_exp));
        kv("c0", num(self.spsa.c0));
        kv("gamma_exp", num(self.spsa.gamma_exp));
        kv("log_every", self.spsa.log_every.to_string());
        kv("method", self.method.name().into());
        kv("sparsity", auto(self.sparsity));
        kv("seed", self.seed.to_string());
        kv("output_dir", self.output_dir.display().to_string());
        kv("measurement", path(&self.measurement));
        kv(
            "sweep_iters",
            list(self.sweep_iters.iter().map(|v| v.to_string()).collect()),
        );
        kv(
            "sweep_dictionaries",
            list(
                self.sweep_dictionaries
                    .iter()
                    .map(|d| d.name().to_string())
                    .collect(),
            ),
        );
        kv("trials", self.trials.to_string());
        kv("compare_seeds", self.compare_seeds.to_string());
        out
    }
}

fn auto(v: Option<usize>) -> String {
    v.map(|v| v.to_string()).unwrap_or_else(|| "auto".into())
}

/// Shortest text that parses back to the same `f64`.
fn num(v: f64) -> String {
    format!("{v:?}")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(text: &str) -> Result<ExperimentConfig> {
        ExperimentConfig::from_map(parse_document(text)?, None)
    }

    #[test]
    fn empty_document_gives_defaults() {
        let c = cfg("").unwrap().resolve_dims(None).unwrap();
        assert_eq!(
            (c.dims(), c.n_rays, c.samples_per_ray),
            ((16, 16), 18, Some(18))
        );
        assert_eq!(c.method, Method::Fshbmap);
        assert_eq!(c.output_dir, PathBuf::from("."));
        assert_eq!(c.sweep_iters, vec![260, 360, 460, 560, 660, 760]);
    }

    #[test]
    fn auto_samples_match_the_reference_pattern() {
        assert_eq!(auto_samples_per_ray(32, 32, 18), 71);
        assert_eq!(auto_samples_per_ray(16, 16, 18), 18);
    }

    #[test]
    fn comments_and_whitespace() {
        let c = cfg("# header\n  width = 8  # trailing\n\nheight=8\n").unwrap();
        assert_eq!((c.width, c.height), (Some(8), Some(8)));
    }

    #[test]
    fn unknown_and_duplicate_keys_are_rejected() {
        assert!(matches!(cfg("widht = 8"), Err(CliError::Config(_))));
        assert!(matches!(
            cfg("width = 8\nwidth = 9"),
            Err(CliError::Config(_))
        ));
        assert!(matches!(cfg("width"), Err(CliError::Config(_))));
    }

    #[test]
    fn bad_values_are_config_errors() {
        for text in [
            "width = x",
            "method = lasso",
            "dictionary = fourier",
            "sigma_eps_sq = -1",
            "trials = 0",
        ] {
            assert!(matches!(cfg(text), Err(CliError::Config(_))), "{text}");
        }
    }

    #[test]
    fn overrides_win() {
        let mut map = parse_document("width = 8\nseed = 1").unwrap();
        apply_overrides(&mut map, &["--seed=5".into(), "--method=omp".into()]).unwrap();
        let c = ExperimentConfig::from_map(map, None).unwrap();
        assert_eq!((c.seed, c.method, c.width), (5, Method::Omp, Some(8)));
        let mut map = BTreeMap::new();
        assert!(apply_overrides(&mut map, &["seed=5".into()]).is_err());
        assert!(apply_overrides(&mut map, &["--seed".into()]).is_err());
    }

    #[test]
    fn output_dir_precedence() {
        let env = Some(PathBuf::from("/env"));
        let c = ExperimentConfig::from_map(parse_document("").unwrap(), env.clone()).unwrap();
        assert_eq!(c.output_dir, PathBuf::from("/env"));
        let c =
            ExperimentConfig::from_map(parse_document("output_dir = out").unwrap(), env).unwrap();
        assert_eq!(c.output_dir, PathBuf::from("out"));
    }

    #[test]
    fn image_dims_fill_in_and_conflict() {
        let c = cfg("").unwrap().resolve_dims(Some((32, 32))).unwrap();
        assert_eq!((c.dims(), c.samples_per_ray), ((32, 32), Some(71)));
        let c = cfg("width = 32").unwrap();
        assert!(c.resolve_dims(Some((32, 32))).is_ok());
        assert!(matches!(
            c.resolve_dims(Some((16, 32))),
            Err(CliError::Geometry(_))
        ));
    }

    #[test]
    fn empty_sweep_list_parses_to_empty() {
        assert!(cfg("sweep_iters =").unwrap().sweep_iters.is_empty());
    }

    #[test]
    fn resolved_round_trips() {
        let c =
            cfg("width = 8\nheight = 8\nsparsity = 3\nalpha0 = 0.3\nsweep_iters = 1,2").unwrap();
        let again = cfg(&c.resolved()).unwrap();
        assert_eq!(c, again);
    }
}
