//! Line-oriented `key = value` experiment configuration.

use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::experiments::desk::DeskImage;
use crate::network::LayerSpec;
use crate::tensor::RngSpec;
use crate::visualize::VisMethod;

/// The experiment registry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExperimentId {
    CnnVsFcn,
    FiltersSweep,
    MaxPool,
    Depth,
    L2Stats,
    Fgsm,
    Splice,
    EdgeDetector,
}

impl ExperimentId {
    pub const ALL: [ExperimentId; 8] = [
        ExperimentId::CnnVsFcn,
        ExperimentId::FiltersSweep,
        ExperimentId::MaxPool,
        ExperimentId::Depth,
        ExperimentId::L2Stats,
        ExperimentId::Fgsm,
        ExperimentId::Splice,
        ExperimentId::EdgeDetector,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentId::CnnVsFcn => "cnn-vs-fcn",
            ExperimentId::FiltersSweep => "filters-sweep",
            ExperimentId::MaxPool => "maxpool",
            ExperimentId::Depth => "depth",
            ExperimentId::L2Stats => "l2-stats",
            ExperimentId::Fgsm => "fgsm",
            ExperimentId::Splice => "splice",
            ExperimentId::EdgeDetector => "edge-detector",
        }
    }

    pub fn registry() -> String {
        ExperimentId::ALL.map(ExperimentId::name).join(", ")
    }
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ExperimentId::ALL.into_iter().find(|e| e.name() == s).ok_or_else(|| {
            Error::Config(format!(
                "unknown experiment {s:?}; registry: {}",
                ExperimentId::registry()
            ))
        })
    }
}

/// Where the input image comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum InputSource {
    Desk(DeskImage),
    /// Every pixel set to the given value.
    Constant(f64),
    File(PathBuf),
}

impl fmt::Display for InputSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InputSource::Desk(d) => write!(f, "desk:{d}"),
            InputSource::Constant(v) => write!(f, "constant:{v}"),
            InputSource::File(p) => write!(f, "file:{}", p.display()),
        }
    }
}

impl FromStr for InputSource {
    type Err = Error;

    /// `desk:<name>`, `constant:<value>`, `zero`, `file:<path>`, or a bare
    /// desk name or path.
    fn from_str(s: &str) -> Result<Self> {
        if let Some(name) = s.strip_prefix("desk:") {
            return Ok(InputSource::Desk(name.parse()?));
        }
        if let Some(v) = s.strip_prefix("constant:") {
            let v: f64 = v
                .parse()
                .map_err(|_| Error::Config(format!("bad constant input {v:?}")))?;
            return Ok(InputSource::Constant(v));
        }
        if let Some(p) = s.strip_prefix("file:") {
            return Ok(InputSource::File(PathBuf::from(p)));
        }
        if s == "zero" {
            return Ok(InputSource::Constant(0.0));
        }
        if let Ok(d) = s.parse() {
            return Ok(InputSource::Desk(d));
        }
        if s.is_empty() {
            return Err(Error::Config("empty input".into()));
        }
        Ok(InputSource::File(PathBuf::from(s)))
    }
}

/// Which logit the visualizations target.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    /// The largest logit for the given input.
    Max,
    Logit(usize),
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Target::Max => f.write_str("max"),
            Target::Logit(k) => write!(f, "{k}"),
        }
    }
}

impl FromStr for Target {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "max" {
            return Ok(Target::Max);
        }
        s.parse()
            .map(Target::Logit)
            .map_err(|_| Error::Config(format!("target must be \"max\" or a logit index, got {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitKind {
    Gaussian,
    Truncated,
}

impl InitKind {
    pub fn spec(self, seed: u64, std: f64) -> RngSpec {
        match self {
            InitKind::Gaussian => RngSpec::gaussian(seed, 0.0, std),
            InitKind::Truncated => RngSpec::truncated(seed, 0.0, std),
        }
    }
}

impl fmt::Display for InitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InitKind::Gaussian => "gaussian",
            InitKind::Truncated => "truncated",
        })
    }
}

impl FromStr for InitKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(InitKind::Gaussian),
            "truncated" => Ok(InitKind::Truncated),
            _ => Err(Error::Config(format!("init must be gaussian or truncated, got {s:?}"))),
        }
    }
}

/// Every knob an experiment reads; unset keys keep their defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: ExperimentId,
    pub input: InputSource,
    /// Subtract the image mean before scaling random-network inputs to unit norm.
    pub center: bool,
    /// Side length of square random-network inputs.
    pub image_size: usize,
    pub channels: usize,
    /// Square first-layer filter size.
    pub filter: usize,
    pub stride: usize,
    /// First-layer filter count `N`.
    pub filters: usize,
    pub classes: usize,
    pub init: InitKind,
    pub weight_std: f64,
    pub seeds: Vec<u64>,
    pub methods: Vec<VisMethod>,
    pub target: Target,
    pub n_sweep: Vec<usize>,
    pub fcn_hidden: usize,
    pub fcn_sweep: Vec<usize>,
    pub pool: usize,
    /// First-layer filter count of the deep CNN.
    pub depth_filters: usize,
    /// Filter count of the deep CNN's later conv layers.
    pub depth_width: usize,
    pub resamples: usize,
    pub pairs: usize,
    /// Images per l2-stats batch.
    pub batch: usize,
    pub train_samples: usize,
    pub test_samples: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epsilon: f64,
    /// Parameterized layer indices to splice at; empty means all.
    pub splice_layers: Vec<usize>,
    /// Replaces the experiment's primary random network when set.
    pub architecture: Option<Vec<LayerSpec>>,
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn new(experiment: ExperimentId) -> Self {
        ExperimentConfig {
            experiment,
            input: InputSource::Desk(DeskImage::Scene),
            center: true,
            image_size: 64,
            channels: 3,
            filter: 7,
            stride: 2,
            filters: 256,
            classes: 10,
            init: InitKind::Truncated,
            weight_std: 0.1,
            seeds: vec![0],
            methods: VisMethod::ALL.to_vec(),
            target: Target::Max,
            n_sweep: vec![8, 16, 32, 64, 128, 256],
            fcn_hidden: 4096,
            fcn_sweep: vec![5000, 10000, 40000],
            pool: 2,
            depth_filters: 256,
            depth_width: 64,
            resamples: 200,
            pairs: 50,
            batch: 100,
            train_samples: 1024,
            test_samples: 128,
            epochs: 8,
            learning_rate: 0.05,
            batch_size: 16,
            epsilon: 0.1,
            splice_layers: Vec::new(),
            architecture: None,
            output: None,
        }
    }

    /// Parses `key = value` lines; `#` starts a comment. An `experiment` key,
    /// when present, must agree with `experiment`.
    pub fn parse(experiment: ExperimentId, text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::new(experiment);
        let mut seen = std::collections::HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| Error::Config(format!("line {}: {msg}", n + 1));
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, got {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(err(format!("duplicate key {key:?}")));
            }
            cfg.set(key, value).map_err(|e| match e {
                Error::Config(m) => err(m),
                other => other,
            })?;
        }
        Ok(cfg)
    }

    pub fn load(experiment: ExperimentId, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Self::parse(experiment, &text)
    }

    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
        }
        fn positive(key: &str, v: &str) -> Result<usize> {
            match num(key, v)? {
                0 => Err(Error::Config(format!("{key} must be positive"))),
                n => Ok(n),
            }
        }
        fn list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
            v.split(',')
                .filter(|s| !s.trim().is_empty())
                .map(|s| num(key, s.trim()))
                .collect()
        }
        fn nonneg(key: &str, v: &str) -> Result<f64> {
            let x: f64 = num(key, v)?;
            if x >= 0.0 && x.is_finite() {
                Ok(x)
            } else {
                Err(Error::Config(format!("{key} must be a finite non-negative number")))
            }
        }
        match key {
            "experiment" => {
                let id: ExperimentId = v.parse()?;
                if id != self.experiment {
                    return Err(Error::Config(format!(
                        "config is for {id}, but {} was requested",
                        self.experiment
                    )));
                }
            }
            "input" => self.input = v.parse()?,
            "center" => self.center = num(key, v)?,
            "image_size" => self.image_size = positive(key, v)?,
            "channels" => self.channels = positive(key, v)?,
            "filter" => self.filter = positive(key, v)?,
            "stride" => self.stride = positive(key, v)?,
            "filters" => self.filters = positive(key, v)?,
            "classes" => self.classes = positive(key, v)?,
            "init" => self.init = v.parse()?,
            "weight_std" => {
                self.weight_std = nonneg(key, v)?;
                if self.weight_std == 0.0 {
                    return Err(Error::Config("weight_std must be positive".into()));
                }
            }
            "seeds" => {
                self.seeds = list(key, v)?;
                if self.seeds.is_empty() {
                    return Err(Error::Config("seeds must not be empty".into()));
                }
            }
            "methods" => {
                self.methods = v
                    .split(',')
                    .map(|s| s.trim().parse::<VisMethod>().map_err(|e| Error::Config(e.to_string())))
                    .collect::<Result<_>>()?;
                if self.methods.is_empty() {
                    return Err(Error::Config("methods must not be empty".into()));
                }
            }
            "target" => self.target = v.parse()?,
            "n_sweep" => self.n_sweep = list(key, v)?,
            "fcn_hidden" => self.fcn_hidden = positive(key, v)?,
            "fcn_sweep" => self.fcn_sweep = list(key, v)?,
            "pool" => self.pool = positive(key, v)?,
            "depth_filters" => self.depth_filters = positive(key, v)?,
            "depth_width" => self.depth_width = positive(key, v)?,
            "resamples" => self.resamples = positive(key, v)?,
            "pairs" => self.pairs = positive(key, v)?,
            "batch" => self.batch = positive(key, v)?,
            "train_samples" => self.train_samples = positive(key, v)?,
            "test_samples" => self.test_samples = positive(key, v)?,
            "epochs" => self.epochs = num(key, v)?,
            "learning_rate" => self.learning_rate = nonneg(key, v)?,
            "batch_size" => self.batch_size = positive(key, v)?,
            "epsilon" => self.epsilon = nonneg(key, v)?,
            "splice_layers" => self.splice_layers = list(key, v)?,
            "architecture" => {
                let layers = v
                    .split(';')
                    .map(|s| s.trim().parse::<LayerSpec>().map_err(|e| Error::Config(e.to_string())))
                    .collect::<Result<Vec<_>>>()?;
                self.architecture = Some(layers);
            }
            "output" => self.output = Some(PathBuf::from(v)),
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Every effective setting as `key = value` lines; parses back to `self`.
    pub fn echo(&self) -> String {
        fn join<T: fmt::Display>(v: &[T]) -> String {
            v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
        }
        let mut s = String::new();
        let mut line = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        line("experiment", self.experiment.to_string());
        line("input", self.input.to_string());
        line("center", self.center.to_string());
        line("image_size", self.image_size.to_string());
        line("channels", self.channels.to_string());
        line("filter", self.filter.to_string());
        line("stride", self.stride.to_string());
        line("filters", self.filters.to_string());
        line("classes", self.classes.to_string());
        line("init", self.init.to_string());
        line("weight_std", self.weight_std.to_string());
        line("seeds", join(&self.seeds));
        line("methods", join(&self.methods));
        line("target", self.target.to_string());
        line("n_sweep", join(&self.n_sweep));
        line("fcn_hidden", self.fcn_hidden.to_string());
        line("fcn_sweep", join(&self.fcn_sweep));
        line("pool", self.pool.to_string());
        line("depth_filters", self.depth_filters.to_string());
        line("depth_width", self.depth_width.to_string());
        line("resamples", self.resamples.to_string());
        line("pairs", self.pairs.to_string());
        line("batch", self.batch.to_string());
        line("train_samples", self.train_samples.to_string());
        line("test_samples", self.test_samples.to_string());
        line("epochs", self.epochs.to_string());
        line("learning_rate", self.learning_rate.to_string());
        line("batch_size", self.batch_size.to_string());
        line("epsilon", self.epsilon.to_string());
        line("splice_layers", join(&self.splice_layers));
        if let Some(a) = &self.architecture {
            line(
                "architecture",
                a.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "),
            );
        }
        if let Some(o) = &self.output {
            line("output", o.display().to_string());
        }
        s
    }

    /// Weight initialization for a given seed.
    pub fn init_spec(&self, seed: u64) -> RngSpec {
        self.init.spec(seed, self.weight_std)
    }
}
