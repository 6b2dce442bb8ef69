//! Line-oriented `section.key = value` run configuration.
//!
//! Every recognised key has a default; unknown keys are rejected. The resolved
//! form (defaults filled in, presets expanded) is written next to every run's
//! outputs and can be passed back with `--config` to replay the run.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use lpcd_core::dataset::{BuildSpec, ChangeLayout, SynthConfig};
use lpcd_core::metrics::ClassWeights;
use lpcd_core::model::{HeadKind, NetworkConfig};
use lpcd_core::pruning::PruningConfig;
use lpcd_core::train::{TrainConfig, WeightSpec};

use crate::error::CliError;

/// `(key, default, description)`. An empty default means "unset"; for model
/// keys it means "take the value from `model.preset`".
pub const KEYS: &[(&str, &str, &str)] = &[
    ("run.seed", "", "master seed (required)"),
    ("run.out", "", "output directory, overridden by --out"),
    ("data.dir", "", "dataset directory written by gen-data; empty generates in memory"),
    ("data.scene_size", "256", "side of each synthetic scene"),
    ("data.n_scenes", "8", "number of synthetic scenes"),
    ("data.change_sparsity", "0.1", "target changed-pixel fraction"),
    ("data.texture_seed", "0", "offset mixed into the background texture seed"),
    ("data.min_object", "8", "smallest static object side"),
    ("data.max_object", "24", "largest static object side"),
    ("data.static_objects", "12", "static objects per scene"),
    ("data.change_min_object", "24", "smallest changed object side"),
    ("data.change_max_object", "64", "largest changed object side"),
    ("data.jitter", "0.08", "photometric gain/offset jitter of the second image"),
    ("data.noise", "0.02", "pixel noise amplitude of the second image"),
    ("data.layout", "scattered", "scattered | tiles"),
    ("data.tile", "64", "tile side for the tiles layout"),
    ("data.tile_fraction", "0.1", "fraction of changed tiles for the tiles layout"),
    ("data.patch_size", "128", "patch side"),
    ("data.overlap", "0.5", "tiling overlap fraction"),
    ("data.min_change_pixels", "1", "changed pixels that make a patch positive"),
    ("data.split", "0.6,0.2,0.2", "train,val,test fractions"),
    ("model.preset", "whu", "base | resnet18 | whu | gz"),
    ("model.channels", "", "four stage widths, e.g. 8,36,36,33"),
    ("model.blocks", "", "basic blocks in each of the three residual stages"),
    ("model.mlfc_window", "", "compression max-pool window"),
    ("model.decision_hidden", "", "hidden width of the decision network"),
    ("model.input_size", "", "input patch side"),
    ("model.head", "", "mlfc | last_stage"),
    ("model.checkpoint", "", "checkpoint directory to load instead of building a fresh network"),
    ("train.epochs", "90", "training epochs"),
    ("train.lr0", "0.0001", "initial learning rate"),
    ("train.momentum", "0.99", "SGD momentum"),
    ("train.batch_size", "16", "mini-batch size"),
    ("train.beta", "whu", "PatchAcc beta for model selection: number, whu or gz"),
    ("train.weights", "auto", "auto or w0,w1"),
    ("train.allow_uneven_schedule", "false", "allow epochs not divisible by 3"),
    ("prune.lambda", "0.125", "initial pruning ratio"),
    ("prune.alpha", "4", "sensitivity slope"),
    ("prune.invert", "false", "prune sensitive stages less"),
    ("prune.retrain_epochs", "3", "fine-tuning epochs per pruned stage"),
    ("eval.split", "test", "train | val | test"),
    ("eval.beta", "whu", "number, whu or gz"),
    ("eval.threshold", "0.5", "decision threshold on the change probability"),
    ("registration.e_list", "0,10,20,30", "registration errors in pixels"),
    ("pipeline.scene_size", "1024", "side of the synthetic large scene"),
    ("pipeline.layout", "tiles", "scattered | tiles"),
    ("pipeline.tile", "64", "tile side for the tiles layout"),
    ("pipeline.tile_fraction", "0.1", "fraction of changed tiles"),
    ("pipeline.change_sparsity", "0.1", "changed-pixel fraction for the scattered layout"),
    ("pipeline.patch", "", "inference patch side; empty uses model.input_size"),
    ("pipeline.filter", "model", "none | oracle | model"),
    ("pipeline.filter_threshold", "0.5", "probability above which the filter passes a patch"),
    ("pipeline.stage", "diff", "oracle | diff"),
    ("pipeline.diff_threshold", "0.25", "threshold of the difference stage"),
    ("bench.pairs", "256", "patch pairs per timed pass"),
    ("bench.batch", "32", "pairs per forward call"),
    ("bench.repeats", "3", "timed passes"),
];

pub fn describe_keys() -> String {
    let mut s = String::new();
    for (k, d, doc) in KEYS {
        let d = if d.is_empty() { "-" } else { d };
        writeln!(s, "  {k:<28} {d:<14} {doc}").unwrap();
    }
    s
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<&'static str, String>,
    /// Where the configuration was read from.
    pub source: PathBuf,
}

fn invalid(key: &str, value: &str, want: &str) -> CliError {
    CliError::Config(format!("{key} = {value:?}: expected {want}"))
}

fn beta_value(key: &str, v: &str) -> Result<f64, CliError> {
    match v {
        "whu" => Ok(6.0),
        "gz" => Ok(4.5),
        _ => match v.parse::<f64>() {
            Ok(b) if b > 0.0 && b.is_finite() => Ok(b),
            _ => Err(invalid(key, v, "a positive number, whu or gz")),
        },
    }
}

impl RunConfig {
    pub fn parse(text: &str, source: impl Into<PathBuf>) -> Result<Self, CliError> {
        let mut values: BTreeMap<&'static str, String> = KEYS.iter().map(|(k, d, _)| (*k, d.to_string())).collect();
        let mut seen = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected `section.key = value`", n + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            let key = KEYS
                .iter()
                .map(|(key, _, _)| *key)
                .find(|key| *key == k)
                .ok_or_else(|| CliError::Config(format!("line {}: unknown key {k:?}", n + 1)))?;
            if let Some(prev) = seen.insert(key, n + 1) {
                return Err(CliError::Config(format!("line {}: {key} already set on line {prev}", n + 1)));
            }
            values.insert(key, v.to_string());
        }
        if values["run.seed"].is_empty() {
            return Err(CliError::Config("run.seed is required".into()));
        }
        let mut cfg = RunConfig {
            values,
            source: source.into(),
        };
        cfg.seed()?;
        cfg.expand_model_preset()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text, path)
    }

    fn expand_model_preset(&mut self) -> Result<(), CliError> {
        let preset = self.get("model.preset");
        let base = NetworkConfig::preset(&preset)
            .ok_or_else(|| invalid("model.preset", &preset, "base, resnet18, whu or gz"))?;
        let join = |xs: &[usize]| xs.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        let fill = [
            ("model.channels", join(&base.channels())),
            ("model.blocks", join(&base.blocks())),
            ("model.mlfc_window", base.mlfc_window.to_string()),
            ("model.decision_hidden", base.decision_hidden.to_string()),
            ("model.input_size", base.input_size.to_string()),
            ("model.head", base.head.to_string()),
        ];
        for (k, v) in fill {
            if self.values[k].is_empty() {
                self.values.insert(k, v);
            }
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> String {
        self.values.get(key).unwrap_or_else(|| panic!("unregistered key {key}")).clone()
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<(), CliError> {
        let k = KEYS
            .iter()
            .map(|(k, _, _)| *k)
            .find(|k| *k == key)
            .ok_or_else(|| CliError::Config(format!("unknown key {key:?}")))?;
        self.values.insert(k, value.into());
        Ok(())
    }

    fn num<T: std::str::FromStr>(&self, key: &str, want: &str) -> Result<T, CliError> {
        let v = self.get(key);
        v.parse().map_err(|_| invalid(key, &v, want))
    }

    fn usize(&self, key: &str) -> Result<usize, CliError> {
        self.num(key, "a nonnegative integer")
    }

    fn f64(&self, key: &str) -> Result<f64, CliError> {
        self.num(key, "a number")
    }

    fn bool(&self, key: &str) -> Result<bool, CliError> {
        self.num(key, "true or false")
    }

    fn list<T: std::str::FromStr>(&self, key: &str, want: &str) -> Result<Vec<T>, CliError> {
        let v = self.get(key);
        v.split(',').map(|x| x.trim().parse().map_err(|_| invalid(key, &v, want))).collect()
    }

    fn fixed<const N: usize>(&self, key: &str) -> Result<[usize; N], CliError> {
        let v = self.get(key);
        self.list::<usize>(key, "comma-separated integers")?
            .try_into()
            .map_err(|_| invalid(key, &v, &format!("{N} comma-separated integers")))
    }

    fn path(&self, key: &str) -> Option<PathBuf> {
        let v = self.get(key);
        (!v.is_empty()).then(|| PathBuf::from(v))
    }

    pub fn seed(&self) -> Result<u64, CliError> {
        self.num("run.seed", "an unsigned integer")
    }

    pub fn out_dir(&self) -> Option<PathBuf> {
        self.path("run.out")
    }

    pub fn data_dir(&self) -> Option<PathBuf> {
        self.path("data.dir")
    }

    pub fn checkpoint(&self) -> Option<PathBuf> {
        self.path("model.checkpoint")
    }

    fn layout(&self, section: &str) -> Result<ChangeLayout, CliError> {
        let key = format!("{section}.layout");
        match self.get(&key).as_str() {
            "scattered" => Ok(ChangeLayout::Scattered),
            "tiles" => Ok(ChangeLayout::Tiles {
                tile: self.usize(&format!("{section}.tile"))?,
                fraction: self.f64(&format!("{section}.tile_fraction"))?,
            }),
            other => Err(invalid(&key, other, "scattered or tiles")),
        }
    }

    pub fn synth(&self) -> Result<SynthConfig, CliError> {
        Ok(SynthConfig {
            scene_size: self.usize("data.scene_size")?,
            n_scenes: self.usize("data.n_scenes")?,
            change_sparsity: self.f64("data.change_sparsity")?,
            texture_seed: self.num("data.texture_seed", "an unsigned integer")?,
            min_object: self.usize("data.min_object")?,
            max_object: self.usize("data.max_object")?,
            static_objects: self.usize("data.static_objects")?,
            change_min_object: self.usize("data.change_min_object")?,
            change_max_object: self.usize("data.change_max_object")?,
            jitter: self.f64("data.jitter")?,
            noise: self.f64("data.noise")?,
            layout: self.layout("data")?,
        })
    }

    pub fn build_spec(&self) -> Result<BuildSpec, CliError> {
        let v = self.get("data.split");
        let f: Vec<f64> = self.list("data.split", "three comma-separated fractions")?;
        let [a, b, c]: [f64; 3] = f.try_into().map_err(|_| invalid("data.split", &v, "three comma-separated fractions"))?;
        Ok(BuildSpec {
            synth: self.synth()?,
            patch_size: self.usize("data.patch_size")?,
            overlap: self.f64("data.overlap")?,
            min_change_pixels: self.usize("data.min_change_pixels")?,
            fractions: (a, b, c),
        })
    }

    /// The scene used by the two-stage pipeline: the dataset generator
    /// settings with the pipeline's size and change layout.
    pub fn pipeline_synth(&self) -> Result<SynthConfig, CliError> {
        Ok(SynthConfig {
            scene_size: self.usize("pipeline.scene_size")?,
            n_scenes: 1,
            change_sparsity: self.f64("pipeline.change_sparsity")?,
            layout: self.layout("pipeline")?,
            ..self.synth()?
        })
    }

    pub fn network(&self) -> Result<NetworkConfig, CliError> {
        let preset = self.get("model.preset");
        let mut c = NetworkConfig::preset(&preset).ok_or_else(|| invalid("model.preset", &preset, "base, resnet18, whu or gz"))?;
        c.set_channels(self.fixed::<4>("model.channels")?);
        let blocks = self.fixed::<3>("model.blocks")?;
        for (s, b) in c.stages.iter_mut().zip(blocks) {
            s.num_blocks = b;
        }
        c.mlfc_window = self.usize("model.mlfc_window")?;
        c.decision_hidden = self.usize("model.decision_hidden")?;
        c.input_size = self.usize("model.input_size")?;
        let head = self.get("model.head");
        c.head = head.parse::<HeadKind>().map_err(|_| invalid("model.head", &head, "mlfc or last_stage"))?;
        c.validate()?;
        Ok(c)
    }

    pub fn train(&self) -> Result<TrainConfig, CliError> {
        let w = self.get("train.weights");
        let weights = if w == "auto" {
            WeightSpec::Auto
        } else {
            let v: Vec<f64> = self.list("train.weights", "auto or w0,w1")?;
            let [w0, w1]: [f64; 2] = v.try_into().map_err(|_| invalid("train.weights", &w, "auto or w0,w1"))?;
            WeightSpec::Fixed(ClassWeights::new(w0, w1)?)
        };
        let cfg = TrainConfig {
            epochs: self.usize("train.epochs")?,
            lr0: self.f64("train.lr0")?,
            momentum: self.f64("train.momentum")?,
            batch_size: self.usize("train.batch_size")?,
            beta: beta_value("train.beta", &self.get("train.beta"))?,
            weights,
            seed: self.seed()?,
            allow_uneven_schedule: self.bool("train.allow_uneven_schedule")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn pruning(&self) -> Result<PruningConfig, CliError> {
        Ok(PruningConfig {
            lambda: self.f64("prune.lambda")?,
            alpha: self.f64("prune.alpha")?,
            invert: self.bool("prune.invert")?,
            retrain_epochs: self.usize("prune.retrain_epochs")?,
        })
    }

    pub fn eval_split(&self) -> Result<lpcd_core::dataset::Split, CliError> {
        let v = self.get("eval.split");
        v.parse().map_err(|_| invalid("eval.split", &v, "train, val or test"))
    }

    pub fn eval_beta(&self) -> Result<f64, CliError> {
        beta_value("eval.beta", &self.get("eval.beta"))
    }

    pub fn eval_threshold(&self) -> Result<f64, CliError> {
        let t = self.f64("eval.threshold")?;
        if !(0.0..1.0).contains(&t) {
            return Err(invalid("eval.threshold", &t.to_string(), "a value in [0, 1)"));
        }
        Ok(t)
    }

    pub fn e_list(&self) -> Result<Vec<usize>, CliError> {
        self.list("registration.e_list", "comma-separated integers")
    }

    pub fn pipeline_patch(&self) -> Result<usize, CliError> {
        if self.get("pipeline.patch").is_empty() {
            self.usize("model.input_size")
        } else {
            self.usize("pipeline.patch")
        }
    }

    pub fn pipeline_filter(&self) -> Result<(String, f64), CliError> {
        let f = self.get("pipeline.filter");
        if !["none", "oracle", "model"].contains(&f.as_str()) {
            return Err(invalid("pipeline.filter", &f, "none, oracle or model"));
        }
        Ok((f, self.f64("pipeline.filter_threshold")?))
    }

    pub fn pipeline_stage(&self) -> Result<(String, f64), CliError> {
        let s = self.get("pipeline.stage");
        if !["oracle", "diff"].contains(&s.as_str()) {
            return Err(invalid("pipeline.stage", &s, "oracle or diff"));
        }
        Ok((s, self.f64("pipeline.diff_threshold")?))
    }

    pub fn bench(&self) -> Result<(usize, usize, usize), CliError> {
        let (n, b, r) = (self.usize("bench.pairs")?, self.usize("bench.batch")?, self.usize("bench.repeats")?);
        if n == 0 || b == 0 || r == 0 {
            return Err(CliError::Config("bench.pairs, bench.batch and bench.repeats must be positive".into()));
        }
        Ok((n, b, r))
    }

    /// Every key with its effective value, in registry order.
    pub fn resolved(&self) -> String {
        let mut s = String::from("# resolved configuration; replay with --config\n");
        for (k, _, _) in KEYS {
            writeln!(s, "{k} = {}", self.values[k]).unwrap();
        }
        s
    }
}
