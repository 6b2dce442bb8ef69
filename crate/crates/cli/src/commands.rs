use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use lpcd_core::dataset::{build_dataset, load_dataset, save_dataset, synth_generate, Dataset, Split, MANIFEST};
use lpcd_core::metrics::{metrics, MetricsReport};
use lpcd_core::model::{checkpoint, predict, LpcdNet};
use lpcd_core::pipeline::{
    run_large_image_cd, write_pgm, DiffBaseline, ModelFilter, OracleFilter, OracleStub, PatchFilter, PipelineStats, PixelStage,
};
use lpcd_core::pruning::{run_sensitivity_pruning, SensitivityProfile};
use lpcd_core::tensor::{Tensor, TensorError};
use lpcd_core::train::{evaluate, registration_robustness, train, ROBUSTNESS_CSV_HEADER};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::CliError;

type Result<T> = std::result::Result<T, CliError>;

pub const RESOLVED_CONFIG: &str = "config.resolved";
pub const INPUT_HASHES: &str = "inputs.sha256";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    GenData,
    Train,
    Prune,
    Eval,
    RegSweep,
    Pipeline,
    Bench,
}

#[derive(Clone, Debug)]
pub struct RunArgs {
    pub config: PathBuf,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(hex(&Sha256::digest(&bytes)))
}

fn write(path: PathBuf, text: impl AsRef<[u8]>) -> Result<()> {
    fs::write(&path, text).map_err(|e| CliError::io(&path, e))
}

/// Tracks the files a run consumed so their digests can be recorded.
struct Run {
    cfg: RunConfig,
    out: PathBuf,
    inputs: Vec<PathBuf>,
}

impl Run {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn seed(&self) -> u64 {
        self.cfg.seed().expect("validated at parse time")
    }

    fn dataset(&mut self) -> Result<Dataset> {
        match self.cfg.data_dir() {
            Some(dir) => {
                let data = load_dataset(&dir)?;
                self.inputs.push(dir.join(MANIFEST));
                Ok(data)
            }
            None => Ok(build_dataset(&self.cfg.build_spec()?, self.seed())?),
        }
    }

    fn checkpoint(&mut self) -> Result<Option<LpcdNet>> {
        let Some(dir) = self.cfg.checkpoint() else { return Ok(None) };
        let net = checkpoint::load(&dir)?;
        let mut files: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(|e| CliError::io(&dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        files.sort();
        self.inputs.extend(files);
        Ok(Some(net))
    }

    fn require_checkpoint(&mut self) -> Result<LpcdNet> {
        self.checkpoint()?
            .ok_or_else(|| CliError::Config("model.checkpoint is required for this command".into()))
    }

    fn model(&mut self) -> Result<LpcdNet> {
        match self.checkpoint()? {
            Some(net) => Ok(net),
            None => Ok(LpcdNet::build(&self.cfg.network()?, self.seed())?),
        }
    }

    fn finish(&self) -> Result<()> {
        let mut s = String::new();
        writeln!(s, "{}  {}", sha256_file(&self.cfg.source)?, self.cfg.source.display()).unwrap();
        for p in &self.inputs {
            writeln!(s, "{}  {}", sha256_file(p)?, p.display()).unwrap();
        }
        write(self.path(INPUT_HASHES), s)
    }
}

fn check_patch_size(net: &LpcdNet, patch: usize) -> Result<()> {
    let want = net.config().input_size;
    if want != patch {
        return Err(TensorError::ShapeMismatch {
            op: "model input",
            lhs: vec![3, want, want],
            rhs: vec![3, patch, patch],
        }
        .into());
    }
    Ok(())
}

fn write_report(run: &Run, stem: &str, r: &MetricsReport) -> Result<()> {
    write(run.path(&format!("{stem}.json")), r.to_json() + "\n")?;
    write(run.path(&format!("{stem}.csv")), format!("{}\n{}\n", MetricsReport::CSV_HEADER, r.to_csv_row()))
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".into(), |x| x.to_string())
}

/// Runs one subcommand and returns a short human-readable summary.
pub fn run(cmd: Command, args: &RunArgs) -> Result<String> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.set("run.seed", seed.to_string())?;
    }
    let out = args
        .out
        .clone()
        .or_else(|| cfg.out_dir())
        .ok_or_else(|| CliError::Config("no output directory: pass --out or set run.out".into()))?;
    fs::create_dir_all(&out).map_err(|e| CliError::io(&out, e))?;
    let mut run = Run { cfg, out, inputs: Vec::new() };
    write(run.path(RESOLVED_CONFIG), run.cfg.resolved())?;
    let summary = match cmd {
        Command::GenData => gen_data(&mut run)?,
        Command::Train => train_cmd(&mut run)?,
        Command::Prune => prune(&mut run)?,
        Command::Eval => eval(&mut run)?,
        Command::RegSweep => reg_sweep(&mut run)?,
        Command::Pipeline => pipeline(&mut run)?,
        Command::Bench => bench(&mut run)?,
    };
    run.finish()?;
    Ok(summary)
}

fn gen_data(run: &mut Run) -> Result<String> {
    let data = build_dataset(&run.cfg.build_spec()?, run.seed())?;
    save_dataset(&data, run.path("dataset"))?;
    let mut s = format!("wrote {} patches to {}\n", data.patches.len(), run.path("dataset").display());
    for split in Split::ALL {
        let [neg, pos] = data.manifest.class_counts(split);
        writeln!(s, "{split}: {neg} unchanged, {pos} changed").unwrap();
    }
    Ok(s)
}

fn train_cmd(run: &mut Run) -> Result<String> {
    let tcfg = run.cfg.train()?;
    let data = run.dataset()?;
    let net = run.model()?;
    check_patch_size(&net, data.manifest.meta.patch_size)?;
    let (tr, val) = (data.subset(Split::Train), data.subset(Split::Val));
    let outcome = train(net, &tr, &val, &tcfg)?;
    checkpoint::save(&outcome.model, run.path("checkpoint"))?;

    let mut h = String::from("epoch,lr,mean_loss,val_patch_acc\n");
    for r in &outcome.history {
        writeln!(h, "{},{},{},{}", r.epoch, r.lr, r.mean_loss, opt(r.val_patch_acc)).unwrap();
    }
    write(run.path("history.csv"), h)?;
    let report = evaluate(&outcome.model, &val, tcfg.beta, run.cfg.eval_threshold()?)?;
    write_report(run, "val_metrics", &report)?;
    let summary = format!(
        "{{\"best_epoch\": {}, \"best_val_patch_acc\": {}, \"w0\": {}, \"w1\": {}, \"parameter_count\": {}}}\n",
        outcome.best_epoch,
        outcome.best_val_patch_acc.map_or("null".into(), |v| v.to_string()),
        outcome.weights.w0,
        outcome.weights.w1,
        outcome.model.parameter_count()
    );
    write(run.path("train_summary.json"), &summary)?;
    Ok(summary)
}

fn prune(run: &mut Run) -> Result<String> {
    let (base, tcfg, pcfg) = (run.cfg.network()?, run.cfg.train()?, run.cfg.pruning()?);
    let data = run.dataset()?;
    if base.input_size != data.manifest.meta.patch_size {
        check_patch_size(&LpcdNet::build(&base, 0)?, data.manifest.meta.patch_size)?;
    }
    let (tr, val) = (data.subset(Split::Train), data.subset(Split::Val));
    let out = run_sensitivity_pruning(&base, &tr, &val, &pcfg, &tcfg, run.seed())?;
    write(run.path("sensitivity.csv"), format!("{}\n{}", SensitivityProfile::CSV_HEADER, out.profile.to_csv()))?;
    write(run.path("sensitivity.txt"), out.profile.to_table())?;
    write(run.path("pruned_config.txt"), checkpoint::config_lines(&out.config))?;
    checkpoint::save(&out.baseline, run.path("baseline"))?;
    checkpoint::save(&out.model, run.path("checkpoint"))?;
    let report = evaluate(&out.model, &val, tcfg.beta, run.cfg.eval_threshold()?)?;
    write_report(run, "val_metrics", &report)?;
    let summary = format!(
        "{{\"baseline_parameters\": {}, \"pruned_parameters\": {}, \"new_channels\": {:?}}}\n",
        out.baseline.parameter_count(),
        out.model.parameter_count(),
        out.config.channels()
    );
    write(run.path("prune_summary.json"), &summary)?;
    Ok(format!("{}{summary}", out.profile.to_table()))
}

fn eval(run: &mut Run) -> Result<String> {
    let (split, beta, threshold) = (run.cfg.eval_split()?, run.cfg.eval_beta()?, run.cfg.eval_threshold()?);
    let net = run.require_checkpoint()?;
    let data = run.dataset()?;
    check_patch_size(&net, data.manifest.meta.patch_size)?;
    let report = evaluate(&net, &data.subset(split), beta, threshold)?;
    write_report(run, "metrics", &report)?;
    Ok(report.to_json() + "\n")
}

fn reg_sweep(run: &mut Run) -> Result<String> {
    let (split, beta, threshold, e_list) = (run.cfg.eval_split()?, run.cfg.eval_beta()?, run.cfg.eval_threshold()?, run.cfg.e_list()?);
    let net = run.require_checkpoint()?;
    let data = run.dataset()?;
    check_patch_size(&net, data.manifest.meta.patch_size)?;
    let rows = registration_robustness(&net, &data.subset(split), &e_list, beta, threshold)?;
    let mut s = format!("{ROBUSTNESS_CSV_HEADER}\n");
    for r in &rows {
        writeln!(s, "{}", r.to_csv_row()).unwrap();
    }
    write(run.path("robustness.csv"), &s)?;
    Ok(s)
}

fn pipeline(run: &mut Run) -> Result<String> {
    let ((filter_kind, filter_threshold), (stage_kind, diff_threshold)) = (run.cfg.pipeline_filter()?, run.cfg.pipeline_stage()?);
    let patch = run.cfg.pipeline_patch()?;
    let scene = synth_generate(&run.cfg.pipeline_synth()?, run.seed())?.remove(0);
    let net = if filter_kind == "model" {
        let net = run.require_checkpoint()?;
        check_patch_size(&net, patch)?;
        Some(net)
    } else {
        None
    };
    let model_filter = net.as_ref().map(|model| ModelFilter {
        model,
        threshold: filter_threshold,
    });
    let filter: Option<&dyn PatchFilter> = match filter_kind.as_str() {
        "oracle" => Some(&OracleFilter),
        "model" => model_filter.as_ref().map(|f| f as &dyn PatchFilter),
        _ => None,
    };
    let diff = DiffBaseline { threshold: diff_threshold };
    let stage: &dyn PixelStage = if stage_kind == "oracle" { &OracleStub } else { &diff };
    let out = run_large_image_cd(&scene, filter, stage, patch)?;
    out.map.save(run.path("map.lpt"))?;
    write_pgm(&out.map, run.path("map.pgm"))?;
    write(run.path("stats.json"), out.stats.to_json() + "\n")?;
    write(run.path("stats.csv"), format!("{}\n{}\n", PipelineStats::CSV_HEADER, out.stats.to_csv_row()))?;
    let report = metrics(out.stats.pixel_counts, run.cfg.eval_beta()?)?;
    write_report(run, "pixel_metrics", &report)?;
    Ok(out.stats.to_json() + "\n")
}

fn bench(run: &mut Run) -> Result<String> {
    let (pairs, batch, repeats) = run.cfg.bench()?;
    let net = run.model()?;
    let side = net.config().input_size;
    let mut rng = ChaCha8Rng::seed_from_u64(run.seed());
    let mut inputs = Vec::new();
    let mut left = pairs;
    while left > 0 {
        let n = left.min(batch);
        let mut img = || Tensor::from_fn([n, 3, side, side], |_| rng.gen_range(0.0..1.0));
        inputs.push((img(), img()));
        left -= n;
    }
    let mut checksum = 0.0;
    let start = Instant::now();
    for _ in 0..repeats {
        checksum = 0.0;
        for (a, b) in &inputs {
            checksum += predict(&net, a, b)?.iter().sum::<f64>();
        }
    }
    let forward_time = start.elapsed().as_secs_f64() / repeats as f64;
    let per_second = pairs as f64 / forward_time.max(1e-12);
    let json = format!(
        "{{\"parameter_count\": {}, \"encoder_parameter_count\": {}, \"feature_len\": {}, \"input_size\": {side}, \"pairs\": {pairs}, \"batch\": {batch}, \"repeats\": {repeats}, \"probability_sum\": {checksum}, \"forward_time\": {forward_time}, \"pairs_per_second\": {per_second}}}\n",
        net.parameter_count(),
        net.encoder_parameter_count(),
        net.config().feature_len(),
    );
    write(run.path("bench.json"), &json)?;
    Ok(json)
}
