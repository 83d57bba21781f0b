use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use faraccel::attack::{attack_batch, compare_robustness, run_attack, RobustnessReport};
use faraccel::compiler::{emit_blobs, harden_network, rank_network, row_budget, HardenedNetwork, ValidationLimits};
use faraccel::formats::{decode_fmdl, encode_fmdl};
use faraccel::model::{synth_dataset, train_toy, Batch, Precision, ToyNetwork};
use faraccel::system::{
    model_latency_report, schedule_layer, validate_and_enable, EnableDecision, GemmShape, LayerWorkload, ModelReport,
    ModelShape, ReportConfig,
};
use serde::Serialize;
use serde_json::json;

use crate::config::ExperimentConfig;

/// Error printed as one JSON line on stderr.
#[derive(Clone, Debug, Serialize)]
pub struct Failure {
    pub kind: &'static str,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub details: Option<serde_json::Value>,
}

impl Failure {
    pub fn config(message: String) -> Self {
        Self { kind: "config", message, details: None }
    }

    pub fn missing(path: &Path) -> Self {
        Self { kind: "missing_file", message: format!("{} does not exist", path.display()), details: None }
    }

    pub fn validation(message: String, details: Option<serde_json::Value>) -> Self {
        Self { kind: "validation", message, details }
    }

    pub fn other(message: String) -> Self {
        Self { kind: "error", message, details: None }
    }

    pub fn exit_code(&self) -> u8 {
        match self.kind {
            "config" => 2,
            "validation" => 3,
            "missing_file" => 4,
            _ => 1,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.kind, self.message)
    }
}

impl std::error::Error for Failure {}

fn out(cfg: &ExperimentConfig, name: &str) -> PathBuf {
    cfg.out_dir.join(name)
}

fn read(path: &Path) -> Result<Vec<u8>> {
    if !path.exists() {
        return Err(Failure::missing(path).into());
    }
    std::fs::read(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write(path, s.as_bytes())
}

fn load_model(path: &Path) -> Result<ToyNetwork> {
    decode_fmdl(&read(path)?).map_err(|e| Failure::validation(format!("{}: {e}", path.display()), None).into())
}

/// The model given with `--model`, else `default` in the output directory.
fn model_path(cfg: &ExperimentConfig, default: &str) -> PathBuf {
    cfg.model.clone().unwrap_or_else(|| out(cfg, default))
}

/// Two thirds train (also the analysis batch), one third test.
fn data(cfg: &ExperimentConfig) -> (Batch, Batch) {
    let all = synth_dataset(&cfg.dataset());
    all.split_at(all.len() * 2 / 3)
}

fn check_fits(net: &ToyNetwork, cfg: &ExperimentConfig) -> Result<()> {
    let dim = cfg.informative_dims + cfg.dead_dims;
    if net.input_dim() != dim || net.class_count() != cfg.classes {
        return Err(Failure::config(format!(
            "model maps {} inputs to {} classes but the dataset has {dim} inputs and {} classes",
            net.input_dim(),
            net.class_count(),
            cfg.classes
        ))
        .into());
    }
    Ok(())
}

fn accuracy(net: &HardenedNetwork, batch: &Batch) -> Result<f64> {
    Ok(net.accuracy(batch, Precision::Half)?)
}

pub fn gen(cfg: &ExperimentConfig) -> Result<()> {
    let net = ToyNetwork::random(&cfg.dims(), cfg.activation, cfg.seed)?;
    let (train, test) = data(cfg);
    write(&out(cfg, "init.fmdl"), &encode_fmdl(&net))?;
    write_json(
        &out(cfg, "dataset.json"),
        &json!({ "spec": cfg.dataset(), "train_samples": train.len(), "test_samples": test.len(), "dims": cfg.dims() }),
    )?;
    println!("model {:?}, {} train / {} test samples", cfg.dims(), train.len(), test.len());
    Ok(())
}

pub fn train(cfg: &ExperimentConfig) -> Result<()> {
    let net = load_model(&model_path(cfg, "init.fmdl"))?;
    check_fits(&net, cfg)?;
    let (train, test) = data(cfg);
    let trained = train_toy(&net, &train, &cfg.train())?;
    let base = HardenedNetwork::baseline(&trained);
    let (tr, te) = (accuracy(&base, &train)?, accuracy(&base, &test)?);
    write(&out(cfg, "trained.fmdl"), &encode_fmdl(&trained))?;
    write_json(&out(cfg, "train.json"), &json!({ "config": cfg.train(), "train_accuracy": tr, "test_accuracy": te }))?;
    println!("fp16 accuracy: train {:.1}%, test {:.1}%", tr * 100.0, te * 100.0);
    Ok(())
}

pub fn analyze(cfg: &ExperimentConfig) -> Result<()> {
    let net = load_model(&model_path(cfg, "trained.fmdl"))?;
    check_fits(&net, cfg)?;
    let (train, _) = data(cfg);
    let rankings = rank_network(&net, &train)?;
    let mut layers = Vec::new();
    for (i, r) in rankings.iter().enumerate() {
        let dead = r.dead_lanes(cfg.deadness_ratio);
        println!("layer {i}: {}x{}, {} dead lanes, row budget {}", r.fan_out, r.fan_in, dead.len(), row_budget(cfg.budget_fraction, r.fan_in));
        layers.push(json!({
            "layer": i,
            "fan_in": r.fan_in,
            "fan_out": r.fan_out,
            "dead_threshold": r.dead_threshold(cfg.deadness_ratio),
            "dead_lanes": dead,
            "row_budget": row_budget(cfg.budget_fraction, r.fan_in),
            "critical_lanes": r.order.iter().map(|o| o.first().copied()).collect::<Vec<_>>(),
            "deadness": r.deadness,
        }));
    }
    write_json(&out(cfg, "sensitivity.json"), &json!({ "layers": layers }))
}

pub fn far_compile(cfg: &ExperimentConfig) -> Result<()> {
    let net = load_model(&model_path(cfg, "trained.fmdl"))?;
    check_fits(&net, cfg)?;
    let (train, test) = data(cfg);
    let (h, reports) = harden_network(&net, &train, &cfg.far())?;
    write(&out(cfg, "hardened.fmdl"), &encode_fmdl(&h.dram_network()))?;
    for (i, layer) in h.layers.iter().enumerate() {
        let (fmap, fshd) = emit_blobs(layer);
        write(&out(cfg, &format!("layer{i}.fmap")), &fmap)?;
        write(&out(cfg, &format!("layer{i}.fshd")), &fshd)?;
        println!(
            "layer {i}: {} entries, {} shadow words, {} of {} rows hardened",
            layer.farmap.entries.len(),
            layer.shadow.len(),
            reports[i].hardened_rows(),
            layer.dram.fan_out()
        );
    }
    let base = accuracy(&HardenedNetwork::baseline(&net), &test)?;
    let hard = accuracy(&h, &test)?;
    println!("fp16 test accuracy {:.1}% -> {:.1}%", base * 100.0, hard * 100.0);
    write_json(
        &out(cfg, "compile.json"),
        &json!({ "config": cfg.far(), "layers": reports, "baseline_accuracy": base, "hardened_accuracy": hard }),
    )
}

/// Loads hardened.fmdl and every layer's blobs through the enable check.
fn load_hardened(cfg: &ExperimentConfig) -> Result<(HardenedNetwork, Vec<EnableDecision>)> {
    let dram = load_model(&out(cfg, "hardened.fmdl"))?;
    let mut layers = Vec::new();
    let mut decisions = Vec::new();
    for (i, l) in dram.layers().iter().enumerate() {
        let fmap = read(&out(cfg, &format!("layer{i}.fmap")))?;
        let fshd = read(&out(cfg, &format!("layer{i}.fshd")))?;
        let (h, d) = validate_and_enable(l, i as u16, &fmap, &fshd, ValidationLimits::default());
        layers.push(h);
        decisions.push(d);
    }
    Ok((HardenedNetwork { layers }, decisions))
}

fn require_enabled(decisions: &[EnableDecision]) -> Result<()> {
    if decisions.iter().any(|d| d != &EnableDecision::Enabled) {
        let details = json!({ "layers": decisions });
        return Err(Failure::validation("FaR disabled on at least one layer".into(), Some(details)).into());
    }
    Ok(())
}

pub fn validate(cfg: &ExperimentConfig) -> Result<()> {
    let (_, decisions) = load_hardened(cfg)?;
    for (i, d) in decisions.iter().enumerate() {
        match d {
            EnableDecision::Enabled => println!("layer {i}: enabled"),
            EnableDecision::Disabled { reason, detail } => println!("layer {i}: disabled ({reason}: {detail})"),
        }
    }
    write_json(&out(cfg, "validate.json"), &json!({ "layers": decisions }))?;
    require_enabled(&decisions)
}

fn parse_gemm(s: &str) -> Result<GemmShape> {
    let dims: Vec<usize> = s
        .split('x')
        .map(|p| p.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Failure::config(format!("gemm must look like MxKxN, got {s:?}")))?;
    let [m, k, n] = dims[..] else {
        return Err(Failure::config(format!("gemm must look like MxKxN, got {s:?}")).into());
    };
    Ok(GemmShape::new(s, m, k, n))
}

fn vit_shape(name: &str) -> Result<ModelShape> {
    match name {
        "vit-mnist" => Ok(ModelShape::vit_mnist()),
        "vit-cifar10" => Ok(ModelShape::vit_cifar10()),
        "vit-cifar100" => Ok(ModelShape::vit_cifar100()),
        _ => Err(Failure::config(format!("unknown transformer {name:?}")).into()),
    }
}

fn report_config(cfg: &ExperimentConfig) -> ReportConfig {
    ReportConfig { far_fraction: cfg.budget_fraction, div: cfg.div, overlap_select: cfg.overlap, system: cfg.system() }
}

pub fn simulate(cfg: &ExperimentConfig, gemm: &str, vit: Option<&str>) -> Result<()> {
    if let Some(name) = vit {
        let r = model_latency_report(&vit_shape(name)?, &report_config(cfg))?;
        for l in &r.per_layer {
            println!("{:<20} {:>10} {:>10} {:.4}", l.shape.name, l.baseline_makespan, l.makespan, l.far_overhead_ratio);
        }
        println!(
            "total: matmul overhead {:.4}, end-to-end {:.4}",
            r.totals.matmul_overhead_ratio, r.totals.end_to_end_ratio
        );
        return write_json(&out(cfg, "simulate.json"), &r);
    }
    let shape = parse_gemm(gemm)?;
    let sys = cfg.system();
    let base = schedule_layer(&LayerWorkload::baseline(shape.clone()), &sys)?;
    let far = if cfg.budget_fraction > 0.0 {
        schedule_layer(&LayerWorkload::budget_saturated(shape.clone(), cfg.budget_fraction, cfg.div), &sys)?
    } else {
        base.clone()
    };
    println!("baseline compute cycles {}", base.compute_cycles);
    println!("far compute cycles {}", far.compute_cycles);
    println!("makespan {} -> {}", base.makespan, far.makespan);
    write_json(&out(cfg, "simulate.json"), &json!({ "shape": shape, "system": sys, "baseline": base, "far": far }))
}

pub fn attack(cfg: &ExperimentConfig) -> Result<()> {
    let net = load_model(&model_path(cfg, "trained.fmdl"))?;
    check_fits(&net, cfg)?;
    let (hardened, decisions) = load_hardened(cfg)?;
    require_enabled(&decisions)?;
    let baseline = HardenedNetwork::baseline(&net);
    let dims = |n: &HardenedNetwork| n.layers.iter().map(|l| (l.dram.fan_in(), l.dram.fan_out())).collect::<Vec<_>>();
    if dims(&baseline) != dims(&hardened) {
        return Err(Failure::config("trained and hardened models have different shapes".into()).into());
    }
    let (_, test) = data(cfg);
    let acfg = cfg.attack();
    let rep = compare_robustness(&baseline, &hardened, &test, cfg.attack_batch, &acfg, cfg.trials)?;
    // traces of the first trial, for replay
    let batch = attack_batch(&test, cfg.attack_batch, acfg.seed);
    for (name, net) in [("baseline", &baseline), ("hardened", &hardened)] {
        let trace = run_attack(&mut net.clone(), &batch, &acfg)?;
        let mut buf = Vec::new();
        trace.write_jsonl(&mut buf)?;
        write(&out(cfg, &format!("attack_{name}.jsonl")), &buf)?;
    }
    println!(
        "PBS median flips: baseline {}, hardened {} (ratio {:.2})",
        rep.pbs.baseline_median, rep.pbs.hardened_median, rep.pbs.ratio
    );
    println!(
        "random median flips: baseline {}, hardened {} (ratio {:.2})",
        rep.random.baseline_median, rep.random.hardened_median, rep.random.ratio
    );
    write_json(&out(cfg, "robustness.json"), &rep)
}

fn render(latency: &[ModelReport], robustness: Option<&RobustnessReport>) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<14} {:>7} {:>16} {:>12} {:>16}", "model", "layers", "matmul overhead", "end-to-end", "metadata/weights");
    for r in latency {
        let t = &r.totals;
        let _ = writeln!(
            s,
            "{:<14} {:>7} {:>15.2}% {:>11.2}% {:>15.1}%",
            r.model,
            r.per_layer.len(),
            (t.matmul_overhead_ratio - 1.0) * 100.0,
            (t.end_to_end_ratio - 1.0) * 100.0,
            t.metadata_share_of_weights * 100.0
        );
    }
    s.push('\n');
    match robustness {
        None => s.push_str("no robustness results; run `attack` first\n"),
        Some(rep) => {
            let _ = writeln!(s, "{:<8} {:>16} {:>16} {:>7}", "attack", "baseline median", "hardened median", "ratio");
            for (name, m) in [("pbs", &rep.pbs), ("random", &rep.random)] {
                let _ = writeln!(s, "{name:<8} {:>16} {:>16} {:>7.2}", m.baseline_median, m.hardened_median, m.ratio);
            }
            let _ = writeln!(s, "flip budget {}, {} seeds; censored runs count as budget + 1", rep.config.flip_budget, rep.seeds.len());
        }
    }
    s
}

pub fn report(cfg: &ExperimentConfig) -> Result<()> {
    let rc = report_config(cfg);
    let latency = ModelShape::table_models()
        .iter()
        .map(|m| model_latency_report(m, &rc))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let path = out(cfg, "robustness.json");
    let robustness: Option<RobustnessReport> = if path.exists() {
        let bytes = read(&path)?;
        Some(serde_json::from_slice(&bytes).map_err(|e| Failure::validation(format!("{}: {e}", path.display()), None))?)
    } else {
        None
    };
    let text = render(&latency, robustness.as_ref());
    print!("{text}");
    write(&out(cfg, "report.txt"), text.as_bytes())?;
    write_json(&out(cfg, "report.json"), &json!({ "latency": latency, "robustness": robustness }))
}
