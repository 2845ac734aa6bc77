use std::fs;
use std::io::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use dneuron::accelsim::{Accelerator, DramPolicy, FilterCase, DEFAULT_CLOCK_MHZ};
use dneuron::bitcore::{mbs_multiply, moa_psum, DatapathConfig};
use dneuron::hwcost::{
    adder_tree_cost, comparison_table, compare, mac_baseline_cost, moa_cost_with, moa_study, neural_element_cost,
    CostReport, GateLibrary, MacBaseline, MoaShape,
};
use dneuron::netrun::{
    argmax, evaluate, load_mnist_test, load_weights, quantize_network, Engine, EvalOptions, LayerSpec, NetworkSpec,
    QuantLayer, QuantMode, QuantOptions, QuantizedNetwork,
};
use dneuron::psiq::{Codebook, PsiConfig, MAX_TERMS};
use dneuron::tensor::PoolKind;
use dneuron::Error;

/// Clocks per MNIST inference reported for the reference design.
const REPORTED_CLOCKS: u64 = 2384;

#[derive(Parser, Debug)]
#[command(name = "dneuron", version, about = "Bit-accurate barrel-shift CNN accelerator model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Quantize float weights and report decomposition errors.
    Quantize(QuantizeArgs),
    /// Accuracy on the MNIST test set.
    Eval(EvalArgs),
    /// One inference with logits and the cycle report.
    Run(RunArgs),
    /// Gate-count and critical-path comparisons.
    Cost(CostArgs),
    /// Per-clock dataflow dump of one inference.
    Trace(TraceArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum NetChoice {
    Lenet5,
    Tiny,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum DatapathChoice {
    /// Widths that never overflow.
    Wide,
    /// The narrow 12/18-bit build.
    Narrow,
}

#[derive(Args, Debug)]
struct NetArgs {
    /// DNW1 weights file.
    #[arg(long, env = "DN_WEIGHTS", default_value = "data/lenet5.dnw")]
    weights: PathBuf,
    #[arg(long, value_enum, default_value = "lenet5")]
    net: NetChoice,
    /// Pooling kind: max or avg.
    #[arg(long, default_value = "max")]
    pool: String,
}

impl NetArgs {
    fn spec(&self, case: Option<&str>) -> anyhow::Result<NetworkSpec> {
        let kind: PoolKind = self.pool.parse()?;
        let mut spec = match self.net {
            NetChoice::Lenet5 => NetworkSpec::lenet5(),
            NetChoice::Tiny => NetworkSpec::tiny(),
        }
        .with_pooling(kind);
        if let Some(case) = case {
            let case: FilterCase = case.parse()?;
            let mut applied = false;
            for layer in &mut spec.layers {
                if let LayerSpec::Conv(c) = layer {
                    if c.kernel == case.kernel() && c.in_channels <= case.max_channels() {
                        c.case_hint = Some(case);
                        applied = true;
                    }
                }
            }
            if !applied {
                return Err(Error::Config(format!("no convolution layer fits {case}")).into());
            }
        }
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Args, Debug)]
struct QuantArgs {
    /// fp32, int8, int5, or psi(b,t) / psi:b,t.
    #[arg(long)]
    mode: Option<String>,
    /// Weight scale factor (power of two).
    #[arg(long)]
    scale: Option<u32>,
    /// Right shift applied to hidden activations.
    #[arg(long)]
    shift: Option<u32>,
    #[arg(long, value_enum, default_value = "wide")]
    datapath: DatapathChoice,
    /// Filter case for every convolution it fits, e.g. case6.
    #[arg(long)]
    case: Option<String>,
}

impl QuantArgs {
    fn mode_or(&self, default: &str) -> anyhow::Result<QuantMode> {
        Ok(self.mode.as_deref().unwrap_or(default).parse()?)
    }

    fn options(&self) -> QuantOptions {
        QuantOptions {
            scale: self.scale,
            shift: self.shift,
            datapath: Some(match self.datapath {
                DatapathChoice::Wide => DatapathConfig::WIDE,
                DatapathChoice::Narrow => DatapathConfig::NARROW,
            }),
        }
    }

    fn quantized(&self, net: &NetArgs, default: &str) -> anyhow::Result<QuantizedNetwork> {
        let spec = net.spec(self.case.as_deref())?;
        let weights = load_weights(&net.weights).with_context(|| format!("reading {}", net.weights.display()))?;
        Ok(quantize_network(&spec, &weights, self.mode_or(default)?, self.options())?)
    }
}

#[derive(Args, Debug)]
struct DataArgs {
    /// Directory holding the t10k IDX files.
    #[arg(long, env = "DN_MNIST_DIR", default_value = "data/mnist")]
    mnist: PathBuf,
}

#[derive(Args, Debug)]
struct QuantizeArgs {
    #[command(flatten)]
    net: NetArgs,
    #[command(flatten)]
    quant: QuantArgs,
    /// Where to write the quantized weights (DNW1, values divided by the scale).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    net: NetArgs,
    #[command(flatten)]
    quant: QuantArgs,
    #[command(flatten)]
    data: DataArgs,
    /// Evaluate only the first N images.
    #[arg(long)]
    limit: Option<usize>,
    /// ref or accel.
    #[arg(long, default_value = "ref")]
    engine: String,
    /// Print confusion matrices.
    #[arg(long)]
    confusion: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PolicyChoice {
    Reuse,
    NoReuse,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    net: NetArgs,
    #[command(flatten)]
    quant: QuantArgs,
    #[command(flatten)]
    data: DataArgs,
    /// Test-set image index.
    #[arg(long, default_value_t = 0)]
    image: usize,
    /// Number of back-to-back inferences in the session.
    #[arg(long, default_value_t = 1)]
    repeat: u64,
    #[arg(long, value_enum, default_value = "reuse")]
    policy: PolicyChoice,
    #[arg(long, default_value_t = DEFAULT_CLOCK_MHZ)]
    clock_mhz: f64,
}

#[derive(Args, Debug)]
struct CostArgs {
    /// Designs to compare, e.g. moa:75 tree:75; the first is measured
    /// against each of the others.
    #[arg(long, num_args = 1.., default_values = ["moa:75", "tree:75"])]
    compare: Vec<String>,
    /// Operand width of moa/tree designs.
    #[arg(long, default_value_t = 12)]
    width: u32,
    /// Output width of moa designs.
    #[arg(long, default_value_t = 18)]
    out_width: u32,
    /// key=value gate library overriding the defaults.
    #[arg(long)]
    library: Option<PathBuf>,
    /// Also print the neuron comparison table with published figures.
    #[arg(long)]
    table: bool,
}

#[derive(Args, Debug)]
struct TraceArgs {
    #[command(flatten)]
    net: NetArgs,
    #[command(flatten)]
    quant: QuantArgs,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 0)]
    image: usize,
    /// Only clocks of this layer.
    #[arg(long)]
    layer: Option<String>,
    /// Stop after this many clock lines.
    #[arg(long)]
    max_clocks: Option<usize>,
    /// Write the dump here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn quantize(a: QuantizeArgs) -> anyhow::Result<String> {
    let net = a.quant.quantized(&a.net, "psi(5,2)")?;
    let mut s = String::new();
    for (layer, report) in &net.reports {
        s += &format!("{layer}: {}\n", report.summary());
    }
    s += &format!("mode={}\nscale={}\nshift={}\nparameters={}\n", net.mode, net.scale, net.shift, net.parameter_count());
    for (layer, report) in &net.reports {
        s += &format!(
            "layer.{layer}.saturated={}\nlayer.{layer}.mean_abs_error={:.6}\n",
            report.saturated,
            report.mean_abs_error()
        );
    }
    if let Some(out) = &a.out {
        net.dequantized().save(out)?;
        s += &format!("written={}\n", out.display());
    }
    Ok(s)
}

fn eval(a: EvalArgs) -> anyhow::Result<String> {
    let spec = a.net.spec(a.quant.case.as_deref())?;
    let weights = load_weights(&a.net.weights).with_context(|| format!("reading {}", a.net.weights.display()))?;
    let mut data = load_mnist_test(&a.data.mnist).with_context(|| format!("reading {}", a.data.mnist.display()))?;
    if let Some(n) = a.limit {
        data = data.truncated(n);
    }
    let options = EvalOptions {
        engine: a.engine.parse::<Engine>()?,
        quant: a.quant.options(),
    };
    let modes = match &a.quant.mode {
        Some(m) => vec![m.parse::<QuantMode>()?],
        None => QuantMode::table_modes().to_vec(),
    };
    let mut s = String::new();
    for mode in modes {
        let r = evaluate(&spec, &weights, &data, mode, &options)?;
        if a.confusion {
            s += &r.to_table();
        } else {
            s += &format!("mode {}: accuracy {:.2}% ({}/{})\n", r.mode, 100.0 * r.accuracy(), r.correct, r.total);
        }
        s += &r.to_key_values();
    }
    Ok(s)
}

fn load_image(data: &DataArgs, index: usize) -> anyhow::Result<(Vec<u8>, u8)> {
    let ds = load_mnist_test(&data.mnist).with_context(|| format!("reading {}", data.mnist.display()))?;
    if index >= ds.len() {
        bail!(Error::Config(format!("image {index} out of range ({} images)", ds.len())));
    }
    Ok((ds.image(index).to_vec(), ds.label(index)))
}

fn image_for(spec: &NetworkSpec, data: &DataArgs, index: usize) -> anyhow::Result<(Vec<u8>, Option<u8>)> {
    let (c, h, w) = spec.input;
    if (c, h, w) == (1, 28, 28) {
        let (img, label) = load_image(data, index)?;
        return Ok((img, Some(label)));
    }
    // Other inputs get a deterministic ramp.
    Ok(((0..c * h * w).map(|i| ((i * 37 + index * 11) % 256) as u8).collect(), None))
}

fn run(a: RunArgs) -> anyhow::Result<String> {
    let net = a.quant.quantized(&a.net, "psi(5,2)")?;
    let (image, label) = image_for(&net.spec, &a.data, a.image)?;
    let policy = match a.policy {
        PolicyChoice::Reuse => DramPolicy::Reuse,
        PolicyChoice::NoReuse => DramPolicy::NoReuse,
    };
    let mut acc = Accelerator::new(&net)?.with_policy(policy);
    let mut last = None;
    for _ in 0..a.repeat.max(1) {
        last = Some(acc.infer(&image)?);
    }
    let inf = last.expect("at least one inference");
    let r = &inf.report;
    let total = r.total_clocks();
    let mut s = r.to_table();
    s += &format!(
        "total clocks {total} vs {REPORTED_CLOCKS} reported ({:+.2}%), {:.2} us, {:.0} frames/s at {} MHz\n",
        100.0 * (total as f64 / REPORTED_CLOCKS as f64 - 1.0),
        r.latency_us(a.clock_mhz),
        r.frames_per_second(a.clock_mhz),
        a.clock_mhz
    );
    s += &format!("mode={}\nimage={}\n", net.mode, a.image);
    if let Some(l) = label {
        s += &format!("label={l}\n");
    }
    s += &format!(
        "predicted={}\nlogits={}\n",
        argmax(&inf.logits),
        inf.logits.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
    );
    s += &r.to_key_values();
    s += &format!("reported_clocks={REPORTED_CLOCKS}\n");
    let d = acc.dram_access_report();
    s += &format!(
        "session.inferences={}\nsession.dram_reads={}\nsession.dram_writes={}\nsession.weight_reads={}\n",
        acc.inferences(),
        d.reads(),
        d.writes(),
        d.weight_reads
    );
    Ok(s)
}

fn design(spec: &str, width: u32, out_width: u32, lib: &GateLibrary) -> anyhow::Result<CostReport> {
    let (kind, n) = spec.split_once(':').unwrap_or((spec, "25"));
    let n: usize = n
        .parse()
        .map_err(|_| Error::Config(format!("bad operand count in `{spec}`")))?;
    if n == 0 {
        bail!(Error::Config(format!("`{spec}` needs at least one operand")));
    }
    Ok(match kind {
        "moa" => moa_cost_with(
            MoaShape {
                out_width: out_width.max(width + 1),
                ..MoaShape::exact(n, width)
            },
            lib,
        ),
        "tree" => adder_tree_cost(n, width, lib),
        "booth" => mac_baseline_cost(MacBaseline::BoothTree { weight_bits: 5 }, n, lib),
        "binary" => mac_baseline_cost(MacBaseline::BinaryWeight, n, lib),
        "shift1" => mac_baseline_cost(MacBaseline::Shift1Bit, n, lib),
        "psi52" => neural_element_cost(n, 5, 2, lib),
        "psi83" => neural_element_cost(n, 8, 3, lib),
        other => bail!(Error::Config(format!(
            "unknown design `{other}` (moa, tree, booth, binary, shift1, psi52, psi83)"
        ))),
    })
}

fn cost(a: CostArgs) -> anyhow::Result<String> {
    let lib = match &a.library {
        Some(p) => GateLibrary::from_key_values(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)?,
        None => GateLibrary::default(),
    };
    let reports = a
        .compare
        .iter()
        .map(|d| design(d, a.width, a.out_width, &lib))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let mut s = String::new();
    for r in &reports {
        s += &r.to_string();
    }
    for (i, r) in reports.iter().enumerate() {
        s += &format!("design.{i}.name={}\ndesign.{i}.gates={}\ndesign.{i}.path={}\n", r.name, r.total_gates(), r.critical_path);
    }
    for (i, other) in reports.iter().enumerate().skip(1) {
        let red = compare(&reports[0], other);
        s += &format!(
            "{} vs {}: path {:+.1}%, gates {:+.1}%\nreduction.{i}.path={:.4}\nreduction.{i}.gates={:.4}\n",
            a.compare[0], a.compare[i], -100.0 * red.path, -100.0 * red.gates, red.path, red.gates
        );
    }
    if a.compare.first().is_some_and(|d| d.starts_with("moa")) {
        let n = a.compare[0].split_once(':').map_or(Ok(25), |(_, n)| n.parse()).unwrap_or(25);
        let study = moa_study(n, a.width, a.out_width.max(a.width + 1), &lib);
        s += &format!(
            "same-cycle count path={} (vs tree {:+.1}%)\nsign extension area +{:.1}%\nsign_extension_overhead={:.4}\n",
            study.same_cycle.critical_path,
            -100.0 * study.same_cycle_vs_tree.path,
            100.0 * study.extension_overhead,
            study.extension_overhead
        );
    }
    if a.table {
        s += &format!("{:<44} {:>8} {:>8} {:>8} {:>6} {:>6} {:>8}\n", "neuron", "gates", "pub", "dev", "path", "pub", "dev");
        for row in comparison_table(&lib) {
            s += &format!(
                "{:<44} {:>8} {:>8} {:>+7.1}% {:>6} {:>6} {:>+7.1}%\n",
                row.report.name,
                row.report.total_gates(),
                row.published_gates,
                100.0 * row.gate_deviation(),
                row.report.critical_path,
                row.published_path,
                100.0 * row.path_deviation()
            );
        }
    }
    Ok(s)
}

fn trace(a: TraceArgs) -> anyhow::Result<String> {
    let net = a.quant.quantized(&a.net, "psi(5,2)")?;
    let (image, _) = image_for(&net.spec, &a.data, a.image)?;
    let mut acc = Accelerator::new(&net)?.with_trace(true);
    let inf = acc.infer(&image)?;
    let mut s = String::new();
    let lines = inf
        .trace
        .iter()
        .filter(|r| a.layer.as_deref().is_none_or(|l| r.layer == l))
        .take(a.max_clocks.unwrap_or(usize::MAX));
    for r in lines {
        s += &r.to_line();
        s.push('\n');
    }
    s += &first_element_reduction(&net, &image)?;
    s += &inf.report.to_key_values();
    Ok(s)
}

/// MOA(PSUM) reduction of filter 0, channel 0 of the first convolution at
/// the brightest window.
fn first_element_reduction(net: &QuantizedNetwork, image: &[u8]) -> anyhow::Result<String> {
    let Some((spec, weights)) = net.layers.iter().find_map(|l| match l {
        QuantLayer::Conv { spec, weights, .. } => Some((spec, weights)),
        _ => None,
    }) else {
        return Ok(String::new());
    };
    let bits = net.mode.bit_width().expect("integer mode");
    let book = Codebook::new(PsiConfig::new(bits, MAX_TERMS as u8)?);
    let k = spec.kernel;
    let (_, h, w) = net.spec.input;
    let pad = net.spec.input_pad;
    let pixel = |r: usize, c: usize| -> u8 {
        if r < pad || c < pad || r - pad >= h || c - pad >= w {
            0
        } else {
            image[(r - pad) * w + (c - pad)]
        }
    };
    let positions = (0..=(h + 2 * pad).saturating_sub(k)).flat_map(|r| (0..=(w + 2 * pad).saturating_sub(k)).map(move |c| (r, c)));
    let brightness = |&(r, c): &(usize, usize)| -> u32 {
        (0..k * k).map(|i| u32::from(pixel(r + i / k, c + i % k))).sum()
    };
    let (top, left) = positions.max_by_key(brightness).unwrap_or((0, 0));
    let partials = (0..25)
        .map(|lane| {
            if lane < k * k {
                let (r, c) = (top + lane / k, left + lane % k);
                Ok(mbs_multiply(pixel(r, c), &book.decompose(weights[lane])?))
            } else {
                Ok(mbs_multiply(0, &book.decompose(0)?))
            }
        })
        .collect::<dneuron::Result<Vec<_>>>()?;
    let (value, t) = moa_psum(&partials, net.datapath.psum)?;
    Ok(format!("moa_psum {} filter=0 channel=0 pos={top},{left} value={value}\n{}", spec.name, t.to_text()))
}

fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if let Some(err) = cause.downcast_ref::<Error>() {
            return match err {
                Error::Format { .. } | Error::Shape(_) => 3,
                Error::Contract(_) => 4,
                Error::Config(_) | Error::Domain(_) | Error::Io(_) => 2,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 2;
        }
    }
    4
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let out = match cli.command {
        Command::Quantize(a) => quantize(a),
        Command::Eval(a) => eval(a),
        Command::Run(a) => run(a),
        Command::Cost(a) => cost(a),
        Command::Trace(a) => {
            let dest = a.out.clone();
            trace(a).and_then(|s| match dest {
                Some(p) => {
                    fs::write(&p, s).with_context(|| format!("writing {}", p.display()))?;
                    Ok(format!("written={}\n", p.display()))
                }
                None => Ok(s),
            })
        }
    };
    match out {
        Ok(s) => {
            let mut stdout = std::io::stdout().lock();
            let _ = stdout.write_all(s.as_bytes());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
