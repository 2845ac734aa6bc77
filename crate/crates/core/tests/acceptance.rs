//! One PASS/FAIL/SKIP line per acceptance criterion. Runs without the test
//! harness so the lines always reach the output.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dneuron::accelsim::{
    run_conv_layer, schedule_clocks, Accelerator, Activation, AcceleratorState, ConvProgram,
    DramPolicy, FilterCase, LayerKind, StepKind,
};
use dneuron::bitcore::{carry_save_sum, mbs_multiply, sign_extension_correction, DatapathConfig, MoaWidths};
use dneuron::hwcost::{comparison_table, moa_study, GateLibrary};
use dneuron::netrun::{
    evaluate, load_mnist_test, load_weights, quantize_network, reference_int_inference, Dataset, EvalOptions,
    LayerWeights, NetworkSpec, NetworkWeights, QuantMode, QuantOptions, WeightKind,
};
use dneuron::psiq::{max_relative_error, ratio_to_f64, Codebook, PsiConfig, PsiWeight};
use dneuron::FmapU8;

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

type Check = fn() -> Outcome;

fn main() -> ExitCode {
    let checks: [(&str, Check); 7] = [
        ("decomposition error bounds", decomposition_bounds),
        ("sign-extension correction lemma", num_p_lemma),
        ("datapath equals integer convolution", golden_model),
        ("accuracy table on MNIST", accuracy_table),
        ("cycle model", cycle_model),
        ("cost model", cost_model),
        ("dataflow counters", dataflow_counters),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        let t = Instant::now();
        let outcome = check();
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Outcome::Pass(d) => println!("PASS {name} ({secs:.1}s): {d}"),
            Outcome::Skip(d) => println!("SKIP {name}: {d}"),
            Outcome::Fail(d) => {
                failed += 1;
                println!("FAIL {name} ({secs:.1}s): {d}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

/// Worst relative error from a brute-force enumeration of every sum of up
/// to `terms` signed powers of two inside the symmetric range.
fn brute_force_worst(bits: u32, terms: usize) -> Ratio<i64> {
    let limit = (1i64 << (bits - 1)) - 1;
    let mut values = vec![0i64];
    for _ in 0..terms {
        let mut next = values.clone();
        for &v in &values {
            for s in 0..bits {
                next.push(v + (1 << s));
                next.push(v - (1 << s));
            }
        }
        next.sort_unstable();
        next.dedup();
        values = next;
    }
    values.retain(|v| v.abs() <= limit);
    let mut worst = Ratio::from_integer(0);
    for w in (-limit..=limit).filter(|&w| w != 0) {
        let d = values.iter().map(|&v| (v - w).abs()).min().unwrap();
        worst = worst.max(Ratio::new(d, w.abs()));
    }
    worst
}

fn decomposition_bounds() -> Outcome {
    let t = Instant::now();
    let e52 = max_relative_error(5, 2).unwrap();
    let e83 = max_relative_error(8, 3).unwrap();
    let elapsed = t.elapsed();
    let o52 = brute_force_worst(5, 2);
    let o83 = brute_force_worst(8, 3);
    let ok = e52 == o52
        && e83 == o83
        && ratio_to_f64(e52) <= 0.095
        && ratio_to_f64(e83) <= 0.03
        && elapsed < Duration::from_secs(1);
    verdict(
        ok,
        format!(
            "(5,2) max {e52} = {:.4} (oracle {o52}), (8,3) max {e83} = {:.4} (oracle {o83}), scan {:.1} ms",
            ratio_to_f64(e52),
            ratio_to_f64(e83),
            elapsed.as_secs_f64() * 1e3
        ),
    )
}

/// Calls `f` on every multiset of `len` values from `lo..=hi`.
fn multisets(lo: i64, hi: i64, len: usize, f: &mut impl FnMut(&[i64])) {
    fn go(lo: i64, hi: i64, len: usize, cur: &mut Vec<i64>, f: &mut impl FnMut(&[i64])) {
        if cur.len() == len {
            f(cur);
            return;
        }
        let start = cur.last().copied().unwrap_or(lo);
        for v in start..=hi {
            cur.push(v);
            go(lo, hi, len, cur, f);
            cur.pop();
        }
    }
    go(lo, hi, len, &mut Vec::with_capacity(len), f);
}

fn num_p_lemma() -> Outcome {
    let t = Instant::now();
    let mut sets = 0u64;
    let mut mismatches = 0u64;
    for k in 2..=5u32 {
        let out = k + 3;
        let modulus = 1i64 << out;
        let low_mask = (1i64 << k) - 1;
        let (lo, hi) = (-(1i64 << (k - 1)), (1i64 << (k - 1)) - 1);
        for len in 1..=6 {
            multisets(lo, hi, len, &mut |ops| {
                sets += 1;
                let extended = ops.iter().sum::<i64>().rem_euclid(modulus);
                let raw: i64 = ops.iter().map(|v| v & low_mask).sum();
                let neg = ops.iter().filter(|&&v| v < 0).count() as u32;
                let corrected = (raw + sign_extension_correction(neg, k, out) as i64).rem_euclid(modulus);
                let csa = carry_save_sum(ops, MoaWidths::new(k, out), None);
                if extended != corrected || csa.value != ops.iter().sum::<i64>() || csa.events != 0 {
                    mismatches += 1;
                }
            });
        }
    }
    let exhaustive = t.elapsed();

    let mut rng = ChaCha8Rng::seed_from_u64(75);
    let mut trials = 0u64;
    for (widths, bits) in [(MoaWidths::new(12, 18), 5u8), (MoaWidths::new(16, 22), 8u8)] {
        let book = Codebook::new(PsiConfig::new(bits, 3).unwrap());
        let values = book.values().to_vec();
        for _ in 0..10_000 {
            let partials: Vec<i64> = (0..25)
                .flat_map(|_| {
                    let w = book.decompose(values[rng.gen_range(0..values.len())]).unwrap();
                    *mbs_multiply(rng.gen(), &w).products()
                })
                .collect();
            let plain: i64 = partials.iter().sum();
            let csa = carry_save_sum(&partials, widths, None);
            trials += 1;
            if csa.value != plain || csa.events != 0 {
                mismatches += 1;
            }
        }
    }
    let elapsed = t.elapsed();
    verdict(
        mismatches == 0 && elapsed < Duration::from_secs(60),
        format!(
            "{sets} multisets of <=6 operands at 2..5 bits ({:.1}s), {trials} random 75-operand sums at (12,18) and (16,22), {mismatches} mismatches, {:.1}s total",
            exhaustive.as_secs_f64(),
            elapsed.as_secs_f64()
        ),
    )
}

fn random_psi(rng: &mut ChaCha8Rng, book: &Codebook, n: usize) -> Vec<PsiWeight> {
    let values = book.values();
    (0..n)
        .map(|_| {
            let v = if rng.gen_bool(0.2) { 0 } else { values[rng.gen_range(0..values.len())] };
            book.decompose(v).unwrap()
        })
        .collect()
}

/// Direct convolution with ReLU, right shift and 8-bit saturation.
fn oracle_conv(x: &FmapU8, w: &[i64], bias: &[i64], filters: usize, k: usize, shift: u32) -> Vec<i64> {
    let (c, h, wd) = x.shape();
    let (oh, ow) = (h - k + 1, wd - k + 1);
    let mut out = Vec::with_capacity(filters * oh * ow);
    for f in 0..filters {
        for r in 0..oh {
            for col in 0..ow {
                let mut acc = bias[f];
                for ch in 0..c {
                    for i in 0..k {
                        for j in 0..k {
                            acc += i64::from(x.get(ch, r + i, col + j)) * w[((f * c + ch) * k + i) * k + j];
                        }
                    }
                }
                out.push((acc.max(0) >> shift).min(255));
            }
        }
    }
    out
}

fn golden_model() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut detail = Vec::new();
    let mut mismatches = 0;
    for case in FilterCase::ALL {
        let k = case.kernel();
        let bits = if rng.gen_bool(0.5) { 5 } else { 8 };
        let book = Codebook::new(PsiConfig::new(bits, 3).unwrap());
        let mut bad = 0;
        for _ in 0..100 {
            let channels = rng.gen_range(1..=case.max_channels());
            let filters = rng.gen_range(1..=2 * case.filters_per_clock() + 1);
            let (h, w) = (k + rng.gen_range(0..4), k + rng.gen_range(0..4));
            let pixels = (0..channels * h * w).map(|_| rng.gen()).collect();
            let x = FmapU8::from_vec(channels, h, w, pixels).unwrap();
            let weights = random_psi(&mut rng, &book, filters * channels * k * k);
            let bias: Vec<i64> = (0..filters).map(|_| rng.gen_range(-40_000..40_000)).collect();
            let program = ConvProgram {
                name: "t".into(),
                filters,
                channels,
                kernel: k,
                weights: weights.clone(),
                bias: bias.clone(),
            };
            let shift = 4;
            let (out, _) = run_conv_layer(
                &program,
                &x,
                Some(case),
                Activation::Truncate { shift },
                &DatapathConfig::WIDE,
                None,
                0,
            )
            .unwrap();
            let w: Vec<i64> = weights.iter().map(|p| i64::from(p.reconstruct())).collect();
            if out.as_slice() != oracle_conv(&x, &w, &bias, filters, k, shift).as_slice() {
                bad += 1;
            }
        }
        mismatches += bad;
        detail.push(format!("{case}: 100 tensors, {bad} mismatches"));
    }
    verdict(mismatches == 0, detail.join("; "))
}

fn data_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

fn full_weights() -> Option<(NetworkWeights, Dataset)> {
    let wpath = std::env::var_os("DN_WEIGHTS").map_or(data_root().join("lenet5.dnw"), PathBuf::from);
    let dpath = std::env::var_os("DN_MNIST_DIR").map_or(data_root().join("mnist"), PathBuf::from);
    let w = load_weights(wpath).ok()?;
    let d = load_mnist_test(dpath).ok()?;
    Some((w, d))
}

fn accuracy_table() -> Outcome {
    let Some((weights, data)) = full_weights() else {
        return Outcome::Skip("no trained LeNet-5 weights or MNIST test set under data/ (set DN_WEIGHTS / DN_MNIST_DIR)".into());
    };
    let spec = NetworkSpec::lenet5();
    let targets = [99.10, 99.10, 98.95, 98.92, 99.10];
    let mut acc = Vec::new();
    let mut ok = data.len() == 10_000;
    let mut detail = Vec::new();
    for (mode, target) in QuantMode::table_modes().into_iter().zip(targets) {
        let r = evaluate(&spec, &weights, &data, mode, &EvalOptions::default()).unwrap();
        let a = 100.0 * r.accuracy();
        let inside = (a - target).abs() <= 0.30;
        ok &= inside;
        acc.push(a);
        detail.push(format!("{mode} {a:.2}% (target {target:.2}{})", if inside { "" } else { ", outside band" }));
    }
    let ordered = acc[3] <= acc[2] && acc[2] <= acc[1];
    ok &= ordered;
    detail.push(format!("ordering psi(5,2) <= int5 <= int8 {}", if ordered { "holds" } else { "violated" }));

    // The accelerator must agree with the integer oracle on a sample.
    let mut disagreements = 0;
    let mut checked = 0;
    for (mode, n) in [("psi(5,2)", 600), ("psi(8,3)", 150), ("int5", 150)] {
        let q = quantize_network(&spec, &weights, mode.parse().unwrap(), QuantOptions::default()).unwrap();
        let mut accel = Accelerator::new(&q).unwrap();
        for i in 0..n.min(data.len()) {
            checked += 1;
            if accel.infer(data.image(i)).unwrap().logits != reference_int_inference(&q, data.image(i)).unwrap().logits {
                disagreements += 1;
            }
        }
    }
    ok &= disagreements == 0;
    detail.push(format!("accelerator logits equal the integer oracle on {checked} inferences ({disagreements} differ)"));
    verdict(ok, detail.join(", "))
}

fn random_weights(spec: &NetworkSpec, seed: u64) -> NetworkWeights {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    NetworkWeights {
        layers: spec
            .weight_dims()
            .into_iter()
            .map(|(name, dims, nb)| {
                let n: u32 = dims.iter().product();
                let kind = if dims.len() == 4 { WeightKind::Conv } else { WeightKind::Fc };
                LayerWeights {
                    name,
                    kind,
                    dims,
                    weights: (0..n).map(|_| rng.gen_range(-0.3..0.3)).collect(),
                    bias: (0..nb).map(|_| rng.gen_range(-0.05..0.05)).collect(),
                }
            })
            .collect(),
    }
}

fn lenet_accelerator(policy: DramPolicy) -> (Accelerator, Vec<u8>) {
    let spec = NetworkSpec::lenet5();
    let (weights, image) = match full_weights() {
        Some((w, d)) => (w, d.image(0).to_vec()),
        None => (random_weights(&spec, 5), (0..784).map(|i| (i * 7 % 256) as u8).collect()),
    };
    let q = quantize_network(&spec, &weights, QuantMode::Psi(PsiConfig::five_two()), QuantOptions::default()).unwrap();
    (Accelerator::new(&q).unwrap().with_policy(policy), image)
}

fn cycle_model() -> Outcome {
    let (mut accel, image) = lenet_accelerator(DramPolicy::Reuse);
    let report = accel.infer(&image).unwrap().report;
    let schedule = schedule_clocks(&NetworkSpec::lenet5()).unwrap();
    let scheduled = |name: &str| schedule.iter().find(|(n, _)| n == name).map(|(_, c)| *c);
    let fc_neurons = [("fc1", 120), ("fc2", 84), ("fc3", 10)];
    let mut ok = true;
    let mut notes = Vec::new();
    for l in &report.layers {
        let c = &l.counters;
        match l.kind {
            LayerKind::Conv => {
                let case = l.case.unwrap();
                // One clock per output position, per filter group and pass.
                ok &= c.clocks == c.positions * l.passes && scheduled(&l.name) == Some(c.clocks);
                notes.push(format!("{} {case}: {} clocks = {} positions x {} pass", l.name, c.clocks, c.positions, l.passes));
            }
            LayerKind::Fc => {
                let neurons = fc_neurons.iter().find(|(n, _)| *n == l.name).map_or(0, |(_, v)| *v);
                ok &= c.clocks == 2 * neurons && scheduled(&l.name) == Some(c.clocks);
                notes.push(format!("{} {} clocks = 2 x {neurons} neurons", l.name, c.clocks));
            }
            LayerKind::Pool => ok &= c.clocks == 0,
        }
    }
    let expected: u64 = schedule_clocks(&NetworkSpec::lenet5()).unwrap().iter().map(|(_, c)| c).sum();
    let total = report.total_clocks();
    ok &= total == expected;
    let conv1_all_filters = 28 * 28;
    let conv2_one_filter = 10 * 10 * 16;
    notes.push(format!(
        "total {total} vs 2384 reported ({:+.2}%); 2384 = {conv1_all_filters} (conv1, six filters per clock) + {conv2_one_filter} (conv2, one filter per clock) with FC uncounted; {:.0} frames/s at 25 MHz vs 19k reported",
        100.0 * (total as f64 / 2384.0 - 1.0),
        report.frames_per_second(25.0)
    ));
    ok &= conv1_all_filters + conv2_one_filter == 2384;
    verdict(ok, notes.join("; "))
}

fn cost_model() -> Outcome {
    let lib = GateLibrary::default();
    let s = moa_study(75, 12, 18, &lib);
    let path = 100.0 * s.vs_tree.path;
    let gates = 100.0 * s.vs_tree.gates;
    let ext = 100.0 * s.extension_overhead;
    let ok = (path - 42.0).abs() <= 10.0 && (gates - 36.0).abs() <= 10.0 && (ext - 21.0).abs() <= 10.0;
    let table: Vec<String> = comparison_table(&lib)
        .iter()
        .map(|r| {
            format!(
                "{} {} gates ({:+.0}% vs {}), path {} ({:+.0}% vs {})",
                r.report.name,
                r.report.total_gates(),
                100.0 * r.gate_deviation(),
                r.published_gates,
                r.report.critical_path,
                100.0 * r.path_deviation(),
                r.published_path
            )
        })
        .collect();
    verdict(
        ok,
        format!(
            "MOA(75) vs CLA tree: path -{path:.1}% (target 42 +/- 10), gates -{gates:.1}% (target 36 +/- 10); full sign extension +{ext:.1}% area (target 21 +/- 10); counting negatives in the adder's own clock would cut the path reduction to {:.1}%; reported only: {}",
            100.0 * s.same_cycle_vs_tree.path,
            table.join("; ")
        ),
    )
}

fn dataflow_counters() -> Outcome {
    let mut ok = true;
    let mut steps = 0u64;
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..20 {
        let k = [5, 7, 9][rng.gen_range(0..3)];
        let (h, w) = (k + rng.gen_range(0..6), k + rng.gen_range(0..6));
        let x = FmapU8::from_vec(2, h, w, (0..2 * h * w).map(|_| rng.gen()).collect()).unwrap();
        let mut st = AcceleratorState::new(x, k).unwrap();
        while st.has_next() {
            let before = *st.counters();
            let kind = st.sweep_step().unwrap();
            let after = *st.counters();
            let d = |a: u64, b: u64| a - b;
            let (cols, reloads, rots, resets) = (
                d(after.xbus_column_updates, before.xbus_column_updates),
                d(after.xbus_full_reloads, before.xbus_full_reloads),
                d(after.wbank_rotations, before.wbank_rotations),
                d(after.wbank_resets, before.wbank_resets),
            );
            ok &= match kind {
                StepKind::MidRow => (cols, reloads, rots, resets) == (1, 0, 1, 0),
                StepKind::RowStart => (cols, reloads, rots) == (0, 1, 0),
            };
            steps += 1;
        }
    }

    let (mut reuse, image) = lenet_accelerator(DramPolicy::Reuse);
    let (mut no_reuse, _) = lenet_accelerator(DramPolicy::NoReuse);
    for _ in 0..2 {
        reuse.infer(&image).unwrap();
        no_reuse.infer(&image).unwrap();
    }
    let (a, b) = (reuse.dram_access_report(), no_reuse.dram_access_report());
    ok &= a.intermediate_writes == 0 && a.intermediate_reads == 0;
    ok &= a.weight_reads == reuse.weight_words() && b.weight_reads == 2 * no_reuse.weight_words();
    ok &= b.total() > a.total();
    let t = reuse.session_counters();
    ok &= t.xbus_column_updates == t.wbank_rotations;
    verdict(
        ok,
        format!(
            "{steps} sweep steps each with exactly one column update and rotation (mid-row) or one full reload (row start); 2 inferences: reuse {} DRAM words with 0 intermediate writes, no-reuse {} words",
            a.total(),
            b.total()
        ),
    )
}
