//! Dataset accuracy evaluation.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::accelsim::Accelerator;
use crate::error::{Error, Result};

use super::dnw::NetworkWeights;
use super::mnist::Dataset;
use super::quant::{quantize_network, QuantMode, QuantOptions};
use super::reference::{argmax, reference_float_inference, reference_int_inference, FloatNetwork};
use super::spec::NetworkSpec;

/// Which implementation classifies the images.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Engine {
    /// Plain forward pass (float or integer oracle).
    #[default]
    Reference,
    /// The bit-level accelerator model.
    Accelerator,
}

impl std::str::FromStr for Engine {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ref" | "reference" => Ok(Engine::Reference),
            "accel" | "accelerator" => Ok(Engine::Accelerator),
            other => Err(Error::Config(format!("unknown engine `{other}`"))),
        }
    }
}

/// Top-1 accuracy with a confusion matrix (`confusion[label][predicted]`).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EvalReport {
    pub mode: String,
    pub total: u64,
    pub correct: u64,
    pub confusion: Vec<Vec<u64>>,
    /// Hidden values that left the accumulator range (integer modes).
    pub wide_values: u64,
}

impl EvalReport {
    pub fn empty(mode: impl Into<String>, classes: usize) -> Self {
        EvalReport {
            mode: mode.into(),
            total: 0,
            correct: 0,
            confusion: vec![vec![0; classes]; classes],
            wide_values: 0,
        }
    }

    pub fn record(&mut self, label: usize, predicted: usize) {
        self.total += 1;
        if label == predicted {
            self.correct += 1;
        }
        self.confusion[label][predicted] += 1;
    }

    /// Adds the counts of `other`; associative and commutative.
    pub fn merge(mut self, other: EvalReport) -> EvalReport {
        self.total += other.total;
        self.correct += other.correct;
        self.wide_values += other.wide_values;
        for (a, b) in self.confusion.iter_mut().zip(other.confusion) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        self
    }

    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "mode {}: {}/{} correct, accuracy {:.2}%",
            self.mode,
            self.correct,
            self.total,
            100.0 * self.accuracy()
        );
        let _ = write!(s, "label\\pred");
        for p in 0..self.confusion.len() {
            let _ = write!(s, " {p:>5}");
        }
        s.push('\n');
        for (l, row) in self.confusion.iter().enumerate() {
            let _ = write!(s, "{l:>10}");
            for v in row {
                let _ = write!(s, " {v:>5}");
            }
            s.push('\n');
        }
        s
    }

    pub fn to_key_values(&self) -> String {
        format!(
            "mode={}\nimages={}\ncorrect={}\naccuracy={:.4}\nwide_values={}\n",
            self.mode,
            self.total,
            self.correct,
            100.0 * self.accuracy(),
            self.wide_values
        )
    }
}

/// Classifies every image with `classify` in parallel and tallies the result.
pub fn evaluate_with<S, F>(dataset: &Dataset, mode: &str, classes: usize, init: impl Fn() -> S + Sync + Send, classify: F) -> Result<EvalReport>
where
    F: Fn(&mut S, &[u8]) -> Result<(usize, u64)> + Sync + Send,
{
    (0..dataset.len())
        .into_par_iter()
        .map_init(&init, |state, i| {
            let (pred, wide) = classify(state, dataset.image(i))?;
            let mut r = EvalReport::empty(mode, classes);
            r.record(dataset.label(i) as usize, pred);
            r.wide_values = wide;
            Ok(r)
        })
        .try_reduce(|| EvalReport::empty(mode, classes), |a, b| Ok(a.merge(b)))
}

/// Evaluation settings beyond the mode.
#[derive(Clone, Copy, Debug, Default)]
pub struct EvalOptions {
    pub engine: Engine,
    pub quant: QuantOptions,
}

/// Top-1 accuracy of `weights` on `dataset` under `mode`.
pub fn evaluate(
    spec: &NetworkSpec,
    weights: &NetworkWeights,
    dataset: &Dataset,
    mode: QuantMode,
    options: &EvalOptions,
) -> Result<EvalReport> {
    let classes = spec.output_dim()?;
    let label = mode.to_string();
    if let Some(&l) = dataset.labels().iter().find(|&&l| l as usize >= classes) {
        return Err(Error::Domain(format!("label {l} exceeds {classes} classes")));
    }
    match (mode, options.engine) {
        (QuantMode::Fp32, Engine::Reference) => {
            let net = FloatNetwork::<f32>::new(spec, weights)?;
            evaluate_with(dataset, &label, classes, || (), |_, img| {
                Ok((argmax(&reference_float_inference(&net, img)?), 0))
            })
        }
        (QuantMode::Fp32, Engine::Accelerator) => {
            Err(Error::Config("the accelerator runs integer modes only".into()))
        }
        (_, Engine::Reference) => {
            let net = quantize_network(spec, weights, mode, options.quant)?;
            evaluate_with(dataset, &label, classes, || (), |_, img| {
                let r = reference_int_inference(&net, img)?;
                Ok((argmax(&r.logits), r.wide_values as u64))
            })
        }
        (_, Engine::Accelerator) => {
            let net = quantize_network(spec, weights, mode, options.quant)?;
            let accel = Accelerator::new(&net)?;
            evaluate_with(dataset, &label, classes, || accel.clone(), |acc, img| {
                let r = acc.infer(img)?;
                Ok((argmax(&r.logits), r.report.totals().width_events))
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn merge_is_additive() {
        let mut a = EvalReport::empty("x", 3);
        a.record(0, 0);
        let mut b = EvalReport::empty("x", 3);
        b.record(2, 1);
        let m = a.clone().merge(b.clone());
        assert_eq!(m, b.merge(a));
        assert_eq!(m.total, 2);
        assert_eq!(m.correct, 1);
        assert_eq!(m.accuracy(), 0.5);
        assert_eq!(m.confusion[2][1], 1);
    }
}
