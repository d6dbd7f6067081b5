//! One-step-ahead weather forecasting with a single-layer LSTM.
//!
//! One model is trained per weather attribute across all sub-regions: each
//! sub-region contributes the sequence of its yearly values before a target
//! year, and the model learns to predict the target year's value. Values are
//! min-max normalized with bounds taken from the training pairs; the bounds
//! travel with the model so [`SequenceModel::predict_next`] works on raw units.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{SubRegion, SOIL_ATTRIBUTES, WEATHER_ATTRIBUTES};

#[derive(Debug, Error, PartialEq)]
pub enum ForecastError {
    #[error("unknown attribute {0:?}")]
    UnknownAttribute(String),
    #[error("attribute {0:?} is static soil data and is never forecast")]
    StaticAttribute(String),
    #[error("data gap: sub-region {sub_region} has no value for {year}")]
    DataGap { sub_region: String, year: i32 },
    #[error("no training pairs")]
    Empty,
    #[error("sequences have unequal lengths ({0} vs {1})")]
    RaggedSequences(usize, usize),
    #[error("training diverged: non-finite loss at epoch {epoch}")]
    Divergence { epoch: usize },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("metric undefined: {0}")]
    Metric(String),
    #[error("invalid model document: {0}")]
    Document(String),
}

/// Resolves a weather attribute name to its column index.
pub fn weather_attribute_index(name: &str) -> Result<usize, ForecastError> {
    if let Some(i) = WEATHER_ATTRIBUTES.iter().position(|a| *a == name) {
        return Ok(i);
    }
    if SOIL_ATTRIBUTES.contains(&name) {
        return Err(ForecastError::StaticAttribute(name.to_string()));
    }
    Err(ForecastError::UnknownAttribute(name.to_string()))
}

/// Raw (un-normalized) history and target for one sub-region.
#[derive(Debug, Clone, PartialEq)]
pub struct SequencePair {
    pub sub_region: String,
    pub inputs: Vec<f64>,
    pub target: f64,
}

/// Builds one (history, target) pair per sub-region.
///
/// The history runs from the sub-region's first year through
/// `target_year - 1`; its length is whatever the data provides.
pub fn make_sequences<'a>(
    sub_regions: impl IntoIterator<Item = &'a SubRegion>,
    attribute: &str,
    target_year: i32,
) -> Result<Vec<SequencePair>, ForecastError> {
    let attr = weather_attribute_index(attribute)?;
    let mut pairs = Vec::new();
    for region in sub_regions {
        let first = match region.weather.keys().next() {
            Some(&y) if y < target_year => y,
            _ => {
                return Err(ForecastError::DataGap {
                    sub_region: region.id.clone(),
                    year: target_year - 1,
                })
            }
        };
        let mut inputs = Vec::with_capacity((target_year - first) as usize);
        for year in first..target_year {
            let values = region.weather.get(&year).ok_or_else(|| ForecastError::DataGap {
                sub_region: region.id.clone(),
                year,
            })?;
            inputs.push(values[attr]);
        }
        let target = region
            .weather
            .get(&target_year)
            .ok_or_else(|| ForecastError::DataGap {
                sub_region: region.id.clone(),
                year: target_year,
            })?[attr];
        pairs.push(SequencePair {
            sub_region: region.id.clone(),
            inputs,
            target,
        });
    }
    Ok(pairs)
}

/// The full history of one attribute, used to predict the year after it ends.
pub fn history(region: &SubRegion, attribute: usize) -> Vec<f64> {
    region.weather.values().map(|v| v[attribute]).collect()
}

/// Min-max scaling to [0, 1]. A degenerate range scales by 1 (shift only).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinMax {
    pub lo: f64,
    pub hi: f64,
}

impl MinMax {
    pub fn fit<'a>(values: impl IntoIterator<Item = &'a f64>) -> Self {
        let (lo, hi) = values
            .into_iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        Self { lo, hi }
    }

    fn scale(&self) -> f64 {
        let span = self.hi - self.lo;
        if span > 0.0 {
            span
        } else {
            1.0
        }
    }

    pub fn normalize(&self, v: f64) -> f64 {
        (v - self.lo) / self.scale()
    }

    pub fn denormalize(&self, v: f64) -> f64 {
        self.lo + v * self.scale()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub hidden_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden_size: 16,
            epochs: 200,
            learning_rate: 0.01,
            seed: 17,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ForecastError> {
        if self.hidden_size == 0 {
            return Err(ForecastError::Config("hidden_size must be >= 1".into()));
        }
        if self.epochs == 0 {
            return Err(ForecastError::Config("epochs must be >= 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(ForecastError::Config("learning_rate must be finite and >= 0".into()));
        }
        Ok(())
    }
}

// Gate order inside the parameter vector.
const INPUT: usize = 0;
const FORGET: usize = 1;
const OUTPUT: usize = 2;
const CANDIDATE: usize = 3;
const GATE_NAMES: [&str; 4] = ["input", "forget", "output", "candidate"];

/// Offsets into the flat parameter vector.
///
/// Per gate: input weights (H), recurrent weights (H×H, row-major), bias (H).
/// Then the readout weights (H) and readout bias (1).
#[derive(Debug, Clone, Copy)]
struct Layout {
    h: usize,
}

impl Layout {
    fn gate_block(&self) -> usize {
        self.h * self.h + 2 * self.h
    }
    fn w_x(&self, gate: usize) -> usize {
        gate * self.gate_block()
    }
    fn w_h(&self, gate: usize) -> usize {
        self.w_x(gate) + self.h
    }
    fn bias(&self, gate: usize) -> usize {
        self.w_h(gate) + self.h * self.h
    }
    fn w_out(&self) -> usize {
        4 * self.gate_block()
    }
    fn b_out(&self) -> usize {
        self.w_out() + self.h
    }
    fn len(&self) -> usize {
        self.b_out() + 1
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

struct StepCache {
    x: f64,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    gates: [Vec<f64>; 4],
    tanh_c: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceModel {
    hidden_size: usize,
    params: Vec<f64>,
    bounds: MinMax,
}

impl SequenceModel {
    /// Uniform(-0.1, 0.1) weights, forget-gate bias 1, identity bounds.
    pub fn init(hidden_size: usize, seed: u64) -> Self {
        let layout = Layout { h: hidden_size };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params: Vec<f64> = (0..layout.len()).map(|_| rng.random_range(-0.1..0.1)).collect();
        let fb = layout.bias(FORGET);
        params[fb..fb + hidden_size].fill(1.0);
        Self {
            hidden_size,
            params,
            bounds: MinMax { lo: 0.0, hi: 1.0 },
        }
    }

    /// A model whose every parameter is zero except the readout bias.
    pub fn zeroed(hidden_size: usize, readout_bias: f64, bounds: MinMax) -> Self {
        let layout = Layout { h: hidden_size };
        let mut params = vec![0.0; layout.len()];
        params[layout.b_out()] = readout_bias;
        Self {
            hidden_size,
            params,
            bounds,
        }
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden_size
    }

    pub fn bounds(&self) -> MinMax {
        self.bounds
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn layout(&self) -> Layout {
        Layout { h: self.hidden_size }
    }

    fn run(&self, inputs: &[f64], mut cache: Option<&mut Vec<StepCache>>) -> (f64, Vec<f64>) {
        let l = self.layout();
        let h = self.hidden_size;
        let p = &self.params;
        let mut hidden = vec![0.0; h];
        let mut cell = vec![0.0; h];
        for &x in inputs {
            let mut gates: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; h]);
            for (g, out) in gates.iter_mut().enumerate() {
                let (wx, wh, b) = (l.w_x(g), l.w_h(g), l.bias(g));
                for r in 0..h {
                    let row = &p[wh + r * h..wh + (r + 1) * h];
                    let rec: f64 = row.iter().zip(&hidden).map(|(w, hv)| w * hv).sum();
                    let a = p[wx + r] * x + rec + p[b + r];
                    out[r] = if g == CANDIDATE { a.tanh() } else { sigmoid(a) };
                }
            }
            let new_cell: Vec<f64> = (0..h)
                .map(|r| gates[FORGET][r] * cell[r] + gates[INPUT][r] * gates[CANDIDATE][r])
                .collect();
            let tanh_c: Vec<f64> = new_cell.iter().map(|c| c.tanh()).collect();
            let new_hidden: Vec<f64> = (0..h).map(|r| gates[OUTPUT][r] * tanh_c[r]).collect();
            if let Some(cache) = cache.as_deref_mut() {
                cache.push(StepCache {
                    x,
                    h_prev: hidden.clone(),
                    c_prev: cell.clone(),
                    gates,
                    tanh_c,
                });
            }
            hidden = new_hidden;
            cell = new_cell;
        }
        let out = p[l.b_out()] + (0..h).map(|r| p[l.w_out() + r] * hidden[r]).sum::<f64>();
        (out, hidden)
    }

    /// Output in normalized units for an already-normalized sequence.
    pub fn forward_normalized(&self, inputs: &[f64]) -> f64 {
        self.run(inputs, None).0
    }

    /// Mean squared error over normalized (sequence, target) pairs.
    pub fn loss(&self, data: &[(Vec<f64>, f64)]) -> f64 {
        let n = data.len().max(1) as f64;
        data.iter()
            .map(|(x, t)| (self.forward_normalized(x) - t).powi(2))
            .sum::<f64>()
            / n
    }

    /// Mean squared error and its gradient with respect to every parameter,
    /// by backpropagation through time.
    pub fn loss_and_gradient(&self, data: &[(Vec<f64>, f64)]) -> (f64, Vec<f64>) {
        let l = self.layout();
        let h = self.hidden_size;
        let p = &self.params;
        let n = data.len().max(1) as f64;
        let mut grad = vec![0.0; p.len()];
        let mut loss = 0.0;
        let mut cache = Vec::new();

        for (inputs, target) in data {
            cache.clear();
            let (y, h_last) = self.run(inputs, Some(&mut cache));
            let err = y - target;
            loss += err * err;
            let dy = 2.0 * err / n;

            grad[l.b_out()] += dy;
            let mut dh: Vec<f64> = (0..h).map(|r| dy * p[l.w_out() + r]).collect();
            for r in 0..h {
                grad[l.w_out() + r] += dy * h_last[r];
            }
            let mut dc = vec![0.0; h];

            for step in cache.iter().rev() {
                let [gi, gf, go, gg] = &step.gates;
                let mut da: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; h]);
                for r in 0..h {
                    let d_out = dh[r] * step.tanh_c[r];
                    dc[r] += dh[r] * go[r] * (1.0 - step.tanh_c[r] * step.tanh_c[r]);
                    let d_in = dc[r] * gg[r];
                    let d_cand = dc[r] * gi[r];
                    let d_forget = dc[r] * step.c_prev[r];
                    da[INPUT][r] = d_in * gi[r] * (1.0 - gi[r]);
                    da[FORGET][r] = d_forget * gf[r] * (1.0 - gf[r]);
                    da[OUTPUT][r] = d_out * go[r] * (1.0 - go[r]);
                    da[CANDIDATE][r] = d_cand * (1.0 - gg[r] * gg[r]);
                    dc[r] *= gf[r];
                }
                let mut dh_prev = vec![0.0; h];
                for (g, da_g) in da.iter().enumerate() {
                    let (wx, wh, b) = (l.w_x(g), l.w_h(g), l.bias(g));
                    for r in 0..h {
                        let d = da_g[r];
                        grad[wx + r] += d * step.x;
                        grad[b + r] += d;
                        for c in 0..h {
                            grad[wh + r * h + c] += d * step.h_prev[c];
                            dh_prev[c] += p[wh + r * h + c] * d;
                        }
                    }
                }
                dh = dh_prev;
            }
        }
        (loss / n, grad)
    }

    /// Predicts the value following `sequence`, in the units of the data.
    pub fn predict_next(&self, sequence: &[f64]) -> f64 {
        let normalized: Vec<f64> = sequence.iter().map(|&v| self.bounds.normalize(v)).collect();
        self.bounds.denormalize(self.forward_normalized(&normalized))
    }

    pub fn to_document(&self) -> ModelDocument {
        let l = self.layout();
        let h = self.hidden_size;
        let mut arrays = BTreeMap::new();
        for (g, name) in GATE_NAMES.iter().enumerate() {
            arrays.insert(format!("{name}.w_x"), self.params[l.w_x(g)..l.w_x(g) + h].to_vec());
            arrays.insert(format!("{name}.w_h"), self.params[l.w_h(g)..l.w_h(g) + h * h].to_vec());
            arrays.insert(format!("{name}.bias"), self.params[l.bias(g)..l.bias(g) + h].to_vec());
        }
        arrays.insert("readout.w".into(), self.params[l.w_out()..l.w_out() + h].to_vec());
        arrays.insert("readout.bias".into(), vec![self.params[l.b_out()]]);
        arrays.insert("normalization.bounds".into(), vec![self.bounds.lo, self.bounds.hi]);
        ModelDocument {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            hidden_size: h,
            arrays,
        }
    }

    pub fn from_document(doc: &ModelDocument) -> Result<Self, ForecastError> {
        if doc.format != MODEL_FORMAT || doc.version != MODEL_VERSION {
            return Err(ForecastError::Document(format!(
                "expected {MODEL_FORMAT} v{MODEL_VERSION}, found {} v{}",
                doc.format, doc.version
            )));
        }
        let h = doc.hidden_size;
        if h == 0 {
            return Err(ForecastError::Document("hidden_size must be >= 1".into()));
        }
        let l = Layout { h };
        let mut params = vec![0.0; l.len()];
        let mut copy = |key: &str, offset: usize, len: usize| -> Result<(), ForecastError> {
            let values = doc
                .arrays
                .get(key)
                .ok_or_else(|| ForecastError::Document(format!("missing array {key:?}")))?;
            if values.len() != len {
                return Err(ForecastError::Document(format!(
                    "array {key:?} has length {}, expected {len}",
                    values.len()
                )));
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(ForecastError::Document(format!("array {key:?} is not finite")));
            }
            params[offset..offset + len].copy_from_slice(values);
            Ok(())
        };
        for (g, name) in GATE_NAMES.iter().enumerate() {
            copy(&format!("{name}.w_x"), l.w_x(g), h)?;
            copy(&format!("{name}.w_h"), l.w_h(g), h * h)?;
            copy(&format!("{name}.bias"), l.bias(g), h)?;
        }
        copy("readout.w", l.w_out(), h)?;
        copy("readout.bias", l.b_out(), 1)?;
        let bounds = match doc.arrays.get("normalization.bounds").map(Vec::as_slice) {
            Some([lo, hi]) if lo.is_finite() && hi.is_finite() && lo <= hi => MinMax { lo: *lo, hi: *hi },
            _ => return Err(ForecastError::Document("bad normalization.bounds".into())),
        };
        Ok(Self {
            hidden_size: h,
            params,
            bounds,
        })
    }
}

pub const MODEL_FORMAT: &str = "seedplan.sequence_model";
pub const MODEL_VERSION: u32 = 1;

/// Versioned flat key -> array form of a [`SequenceModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub format: String,
    pub version: u32,
    pub hidden_size: usize,
    pub arrays: BTreeMap<String, Vec<f64>>,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * grad[i];
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * grad[i] * grad[i];
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
        }
    }
}

/// Full-batch training on mean squared error.
pub fn train(pairs: &[SequencePair], config: &TrainConfig) -> Result<SequenceModel, ForecastError> {
    config.validate()?;
    let first = pairs.first().ok_or(ForecastError::Empty)?;
    if let Some(p) = pairs.iter().find(|p| p.inputs.len() != first.inputs.len()) {
        return Err(ForecastError::RaggedSequences(first.inputs.len(), p.inputs.len()));
    }
    let bounds = MinMax::fit(pairs.iter().flat_map(|p| p.inputs.iter().chain(std::iter::once(&p.target))));
    let data: Vec<(Vec<f64>, f64)> = pairs
        .iter()
        .map(|p| {
            (
                p.inputs.iter().map(|&v| bounds.normalize(v)).collect(),
                bounds.normalize(p.target),
            )
        })
        .collect();

    let mut model = SequenceModel::init(config.hidden_size, config.seed);
    model.bounds = bounds;
    let mut adam = Adam::new(model.params.len());
    for epoch in 0..config.epochs {
        let (loss, grad) = model.loss_and_gradient(&data);
        if !loss.is_finite() {
            return Err(ForecastError::Divergence { epoch });
        }
        adam.step(&mut model.params, &grad, config.learning_rate);
    }
    if model.params.iter().any(|p| !p.is_finite()) {
        return Err(ForecastError::Divergence { epoch: config.epochs });
    }
    Ok(model)
}

pub fn rmse(actual: &[f64], predicted: &[f64]) -> Result<f64, ForecastError> {
    if actual.is_empty() || actual.len() != predicted.len() {
        return Err(ForecastError::Metric(format!(
            "need equal non-zero lengths, got {} and {}",
            actual.len(),
            predicted.len()
        )));
    }
    let sse: f64 = actual.iter().zip(predicted).map(|(a, p)| (a - p).powi(2)).sum();
    Ok((sse / actual.len() as f64).sqrt())
}

/// RMSE as a percentage of the range of `actual`.
pub fn n_rmse(actual: &[f64], predicted: &[f64]) -> Result<f64, ForecastError> {
    let err = rmse(actual, predicted)?;
    let range = MinMax::fit(actual);
    if !(range.hi > range.lo) {
        return Err(ForecastError::Metric("actual values have zero range".into()));
    }
    Ok(err / (range.hi - range.lo) * 100.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn region(id: &str, values: &[(i32, f64)]) -> SubRegion {
        SubRegion {
            id: id.into(),
            lat: 40.0,
            lon: -90.0,
            weather: values.iter().map(|&(y, v)| (y, [v, v * 2.0, v * 3.0])).collect(),
            soil: [6.0, 2.0, 10.0],
        }
    }

    #[test]
    fn sequences_exclude_target_year() {
        let values: Vec<(i32, f64)> = (2000..=2015).map(|y| (y, (y - 2000) as f64)).collect();
        let r = region("R1", &values);
        let pairs = make_sequences([&r], "temperature", 2015).unwrap();
        assert_eq!(pairs.len(), 1);
        // 2000..=2014 inclusive is fifteen values; the length follows the data
        assert_eq!(pairs[0].inputs.len(), 15);
        assert_eq!(pairs[0].inputs[14], 14.0);
        assert_eq!(pairs[0].target, 15.0);

        let pairs = make_sequences([&r], "precipitation", 2014).unwrap();
        assert_eq!(pairs[0].inputs.len(), 14);
        assert_eq!(pairs[0].target, 28.0);
    }

    #[test]
    fn constant_series_normalizes_flat() {
        let values: Vec<(i32, f64)> = (2000..=2005).map(|y| (y, 5.0)).collect();
        let pairs = make_sequences([&region("R1", &values)], "temperature", 2005).unwrap();
        let bounds = MinMax::fit(pairs[0].inputs.iter().chain([&pairs[0].target]));
        let norm: Vec<f64> = pairs[0].inputs.iter().map(|&v| bounds.normalize(v)).collect();
        assert!(norm.iter().all(|&v| v == norm[0]));
        assert_eq!(bounds.normalize(pairs[0].target), norm[0]);
    }

    #[test]
    fn missing_year_is_data_gap() {
        let values: Vec<(i32, f64)> = (2000..=2010).filter(|&y| y != 2007).map(|y| (y, 1.0)).collect();
        let err = make_sequences([&region("R7", &values)], "temperature", 2010).unwrap_err();
        assert_eq!(
            err,
            ForecastError::DataGap {
                sub_region: "R7".into(),
                year: 2007
            }
        );
    }

    #[test]
    fn soil_is_never_forecast() {
        let values: Vec<(i32, f64)> = (2000..=2003).map(|y| (y, 1.0)).collect();
        assert!(matches!(
            make_sequences([&region("R1", &values)], "soil_ph", 2003),
            Err(ForecastError::StaticAttribute(_))
        ));
        assert!(matches!(
            make_sequences([&region("R1", &values)], "humidity", 2003),
            Err(ForecastError::UnknownAttribute(_))
        ));
    }

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(n_rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(rmse(&[0.0, 4.0], &[2.0, 2.0]).unwrap(), 2.0);
        assert_eq!(n_rmse(&[0.0, 4.0], &[2.0, 2.0]).unwrap(), 50.0);
        assert_eq!(rmse(&[0.0, 10.0], &[10.0, 0.0]).unwrap(), 10.0);
        assert_eq!(n_rmse(&[0.0, 10.0], &[10.0, 0.0]).unwrap(), 100.0);
    }

    #[test]
    fn metric_errors() {
        assert!(n_rmse(&[3.0, 3.0], &[1.0, 2.0]).is_err());
        assert!(rmse(&[], &[]).is_err());
        assert!(rmse(&[1.0], &[1.0, 2.0]).is_err());
    }

    fn pair(inputs: Vec<f64>, target: f64) -> SequencePair {
        SequencePair {
            sub_region: "R".into(),
            inputs,
            target,
        }
    }

    #[test]
    fn zero_learning_rate_keeps_init() {
        let pairs = vec![pair(vec![1.0, 2.0, 3.0], 4.0), pair(vec![2.0, 3.0, 4.0], 5.0)];
        let config = TrainConfig {
            hidden_size: 4,
            epochs: 5,
            learning_rate: 0.0,
            seed: 3,
        };
        let model = train(&pairs, &config).unwrap();
        assert_eq!(model.params(), SequenceModel::init(4, 3).params());
    }

    #[test]
    fn training_is_deterministic() {
        let pairs = vec![pair(vec![1.0, 2.0, 3.0], 4.0), pair(vec![3.0, 2.0, 1.0], 0.5)];
        let config = TrainConfig {
            hidden_size: 5,
            epochs: 30,
            learning_rate: 0.01,
            seed: 8,
        };
        let a = train(&pairs, &config).unwrap();
        let b = train(&pairs, &config).unwrap();
        assert_eq!(a.params(), b.params());
    }

    #[test]
    fn single_pair_is_memorized() {
        let pairs = vec![pair(vec![0.2, 0.5, 0.1, 0.9], 0.3)];
        let bounds = MinMax::fit(pairs[0].inputs.iter().chain([&pairs[0].target]));
        let data = vec![(
            pairs[0].inputs.iter().map(|&v| bounds.normalize(v)).collect::<Vec<_>>(),
            bounds.normalize(0.3),
        )];
        let model = train(&pairs, &TrainConfig::default()).unwrap();
        assert!(model.loss(&data) < 1e-4, "loss {}", model.loss(&data));
    }

    #[test]
    fn constant_series_prediction() {
        let pairs: Vec<SequencePair> = (0..5).map(|_| pair(vec![5.0; 10], 5.0)).collect();
        let model = train(&pairs, &TrainConfig::default()).unwrap();
        let p = model.predict_next(&[5.0; 10]);
        assert!((p - 5.0).abs() < 0.05, "prediction {p}");
    }

    #[test]
    fn zero_weights_output_readout_bias() {
        let bounds = MinMax { lo: 10.0, hi: 30.0 };
        let model = SequenceModel::zeroed(6, 0.25, bounds);
        assert_eq!(model.predict_next(&[11.0, 19.0, 27.0]), bounds.denormalize(0.25));
        assert_eq!(model.predict_next(&[11.0, 19.0, 27.0]), 15.0);
    }

    #[test]
    fn prediction_is_pure() {
        let model = SequenceModel::init(8, 1);
        let seq = [0.3, 0.7, 0.1];
        assert_eq!(model.predict_next(&seq), model.predict_next(&seq));
    }

    #[test]
    fn ragged_sequences_rejected() {
        let pairs = vec![pair(vec![1.0, 2.0], 3.0), pair(vec![1.0], 2.0)];
        assert_eq!(
            train(&pairs, &TrainConfig::default()).unwrap_err(),
            ForecastError::RaggedSequences(2, 1)
        );
        assert_eq!(train(&[], &TrainConfig::default()).unwrap_err(), ForecastError::Empty);
    }

    #[test]
    fn diverging_training_is_reported() {
        let pairs = vec![pair(vec![0.0, 1.0], 1.0)];
        let config = TrainConfig {
            learning_rate: f64::MAX,
            ..TrainConfig::default()
        };
        assert!(matches!(train(&pairs, &config), Err(ForecastError::Divergence { .. })));
    }

    #[test]
    fn document_round_trip() {
        let mut model = SequenceModel::init(3, 5);
        model.bounds = MinMax { lo: -2.0, hi: 7.5 };
        let doc = model.to_document();
        let json = serde_json::to_string(&doc).unwrap();
        let back: ModelDocument = serde_json::from_str(&json).unwrap();
        assert_eq!(SequenceModel::from_document(&back).unwrap(), model);
    }

    #[test]
    fn document_rejects_wrong_version() {
        let mut doc = SequenceModel::init(2, 1).to_document();
        doc.version = 99;
        assert!(SequenceModel::from_document(&doc).is_err());
    }

    proptest! {
        #[test]
        fn n_rmse_is_affine_invariant(
            actual in prop::collection::vec(-100.0f64..100.0, 2..20),
            noise in prop::collection::vec(-5.0f64..5.0, 20),
            scale in 0.01f64..50.0,
            shift in -1e3f64..1e3,
        ) {
            prop_assume!(MinMax::fit(&actual).hi - MinMax::fit(&actual).lo > 1e-3);
            let predicted: Vec<f64> = actual.iter().zip(&noise).map(|(a, n)| a + n).collect();
            let base = n_rmse(&actual, &predicted).unwrap();
            let ta: Vec<f64> = actual.iter().map(|v| v * scale + shift).collect();
            let tp: Vec<f64> = predicted.iter().map(|v| v * scale + shift).collect();
            let moved = n_rmse(&ta, &tp).unwrap();
            prop_assert!((base - moved).abs() <= 1e-7 * base.max(1.0));
        }
    }
}
