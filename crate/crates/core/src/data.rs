//! Sample records, lagged feature vectors and multi-step rollout prediction.
//!
//! A feature vector for time `t` is laid out as
//! `[y(t-1) .. y(t-l), u(t-1) .. u(t-l), 1]`, where each `u` block holds all
//! input channels of that step and the trailing entry is the intercept.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Input channels logged by the simulator, in column order.
pub const INPUT_CHANNELS: [&str; 5] =
    ["flow_kg_s", "inlet_c", "outdoor_c", "solar_kw", "occupancy"];
pub const N_INPUTS: usize = INPUT_CHANNELS.len();

#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    /// Step count; one step is one sampling period.
    pub time_index: usize,
    /// Zone temperature in degC, measured at the start of the step.
    pub output: f64,
    /// Inputs applied over the step that starts at `time_index`.
    pub inputs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    records: Vec<SampleRecord>,
    domain_id: String,
    n_inputs: usize,
}

impl Dataset {
    pub fn new(domain_id: impl Into<String>, records: Vec<SampleRecord>) -> Result<Self> {
        let n_inputs = records.first().map_or(0, |r| r.inputs.len());
        for pair in records.windows(2) {
            if pair[1].time_index != pair[0].time_index + 1 {
                return Err(Error::Format(format!(
                    "time indices must be contiguous ({} followed by {})",
                    pair[0].time_index, pair[1].time_index
                )));
            }
        }
        if let Some(bad) = records.iter().find(|r| r.inputs.len() != n_inputs) {
            return Err(Error::DimensionMismatch {
                expected: n_inputs,
                got: bad.inputs.len(),
            });
        }
        Ok(Dataset {
            records,
            domain_id: domain_id.into(),
            n_inputs,
        })
    }

    /// Empty dataset that records are pushed onto as a simulation runs.
    pub fn empty(domain_id: impl Into<String>, n_inputs: usize) -> Self {
        Dataset {
            records: Vec::new(),
            domain_id: domain_id.into(),
            n_inputs,
        }
    }

    pub fn push(&mut self, record: SampleRecord) -> Result<()> {
        if record.inputs.len() != self.n_inputs {
            return Err(Error::DimensionMismatch {
                expected: self.n_inputs,
                got: record.inputs.len(),
            });
        }
        if let Some(last) = self.records.last() {
            if record.time_index != last.time_index + 1 {
                return Err(Error::Format(format!(
                    "time index {} does not follow {}",
                    record.time_index, last.time_index
                )));
            }
        }
        self.records.push(record);
        Ok(())
    }

    pub fn records(&self) -> &[SampleRecord] {
        &self.records
    }

    pub fn records_mut(&mut self) -> &mut [SampleRecord] {
        &mut self.records
    }

    pub fn domain_id(&self) -> &str {
        &self.domain_id
    }

    pub fn n_inputs(&self) -> usize {
        self.n_inputs
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn first_time(&self) -> Option<usize> {
        self.records.first().map(|r| r.time_index)
    }

    /// Position of a time index within the record vector.
    pub fn position(&self, time_index: usize) -> Option<usize> {
        let first = self.first_time()?;
        let pos = time_index.checked_sub(first)?;
        (pos < self.records.len()).then_some(pos)
    }

    pub fn outputs(&self) -> impl Iterator<Item = f64> + '_ {
        self.records.iter().map(|r| r.output)
    }

    /// Sub-dataset covering record positions `range`.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Dataset {
        Dataset {
            records: self.records[range].to_vec(),
            domain_id: self.domain_id.clone(),
            n_inputs: self.n_inputs,
        }
    }

    pub fn layout(&self, lags: usize) -> FeatureLayout {
        FeatureLayout::new(lags, self.n_inputs)
    }

    /// All constructible (feature, target) pairs, in time order.
    pub fn regression_pairs(&self, lags: usize) -> Result<(Vec<FeatureVector>, Vec<f64>)> {
        let first = self.first_time().unwrap_or(0);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for pos in lags..self.records.len() {
            xs.push(build_feature_vector(self, first + pos, lags)?);
            ys.push(self.records[pos].output);
        }
        Ok((xs, ys))
    }

    /// Inputs applied over the `horizon` steps starting at `time_index`.
    pub fn inputs_from(&self, time_index: usize, horizon: usize) -> Result<Vec<Vec<f64>>> {
        let pos = self.position(time_index).ok_or(Error::HorizonTooLong {
            horizon,
            available: 0,
        })?;
        let available = self.records.len() - pos;
        if available < horizon {
            return Err(Error::HorizonTooLong { horizon, available });
        }
        Ok(self.records[pos..pos + horizon]
            .iter()
            .map(|r| r.inputs.clone())
            .collect())
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["t".to_string(), "y".to_string()];
        header.extend((1..=self.n_inputs).map(|i| format!("u{i}")));
        w.write_record(&header)?;
        for r in &self.records {
            let mut row = vec![r.time_index.to_string(), r.output.to_string()];
            row.extend(r.inputs.iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(domain_id: impl Into<String>, reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let header = rdr.headers()?.clone();
        if header.len() < 2 || &header[0] != "t" || &header[1] != "y" {
            return Err(Error::Format("dataset header must start with `t,y`".into()));
        }
        for (i, name) in header.iter().skip(2).enumerate() {
            if name != format!("u{}", i + 1) {
                return Err(Error::Format(format!("unexpected column `{name}`")));
            }
        }
        let mut records = Vec::new();
        for row in rdr.records() {
            let row = row?;
            let parse = |s: &str| -> Result<f64> {
                s.parse::<f64>()
                    .map_err(|_| Error::Format(format!("bad number `{s}`")))
            };
            let time_index = row[0]
                .parse::<usize>()
                .map_err(|_| Error::Format(format!("bad time index `{}`", &row[0])))?;
            let output = parse(&row[1])?;
            let inputs = row.iter().skip(2).map(parse).collect::<Result<Vec<_>>>()?;
            records.push(SampleRecord {
                time_index,
                output,
                inputs,
            });
        }
        Dataset::new(domain_id, records)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    pub fn load(domain_id: impl Into<String>, path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Dataset::read_csv(domain_id, std::io::BufReader::new(file))
    }
}

/// Shape of a lagged feature vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureLayout {
    pub lags: usize,
    pub n_inputs: usize,
}

impl FeatureLayout {
    pub fn new(lags: usize, n_inputs: usize) -> Self {
        FeatureLayout { lags, n_inputs }
    }

    /// `lags * (1 + n_inputs) + 1`, intercept included.
    pub fn dim(&self) -> usize {
        self.lags * (1 + self.n_inputs) + 1
    }

    pub fn intercept_index(&self) -> usize {
        self.dim() - 1
    }

    /// Index of input `channel` at lag `lag` (1-based lag).
    pub fn input_index(&self, lag: usize, channel: usize) -> usize {
        self.lags + (lag - 1) * self.n_inputs + channel
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn from_vec(values: Vec<f64>) -> Self {
        FeatureVector(values)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl std::ops::Deref for FeatureVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HorizonSpec {
    pub sampling_period_h: f64,
    pub horizon_steps: usize,
    pub discount: f64,
}

impl HorizonSpec {
    pub fn new(sampling_period_h: f64, horizon_steps: usize, discount: f64) -> Result<Self> {
        if horizon_steps == 0 {
            return Err(Error::InvalidParameter("horizon_steps must be >= 1".into()));
        }
        if !(sampling_period_h > 0.0) {
            return Err(Error::InvalidParameter(
                "sampling period must be positive".into(),
            ));
        }
        if !(discount > 0.0 && discount <= 1.0) {
            return Err(Error::InvalidParameter(
                "discount must lie in (0, 1]".into(),
            ));
        }
        Ok(HorizonSpec {
            sampling_period_h,
            horizon_steps,
            discount,
        })
    }

    /// Half-hour sampling, 6 h horizon, discount 0.995.
    pub fn standard() -> Self {
        HorizonSpec {
            sampling_period_h: 0.5,
            horizon_steps: 12,
            discount: 0.995,
        }
    }

    pub fn horizon_hours(&self) -> f64 {
        self.horizon_steps as f64 * self.sampling_period_h
    }

    /// `discount^(M-1-j)` for offsets `j = 0..M`, so the last step weighs 1.
    pub fn discount_weights(&self) -> Vec<f64> {
        let m = self.horizon_steps;
        (0..m)
            .map(|j| self.discount.powi((m - 1 - j) as i32))
            .collect()
    }
}

/// Anything that maps a feature vector to a one-step-ahead output.
pub trait Predictor: Sync {
    fn predict(&self, x: &[f64]) -> f64;
}

impl<F> Predictor for F
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    fn predict(&self, x: &[f64]) -> f64 {
        self(x)
    }
}

/// Feature vector for predicting the output at `time_index`.
pub fn build_feature_vector(
    data: &Dataset,
    time_index: usize,
    lags: usize,
) -> Result<FeatureVector> {
    if lags == 0 {
        return Err(Error::InvalidParameter("lag order must be >= 1".into()));
    }
    let first = data.first_time().ok_or(Error::InsufficientHistory {
        index: time_index,
        needed: lags,
    })?;
    let pos = time_index
        .checked_sub(first)
        .filter(|&p| p >= lags && p <= data.len())
        .ok_or(Error::InsufficientHistory {
            index: time_index,
            needed: lags,
        })?;
    let layout = data.layout(lags);
    let recs = data.records();
    let mut v = Vec::with_capacity(layout.dim());
    v.extend((1..=lags).map(|j| recs[pos - j].output));
    for j in 1..=lags {
        v.extend_from_slice(&recs[pos - j].inputs);
    }
    v.push(1.0);
    Ok(FeatureVector(v))
}

/// The measured context a rollout starts from: the last `lags` outputs up to
/// and including `t_k`, and the inputs applied before `t_k`.
#[derive(Debug, Clone)]
pub struct RolloutWindow {
    layout: FeatureLayout,
    /// Oldest first, `lags` entries, last is `y(t_k)`.
    outputs: Vec<f64>,
    /// Oldest first, `lags - 1` input vectors flattened, last is `u(t_k - 1)`.
    inputs: Vec<f64>,
}

impl RolloutWindow {
    /// Window ending at record `time_index` of `data`.
    pub fn from_dataset(data: &Dataset, time_index: usize, lags: usize) -> Result<Self> {
        let pos = data
            .position(time_index)
            .ok_or(Error::InsufficientHistory {
                index: time_index,
                needed: lags,
            })?;
        if lags == 0 || pos + 1 < lags {
            return Err(Error::InsufficientHistory {
                index: time_index,
                needed: lags,
            });
        }
        let recs = &data.records()[pos + 1 - lags..=pos];
        let outputs = recs.iter().map(|r| r.output).collect();
        let inputs = recs[..lags - 1]
            .iter()
            .flat_map(|r| r.inputs.iter().copied())
            .collect();
        Ok(RolloutWindow {
            layout: data.layout(lags),
            outputs,
            inputs,
        })
    }

    /// Window at the decision instant `t = history.len()`: `history` holds the
    /// completed records before `t` and `current_output` is the measured `y(t)`.
    pub fn from_history(history: &Dataset, current_output: f64, lags: usize) -> Result<Self> {
        let n = history.len();
        if lags == 0 || n + 1 < lags {
            return Err(Error::InsufficientHistory {
                index: history.first_time().unwrap_or(0) + n,
                needed: lags,
            });
        }
        if !current_output.is_finite() {
            return Err(Error::NonFinite("current output"));
        }
        let recs = &history.records()[n + 1 - lags..];
        let mut outputs: Vec<f64> = recs.iter().map(|r| r.output).collect();
        outputs.push(current_output);
        let inputs = recs.iter().flat_map(|r| r.inputs.iter().copied()).collect();
        Ok(RolloutWindow {
            layout: history.layout(lags),
            outputs,
            inputs,
        })
    }

    pub fn layout(&self) -> FeatureLayout {
        self.layout
    }

    pub fn last_output(&self) -> f64 {
        *self
            .outputs
            .last()
            .expect("window holds at least one output")
    }

    /// Roll the predictor forward over `future_inputs` (flattened, one block of
    /// `n_inputs` per step; block `j` is the input applied from `t_k + j`).
    /// Writes `y(t_k+1) .. y(t_k+M)` into `out`.
    pub fn rollout_into<P: Predictor + ?Sized>(
        &self,
        predictor: &P,
        future_inputs: &[f64],
        out: &mut [f64],
    ) {
        let l = self.layout.lags;
        let mi = self.layout.n_inputs;
        let horizon = out.len();
        debug_assert!(future_inputs.len() >= horizon * mi);
        let mut x = vec![0.0; self.layout.dim()];
        x[self.layout.dim() - 1] = 1.0;
        let n_hist = self.outputs.len();
        let past_inputs = self.inputs.len() / mi.max(1);
        for step in 0..horizon {
            // Output lags: y(t_k + step + 1 - j), j = 1..=l.
            for j in 1..=l {
                let idx = (step + 1) as isize - j as isize; // relative to t_k + 1
                x[j - 1] = if idx >= 1 {
                    out[(idx - 1) as usize]
                } else {
                    self.outputs[(n_hist as isize - 1 + idx) as usize]
                };
            }
            // Input lags: u(t_k + step - (j - 1)).
            for j in 1..=l {
                let rel = step as isize - (j as isize - 1);
                let dst = l + (j - 1) * mi;
                let src: &[f64] = if rel >= 0 {
                    let r = rel as usize;
                    &future_inputs[r * mi..(r + 1) * mi]
                } else {
                    let r = (past_inputs as isize + rel) as usize;
                    &self.inputs[r * mi..(r + 1) * mi]
                };
                x[dst..dst + mi].copy_from_slice(src);
            }
            out[step] = predictor.predict(&x);
        }
    }
}

/// Multi-step prediction from `t_k`: measured outputs up to `t_k`, predicted
/// outputs afterwards, true inputs throughout.
///
/// `future_inputs[j]` is the input applied over step `t_k + j`, so it drives
/// `y(t_k + j + 1)`; the input stored on record `t_k` itself is not read.
pub fn rollout_predict<P: Predictor + ?Sized>(
    predictor: &P,
    data: &Dataset,
    t_k: usize,
    future_inputs: &[Vec<f64>],
    spec: &HorizonSpec,
    lags: usize,
) -> Result<Vec<f64>> {
    let horizon = spec.horizon_steps;
    if future_inputs.len() < horizon {
        return Err(Error::HorizonTooLong {
            horizon,
            available: future_inputs.len(),
        });
    }
    let window = RolloutWindow::from_dataset(data, t_k, lags)?;
    let mut flat = Vec::with_capacity(horizon * data.n_inputs());
    for u in &future_inputs[..horizon] {
        if u.len() != data.n_inputs() {
            return Err(Error::DimensionMismatch {
                expected: data.n_inputs(),
                got: u.len(),
            });
        }
        flat.extend_from_slice(u);
    }
    let mut out = vec![0.0; horizon];
    window.rollout_into(predictor, &flat, &mut out);
    Ok(out)
}

pub fn rmse(predicted: &[f64], actual: &[f64]) -> f64 {
    assert_eq!(predicted.len(), actual.len());
    if predicted.is_empty() {
        return 0.0;
    }
    let sse: f64 = predicted
        .iter()
        .zip(actual)
        .map(|(p, a)| (p - a) * (p - a))
        .sum();
    (sse / predicted.len() as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(n: usize, n_inputs: usize) -> Dataset {
        let records = (0..n)
            .map(|t| SampleRecord {
                time_index: t,
                output: 20.0 + t as f64,
                inputs: (0..n_inputs).map(|c| (100 * c + t) as f64).collect(),
            })
            .collect();
        Dataset::new("ramp", records).unwrap()
    }

    #[test]
    fn feature_order_lag_one() {
        let ds = Dataset::new(
            "x",
            vec![
                SampleRecord {
                    time_index: 0,
                    output: 21.0,
                    inputs: vec![0.0787, 45.0],
                },
                SampleRecord {
                    time_index: 1,
                    output: 21.3,
                    inputs: vec![0.0, 45.0],
                },
            ],
        )
        .unwrap();
        let x = build_feature_vector(&ds, 1, 1).unwrap();
        assert_eq!(x.as_slice(), &[21.0, 0.0787, 45.0, 1.0]);
    }

    #[test]
    fn feature_length_third_order_five_inputs() {
        let ds = ramp(10, 5);
        let x = build_feature_vector(&ds, 5, 3).unwrap();
        assert_eq!(x.len(), 19);
        assert_eq!(ds.layout(3).dim(), 19);
        // y(t-1), y(t-2), y(t-3) then u(t-1) block.
        assert_eq!(&x[..3], &[24.0, 23.0, 22.0]);
        assert_eq!(x[3], 4.0);
        assert_eq!(x[4], 104.0);
        assert_eq!(x[ds.layout(3).input_index(3, 0)], 2.0);
    }

    #[test]
    fn insufficient_history() {
        let ds = ramp(10, 5);
        assert!(matches!(
            build_feature_vector(&ds, 2, 3),
            Err(Error::InsufficientHistory { .. })
        ));
    }

    #[test]
    fn non_contiguous_rejected() {
        let r = |t| SampleRecord {
            time_index: t,
            output: 0.0,
            inputs: vec![],
        };
        assert!(Dataset::new("x", vec![r(0), r(2)]).is_err());
    }

    #[test]
    fn constant_predictor_rollout() {
        let ds = ramp(10, 2);
        let spec = HorizonSpec::new(0.5, 12, 1.0).unwrap();
        let inputs = vec![vec![0.0, 0.0]; 12];
        let out = rollout_predict(&|_: &[f64]| 21.0, &ds, 5, &inputs, &spec, 3).unwrap();
        assert_eq!(out, vec![21.0; 12]);
    }

    #[test]
    fn persistence_rollout_holds_last_measurement() {
        let mut ds = ramp(10, 2);
        ds.records_mut()[6].output = 20.0;
        let spec = HorizonSpec::new(0.5, 3, 1.0).unwrap();
        let inputs = vec![vec![1.0, 2.0]; 3];
        let out = rollout_predict(&|x: &[f64]| x[0], &ds, 6, &inputs, &spec, 2).unwrap();
        assert_eq!(out, vec![20.0, 20.0, 20.0]);
    }

    #[test]
    fn rollout_horizon_one_is_direct_prediction() {
        let ds = ramp(12, 3);
        let spec = HorizonSpec::new(0.5, 1, 1.0).unwrap();
        let w: Vec<f64> = (0..ds.layout(3).dim())
            .map(|i| 0.01 * i as f64 - 0.05)
            .collect();
        let lin = |x: &[f64]| x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
        for t_k in 3..11 {
            let inputs = ds.inputs_from(t_k, 1).unwrap();
            let roll = rollout_predict(&lin, &ds, t_k, &inputs, &spec, 3).unwrap();
            let direct = lin(&build_feature_vector(&ds, t_k + 1, 3).unwrap());
            assert_eq!(roll[0], direct);
        }
    }

    #[test]
    fn rollout_uses_predictions_beyond_t_k() {
        // Predictor echoes y(t-2); with measured y(t_k-1), y(t_k) the sequence alternates.
        let ds = ramp(8, 1);
        let spec = HorizonSpec::new(0.5, 4, 1.0).unwrap();
        let inputs = vec![vec![0.0]; 4];
        let out = rollout_predict(&|x: &[f64]| x[1], &ds, 5, &inputs, &spec, 2).unwrap();
        assert_eq!(out, vec![24.0, 25.0, 24.0, 25.0]);
    }

    #[test]
    fn horizon_longer_than_inputs() {
        let ds = ramp(8, 1);
        let spec = HorizonSpec::new(0.5, 4, 1.0).unwrap();
        let err = rollout_predict(&|_: &[f64]| 0.0, &ds, 5, &[vec![0.0]], &spec, 2);
        assert!(matches!(err, Err(Error::HorizonTooLong { .. })));
    }

    #[test]
    fn csv_round_trip() {
        let ds = ramp(5, 5);
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,y,u1,u2,u3,u4,u5\n"));
        let back = Dataset::read_csv("ramp", buf.as_slice()).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn discount_weights_end_at_one() {
        let w = HorizonSpec::standard().discount_weights();
        assert_eq!(w.len(), 12);
        assert_eq!(w[11], 1.0);
        assert!((w[0] - 0.995f64.powi(11)).abs() < 1e-15);
    }
}
