//! Bounded per-agent disturbance signals. Agent indices are 1-based.

use std::io::Read;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SignalError {
    #[error("time {t} is outside the tabulated range [{start}, {end}]")]
    Extrapolation { t: f64, start: f64, end: f64 },
    #[error("agent {agent} has no column in the disturbance table ({columns} columns)")]
    UnknownAgent { agent: usize, columns: usize },
    #[error("invalid disturbance table: {0}")]
    Table(String),
}

/// `0.1·sin(0.1·i·t + 0.01·t²)`.
pub fn chirp(i: usize, t: f64) -> f64 {
    0.1 * (0.1 * i as f64 * t + 0.01 * t * t).sin()
}

/// `0.01·i·t − round(0.01·i·t)` with ties rounded away from zero.
pub fn sawtooth(i: usize, t: f64) -> f64 {
    let v = 0.01 * i as f64 * t;
    v - v.round()
}

/// Piecewise-linear table with one column per agent.
#[derive(Debug, Clone, PartialEq)]
pub struct TableSignal {
    times: Vec<f64>,
    /// `values[k][a]` is agent `a + 1` at `times[k]`.
    values: Vec<Vec<f64>>,
}

impl TableSignal {
    pub fn new(times: Vec<f64>, values: Vec<Vec<f64>>) -> Result<Self, SignalError> {
        if times.is_empty() || times.len() != values.len() {
            return Err(SignalError::Table(
                "need one row of values per sample time".into(),
            ));
        }
        let columns = values[0].len();
        if columns == 0 || values.iter().any(|r| r.len() != columns) {
            return Err(SignalError::Table(
                "rows must have the same nonzero number of agent columns".into(),
            ));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(SignalError::Table(
                "sample times must be strictly increasing".into(),
            ));
        }
        if times
            .iter()
            .chain(values.iter().flatten())
            .any(|v| !v.is_finite())
        {
            return Err(SignalError::Table("non-finite entry".into()));
        }
        Ok(Self { times, values })
    }

    /// Reads CSV with header `t,w1,...,wN`.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self, SignalError> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr
            .headers()
            .map_err(|e| SignalError::Table(e.to_string()))?
            .clone();
        if headers.len() < 2 || &headers[0] != "t" {
            return Err(SignalError::Table("header must be `t,w1,...,wN`".into()));
        }
        for (k, h) in headers.iter().enumerate().skip(1) {
            if h != format!("w{k}") {
                return Err(SignalError::Table(format!(
                    "column {} should be `w{k}`, found `{h}`",
                    k + 1
                )));
            }
        }
        let mut times = Vec::new();
        let mut values = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| SignalError::Table(e.to_string()))?;
            let parsed: Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
            let row =
                parsed.map_err(|e| SignalError::Table(format!("line {}: {e}", times.len() + 2)))?;
            times.push(row[0]);
            values.push(row[1..].to_vec());
        }
        Self::new(times, values)
    }

    pub fn agents(&self) -> usize {
        self.values[0].len()
    }

    pub fn bound(&self) -> f64 {
        self.values
            .iter()
            .flatten()
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn evaluate(&self, i: usize, t: f64) -> Result<f64, SignalError> {
        let columns = self.agents();
        if i == 0 || i > columns {
            return Err(SignalError::UnknownAgent { agent: i, columns });
        }
        let (start, end) = (self.times[0], *self.times.last().unwrap());
        if !(t >= start && t <= end) {
            return Err(SignalError::Extrapolation { t, start, end });
        }
        let k = self.times.partition_point(|&s| s <= t);
        if k == self.times.len() {
            return Ok(self.values[k - 1][i - 1]);
        }
        let (t0, t1) = (self.times[k - 1], self.times[k]);
        let (v0, v1) = (self.values[k - 1][i - 1], self.values[k][i - 1]);
        Ok(v0 + (v1 - v0) * (t - t0) / (t1 - t0))
    }

    pub fn time_range(&self) -> (f64, f64) {
        (self.times[0], *self.times.last().unwrap())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DisturbanceSignal {
    Zero,
    Chirp,
    Sawtooth,
    Table(TableSignal),
}

impl DisturbanceSignal {
    /// Disturbance for agent `i` (1-based) at time `t`.
    pub fn evaluate(&self, i: usize, t: f64) -> Result<f64, SignalError> {
        match self {
            Self::Zero => Ok(0.0),
            Self::Chirp => Ok(chirp(i, t)),
            Self::Sawtooth => Ok(sawtooth(i, t)),
            Self::Table(table) => table.evaluate(i, t),
        }
    }

    /// `M` with `|wᵢ(t)| ≤ M` for every agent and time.
    pub fn bound(&self) -> f64 {
        match self {
            Self::Zero => 0.0,
            Self::Chirp => 0.1,
            Self::Sawtooth => 0.5,
            Self::Table(table) => table.bound(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Zero => "zero",
            Self::Chirp => "chirp",
            Self::Sawtooth => "sawtooth",
            Self::Table(_) => "table",
        }
    }
}
