use serde::{Deserialize, Serialize};

use super::NnError;

/// Dense `(channels, time)` array, channel-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    channels: usize,
    time: usize,
    data: Vec<f64>,
}

impl Grid {
    pub fn zeros(channels: usize, time: usize) -> Self {
        Self {
            channels,
            time,
            data: vec![0.0; channels * time],
        }
    }

    pub fn from_vec(channels: usize, time: usize, data: Vec<f64>) -> Result<Self, NnError> {
        if data.len() != channels * time {
            return Err(NnError::Shape(format!(
                "data length {} != {channels}x{time}",
                data.len()
            )));
        }
        Ok(Self { channels, time, data })
    }

    /// Builds a grid from per-channel rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, NnError> {
        let time = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != time) {
            return Err(NnError::Shape("ragged rows".into()));
        }
        Ok(Self {
            channels: rows.len(),
            time,
            data: rows.concat(),
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn time(&self) -> usize {
        self.time
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.channels, self.time)
    }

    #[inline]
    pub fn get(&self, c: usize, t: usize) -> f64 {
        self.data[c * self.time + t]
    }

    #[inline]
    pub fn set(&mut self, c: usize, t: usize, v: f64) {
        self.data[c * self.time + t] = v;
    }

    pub fn row(&self, c: usize) -> &[f64] {
        &self.data[c * self.time..(c + 1) * self.time]
    }

    pub fn row_mut(&mut self, c: usize) -> &mut [f64] {
        &mut self.data[c * self.time..(c + 1) * self.time]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn add_assign(&mut self, other: &Grid) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Debug-build guard against NaN/Inf propagation.
    #[inline]
    pub(crate) fn debug_check(&self, what: &str) {
        debug_assert!(self.is_finite(), "non-finite values after {what}");
        let _ = what;
    }

    pub(crate) fn expect_shape(&self, channels: usize, time: usize, what: &str) -> Result<(), NnError> {
        if self.shape() != (channels, time) {
            return Err(NnError::Shape(format!(
                "{what}: expected {channels}x{time}, got {}x{}",
                self.channels, self.time
            )));
        }
        Ok(())
    }
}
