//! Piecewise-constant drive amplitude η(t) in the probe rotating frame.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub t_start: f64,
    pub t_end: f64,
    pub eta: Complex64,
}

impl Segment {
    pub fn duration(&self) -> f64 {
        self.t_end - self.t_start
    }
}

/// Ordered, contiguous segments of constant drive amplitude.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriveProtocol {
    segments: Vec<Segment>,
}

impl DriveProtocol {
    pub fn from_segments(segments: Vec<Segment>) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::BadInterval("protocol has no segments".into()));
        }
        for (i, s) in segments.iter().enumerate() {
            if !(s.t_end > s.t_start) {
                return Err(Error::BadInterval(format!(
                    "segment {i}: t_end {} <= t_start {}",
                    s.t_end, s.t_start
                )));
            }
            if i > 0 && segments[i - 1].t_end != s.t_start {
                return Err(Error::BadInterval(format!(
                    "segment {i} starts at {} but previous ends at {}",
                    s.t_start,
                    segments[i - 1].t_end
                )));
            }
        }
        Ok(DriveProtocol { segments })
    }

    /// Zero drive until `t_on`, `eta0` on `[t_on, t_off)`, zero until `t_end`.
    pub fn rectangular(eta0: Complex64, t_on: f64, t_off: f64, t_end: f64) -> Result<Self> {
        if !(0.0 <= t_on && t_on < t_off && t_off <= t_end) {
            return Err(Error::BadInterval(format!(
                "need 0 <= t_on < t_off <= t_end, got {t_on}, {t_off}, {t_end}"
            )));
        }
        let zero = Complex64::new(0.0, 0.0);
        let mut segs = Vec::with_capacity(3);
        if t_on > 0.0 {
            segs.push(Segment { t_start: 0.0, t_end: t_on, eta: zero });
        }
        segs.push(Segment { t_start: t_on, t_end: t_off, eta: eta0 });
        if t_end > t_off {
            segs.push(Segment { t_start: t_off, t_end, eta: zero });
        }
        Self::from_segments(segs)
    }

    /// `n_pulses` pulses of length `tau` whose sign alternates (+η, −η, +η, …),
    /// followed by zero drive until `t_end`.
    pub fn phase_switched_train(eta0: Complex64, tau: f64, n_pulses: usize, t_end: f64) -> Result<Self> {
        if !(tau > 0.0) || n_pulses == 0 {
            return Err(Error::BadInterval(format!(
                "need tau > 0 and n_pulses >= 1, got {tau}, {n_pulses}"
            )));
        }
        let on = tau * n_pulses as f64;
        if on > t_end {
            return Err(Error::BadInterval(format!(
                "train of {n_pulses} x {tau} ns exceeds t_end = {t_end}"
            )));
        }
        let mut segs: Vec<Segment> = (0..n_pulses)
            .map(|k| Segment {
                t_start: k as f64 * tau,
                t_end: (k + 1) as f64 * tau,
                eta: if k % 2 == 0 { eta0 } else { -eta0 },
            })
            .collect();
        if t_end > on {
            segs.push(Segment { t_start: on, t_end, eta: Complex64::new(0.0, 0.0) });
        }
        Self::from_segments(segs)
    }

    /// Splits the segment containing `t` in two without changing η(t).
    pub fn with_split(&self, t: f64) -> Result<Self> {
        let mut segs = Vec::with_capacity(self.segments.len() + 1);
        for s in &self.segments {
            if s.t_start < t && t < s.t_end {
                segs.push(Segment { t_end: t, ..*s });
                segs.push(Segment { t_start: t, ..*s });
            } else {
                segs.push(*s);
            }
        }
        Self::from_segments(segs)
    }

    /// Same timing with every amplitude multiplied by `c`.
    pub fn scaled(&self, c: Complex64) -> Self {
        DriveProtocol {
            segments: self
                .segments
                .iter()
                .map(|s| Segment { eta: s.eta * c, ..*s })
                .collect(),
        }
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn t_start(&self) -> f64 {
        self.segments[0].t_start
    }

    pub fn t_end(&self) -> f64 {
        self.segments[self.segments.len() - 1].t_end
    }

    /// End of the last segment with non-zero drive.
    pub fn last_drive_off(&self) -> Option<f64> {
        self.segments
            .iter()
            .rev()
            .find(|s| s.eta.norm() > 0.0)
            .map(|s| s.t_end)
    }

    /// Amplitude of the segment containing `t` (left-closed, right-open; the
    /// protocol end itself belongs to the last segment).
    pub fn amplitude_at(&self, t: f64) -> Result<Complex64> {
        let (start, end) = (self.t_start(), self.t_end());
        if !(t >= start && t <= end) {
            return Err(Error::OutOfRange { t, start, end });
        }
        let i = self.segments.partition_point(|s| s.t_end <= t);
        Ok(self.segments[i.min(self.segments.len() - 1)].eta)
    }

    /// Time average of |η(t)|² over `[t_start, t_end]`.
    pub fn mean_power(&self) -> f64 {
        let total: f64 = self
            .segments
            .iter()
            .map(|s| s.eta.norm_sqr() * s.duration())
            .sum();
        total / (self.t_end() - self.t_start())
    }
}
