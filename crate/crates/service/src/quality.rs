use std::collections::VecDeque;

use earexg::dsp::{design_bandpass, SosFilter};

/// Running RMS of mains interference: a +/-5 Hz band-pass around the line
/// frequency, rescaled to unity gain at the line frequency, followed by a
/// mean of squares over a sliding window.
#[derive(Debug, Clone)]
pub struct LineQuality {
    filter: SosFilter,
    scale: f64,
    squares: VecDeque<f64>,
    window: usize,
    sum: f64,
}

impl LineQuality {
    pub const WINDOW_S: f64 = 2.0;
    pub const HALF_BAND_HZ: f64 = 5.0;

    /// `None` when the band does not fit below Nyquist.
    pub fn new(powerline_hz: u32, sps: u32) -> Option<Self> {
        let f = powerline_hz as f64;
        let filter =
            design_bandpass(f - Self::HALF_BAND_HZ, f + Self::HALF_BAND_HZ, sps as f64).ok()?;
        let scale = 1.0 / filter.magnitude_at(f, sps as f64);
        let window = ((Self::WINDOW_S * sps as f64).round() as usize).max(1);
        Some(Self {
            filter,
            scale,
            squares: VecDeque::with_capacity(window),
            window,
            sum: 0.0,
        })
    }

    pub fn push(&mut self, uv: f64) {
        let y = self.filter.process_sample(uv) * self.scale;
        let sq = y * y;
        if self.squares.len() == self.window {
            self.sum -= self.squares.pop_front().unwrap_or(0.0);
        }
        self.squares.push_back(sq);
        self.sum += sq;
    }

    /// RMS over the filled part of the window.
    pub fn rms(&self) -> Option<f64> {
        if self.squares.is_empty() {
            return None;
        }
        // The running sum can drift slightly negative after many subtractions.
        Some((self.sum.max(0.0) / self.squares.len() as f64).sqrt())
    }

    pub fn is_full(&self) -> bool {
        self.squares.len() == self.window
    }
}
