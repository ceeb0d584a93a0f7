use super::DspError;

/// Sliding-window RMS.
///
/// Value `k` covers samples `k .. k + w` where `w = round(window_s * sps)`,
/// so it is centred on sample `k + (w - 1) / 2`. The output has
/// `len - w + 1` values.
pub fn rms_envelope(series: &[f64], window_s: f64, sps: f64) -> Result<Vec<f64>, DspError> {
    if !(window_s > 0.0) || !(sps > 0.0) {
        return Err(DspError::InvalidParameter(format!(
            "window and sample rate must be positive (window {window_s}, sps {sps})"
        )));
    }
    let w = ((window_s * sps).round() as usize).max(1);
    if w > series.len() {
        return Err(DspError::TooShort {
            needed: w,
            got: series.len(),
        });
    }
    let mut prefix = Vec::with_capacity(series.len() + 1);
    prefix.push(0.0);
    let mut acc = 0.0;
    for &x in series {
        acc += x * x;
        prefix.push(acc);
    }
    Ok((0..=series.len() - w)
        .map(|k| {
            let ms = ((prefix[k + w] - prefix[k]) / w as f64).max(0.0);
            ms.sqrt()
        })
        .collect())
}

/// Time (seconds) of the centre of envelope value `k`.
pub fn envelope_time(k: usize, window_s: f64, sps: f64) -> f64 {
    let w = ((window_s * sps).round() as usize).max(1);
    (k as f64 + (w as f64 - 1.0) / 2.0) / sps
}
