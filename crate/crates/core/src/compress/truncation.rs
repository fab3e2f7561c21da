use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncationIndicators {
    /// `1 − σ_{q−1}/σ_q`, with `σ_0 := σ_1`.
    pub e_q: f64,
    /// Conditioning `σ_1/σ_q`.
    pub mu_q: f64,
    /// `(σ_q σ_{q−1} + σ_1)/(σ_1 σ_q)`.
    pub f: f64,
    /// Discarded share `Σ_{i>q} σ_i / Σ σ_i`.
    pub tail_energy: f64,
}

/// Truncation diagnostics at rank `q` (1-based) of a non-increasing spectrum.
pub fn truncation_indicators(spectrum: &[f64], q: usize) -> Result<TruncationIndicators> {
    if q == 0 || q > spectrum.len() {
        return Err(Error::Parameter(format!(
            "rank {q} outside 1..={}",
            spectrum.len()
        )));
    }
    if let Some(i) = spectrum[..q].iter().position(|&s| !(s > 0.0)) {
        return Err(Error::SpectrumExhausted {
            q: i + 1,
            value: spectrum[i],
        });
    }
    let s1 = spectrum[0];
    let sq = spectrum[q - 1];
    let sprev = if q >= 2 { spectrum[q - 2] } else { s1 };
    let total: f64 = spectrum.iter().map(|s| s.max(0.0)).sum();
    let tail: f64 = spectrum[q..].iter().map(|s| s.max(0.0)).sum();
    Ok(TruncationIndicators {
        e_q: 1.0 - sprev / sq,
        mu_q: s1 / sq,
        f: (sq * sprev + s1) / (s1 * sq),
        tail_energy: tail / total,
    })
}

/// Largest `q` with `σ_q ≥ √σ_1`, never less than 1.
pub fn optimal_truncation(spectrum: &[f64]) -> Result<usize> {
    let s1 = *spectrum
        .first()
        .ok_or_else(|| Error::InsufficientData("empty spectrum".into()))?;
    if !(s1 > 0.0) {
        return Err(Error::SpectrumExhausted { q: 1, value: s1 });
    }
    let threshold = s1.sqrt();
    Ok(spectrum.iter().take_while(|&&s| s >= threshold).count().max(1))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_spectrum_is_perfectly_conditioned() {
        let s = [3.0; 6];
        for q in 1..=6 {
            let t = truncation_indicators(&s, q).unwrap();
            assert_eq!(t.mu_q, 1.0);
            assert_eq!(t.e_q, 0.0);
        }
    }

    #[test]
    fn conditioning_by_substitution() {
        let s = [100.0, 10.0, 1.0];
        assert_eq!(truncation_indicators(&s, 2).unwrap().mu_q, 10.0);
        assert_eq!(truncation_indicators(&s, 3).unwrap().mu_q, 100.0);
        let t = truncation_indicators(&s, 2).unwrap();
        assert_eq!(t.e_q, 1.0 - 100.0 / 10.0);
        assert_eq!(t.f, (10.0 * 100.0 + 100.0) / (100.0 * 10.0));
        assert!((t.tail_energy - 1.0 / 111.0).abs() < 1e-15);
    }

    #[test]
    fn stopping_rule_examples() {
        assert_eq!(optimal_truncation(&[100.0, 50.0, 11.0, 9.0, 1.0]).unwrap(), 3);
        assert_eq!(optimal_truncation(&[1.0]).unwrap(), 1);
        assert_eq!(optimal_truncation(&[0.25, 0.2]).unwrap(), 1);
        assert!(optimal_truncation(&[]).is_err());
        assert!(optimal_truncation(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn exhausted_spectrum() {
        assert!(matches!(
            truncation_indicators(&[2.0, 1.0, 0.0], 3),
            Err(Error::SpectrumExhausted { q: 3, .. })
        ));
    }
}
