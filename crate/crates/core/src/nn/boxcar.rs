use crate::error::{Error, Result};

/// Non-overlapping block means of width `width`. A trailing partial block is
/// dropped.
pub fn boxcar(samples: &[f64], width: usize) -> Result<Vec<f64>> {
    if width == 0 {
        return Err(Error::Shape("boxcar width must be positive".into()));
    }
    Ok(samples
        .chunks_exact(width)
        .map(|c| c.iter().sum::<f64>() / width as f64)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_stays_constant() {
        let out = boxcar(&[0.25; 64], 8).unwrap();
        assert_eq!(out, vec![0.25; 8]);
    }

    #[test]
    fn unit_width_is_identity() {
        let x = [1.0, -2.0, 3.5];
        assert_eq!(boxcar(&x, 1).unwrap(), x.to_vec());
    }

    #[test]
    fn output_lengths() {
        let x = vec![0.0; 256];
        assert_eq!(boxcar(&x, 8).unwrap().len(), 32);
        assert_eq!(boxcar(&x, 32).unwrap().len(), 8);
        assert_eq!(boxcar(&x[..250], 8).unwrap().len(), 31);
        assert!(boxcar(&x, 0).is_err());
    }
}
