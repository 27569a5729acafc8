//! Spectrum CSV and fit JSON serialization.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{LorentzianFit, Spectrum};

pub const FIT_FORMAT_VERSION: u32 = 1;

/// Writes `frequency_hz,psd_m2_per_hz` rows.
pub fn write_spectrum_csv<W: Write>(spec: &Spectrum, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["frequency_hz", "psd_m2_per_hz"])?;
    for (f, p) in spec.frequencies.iter().zip(&spec.psd) {
        w.write_record([format!("{f:.17e}"), format!("{p:.17e}")])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a two-column spectrum CSV. The averaging count is not stored in the
/// file and must be supplied.
pub fn read_spectrum_csv<R: Read>(input: R, averages: usize) -> Result<Spectrum> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers()?.clone();
    if headers.len() < 2 {
        return Err(Error::Format("spectrum CSV needs frequency and psd columns".into()));
    }
    let (mut f, mut p) = (Vec::new(), Vec::new());
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let parse = |col: usize| -> Result<f64> {
            rec.get(col)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| Error::Format(format!("row {}: column {} is not a number", i + 2, col + 1)))
        };
        f.push(parse(0)?);
        p.push(parse(1)?);
    }
    Spectrum::from_values(f, p, averages)
}

#[derive(Serialize, Deserialize)]
struct FitDocument {
    format_version: u32,
    fit: LorentzianFit,
}

pub fn write_fit_json<W: Write>(fit: &LorentzianFit, out: W) -> Result<()> {
    serde_json::to_writer_pretty(out, &FitDocument { format_version: FIT_FORMAT_VERSION, fit: *fit })?;
    Ok(())
}

pub fn read_fit_json<R: Read>(input: R) -> Result<LorentzianFit> {
    let doc: FitDocument = serde_json::from_reader(input)?;
    if doc.format_version != FIT_FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported fit format version {}", doc.format_version)));
    }
    Ok(doc.fit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{fit_lorentzian, model_spectrum, LorentzianParams};

    #[test]
    fn spectrum_round_trip() {
        let spec = Spectrum::from_values(vec![1.0, 2.0, 3.0], vec![1e-30, 2.5e-31, 3.0], 7).unwrap();
        let mut buf = Vec::new();
        write_spectrum_csv(&spec, &mut buf).unwrap();
        let back = read_spectrum_csv(buf.as_slice(), 7).unwrap();
        assert_eq!(back.frequencies, spec.frequencies);
        assert_eq!(back.psd, spec.psd);
    }

    #[test]
    fn fit_round_trip_and_version_check() {
        let p = LorentzianParams::new(10.0, 0.2, 3.0, 0.1);
        let f: Vec<f64> = (0..400).map(|i| 8.0 + i as f64 * 0.01).collect();
        let fit = fit_lorentzian(&model_spectrum(&p, f, 4).unwrap(), None).unwrap();
        let mut buf = Vec::new();
        write_fit_json(&fit, &mut buf).unwrap();
        assert_eq!(read_fit_json(buf.as_slice()).unwrap(), fit);
        let bad = String::from_utf8(buf).unwrap().replace("\"format_version\": 1", "\"format_version\": 9");
        assert!(matches!(read_fit_json(bad.as_bytes()), Err(Error::Format(_))));
    }

    #[test]
    fn malformed_csv_is_reported() {
        let text = "frequency_hz,psd_m2_per_hz\n1.0,abc\n";
        assert!(matches!(read_spectrum_csv(text.as_bytes(), 1), Err(Error::Format(_))));
    }
}
