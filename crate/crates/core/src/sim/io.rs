//! Trajectory files.
//!
//! Binary layout (little-endian): magic `CDTRAJ\0\0`, format version (u32),
//! unit system (u32: 0 SI, 1 natural), flags (u32, bit 0: force present),
//! reserved (u32), sample rate [Hz] (f64), start time [s] (f64), seed (u64),
//! sample count (u64), displacements (f64 × n), then forces (f64 × n) if
//! flagged.
//!
//! CSV columns: `time_s,displacement_m[,force_N]`.

use std::io::{Read, Write};

use crate::constants::UnitSystem;
use crate::error::{Error, Result};

use super::Trajectory;

pub const MAGIC: [u8; 8] = *b"CDTRAJ\0\0";
pub const FORMAT_VERSION: u32 = 1;
const FLAG_FORCE: u32 = 1;

pub fn write_binary<W: Write>(trajectory: &Trajectory, mut out: W) -> Result<()> {
    let flags = if trajectory.force.is_some() { FLAG_FORCE } else { 0 };
    out.write_all(&MAGIC)?;
    for word in [FORMAT_VERSION, trajectory.units.code(), flags, 0] {
        out.write_all(&word.to_le_bytes())?;
    }
    out.write_all(&trajectory.sample_rate.to_le_bytes())?;
    out.write_all(&trajectory.start_time.to_le_bytes())?;
    out.write_all(&trajectory.seed.to_le_bytes())?;
    out.write_all(&(trajectory.len() as u64).to_le_bytes())?;
    let mut payload = Vec::with_capacity(8 * trajectory.len() * if flags != 0 { 2 } else { 1 });
    for v in trajectory.samples.iter().chain(trajectory.force.iter().flatten()) {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&payload)?;
    Ok(())
}

fn take<const N: usize>(bytes: &[u8], at: &mut usize) -> Result<[u8; N]> {
    let slice = bytes.get(*at..*at + N).ok_or_else(|| Error::Format("truncated trajectory file".into()))?;
    *at += N;
    Ok(slice.try_into().expect("slice has length N"))
}

pub fn read_binary<R: Read>(mut input: R) -> Result<Trajectory> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let mut at = 0;
    if take::<8>(&bytes, &mut at)? != MAGIC {
        return Err(Error::Format("not a trajectory file (bad magic)".into()));
    }
    let version = u32::from_le_bytes(take(&bytes, &mut at)?);
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported trajectory format version {version}")));
    }
    let units_code = u32::from_le_bytes(take(&bytes, &mut at)?);
    let units = UnitSystem::from_code(units_code)
        .ok_or_else(|| Error::Format(format!("unknown unit system code {units_code}")))?;
    let flags = u32::from_le_bytes(take(&bytes, &mut at)?);
    let _reserved = u32::from_le_bytes(take(&bytes, &mut at)?);
    let sample_rate = f64::from_le_bytes(take(&bytes, &mut at)?);
    let start_time = f64::from_le_bytes(take(&bytes, &mut at)?);
    let seed = u64::from_le_bytes(take(&bytes, &mut at)?);
    let n = u64::from_le_bytes(take(&bytes, &mut at)?) as usize;
    let columns = if flags & FLAG_FORCE != 0 { 2 } else { 1 };
    if bytes.len() - at != 8 * n * columns {
        return Err(Error::Format(format!(
            "payload holds {} bytes, header announces {}",
            bytes.len() - at,
            8 * n * columns
        )));
    }
    let mut values = Vec::with_capacity(n * columns);
    for _ in 0..n * columns {
        values.push(f64::from_le_bytes(take(&bytes, &mut at)?));
    }
    let force = (columns == 2).then(|| values.split_off(n));
    let mut trajectory = Trajectory::new(values, sample_rate, units).map_err(|e| Error::Format(e.to_string()))?;
    trajectory.force = force;
    trajectory.start_time = start_time;
    trajectory.seed = seed;
    Ok(trajectory)
}

pub fn write_csv<W: Write>(trajectory: &Trajectory, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if trajectory.force.is_some() {
        w.write_record(["time_s", "displacement_m", "force_N"])?;
    } else {
        w.write_record(["time_s", "displacement_m"])?;
    }
    for (i, x) in trajectory.samples.iter().enumerate() {
        let t = trajectory.time(i).to_string();
        match &trajectory.force {
            Some(f) => w.write_record([t, x.to_string(), f[i].to_string()])?,
            None => w.write_record([t, x.to_string()])?,
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a trajectory CSV; the sample rate is recovered from the time column.
pub fn read_csv<R: Read>(input: R, units: UnitSystem) -> Result<Trajectory> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers()?.clone();
    let has_force = match headers.iter().collect::<Vec<_>>().as_slice() {
        ["time_s", "displacement_m"] => false,
        ["time_s", "displacement_m", "force_N"] => true,
        other => return Err(Error::Format(format!("unexpected trajectory columns {other:?}"))),
    };
    let (mut times, mut xs, mut fs) = (Vec::new(), Vec::new(), Vec::new());
    for record in r.records() {
        let record = record?;
        let row = times.len() + 2;
        let parse = |i: usize| -> Result<f64> {
            record[i].parse::<f64>().map_err(|e| Error::Format(format!("row {row}: {e}")))
        };
        times.push(parse(0)?);
        xs.push(parse(1)?);
        if has_force {
            fs.push(parse(2)?);
        }
    }
    if times.len() < 2 {
        return Err(Error::TooShort { required: 2, actual: times.len() });
    }
    let sample_rate = (times.len() - 1) as f64 / (times[times.len() - 1] - times[0]);
    let mut trajectory = Trajectory::new(xs, sample_rate, units)?;
    trajectory.start_time = times[0];
    if has_force {
        trajectory.force = Some(fs);
    }
    Ok(trajectory)
}
