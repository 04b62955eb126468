//! One sensor revolution and its on-disk log format.
//!
//! A sweep stores one slot per (column, beam) pair in firing order; slots
//! with a zero position are misses (dropout or no return). The binary log is
//! a concatenation of records, all little-endian:
//!   header: f64 sweep start time, u32 column count, u32 beam count
//!   then column count * beam count points:
//!     f32 x, f32 y, f32 z (sensor frame at the firing instant),
//!     f32 intensity, f64 timestamp

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::imu::ImuWindow;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepPoint {
    pub position: [f32; 3],
    pub intensity: f32,
    pub t: f64,
}

impl SweepPoint {
    pub fn is_return(&self) -> bool {
        let p = self.position;
        (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]) > 1e-12
    }

    pub fn position_f64(&self) -> Vector3<f64> {
        Vector3::new(self.position[0] as f64, self.position[1] as f64, self.position[2] as f64)
    }
}

/// One full revolution of the spinning sensor, plus the IMU segment covering
/// it (attached by the log driver; empty when read straight off disk).
#[derive(Clone, Debug)]
pub struct Sweep {
    pub t_start: f64,
    pub period: f64,
    pub columns: u32,
    pub beams: u32,
    pub points: Vec<SweepPoint>,
    pub imu: ImuWindow,
}

impl Sweep {
    /// Reference time the sweep is de-rotated to: end of the revolution.
    pub fn t_end(&self) -> f64 {
        self.t_start + self.period
    }

    /// Valid returns with their timestamps, in firing order.
    pub fn returns(&self) -> impl Iterator<Item = (Vector3<f64>, f32, f64)> + '_ {
        self.points
            .iter()
            .filter(|p| p.is_return())
            .map(|p| (p.position_f64(), p.intensity, p.t))
    }

    pub fn return_count(&self) -> usize {
        self.points.iter().filter(|p| p.is_return()).count()
    }
}

pub fn write_log<W: Write>(sweeps: &[Sweep], w: &mut W) -> Result<()> {
    for s in sweeps {
        write_sweep(s, w)?;
    }
    Ok(())
}

pub fn write_sweep<W: Write>(s: &Sweep, w: &mut W) -> Result<()> {
    debug_assert_eq!(s.points.len(), (s.columns * s.beams) as usize);
    w.write_all(&s.t_start.to_le_bytes())?;
    w.write_all(&s.columns.to_le_bytes())?;
    w.write_all(&s.beams.to_le_bytes())?;
    for p in &s.points {
        for c in p.position {
            w.write_all(&c.to_le_bytes())?;
        }
        w.write_all(&p.intensity.to_le_bytes())?;
        w.write_all(&p.t.to_le_bytes())?;
    }
    Ok(())
}

/// Streaming reader tracking its byte offset for parse diagnostics.
pub struct SweepLogReader<R: Read> {
    reader: R,
    path: String,
    offset: u64,
}

impl<R: Read> SweepLogReader<R> {
    pub fn new(reader: R, path: impl Into<String>) -> Self {
        SweepLogReader { reader, path: path.into(), offset: 0 }
    }

    fn err(&self, at: u64, message: impl Into<String>) -> Error {
        Error::Parse { path: self.path.clone(), offset: at, message: message.into() }
    }

    fn fill(&mut self, buf: &mut [u8], what: &str) -> Result<()> {
        let at = self.offset;
        self.reader
            .read_exact(buf)
            .map_err(|e| self.err(at, format!("truncated {what}: {e}")))?;
        self.offset += buf.len() as u64;
        Ok(())
    }

    /// Next sweep, or None at a clean end of stream.
    pub fn next_sweep(&mut self) -> Result<Option<Sweep>> {
        let header_at = self.offset;
        let mut b8 = [0u8; 8];
        // Distinguish clean EOF from a mid-header cut.
        let mut first = [0u8; 1];
        match self.reader.read(&mut first) {
            Ok(0) => return Ok(None),
            Ok(_) => {}
            Err(e) => return Err(self.err(header_at, format!("read failure: {e}"))),
        }
        b8[0] = first[0];
        self.offset += 1;
        self.fill(&mut b8[1..], "sweep header")?;
        let t_start = f64::from_le_bytes(b8);
        let mut b4 = [0u8; 4];
        self.fill(&mut b4, "column count")?;
        let columns = u32::from_le_bytes(b4);
        self.fill(&mut b4, "beam count")?;
        let beams = u32::from_le_bytes(b4);
        if columns == 0 || beams == 0 || columns > 1 << 16 || beams > 1 << 12 {
            return Err(self.err(
                header_at,
                format!("implausible sweep shape {columns}x{beams}"),
            ));
        }
        if !t_start.is_finite() {
            return Err(self.err(header_at, "non-finite sweep start time"));
        }
        let n = (columns * beams) as usize;
        let mut points = Vec::with_capacity(n);
        let mut last_col_t = t_start;
        for k in 0..n {
            let mut pos = [0f32; 3];
            for c in pos.iter_mut() {
                self.fill(&mut b4, "point position")?;
                *c = f32::from_le_bytes(b4);
            }
            self.fill(&mut b4, "point intensity")?;
            let intensity = f32::from_le_bytes(b4);
            self.fill(&mut b8, "point timestamp")?;
            let t = f64::from_le_bytes(b8);
            if !t.is_finite() {
                return Err(self.err(self.offset - 8, format!("non-finite timestamp in point {k}")));
            }
            last_col_t = t;
            points.push(SweepPoint { position: pos, intensity, t });
        }
        // Recover the revolution period from the column cadence; the last
        // column fires at t_start + (columns - 1) / columns * period.
        let period = if columns > 1 {
            (last_col_t - t_start) * columns as f64 / (columns - 1) as f64
        } else {
            0.1
        };
        Ok(Some(Sweep { t_start, period, columns, beams, points, imu: ImuWindow::default() }))
    }
}

pub fn read_log_path(path: &Path) -> Result<Vec<Sweep>> {
    let file = std::fs::File::open(path)?;
    let mut reader = SweepLogReader::new(BufReader::new(file), path.display().to_string());
    let mut sweeps = Vec::new();
    while let Some(s) = reader.next_sweep()? {
        sweeps.push(s);
    }
    Ok(sweeps)
}

pub fn write_log_path(sweeps: &[Sweep], path: &Path) -> Result<()> {
    let mut file = BufWriter::new(std::fs::File::create(path)?);
    write_log(sweeps, &mut file)?;
    Ok(())
}

/// Attach to each sweep the IMU samples covering its revolution (with one
/// sample period of margin on both sides).
pub fn attach_imu(sweeps: &mut [Sweep], window: &ImuWindow) {
    let margin = window.nominal_period() * 1.5;
    for s in sweeps.iter_mut() {
        let lo = s.t_start - margin;
        let hi = s.t_end() + margin;
        let samples: Vec<_> = window
            .samples()
            .iter()
            .copied()
            .filter(|smp| smp.t >= lo && smp.t <= hi)
            .collect();
        s.imu = ImuWindow::new(samples).expect("slice of a valid window stays ordered");
    }
}
