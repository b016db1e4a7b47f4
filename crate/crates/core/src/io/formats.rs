//! IMU CSV and corner-detection JSON Lines.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::Vector3;

use crate::board::BoardGeometry;
use crate::camera::CornerObservation;
use crate::error::{Error, Result};
use crate::imu::ImuSample;
use crate::init::FrameDetections;
use crate::synth::DetectionRecord;

pub const IMU_HEADER: [&str; 7] = ["t_ns", "gx", "gy", "gz", "ax", "ay", "az"];

/// Readings with times in seconds relative to the first one.
#[derive(Clone, Debug, PartialEq)]
pub struct ImuStream {
    pub samples: Vec<ImuSample>,
    /// Stamp of the first reading, ns. All other clocks are read relative
    /// to it.
    pub origin_ns: i64,
}

/// `(t_ns − origin_ns)` in seconds, exact for spans below 2⁵³ ns.
pub fn ns_to_seconds(t_ns: i64, origin_ns: i64) -> f64 {
    (t_ns - origin_ns) as f64 * 1e-9
}

/// Reads `t_ns,gx,gy,gz,ax,ay,az` rows. Timestamps must strictly increase.
pub fn load_imu_csv(path: impl AsRef<Path>) -> Result<ImuStream> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_imu_csv(file)
}

pub fn read_imu_csv(reader: impl std::io::Read) -> Result<ImuStream> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers().map_err(|e| Error::Parse { line: 1, msg: e.to_string() })?;
    if header.iter().ne(IMU_HEADER.iter().copied()) {
        return Err(Error::Parse { line: 1, msg: format!("expected header {}", IMU_HEADER.join(",")) });
    }
    let mut stamps: Vec<i64> = Vec::new();
    let mut raw: Vec<[f64; 6]> = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let line = k + 2;
        let rec = rec.map_err(|e| Error::Parse { line, msg: e.to_string() })?;
        if rec.len() != 7 {
            return Err(Error::Parse { line, msg: format!("expected 7 fields, got {}", rec.len()) });
        }
        let t: i64 = rec[0].parse().map_err(|e| Error::Parse { line, msg: format!("t_ns: {e}") })?;
        let mut v = [0.0f64; 6];
        for (j, x) in v.iter_mut().enumerate() {
            *x = rec[j + 1]
                .parse()
                .map_err(|e| Error::Parse { line, msg: format!("{}: {e}", IMU_HEADER[j + 1]) })?;
            if !x.is_finite() {
                return Err(Error::Parse { line, msg: format!("{} is not finite", IMU_HEADER[j + 1]) });
            }
        }
        if let Some(&prev) = stamps.last() {
            if t <= prev {
                return Err(Error::Format(format!("line {line}: timestamp {t} does not increase (previous {prev})")));
            }
        }
        stamps.push(t);
        raw.push(v);
    }
    let origin_ns = *stamps.first().ok_or_else(|| Error::Format("IMU file has no samples".into()))?;
    let samples = stamps
        .iter()
        .zip(&raw)
        .map(|(&t, v)| {
            ImuSample::new(ns_to_seconds(t, origin_ns), Vector3::new(v[0], v[1], v[2]), Vector3::new(v[3], v[4], v[5]))
        })
        .collect();
    Ok(ImuStream { samples, origin_ns })
}

/// Writes readings with the given nanosecond stamps.
pub fn write_imu_csv(path: impl AsRef<Path>, stamps_ns: &[i64], samples: &[ImuSample]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let wrap = |e: csv::Error| Error::Format(e.to_string());
    w.write_record(IMU_HEADER).map_err(wrap)?;
    for (t, s) in stamps_ns.iter().zip(samples) {
        w.write_record(&[
            t.to_string(),
            s.gyro.x.to_string(),
            s.gyro.y.to_string(),
            s.gyro.z.to_string(),
            s.accel.x.to_string(),
            s.accel.y.to_string(),
            s.accel.z.to_string(),
        ])
        .map_err(wrap)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// One JSON object per line.
pub fn write_detections(path: impl AsRef<Path>, records: &[DetectionRecord]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| Error::Format(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_detection_records(reader: impl std::io::Read) -> Result<Vec<DetectionRecord>> {
    let mut out = Vec::new();
    for (k, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = k + 1;
        let line = line.map_err(|e| Error::Parse { line: line_no, msg: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: DetectionRecord =
            serde_json::from_str(&line).map_err(|e| Error::Parse { line: line_no, msg: e.to_string() })?;
        out.push(rec);
    }
    Ok(out)
}

/// Groups records by timestamp into frames, checking ids against the board
/// and rejecting duplicate `(frame, camera, id)` triples.
pub fn frames_from_records(
    records: &[DetectionRecord],
    board: &BoardGeometry,
    origin_ns: i64,
) -> Result<Vec<FrameDetections>> {
    let mut by_time: BTreeMap<i64, Vec<&DetectionRecord>> = BTreeMap::new();
    for r in records {
        by_time.entry(r.t_ns).or_default().push(r);
    }
    let mut frames = Vec::with_capacity(by_time.len());
    for (frame_index, (t_ns, recs)) in by_time.into_iter().enumerate() {
        let mut seen = HashSet::new();
        let mut observations = Vec::new();
        for r in recs {
            if r.cam > 1 {
                return Err(Error::Validation(format!("t_ns {t_ns}: camera index {} (only 0 and 1)", r.cam)));
            }
            for c in &r.corners {
                if board.corner(c.id).is_none() {
                    return Err(Error::Validation(format!(
                        "t_ns {t_ns}, cam {}: corner id {} not on a {}x{} board",
                        r.cam, c.id, board.rows, board.cols
                    )));
                }
                if !(c.u.is_finite() && c.v.is_finite()) {
                    return Err(Error::Validation(format!("t_ns {t_ns}, cam {}: non-finite pixel", r.cam)));
                }
                if !seen.insert((r.cam, c.id)) {
                    return Err(Error::Validation(format!(
                        "t_ns {t_ns}, cam {}: corner id {} appears twice",
                        r.cam, c.id
                    )));
                }
                observations.push(CornerObservation {
                    frame_index,
                    camera_index: r.cam,
                    corner_id: c.id,
                    pixel: c.pixel(),
                });
            }
        }
        frames.push(FrameDetections { camera_time: ns_to_seconds(t_ns, origin_ns), observations });
    }
    Ok(frames)
}

/// Reads detections and assembles frames; times are relative to
/// `origin_ns`.
pub fn load_detections(path: impl AsRef<Path>, board: &BoardGeometry, origin_ns: i64) -> Result<Vec<FrameDetections>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    frames_from_records(&read_detection_records(file)?, board, origin_ns)
}
