//! Corpus records: `"AMGS"`, version byte, little-endian `u32` body length,
//! body, `'\n'`. The body is a run of tag/length/value fields; unknown tags
//! are skipped so newer writers stay readable.

use std::path::Path;

use super::Sample;
use crate::fem::{DiffusionPattern, Exponents, PatternKind};
use crate::pooling::View;
use crate::timing::TimingStats;
use crate::{Error, Result};

pub const FRAME_MAGIC: &[u8; 4] = b"AMGS";
pub const FRAME_VERSION: u8 = 1;
const HEADER_LEN: usize = 4 + 1 + 4;

const TAG_PATTERN: u8 = 1;
const TAG_EXPONENTS: u8 = 2;
const TAG_LEVEL: u8 = 3;
const TAG_THETA: u8 = 4;
const TAG_RHO: u8 = 5;
const TAG_ITERATIONS: u8 = 6;
const TAG_CONVERGED: u8 = 7;
const TAG_TIMING: u8 = 8;
const TAG_VIEW: u8 = 9;

fn field(body: &mut Vec<u8>, tag: u8, value: &[u8]) {
    body.push(tag);
    body.extend_from_slice(&(value.len() as u32).to_le_bytes());
    body.extend_from_slice(value);
}

fn f64s(vals: &[f64]) -> Vec<u8> {
    vals.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn encode_frame(s: &Sample) -> Vec<u8> {
    let mut body = Vec::new();
    field(&mut body, TAG_PATTERN, &[s.pattern.kind.code()]);
    let exps = match s.pattern.exponents {
        Exponents::Single(e) => vec![e],
        Exponents::Pair(a, b) => vec![a, b],
    };
    field(&mut body, TAG_EXPONENTS, &f64s(&exps));
    field(&mut body, TAG_LEVEL, &s.level.to_le_bytes());
    field(&mut body, TAG_THETA, &s.theta.to_le_bytes());
    field(&mut body, TAG_RHO, &s.rho.to_le_bytes());
    field(&mut body, TAG_ITERATIONS, &(s.iterations as u64).to_le_bytes());
    field(&mut body, TAG_CONVERGED, &[s.converged as u8]);
    if let Some(t) = &s.timing {
        let mut v = f64s(&[t.mean, t.std, t.min, t.max]);
        v.extend_from_slice(&(t.repetitions as u64).to_le_bytes());
        field(&mut body, TAG_TIMING, &v);
    }
    let mut v = Vec::new();
    v.extend_from_slice(&(s.view.m() as u32).to_le_bytes());
    v.extend_from_slice(&(s.view.source_n() as u64).to_le_bytes());
    v.extend_from_slice(&s.view.to_bytes());
    field(&mut body, TAG_VIEW, &v);

    let mut out = Vec::with_capacity(HEADER_LEN + body.len() + 1);
    out.extend_from_slice(FRAME_MAGIC);
    out.push(FRAME_VERSION);
    out.extend_from_slice(&(body.len() as u32).to_le_bytes());
    out.extend_from_slice(&body);
    out.push(b'\n');
    out
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

fn read_f64(b: &[u8], at: usize) -> f64 {
    f64::from_le_bytes(b[at..at + 8].try_into().expect("8 bytes"))
}

fn read_u64(b: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(b[at..at + 8].try_into().expect("8 bytes"))
}

fn expect_len(tag: u8, v: &[u8], len: usize) -> Result<()> {
    if v.len() != len {
        return Err(bad(format!("field {tag}: {} bytes, expected {len}", v.len())));
    }
    Ok(())
}

fn decode_body(body: &[u8]) -> Result<Sample> {
    let mut kind = None;
    let mut exps = None;
    let mut level = None;
    let mut theta = None;
    let mut rho = None;
    let mut iterations = None;
    let mut converged = None;
    let mut timing = None;
    let mut view = None;
    let mut pos = 0;
    while pos < body.len() {
        if body.len() - pos < 5 {
            return Err(bad("truncated field header"));
        }
        let tag = body[pos];
        let len = u32::from_le_bytes(body[pos + 1..pos + 5].try_into().expect("4 bytes")) as usize;
        pos += 5;
        if body.len() - pos < len {
            return Err(bad(format!("field {tag} overruns the record")));
        }
        let v = &body[pos..pos + len];
        pos += len;
        match tag {
            TAG_PATTERN => {
                expect_len(tag, v, 1)?;
                kind = Some(PatternKind::from_code(v[0]).ok_or_else(|| bad(format!("pattern code {}", v[0])))?);
            }
            TAG_EXPONENTS => {
                exps = Some(match v.len() {
                    8 => Exponents::Single(read_f64(v, 0)),
                    16 => Exponents::Pair(read_f64(v, 0), read_f64(v, 8)),
                    n => return Err(bad(format!("exponent field of {n} bytes"))),
                });
            }
            TAG_LEVEL => {
                expect_len(tag, v, 4)?;
                level = Some(u32::from_le_bytes(v.try_into().expect("4 bytes")));
            }
            TAG_THETA => {
                expect_len(tag, v, 8)?;
                theta = Some(read_f64(v, 0));
            }
            TAG_RHO => {
                expect_len(tag, v, 8)?;
                rho = Some(read_f64(v, 0));
            }
            TAG_ITERATIONS => {
                expect_len(tag, v, 8)?;
                iterations = Some(read_u64(v, 0) as usize);
            }
            TAG_CONVERGED => {
                expect_len(tag, v, 1)?;
                converged = Some(v[0] != 0);
            }
            TAG_TIMING => {
                expect_len(tag, v, 40)?;
                timing = Some(TimingStats {
                    mean: read_f64(v, 0),
                    std: read_f64(v, 8),
                    min: read_f64(v, 16),
                    max: read_f64(v, 24),
                    repetitions: read_u64(v, 32) as usize,
                });
            }
            TAG_VIEW => {
                if v.len() < 12 {
                    return Err(bad("truncated view"));
                }
                let m = u32::from_le_bytes(v[..4].try_into().expect("4 bytes")) as usize;
                let n = read_u64(v, 4) as usize;
                view = Some(View::from_bytes(m, n, &v[12..])?);
            }
            _ => {}
        }
    }
    let missing = |name: &str| bad(format!("record without {name}"));
    Ok(Sample {
        pattern: DiffusionPattern {
            kind: kind.ok_or_else(|| missing("pattern"))?,
            exponents: exps.ok_or_else(|| missing("exponents"))?,
        },
        level: level.ok_or_else(|| missing("level"))?,
        theta: theta.ok_or_else(|| missing("theta"))?,
        rho: rho.ok_or_else(|| missing("rho"))?,
        iterations: iterations.ok_or_else(|| missing("iterations"))?,
        converged: converged.ok_or_else(|| missing("converged flag"))?,
        timing,
        view: view.ok_or_else(|| missing("view"))?,
    })
}

/// Decodes the frame at the start of `bytes`. Returns `Ok(None)` when the
/// bytes end before the frame does.
pub fn decode_frame(bytes: &[u8]) -> Result<Option<(Sample, usize)>> {
    if bytes.len() < HEADER_LEN {
        if FRAME_MAGIC.starts_with(&bytes[..bytes.len().min(4)]) {
            return Ok(None);
        }
        return Err(bad("bad record magic"));
    }
    if &bytes[..4] != FRAME_MAGIC {
        return Err(bad("bad record magic"));
    }
    if bytes[4] != FRAME_VERSION {
        return Err(bad(format!("unsupported record version {}", bytes[4])));
    }
    let len = u32::from_le_bytes(bytes[5..9].try_into().expect("4 bytes")) as usize;
    let end = HEADER_LEN + len + 1;
    if bytes.len() < end {
        return Ok(None);
    }
    if bytes[end - 1] != b'\n' {
        return Err(bad("record not newline terminated"));
    }
    let s = decode_body(&bytes[HEADER_LEN..end - 1])?;
    Ok(Some((s, end)))
}

/// Decodes all complete frames and returns them with the byte length they
/// cover. A cut-off final frame is tolerated; corruption elsewhere is an error.
pub fn scan_frames(bytes: &[u8]) -> Result<(Vec<Sample>, usize)> {
    let mut out = Vec::new();
    let mut pos = 0;
    while pos < bytes.len() {
        match decode_frame(&bytes[pos..])? {
            Some((s, used)) => {
                out.push(s);
                pos += used;
            }
            None => break,
        }
    }
    Ok((out, pos))
}

/// Reads a complete corpus; a trailing partial frame is an error here.
pub fn read_corpus(path: &Path) -> Result<Vec<Sample>> {
    let bytes = std::fs::read(path)?;
    let (samples, used) = scan_frames(&bytes)?;
    if used != bytes.len() {
        return Err(bad(format!(
            "{}: incomplete record at byte {used}",
            path.display()
        )));
    }
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(pair: bool, timed: bool) -> Sample {
        let pattern = if pair {
            DiffusionPattern::pair(PatternKind::Checkerboard4, 0.5, 3.0)
        } else {
            DiffusionPattern::single(PatternKind::FourStrides, 9.5)
        };
        Sample {
            pattern,
            level: 5,
            theta: 0.145,
            rho: 0.0612345678901234,
            iterations: 7,
            converged: true,
            timing: timed.then_some(TimingStats {
                mean: 1.5e-3,
                std: 2e-5,
                min: 1.4e-3,
                max: 1.6e-3,
                repetitions: 50,
            }),
            view: View::from_parts(2, 31, vec![1.0, -0.25, f64::MIN_POSITIVE, 3.0], vec![4, 2, 0, 9]).unwrap(),
        }
    }

    #[test]
    fn frames_round_trip() {
        for pair in [false, true] {
            for timed in [false, true] {
                let s = sample(pair, timed);
                let bytes = encode_frame(&s);
                assert_eq!(*bytes.last().unwrap(), b'\n');
                let (back, used) = decode_frame(&bytes).unwrap().unwrap();
                assert_eq!(used, bytes.len());
                assert_eq!(back, s);
                assert_eq!(encode_frame(&back), bytes);
            }
        }
    }

    #[test]
    fn unknown_fields_are_skipped() {
        let s = sample(false, false);
        let mut bytes = encode_frame(&s);
        let extra = [42u8, 3, 0, 0, 0, 7, 7, 7];
        let body_len = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize + extra.len();
        bytes[5..9].copy_from_slice(&(body_len as u32).to_le_bytes());
        let nl = bytes.pop().unwrap();
        bytes.extend_from_slice(&extra);
        bytes.push(nl);
        assert_eq!(decode_frame(&bytes).unwrap().unwrap().0, s);
    }

    #[test]
    fn truncated_tail_is_reported_by_length() {
        let a = encode_frame(&sample(false, false));
        let b = encode_frame(&sample(true, true));
        let mut all = a.clone();
        all.extend_from_slice(&b);
        for cut in 0..b.len() {
            let (s, used) = scan_frames(&all[..a.len() + cut]).unwrap();
            assert_eq!(s.len(), 1);
            assert_eq!(used, a.len());
        }
        assert_eq!(scan_frames(&all).unwrap().0.len(), 2);
    }

    #[test]
    fn corruption_is_an_error() {
        let mut bytes = encode_frame(&sample(false, false));
        bytes[0] = b'X';
        assert!(scan_frames(&bytes).is_err());
        let mut bytes = encode_frame(&sample(false, false));
        bytes[4] = 9;
        assert!(decode_frame(&bytes).is_err());
        let mut bytes = encode_frame(&sample(false, false));
        *bytes.last_mut().unwrap() = b' ';
        assert!(decode_frame(&bytes).is_err());
    }
}
