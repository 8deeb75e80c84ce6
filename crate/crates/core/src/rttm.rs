//! RTTM and UEM file I/O.
//!
//! RTTM lines are whitespace-separated NIST records; only `SPEAKER` records
//! carry turns and other record types are skipped, as are blank lines and
//! `;;` comments. On write, times are serialized with fixed 3-decimal
//! precision (RTTM is a millisecond format) and the channel field is fixed to
//! `1`; channel identity is carried out-of-band, one file per channel.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::timeline::{SpeakerTurn, Timeline, TimelineError, Uem};

fn io_err(path: &Path, source: std::io::Error) -> TimelineError {
    TimelineError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> TimelineError {
    TimelineError::Parse {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

/// Reads an RTTM file into one normalized [`Timeline`] per session id,
/// sorted by session id.
pub fn read_rttm(path: impl AsRef<Path>) -> Result<Vec<Timeline>, TimelineError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut sessions: BTreeMap<String, Vec<SpeakerTurn>> = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with(";;") {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields[0] != "SPEAKER" {
            continue;
        }
        if fields.len() < 8 {
            return Err(parse_err(
                path,
                lineno,
                format!("expected at least 8 fields, got {}", fields.len()),
            ));
        }
        let session = fields[1];
        let tbeg: f64 = fields[3]
            .parse()
            .map_err(|_| parse_err(path, lineno, format!("bad onset {:?}", fields[3])))?;
        let tdur: f64 = fields[4]
            .parse()
            .map_err(|_| parse_err(path, lineno, format!("bad duration {:?}", fields[4])))?;
        let speaker = fields[7];
        let turn = SpeakerTurn::new(speaker, tbeg, tbeg + tdur).map_err(|e| {
            parse_err(path, lineno, format!("invalid turn: {e}"))
        })?;
        sessions.entry(session.to_string()).or_default().push(turn);
    }
    Ok(sessions
        .into_iter()
        .map(|(id, turns)| Timeline::new(id, turns).normalize())
        .collect())
}

/// Serializes timelines as RTTM. Durations that would round to `0.000` are
/// written as `0.001` so every written file reads back.
pub fn write_rttm(timelines: &[Timeline], path: impl AsRef<Path>) -> Result<(), TimelineError> {
    let path = path.as_ref();
    let mut out = String::new();
    for tl in timelines {
        for t in &tl.turns {
            let dur = (t.duration().max(1e-3) * 1000.0).round() / 1000.0;
            let _ = writeln!(
                out,
                "SPEAKER {} 1 {:.3} {:.3} <NA> <NA> {} <NA> <NA>",
                tl.session_id, t.start, dur, t.speaker
            );
        }
    }
    std::fs::write(path, out).map_err(|e| io_err(path, e))
}

/// Reads a UEM file into one [`Uem`] per session id, sorted by session id.
pub fn read_uem(path: impl AsRef<Path>) -> Result<Vec<Uem>, TimelineError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut sessions: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with(";;") {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < 4 {
            return Err(parse_err(
                path,
                lineno,
                format!("expected 4 fields, got {}", fields.len()),
            ));
        }
        let tbeg: f64 = fields[2]
            .parse()
            .map_err(|_| parse_err(path, lineno, format!("bad onset {:?}", fields[2])))?;
        let tend: f64 = fields[3]
            .parse()
            .map_err(|_| parse_err(path, lineno, format!("bad offset {:?}", fields[3])))?;
        if tend <= tbeg {
            return Err(parse_err(path, lineno, "region end precedes start"));
        }
        sessions
            .entry(fields[0].to_string())
            .or_default()
            .push((tbeg, tend));
    }
    sessions
        .into_iter()
        .map(|(id, regions)| Uem::new(id, regions))
        .collect()
}

/// Serializes UEMs, fixed 3-decimal precision, channel fixed to `1`.
pub fn write_uem(uems: &[Uem], path: impl AsRef<Path>) -> Result<(), TimelineError> {
    let path = path.as_ref();
    let mut out = String::new();
    for uem in uems {
        for &(s, e) in &uem.scored_regions {
            let _ = writeln!(out, "{} 1 {:.3} {:.3}", uem.session_id, s, e);
        }
    }
    std::fs::write(path, out).map_err(|e| io_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rttm_field_semantics() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.rttm");
        std::fs::write(&p, "SPEAKER S26 1 10.500 2.000 <NA> <NA> spk1 <NA> <NA>\n").unwrap();
        let tls = read_rttm(&p).unwrap();
        assert_eq!(tls.len(), 1);
        assert_eq!(tls[0].session_id, "S26");
        assert_eq!(tls[0].turns.len(), 1);
        let t = &tls[0].turns[0];
        assert_eq!(t.speaker, "spk1");
        assert!((t.start - 10.5).abs() < 1e-12);
        assert!((t.end - 12.5).abs() < 1e-12);
    }

    #[test]
    fn rttm_parse_error_carries_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.rttm");
        std::fs::write(&p, "SPEAKER S26 1 bad 2.0 <NA> <NA> spk1 <NA> <NA>\n").unwrap();
        match read_rttm(&p) {
            Err(TimelineError::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn rttm_skips_comments_and_other_records() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("mixed.rttm");
        std::fs::write(
            &p,
            ";; header\nNON-SPEECH S1 1 0.0 1.0 <NA> <NA> x <NA> <NA>\nSPEAKER S1 1 0.000 1.000 <NA> <NA> a <NA> <NA>\n",
        )
        .unwrap();
        let tls = read_rttm(&p).unwrap();
        assert_eq!(tls[0].turns.len(), 1);
    }

    #[test]
    fn missing_file_is_io_error() {
        match read_rttm("/nonexistent/really/not.rttm") {
            Err(TimelineError::Io { .. }) => {}
            other => panic!("expected io error, got {other:?}"),
        }
    }

    #[test]
    fn uem_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.uem");
        let uem = Uem::new("S1", vec![(0.0, 30.0), (40.0, 50.0)]).unwrap();
        write_uem(std::slice::from_ref(&uem), &p).unwrap();
        let back = read_uem(&p).unwrap();
        assert_eq!(back, vec![uem]);
    }

    prop_compose! {
        fn arb_turn()(spk in 0usize..4, start in 0u32..100_000u32, dur in 1u32..5_000u32)
            -> SpeakerTurn
        {
            // Millisecond grid: survives fixed 3-decimal serialization.
            SpeakerTurn::new(
                format!("spk{spk}"),
                f64::from(start) * 1e-3,
                f64::from(start + dur) * 1e-3,
            )
            .unwrap()
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn rttm_roundtrip(turns in prop::collection::vec(arb_turn(), 0..40)) {
            let t = Timeline::new("sess", turns);
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("t.rttm");
            write_rttm(std::slice::from_ref(&t), &p).unwrap();
            let back = read_rttm(&p).unwrap();
            let expect = t.normalize();
            if expect.turns.is_empty() {
                prop_assert!(back.is_empty());
            } else {
                prop_assert_eq!(back.len(), 1);
                let got = &back[0];
                prop_assert_eq!(got.turns.len(), expect.turns.len());
                for (g, e) in got.turns.iter().zip(&expect.turns) {
                    prop_assert_eq!(&g.speaker, &e.speaker);
                    prop_assert!((g.start - e.start).abs() < 5e-4);
                    prop_assert!((g.end - e.end).abs() < 5e-4);
                }
            }
        }
    }
}
