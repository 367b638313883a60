use std::io::{self, BufRead, Write};

use compaxos_core::checker::{History, HistoryEvent};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HistoryIoError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("line {line}: {source}")]
    Parse { line: usize, source: serde_json::Error },
}

/// One JSON object per line, in event order.
pub fn write_history<W: Write>(mut w: W, h: &History) -> io::Result<()> {
    for e in &h.events {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

/// Blank lines are skipped.
pub fn read_history<R: BufRead>(r: R) -> Result<History, HistoryIoError> {
    let mut events = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let e: HistoryEvent = serde_json::from_str(&line).map_err(|source| HistoryIoError::Parse { line: i + 1, source })?;
        events.push(e);
    }
    Ok(History { events })
}

#[cfg(test)]
mod tests {
    use super::*;
    use compaxos_core::checker::HistoryOp;

    #[test]
    fn lines_match_the_documented_shape() {
        let mut h = History::new();
        h.invoke(3, 1, 0, HistoryOp::Write { key: "k".into(), value: "v".into() });
        h.respond(9, 1, 0, HistoryOp::Write { key: "k".into(), value: "v".into() }, Some("OK".into()));
        h.invoke(10, 2, 0, HistoryOp::Read { key: "k".into() });
        let mut buf = Vec::new();
        write_history(&mut buf, &h).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], r#"{"t":3,"kind":"inv","client":1,"seq":0,"op":{"type":"write","key":"k","value":"v"}}"#);
        assert_eq!(lines[1], r#"{"t":9,"kind":"res","client":1,"seq":0,"op":{"type":"write","key":"k","value":"v"},"out":"OK"}"#);
        assert_eq!(lines[2], r#"{"t":10,"kind":"inv","client":2,"seq":0,"op":{"type":"read","key":"k"}}"#);
        assert_eq!(read_history(text.as_bytes()).unwrap(), h);
    }

    #[test]
    fn bad_line_reports_its_number() {
        let err = read_history("\n{\"t\":1}\n".as_bytes()).unwrap_err();
        assert!(matches!(err, HistoryIoError::Parse { line: 2, .. }));
    }
}
