//! The append-only `events.jsonl` file.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use super::event::{parse_event_line, Event};
use super::StoreError;

/// Reads every event in `path`. A missing file is an empty log.
///
/// A final line without a trailing newline that fails to parse is an append
/// torn by a crash before it was acknowledged; it is reported through
/// `torn_tail` so the writer can truncate it. Any other bad line is corruption.
pub fn read_events(path: &Path) -> Result<ReadLog, StoreError> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Ok(ReadLog::default());
        }
        Err(e) => return Err(e.into()),
    };
    let mut reader = BufReader::new(file);
    let mut out = ReadLog::default();
    let mut buf = String::new();
    let mut offset = 0u64;
    let mut line_no = 0usize;
    loop {
        buf.clear();
        let n = reader.read_line(&mut buf)?;
        if n == 0 {
            break;
        }
        line_no += 1;
        let complete = buf.ends_with('\n');
        let text = buf.trim_end_matches(['\n', '\r']);
        if text.trim().is_empty() {
            offset += n as u64;
            continue;
        }
        let parsed = parse_event_line(text).and_then(|p| {
            let seq = p.seq.ok_or("missing `seq`")?;
            let ts = p.event.ts.ok_or("missing `ts`")?;
            Ok(Event {
                seq,
                ts,
                category: p.event.category,
                actor: p.event.actor,
                action: p.event.action,
            })
        });
        match parsed {
            Ok(event) => out.events.push(event),
            Err(_) if !complete => {
                out.torn_tail = Some(offset);
                break;
            }
            Err(reason) => {
                return Err(StoreError::CorruptLog {
                    seq: None,
                    line: Some(line_no),
                    reason: reason.to_string(),
                })
            }
        }
        offset += n as u64;
    }
    Ok(out)
}

#[derive(Debug, Default)]
pub struct ReadLog {
    pub events: Vec<Event>,
    /// Byte offset where an unacknowledged partial line starts.
    pub torn_tail: Option<u64>,
}

/// Appends events durably: every call is flushed and synced before it returns.
pub struct EventLog {
    path: PathBuf,
    writer: BufWriter<File>,
}

impl EventLog {
    /// Opens `path` for appending, truncating at `torn_tail` if given.
    pub fn open(path: &Path, torn_tail: Option<u64>) -> Result<Self, StoreError> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)?;
        }
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(path)?;
        if let Some(at) = torn_tail {
            file.set_len(at)?;
        }
        ensure_trailing_newline(&mut file)?;
        Ok(EventLog {
            path: path.to_path_buf(),
            writer: BufWriter::new(file),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&mut self, event: &Event) -> Result<(), StoreError> {
        self.append_all(std::slice::from_ref(event))
    }

    pub fn append_all(&mut self, events: &[Event]) -> Result<(), StoreError> {
        for event in events {
            self.writer.write_all(event.to_json_line().as_bytes())?;
            self.writer.write_all(b"\n")?;
        }
        self.writer.flush()?;
        self.writer.get_ref().sync_data()?;
        Ok(())
    }
}

fn ensure_trailing_newline(file: &mut File) -> std::io::Result<()> {
    let len = file.metadata()?.len();
    if len == 0 {
        return Ok(());
    }
    file.seek(SeekFrom::Start(len - 1))?;
    let mut last = [0u8; 1];
    file.read_exact(&mut last)?;
    if last[0] != b'\n' {
        file.write_all(b"\n")?;
    }
    Ok(())
}
