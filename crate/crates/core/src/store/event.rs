use serde::{Deserialize, Serialize};

use crate::model::{canonicalize_song, Advice, Category, ModelError, SongKey, UserId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Delegate,
    Undelegate,
    Vote,
    Unvote,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Action {
    Delegate { target: UserId },
    Undelegate,
    Vote(Advice),
    Unvote(SongKey),
}

impl Action {
    pub fn kind(&self) -> EventKind {
        match self {
            Action::Delegate { .. } => EventKind::Delegate,
            Action::Undelegate => EventKind::Undelegate,
            Action::Vote(_) => EventKind::Vote,
            Action::Unvote(_) => EventKind::Unvote,
        }
    }
}

/// A user action not yet assigned a sequence number.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NewEvent {
    /// UTC milliseconds; `None` means "now" when appended.
    pub ts: Option<i64>,
    pub category: Category,
    pub actor: UserId,
    pub action: Action,
}

impl NewEvent {
    pub fn new(category: Category, actor: UserId, action: Action) -> Self {
        NewEvent {
            ts: None,
            category,
            actor,
            action,
        }
    }

    pub fn at(mut self, ts: i64) -> Self {
        self.ts = Some(ts);
        self
    }
}

/// A logged action.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Event {
    pub seq: u64,
    pub ts: i64,
    pub category: Category,
    pub actor: UserId,
    pub action: Action,
}

impl Event {
    pub fn kind(&self) -> EventKind {
        self.action.kind()
    }

    pub fn to_json_line(&self) -> String {
        let line = EventLine::from_parts(
            Some(self.seq),
            Some(self.ts),
            &self.category,
            &self.actor,
            &self.action,
        );
        serde_json::to_string(&line).expect("event lines always serialize")
    }
}

/// One line of `events.jsonl`. Field order is the on-disk order.
#[derive(Debug, Serialize, Deserialize)]
struct EventLine {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seq: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ts: Option<i64>,
    kind: EventKind,
    category: String,
    actor: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    target: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    artist: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    title: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    media: Option<String>,
}

impl EventLine {
    fn from_parts(
        seq: Option<u64>,
        ts: Option<i64>,
        category: &Category,
        actor: &UserId,
        action: &Action,
    ) -> Self {
        let mut line = EventLine {
            seq,
            ts,
            kind: action.kind(),
            category: category.to_string(),
            actor: actor.to_string(),
            target: None,
            artist: None,
            title: None,
            media: None,
        };
        match action {
            Action::Delegate { target } => line.target = Some(target.to_string()),
            Action::Undelegate => {}
            Action::Vote(advice) => {
                line.artist = Some(advice.song.artist().to_string());
                line.title = Some(advice.song.title().to_string());
                line.media = Some(advice.media_ref.clone());
            }
            Action::Unvote(song) => {
                line.artist = Some(song.artist().to_string());
                line.title = Some(song.title().to_string());
            }
        }
        line
    }
}

fn required(field: Option<String>, name: &str, kind: EventKind) -> Result<String, String> {
    field.ok_or_else(|| format!("{kind:?} event is missing `{name}`"))
}

fn model(e: ModelError) -> String {
    e.to_string()
}

/// A parsed line: the optional sequence number plus the action.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedLine {
    pub seq: Option<u64>,
    pub event: NewEvent,
}

/// Parses one JSON line. Unknown fields are ignored; `seq` and `ts` may be
/// absent (import files need not carry them).
pub fn parse_event_line(line: &str) -> Result<ParsedLine, String> {
    let raw: EventLine = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let kind = raw.kind;
    let category = Category::new(raw.category).map_err(model)?;
    let actor = UserId::new(raw.actor).map_err(model)?;
    let stray = |present: bool, name: &str| -> Result<(), String> {
        if present {
            Err(format!("{kind:?} event must not carry `{name}`"))
        } else {
            Ok(())
        }
    };
    let action = match kind {
        EventKind::Delegate => {
            stray(
                raw.artist.is_some() || raw.title.is_some() || raw.media.is_some(),
                "song fields",
            )?;
            let target = UserId::new(required(raw.target, "target", kind)?).map_err(model)?;
            Action::Delegate { target }
        }
        EventKind::Undelegate => {
            stray(raw.target.is_some(), "target")?;
            stray(
                raw.artist.is_some() || raw.title.is_some() || raw.media.is_some(),
                "song fields",
            )?;
            Action::Undelegate
        }
        EventKind::Vote => {
            stray(raw.target.is_some(), "target")?;
            let song = canonicalize_song(
                &required(raw.artist, "artist", kind)?,
                &required(raw.title, "title", kind)?,
            )
            .map_err(model)?;
            let advice = Advice::new(song, required(raw.media, "media", kind)?).map_err(model)?;
            Action::Vote(advice)
        }
        EventKind::Unvote => {
            stray(
                raw.target.is_some() || raw.media.is_some(),
                "target or media",
            )?;
            let song = canonicalize_song(
                &required(raw.artist, "artist", kind)?,
                &required(raw.title, "title", kind)?,
            )
            .map_err(model)?;
            Action::Unvote(song)
        }
    };
    Ok(ParsedLine {
        seq: raw.seq,
        event: NewEvent {
            ts: raw.ts,
            category,
            actor,
            action,
        },
    })
}

/// Serializes an unsequenced event (as written by generators and exports).
pub fn new_event_json_line(seq: Option<u64>, event: &NewEvent) -> String {
    let line = EventLine::from_parts(seq, event.ts, &event.category, &event.actor, &event.action);
    serde_json::to_string(&line).expect("event lines always serialize")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wire_format_field_names_and_order() {
        let ev = Event {
            seq: 7,
            ts: 1000,
            category: Category::new("jazz").unwrap(),
            actor: UserId::new("A").unwrap(),
            action: Action::Vote(
                Advice::new(
                    canonicalize_song("Miles Davis", "So What").unwrap(),
                    "yt123",
                )
                .unwrap(),
            ),
        };
        assert_eq!(
            ev.to_json_line(),
            r#"{"seq":7,"ts":1000,"kind":"vote","category":"jazz","actor":"A","artist":"miles davis","title":"so what","media":"yt123"}"#
        );
        let parsed = parse_event_line(&ev.to_json_line()).unwrap();
        assert_eq!(parsed.seq, Some(7));
        assert_eq!(parsed.event.action, ev.action);
    }

    #[test]
    fn unknown_fields_are_ignored() {
        let p = parse_event_line(
            r#"{"seq":1,"ts":5,"kind":"delegate","category":"rock","actor":"a","target":"b","extra":true}"#,
        )
        .unwrap();
        assert_eq!(
            p.event.action,
            Action::Delegate {
                target: UserId::new("b").unwrap()
            }
        );
    }

    #[test]
    fn kind_payload_mismatch_is_rejected() {
        assert!(parse_event_line(r#"{"kind":"delegate","category":"rock","actor":"a"}"#).is_err());
        assert!(parse_event_line(
            r#"{"kind":"undelegate","category":"rock","actor":"a","target":"b"}"#
        )
        .is_err());
        assert!(parse_event_line(
            r#"{"kind":"vote","category":"rock","actor":"a","artist":"x","title":"y"}"#
        )
        .is_err());
        assert!(parse_event_line(r#"{"kind":"shout","category":"rock","actor":"a"}"#).is_err());
        assert!(parse_event_line("not json").is_err());
    }
}
