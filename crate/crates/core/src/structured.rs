//! Grammar for structured model outputs.
//!
//! ```text
//! output      := ws think? ws "<Answer>" payload "</Answer>" ws
//! think       := "<Think>" text "</Think>"
//! grounding   := ws "[" ws real ws "," ws real ws "]" ws
//! highlight   := ws "[" ws ( pair ( ws "," ws pair )* )? ws "]" ws
//! pair        := "(" ws int ws "," ws real ws ")"
//! real        := [+-]? digit+ ( "." digit+ )?
//! ```
//!
//! The think block is required under [`Schema::ThinkAnswer`] and forbidden
//! under [`Schema::AnswerOnly`]. Tags match ASCII case-insensitively; the
//! emitter always writes capitalized tags and three fractional digits.
//!
//! Structure and meaning are separate: `<Answer>[7.8, 3.2]</Answer>` is well
//! formed but carries no payload, since the interval is reversed.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::temporal::{SaliencyTrack, TemporalError, TimeInterval, SALIENT_THRESHOLD};

const THINK_OPEN: &str = "<think>";
const THINK_CLOSE: &str = "</think>";
const ANSWER_OPEN: &str = "<answer>";
const ANSWER_CLOSE: &str = "</answer>";

/// Output structure a solution must follow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schema {
    AnswerOnly,
    ThinkAnswer,
}

/// Which payload grammar the answer block uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Grounding,
    Highlight,
}

/// Predicted salient clips with their scores, in answer order.
#[derive(Debug, Clone, PartialEq)]
pub struct HighlightAnswer {
    clips: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum HighlightAnswerError {
    #[error("score {score} for clip {clip} is outside [0, 1]")]
    ScoreOutOfRange { clip: usize, score: f64 },
    #[error("clip {0} listed more than once")]
    DuplicateClip(usize),
    #[error("clip {clip} is outside a track of {len} clips")]
    ClipOutOfRange { clip: usize, len: usize },
    #[error(transparent)]
    Track(#[from] TemporalError),
}

impl HighlightAnswer {
    pub fn new(clips: Vec<(usize, f64)>) -> Result<Self, HighlightAnswerError> {
        let mut seen = BTreeSet::new();
        for &(clip, score) in &clips {
            if !(0.0..=1.0).contains(&score) {
                return Err(HighlightAnswerError::ScoreOutOfRange { clip, score });
            }
            if !seen.insert(clip) {
                return Err(HighlightAnswerError::DuplicateClip(clip));
            }
        }
        Ok(Self { clips })
    }

    pub fn clips(&self) -> &[(usize, f64)] {
        &self.clips
    }

    /// Dense track over `num_clips` clips; unlisted clips score 0.
    pub fn to_track(
        &self,
        num_clips: usize,
        clip_len: f64,
    ) -> Result<SaliencyTrack, HighlightAnswerError> {
        let mut scores = alloc::vec![0.0; num_clips];
        for &(clip, score) in &self.clips {
            if clip >= num_clips {
                return Err(HighlightAnswerError::ClipOutOfRange {
                    clip,
                    len: num_clips,
                });
            }
            scores[clip] = score;
        }
        Ok(SaliencyTrack::new(clip_len, scores)?)
    }

    /// Clips whose listed score reaches the salient threshold.
    pub fn salient_set(&self) -> BTreeSet<usize> {
        self.clips
            .iter()
            .filter(|(_, s)| *s >= SALIENT_THRESHOLD)
            .map(|(c, _)| *c)
            .collect()
    }
}

/// A semantically valid answer.
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Interval(TimeInterval),
    Saliency(HighlightAnswer),
}

impl Payload {
    pub fn task(&self) -> Task {
        match self {
            Payload::Interval(_) => Task::Grounding,
            Payload::Saliency(_) => Task::Highlight,
        }
    }
}

/// Result of parsing one output string. Parsing never fails outright.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedOutput {
    pub think_text: Option<String>,
    pub answer_payload: Option<Payload>,
    pub well_formed: bool,
}

impl ParsedOutput {
    fn malformed() -> Self {
        Self {
            think_text: None,
            answer_payload: None,
            well_formed: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EmitError {
    #[error("think text supplied for an answer-only schema")]
    SchemaMismatch,
    #[error("think text contains a closing think tag")]
    InvalidThinkText,
    #[error("non-finite value in payload")]
    NonFinite,
}

/// Parses `raw` under `schema`, using the payload grammar of `task`.
pub fn parse_output(raw: &str, schema: Schema, task: Task) -> ParsedOutput {
    let body = raw.trim_ascii();
    let (think_text, rest) = match schema {
        Schema::ThinkAnswer => {
            let Some(after_open) = strip_prefix_ci(body, THINK_OPEN) else {
                return ParsedOutput::malformed();
            };
            let Some(close) = find_ci(after_open, THINK_CLOSE) else {
                return ParsedOutput::malformed();
            };
            let think = &after_open[..close];
            let rest = after_open[close + THINK_CLOSE.len()..].trim_ascii_start();
            (Some(String::from(think)), rest)
        }
        Schema::AnswerOnly => (None, body),
    };
    let Some(after_open) = strip_prefix_ci(rest, ANSWER_OPEN) else {
        return ParsedOutput::malformed();
    };
    let Some(inner) = strip_suffix_ci(after_open, ANSWER_CLOSE) else {
        return ParsedOutput::malformed();
    };
    match parse_payload(inner, task) {
        Some(payload) => ParsedOutput {
            think_text,
            answer_payload: payload,
            well_formed: true,
        },
        None => ParsedOutput::malformed(),
    }
}

/// Finds the first answer block anywhere in `raw` and decodes its payload,
/// ignoring every other structural requirement.
pub fn extract_answer(raw: &str, task: Task) -> Option<Payload> {
    let open = find_ci(raw, ANSWER_OPEN)?;
    let after = &raw[open + ANSWER_OPEN.len()..];
    let close = find_ci(after, ANSWER_CLOSE)?;
    parse_payload(&after[..close], task).flatten()
}

/// Canonical rendering of a payload.
pub fn emit_output(
    payload: &Payload,
    think_text: Option<&str>,
    schema: Schema,
) -> Result<String, EmitError> {
    let mut out = String::new();
    match schema {
        Schema::AnswerOnly if think_text.is_some() => return Err(EmitError::SchemaMismatch),
        Schema::AnswerOnly => {}
        Schema::ThinkAnswer => {
            let think = think_text.unwrap_or("");
            if find_ci(think, THINK_CLOSE).is_some() {
                return Err(EmitError::InvalidThinkText);
            }
            out.push_str("<Think>");
            out.push_str(think);
            out.push_str("</Think>");
        }
    }
    out.push_str("<Answer>");
    write_payload(&mut out, payload)?;
    out.push_str("</Answer>");
    Ok(out)
}

pub(crate) fn write_payload(out: &mut String, payload: &Payload) -> Result<(), EmitError> {
    match payload {
        Payload::Interval(iv) => {
            let _ = write!(out, "[{:.3}, {:.3}]", iv.start(), iv.end());
        }
        Payload::Saliency(answer) => {
            out.push('[');
            for (k, &(clip, score)) in answer.clips().iter().enumerate() {
                if !score.is_finite() {
                    return Err(EmitError::NonFinite);
                }
                if k > 0 {
                    out.push_str(", ");
                }
                let _ = write!(out, "({clip}, {score:.3})");
            }
            out.push(']');
        }
    }
    Ok(())
}

/// `None` when the grammar fails; `Some(None)` when it holds but the values
/// do not form a valid payload.
fn parse_payload(text: &str, task: Task) -> Option<Option<Payload>> {
    let mut cur = Cursor::new(text);
    let payload = match task {
        Task::Grounding => {
            cur.ws();
            cur.expect(b'[')?;
            cur.ws();
            let start = cur.real()?;
            cur.ws();
            cur.expect(b',')?;
            cur.ws();
            let end = cur.real()?;
            cur.ws();
            cur.expect(b']')?;
            TimeInterval::new(start, end).ok().map(Payload::Interval)
        }
        Task::Highlight => {
            cur.ws();
            cur.expect(b'[')?;
            cur.ws();
            let mut pairs = Vec::new();
            if !cur.eat(b']') {
                loop {
                    cur.expect(b'(')?;
                    cur.ws();
                    let clip = cur.int()?;
                    cur.ws();
                    cur.expect(b',')?;
                    cur.ws();
                    let score = cur.real()?;
                    cur.ws();
                    cur.expect(b')')?;
                    pairs.push((clip, score));
                    cur.ws();
                    if cur.eat(b']') {
                        break;
                    }
                    cur.expect(b',')?;
                    cur.ws();
                }
            }
            HighlightAnswer::new(pairs).ok().map(Payload::Saliency)
        }
    };
    cur.ws();
    cur.at_end().then_some(payload)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    text: &'a str,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(text: &'a str) -> Self {
        Self {
            bytes: text.as_bytes(),
            text,
            pos: 0,
        }
    }

    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    fn ws(&mut self) {
        while self.peek().is_some_and(|b| b.is_ascii_whitespace()) {
            self.pos += 1;
        }
    }

    fn eat(&mut self, byte: u8) -> bool {
        if self.peek() == Some(byte) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, byte: u8) -> Option<()> {
        self.eat(byte).then_some(())
    }

    fn at_end(&self) -> bool {
        self.pos == self.bytes.len()
    }

    fn digits(&mut self) -> usize {
        let from = self.pos;
        while self.peek().is_some_and(|b| b.is_ascii_digit()) {
            self.pos += 1;
        }
        self.pos - from
    }

    fn int(&mut self) -> Option<usize> {
        let from = self.pos;
        if self.digits() == 0 {
            return None;
        }
        self.text[from..self.pos].parse().ok()
    }

    fn real(&mut self) -> Option<f64> {
        let from = self.pos;
        if !self.eat(b'-') {
            self.eat(b'+');
        }
        if self.digits() == 0 {
            return None;
        }
        if self.eat(b'.') && self.digits() == 0 {
            return None;
        }
        let value: f64 = self.text[from..self.pos].parse().ok()?;
        value.is_finite().then_some(value)
    }
}

fn strip_prefix_ci<'a>(s: &'a str, prefix: &str) -> Option<&'a str> {
    let head = s.as_bytes().get(..prefix.len())?;
    head.eq_ignore_ascii_case(prefix.as_bytes())
        .then(|| &s[prefix.len()..])
}

fn strip_suffix_ci<'a>(s: &'a str, suffix: &str) -> Option<&'a str> {
    let cut = s.len().checked_sub(suffix.len())?;
    s.as_bytes()[cut..]
        .eq_ignore_ascii_case(suffix.as_bytes())
        .then(|| &s[..cut])
}

fn find_ci(hay: &str, needle: &str) -> Option<usize> {
    hay.as_bytes()
        .windows(needle.len())
        .position(|w| w.eq_ignore_ascii_case(needle.as_bytes()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn interval(s: f64, e: f64) -> Payload {
        Payload::Interval(TimeInterval::new(s, e).unwrap())
    }

    #[test]
    fn parses_think_answer_grounding() {
        let p = parse_output(
            "<Think>x</Think><Answer>[3.2, 7.8]</Answer>",
            Schema::ThinkAnswer,
            Task::Grounding,
        );
        assert!(p.well_formed);
        assert_eq!(p.think_text.as_deref(), Some("x"));
        assert_eq!(p.answer_payload, Some(interval(3.2, 7.8)));
    }

    #[test]
    fn tags_are_case_insensitive() {
        let p = parse_output("<answer>[3.2, 7.8]</answer>", Schema::AnswerOnly, Task::Grounding);
        assert!(p.well_formed);
        assert_eq!(p.answer_payload, Some(interval(3.2, 7.8)));
        let q = parse_output(
            "  <THINK>a</think>\n <Answer>[0,1]</ANSWER>\t",
            Schema::ThinkAnswer,
            Task::Grounding,
        );
        assert!(q.well_formed);
    }

    #[test]
    fn reversed_interval_is_well_formed_without_payload() {
        let p = parse_output("<Answer>[7.8, 3.2]</Answer>", Schema::AnswerOnly, Task::Grounding);
        assert!(p.well_formed);
        assert_eq!(p.answer_payload, None);
    }

    #[test]
    fn schema_mismatches_are_malformed() {
        let think = "<Think>a</Think><Answer>[1.0, 2.5]</Answer>";
        assert!(!parse_output(think, Schema::AnswerOnly, Task::Grounding).well_formed);
        let bare = "<Answer>[1.0, 2.5]</Answer>";
        assert!(!parse_output(bare, Schema::ThinkAnswer, Task::Grounding).well_formed);
        for bad in [
            "<Answer>[1.0 2.5]</Answer>",
            "<Answer>[1.0, 2.5]",
            "<Answer>[1.0, 2.5]</Answer> trailing",
            "<Answer>[1., 2.5]</Answer>",
            "<Answer>[inf, 2.5]</Answer>",
            "<Answer>[1e3, 2.5]</Answer>",
            "Answer: [1.0, 2.5]",
            "",
        ] {
            assert!(
                !parse_output(bad, Schema::AnswerOnly, Task::Grounding).well_formed,
                "{bad}"
            );
        }
    }

    #[test]
    fn highlight_payloads() {
        let p = parse_output(
            "<Answer>[(0, 0.250), (3,1)]</Answer>",
            Schema::AnswerOnly,
            Task::Highlight,
        );
        assert!(p.well_formed);
        let Some(Payload::Saliency(ans)) = p.answer_payload else {
            panic!("expected saliency payload");
        };
        assert_eq!(ans.clips(), &[(0, 0.25), (3, 1.0)]);
        let empty = parse_output("<Answer>[ ]</Answer>", Schema::AnswerOnly, Task::Highlight);
        assert!(empty.well_formed);
        let dup = parse_output(
            "<Answer>[(1, 0.5), (1, 0.7)]</Answer>",
            Schema::AnswerOnly,
            Task::Highlight,
        );
        assert!(dup.well_formed && dup.answer_payload.is_none());
        let trailing = parse_output("<Answer>[(1, 0.5),]</Answer>", Schema::AnswerOnly, Task::Highlight);
        assert!(!trailing.well_formed);
    }

    #[test]
    fn emitter_examples() {
        let s = emit_output(&interval(1.0, 2.5), Some("a"), Schema::ThinkAnswer).unwrap();
        assert_eq!(s, "<Think>a</Think><Answer>[1.000, 2.500]</Answer>");
        let z = emit_output(&interval(0.0, 0.0), None, Schema::AnswerOnly).unwrap();
        assert_eq!(z, "<Answer>[0.000, 0.000]</Answer>");
        assert_eq!(
            emit_output(&interval(0.0, 1.0), Some("a"), Schema::AnswerOnly),
            Err(EmitError::SchemaMismatch)
        );
        assert_eq!(
            emit_output(&interval(0.0, 1.0), Some("x</THINK>"), Schema::ThinkAnswer),
            Err(EmitError::InvalidThinkText)
        );
        let h = Payload::Saliency(HighlightAnswer::new(alloc::vec![(2, 0.5), (5, 1.0)]).unwrap());
        assert_eq!(
            emit_output(&h, None, Schema::AnswerOnly).unwrap(),
            "<Answer>[(2, 0.500), (5, 1.000)]</Answer>"
        );
    }

    #[test]
    fn lenient_extraction_ignores_structure() {
        let raw = "<Think>unterminated <Answer>[2.0, 4.0]</Answer>";
        assert!(!parse_output(raw, Schema::ThinkAnswer, Task::Grounding).well_formed);
        assert_eq!(extract_answer(raw, Task::Grounding), Some(interval(2.0, 4.0)));
        assert_eq!(extract_answer("Answer: [2.0, 4.0]", Task::Grounding), None);
    }

    #[test]
    fn answer_to_track() {
        let ans = HighlightAnswer::new(alloc::vec![(1, 0.9), (2, 0.3)]).unwrap();
        let track = ans.to_track(4, 2.0).unwrap();
        assert_eq!(track.scores(), &[0.0, 0.9, 0.3, 0.0]);
        assert!(ans.to_track(2, 2.0).is_err());
        assert_eq!(ans.salient_set().into_iter().collect::<Vec<_>>(), alloc::vec![1]);
    }
}
