//! ER7 message model, parser and canonical serializer.
//!
//! A segment keeps its fields 1-based: `fields[0]` is field 1. For MSH the
//! first two fields hold the raw field separator and encoding characters,
//! so `MSH-9` is `fields[8]` like every other segment.

use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EncodingChars {
    pub field: char,
    pub component: char,
    pub repetition: char,
    pub escape: char,
    pub subcomponent: char,
}

impl Default for EncodingChars {
    fn default() -> Self {
        EncodingChars { field: '|', component: '^', repetition: '~', escape: '\\', subcomponent: '&' }
    }
}

impl EncodingChars {
    /// MSH-2: component, repetition, escape, subcomponent.
    pub fn msh2(&self) -> String {
        [self.component, self.repetition, self.escape, self.subcomponent].iter().collect()
    }

    fn all(&self) -> [char; 5] {
        [self.field, self.component, self.repetition, self.escape, self.subcomponent]
    }

    fn valid(&self) -> bool {
        let all = self.all();
        all.iter().enumerate().all(|(i, c)| {
            !c.is_alphanumeric() && !matches!(c, '\r' | '\n') && !all[i + 1..].contains(c)
        })
    }
}

/// One repetition: components of subcomponents.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Repetition(pub Vec<Vec<String>>);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Field(pub Vec<Repetition>);

impl Field {
    pub fn empty() -> Self {
        Field::value("")
    }

    pub fn value(v: impl Into<String>) -> Self {
        Field(vec![Repetition(vec![vec![v.into()]])])
    }

    pub fn components<S: AsRef<str>>(parts: &[S]) -> Self {
        Field(vec![Repetition(parts.iter().map(|p| vec![p.as_ref().to_string()]).collect())])
    }

    /// First repetition, 1-based component, first subcomponent.
    pub fn component(&self, n: usize) -> Option<&str> {
        self.0.first()?.0.get(n.checked_sub(1)?)?.first().map(String::as_str)
    }

    pub fn first(&self) -> &str {
        self.component(1).unwrap_or("")
    }

    pub fn is_empty(&self) -> bool {
        self.0.iter().all(|r| r.0.iter().all(|c| c.iter().all(String::is_empty)))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub id: String,
    pub fields: Vec<Field>,
}

impl Segment {
    pub fn new(id: impl Into<String>, fields: Vec<Field>) -> Self {
        Segment { id: id.into(), fields }
    }

    /// 1-based field access.
    pub fn field(&self, n: usize) -> Option<&Field> {
        self.fields.get(n.checked_sub(1)?)
    }

    pub fn value(&self, n: usize) -> &str {
        self.field(n).map(Field::first).unwrap_or("")
    }

    pub fn set(&mut self, n: usize, field: Field) {
        if self.fields.len() < n {
            self.fields.resize(n, Field::empty());
        }
        self.fields[n - 1] = field;
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Hl7Message {
    pub encoding: EncodingChars,
    pub segments: Vec<Segment>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum Hl7Error {
    #[error("malformed message: {0}")]
    MalformedMessage(String),
    #[error("message truncated: {0}")]
    TruncatedMessage(String),
    #[error("invalid message: {0}")]
    InvalidMessage(String),
}

impl Hl7Message {
    /// A message whose MSH carries `msh_fields` starting at MSH-3.
    pub fn new(encoding: EncodingChars, msh_fields: Vec<Field>) -> Self {
        let mut fields = vec![Field::value(encoding.field.to_string()), Field::value(encoding.msh2())];
        fields.extend(msh_fields);
        Hl7Message { encoding, segments: vec![Segment::new("MSH", fields)] }
    }

    pub fn msh(&self) -> Option<&Segment> {
        self.segments.first().filter(|s| s.id == "MSH")
    }

    /// MSH-9 as (`ORU`, `R01`).
    pub fn message_type(&self) -> (&str, &str) {
        match self.msh().and_then(|m| m.field(9)) {
            Some(f) => (f.component(1).unwrap_or(""), f.component(2).unwrap_or("")),
            None => ("", ""),
        }
    }

    pub fn control_id(&self) -> &str {
        self.msh().map(|m| m.value(10)).unwrap_or("")
    }

    pub fn segments_with_id<'a>(&'a self, id: &'a str) -> impl Iterator<Item = &'a Segment> + 'a {
        self.segments.iter().filter(move |s| s.id == id)
    }

    pub fn validate(&self) -> Result<(), Hl7Error> {
        let invalid = |m: &str| Err(Hl7Error::InvalidMessage(m.to_string()));
        if !self.encoding.valid() {
            return invalid("encoding characters must be distinct non-alphanumeric characters");
        }
        let Some(msh) = self.msh() else { return invalid("first segment must be MSH") };
        if msh.value(1) != self.encoding.field.to_string() || msh.value(2) != self.encoding.msh2() {
            return invalid("MSH-1/MSH-2 disagree with encoding characters");
        }
        if let Some(s) = self.segments.iter().find(|s| !valid_segment_id(&s.id)) {
            return invalid(&format!("segment id `{}` is not 3 alphanumeric characters", s.id));
        }
        if self.segments[1..].iter().any(|s| s.id == "MSH") {
            return invalid("MSH may only appear first");
        }
        Ok(())
    }

    /// Same structure with trailing empty elements trimmed at every level.
    pub fn canonical(&self) -> Hl7Message {
        let mut m = self.clone();
        for (i, seg) in m.segments.iter_mut().enumerate() {
            let keep = if i == 0 { 2 } else { 0 };
            let start = if i == 0 { 2 } else { 0 };
            for f in seg.fields.iter_mut().skip(start) {
                trim_field(f);
            }
            while seg.fields.len() > keep && seg.fields.last().is_some_and(Field::is_empty) {
                seg.fields.pop();
            }
        }
        m
    }
}

fn trim_field(f: &mut Field) {
    for rep in f.0.iter_mut() {
        for comp in rep.0.iter_mut() {
            while comp.len() > 1 && comp.last().is_some_and(String::is_empty) {
                comp.pop();
            }
        }
        while rep.0.len() > 1 && rep.0.last().is_some_and(|c| c.iter().all(String::is_empty)) {
            rep.0.pop();
        }
    }
    while f.0.len() > 1 && f.0.last().is_some_and(|r| r.0.iter().all(|c| c.iter().all(String::is_empty))) {
        f.0.pop();
    }
}

fn valid_segment_id(id: &str) -> bool {
    id.len() == 3 && id.bytes().all(|b| b.is_ascii_uppercase() || b.is_ascii_digit())
}

pub fn parse_er7(bytes: &[u8]) -> Result<Hl7Message, Hl7Error> {
    let malformed = |m: &str| Hl7Error::MalformedMessage(m.to_string());
    if bytes.is_empty() {
        return Err(malformed("empty input"));
    }
    let text = std::str::from_utf8(bytes).map_err(|_| malformed("not UTF-8"))?;
    let lines: Vec<&str> = text.split(['\r', '\n']).filter(|l| !l.is_empty()).collect();
    let Some(first) = lines.first() else { return Err(malformed("no segments")) };
    if !first.starts_with("MSH") {
        return Err(malformed("message does not start with MSH"));
    }
    let mut chars = first.chars().skip(3);
    let field = chars.next().ok_or_else(|| Hl7Error::TruncatedMessage("MSH header".into()))?;
    let enc: Vec<char> = chars.take_while(|c| *c != field).collect();
    if enc.len() < 4 {
        let at_end = first.chars().skip(4).all(|c| c != field);
        return Err(if at_end {
            Hl7Error::TruncatedMessage("MSH-2 shorter than 4 characters".into())
        } else {
            malformed("MSH-2 must hold exactly 4 encoding characters")
        });
    }
    if enc.len() > 4 {
        return Err(malformed("MSH-2 must hold exactly 4 encoding characters"));
    }
    let encoding = EncodingChars { field, component: enc[0], repetition: enc[1], escape: enc[2], subcomponent: enc[3] };
    if !encoding.valid() {
        return Err(malformed("encoding characters must be distinct and non-alphanumeric"));
    }

    let mut segments = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        let mut parts = line.split(field);
        let id = parts.next().unwrap_or("");
        if !valid_segment_id(id) {
            return Err(malformed(&format!("segment id `{id}` must be 3 characters")));
        }
        let mut fields = Vec::new();
        if i == 0 {
            fields.push(Field::value(field.to_string()));
            fields.push(Field::value(parts.next().unwrap_or("").to_string()));
        } else if id == "MSH" {
            return Err(malformed("MSH may only appear first"));
        }
        fields.extend(parts.map(|raw| parse_field(raw, &encoding)));
        segments.push(Segment { id: id.to_string(), fields });
    }
    Ok(Hl7Message { encoding, segments })
}

fn parse_field(raw: &str, enc: &EncodingChars) -> Field {
    Field(
        raw.split(enc.repetition)
            .map(|rep| {
                Repetition(
                    rep.split(enc.component)
                        .map(|comp| comp.split(enc.subcomponent).map(|s| unescape(s, enc)).collect())
                        .collect(),
                )
            })
            .collect(),
    )
}

/// Decodes `\F\ \S\ \T\ \R\ \E\`; any other escape sequence, or an
/// unterminated one, stays verbatim.
pub fn unescape(s: &str, enc: &EncodingChars) -> String {
    if !s.contains(enc.escape) {
        return s.to_string();
    }
    let mut out = String::with_capacity(s.len());
    let mut rest = s;
    while let Some(pos) = rest.find(enc.escape) {
        out.push_str(&rest[..pos]);
        let after = &rest[pos + enc.escape.len_utf8()..];
        match after.find(enc.escape) {
            Some(end) => {
                let code = &after[..end];
                let decoded = match code {
                    "F" => Some(enc.field),
                    "S" => Some(enc.component),
                    "T" => Some(enc.subcomponent),
                    "R" => Some(enc.repetition),
                    "E" => Some(enc.escape),
                    _ => None,
                };
                match decoded {
                    Some(c) => out.push(c),
                    None => {
                        out.push(enc.escape);
                        out.push_str(code);
                        out.push(enc.escape);
                    }
                }
                rest = &after[end + enc.escape.len_utf8()..];
            }
            None => {
                out.push_str(&rest[pos..]);
                rest = "";
            }
        }
    }
    out.push_str(rest);
    out
}

pub fn escape(s: &str, enc: &EncodingChars) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        let code = if c == enc.field {
            'F'
        } else if c == enc.component {
            'S'
        } else if c == enc.subcomponent {
            'T'
        } else if c == enc.repetition {
            'R'
        } else if c == enc.escape {
            'E'
        } else {
            out.push(c);
            continue;
        };
        out.push(enc.escape);
        out.push(code);
        out.push(enc.escape);
    }
    out
}

/// Canonical ER7: every segment ends in `\r`, trailing empties trimmed.
pub fn serialize_er7(message: &Hl7Message) -> Result<Vec<u8>, Hl7Error> {
    message.validate()?;
    let m = message.canonical();
    let enc = &m.encoding;
    let mut out = String::new();
    for (i, seg) in m.segments.iter().enumerate() {
        out.push_str(&seg.id);
        let fields = if i == 0 {
            out.push(enc.field);
            out.push_str(&enc.msh2());
            &seg.fields[2..]
        } else {
            &seg.fields[..]
        };
        for f in fields {
            out.push(enc.field);
            write_field(&mut out, f, enc);
        }
        out.push('\r');
    }
    Ok(out.into_bytes())
}

fn write_field(out: &mut String, f: &Field, enc: &EncodingChars) {
    for (ri, rep) in f.0.iter().enumerate() {
        if ri > 0 {
            out.push(enc.repetition);
        }
        for (ci, comp) in rep.0.iter().enumerate() {
            if ci > 0 {
                out.push(enc.component);
            }
            for (si, sub) in comp.iter().enumerate() {
                if si > 0 {
                    out.push(enc.subcomponent);
                }
                out.push_str(&escape(sub, enc));
            }
        }
    }
}

impl fmt::Display for Hl7Message {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match serialize_er7(self) {
            Ok(b) => f.write_str(&String::from_utf8_lossy(&b).replace('\r', "\n")),
            Err(e) => write!(f, "<{e}>"),
        }
    }
}
