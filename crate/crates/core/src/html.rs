//! A small error-tolerant HTML tokenizer that reports byte offsets.
//!
//! It follows the HTML tokenization rules closely enough to find the same
//! `<script>` elements a browser would (comments, raw-text elements and the
//! script-data escape states included) while never re-serializing anything:
//! every token carries the exact byte span it came from.

use crate::model::ByteRange;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Attribute {
    /// Lowercased attribute name.
    pub name: String,
    /// Entity-decoded value; empty for bare attributes.
    pub value: String,
    /// Raw value span in the source, quotes excluded.
    pub value_range: Option<ByteRange>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tag {
    /// Lowercased tag name.
    pub name: String,
    pub attrs: Vec<Attribute>,
    pub range: ByteRange,
    pub self_closing: bool,
}

impl Tag {
    /// First attribute with this name, as browsers ignore duplicates.
    pub fn attr(&self, name: &str) -> Option<&Attribute> {
        self.attrs.iter().find(|a| a.name == name)
    }

    pub fn attr_value(&self, name: &str) -> Option<&str> {
        self.attr(name).map(|a| a.value.as_str())
    }
}

/// An element whose content is not tokenized as markup (script, style,
/// textarea, ...).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawElement {
    pub open: Tag,
    pub content: ByteRange,
    /// Close tag span; `None` when the document ended first.
    pub close: Option<ByteRange>,
}

impl RawElement {
    /// Open tag through close tag (or end of input).
    pub fn range(&self) -> ByteRange {
        ByteRange::new(
            self.open.range.start,
            self.close.map_or(self.content.end, |c| c.end),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Token {
    StartTag(Tag),
    EndTag { name: String, range: ByteRange },
    Raw(RawElement),
    Text(ByteRange),
    /// Comments, doctypes, processing instructions and other markup
    /// declarations.
    Comment(ByteRange),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Warning {
    pub offset: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct Tokens {
    pub tokens: Vec<Token>,
    pub warnings: Vec<Warning>,
}

const RAWTEXT: &[&str] = &[
    "script", "style", "xmp", "iframe", "noembed", "noframes", "noscript", "textarea", "title",
];

fn is_space(b: u8) -> bool {
    matches!(b, b'\t' | b'\n' | 0x0c | b'\r' | b' ')
}

fn find(hay: &[u8], from: usize, needle: &[u8]) -> Option<usize> {
    if from > hay.len() {
        return None;
    }
    hay[from..]
        .windows(needle.len())
        .position(|w| w == needle)
        .map(|p| p + from)
}

fn starts_with_ci(hay: &[u8], at: usize, needle: &[u8]) -> bool {
    hay.len() >= at + needle.len() && hay[at..at + needle.len()].eq_ignore_ascii_case(needle)
}

/// True when `<`/`</` + `name` at `at` is followed by a tag delimiter.
fn tag_name_at(hay: &[u8], at: usize, name: &[u8]) -> bool {
    starts_with_ci(hay, at, name)
        && hay
            .get(at + name.len())
            .is_some_and(|&b| is_space(b) || b == b'/' || b == b'>')
}

pub fn tokenize(input: &[u8]) -> Tokens {
    let mut t = Tokenizer {
        src: input,
        pos: 0,
        text_start: 0,
        out: Tokens::default(),
    };
    t.run();
    t.out
}

struct Tokenizer<'a> {
    src: &'a [u8],
    pos: usize,
    text_start: usize,
    out: Tokens,
}

impl<'a> Tokenizer<'a> {
    fn warn(&mut self, offset: usize, message: impl Into<String>) {
        self.out.warnings.push(Warning {
            offset,
            message: message.into(),
        });
    }

    fn flush_text(&mut self, end: usize) {
        if end > self.text_start {
            self.out
                .tokens
                .push(Token::Text(ByteRange::new(self.text_start, end)));
        }
    }

    fn run(&mut self) {
        let src = self.src;
        while self.pos < src.len() {
            let Some(lt) = src[self.pos..].iter().position(|&b| b == b'<') else {
                break;
            };
            let at = self.pos + lt;
            let next = src.get(at + 1).copied();
            match next {
                Some(b'!') => {
                    self.flush_text(at);
                    self.markup_declaration(at);
                }
                Some(b'?') => {
                    self.flush_text(at);
                    self.bogus_comment(at, at + 2);
                }
                Some(b'/') => match src.get(at + 2) {
                    Some(b) if b.is_ascii_alphabetic() => {
                        self.flush_text(at);
                        self.end_tag(at);
                    }
                    Some(b'>') => {
                        // `</>` is dropped entirely
                        self.flush_text(at);
                        self.pos = at + 3;
                        self.text_start = self.pos;
                    }
                    Some(_) => {
                        self.flush_text(at);
                        self.bogus_comment(at, at + 2);
                    }
                    None => self.pos = at + 2,
                },
                Some(b) if b.is_ascii_alphabetic() => {
                    self.flush_text(at);
                    self.start_tag(at);
                }
                _ => self.pos = at + 1,
            }
        }
        self.flush_text(src.len());
    }

    fn markup_declaration(&mut self, at: usize) {
        let src = self.src;
        if src[at..].starts_with(b"<!--") {
            let body = at + 4;
            // `<!-->` and `<!--->` close immediately
            let end = if src[body..].starts_with(b">") {
                Some(body + 1)
            } else if src[body..].starts_with(b"->") {
                Some(body + 2)
            } else {
                find(src, body, b"-->").map(|p| p + 3).or_else(|| {
                    find(src, body, b"--!>").map(|p| p + 4)
                })
            };
            let end = end.unwrap_or_else(|| {
                self.warn(at, "unterminated comment");
                src.len()
            });
            self.out.tokens.push(Token::Comment(ByteRange::new(at, end)));
            self.pos = end;
            self.text_start = end;
        } else {
            self.bogus_comment(at, at + 2);
        }
    }

    fn bogus_comment(&mut self, at: usize, from: usize) {
        let src = self.src;
        let end = match src[from.min(src.len())..].iter().position(|&b| b == b'>') {
            Some(p) => from + p + 1,
            None => src.len(),
        };
        self.out.tokens.push(Token::Comment(ByteRange::new(at, end)));
        self.pos = end;
        self.text_start = end;
    }

    fn end_tag(&mut self, at: usize) {
        let src = self.src;
        let (name, after) = read_name(src, at + 2);
        match skip_attributes(src, after) {
            Some((end, _, _)) => {
                self.out.tokens.push(Token::EndTag {
                    name,
                    range: ByteRange::new(at, end),
                });
                self.pos = end;
                self.text_start = end;
            }
            None => {
                self.warn(at, "end of input inside end tag");
                self.pos = src.len();
                self.text_start = src.len();
            }
        }
    }

    fn start_tag(&mut self, at: usize) {
        let src = self.src;
        let (name, after) = read_name(src, at + 1);
        let Some((end, attrs, self_closing)) = skip_attributes(src, after) else {
            self.warn(at, format!("end of input inside <{name}> tag"));
            self.pos = src.len();
            self.text_start = src.len();
            return;
        };
        let tag = Tag {
            name,
            attrs,
            range: ByteRange::new(at, end),
            self_closing,
        };
        self.pos = end;
        self.text_start = end;

        if tag.name == "plaintext" {
            let content = ByteRange::new(end, src.len());
            self.out.tokens.push(Token::Raw(RawElement {
                open: tag,
                content,
                close: None,
            }));
            self.pos = src.len();
            self.text_start = src.len();
            return;
        }
        if !RAWTEXT.contains(&tag.name.as_str()) {
            self.out.tokens.push(Token::StartTag(tag));
            return;
        }

        let close_at = if tag.name == "script" {
            script_close(src, end)
        } else {
            raw_close(src, end, tag.name.as_bytes())
        };
        match close_at {
            Some(close_start) => {
                let close_end = match skip_attributes(src, close_start + 2 + tag.name.len()) {
                    Some((e, _, _)) => e,
                    None => src.len(),
                };
                self.out.tokens.push(Token::Raw(RawElement {
                    open: tag,
                    content: ByteRange::new(end, close_start),
                    close: Some(ByteRange::new(close_start, close_end)),
                }));
                self.pos = close_end;
                self.text_start = close_end;
            }
            None => {
                self.warn(at, format!("<{}> element not closed before end of input", tag.name));
                self.out.tokens.push(Token::Raw(RawElement {
                    open: tag,
                    content: ByteRange::new(end, src.len()),
                    close: None,
                }));
                self.pos = src.len();
                self.text_start = src.len();
            }
        }
    }
}

fn read_name(src: &[u8], from: usize) -> (String, usize) {
    let mut i = from;
    while i < src.len() && !is_space(src[i]) && src[i] != b'/' && src[i] != b'>' {
        i += 1;
    }
    (
        String::from_utf8_lossy(&src[from..i]).to_ascii_lowercase(),
        i,
    )
}

/// Scans attributes from `from` up to and including the closing `>`.
/// Returns `None` when input ends inside the tag.
fn skip_attributes(src: &[u8], from: usize) -> Option<(usize, Vec<Attribute>, bool)> {
    let mut attrs = Vec::new();
    let mut i = from;
    let mut self_closing = false;
    loop {
        while i < src.len() && (is_space(src[i]) || src[i] == b'/') {
            self_closing = src[i] == b'/';
            i += 1;
        }
        if i >= src.len() {
            return None;
        }
        if src[i] == b'>' {
            return Some((i + 1, attrs, self_closing));
        }
        self_closing = false;
        // attribute name; a leading '=' is part of the name
        let name_start = i;
        i += 1;
        while i < src.len() && !is_space(src[i]) && !matches!(src[i], b'/' | b'>' | b'=') {
            i += 1;
        }
        let name = String::from_utf8_lossy(&src[name_start..i]).to_ascii_lowercase();
        let mut j = i;
        while j < src.len() && is_space(src[j]) {
            j += 1;
        }
        if j < src.len() && src[j] == b'=' {
            j += 1;
            while j < src.len() && is_space(src[j]) {
                j += 1;
            }
            if j >= src.len() {
                return None;
            }
            let (vs, ve, next) = match src[j] {
                q @ (b'"' | b'\'') => {
                    let close = src[j + 1..].iter().position(|&b| b == q)?;
                    (j + 1, j + 1 + close, j + 2 + close)
                }
                b'>' => (j, j, j),
                _ => {
                    let mut k = j;
                    while k < src.len() && !is_space(src[k]) && src[k] != b'>' {
                        k += 1;
                    }
                    (j, k, k)
                }
            };
            attrs.push(Attribute {
                name,
                value: decode_entities(&String::from_utf8_lossy(&src[vs..ve])),
                value_range: Some(ByteRange::new(vs, ve)),
            });
            i = next;
        } else {
            attrs.push(Attribute {
                name,
                value: String::new(),
                value_range: None,
            });
        }
    }
}

/// Start of the `</name` that closes a raw-text element.
fn raw_close(src: &[u8], from: usize, name: &[u8]) -> Option<usize> {
    let mut i = from;
    while let Some(p) = find(src, i, b"</") {
        if tag_name_at(src, p + 2, name) {
            return Some(p);
        }
        i = p + 2;
    }
    None
}

/// Start of the `</script` that closes a script element, honoring the
/// escaped and double-escaped script-data states entered via `<!--`.
fn script_close(src: &[u8], from: usize) -> Option<usize> {
    #[derive(PartialEq)]
    enum State {
        Data,
        Escaped,
        DoubleEscaped,
    }
    let mut state = State::Data;
    let mut i = from;
    while i < src.len() {
        match state {
            State::Data => {
                let p = i + src[i..].iter().position(|&b| b == b'<')?;
                if src.get(p + 1) == Some(&b'/') && tag_name_at(src, p + 2, b"script") {
                    return Some(p);
                }
                if src[p..].starts_with(b"<!--") {
                    // the dashes of `<!--` may close immediately as `<!-->`
                    state = State::Escaped;
                    i = p + 2;
                } else {
                    i = p + 1;
                }
            }
            State::Escaped | State::DoubleEscaped => {
                let b = src[i];
                if b == b'-' && src[i..].starts_with(b"-->") {
                    state = State::Data;
                    i += 3;
                } else if b == b'<' {
                    if src.get(i + 1) == Some(&b'/') && tag_name_at(src, i + 2, b"script") {
                        if state == State::Escaped {
                            return Some(i);
                        }
                        state = State::Escaped;
                        i += 8;
                    } else if state == State::Escaped && tag_name_at(src, i + 1, b"script") {
                        state = State::DoubleEscaped;
                        i += 7;
                    } else {
                        i += 1;
                    }
                } else {
                    i += 1;
                }
            }
        }
    }
    None
}

/// Decodes the handful of character references that show up in attribute
/// values; unknown references are left as written.
pub fn decode_entities(raw: &str) -> String {
    if !raw.contains('&') {
        return raw.to_owned();
    }
    let mut out = String::with_capacity(raw.len());
    let mut rest = raw;
    while let Some(amp) = rest.find('&') {
        out.push_str(&rest[..amp]);
        rest = &rest[amp..];
        let semi = rest[1..].find(';').map(|p| p + 1).filter(|&p| p <= 10);
        let decoded = semi.and_then(|semi| {
            let ent = &rest[1..semi];
            let ch = match ent {
                "amp" => Some('&'),
                "lt" => Some('<'),
                "gt" => Some('>'),
                "quot" => Some('"'),
                "apos" => Some('\''),
                "nbsp" => Some('\u{a0}'),
                _ if ent.starts_with("#x") || ent.starts_with("#X") => {
                    u32::from_str_radix(&ent[2..], 16).ok().and_then(char::from_u32)
                }
                _ if ent.starts_with('#') => ent[1..].parse().ok().and_then(char::from_u32),
                _ => None,
            };
            ch.map(|c| (c, semi + 1))
        });
        match decoded {
            Some((c, used)) => {
                out.push(c);
                rest = &rest[used..];
            }
            None => {
                out.push('&');
                rest = &rest[1..];
            }
        }
    }
    out.push_str(rest);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raws(html: &str) -> Vec<RawElement> {
        tokenize(html.as_bytes())
            .tokens
            .into_iter()
            .filter_map(|t| match t {
                Token::Raw(r) => Some(r),
                _ => None,
            })
            .collect()
    }

    #[test]
    fn finds_script_with_attributes() {
        let html = r#"<p>hi</p><script type="text/javascript" src='a.js?x=1&amp;y=2'></script>"#;
        let r = raws(html);
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].open.attr_value("src"), Some("a.js?x=1&y=2"));
        assert_eq!(&html[r[0].range().start..r[0].range().end], &html[9..]);
    }

    #[test]
    fn gt_inside_quoted_attribute() {
        let html = r#"<script data-x="a>b">go()</script>"#;
        let r = raws(html);
        assert_eq!(&html[r[0].content.start..r[0].content.end], "go()");
    }

    #[test]
    fn comment_hides_script() {
        assert!(raws("<!-- <script>x()</script> -->").is_empty());
        assert!(raws("<!--x--><script>y</script>").len() == 1);
    }

    #[test]
    fn script_text_is_opaque() {
        let html = "<script>if (a<b) { s = '<p>'; }</script><script>z</script>";
        let r = raws(html);
        assert_eq!(r.len(), 2);
        assert_eq!(
            &html[r[0].content.start..r[0].content.end],
            "if (a<b) { s = '<p>'; }"
        );
    }

    #[test]
    fn double_escaped_script_data() {
        let html = r#"<script><!-- document.write("<script>x</script>") --></script><p>"#;
        let r = raws(html);
        assert_eq!(r.len(), 1);
        assert_eq!(
            &html[r[0].content.start..r[0].content.end],
            r#"<!-- document.write("<script>x</script>") -->"#
        );
    }

    #[test]
    fn unterminated_script_warns() {
        let t = tokenize(b"<script>var a");
        assert_eq!(t.warnings.len(), 1);
        match &t.tokens[0] {
            Token::Raw(r) => assert!(r.close.is_none()),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn close_tag_case_and_spacing() {
        let html = "<SCRIPT>a()</Script ><script>b()</scriptx></script>";
        let r = raws(html);
        assert_eq!(r.len(), 2);
        assert_eq!(&html[r[1].content.start..r[1].content.end], "b()</scriptx>");
    }

    #[test]
    fn entity_decoding() {
        assert_eq!(decode_entities("a&amp;b&#38;c&#x26;d&bogus;"), "a&b&c&d&bogus;");
        assert_eq!(decode_entities("&"), "&");
    }
}
