//! Small text helpers shared by observations, prompts and the research log.

/// Truncates `text` to at most `max_chars` characters, keeping a head and a
/// tail joined by an elision marker. Returns the input untouched when it fits.
pub fn head_tail(text: &str, max_chars: usize) -> String {
    let total = text.chars().count();
    if total <= max_chars {
        return text.to_string();
    }
    // The marker length depends on the omitted count; reserve generously.
    let marker_budget = 48.min(max_chars);
    let keep = max_chars - marker_budget;
    let head = keep * 3 / 5;
    let tail = keep - head;
    let omitted = total - head - tail;
    let marker = format!("\n... [{omitted} characters omitted] ...\n");
    debug_assert!(marker.chars().count() <= marker_budget);
    let mut out: String = text.chars().take(head).collect();
    out.push_str(&marker);
    out.extend(text.chars().skip(total - tail));
    out
}

/// Fixed head/tail truncation with explicit sizes, used by the summarizer
/// fallback.
pub fn elide(text: &str, head: usize, tail: usize) -> String {
    let total = text.chars().count();
    if total <= head + tail {
        return text.to_string();
    }
    let omitted = total - head - tail;
    let mut out: String = text.chars().take(head).collect();
    out.push_str(&format!("\n... [{omitted} characters elided] ...\n"));
    out.extend(text.chars().skip(total - tail));
    out
}

/// Keeps the last `max_chars` characters, cut forward to the next line start.
pub fn keep_recent(text: &str, max_chars: usize) -> String {
    let total = text.chars().count();
    if total <= max_chars {
        return text.to_string();
    }
    let tail: String = text.chars().skip(total - max_chars).collect();
    match tail.find('\n') {
        Some(i) if i + 1 < tail.len() => tail[i + 1..].to_string(),
        _ => tail,
    }
}

/// Collapses every whitespace run to one space and trims the ends.
pub fn normalize_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Extracts the body of the first fenced code block (```lang ... ```).
///
/// The body is returned with a trailing newline so it can be written as a
/// file directly. Returns `None` when no closed fence exists.
pub fn extract_code_block(text: &str) -> Option<String> {
    let mut lines = text.lines();
    loop {
        let line = lines.next()?;
        if line.trim_start().starts_with("```") {
            break;
        }
    }
    let mut body = Vec::new();
    for line in lines {
        if line.trim_start().starts_with("```") {
            let mut content = body.join("\n");
            content.push('\n');
            return Some(content);
        }
        body.push(line);
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn head_tail_respects_bound() {
        let text = "x".repeat(10_000);
        let out = head_tail(&text, 2_000);
        assert!(out.chars().count() <= 2_000);
        assert!(out.contains("characters omitted"));
        assert_eq!(head_tail("short", 2_000), "short");
    }

    #[test]
    fn elide_keeps_exact_head_and_tail() {
        let text: String = (0..5000).map(|i| char::from(b'a' + (i % 26) as u8)).collect();
        let out = elide(&text, 2000, 1000);
        assert!(out.starts_with(&text[..2000]));
        assert!(out.ends_with(&text[4000..]));
    }

    #[test]
    fn code_block_extraction() {
        let reply = "Here you go:\n```python\nprint(1)\nx = 2\n```\nDone.";
        assert_eq!(extract_code_block(reply).unwrap(), "print(1)\nx = 2\n");
        assert!(extract_code_block("no fences here").is_none());
        assert!(extract_code_block("```\nunterminated").is_none());
    }

    #[test]
    fn keep_recent_cuts_at_line() {
        let text = "line one\nline two\nline three\n";
        assert_eq!(keep_recent(text, 15), "line three\n");
    }
}
