//! Unified diffs for same-length line replacements.

use std::fmt::Write as _;

const CONTEXT: usize = 3;
pub const REDACTED: &str = "[REDACTED]";

/// `line` with every occurrence of each non-empty secret replaced, longest
/// secrets first.
pub fn redact(line: &str, secrets: &[&str]) -> String {
    let mut sorted: Vec<&str> = secrets.iter().copied().filter(|s| !s.is_empty()).collect();
    sorted.sort_by_key(|s| std::cmp::Reverse(s.len()));
    let mut out = line.to_string();
    for s in sorted {
        if out.contains(s) {
            out = out.replace(s, REDACTED);
        }
    }
    out
}

/// Diff of two equally long line lists with three lines of context.
/// Every emitted line passes through [`redact`].
pub fn file_diff(path: &str, old: &[&str], new: &[&str], final_newline: bool, secrets: &[&str]) -> String {
    assert_eq!(old.len(), new.len(), "replacement diffs keep the line count");
    let changed: Vec<usize> = (0..old.len()).filter(|&i| old[i] != new[i]).collect();
    if changed.is_empty() {
        return String::new();
    }
    let mut groups: Vec<(usize, usize)> = Vec::new();
    for &c in &changed {
        match groups.last_mut() {
            Some((_, last)) if c - *last <= 2 * CONTEXT + 1 => *last = c,
            _ => groups.push((c, c)),
        }
    }
    let n = old.len();
    let mut out = format!("--- a/{path}\n+++ b/{path}\n");
    let emit = |out: &mut String, sign: char, text: &str, i: usize| {
        let _ = writeln!(out, "{sign}{}", redact(text, secrets));
        if i == n - 1 && !final_newline {
            out.push_str("\\ No newline at end of file\n");
        }
    };
    for (first, last) in groups {
        let start = first.saturating_sub(CONTEXT);
        let end = (last + CONTEXT).min(n - 1);
        let len = end - start + 1;
        let _ = writeln!(out, "@@ -{},{len} +{},{len} @@", start + 1, start + 1);
        let mut i = start;
        while i <= end {
            if old[i] == new[i] {
                emit(&mut out, ' ', old[i], i);
                i += 1;
                continue;
            }
            let run_end = (i..=end).find(|&j| old[j] == new[j]).unwrap_or(end + 1);
            for j in i..run_end {
                emit(&mut out, '-', old[j], j);
            }
            for j in i..run_end {
                emit(&mut out, '+', new[j], j);
            }
            i = run_end;
        }
    }
    out
}
