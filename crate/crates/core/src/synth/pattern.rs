//! Parser and printer for the supported regular-expression subset:
//! literals, `\d \w \s` and escaped punctuation, classes with ranges,
//! groups, alternation, and the quantifiers `? * + {m} {m,} {m,n}`.

use std::collections::BTreeSet;
use std::fmt;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Node {
    Literal(char),
    Class(BTreeSet<char>),
    Concat(Vec<Node>),
    Alternation(Vec<Node>),
    Group(Box<Node>),
    /// `max == None` is unbounded and capped at sampling time.
    Repeat {
        node: Box<Node>,
        min: u32,
        max: Option<u32>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("pattern error at offset {offset}: {message}")]
pub struct PatternError {
    pub offset: usize,
    pub message: String,
}

const METACHARS: &[char] = &['\\', '.', '(', ')', '[', ']', '{', '}', '|', '*', '+', '?', '^', '$'];
const MAX_REPEAT_BOUND: u32 = 1000;

fn digits() -> BTreeSet<char> {
    ('0'..='9').collect()
}

fn word() -> BTreeSet<char> {
    ('a'..='z').chain('A'..='Z').chain('0'..='9').chain(['_']).collect()
}

fn space() -> BTreeSet<char> {
    [' ', '\t', '\n', '\r', '\x0B', '\x0C'].into_iter().collect()
}

pub fn parse_pattern(src: &str) -> Result<Node, PatternError> {
    let mut p = Parser {
        chars: src.chars().collect(),
        pos: 0,
    };
    let node = p.alternation()?;
    if p.pos < p.chars.len() {
        // only a stray `)` stops the top-level alternation early
        return Err(p.error_at(p.pos, "unbalanced ')'"));
    }
    Ok(node)
}

struct Parser {
    chars: Vec<char>,
    pos: usize,
}

impl Parser {
    fn error_at(&self, offset: usize, message: impl Into<String>) -> PatternError {
        PatternError {
            offset,
            message: message.into(),
        }
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn alternation(&mut self) -> Result<Node, PatternError> {
        let mut branches = vec![self.concat()?];
        while self.peek() == Some('|') {
            self.pos += 1;
            branches.push(self.concat()?);
        }
        Ok(if branches.len() == 1 {
            branches.pop().unwrap()
        } else {
            Node::Alternation(branches)
        })
    }

    fn concat(&mut self) -> Result<Node, PatternError> {
        let start = self.pos;
        let mut items = Vec::new();
        while let Some(c) = self.peek() {
            if c == '|' || c == ')' {
                break;
            }
            let atom = self.atom()?;
            items.push(self.quantified(atom)?);
        }
        match items.len() {
            0 => Err(self.error_at(start, "empty expression")),
            1 => Ok(items.pop().unwrap()),
            _ => Ok(Node::Concat(items)),
        }
    }

    fn atom(&mut self) -> Result<Node, PatternError> {
        let at = self.pos;
        let c = self.peek().expect("caller checked");
        match c {
            '(' => {
                self.pos += 1;
                if self.peek().is_none() {
                    return Err(self.error_at(at, "unbalanced '('"));
                }
                if self.peek() == Some('?') {
                    return Err(self.error_at(self.pos, "unsupported group modifier"));
                }
                let inner = self.alternation()?;
                if self.peek() != Some(')') {
                    return Err(self.error_at(at, "unbalanced '('"));
                }
                self.pos += 1;
                Ok(Node::Group(Box::new(inner)))
            }
            '[' => self.class(),
            '\\' => {
                self.pos += 1;
                match self.escape(at)? {
                    Escaped::Char(c) => Ok(Node::Literal(c)),
                    Escaped::Set(s) => Ok(Node::Class(s)),
                }
            }
            '*' | '+' | '?' | '{' => Err(self.error_at(at, "quantifier without a target")),
            '.' | '^' | '$' => Err(self.error_at(at, format!("unsupported construct '{c}'"))),
            ']' | '}' => Err(self.error_at(at, format!("unbalanced '{c}'"))),
            _ => {
                self.pos += 1;
                Ok(Node::Literal(c))
            }
        }
    }

    /// Escape sequence after the backslash at `at`.
    fn escape(&mut self, at: usize) -> Result<Escaped, PatternError> {
        let Some(c) = self.peek() else {
            return Err(self.error_at(at, "dangling escape"));
        };
        self.pos += 1;
        match c {
            'd' => Ok(Escaped::Set(digits())),
            'w' => Ok(Escaped::Set(word())),
            's' => Ok(Escaped::Set(space())),
            c if c.is_ascii_punctuation() => Ok(Escaped::Char(c)),
            c => Err(self.error_at(at, format!("unsupported escape '\\{c}'"))),
        }
    }

    fn class(&mut self) -> Result<Node, PatternError> {
        let open = self.pos;
        self.pos += 1;
        if self.peek() == Some('^') {
            return Err(self.error_at(self.pos, "negated classes are not supported"));
        }
        let mut set = BTreeSet::new();
        loop {
            let item_at = self.pos;
            let Some(c) = self.peek() else {
                return Err(self.error_at(open, "unbalanced '['"));
            };
            if c == ']' {
                self.pos += 1;
                break;
            }
            let lo = self.class_char()?;
            let lo = match lo {
                Escaped::Set(s) => {
                    set.extend(s);
                    continue;
                }
                Escaped::Char(c) => c,
            };
            let is_range = self.peek() == Some('-')
                && self.chars.get(self.pos + 1).is_some_and(|&n| n != ']');
            if !is_range {
                set.insert(lo);
                continue;
            }
            self.pos += 1;
            let hi = match self.class_char()? {
                Escaped::Char(c) => c,
                Escaped::Set(_) => return Err(self.error_at(item_at, "class shorthand used as a range bound")),
            };
            if hi < lo {
                return Err(self.error_at(item_at, format!("reversed range {lo}-{hi}")));
            }
            set.extend(lo..=hi);
        }
        if set.is_empty() {
            return Err(self.error_at(open, "empty class"));
        }
        Ok(Node::Class(set))
    }

    fn class_char(&mut self) -> Result<Escaped, PatternError> {
        let at = self.pos;
        let c = self.peek().ok_or_else(|| self.error_at(at, "unbalanced '['"))?;
        self.pos += 1;
        match c {
            '\\' => self.escape(at),
            '[' => Err(self.error_at(at, "nested classes are not supported")),
            c => Ok(Escaped::Char(c)),
        }
    }

    fn quantified(&mut self, atom: Node) -> Result<Node, PatternError> {
        let (min, max) = match self.peek() {
            Some('{') => self.braces()?,
            Some(c @ ('?' | '*' | '+')) => {
                self.pos += 1;
                match c {
                    '?' => (0, Some(1)),
                    '*' => (0, None),
                    _ => (1, None),
                }
            }
            _ => return Ok(atom),
        };
        if let Some(c @ ('?' | '*' | '+' | '{')) = self.peek() {
            return Err(self.error_at(self.pos, format!("stacked quantifier '{c}'")));
        }
        Ok(Node::Repeat {
            node: Box::new(atom),
            min,
            max,
        })
    }

    /// `{m}`, `{m,}` or `{m,n}`; leaves `pos` after the closing brace.
    fn braces(&mut self) -> Result<(u32, Option<u32>), PatternError> {
        let open = self.pos;
        let close = self.chars[open..]
            .iter()
            .position(|&c| c == '}')
            .map(|i| open + i)
            .ok_or_else(|| self.error_at(open, "unbalanced '{'"))?;
        let body: String = self.chars[open + 1..close].iter().collect();
        let bad = || self.error_at(open, format!("malformed repetition {{{body}}}"));
        let number = |s: &str| -> Result<u32, PatternError> {
            if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
                return Err(bad());
            }
            s.parse::<u32>()
                .ok()
                .filter(|&n| n <= MAX_REPEAT_BOUND)
                .ok_or_else(|| self.error_at(open, format!("repetition bound above {MAX_REPEAT_BOUND}")))
        };
        let (min, max) = match body.split_once(',') {
            None => {
                let n = number(&body)?;
                (n, Some(n))
            }
            Some((lo, "")) => (number(lo)?, None),
            Some((lo, hi)) => (number(lo)?, Some(number(hi)?)),
        };
        if max.is_some_and(|m| m < min) {
            return Err(self.error_at(open, format!("reversed repetition {{{body}}}")));
        }
        self.pos = close + 1;
        Ok((min, max))
    }
}

enum Escaped {
    Char(char),
    Set(BTreeSet<char>),
}

fn write_literal(f: &mut fmt::Formatter<'_>, c: char) -> fmt::Result {
    if METACHARS.contains(&c) {
        write!(f, "\\{c}")
    } else {
        write!(f, "{c}")
    }
}

/// Prints the subset syntax; parsing the output yields the same tree for
/// every tree the parser can produce.
impl fmt::Display for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Node::Literal(c) => write_literal(f, *c),
            Node::Class(set) => {
                f.write_str("[")?;
                for &c in set {
                    if matches!(c, ']' | '\\' | '-' | '[' | '^') {
                        write!(f, "\\{c}")?;
                    } else {
                        write!(f, "{c}")?;
                    }
                }
                f.write_str("]")
            }
            Node::Concat(items) => items.iter().try_for_each(|n| write!(f, "{n}")),
            Node::Alternation(branches) => {
                for (i, b) in branches.iter().enumerate() {
                    if i > 0 {
                        f.write_str("|")?;
                    }
                    write!(f, "{b}")?;
                }
                Ok(())
            }
            Node::Group(inner) => write!(f, "({inner})"),
            Node::Repeat { node, min, max } => {
                write!(f, "{node}")?;
                match (min, max) {
                    (0, Some(1)) => f.write_str("?"),
                    (0, None) => f.write_str("*"),
                    (1, None) => f.write_str("+"),
                    (m, None) => write!(f, "{{{m},}}"),
                    (m, Some(n)) if m == n => write!(f, "{{{m}}}"),
                    (m, Some(n)) => write!(f, "{{{m},{n}}}"),
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lit(c: char) -> Node {
        Node::Literal(c)
    }

    #[test]
    fn literals_concat() {
        assert_eq!(
            parse_pattern("abc").unwrap(),
            Node::Concat(vec![lit('a'), lit('b'), lit('c')])
        );
        assert_eq!(parse_pattern("x").unwrap(), lit('x'));
    }

    #[test]
    fn class_repeat() {
        assert_eq!(
            parse_pattern("[ab]{2}").unwrap(),
            Node::Repeat {
                node: Box::new(Node::Class(['a', 'b'].into_iter().collect())),
                min: 2,
                max: Some(2)
            }
        );
    }

    #[test]
    fn group_alternation_optional() {
        let ast = parse_pattern("(a|bc)d?").unwrap();
        assert_eq!(
            ast,
            Node::Concat(vec![
                Node::Group(Box::new(Node::Alternation(vec![
                    lit('a'),
                    Node::Concat(vec![lit('b'), lit('c')])
                ]))),
                Node::Repeat {
                    node: Box::new(lit('d')),
                    min: 0,
                    max: Some(1)
                },
            ])
        );
    }

    #[test]
    fn star_and_plus_are_unbounded() {
        let Node::Concat(items) = parse_pattern("a*b+c{2,}").unwrap() else { panic!() };
        let maxes: Vec<_> = items
            .iter()
            .map(|n| match n {
                Node::Repeat { min, max, .. } => (*min, *max),
                _ => panic!(),
            })
            .collect();
        assert_eq!(maxes, [(0, None), (1, None), (2, None)]);
    }

    #[test]
    fn shorthand_classes() {
        let Node::Class(d) = parse_pattern(r"\d").unwrap() else { panic!() };
        assert_eq!(d.len(), 10);
        let Node::Class(w) = parse_pattern(r"[\w+/]").unwrap() else { panic!() };
        assert_eq!(w.len(), 65);
        assert_eq!(parse_pattern(r"\.").unwrap(), lit('.'));
        assert_eq!(parse_pattern(r"\\").unwrap(), lit('\\'));
    }

    #[test]
    fn error_offsets() {
        assert_eq!(parse_pattern("a(").unwrap_err().offset, 1);
        assert_eq!(parse_pattern("ab)").unwrap_err().offset, 2);
        assert_eq!(parse_pattern("x[z-a]").unwrap_err().offset, 2);
        assert_eq!(parse_pattern("[ab").unwrap_err().offset, 0);
        assert_eq!(parse_pattern("*a").unwrap_err().offset, 0);
        assert_eq!(parse_pattern("a.b").unwrap_err().offset, 1);
        assert_eq!(parse_pattern("[^a]").unwrap_err().offset, 1);
        assert_eq!(parse_pattern("a{3,1}").unwrap_err().offset, 1);
        assert_eq!(parse_pattern("a{x}").unwrap_err().offset, 1);
        assert_eq!(parse_pattern("a**").unwrap_err().offset, 2);
        assert_eq!(parse_pattern(r"\q").unwrap_err().offset, 0);
        assert!(parse_pattern("").is_err());
        assert!(parse_pattern("a|").is_err());
        assert!(parse_pattern("()").is_err());
    }

    #[test]
    fn printer_round_trip_examples() {
        for src in [
            "abc",
            "[ab]{2}",
            "(a|bc)d?",
            r"AKIA[0-9A-Z]{16}",
            r"[A-Za-z0-9+/]{24}",
            r"[a-z]{6}\d{2}",
            r"\(x\)\.y*z+w{2,}v{1,3}",
            r"[\]\-\\]",
        ] {
            let ast = parse_pattern(src).unwrap();
            let printed = ast.to_string();
            assert_eq!(parse_pattern(&printed).unwrap(), ast, "{src} -> {printed}");
        }
    }
}
