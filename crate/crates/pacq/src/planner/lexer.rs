use super::PlanError;

#[derive(Debug, Clone, PartialEq)]
pub enum Tok {
    Ident(String),
    Int(i64),
    Float(f64),
    Str(String),
    Punct(&'static str),
}

impl Tok {
    pub fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Int(v) => format!("`{v}`"),
            Tok::Float(v) => format!("`{v}`"),
            Tok::Str(s) => format!("'{s}'"),
            Tok::Punct(p) => format!("`{p}`"),
        }
    }
}

/// Keywords are case-insensitive; unquoted identifiers fold to lowercase.
/// Keyword detection happens against the uppercased form at parse time, so
/// the lexer only distinguishes token shapes.
pub fn lex(input: &str) -> Result<Vec<(Tok, usize)>, PlanError> {
    let bytes = input.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        // line comments
        if c == '-' && bytes.get(i + 1) == Some(&b'-') {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        if c.is_ascii_alphabetic() || c == '_' || c == '#' {
            while i < bytes.len()
                && ((bytes[i] as char).is_ascii_alphanumeric()
                    || bytes[i] == b'_'
                    || bytes[i] == b'#')
            {
                i += 1;
            }
            let raw = &input[start..i];
            out.push((Tok::Ident(raw.to_ascii_lowercase()), start));
            continue;
        }
        if c.is_ascii_digit() {
            let mut is_float = false;
            while i < bytes.len() && (bytes[i] as char).is_ascii_digit() {
                i += 1;
            }
            if i < bytes.len()
                && bytes[i] == b'.'
                && i + 1 < bytes.len()
                && (bytes[i + 1] as char).is_ascii_digit()
            {
                is_float = true;
                i += 1;
                while i < bytes.len() && (bytes[i] as char).is_ascii_digit() {
                    i += 1;
                }
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && (bytes[j] as char).is_ascii_digit() {
                    is_float = true;
                    i = j;
                    while i < bytes.len() && (bytes[i] as char).is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let raw = &input[start..i];
            let tok = if is_float {
                Tok::Float(raw.parse().map_err(|_| PlanError::syntax(start, "bad number"))?)
            } else {
                match raw.parse::<i64>() {
                    Ok(v) => Tok::Int(v),
                    Err(_) => Tok::Float(
                        raw.parse().map_err(|_| PlanError::syntax(start, "bad number"))?,
                    ),
                }
            };
            out.push((tok, start));
            continue;
        }
        if c == '\'' {
            let mut s = String::new();
            i += 1;
            loop {
                match bytes.get(i) {
                    None => return Err(PlanError::syntax(start, "unterminated string literal")),
                    Some(b'\'') if bytes.get(i + 1) == Some(&b'\'') => {
                        s.push('\'');
                        i += 2;
                    }
                    Some(b'\'') => {
                        i += 1;
                        break;
                    }
                    Some(&b) => {
                        s.push(b as char);
                        i += 1;
                    }
                }
            }
            out.push((Tok::Str(s), start));
            continue;
        }
        let two = if i + 1 < bytes.len() { &input[i..i + 2] } else { "" };
        let punct: Option<(&'static str, usize)> = match two {
            "<=" => Some(("<=", 2)),
            ">=" => Some((">=", 2)),
            "<>" => Some(("<>", 2)),
            "!=" => Some(("<>", 2)),
            _ => match c {
                '(' => Some(("(", 1)),
                ')' => Some((")", 1)),
                ',' => Some((",", 1)),
                ';' => Some((";", 1)),
                '.' => Some((".", 1)),
                '*' => Some(("*", 1)),
                '+' => Some(("+", 1)),
                '-' => Some(("-", 1)),
                '/' => Some(("/", 1)),
                '=' => Some(("=", 1)),
                '<' => Some(("<", 1)),
                '>' => Some((">", 1)),
                _ => None,
            },
        };
        match punct {
            Some((p, n)) => {
                out.push((Tok::Punct(p), start));
                i += n;
            }
            None => {
                return Err(PlanError::syntax(start, format!("unexpected character `{c}`")));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lexes_mixed_statement() {
        let toks = lex("SELECT a.b, 'it''s' <= 1.5e2 -- trailing\n<>").unwrap();
        let kinds: Vec<&Tok> = toks.iter().map(|(t, _)| t).collect();
        assert_eq!(kinds[0], &Tok::Ident("select".into()));
        assert_eq!(kinds[1], &Tok::Ident("a".into()));
        assert_eq!(kinds[2], &Tok::Punct("."));
        assert_eq!(kinds[4], &Tok::Punct(","));
        assert_eq!(kinds[5], &Tok::Str("it's".into()));
        assert_eq!(kinds[6], &Tok::Punct("<="));
        assert_eq!(kinds[7], &Tok::Float(150.0));
        assert_eq!(kinds[8], &Tok::Punct("<>"));
    }

    #[test]
    fn reports_position_on_bad_input() {
        let err = lex("select ?").unwrap_err();
        match err {
            PlanError::Syntax { pos, .. } => assert_eq!(pos, 7),
            other => panic!("unexpected {other:?}"),
        }
    }
}
