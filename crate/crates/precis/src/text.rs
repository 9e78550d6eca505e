//! Line-oriented text formats.
//!
//! A matrix is a `rows cols` header line followed by `rows` lines of
//! whitespace-separated decimal values. A document is a sequence of
//! entries, each either a scalar line `key value...` or a matrix entry
//! `matrix NAME` followed by a matrix. Blank lines and `#` comments are
//! ignored everywhere.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::DMatrix;

/// A parse failure at a 1-based line number.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("line {line}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub message: String,
}

impl ParseError {
    pub fn new(line: usize, message: impl Into<String>) -> Self {
        Self {
            line,
            message: message.into(),
        }
    }
}

/// Non-empty, comment-stripped lines with their 1-based numbers.
struct Lines<'a> {
    inner: std::iter::Peekable<Box<dyn Iterator<Item = (usize, &'a str)> + 'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        let it: Box<dyn Iterator<Item = (usize, &'a str)> + 'a> = Box::new(
            text.lines()
                .enumerate()
                .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
                .filter(|(_, l)| !l.is_empty()),
        );
        Self {
            inner: it.peekable(),
            last: 0,
        }
    }

    fn next(&mut self) -> Option<(usize, &'a str)> {
        let item = self.inner.next();
        if let Some((n, _)) = item {
            self.last = n;
        }
        item
    }

    fn expect(&mut self, what: &str) -> Result<(usize, &'a str), ParseError> {
        self.next()
            .ok_or_else(|| ParseError::new(self.last + 1, format!("unexpected end of input, expected {what}")))
    }
}

fn parse_usize(line: usize, token: &str, what: &str) -> Result<usize, ParseError> {
    token
        .parse()
        .map_err(|_| ParseError::new(line, format!("{what} `{token}` is not a non-negative integer")))
}

pub fn parse_f64(line: usize, token: &str) -> Result<f64, ParseError> {
    match token {
        "inf" | "+inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        _ => token
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| ParseError::new(line, format!("`{token}` is not a finite decimal value"))),
    }
}

fn read_matrix(lines: &mut Lines<'_>) -> Result<DMatrix<f64>, ParseError> {
    let (n, header) = lines.expect("a `rows cols` header")?;
    let dims: Vec<&str> = header.split_whitespace().collect();
    if dims.len() != 2 {
        return Err(ParseError::new(n, format!("expected `rows cols`, found `{header}`")));
    }
    let rows = parse_usize(n, dims[0], "row count")?;
    let cols = parse_usize(n, dims[1], "column count")?;
    let mut data = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let (n, line) = lines.expect(&format!("matrix row {} of {rows}", r + 1))?;
        let before = data.len();
        for token in line.split_whitespace() {
            data.push(parse_f64(n, token)?);
        }
        let found = data.len() - before;
        if found != cols {
            return Err(ParseError::new(
                n,
                format!("row {} has {found} values, expected {cols}", r + 1),
            ));
        }
    }
    Ok(DMatrix::from_row_slice(rows, cols, &data))
}

/// Parses a document holding exactly one matrix.
pub fn parse_matrix(text: &str) -> Result<DMatrix<f64>, ParseError> {
    let mut lines = Lines::new(text);
    let m = read_matrix(&mut lines)?;
    if let Some((n, extra)) = lines.next() {
        return Err(ParseError::new(
            n,
            format!("unexpected content after matrix: `{extra}`"),
        ));
    }
    Ok(m)
}

/// Appends `m` in matrix text format.
pub fn write_matrix(out: &mut String, m: &DMatrix<f64>) {
    let _ = writeln!(out, "{} {}", m.nrows(), m.ncols());
    for r in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|c| fmt_f64(m[(r, c)])).collect();
        let _ = writeln!(out, "{}", row.join(" "));
    }
}

/// Shortest round-trip representation, with `inf` for infinities.
pub fn fmt_f64(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{v}")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Scalar(Vec<String>),
    Matrix(DMatrix<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub line: usize,
    pub value: Value,
}

/// Named entries of a document, keyed by name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Document {
    entries: BTreeMap<String, Entry>,
    order: Vec<String>,
}

impl Document {
    pub fn parse(text: &str) -> Result<Self, ParseError> {
        let mut doc = Document::default();
        let mut lines = Lines::new(text);
        while let Some((n, line)) = lines.next() {
            let mut tokens = line.split_whitespace();
            let key = tokens.next().expect("trimmed line is non-empty");
            let (name, value) = if key == "matrix" {
                let name = tokens
                    .next()
                    .ok_or_else(|| ParseError::new(n, "`matrix` needs a name"))?;
                if let Some(extra) = tokens.next() {
                    return Err(ParseError::new(n, format!("unexpected `{extra}` after matrix name")));
                }
                (name.to_string(), Value::Matrix(read_matrix(&mut lines)?))
            } else {
                (key.to_string(), Value::Scalar(tokens.map(str::to_string).collect()))
            };
            if let Some(prev) = doc.entries.get(&name) {
                return Err(ParseError::new(
                    n,
                    format!("`{name}` already defined on line {}", prev.line),
                ));
            }
            doc.order.push(name.clone());
            doc.entries.insert(name, Entry { line: n, value });
        }
        Ok(doc)
    }

    pub fn get(&self, name: &str) -> Option<&Entry> {
        self.entries.get(name)
    }

    /// Names in file order.
    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.order.iter().map(String::as_str)
    }

    /// Line of the last entry, for errors about missing entries.
    pub fn end_line(&self) -> usize {
        self.entries.values().map(|e| e.line).max().unwrap_or(0) + 1
    }

    pub fn matrix(&self, name: &str) -> Result<Option<(usize, &DMatrix<f64>)>, ParseError> {
        match self.entries.get(name) {
            None => Ok(None),
            Some(Entry {
                line,
                value: Value::Matrix(m),
            }) => Ok(Some((*line, m))),
            Some(Entry { line, .. }) => Err(ParseError::new(*line, format!("`{name}` must be a matrix entry"))),
        }
    }

    pub fn require_matrix(&self, name: &str) -> Result<(usize, &DMatrix<f64>), ParseError> {
        self.matrix(name)?
            .ok_or_else(|| ParseError::new(self.end_line(), format!("missing matrix `{name}`")))
    }

    pub fn scalar(&self, name: &str) -> Result<Option<(usize, &[String])>, ParseError> {
        match self.entries.get(name) {
            None => Ok(None),
            Some(Entry {
                line,
                value: Value::Scalar(v),
            }) => Ok(Some((*line, v.as_slice()))),
            Some(Entry { line, .. }) => Err(ParseError::new(*line, format!("`{name}` must be a scalar entry"))),
        }
    }

    pub fn require_scalar(&self, name: &str) -> Result<(usize, &[String]), ParseError> {
        self.scalar(name)?
            .ok_or_else(|| ParseError::new(self.end_line(), format!("missing entry `{name}`")))
    }

    /// A single-token entry.
    pub fn require_word(&self, name: &str) -> Result<(usize, &str), ParseError> {
        let (line, v) = self.require_scalar(name)?;
        match v {
            [w] => Ok((line, w.as_str())),
            _ => Err(ParseError::new(line, format!("`{name}` takes exactly one value"))),
        }
    }

    pub fn require_f64(&self, name: &str) -> Result<f64, ParseError> {
        let (line, w) = self.require_word(name)?;
        parse_f64(line, w)
    }

    pub fn f64_list(&self, name: &str) -> Result<Option<Vec<f64>>, ParseError> {
        match self.scalar(name)? {
            None => Ok(None),
            Some((line, v)) => v.iter().map(|t| parse_f64(line, t)).collect::<Result<_, _>>().map(Some),
        }
    }

    pub fn require_f64_list(&self, name: &str) -> Result<Vec<f64>, ParseError> {
        self.f64_list(name)?
            .ok_or_else(|| ParseError::new(self.end_line(), format!("missing entry `{name}`")))
    }
}

/// Builder for document text.
#[derive(Debug, Default)]
pub struct DocumentWriter {
    out: String,
}

impl DocumentWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn comment(&mut self, text: &str) -> &mut Self {
        let _ = writeln!(self.out, "# {text}");
        self
    }

    pub fn scalar(&mut self, key: &str, value: impl std::fmt::Display) -> &mut Self {
        let _ = writeln!(self.out, "{key} {value}");
        self
    }

    pub fn list<T: std::fmt::Display>(&mut self, key: &str, values: impl IntoIterator<Item = T>) -> &mut Self {
        let v: Vec<String> = values.into_iter().map(|x| x.to_string()).collect();
        let _ = writeln!(self.out, "{key} {}", v.join(" "));
        self
    }

    pub fn floats(&mut self, key: &str, values: &[f64]) -> &mut Self {
        self.list(key, values.iter().map(|&v| fmt_f64(v)))
    }

    pub fn matrix(&mut self, name: &str, m: &DMatrix<f64>) -> &mut Self {
        let _ = writeln!(self.out, "matrix {name}");
        write_matrix(&mut self.out, m);
        self
    }

    pub fn finish(&mut self) -> String {
        std::mem::take(&mut self.out)
    }
}
