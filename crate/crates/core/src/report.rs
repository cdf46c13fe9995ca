//! Text output: number formatting, flat `key=value` records and CSV.

use std::fmt::Write as _;

/// Shortest round-trip decimal form; exponent notation outside
/// `[1e-5, 1e16)`.
pub fn fmt_num(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        if x.is_nan() {
            return "nan".into();
        }
        if x.is_infinite() {
            return if x > 0.0 { "inf".into() } else { "-inf".into() };
        }
        return "0".into();
    }
    let a = x.abs();
    if (1e-5..1e16).contains(&a) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

/// Ordered `key=value` lines.
#[derive(Debug, Default, Clone)]
pub struct KvRecord {
    lines: Vec<(String, String)>,
}

impl KvRecord {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn put(&mut self, key: impl Into<String>, value: impl ToString) -> &mut Self {
        self.lines.push((key.into(), value.to_string()));
        self
    }

    pub fn num(&mut self, key: impl Into<String>, x: f64) -> &mut Self {
        self.put(key, fmt_num(x))
    }

    pub fn nums(&mut self, key: impl Into<String>, xs: &[f64]) -> &mut Self {
        let joined: Vec<String> = xs.iter().map(|&x| fmt_num(x)).collect();
        self.put(key, joined.join(","))
    }

    /// Appends every line of `other` with `prefix.` prepended to its key.
    pub fn nest(&mut self, prefix: &str, other: &KvRecord) -> &mut Self {
        for (k, v) in &other.lines {
            self.lines.push((format!("{prefix}.{k}"), v.clone()));
        }
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.lines
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn lines(&self) -> &[(String, String)] {
        &self.lines
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.lines {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }
}

/// CSV with a header row; all cells numeric.
pub fn csv(header: &[&str], rows: impl IntoIterator<Item = Vec<f64>>) -> String {
    let mut s = header.join(",");
    s.push('\n');
    for row in rows {
        let cells: Vec<String> = row.iter().map(|&x| fmt_num(x)).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_round_trip() {
        for x in [
            0.1,
            1.0 / 3.0,
            6.0,
            1e-7,
            2.5e20,
            -3.75,
            123456.789,
            1e16,
            9.99e-6,
            f64::MAX,
            f64::MIN_POSITIVE,
        ] {
            let s = fmt_num(x);
            assert_eq!(s.parse::<f64>().unwrap(), x, "{s}");
        }
        assert_eq!(fmt_num(6.0), "6");
        assert_eq!(fmt_num(0.0), "0");
        assert_eq!(fmt_num(-0.0), "0");
        assert_eq!(fmt_num(1e-7), "1e-7");
        assert_eq!(fmt_num(f64::INFINITY), "inf");
    }

    #[test]
    fn records_and_csv() {
        let mut r = KvRecord::new();
        r.put("verdict", "BlownUp").num("t", 0.25);
        let mut inner = KvRecord::new();
        inner.put("ok", true);
        r.nest("fit", &inner);
        assert_eq!(r.render(), "verdict=BlownUp\nt=0.25\nfit.ok=true\n");
        assert_eq!(r.get("fit.ok"), Some("true"));
        assert_eq!(csv(&["r", "u"], vec![vec![0.5, 2.0]]), "r,u\n0.5,2\n");
    }
}
