//! Polynomial integrands written as text, e.g. `"1 + x^2*y - 0.5*z^3"`.

use crate::{LabError, Result};

const VARS: [char; 4] = ['x', 'y', 'z', 'w'];

#[derive(Clone, Debug, PartialEq)]
pub struct Poly {
    source: String,
    terms: Vec<(f64, [u32; 4])>,
}

impl Poly {
    pub fn parse(src: &str) -> Result<Poly> {
        let bad = |msg: &str| LabError::config("integrands", format!("`{src}`: {msg}"));
        let cleaned: String = src.chars().filter(|c| !c.is_whitespace()).collect();
        if cleaned.is_empty() {
            return Err(bad("empty polynomial"));
        }
        let mut terms = Vec::new();
        let mut chunks = Vec::new();
        let mut start = 0;
        let bytes: Vec<char> = cleaned.chars().collect();
        for i in 1..bytes.len() {
            if (bytes[i] == '+' || bytes[i] == '-') && bytes[i - 1] != '^' && bytes[i - 1] != 'e' {
                chunks.push(bytes[start..i].iter().collect::<String>());
                start = i;
            }
        }
        chunks.push(bytes[start..].iter().collect::<String>());
        for chunk in chunks {
            let (sign, body) = match chunk.strip_prefix('-') {
                Some(b) => (-1.0, b.to_string()),
                None => (1.0, chunk.trim_start_matches('+').to_string()),
            };
            let mut coef = sign;
            let mut exps = [0u32; 4];
            for factor in body.split('*') {
                if factor.is_empty() {
                    return Err(bad("empty factor"));
                }
                if let Ok(v) = factor.parse::<f64>() {
                    coef *= v;
                    continue;
                }
                let mut it = factor.splitn(2, '^');
                let name = it.next().unwrap_or_default();
                let var = name
                    .chars()
                    .next()
                    .and_then(|c| VARS.iter().position(|&v| v == c))
                    .filter(|_| name.len() == 1)
                    .ok_or_else(|| bad(&format!("unknown factor `{factor}`")))?;
                let e = match it.next() {
                    Some(p) => p.parse::<u32>().map_err(|_| bad("exponent must be a non-negative integer"))?,
                    None => 1,
                };
                exps[var] += e;
            }
            terms.push((coef, exps));
        }
        Ok(Poly {
            source: src.to_string(),
            terms,
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// Largest variable index used plus one.
    pub fn arity(&self) -> usize {
        self.terms
            .iter()
            .flat_map(|(_, e)| e.iter().enumerate().filter(|(_, &p)| p > 0).map(|(i, _)| i + 1))
            .max()
            .unwrap_or(0)
    }

    pub fn eval(&self, z: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|(c, e)| {
                let mut v = *c;
                for (k, &p) in e.iter().enumerate() {
                    if p > 0 {
                        v *= z.get(k).copied().unwrap_or(0.0).powi(p as i32);
                    }
                }
                v
            })
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_evaluates() {
        let p = Poly::parse("1 + x^2*y - 0.5*z^3 + 2e-1*x").unwrap();
        let v = p.eval(&[2.0, 3.0, 1.0]);
        assert!((v - (1.0 + 12.0 - 0.5 + 0.4)).abs() < 1e-14);
        assert_eq!(p.arity(), 3);
        assert!(Poly::parse("q^2").is_err());
        assert!(Poly::parse("x^-1").is_err());
        assert_eq!(Poly::parse("0").unwrap().eval(&[1.0]), 0.0);
    }
}
