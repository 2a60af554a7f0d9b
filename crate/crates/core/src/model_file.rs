//! Plain-text model files.
//!
//! ```text
//! # two-state soft model
//! k=2
//! type=custom
//! U(1,2)=0.6931471805599453
//! W(2)=hard
//! ```
//!
//! Indices are 1-based. Unlisted custom entries default to `0`. `U(i,j)` also
//! sets `U(j,i)`; giving both with different values is an error. The echo is
//! canonical and reproduces every value bit for bit.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::spin_model::{Energy, Potentials, SpinKernel};

#[derive(Clone, Debug, PartialEq)]
pub enum ModelSpec {
    Coloring { k: usize },
    Custom(Potentials),
}

impl ModelSpec {
    pub fn k(&self) -> usize {
        match self {
            ModelSpec::Coloring { k } => *k,
            ModelSpec::Custom(p) => p.k(),
        }
    }

    pub fn kernel(&self) -> Result<SpinKernel> {
        match self {
            ModelSpec::Coloring { k } => SpinKernel::from_potentials(&Potentials::coloring(*k)?),
            ModelSpec::Custom(p) => SpinKernel::from_potentials(p),
        }
    }

    pub fn echo(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "k={}", self.k());
        match self {
            ModelSpec::Coloring { .. } => out.push_str("type=coloring\n"),
            ModelSpec::Custom(p) => {
                out.push_str("type=custom\n");
                let k = p.k();
                for i in 0..k {
                    for j in i..k {
                        let _ = writeln!(out, "U({},{})={}", i + 1, j + 1, p.pair(i, j));
                    }
                }
                for i in 0..k {
                    let _ = writeln!(out, "W({})={}", i + 1, p.field(i));
                }
            }
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut k: Option<usize> = None;
        let mut kind: Option<String> = None;
        let mut pairs: Vec<(usize, usize, usize, Energy)> = Vec::new();
        let mut fields: Vec<(usize, usize, Energy)> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line_no = lineno + 1;
            let err = |msg: String| Error::Parse { line: line_no, msg };
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected key=value, got {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            if key == "k" {
                let v: usize = value.parse().map_err(|_| err(format!("bad state count {value:?}")))?;
                if k.replace(v).is_some() {
                    return Err(err("k given twice".into()));
                }
            } else if key == "type" {
                if value != "coloring" && value != "custom" {
                    return Err(err(format!("unknown model type {value:?}")));
                }
                if kind.replace(value.to_string()).is_some() {
                    return Err(err("type given twice".into()));
                }
            } else if let Some(args) = key.strip_prefix("U(").and_then(|s| s.strip_suffix(')')) {
                let (a, b) = args
                    .split_once(',')
                    .ok_or_else(|| err(format!("U needs two indices, got {key:?}")))?;
                let a = parse_index(a).ok_or_else(|| err(format!("bad index in {key:?}")))?;
                let b = parse_index(b).ok_or_else(|| err(format!("bad index in {key:?}")))?;
                pairs.push((line_no, a, b, parse_energy(value).map_err(err)?));
            } else if let Some(arg) = key.strip_prefix("W(").and_then(|s| s.strip_suffix(')')) {
                let a = parse_index(arg).ok_or_else(|| err(format!("bad index in {key:?}")))?;
                fields.push((line_no, a, parse_energy(value).map_err(err)?));
            } else {
                return Err(err(format!("unknown key {key:?}")));
            }
        }
        let k = k.ok_or(Error::Parse { line: 0, msg: "missing k".into() })?;
        let kind = kind.ok_or(Error::Parse { line: 0, msg: "missing type".into() })?;
        if kind == "coloring" {
            if let Some(&(line, ..)) = pairs.first() {
                return Err(Error::Parse { line, msg: "coloring models take no potentials".into() });
            }
            if let Some(&(line, ..)) = fields.first() {
                return Err(Error::Parse { line, msg: "coloring models take no potentials".into() });
            }
            return Ok(ModelSpec::Coloring { k });
        }
        let mut pair: Vec<Option<Energy>> = vec![None; k * k];
        for (line, a, b, e) in pairs {
            if a >= k || b >= k {
                return Err(Error::Parse { line, msg: format!("index out of range for k={k}") });
            }
            for (i, j) in [(a, b), (b, a)] {
                match pair[i * k + j] {
                    Some(prev) if prev != e => {
                        return Err(Error::Parse {
                            line,
                            msg: format!("U({},{}) conflicts with an earlier value", a + 1, b + 1),
                        })
                    }
                    _ => pair[i * k + j] = Some(e),
                }
            }
        }
        let mut field: Vec<Option<Energy>> = vec![None; k];
        for (line, a, e) in fields {
            if a >= k {
                return Err(Error::Parse { line, msg: format!("index out of range for k={k}") });
            }
            if field[a].is_some_and(|prev| prev != e) {
                return Err(Error::Parse { line, msg: format!("W({}) given twice", a + 1) });
            }
            field[a] = Some(e);
        }
        let zero = Energy::Finite(0.0);
        let pot = Potentials::new(
            k,
            pair.into_iter().map(|e| e.unwrap_or(zero)).collect(),
            field.into_iter().map(|e| e.unwrap_or(zero)).collect(),
        )?;
        Ok(ModelSpec::Custom(pot))
    }
}

fn parse_index(s: &str) -> Option<usize> {
    let v: usize = s.trim().parse().ok()?;
    v.checked_sub(1)
}

fn parse_energy(s: &str) -> std::result::Result<Energy, String> {
    if s.eq_ignore_ascii_case("hard") || s.eq_ignore_ascii_case("inf") {
        return Ok(Energy::Hard);
    }
    let v: f64 = s.parse().map_err(|_| format!("bad potential value {s:?}"))?;
    if !v.is_finite() {
        return Err(format!("potential must be finite or `hard`, got {s:?}"));
    }
    Ok(Energy::Finite(v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn coloring_file() {
        let m = ModelSpec::parse("# three colors\nk=3\ntype=coloring\n").unwrap();
        assert_eq!(m, ModelSpec::Coloring { k: 3 });
        assert!(m.kernel().unwrap().is_coloring());
        assert_eq!(m.echo(), "k=3\ntype=coloring\n");
    }

    #[test]
    fn two_coloring_is_rejected_when_built() {
        let m = ModelSpec::parse("k=2\ntype=coloring").unwrap();
        assert!(matches!(m.kernel(), Err(Error::NonErgodicKernel(_))));
    }

    #[test]
    fn custom_file_and_echo() {
        let text = "k=2\ntype=custom\nU(2,1)=0.6931471805599453\n";
        let m = ModelSpec::parse(text).unwrap();
        let kern = m.kernel().unwrap();
        assert!((kern.entry(0, 1) - 1.0 / 3.0).abs() < 1e-12);
        let echo = m.echo();
        assert_eq!(
            echo,
            "k=2\ntype=custom\nU(1,1)=0\nU(1,2)=0.6931471805599453\nU(2,2)=0\nW(1)=0\nW(2)=0\n"
        );
        assert_eq!(ModelSpec::parse(&echo).unwrap(), m);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let e = ModelSpec::parse("k=2\ntype=custom\nU(1,2)=1\nU(2,1)=2\n").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 4, .. }));
        let e = ModelSpec::parse("k=2\ntype=custom\nU(1,3)=1\n").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 3, .. }));
        let e = ModelSpec::parse("k=2\nbogus\n").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 2, .. }));
        let e = ModelSpec::parse("k=3\ntype=coloring\nW(1)=1\n").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 3, .. }));
    }

    proptest! {
        #[test]
        fn echo_round_trips_bit_exactly(
            k in 1usize..5,
            vals in prop::collection::vec(prop_oneof![
                Just(None),
                (-50.0f64..50.0).prop_map(Some),
                any::<f64>().prop_filter("finite", |v| v.is_finite()).prop_map(Some),
            ], 20),
        ) {
            let energy = |v: Option<f64>| v.map_or(Energy::Hard, Energy::Finite);
            let mut pot = Potentials::free(k).unwrap();
            let mut idx = 0;
            for i in 0..k {
                for j in i..k {
                    pot.set_pair(i, j, energy(vals[idx]));
                    idx += 1;
                }
            }
            for i in 0..k {
                pot.set_field(i, energy(vals[idx]));
                idx += 1;
            }
            let m = ModelSpec::Custom(pot);
            let echo = m.echo();
            let back = ModelSpec::parse(&echo).unwrap();
            prop_assert_eq!(&back, &m);
            prop_assert_eq!(back.echo(), echo);
        }
    }
}
