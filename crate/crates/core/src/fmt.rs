//! Number formatting and index conventions shared by the output writers.

/// Formats `x` like C's `%.17g`: 17 significant digits, trailing zeros
/// trimmed, exponent form outside `[1e-5, 1e17)`.
pub fn g17(x: f64) -> String {
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    if !x.is_finite() {
        return if x.is_nan() {
            "nan".into()
        } else if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    let sci = format!("{x:.16e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-5..17).contains(&exp) {
        let m = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        return format!("{m}e{sign}{:02}", exp.abs());
    }
    let decimals = (16 - exp).max(0) as usize;
    trim_zeros(&format!("{x:.decimals$}")).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Serde adapter writing 0-based indices as 1-based numbers.
pub mod one_based {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &usize, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(*v as u64 + 1)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<usize, D::Error> {
        let v = u64::deserialize(d)?;
        if v == 0 {
            return Err(serde::de::Error::custom("indices are 1-based"));
        }
        Ok((v - 1) as usize)
    }
}

pub mod one_based_opt {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<usize>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(i) => s.serialize_some(&(*i as u64 + 1)),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<usize>, D::Error> {
        match Option::<u64>::deserialize(d)? {
            Some(0) => Err(serde::de::Error::custom("indices are 1-based")),
            Some(v) => Ok(Some((v - 1) as usize)),
            None => Ok(None),
        }
    }
}

pub mod one_based_vec {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[usize], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(|i| *i as u64 + 1))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<usize>, D::Error> {
        Vec::<u64>::deserialize(d)?
            .into_iter()
            .map(|v| {
                v.checked_sub(1)
                    .map(|i| i as usize)
                    .ok_or_else(|| serde::de::Error::custom("indices are 1-based"))
            })
            .collect()
    }
}

/// A list of index sets, each shifted by one.
pub mod one_based_sets {
    use std::collections::BTreeSet;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[BTreeSet<usize>], s: S) -> Result<S::Ok, S::Error> {
        let shifted: Vec<Vec<u64>> = v
            .iter()
            .map(|set| set.iter().map(|&j| j as u64 + 1).collect())
            .collect();
        shifted.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<BTreeSet<usize>>, D::Error> {
        Vec::<Vec<u64>>::deserialize(d)?
            .into_iter()
            .map(|set| {
                set.into_iter()
                    .map(|v| {
                        v.checked_sub(1)
                            .map(|i| i as usize)
                            .ok_or_else(|| serde::de::Error::custom("indices are 1-based"))
                    })
                    .collect()
            })
            .collect()
    }
}
