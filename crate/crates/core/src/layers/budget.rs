use crate::error::{Error, Result};
use crate::so3::FieldType;

/// How a ratio is scaled to a channel budget.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BudgetRule {
    /// Largest multiple not exceeding the budget; leftover channels become
    /// extra scalars when the ratio has a scalar part.
    #[default]
    Fit,
    /// Multiple whose total is closest to the budget (ties go to the
    /// smaller one); may exceed the budget.
    Nearest,
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn reduce(ratio: [usize; 3]) -> Result<([usize; 3], usize)> {
    let g = ratio.iter().fold(0, |g, &r| gcd(g, r));
    if g == 0 {
        return Err(Error::Budget("ratio must not be all zero".into()));
    }
    let r = ratio.map(|v| v / g);
    let unit = r[0] + 3 * r[1] + 5 * r[2];
    Ok((r, unit))
}

/// Multiplicities proportional to `ratio` filling at most `total` channels.
pub fn budget_field_type(total: usize, ratio: [usize; 3]) -> Result<FieldType> {
    let (r, unit) = reduce(ratio)?;
    let k = total / unit;
    if k == 0 {
        return Err(Error::Budget(format!("{total} channels cannot hold one copy of ratio {ratio:?} ({unit} channels)")));
    }
    let mut m = r.map(|v| v * k);
    if r[0] > 0 {
        m[0] += total - k * unit;
    }
    FieldType::from_multiplicities(m)
}

/// Multiplicities proportional to `ratio` with total closest to `total`.
pub fn nearest_field_type(total: usize, ratio: [usize; 3]) -> Result<FieldType> {
    let (r, unit) = reduce(ratio)?;
    let lo = (total / unit).max(1);
    let k = if lo * unit < total && (lo + 1) * unit - total < total - lo * unit { lo + 1 } else { lo };
    FieldType::from_multiplicities(r.map(|v| v * k))
}

pub fn field_type_for(rule: BudgetRule, total: usize, ratio: [usize; 3]) -> Result<FieldType> {
    match rule {
        BudgetRule::Fit => budget_field_type(total, ratio),
        BudgetRule::Nearest => nearest_field_type(total, ratio),
    }
}

/// Parses `"n0:n1:n2"` (missing trailing parts are zero).
pub fn parse_ratio(s: &str) -> Result<[usize; 3]> {
    let parts: Vec<&str> = s.split(':').map(str::trim).collect();
    if parts.is_empty() || parts.len() > 3 {
        return Err(Error::Config(format!("ratio {s:?} must look like n0:n1:n2")));
    }
    let mut r = [0; 3];
    for (i, p) in parts.iter().enumerate() {
        r[i] = p.parse().map_err(|_| Error::Config(format!("ratio {s:?} has a non-integer part {p:?}")))?;
    }
    if r == [0; 3] {
        return Err(Error::Config(format!("ratio {s:?} is all zero")));
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_examples() {
        assert_eq!(budget_field_type(16, [5, 2, 1]).unwrap().multiplicities(), [5, 2, 1]);
        assert_eq!(budget_field_type(16, [4, 4, 0]).unwrap().multiplicities(), [4, 4, 0]);
        assert_eq!(budget_field_type(15, [0, 1, 0]).unwrap().multiplicities(), [0, 5, 0]);
        assert_eq!(budget_field_type(8, [1, 1, 0]).unwrap().multiplicities(), [2, 2, 0]);
    }

    #[test]
    fn surplus_goes_to_scalars() {
        let t = budget_field_type(18, [1, 1, 0]).unwrap();
        assert_eq!(t.multiplicities(), [6, 4, 0]);
        assert_eq!(t.total_channels(), 18);
        // no scalar part: leftover is simply unused
        assert_eq!(budget_field_type(16, [0, 1, 0]).unwrap().multiplicities(), [0, 5, 0]);
    }

    #[test]
    fn nearest_reproduces_sweep_totals() {
        let cfgs = [[1, 0, 0], [0, 1, 0], [0, 0, 1], [4, 4, 0], [7, 3, 0], [5, 2, 1], [2, 2, 2]];
        let totals: Vec<usize> = cfgs.iter().map(|r| nearest_field_type(16, *r).unwrap().total_channels()).collect();
        assert_eq!(totals, [16, 15, 15, 16, 16, 16, 18]);
    }

    #[test]
    fn infeasible_budget() {
        assert!(matches!(budget_field_type(4, [0, 0, 1]), Err(Error::Budget(_))));
        assert!(budget_field_type(4, [0, 0, 0]).is_err());
    }

    #[test]
    fn parse() {
        assert_eq!(parse_ratio("5:2:1").unwrap(), [5, 2, 1]);
        assert_eq!(parse_ratio("1:1").unwrap(), [1, 1, 0]);
        assert!(parse_ratio("a:1").is_err());
        assert!(parse_ratio("0:0").is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn never_exceeds_and_is_idempotent(total in 1usize..80, r0 in 0usize..6, r1 in 0usize..6, r2 in 0usize..6) {
                prop_assume!(r0 + r1 + r2 > 0);
                if let Ok(t) = budget_field_type(total, [r0, r1, r2]) {
                    prop_assert!(t.total_channels() <= total);
                    let again = budget_field_type(t.total_channels(), t.multiplicities()).unwrap();
                    prop_assert_eq!(again, t);
                }
            }
        }
    }
}
