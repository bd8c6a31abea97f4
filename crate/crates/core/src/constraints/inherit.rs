use serde::{Deserialize, Serialize};

use super::{ConstraintSpec, Dimension, LengthConstraint, PhraseList};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InheritanceReport {
    pub holds: bool,
    /// Dimensions the evolved spec dropped or loosened, canonical order.
    pub violations: Vec<Dimension>,
}

fn same_text(a: &str, b: &str) -> bool {
    a.trim().to_lowercase() == b.trim().to_lowercase()
}

fn superset(user: &PhraseList, evolved: &PhraseList) -> bool {
    user.iter().all(|u| evolved.contains_ci(u))
}

fn interval_within(user: &LengthConstraint, evolved: &LengthConstraint) -> bool {
    if user.unit != evolved.unit {
        return false;
    }
    let lower_ok = match (user.min, evolved.min) {
        (None, _) => true,
        (Some(u), Some(e)) => e >= u,
        (Some(_), None) => false,
    };
    let upper_ok = match (user.max, evolved.max) {
        (None, _) => true,
        (Some(u), Some(e)) => e <= u,
        (Some(_), None) => false,
    };
    lower_ok && upper_ok
}

fn inherits(dim: Dimension, user: &ConstraintSpec, evolved: &ConstraintSpec) -> bool {
    match dim {
        Dimension::View => match (&user.view, &evolved.view) {
            (Some(u), Some(e)) => same_text(u, e),
            _ => false,
        },
        Dimension::Genre => match (&user.genre, &evolved.genre) {
            (Some(u), Some(e)) => same_text(u, e),
            _ => false,
        },
        Dimension::Sentiment => match (&user.sentiment, &evolved.sentiment) {
            (Some(u), Some(e)) => {
                let polarity_ok = u.polarity.is_none() || u.polarity == e.polarity;
                let tone_ok = match (&u.tone, &e.tone) {
                    (None, _) => true,
                    (Some(ut), Some(et)) => same_text(ut, et),
                    (Some(_), None) => false,
                };
                polarity_ok && tone_ok
            }
            _ => false,
        },
        Dimension::Keywords => match (&user.keywords, &evolved.keywords) {
            (Some(u), Some(e)) => superset(u, e),
            _ => false,
        },
        Dimension::FocusContent => match (&user.focus_content, &evolved.focus_content) {
            (Some(u), Some(e)) => superset(u, e),
            _ => false,
        },
        Dimension::Length => match (&user.length, &evolved.length) {
            (Some(u), Some(e)) => interval_within(u, e),
            _ => false,
        },
        Dimension::Format => user.format.is_some() && user.format == evolved.format,
    }
}

/// Every dimension the user constrained must survive in the evolved spec with
/// an equal or tighter value.
pub fn check_inheritance(user: &ConstraintSpec, evolved: &ConstraintSpec) -> InheritanceReport {
    let violations: Vec<Dimension> = user
        .dimensions()
        .into_iter()
        .filter(|&d| !inherits(d, user, evolved))
        .collect();
    InheritanceReport {
        holds: violations.is_empty(),
        violations,
    }
}

#[cfg(test)]
mod tests {
    use super::super::{strategies, LengthUnit};
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn keyword_superset_inherits() {
        let user = ConstraintSpec {
            keywords: PhraseList::new(["Tesla"]),
            ..Default::default()
        };
        let evolved = ConstraintSpec {
            keywords: PhraseList::new(["Tesla", "Cybercab"]),
            ..Default::default()
        };
        assert!(check_inheritance(&user, &evolved).holds);
    }

    #[test]
    fn loosened_max_is_reported() {
        let user = ConstraintSpec {
            length: Some(LengthConstraint::max_words(80)),
            ..Default::default()
        };
        let evolved = ConstraintSpec {
            length: Some(LengthConstraint::max_words(100)),
            ..Default::default()
        };
        let r = check_inheritance(&user, &evolved);
        assert!(!r.holds);
        assert_eq!(r.violations, vec![Dimension::Length]);
    }

    #[test]
    fn empty_user_spec_is_vacuous() {
        let evolved = ConstraintSpec {
            genre: Some("poetry".into()),
            ..Default::default()
        };
        assert!(check_inheritance(&ConstraintSpec::default(), &evolved).holds);
    }

    #[test]
    fn unit_change_breaks_length() {
        let user = ConstraintSpec {
            length: Some(LengthConstraint::new(LengthUnit::Sentences, Some(2), Some(2)).unwrap()),
            ..Default::default()
        };
        let evolved = ConstraintSpec {
            length: Some(LengthConstraint::max_words(40)),
            ..Default::default()
        };
        assert_eq!(check_inheritance(&user, &evolved).violations, vec![Dimension::Length]);
    }

    proptest! {
        #[test]
        fn reflexive(spec in strategies::spec()) {
            prop_assert!(check_inheritance(&spec, &spec).holds);
        }

        #[test]
        fn transitive(a in strategies::spec(), b in strategies::spec(), c in strategies::spec()) {
            if check_inheritance(&a, &b).holds && check_inheritance(&b, &c).holds {
                prop_assert!(check_inheritance(&a, &c).holds);
            }
        }
    }
}
