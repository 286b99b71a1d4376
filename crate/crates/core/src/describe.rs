//! Comparative sentences from the top-k prominent differences of a pair.
//!
//! ```text
//! The left image is more sporty, less stylish, and less shiny than the right image.
//! ```
//!
//! Each attribute contributes a clause from its template (default
//! `"is {polarity} {name}"`). A clause whose leading verb repeats the
//! previous clause's verb drops it.

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::dataset::{Attribute, AttributeId, AttributeVocabulary};
use crate::error::{Error, Result};
use crate::prominence::{Polarity, ProminenceModel, ProminencePrediction};
use crate::rng::Rng;

const PREFIX: &str = "The left image ";
const SUFFIX: &str = " than the right image.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Statement {
    pub attribute: AttributeId,
    pub name: String,
    pub polarity: Polarity,
    /// Absent for descriptions not produced by a predictor.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Description {
    pub statements: Vec<Statement>,
    pub text: String,
}

fn polarity_word(p: Polarity) -> &'static str {
    match p {
        Polarity::More => "more",
        Polarity::Less => "less",
        Polarity::Equal => "similarly",
    }
}

fn template(a: &Attribute) -> String {
    a.template
        .clone()
        .unwrap_or_else(|| format!("is {{polarity}} {}", a.name))
}

/// The clause's leading verb, when the template starts with one.
fn leading_verb(template: &str) -> Option<&str> {
    let first = template.split(' ').next()?;
    (!first.contains("{polarity}") && template.len() > first.len()).then_some(first)
}

/// Clause text, with the leading verb removed when `elide` is set.
fn clause(a: &Attribute, polarity: Polarity, elide: bool) -> String {
    let t = template(a);
    let body = match (elide, leading_verb(&t)) {
        (true, Some(verb)) => t[verb.len() + 1..].to_string(),
        _ => t,
    };
    body.replace("{polarity}", polarity_word(polarity))
}

fn join(clauses: &[String]) -> String {
    match clauses {
        [] => String::new(),
        [one] => one.clone(),
        [a, b] => format!("{a} and {b}"),
        [init @ .., last] => format!("{}, and {last}", init.join(", ")),
    }
}

pub fn render(statements: &[Statement], vocab: &AttributeVocabulary) -> Result<String> {
    let mut clauses = Vec::with_capacity(statements.len());
    let mut previous_verb: Option<String> = None;
    for s in statements {
        let a = vocab.get(s.attribute).ok_or(Error::BadAttribute(s.attribute))?;
        let t = template(a);
        let verb = leading_verb(&t).map(str::to_string);
        let elide = verb.is_some() && verb == previous_verb;
        clauses.push(clause(a, s.polarity, elide));
        previous_verb = verb;
    }
    Ok(format!("{PREFIX}{}{SUFFIX}", join(&clauses)))
}

/// Describes the first `k` entries of `prediction`.
pub fn describe_prediction(
    prediction: &ProminencePrediction,
    k: usize,
    vocab: &AttributeVocabulary,
) -> Result<Description> {
    if k < 1 {
        return Err(Error::InvalidParameter("k must be at least 1".into()));
    }
    let statements: Vec<Statement> = prediction
        .ranked
        .iter()
        .take(k)
        .map(|&(attribute, confidence)| Statement {
            attribute,
            name: vocab.name(attribute).to_string(),
            polarity: prediction.polarity[attribute],
            confidence: Some(confidence),
        })
        .collect();
    let text = render(&statements, vocab)?;
    Ok(Description { statements, text })
}

pub fn generate_description(
    model: &ProminenceModel,
    r_i: &[f64],
    r_j: &[f64],
    k: usize,
    vocab: &AttributeVocabulary,
) -> Result<Description> {
    describe_prediction(&model.predict(r_i, r_j)?, k, vocab)
}

/// One entry of the full ranked confidence list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedConfidence {
    pub attribute_id: AttributeId,
    pub name: String,
    pub confidence: f64,
}

/// A description together with every attribute's confidence, best first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub statements: Vec<Statement>,
    pub text: String,
    pub confidences: Vec<RankedConfidence>,
}

/// The top-`k` description of a prediction plus its whole ranked list.
pub fn explain_prediction(
    prediction: &ProminencePrediction,
    k: usize,
    vocab: &AttributeVocabulary,
) -> Result<Explanation> {
    let Description { statements, text } = describe_prediction(prediction, k, vocab)?;
    let confidences = prediction
        .ranked
        .iter()
        .map(|&(attribute_id, confidence)| RankedConfidence {
            attribute_id,
            name: vocab.name(attribute_id).to_string(),
            confidence,
        })
        .collect();
    Ok(Explanation {
        statements,
        text,
        confidences,
    })
}

/// `k` attributes drawn uniformly among those with `|r_i - r_j| > tau`,
/// padded with the widest remaining gaps when fewer qualify.
pub fn random_true_difference_description(
    r_i: &[f64],
    r_j: &[f64],
    k: usize,
    tau: f64,
    vocab: &AttributeVocabulary,
    r: &mut Rng,
) -> Result<Description> {
    if k < 1 {
        return Err(Error::InvalidParameter("k must be at least 1".into()));
    }
    if r_i.len() != r_j.len() || r_i.len() != vocab.len() {
        return Err(Error::LengthMismatch {
            expected: vocab.len(),
            found: r_i.len().max(r_j.len()),
        });
    }
    let gap = |m: usize| (r_i[m] - r_j[m]).abs();
    let k = k.min(vocab.len());
    let qualifying: Vec<AttributeId> = (0..vocab.len()).filter(|&m| gap(m) > tau).collect();
    let mut chosen: Vec<AttributeId> = sample(r, qualifying.len(), k.min(qualifying.len()))
        .into_iter()
        .map(|p| qualifying[p])
        .collect();
    if chosen.len() < k {
        let mut rest: Vec<AttributeId> = (0..vocab.len()).filter(|m| !chosen.contains(m)).collect();
        rest.sort_by(|&a, &b| gap(b).total_cmp(&gap(a)).then(a.cmp(&b)));
        chosen.extend(rest.into_iter().take(k - chosen.len()));
    }
    let statements: Vec<Statement> = chosen
        .into_iter()
        .map(|m| Statement {
            attribute: m,
            name: vocab.name(m).to_string(),
            polarity: Polarity::of(r_i[m], r_j[m]),
            confidence: None,
        })
        .collect();
    let text = render(&statements, vocab)?;
    Ok(Description { statements, text })
}

/// Recovers `(attribute, polarity)` pairs from a rendered sentence.
pub fn parse_sentence(text: &str, vocab: &AttributeVocabulary) -> Result<Vec<(AttributeId, Polarity)>> {
    let bad = || Error::InvalidParameter(format!("not a comparative description: `{text}`"));
    let mut rest = text
        .strip_prefix(PREFIX)
        .and_then(|s| s.strip_suffix(SUFFIX))
        .ok_or_else(bad)?;
    let mut candidates = Vec::new();
    for (m, a) in vocab.attributes().iter().enumerate() {
        for p in [Polarity::More, Polarity::Less, Polarity::Equal] {
            for elide in [false, true] {
                candidates.push((clause(a, p, elide), m, p));
            }
        }
    }
    let mut out = Vec::new();
    while !rest.is_empty() {
        if !out.is_empty() {
            rest = [", and ", ", ", " and "]
                .iter()
                .find_map(|sep| rest.strip_prefix(sep))
                .ok_or_else(bad)?;
        }
        let (text, m, p) = candidates
            .iter()
            .filter(|(c, _, _)| {
                rest.strip_prefix(c.as_str())
                    .is_some_and(|after| after.is_empty() || after.starts_with(',') || after.starts_with(" and "))
            })
            .max_by_key(|(c, _, _)| c.len())
            .ok_or_else(bad)?;
        out.push((*m, *p));
        rest = &rest[text.len()..];
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn shoes() -> AttributeVocabulary {
        AttributeVocabulary::from_names(["sporty", "stylish", "shiny", "comfortable"]).unwrap()
    }

    fn prediction(order: &[(usize, Polarity)], m: usize) -> ProminencePrediction {
        let mut polarity = vec![Polarity::Equal; m];
        let mut ranked: Vec<(usize, f64)> = order
            .iter()
            .enumerate()
            .map(|(k, &(a, p))| {
                polarity[a] = p;
                (a, 0.9 - 0.1 * k as f64)
            })
            .collect();
        for a in 0..m {
            if !ranked.iter().any(|(b, _)| *b == a) {
                ranked.push((a, 0.01));
            }
        }
        ProminencePrediction { ranked, polarity }
    }

    #[test]
    fn three_clause_sentence() {
        let p = prediction(&[(0, Polarity::More), (1, Polarity::Less), (2, Polarity::Less)], 4);
        let d = describe_prediction(&p, 3, &shoes()).unwrap();
        assert_eq!(
            d.text,
            "The left image is more sporty, less stylish, and less shiny than the right image."
        );
        assert_eq!(d.statements.len(), 3);
    }

    #[test]
    fn one_and_two_clauses() {
        let p = prediction(&[(3, Polarity::Less), (0, Polarity::More)], 4);
        assert_eq!(
            describe_prediction(&p, 1, &shoes()).unwrap().text,
            "The left image is less comfortable than the right image."
        );
        assert_eq!(
            describe_prediction(&p, 2, &shoes()).unwrap().text,
            "The left image is less comfortable and more sporty than the right image."
        );
        assert!(describe_prediction(&p, 0, &shoes()).is_err());
        assert_eq!(describe_prediction(&p, 10, &shoes()).unwrap().statements.len(), 4);
    }

    #[test]
    fn equal_scores_render_similarly() {
        let p = prediction(&[(1, Polarity::Equal)], 4);
        assert_eq!(
            describe_prediction(&p, 1, &shoes()).unwrap().text,
            "The left image is similarly stylish than the right image."
        );
    }

    #[test]
    fn custom_templates_keep_their_verb() {
        let vocab = AttributeVocabulary::new(vec![
            Attribute {
                name: "teeth".into(),
                template: Some("has {polarity} visible teeth".into()),
            },
            Attribute {
                name: "smiling".into(),
                template: None,
            },
            Attribute {
                name: "eyes".into(),
                template: Some("has {polarity} open eyes".into()),
            },
        ])
        .unwrap();
        let p = prediction(&[(0, Polarity::More), (2, Polarity::Less), (1, Polarity::Less)], 3);
        let d = describe_prediction(&p, 3, &vocab).unwrap();
        assert_eq!(
            d.text,
            "The left image has more visible teeth, less open eyes, and is less smiling than the right image."
        );
        assert_eq!(
            parse_sentence(&d.text, &vocab).unwrap(),
            vec![(0, Polarity::More), (2, Polarity::Less), (1, Polarity::Less)]
        );
    }

    #[test]
    fn swapped_images_flip_polarity() {
        let vocab = shoes();
        let (a, b) = ([1.0, -0.5, 0.3, 0.0], [0.2, 0.5, 0.9, 0.0]);
        let mut g = rng::stream(0, &[]);
        let d = random_true_difference_description(&a, &b, 3, 0.1, &vocab, &mut g).unwrap();
        let mut g = rng::stream(0, &[]);
        let e = random_true_difference_description(&b, &a, 3, 0.1, &vocab, &mut g).unwrap();
        for (s, t) in d.statements.iter().zip(&e.statements) {
            assert_eq!(s.attribute, t.attribute);
            assert_eq!(s.polarity, t.polarity.flipped());
        }
    }

    #[test]
    fn random_descriptions_prefer_true_differences() {
        let vocab = shoes();
        let (a, b) = ([0.0, 0.0, 0.0, 0.0], [0.5, 0.05, -0.4, 0.02]);
        let mut g = rng::stream(2, &[]);
        for _ in 0..50 {
            let d = random_true_difference_description(&a, &b, 2, 0.1, &vocab, &mut g).unwrap();
            let mut got: Vec<_> = d.statements.iter().map(|s| s.attribute).collect();
            got.sort();
            assert_eq!(got, vec![0, 2]);
        }
        // only one qualifies: padded with the next widest gap (attribute 1)
        let d = random_true_difference_description(&a, &b, 3, 0.45, &vocab, &mut g).unwrap();
        assert_eq!(
            d.statements.iter().map(|s| s.attribute).collect::<Vec<_>>(),
            vec![0, 2, 1]
        );
        // none qualifies: entirely by width
        let d = random_true_difference_description(&a, &b, 2, 5.0, &vocab, &mut g).unwrap();
        assert_eq!(d.statements.iter().map(|s| s.attribute).collect::<Vec<_>>(), vec![0, 2]);
        let x = random_true_difference_description(&a, &b, 2, 0.1, &vocab, &mut rng::stream(9, &[])).unwrap();
        let y = random_true_difference_description(&a, &b, 2, 0.1, &vocab, &mut rng::stream(9, &[])).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn explanation_lists_every_attribute() {
        let p = prediction(&[(2, Polarity::More), (0, Polarity::Less)], 4);
        let e = explain_prediction(&p, 2, &shoes()).unwrap();
        assert_eq!(e.statements.len(), 2);
        assert_eq!(e.confidences.len(), 4);
        assert_eq!(e.confidences[0].name, "shiny");
        assert_eq!(e.text, describe_prediction(&p, 2, &shoes()).unwrap().text);
        for (s, c) in e.statements.iter().zip(&e.confidences) {
            assert_eq!(s.confidence, Some(c.confidence));
        }
    }

    #[test]
    fn parse_rejects_other_text() {
        assert!(parse_sentence("A shoe.", &shoes()).is_err());
        assert!(parse_sentence("The left image is more purple than the right image.", &shoes()).is_err());
    }

    use proptest::strategy::Strategy;

    proptest::proptest! {
        #[test]
        fn rendered_text_round_trips(
            picks in proptest::sample::subsequence((0usize..4).collect::<Vec<_>>(), 1..=4).prop_shuffle(),
            signs in proptest::collection::vec(0u8..3, 4),
        ) {
            let pol = |s: u8| [Polarity::More, Polarity::Less, Polarity::Equal][s as usize];
            let order: Vec<(usize, Polarity)> = picks.iter().map(|&a| (a, pol(signs[a]))).collect();
            let p = prediction(&order, 4);
            let d = describe_prediction(&p, order.len(), &shoes()).unwrap();
            proptest::prop_assert_eq!(parse_sentence(&d.text, &shoes()).unwrap(), order);
        }
    }
}
