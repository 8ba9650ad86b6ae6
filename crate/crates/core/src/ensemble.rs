//! Cross-model validation by executed-result agreement.
//!
//! Every member's SQL is executed and the candidate is only emitted when all
//! results match; otherwise the ensemble abstains. A mixture of SQL and null
//! answers, or any member whose query fails, is a disagreement.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::answer::Answer;
use crate::error::Error;
use crate::exec::{equivalent, ExecutionOutcome, Executor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VoteRule {
    /// Every member must agree.
    #[default]
    Strict,
    /// More than half of the members must agree.
    Majority,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Agreement {
    UnanimousSql,
    UnanimousNull,
    MajoritySql,
    MajorityNull,
    Disagreement,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Candidate {
    pub model_id: String,
    /// Lower value wins when choosing which agreeing query to emit.
    pub priority: u32,
    pub answer: Answer,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MemberOutput {
    pub model_id: String,
    pub answer: String,
    pub outcome: Option<ExecutionOutcome>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EnsembleDecision {
    pub question_id: String,
    #[serde(serialize_with = "answer_as_str")]
    pub final_answer: Answer,
    pub member_outputs: Vec<MemberOutput>,
    pub agreement: Agreement,
}

fn answer_as_str<S: serde::Serializer>(a: &Answer, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(a.as_file_str())
}

fn outputs(candidates: &[&Candidate], outcomes: Option<&[ExecutionOutcome]>) -> Vec<MemberOutput> {
    candidates
        .iter()
        .enumerate()
        .map(|(i, c)| MemberOutput {
            model_id: c.model_id.clone(),
            answer: String::from(c.answer.as_file_str()),
            outcome: outcomes.map(|o| o[i].clone()),
        })
        .collect()
}

/// Validates one question's candidates. A single candidate passes through.
pub fn validate<E: Executor + ?Sized>(
    question_id: &str,
    candidates: &[Candidate],
    executor: &E,
    rule: VoteRule,
) -> EnsembleDecision {
    // priority order, so the emitted query does not depend on list position
    let mut ordered: Vec<&Candidate> = candidates.iter().collect();
    ordered.sort_by(|a, b| a.priority.cmp(&b.priority).then_with(|| a.model_id.cmp(&b.model_id)));
    let decision = |final_answer, agreement, outcomes: Option<&[ExecutionOutcome]>| EnsembleDecision {
        question_id: String::from(question_id),
        final_answer,
        member_outputs: outputs(&ordered, outcomes),
        agreement,
    };

    if ordered.len() == 1 {
        let answer = ordered[0].answer.clone();
        let agreement = if answer.is_null() { Agreement::UnanimousNull } else { Agreement::UnanimousSql };
        return decision(answer, agreement, None);
    }
    let nulls = ordered.iter().filter(|c| c.answer.is_null()).count();
    if nulls == ordered.len() {
        return decision(Answer::Null, Agreement::UnanimousNull, None);
    }
    if nulls > 0 && rule == VoteRule::Strict {
        return decision(Answer::Null, Agreement::Disagreement, None);
    }

    let outcomes: Vec<ExecutionOutcome> = ordered
        .iter()
        .map(|c| match &c.answer {
            Answer::Sql(sql) => executor.execute(sql),
            Answer::Null => ExecutionOutcome::sql_error("null answer", 0),
        })
        .collect();

    match rule {
        VoteRule::Strict => {
            let all_agree = outcomes.iter().all(|o| equivalent(&outcomes[0], o));
            if all_agree {
                decision(ordered[0].answer.clone(), Agreement::UnanimousSql, Some(&outcomes))
            } else {
                decision(Answer::Null, Agreement::Disagreement, Some(&outcomes))
            }
        }
        VoteRule::Majority => {
            let need = ordered.len() / 2 + 1;
            if nulls >= need {
                return decision(Answer::Null, Agreement::MajorityNull, Some(&outcomes));
            }
            // first member (by priority) of the largest agreeing group
            let best = (0..ordered.len())
                .filter(|&i| !ordered[i].answer.is_null())
                .map(|i| (i, outcomes.iter().filter(|o| equivalent(&outcomes[i], o)).count()))
                .fold(None::<(usize, usize)>, |best, (i, n)| match best {
                    Some((_, m)) if m >= n => best,
                    _ => Some((i, n)),
                });
            match best {
                Some((i, n)) if n >= need => {
                    let agreement = if n == ordered.len() { Agreement::UnanimousSql } else { Agreement::MajoritySql };
                    decision(ordered[i].answer.clone(), agreement, Some(&outcomes))
                }
                _ => decision(Answer::Null, Agreement::Disagreement, Some(&outcomes)),
            }
        }
    }
}

/// One model's predictions keyed by question id, with its emission priority.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelPredictions {
    pub priority: u32,
    pub answers: BTreeMap<String, Answer>,
}

/// Every subset of `models` with at least `min_size` members, smaller first,
/// each subset in the given order.
pub fn subsets(models: &[String], min_size: usize) -> Vec<Vec<String>> {
    let mut out = Vec::new();
    for size in min_size.max(1)..=models.len() {
        let mut idx: Vec<usize> = (0..size).collect();
        loop {
            out.push(idx.iter().map(|&i| models[i].clone()).collect());
            // next combination in lexicographic order
            let Some(pos) = (0..size).rev().find(|&p| idx[p] != p + models.len() - size) else {
                break;
            };
            idx[pos] += 1;
            for p in pos + 1..size {
                idx[p] = idx[p - 1] + 1;
            }
        }
    }
    out
}

/// Name of an ensemble in reports and file names.
pub fn subset_label(subset: &[String]) -> String {
    subset.join("+")
}

/// Gathers the candidates of `subset` for one question.
pub fn candidates_for(
    question_id: &str,
    subset: &[String],
    predictions: &BTreeMap<String, ModelPredictions>,
) -> Result<Vec<Candidate>, Error> {
    subset
        .iter()
        .map(|model| {
            let preds = predictions.get(model).ok_or_else(|| Error::UnknownModelId(model.clone()))?;
            let answer = preds
                .answers
                .get(question_id)
                .ok_or_else(|| Error::Alignment(alloc::format!("{model} has no prediction for {question_id}")))?;
            Ok(Candidate { model_id: model.clone(), priority: preds.priority, answer: answer.clone() })
        })
        .collect()
}

/// Validates every question under every subset, in question order.
pub fn sweep_ensembles<E: Executor + ?Sized>(
    question_ids: &[String],
    predictions: &BTreeMap<String, ModelPredictions>,
    subsets: &[Vec<String>],
    executor: &E,
    rule: VoteRule,
) -> Result<Vec<(String, Vec<EnsembleDecision>)>, Error> {
    subsets
        .iter()
        .map(|subset| {
            let decisions = question_ids
                .iter()
                .map(|qid| Ok(validate(qid, &candidates_for(qid, subset, predictions)?, executor, rule)))
                .collect::<Result<Vec<_>, Error>>()?;
            Ok((subset_label(subset), decisions))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::RawValue;
    use alloc::vec;

    /// `SELECT <n>` returns one row holding n; `SELECT rows <a>,<b>` several.
    struct Toy;

    impl Executor for Toy {
        fn execute(&self, sql: &str) -> ExecutionOutcome {
            let Some(body) = sql.strip_prefix("SELECT ") else {
                return ExecutionOutcome::sql_error("syntax error", 0);
            };
            let rows: Option<Vec<Vec<RawValue>>> = body
                .trim_start_matches("rows ")
                .split(',')
                .map(|v| v.trim().parse::<i64>().ok().map(|n| vec![RawValue::Integer(n)]))
                .collect();
            match rows {
                Some(rows) => ExecutionOutcome::ok(rows, 0),
                None => ExecutionOutcome::sql_error("no such column", 0),
            }
        }
    }

    fn cand(model: &str, priority: u32, answer: Option<&str>) -> Candidate {
        Candidate { model_id: model.into(), priority, answer: answer.map_or(Answer::Null, |s| Answer::Sql(s.into())) }
    }

    #[test]
    fn unanimous_emits_highest_priority_text() {
        let c = [cand("b", 2, Some("SELECT  1")), cand("a", 1, Some("SELECT 1")), cand("c", 3, Some("SELECT rows 1"))];
        let d = validate("q", &c, &Toy, VoteRule::Strict);
        assert_eq!(d.agreement, Agreement::UnanimousSql);
        assert_eq!(d.final_answer, Answer::Sql("SELECT 1".into()));
        assert_eq!(d.member_outputs[0].model_id, "a");
        assert!(d.member_outputs.iter().all(|m| m.outcome.is_some()));

        // list position is irrelevant
        let mut rev = c.to_vec();
        rev.reverse();
        assert_eq!(validate("q", &rev, &Toy, VoteRule::Strict), d);
    }

    #[test]
    fn null_mixture_abstains() {
        let d = validate("q", &[cand("a", 1, Some("SELECT 1")), cand("b", 2, None)], &Toy, VoteRule::Strict);
        assert_eq!(d.agreement, Agreement::Disagreement);
        assert_eq!(d.final_answer, Answer::Null);
    }

    #[test]
    fn all_null_is_unanimous_null() {
        let d = validate("q", &[cand("a", 1, None), cand("b", 2, None)], &Toy, VoteRule::Strict);
        assert_eq!(d.agreement, Agreement::UnanimousNull);
    }

    #[test]
    fn differing_rows_abstain() {
        let c = [cand("a", 1, Some("SELECT rows 1,2")), cand("b", 2, Some("SELECT rows 1,3"))];
        let d = validate("q", &c, &Toy, VoteRule::Strict);
        assert_eq!(d.agreement, Agreement::Disagreement);
        assert_eq!(d.final_answer, Answer::Null);
    }

    #[test]
    fn failures_are_disagreement() {
        let c = [cand("a", 1, Some("SELECT x")), cand("b", 2, Some("SELECT x"))];
        assert_eq!(validate("q", &c, &Toy, VoteRule::Strict).agreement, Agreement::Disagreement);
    }

    #[test]
    fn single_member_passes_through() {
        let d = validate("q", &[cand("a", 1, Some("SELECT x"))], &Toy, VoteRule::Strict);
        assert_eq!(d.final_answer, Answer::Sql("SELECT x".into()));
    }

    #[test]
    fn majority_rule() {
        let c = [cand("a", 1, Some("SELECT 2")), cand("b", 2, Some("SELECT 1")), cand("c", 3, Some("SELECT 1"))];
        let d = validate("q", &c, &Toy, VoteRule::Majority);
        assert_eq!(d.agreement, Agreement::MajoritySql);
        assert_eq!(d.final_answer, Answer::Sql("SELECT 1".into()));
        assert_eq!(validate("q", &c, &Toy, VoteRule::Strict).agreement, Agreement::Disagreement);

        let c = [cand("a", 1, None), cand("b", 2, None), cand("c", 3, Some("SELECT 1"))];
        assert_eq!(validate("q", &c, &Toy, VoteRule::Majority).agreement, Agreement::MajorityNull);
        let c = [cand("a", 1, Some("SELECT 3")), cand("b", 2, None), cand("c", 3, Some("SELECT 1"))];
        assert_eq!(validate("q", &c, &Toy, VoteRule::Majority).final_answer, Answer::Null);
    }

    #[test]
    fn subsets_of_three() {
        let models: Vec<String> = ["a", "b", "c"].iter().map(|s| String::from(*s)).collect();
        let s = subsets(&models, 2);
        let labels: Vec<String> = s.iter().map(|x| subset_label(x)).collect();
        assert_eq!(labels, ["a+b", "a+c", "b+c", "a+b+c"]);
        assert_eq!(subsets(&models, 1).len(), 7);
        assert!(subsets(&models[..1], 2).is_empty());
    }

    #[test]
    fn sweep_checks_ids() {
        let mut preds = BTreeMap::new();
        let answers: BTreeMap<String, Answer> =
            [(String::from("q1"), Answer::Sql("SELECT 1".into()))].into_iter().collect();
        preds.insert(String::from("a"), ModelPredictions { priority: 1, answers });
        let ids = [String::from("q1")];
        let err = sweep_ensembles(&ids, &preds, &[vec!["a".into(), "zz".into()]], &Toy, VoteRule::Strict);
        assert_eq!(err, Err(Error::UnknownModelId("zz".into())));
        let single = sweep_ensembles(&ids, &preds, &[vec!["a".into()]], &Toy, VoteRule::Strict).unwrap();
        assert_eq!(single[0].1[0].final_answer, Answer::Sql("SELECT 1".into()));
        let missing = sweep_ensembles(&[String::from("q2")], &preds, &[vec!["a".into()]], &Toy, VoteRule::Strict);
        assert!(matches!(missing, Err(Error::Alignment(_))));
    }
}
