use toolforge_core::backend::{Backend, BackendError, DecodeParams, DefectProfile, ScriptedBackend};
use toolforge_core::eval_harness::{greedy_params, run_eval, Category, EvalCase, LiveWeights, Subset};
use toolforge_core::prompting::ChatPrompt;
use toolforge_core::synth::{eval_case, eval_suite, Scenario};

fn scripted(profile: DefectProfile, cases: &[EvalCase]) -> ScriptedBackend {
    ScriptedBackend::new(profile).with_scenarios(cases.iter().map(Scenario::from_case))
}

#[test]
fn clean_backend_scores_full_marks() {
    let cases = eval_suite(11, 5);
    let run = run_eval(&cases, &scripted(DefectProfile::clean(), &cases), &greedy_params(2048, None), &LiveWeights::default(), 4);
    let report = run.table.report();
    assert_eq!(report.nonlive, Some(100.0));
    assert_eq!(report.live, Some(100.0));
    assert_eq!(report.overall, Some(100.0));
    assert_eq!(report.cases, 40);
    assert!(run.outcomes.iter().all(|o| o.correct && o.error.is_none()));
}

#[test]
fn wrong_answer_rate_shows_up_as_accuracy() {
    let cases: Vec<EvalCase> = (0..400)
        .map(|i| eval_case(format!("s{i}"), Subset::Nonlive, Category::Simple, 5, i))
        .collect();
    let profile = DefectProfile {
        p_wrong_answer: 0.25,
        seed: 3,
        ..DefectProfile::default()
    };
    let run = run_eval(&cases, &scripted(profile, &cases), &greedy_params(2048, None), &LiveWeights::default(), 8);
    let acc = run.table.category(Subset::Nonlive, Category::Simple).unwrap().accuracy * 100.0;
    assert!((acc - 75.0).abs() <= 5.0, "{acc}");
    // Other cells are absent, so no subset score is reported.
    assert_eq!(run.table.nonlive, None);
}

#[test]
fn worker_count_does_not_change_outcomes() {
    let cases = eval_suite(12, 6);
    let profile = DefectProfile {
        p_wrong_answer: 0.3,
        p_unparsable: 0.2,
        ..DefectProfile::default()
    };
    let b = scripted(profile, &cases);
    let a = run_eval(&cases, &b, &greedy_params(2048, None), &LiveWeights::default(), 1);
    let c = run_eval(&cases, &b, &greedy_params(2048, None), &LiveWeights::default(), 7);
    assert_eq!(a.outcomes, c.outcomes);
    assert_eq!(a.table, c.table);
}

struct Fixed(Result<Vec<String>, BackendError>);

impl Backend for Fixed {
    fn complete(&self, _: &ChatPrompt, _: &DecodeParams) -> Result<Vec<String>, BackendError> {
        self.0.clone()
    }

    fn max_in_flight(&self) -> usize {
        4
    }
}

#[test]
fn empty_and_failing_completions_score_zero() {
    let cases = eval_suite(13, 2);
    for backend in [
        Fixed(Ok(vec![String::new()])),
        Fixed(Ok(vec![])),
        Fixed(Ok(vec!["I cannot help with that.".into()])),
        Fixed(Err(BackendError::Timeout)),
    ] {
        let run = run_eval(&cases, &backend, &greedy_params(64, None), &LiveWeights::default(), 2);
        let report = run.table.report();
        assert_eq!(report.overall, Some(0.0));
        assert!(run.outcomes.iter().all(|o| !o.correct));
    }
}

#[test]
fn unparsable_completion_records_a_reason() {
    let cases = eval_suite(14, 1);
    let run = run_eval(
        &cases,
        &Fixed(Ok(vec!["<tool_call>\n{\"name\": \"x\"\n</tool_call>".into()])),
        &greedy_params(64, None),
        &LiveWeights::default(),
        1,
    );
    assert!(run.outcomes.iter().all(|o| !o.correct && o.error.is_some()));
}
