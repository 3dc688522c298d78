use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use magnet_core::llm_client::mock::{FnBackend, ScriptedBackend};
use magnet_core::llm_client::prompts::{render, system_prompt, template};
use magnet_core::llm_client::{
    complete_with_retry, parse_yes_no_line, BackendError, ChatMessage, ChatParams, InflightLimiter, LlmClient,
    PromptId, RetryPolicy,
};
use magnet_core::Error;

fn user(text: &str) -> Vec<ChatMessage> {
    vec![ChatMessage::user(text)]
}

#[test]
fn retries_until_success_within_budget() {
    let backend = ScriptedBackend::new([
        Err(BackendError::Transient("503".into())),
        Err(BackendError::Transient("timeout".into())),
        Ok("done".to_string()),
    ]);
    let limiter = InflightLimiter::new(2);
    let text = complete_with_retry(
        &backend,
        &user("hi"),
        &ChatParams::default(),
        &RetryPolicy::immediate(2),
        &limiter,
    )
    .unwrap();
    assert_eq!(text, "done");
    assert_eq!(backend.calls().len(), 3);
}

#[test]
fn exhausted_retries_report_every_attempt() {
    let backend = FnBackend(|_: &[ChatMessage], _: &ChatParams| Err(BackendError::Transient("down".into())));
    let limiter = InflightLimiter::new(1);
    let err = complete_with_retry(
        &backend,
        &user("hi"),
        &ChatParams::default(),
        &RetryPolicy::immediate(2),
        &limiter,
    )
    .unwrap_err();
    match &err {
        Error::Transport { attempts } => assert_eq!(attempts.len(), 3, "{attempts:?}"),
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn fatal_errors_are_not_retried() {
    let backend = ScriptedBackend::new([Err(BackendError::Fatal("401".into())), Ok("late".to_string())]);
    let err = complete_with_retry(
        &backend,
        &user("hi"),
        &ChatParams::default(),
        &RetryPolicy::immediate(5),
        &InflightLimiter::new(1),
    )
    .unwrap_err();
    assert!(matches!(err, Error::Transport { ref attempts } if attempts.len() == 1));
    assert_eq!(backend.calls().len(), 1);
}

#[test]
fn inflight_bound_holds_under_load() {
    let active = Arc::new(AtomicUsize::new(0));
    let peak = Arc::new(AtomicUsize::new(0));
    let (a, p) = (active.clone(), peak.clone());
    let backend = FnBackend(move |_: &[ChatMessage], _: &ChatParams| {
        let now = a.fetch_add(1, Ordering::SeqCst) + 1;
        p.fetch_max(now, Ordering::SeqCst);
        thread::sleep(Duration::from_millis(2));
        a.fetch_sub(1, Ordering::SeqCst);
        Ok("ok".to_string())
    });
    let client = LlmClient::new(Arc::new(backend)).with_limiter(Arc::new(InflightLimiter::new(8)));
    let handles: Vec<_> = (0..100)
        .map(|_| {
            let c = client.clone();
            thread::spawn(move || c.complete(&user("go")).unwrap())
        })
        .collect();
    for h in handles {
        assert_eq!(h.join().unwrap(), "ok");
    }
    assert!(peak.load(Ordering::SeqCst) <= 8, "peak {}", peak.load(Ordering::SeqCst));
    assert!(peak.load(Ordering::SeqCst) >= 2);
}

#[test]
fn backoff_grows_and_caps() {
    let p = RetryPolicy::default();
    assert!(p.delay(2) > p.delay(1));
    assert!(p.delay(30) <= p.max_delay);
}

#[test]
fn yes_no_protocol() {
    assert_eq!(
        parse_yes_no_line("yes\nbecause outputs feed inputs").unwrap(),
        (true, "because outputs feed inputs".into())
    );
    assert_eq!(parse_yes_no_line("No\n5").unwrap(), (false, "5".into()));
    assert!(matches!(parse_yes_no_line("maybe"), Err(Error::Protocol(_))));
}

#[test]
fn rendered_prompts_carry_their_anchors() {
    let mut b = BTreeMap::new();
    b.insert("first_function", "{\"api_name\": \"a\"}".to_string());
    b.insert("second_function", "{\"api_name\": \"b\"}".to_string());
    let msgs = render(PromptId::NestedJudge, &b).unwrap();
    assert!(msgs
        .iter()
        .any(|m| m.content.contains("determine whether the two functions can be nested")));

    let sys = system_prompt("[{\"api_name\": \"a\"}, {\"api_name\": \"b\"}, {\"api_name\": \"c\"}]");
    assert!(sys.contains("You are an expert in composing functions"));
    assert!(sys.contains("[func_name1(params_name1=params_value1"));

    let err = render(PromptId::NestedJudge, &BTreeMap::new()).unwrap_err();
    assert!(err.to_string().contains("first_function"), "{err}");
}

#[test]
fn golden_prompt_files_match_the_registry() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/prompts");
    for id in PromptId::ALL {
        let text = std::fs::read_to_string(dir.join(format!("{}.txt", id.name()))).unwrap();
        assert_eq!(template(id).full_text(), text, "{}", id.name());
    }
}
