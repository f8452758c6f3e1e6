//! Remote-driver protocol tests against the bundled mock server.

use std::time::Duration;

use logitgate::engine::mock::MockServer;
use logitgate::engine::remote::{mask_to_bias, RemoteConfig, RemoteEngine, RetryPolicy};
use logitgate::engine::toy::ToyModelSpec;
use logitgate::engine::{generate, Engine};
use logitgate::error::Error;
use logitgate::trigger::standard_interventions;
use logitgate::types::{Intervention, SamplerConfig};

fn fast_retry() -> RetryPolicy {
    RetryPolicy {
        backoff: vec![
            Duration::from_millis(5),
            Duration::from_millis(10),
            Duration::from_millis(20),
        ],
    }
}

fn engine_for(server: &MockServer) -> RemoteEngine {
    let spec = ToyModelSpec::canonical();
    let mut config = RemoteConfig::new(server.url(), "toy-canonical", spec.specials.clone());
    config.retry = fast_retry();
    config.request_timeout = Duration::from_secs(5);
    RemoteEngine::new(config)
}

#[test]
fn one_request_per_emitted_token_and_biases_equal_masks() {
    let server = MockServer::start(ToyModelSpec::canonical()).unwrap();
    let engine = engine_for(&server);
    let arms = standard_interventions(engine.specials());

    let mut total_tokens = 0;
    for (i, arm) in arms.iter().enumerate() {
        let config = SamplerConfig::identity(100 + i as u64);
        let record = generate(&engine, "probe question", arm, &config, 64).unwrap();
        total_tokens += record.tokens.len();

        let requests = server.requests();
        // The most recent record.tokens.len() requests belong to this
        // generation (requests are appended in order; a single session is
        // strictly sequential).
        let start = requests.len() - record.tokens.len();
        for (step, request) in requests[start..].iter().enumerate() {
            assert_eq!(request.path, "/v1/completions");
            assert_eq!(request.body["max_tokens"], 1);
            let expected = mask_to_bias(&record.mask_log[step], -100.0);
            let got = request.logit_bias();
            match (&expected, &got) {
                (None, None) => {
                    assert!(
                        request.body.get("logit_bias").is_none(),
                        "empty mask must omit the bias field entirely"
                    );
                }
                (Some(e), Some(g)) => assert_eq!(e, g, "step {step}"),
                _ => panic!("step {step}: bias mismatch: expected {expected:?}, got {got:?}"),
            }
        }
        assert_eq!(requests.len() - start, record.tokens.len());
    }
    assert_eq!(server.request_count(), total_tokens);
}

#[test]
fn remote_suppress_nn_carries_min_bias_at_the_branch_step() {
    let server = MockServer::start(ToyModelSpec::canonical()).unwrap();
    let engine = engine_for(&server);
    let arms = standard_interventions(engine.specials());
    let sp = engine.specials().clone();
    let config = SamplerConfig::identity(7);
    let record = generate(&engine, "q", &arms[1], &config, 64).unwrap();

    // Step right after think-open carries {double_newline: -100}.
    let open_at = record
        .tokens
        .iter()
        .position(|t| *t == sp.think_open)
        .unwrap();
    let requests = server.requests();
    let bias = requests[open_at + 1].logit_bias().expect("bias present");
    assert_eq!(bias.get(&sp.double_newline.0.to_string()), Some(&-100.0));
}

#[test]
fn transient_failures_are_retried() {
    let server = MockServer::start(ToyModelSpec::canonical()).unwrap();
    let engine = engine_for(&server);
    server.fail_next(2);
    let config = SamplerConfig::identity(3);
    let record = generate(&engine, "q", &Intervention::baseline(), &config, 64).unwrap();
    assert!(!record.tokens.is_empty());
    // Two failed requests plus one request per token.
    assert_eq!(server.request_count(), record.tokens.len() + 2);
}

#[test]
fn persistent_failure_errors_after_bounded_attempts() {
    let server = MockServer::start(ToyModelSpec::canonical()).unwrap();
    let engine = engine_for(&server);
    server.fail_next(1000);
    let config = SamplerConfig::identity(3);
    let err = generate(&engine, "q", &Intervention::baseline(), &config, 64).unwrap_err();
    match err {
        Error::Transport { attempts, .. } => assert_eq!(attempts, 4),
        other => panic!("unexpected error: {other}"),
    }
    // Initial attempt + three retries.
    assert_eq!(server.request_count(), 4);
}

#[test]
fn bias_unsupported_server_is_a_fatal_config_error() {
    let server = MockServer::start(ToyModelSpec::canonical()).unwrap();
    let engine = engine_for(&server);
    server.reject_bias(true);
    let arms = standard_interventions(engine.specials());
    let config = SamplerConfig::identity(3);
    let err = generate(&engine, "q", &arms[1], &config, 64).unwrap_err();
    match &err {
        Error::ServerRejected { status, .. } => assert_eq!(*status, 400),
        other => panic!("unexpected error: {other}"),
    }
    assert_eq!(err.kind(), logitgate::ErrorKind::Config);
}

#[test]
fn bearer_token_is_sent_when_configured() {
    let server = MockServer::start(ToyModelSpec::canonical()).unwrap();
    let spec = ToyModelSpec::canonical();
    let var = "LOGITGATE_MOCK_ENGINE_KEY";
    std::env::set_var(var, "sekret");
    let mut config = RemoteConfig::new(server.url(), "toy", spec.specials.clone());
    config.api_key_env = Some(var.to_string());
    config.retry = fast_retry();
    let engine = RemoteEngine::new(config);
    engine.require_credentials().unwrap();

    let sampler = SamplerConfig::identity(0);
    generate(&engine, "q", &Intervention::baseline(), &sampler, 4).unwrap();
    let requests = server.requests();
    assert!(requests
        .iter()
        .all(|r| r.authorization.as_deref() == Some("Bearer sekret")));
    std::env::remove_var(var);
}

#[test]
fn remote_stream_terminates_cleanly_on_server_stop() {
    let server = MockServer::start(ToyModelSpec::canonical()).unwrap();
    let engine = engine_for(&server);
    let sp = engine.specials().clone();
    for seed in 0..20 {
        let config = SamplerConfig::identity(seed);
        let record = generate(&engine, "q", &Intervention::baseline(), &config, 64).unwrap();
        assert_eq!(*record.tokens.last().unwrap(), sp.eos);
        // Mask log and stream stay aligned.
        assert_eq!(record.mask_log.len(), record.tokens.len());
    }
}
