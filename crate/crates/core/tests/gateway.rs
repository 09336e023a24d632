mod common;

use std::time::Duration;

use embedagent::observation::AriaElement;
use embedagent::wire::{ActionResultPayload, ChatRequestPayload, Payload};
use serde_json::Value;

use common::{demo_app, demo_config, eventually, start, start_demo, Client, DEMO_GOAL};

async fn health(server: &embedagent::gateway::RunningServer) -> Value {
    reqwest::get(server.http_url("/health")).await.unwrap().json().await.unwrap()
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn hello_assigns_distinct_sessions() {
    let server = start_demo().await;
    let a = Client::connect(&server.ws_url()).await;
    let b = Client::connect(&server.ws_url()).await;
    assert_ne!(a.session_id, b.session_id);
    assert!(!a.resumed);
    assert_eq!(a.session_id.len(), 32);
    assert_eq!(health(&server).await["sessions"], 2);
    server.stop().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn identical_observations_apply_once() {
    let server = start_demo().await;
    let app = demo_app();
    for k in [2usize, 5, 10] {
        let mut c = Client::connect(&server.ws_url()).await;
        c.register_demo(&app).await; // first of the k frames
        for _ in 1..k {
            c.observe(&app.snapshot()).await;
        }
        let handle = server.gateway().session(&c.session_id).unwrap();
        let sid = c.session_id.clone();
        let dupes = || {
            server
                .gateway()
                .log()
                .session_events(&sid)
                .iter()
                .filter(|e| e["event"] == "observation_duplicate")
                .count()
        };
        assert!(eventually(|| dupes() == k - 1).await);
        assert_eq!(handle.apply_count(), 1, "k={k}");

        let mut changed = app.snapshot();
        changed.elements.push(AriaElement::new("button", "New"));
        c.observe(&changed).await;
        assert!(eventually(|| handle.apply_count() == 2).await);
        // filtered-out tags do not count as a change
        let mut cosmetic = changed.clone();
        cosmetic.elements.push(AriaElement::new("div", "wrapper"));
        c.observe(&cosmetic).await;
        assert!(eventually(|| dupes() == k).await);
        assert_eq!(handle.apply_count(), 2);
        c.close().await;
    }
    server.stop().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn protocol_errors_keep_the_connection() {
    let server = start_demo().await;
    let mut c = Client::connect(&server.ws_url()).await;
    c.register_demo(&demo_app()).await;

    let seq = c.send(Payload::ActionResult(ActionResultPayload::ok("nope"))).await;
    let m = c.recv().await.unwrap();
    let Payload::Error(e) = m.payload else { panic!("{m:?}") };
    assert_eq!((e.code.as_str(), e.offending_seq), ("unknown_correlation", Some(seq)));

    c.send_raw("{not json").await;
    let Payload::Error(e) = c.recv().await.unwrap().payload else { panic!() };
    assert_eq!(e.code, "malformed_frame");

    c.send_raw(&format!(
        r#"{{"session_id":"{}","seq":99,"kind":"teleport","payload":{{}}}}"#,
        c.session_id
    ))
    .await;
    let Payload::Error(e) = c.recv().await.unwrap().payload else { panic!() };
    assert_eq!((e.code.as_str(), e.offending_seq), ("unknown_kind", Some(99)));

    c.send_raw(&format!(r#"{{"session_id":"{}","seq":1,"kind":"chat_request","payload":{{"text":"hi"}}}}"#, c.session_id))
        .await;
    let Payload::Error(e) = c.recv().await.unwrap().payload else { panic!() };
    assert_eq!((e.code.as_str(), e.offending_seq), ("sequence_regression", Some(1)));

    c.seq += 1;
    c.send_raw(&format!(
        r#"{{"session_id":"someone-else","seq":{},"kind":"chat_request","payload":{{"text":"hi"}}}}"#,
        c.seq
    ))
    .await;
    let Payload::Error(e) = c.recv().await.unwrap().payload else { panic!() };
    assert_eq!(e.code, "session_mismatch");

    c.send(Payload::ChatResponse(embedagent::wire::ChatResponsePayload { text: "x".into() })).await;
    let Payload::Error(e) = c.recv().await.unwrap().payload else { panic!() };
    assert_eq!(e.code, "unexpected_kind");

    // still serving: a question the scripts do not know gets the fallback answer
    c.send(Payload::ChatRequest(ChatRequestPayload { text: "hello there".into() })).await;
    let m = c.recv_significant().await.unwrap();
    assert!(matches!(m.payload, Payload::ChatResponse(ref r) if r.text.contains("chemistry demo")), "{m:?}");
    server.stop().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn withheld_result_times_out_with_one_pending_action() {
    let server = start_demo().await;
    let mut c = Client::connect(&server.ws_url()).await;
    c.register_demo(&demo_app()).await;
    c.send(Payload::ChatRequest(ChatRequestPayload {
        text: format!("{DEMO_GOAL}CCF"),
    }))
    .await;
    let m = c.recv_significant().await.unwrap();
    let Payload::ActionRequest(req) = m.payload else { panic!("{m:?}") };
    assert_eq!(req.function_name, "type");
    assert_eq!(m.correlation_id.as_deref(), Some(req.correlation_id.as_str()));
    // withhold: the next significant frame must be the timeout, not a second action
    let started = std::time::Instant::now();
    let m = c.recv_significant().await.unwrap();
    let Payload::Error(e) = m.payload else { panic!("{m:?}") };
    assert_eq!(e.code, "action_timeout");
    assert!(started.elapsed() >= Duration::from_millis(350));

    // late result for the expired action is unknown now
    c.send(Payload::ActionResult(ActionResultPayload::ok(req.correlation_id))).await;
    let mut saw_unknown = false;
    while let Some(m) = c.recv_within(Duration::from_secs(5)).await {
        match m.payload {
            Payload::Error(e) if e.code == "unknown_correlation" => saw_unknown = true,
            Payload::ChatResponse(_) => break,
            Payload::ActionRequest(r) => panic!("web agent must stop after a timeout, got {}", r.function_name),
            _ => {}
        }
    }
    if !saw_unknown {
        let Payload::Error(e) = c.recv().await.unwrap().payload else { panic!() };
        assert_eq!(e.code, "unknown_correlation");
    }
    server.stop().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn resume_within_grace_and_discard_after() {
    let mut config = demo_config();
    config.session_grace_ms = 300;
    let server = start(config).await;
    let app = demo_app();

    let mut c = Client::connect(&server.ws_url()).await;
    c.register_demo(&app).await;
    let id = c.session_id.clone();
    let handle = server.gateway().session(&id).unwrap();
    assert!(eventually(|| handle.apply_count() == 1).await);
    let before = handle.dump();
    c.close().await;
    assert!(eventually(|| handle.dump()["attached"] == false).await);
    drop(handle);

    let url = format!("{}?session_id={id}", server.ws_url());
    let c2 = Client::connect(&url).await;
    assert!(c2.resumed);
    assert_eq!(c2.session_id, id);
    let mut after = server.gateway().session(&id).unwrap().dump();
    after["attached"] = before["attached"].clone();
    assert_eq!(before, after);

    // a second connection asking for an attached session gets a fresh one
    let c3 = Client::connect(&url).await;
    assert!(!c3.resumed);
    assert_ne!(c3.session_id, id);

    c2.close().await;
    c3.close().await;
    let gateway = server.gateway().clone();
    tokio::time::sleep(Duration::from_millis(150)).await;
    assert!(gateway.session(&id).is_some(), "still inside the grace period");
    assert!(eventually(|| gateway.session_count() == 0).await);
    let c4 = Client::connect(&url).await;
    assert!(!c4.resumed);
    server.stop().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn queue_overflow_is_reported() {
    let server = start_demo().await;
    let mut c = Client::connect(&server.ws_url()).await;
    c.register_demo(&demo_app()).await;
    // the first run blocks on a withheld action; 4 more queue; the 6th overflows
    for i in 0..6 {
        c.send(Payload::ChatRequest(ChatRequestPayload {
            text: format!("{DEMO_GOAL}C{i}"),
        }))
        .await;
    }
    let mut overflow = 0;
    while let Some(m) = c.recv_within(Duration::from_millis(300)).await {
        if let Payload::Error(e) = m.payload {
            if e.code == "queue_full" {
                overflow += 1;
            }
        }
    }
    assert_eq!(overflow, 1);
    server.stop().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn closing_mid_run_fails_gracefully() {
    let server = start_demo().await;
    let mut c = Client::connect(&server.ws_url()).await;
    c.register_demo(&demo_app()).await;
    let id = c.session_id.clone();
    c.send(Payload::ChatRequest(ChatRequestPayload {
        text: format!("{DEMO_GOAL}CCO"),
    }))
    .await;
    let m = c.recv_significant().await.unwrap();
    assert!(matches!(m.payload, Payload::ActionRequest(_)));
    c.close().await;

    let log = server.gateway().log().clone();
    assert!(
        eventually(|| log
            .session_events(&id)
            .iter()
            .any(|e| e["event"] == "agent_failed" && e["code"] == "connection_closed"))
        .await
    );
    assert!(eventually(|| log.session_events(&id).iter().any(|e| e["event"] == "run_finished")).await);
    assert_eq!(health(&server).await["status"], "ok");
    server.stop().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn sessions_do_not_leak_into_each_other() {
    let server = start_demo().await;
    let app = demo_app();
    let mut a = Client::connect(&server.ws_url()).await;
    let mut b = Client::connect(&server.ws_url()).await;
    b.register_demo(&app).await;
    let hb = server.gateway().session(&b.session_id).unwrap();
    assert!(eventually(|| hb.apply_count() == 1).await);
    let before = hb.dump();

    a.register_demo(&app).await;
    let mut other = app.snapshot();
    other.url = "/reports".into();
    a.observe(&other).await;
    a.send(Payload::ChatRequest(ChatRequestPayload { text: "hello".into() })).await;
    assert!(matches!(a.recv_significant().await.unwrap().payload, Payload::ChatResponse(_)));

    assert_eq!(hb.dump(), before);
    assert!(b.recv_within(Duration::from_millis(200)).await.is_none());
    server.stop().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn debug_dump_lists_sessions() {
    let server = start_demo().await;
    let mut c = Client::connect(&server.ws_url()).await;
    c.register_demo(&demo_app()).await;
    let handle = server.gateway().session(&c.session_id).unwrap();
    assert!(eventually(|| handle.apply_count() == 1).await);
    let dump: Value = reqwest::get(server.http_url("/debug/sessions")).await.unwrap().json().await.unwrap();
    assert_eq!(dump[0]["id"], c.session_id.as_str());
    assert_eq!(dump[0]["current_url"], "/search");
    let active: Vec<&str> = dump[0]["active_functions"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    assert_eq!(active, ["type", "click", "navigate"]);
    server.stop().await;
}
