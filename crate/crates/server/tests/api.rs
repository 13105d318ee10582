mod common;

use std::sync::Arc;
use std::time::Duration;

use common::*;
use reqwest::Method;
use serde_json::json;
use tutorgen_core::provider::{ScriptStep, ScriptedBehavior, StubAction, StubProvider};

async fn upstream_server() -> (Server, MockUpstream) {
    let up = MockUpstream::start(Duration::ZERO).await;
    let server = Server::start(Options::new(up.provider())).await;
    (server, up)
}

/// Responses never carry the key or any assembled prompt.
fn assert_no_leaks(server: &Server, up: &MockUpstream) {
    let prompts = up.prompts.lock().unwrap().clone();
    for capture in server.captured() {
        assert!(!capture.contains(SENTINEL_KEY), "key leaked: {capture}");
        for message in prompts.iter().flatten() {
            assert!(
                !capture.contains(&message.content),
                "prompt leaked: {capture}"
            );
        }
    }
}

#[tokio::test]
async fn auth_is_required_and_roles_enforced() {
    let (s, up) = upstream_server().await;
    let r = s.call(Method::GET, "/me", None, Body::None).await;
    assert_eq!((r.status, r.code().as_str()), (401, "unauthorized"));
    let r = s.get("/me", "0123456789abcdef0123456789abcdef-unknown").await;
    assert_eq!(r.status, 401);

    let me = s.get("/me", &s.student).await.json();
    assert_eq!(me["role"], "student");
    assert!(!me.to_string().contains(&s.student));

    let r = s
        .upload(&s.student, "application/json", SAMPLE_COURSE.as_bytes())
        .await;
    assert_eq!((r.status, r.code().as_str()), (403, "forbidden"));

    s.publish_sample().await;
    let r = s.personalize(&s.teacher, SAMPLE_ID, "chess").await;
    assert_eq!(r.status, 403);
    let r = s
        .patch(
            &format!("/courses/{SAMPLE_ID}/sections/interpreting"),
            &s.student,
            json!({"scope": "x"}),
        )
        .await;
    assert_eq!(r.status, 403);
    assert_no_leaks(&s, &up);
}

#[tokio::test]
async fn course_creation_json_and_csv() {
    let (s, up) = upstream_server().await;
    let r = s
        .upload(&s.teacher, "application/json", SAMPLE_COURSE.as_bytes())
        .await;
    assert_eq!(r.status, 201);
    assert_eq!(
        r.headers["location"].to_str().unwrap(),
        format!("/api/v1/courses/{SAMPLE_ID}")
    );
    let created = r.json();
    assert_eq!(created["id"], SAMPLE_ID);
    assert_eq!(created["published"], false);
    assert_eq!(created["version_hash"].as_str().unwrap().len(), 64);

    let r = s
        .upload(&s.teacher, "application/json", SAMPLE_COURSE.as_bytes())
        .await;
    assert_eq!((r.status, r.code().as_str()), (409, "course_exists"));

    // CSV export of one course re-imports under another id.
    let csv = s
        .get(&format!("/courses/{SAMPLE_ID}/export?format=csv"), &s.teacher)
        .await;
    assert_eq!(csv.status, 200);
    assert!(csv.headers["content-type"].to_str().unwrap().starts_with("text/csv"));
    let renamed = csv.text.replace(SAMPLE_ID, "lr-copy");
    let r = s.upload(&s.teacher, "text/csv", renamed.as_bytes()).await;
    assert_eq!(r.status, 201, "{}", r.text);
    assert_eq!(r.json()["id"], "lr-copy");

    let bad_csv = "course_title,course_description,section_index,section_title,section_summary,section_scope,learning_goals,subsection_index,subsection_title,body\n\
                   T,D,1,A,,s,g,1,a,b\n\
                   T,D,3,C,,s,g,1,c,d\n";
    let r = s.upload(&s.teacher, "text/csv", bad_csv.as_bytes()).await;
    assert_eq!((r.status, r.code().as_str()), (422, "schema_error"), "{}", r.text);
    assert_eq!(r.json()["details"]["location"], "rows[1].section_index");

    let r = s.upload(&s.teacher, "application/json", b"{\"format_version\": 1,").await;
    assert_eq!((r.status, r.code().as_str()), (422, "parse_error"));
    assert!(r.json()["details"]["location"].as_str().unwrap().starts_with("1:"));

    let r = s.upload(&s.teacher, "application/xml", b"<course/>").await;
    assert_eq!(r.status, 415);
    let r = s
        .call(
            Method::POST,
            "/courses?format=json",
            Some(&s.teacher),
            Body::Raw("application/octet-stream", SAMPLE_COURSE.replace(SAMPLE_ID, "by-query").into_bytes()),
        )
        .await;
    assert_eq!(r.status, 201);
    assert_no_leaks(&s, &up);
}

#[tokio::test]
async fn course_visibility_by_role_and_owner() {
    let (s, _) = upstream_server().await;
    s.upload(&s.teacher, "application/json", SAMPLE_COURSE.as_bytes())
        .await;
    let list = |token: String| {
        let s = &s;
        async move { s.get("/courses", &token).await.json()["courses"].as_array().unwrap().len() }
    };
    assert_eq!(list(s.teacher.clone()).await, 1);
    assert_eq!(list(s.teacher2.clone()).await, 0);
    assert_eq!(list(s.student.clone()).await, 0);
    assert_eq!(s.get(&format!("/courses/{SAMPLE_ID}"), &s.student).await.status, 404);
    assert_eq!(s.get(&format!("/courses/{SAMPLE_ID}"), &s.teacher2).await.status, 404);
    let r = s
        .post_empty(&format!("/courses/{SAMPLE_ID}/publish"), &s.teacher2)
        .await;
    assert_eq!(r.status, 404);

    s.post_empty(&format!("/courses/{SAMPLE_ID}/publish"), &s.teacher)
        .await;
    assert_eq!(list(s.student.clone()).await, 1);
    let course = s.get(&format!("/courses/{SAMPLE_ID}"), &s.student).await.json();
    let titles: Vec<_> = course["sections"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s["title"].as_str().unwrap().to_string())
        .collect();
    assert_eq!(titles[0], "Why We Need Linear Regression?");
    assert_eq!(titles.len(), 3);
}

#[tokio::test]
async fn update_section_and_publish_rules() {
    let (s, _) = upstream_server().await;
    let created = s
        .upload(&s.teacher, "application/json", SAMPLE_COURSE.as_bytes())
        .await
        .json();
    let path = format!("/courses/{SAMPLE_ID}/sections/fitting-a-line");

    let r = s.patch(&path, &s.teacher, json!({"scope": "Only ordinary least squares."})).await;
    assert_eq!(r.status, 200);
    let update = r.json();
    assert_eq!(update["previous_version_hash"], created["version_hash"]);
    assert_ne!(update["version_hash"], created["version_hash"]);

    let r = s.patch(&path, &s.teacher, json!({"title": "  "})).await;
    assert_eq!((r.status, r.code().as_str()), (422, "invalid_course"));
    assert_eq!(r.json()["details"]["violations"][0]["path"], "sections[1].title");

    let r = s
        .patch(&format!("/courses/{SAMPLE_ID}/sections/nope"), &s.teacher, json!({"scope": "x"}))
        .await;
    assert_eq!(r.status, 404);
    let r = s.patch(&path, &s.teacher, json!({"colour": "red"})).await;
    assert_eq!((r.status, r.code().as_str()), (422, "invalid_request"));

    // A draft may have an empty scope but cannot be published with one.
    let r = s.patch(&path, &s.teacher, json!({"scope": ""})).await;
    assert_eq!(r.status, 200);
    let v = s
        .get(&format!("/courses/{SAMPLE_ID}/validation?mode=publish"), &s.teacher)
        .await
        .json();
    assert_eq!(v["valid"], false);
    let v = s
        .get(&format!("/courses/{SAMPLE_ID}/validation?mode=draft"), &s.teacher)
        .await
        .json();
    assert_eq!(v["valid"], true);
    let r = s.post_empty(&format!("/courses/{SAMPLE_ID}/publish"), &s.teacher).await;
    assert_eq!((r.status, r.code().as_str()), (422, "invalid_course"));
    assert_eq!(r.json()["details"]["violations"][0]["path"], "sections[1].scope");

    s.patch(&path, &s.teacher, json!({"scope": "Least squares only."})).await;
    for _ in 0..2 {
        let r = s.post_empty(&format!("/courses/{SAMPLE_ID}/publish"), &s.teacher).await;
        assert_eq!(r.status, 200);
        assert_eq!(r.json()["published"], true);
    }
    // Published courses must stay publishable.
    let r = s.patch(&path, &s.teacher, json!({"learning_goals": []})).await;
    assert_eq!(r.status, 422);
}

#[tokio::test]
async fn personalize_then_cache_hit() {
    let (s, up) = upstream_server().await;
    let r = s.personalize(&s.student, SAMPLE_ID, "chess").await;
    assert_eq!(r.status, 404);
    s.upload(&s.teacher, "application/json", SAMPLE_COURSE.as_bytes())
        .await;
    let r = s.personalize(&s.student, SAMPLE_ID, "chess").await;
    assert_eq!(r.status, 404, "draft courses are invisible to students");
    s.post_empty(&format!("/courses/{SAMPLE_ID}/publish"), &s.teacher)
        .await;

    let r = s
        .post(
            &format!("/courses/{SAMPLE_ID}/personalize"),
            &s.student,
            json!({"interests": "  ", "career_goals": ""}),
        )
        .await;
    assert_eq!((r.status, r.code().as_str()), (422, "empty_persona"));

    let r = s.personalize(&s.student, SAMPLE_ID, "Jujutsu Kaisen").await;
    assert_eq!(r.status, 202);
    let job = r.json();
    assert_eq!(
        r.headers["location"].to_str().unwrap(),
        format!("/api/v1/jobs/{}", job["id"].as_str().unwrap())
    );
    assert!(job.get("result_ref").is_none());
    let done = s.wait_job(&s.student, job["id"].as_str().unwrap()).await;
    assert_eq!(done["state"], "succeeded");
    assert_eq!(done["kind"], "curriculum");
    assert_eq!(up.calls(), 1);
    let history = s.state.jobs().history(job["id"].as_str().unwrap()).unwrap();
    assert_eq!(format!("{history:?}"), "[Queued, Running, Succeeded]");

    // Same persona modulo whitespace and case: cache hit.
    let r = s.personalize(&s.student, SAMPLE_ID, " jujutsu   KAISEN ").await;
    assert_eq!(r.status, 200);
    assert_eq!(r.json()["state"], "succeeded");
    assert_eq!(r.json()["result_ref"], done["result_ref"]);
    assert_eq!(up.calls(), 1);

    let cur_id = done["result_ref"].as_str().unwrap();
    let cur = s.get(&format!("/curricula/{cur_id}"), &s.student).await.json();
    assert_eq!(cur["state"], "generated");
    let ids: Vec<_> = cur["entries"].as_array().unwrap().iter().map(|e| e["section_id"].clone()).collect();
    assert_eq!(ids, ["why-linear-regression", "fitting-a-line", "interpreting"]);
    assert!(cur["entries"][0]["analogy_theme"].as_str().unwrap().contains("Jujutsu Kaisen"));
    assert_no_leaks(&s, &up);
}

#[tokio::test]
async fn jobs_are_private_and_report_state() {
    let stub = Arc::new(StubProvider::new(ScriptedBehavior::sequence(vec![
        ScriptStep::delayed(Duration::from_millis(300), StubAction::Template),
        ScriptStep::new(StubAction::AuthError),
    ])));
    let s = Server::start(Options::new(stub.clone())).await;
    s.publish_sample().await;
    assert_eq!(s.get("/jobs/job-unknown", &s.student).await.status, 404);

    let job = s.personalize(&s.student, SAMPLE_ID, "chess").await.json();
    let id = job["id"].as_str().unwrap();
    tokio::time::sleep(Duration::from_millis(100)).await;
    let running = s.get(&format!("/jobs/{id}"), &s.student).await.json();
    assert_eq!(running["state"], "running");
    assert!(running.get("result_ref").is_none());
    assert_eq!(s.get(&format!("/jobs/{id}"), &s.student2).await.status, 404);
    assert_eq!(s.wait_job(&s.student, id).await["state"], "succeeded");

    let job = s.personalize(&s.student, SAMPLE_ID, "opera").await.json();
    let failed = s.wait_job(&s.student, job["id"].as_str().unwrap()).await;
    assert_eq!(failed["state"], "failed");
    assert_eq!(failed["error"]["code"], "provider_error");
    assert!(failed.get("result_ref").is_none());
    // A failure is not cached: the next attempt calls the provider again.
    let before = stub.calls();
    let job = s.personalize(&s.student, SAMPLE_ID, "opera").await;
    assert_eq!(job.status, 202);
    s.wait_job(&s.student, job.json()["id"].as_str().unwrap()).await;
    assert_eq!(stub.calls(), before + 1);
}

#[tokio::test]
async fn identical_concurrent_requests_share_one_generation() {
    let stub = Arc::new(StubProvider::new(ScriptedBehavior::template_with_latency(
        Duration::from_millis(200),
    )));
    let s = Server::start(Options::new(stub.clone())).await;
    s.publish_sample().await;
    let (a, b) = tokio::join!(
        s.personalize(&s.student, SAMPLE_ID, "chess"),
        s.personalize(&s.student2, SAMPLE_ID, "Chess")
    );
    let (a, b) = (a.json(), b.json());
    assert_eq!(a["id"], b["id"]);
    let done = s.wait_job(&s.student2, b["id"].as_str().unwrap()).await;
    assert_eq!(done["state"], "succeeded");
    assert_eq!(stub.calls(), 1);
}

#[tokio::test]
async fn content_requires_saved_curriculum() {
    let (s, up) = upstream_server().await;
    s.publish_sample().await;
    let cur = s.curriculum(&s.student, SAMPLE_ID, "Jujutsu Kaisen").await;
    let content_path = format!("/curricula/{cur}/content");
    let target = json!({"section_id": "why-linear-regression", "subsection_id": "variables"});

    let r = s.post(&content_path, &s.student, target.clone()).await;
    assert_eq!((r.status, r.code().as_str()), (409, "curriculum_not_saved"));
    assert_eq!(up.calls(), 1);

    // Saving is per student and idempotent; other students cannot see it.
    assert_eq!(s.post_empty(&format!("/curricula/{cur}/save"), &s.student2).await.status, 404);
    assert_eq!(s.get(&format!("/curricula/{cur}"), &s.student2).await.status, 404);
    for _ in 0..2 {
        let r = s.post_empty(&format!("/curricula/{cur}/save"), &s.student).await;
        assert_eq!(r.status, 200);
        assert_eq!(r.json()["state"], "saved");
    }
    assert_eq!(s.get(&format!("/curricula/{cur}"), &s.student).await.json()["state"], "saved");

    let r = s
        .post(&content_path, &s.student, json!({"section_id": "nope", "subsection_id": "variables"}))
        .await;
    assert_eq!(r.status, 404);
    let r = s
        .post(&content_path, &s.student, json!({"section_id": "why-linear-regression", "subsection_id": "nope"}))
        .await;
    assert_eq!(r.status, 404);

    let r = s.post(&content_path, &s.student, target.clone()).await;
    assert_eq!(r.status, 202);
    let job = s.wait_job(&s.student, r.json()["id"].as_str().unwrap()).await;
    assert_eq!(job["kind"], "content");
    let cnt = job["result_ref"].as_str().unwrap().to_string();
    assert_eq!(up.calls(), 2);

    let r = s.post(&content_path, &s.student, target.clone()).await;
    assert_eq!(r.status, 200);
    assert_eq!(r.json()["result_ref"], cnt.as_str());
    assert_eq!(up.calls(), 2);

    let content = s.get(&format!("/content/{cnt}"), &s.student).await.json();
    assert!(content["body"].as_str().unwrap().contains("Jujutsu Kaisen"));
    let practices = content["practices"].as_array().unwrap();
    assert!(!practices.is_empty());
    for p in practices {
        assert!(p.get("correct_index").is_none());
        for c in p["choices"].as_array().unwrap() {
            assert!(c.get("feedback").is_none());
            assert!(c.get("text").is_some());
        }
    }
    assert_eq!(s.get(&format!("/content/{cnt}"), &s.student2).await.status, 404);
    assert_eq!(s.get("/content/cnt-unknown", &s.student).await.status, 404);

    // Teacher edit: the saved curriculum is now stale.
    s.patch(
        &format!("/courses/{SAMPLE_ID}/sections/interpreting"),
        &s.teacher,
        json!({"summary": "Reading coefficients with care."}),
    )
    .await;
    let r = s.post(&content_path, &s.student, target).await;
    assert_eq!((r.status, r.code().as_str()), (409, "version_mismatch"));
    assert_eq!(up.calls(), 2);
    assert_no_leaks(&s, &up);
}

#[tokio::test]
async fn answers_are_graded_server_side() {
    let (s, up) = upstream_server().await;
    s.publish_sample().await;
    let cur = s.curriculum(&s.student, SAMPLE_ID, "Jujutsu Kaisen").await;
    s.post_empty(&format!("/curricula/{cur}/save"), &s.student).await;
    let cnt = s.content(&s.student, &cur, "why-linear-regression", "variables").await;
    let content = s.get(&format!("/content/{cnt}"), &s.student).await.json();
    let pid = content["practices"][0]["id"].as_str().unwrap().to_string();
    let n = content["practices"][0]["choices"].as_array().unwrap().len();
    let answer = |i: usize| {
        let s = &s;
        let path = format!("/content/{cnt}/practices/{pid}/answer");
        async move { s.post(&path, &s.student, json!({"chosen_index": i})).await }
    };

    let mut correct = 0;
    for i in 0..n {
        let r = answer(i).await;
        assert_eq!(r.status, 200);
        let g = r.json();
        if g["correct"] == true {
            correct += 1;
        } else {
            assert!(g["feedback"].as_str().unwrap().starts_with("Try again."));
        }
    }
    assert_eq!(correct, 1);
    let r = answer(9).await;
    assert_eq!((r.status, r.code().as_str()), (422, "index_out_of_range"));
    let r = s
        .post(&format!("/content/{cnt}/practices/p99/answer"), &s.student, json!({"chosen_index": 0}))
        .await;
    assert_eq!(r.status, 404);
    let r = s
        .post(&format!("/content/{cnt}/practices/{pid}/answer"), &s.student2, json!({"chosen_index": 0}))
        .await;
    assert_eq!(r.status, 404);

    let attempts = s.state.attempts();
    assert_eq!(attempts.len(), n);
    assert_eq!(attempts.iter().filter(|a| a.correct).count(), 1);
    assert!(attempts.iter().all(|a| a.content_id == cnt && a.practice_id == pid));
    assert_no_leaks(&s, &up);
}

#[tokio::test]
async fn reveal_answers_flag() {
    let up = MockUpstream::start(Duration::ZERO).await;
    let mut options = Options::new(up.provider());
    options.reveal_answers = true;
    let s = Server::start(options).await;
    s.publish_sample().await;
    let cur = s.curriculum(&s.student, SAMPLE_ID, "chess").await;
    s.post_empty(&format!("/curricula/{cur}/save"), &s.student).await;
    let cnt = s.content(&s.student, &cur, "fitting-a-line", "residuals").await;
    let content = s.get(&format!("/content/{cnt}"), &s.student).await.json();
    assert!(content["practices"][0]["correct_index"].is_u64());
    assert!(content["practices"][0]["choices"][0]["feedback"].is_string());
}

#[tokio::test]
async fn malformed_request_bodies_use_error_shape() {
    let (s, _) = upstream_server().await;
    s.publish_sample().await;
    let r = s
        .call(
            Method::POST,
            &format!("/courses/{SAMPLE_ID}/personalize"),
            Some(&s.student),
            Body::Raw("application/json", b"{not json".to_vec()),
        )
        .await;
    assert_eq!((r.status, r.code().as_str()), (422, "invalid_request"));
    let r = s
        .call(
            Method::POST,
            &format!("/courses/{SAMPLE_ID}/personalize"),
            Some(&s.student),
            Body::Raw("text/plain", b"{}".to_vec()),
        )
        .await;
    assert_eq!(r.status, 415);
    let r = s.get("/no/such/route", &s.student).await;
    assert_eq!((r.status, r.code().as_str()), (404, "not_found"));
}

#[tokio::test]
async fn state_survives_restart_with_store_root() {
    let dir = tempfile::tempdir().unwrap();
    let up = MockUpstream::start(Duration::ZERO).await;
    let mut options = Options::new(up.provider());
    options.store_root = Some(dir.path().to_path_buf());
    let s = Server::start(options).await;
    s.publish_sample().await;
    let cur = s.curriculum(&s.student, SAMPLE_ID, "chess").await;
    s.post_empty(&format!("/curricula/{cur}/save"), &s.student).await;
    let cnt = s.content(&s.student, &cur, "fitting-a-line", "residuals").await;
    let content = s.get(&format!("/content/{cnt}"), &s.student).await.json();
    let pid = content["practices"][0]["id"].as_str().unwrap().to_string();
    s.post(&format!("/content/{cnt}/practices/{pid}/answer"), &s.student, json!({"chosen_index": 0}))
        .await;
    assert_eq!(up.calls(), 2);

    let mut options = Options::new(up.provider());
    options.store_root = Some(dir.path().to_path_buf());
    options.seeds = Some(s.seeds.clone());
    let s2 = Server::start(options).await;
    assert_eq!(s2.get(&format!("/courses/{SAMPLE_ID}"), &s2.student).await.status, 200);
    assert_eq!(s2.get(&format!("/curricula/{cur}"), &s2.student).await.json()["state"], "saved");
    assert_eq!(s2.get(&format!("/content/{cnt}"), &s2.student).await.json(), content);
    let r = s2.personalize(&s2.student, SAMPLE_ID, "chess").await;
    assert_eq!(r.status, 200);
    assert_eq!(up.calls(), 2);
    let log = std::fs::read_to_string(dir.path().join("state/attempts.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 1);
}
