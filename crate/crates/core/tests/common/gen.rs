//! proptest strategies shared by the property tests and the acceptance suite.

use embedagent::observation::{AriaElement, AriaSnapshot};
use embedagent::registry::{FunctionSpec, Granularity, PageFunctionMap, ParamKind, ParamSpec};
use embedagent::wire::{
    ActionRequestPayload, ActionResultPayload, ActionStatus, AgentName, AgentStatusPayload, ChatRequestPayload,
    ChatResponsePayload, ErrorPayload, HelloPayload, ObservationPayload, Payload, RegisterPayload, StatusState,
    WireMessage,
};
use proptest::collection::{btree_map, vec};
use proptest::prelude::*;
use proptest::sample::select;
use serde_json::{Map, Value};

pub fn ident() -> impl Strategy<Value = String> {
    "[a-z][a-zA-Z0-9_]{0,9}"
}

/// Arbitrary printable text, including non-ASCII and JSON-special characters.
pub fn text() -> impl Strategy<Value = String> {
    prop_oneof![
        "[ -~]{0,30}",
        "\\PC{0,20}",
        Just("quote \" backslash \\ slash / tab".to_owned()),
    ]
}

pub fn nonblank() -> impl Strategy<Value = String> {
    text().prop_map(|t| format!("x{t}"))
}

pub fn json_leaf() -> impl Strategy<Value = Value> {
    prop_oneof![
        Just(Value::Null),
        any::<bool>().prop_map(Value::Bool),
        any::<i64>().prop_map(Value::from),
        any::<u64>().prop_map(Value::from),
        text().prop_map(Value::String),
    ]
}

pub fn json_value() -> impl Strategy<Value = Value> {
    json_leaf().prop_recursive(2, 12, 4, |inner| {
        prop_oneof![
            vec(inner.clone(), 0..4).prop_map(Value::Array),
            btree_map(ident(), inner, 0..4).prop_map(|m| Value::Object(m.into_iter().collect())),
        ]
    })
}

pub fn args() -> impl Strategy<Value = Map<String, Value>> {
    btree_map(ident(), json_value(), 0..4).prop_map(|m| m.into_iter().collect())
}

const TAGS: &[&str] = &["button", "a", "input", "select", "textarea", "option", "form", "nav", "table", "div", "img", "span"];

pub fn element() -> impl Strategy<Value = AriaElement> {
    (select(TAGS), nonblank(), proptest::option::of(ident()), proptest::option::of(path()))
        .prop_map(|(tag, label, id, href)| AriaElement {
            tag: tag.to_owned(),
            aria_label: label,
            element_id: id,
            href: if tag == "a" { href } else { None },
        })
}

pub fn snapshot() -> impl Strategy<Value = AriaSnapshot> {
    (path(), vec(element(), 0..8)).prop_map(|(url, elements)| AriaSnapshot::new(url, elements))
}

/// Paths over a tiny alphabet so patterns and URLs collide often.
pub fn path() -> impl Strategy<Value = String> {
    vec(select(&["a", "b", "c", "ab"][..]), 0..4).prop_map(|segs| format!("/{}", segs.join("/")))
}

/// A URL built from a path, optionally with scheme/host, query and fragment.
pub fn url() -> impl Strategy<Value = String> {
    (
        proptest::option::of(select(&["https://example.org", "http://localhost:4200"][..])),
        path(),
        proptest::option::of(select(&["?q=1", "?next=/a/b", "?"][..])),
        proptest::option::of(select(&["#top", "#/a"][..])),
        any::<bool>(),
    )
        .prop_map(|(origin, path, query, frag, trailing)| {
            let mut u = origin.unwrap_or("").to_owned();
            u.push_str(&path);
            if trailing && path != "/" {
                u.push('/');
            }
            u.push_str(query.unwrap_or(""));
            u.push_str(frag.unwrap_or(""));
            u
        })
}

pub fn pattern() -> impl Strategy<Value = String> {
    prop_oneof![
        1 => Just("*".to_owned()),
        3 => path(),
        3 => path().prop_map(|p| if p == "/" { "/*".to_owned() } else { format!("{p}/*") }),
    ]
}

pub fn param() -> impl Strategy<Value = ParamSpec> {
    (
        ident(),
        prop_oneof![
            Just(ParamKind::String),
            Just(ParamKind::Number),
            Just(ParamKind::Boolean),
            vec(ident(), 1..4).prop_map(ParamKind::EnumOf),
        ],
        any::<bool>(),
        text(),
    )
        .prop_map(|(name, kind, required, description)| ParamSpec {
            name,
            kind,
            required,
            description,
        })
}

pub fn function(name: String) -> impl Strategy<Value = FunctionSpec> {
    (
        text(),
        vec(param(), 0..3).prop_map(|mut ps| {
            let mut seen = std::collections::HashSet::new();
            ps.retain(|p| seen.insert(p.name.clone()));
            ps
        }),
        vec(pattern(), 1..3),
        prop_oneof![Just(Granularity::Primitive), Just(Granularity::Composite)],
    )
        .prop_map(move |(description, params, pages, granularity)| FunctionSpec {
            name: name.clone(),
            description,
            params,
            pages,
            granularity,
        })
}

/// A consistent skillset plus a page map that only names its functions.
pub fn skillset_and_map() -> impl Strategy<Value = (Vec<FunctionSpec>, PageFunctionMap)> {
    proptest::collection::btree_set("f[a-z0-9]{0,5}", 0..6)
        .prop_flat_map(|names| {
            let names: Vec<String> = names.into_iter().collect();
            let fns: Vec<_> = names.iter().cloned().map(function).collect();
            let map = if names.is_empty() {
                Just(PageFunctionMap::new()).boxed()
            } else {
                btree_map(pattern(), proptest::sample::subsequence(names.clone(), 0..=names.len()), 0..4)
                    .prop_map(|entries| PageFunctionMap { entries })
                    .boxed()
            };
            (fns, map)
        })
}

pub fn payload() -> impl Strategy<Value = Payload> {
    prop_oneof![
        (ident(), any::<bool>()).prop_map(|(session_id, resumed)| Payload::Hello(HelloPayload { session_id, resumed })),
        (ident(), skillset_and_map()).prop_map(|(app_id, (skillset, page_map))| Payload::Register(RegisterPayload {
            app_id,
            skillset,
            page_map
        })),
        snapshot().prop_map(|s| Payload::Observation(ObservationPayload::from(&s))),
        nonblank().prop_map(|text| Payload::ChatRequest(ChatRequestPayload { text })),
        (ident(), args(), ident()).prop_map(|(function_name, arguments, correlation_id)| {
            Payload::ActionRequest(ActionRequestPayload {
                function_name,
                arguments,
                correlation_id,
            })
        }),
        (ident(), proptest::option::of(nonblank())).prop_map(|(cid, detail)| Payload::ActionResult(match detail {
            Some(d) => ActionResultPayload::failed(cid, d),
            None => ActionResultPayload {
                correlation_id: cid,
                status: ActionStatus::Ok,
                detail: None,
            },
        })),
        text().prop_map(|text| Payload::ChatResponse(ChatResponsePayload { text })),
        (
            select(&[AgentName::Router, AgentName::Web, AgentName::Analysis, AgentName::Chat][..]),
            any::<u32>(),
            select(&[StatusState::Started, StatusState::Step, StatusState::Finished, StatusState::Failed][..]),
            proptest::option::of(ident()),
            proptest::option::of(text()),
        )
            .prop_map(|(agent, step, state, action, detail)| Payload::AgentStatus(AgentStatusPayload {
                agent,
                step,
                state,
                action,
                detail
            })),
        (ident(), text(), proptest::option::of(1u64..)).prop_map(|(code, detail, offending_seq)| Payload::Error(
            ErrorPayload {
                code,
                detail,
                offending_seq
            }
        )),
    ]
}

pub fn message() -> impl Strategy<Value = WireMessage> {
    (text(), 1u64..=u64::MAX / 2, payload()).prop_map(|(sid, seq, payload)| WireMessage::new(sid, seq, payload))
}

/// Frames that are mostly garbage: random bytes, truncated or mutated valid
/// frames, and structurally wrong JSON.
pub fn fuzz_frame() -> impl Strategy<Value = Vec<u8>> {
    let valid = message().prop_map(|m| embedagent::wire::encode_message(&m).unwrap()).boxed();
    prop_oneof![
        vec(any::<u8>(), 0..200),
        (valid.clone(), any::<prop::sample::Index>()).prop_map(|(f, i)| {
            let cut = i.index(f.len() + 1);
            f[..cut].to_vec()
        }),
        (valid.clone(), vec((any::<prop::sample::Index>(), any::<u8>()), 1..6)).prop_map(|(mut f, flips)| {
            for (i, b) in flips {
                let at = i.index(f.len());
                f[at] = b;
            }
            f
        }),
        (valid, select(&["session_id", "seq", "kind", "payload", "correlation_id"][..]), json_value()).prop_map(
            |(f, key, replacement)| {
                let mut v: Value = serde_json::from_slice(&f).unwrap();
                if replacement.is_null() {
                    v.as_object_mut().unwrap().remove(key);
                } else {
                    v[key] = replacement;
                }
                serde_json::to_vec(&v).unwrap()
            }
        ),
        json_value().prop_map(|v| serde_json::to_vec(&v).unwrap()),
    ]
}

/// SMILES-like strings: fluorinated fragments, halogens, branches, rings and
/// some malformed bracket soup.
pub fn smiles() -> impl Strategy<Value = String> {
    let atom = select(
        &[
            "C", "C", "C", "F", "F", "Cl", "Br", "O", "N", "S", "c", "(F)", "(F)", "(Cl)", "(=O)", "(", ")", "1", "=", "#",
            "C(F)(F)", "FC", "[", "]", "@", "/",
        ][..],
    );
    vec(atom, 1..14).prop_map(|parts| parts.concat())
}
