use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::thread;
use std::time::Duration;

use oneshot_core::pir::{refine, PirConfig, PromptSet, StopReason};
use oneshot_core::segmenter::{
    oracle_segment, rle, BridgeBackend, BridgeClient, OracleScene, SegmenterBackend,
};
use oneshot_core::tensor_io::{save_feature_grid, BinaryMask, FeatureGrid};
use oneshot_core::Error;

fn golden(name: &str) -> String {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    std::fs::read_to_string(path).unwrap()
}

fn golden_mask() -> BinaryMask {
    let text = golden("mask_4x6.txt");
    let rows: Vec<&str> = text.lines().map(str::trim).collect();
    BinaryMask::from_fn(rows.len(), rows[0].len(), |r, c| rows[r].as_bytes()[c] == b'#')
}

/// Serves one connection with `handler(request_line) -> response_line` and
/// returns every request it saw.
fn serve_one(
    handler: impl Fn(&str) -> String + Send + 'static,
) -> (String, thread::JoinHandle<Vec<String>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    let handle = thread::spawn(move || {
        let (stream, _) = listener.accept().unwrap();
        let mut writer = stream.try_clone().unwrap();
        let mut seen = Vec::new();
        for line in BufReader::new(stream).lines() {
            let line = line.unwrap();
            let reply = handler(&line);
            writer.write_all(reply.as_bytes()).unwrap();
            writer.write_all(b"\n").unwrap();
            seen.push(line);
        }
        seen
    });
    (addr, handle)
}

#[test]
fn rle_codec_matches_golden() {
    let mask = golden_mask();
    assert_eq!(rle::encode(&mask), golden("mask_4x6.rle").trim_end());
    assert_eq!(rle::decode(golden("mask_4x6.rle").trim_end(), 4, 6).unwrap(), mask);
}

#[test]
fn scripted_session_is_byte_exact() {
    let responses: Vec<String> = golden("session_responses.jsonl").lines().map(String::from).collect();
    let replies = std::sync::Mutex::new(responses.into_iter());
    let (addr, server) = serve_one(move |_| replies.lock().unwrap().next().unwrap());

    let backend = BridgeBackend::new(addr, Duration::from_secs(5));
    let mut session = backend.open("q1", Path::new("/data/q1.png")).unwrap();
    assert_eq!(session.output_dims(), (4, 6));
    let mut prompts = PromptSet {
        positives: vec![(2, 1)],
        negatives: vec![],
        bbox: Some((1, 0, 4, 2)),
    };
    assert_eq!(session.segment(&prompts).unwrap(), golden_mask());
    prompts.negatives.push((5, 3));
    assert!(session.segment(&prompts).unwrap().is_empty());
    drop(session);

    let seen = server.join().unwrap();
    let expected: Vec<String> = golden("session_requests.jsonl").lines().map(String::from).collect();
    assert_eq!(seen, expected);
}

#[test]
fn refinement_through_the_wire() {
    // the server side decodes prompts and answers like the oracle backend
    let a = BinaryMask::from_fn(32, 32, |r, c| (4..14).contains(&r) && (4..14).contains(&c));
    let b = BinaryMask::from_fn(32, 32, |r, c| (18..28).contains(&r) && (18..30).contains(&c));
    let scene = OracleScene::new(32, 32, vec![a.clone(), b]).unwrap();
    let (addr, server) = serve_one(move |line| {
        let req: serde_json::Value = serde_json::from_str(line).unwrap();
        match req["op"].as_str().unwrap() {
            "register_image" => r#"{"ok":true,"image_id":"s","height":32,"width":32}"#.into(),
            "segment" => {
                let mut prompts = PromptSet::default();
                for p in req["points"].as_array().unwrap() {
                    let v: Vec<usize> = p.as_array().unwrap().iter().map(|x| x.as_u64().unwrap() as usize).collect();
                    if v[2] == 1 {
                        prompts.positives.push((v[0], v[1]));
                    } else {
                        prompts.negatives.push((v[0], v[1]));
                    }
                }
                if let Some(bx) = req["box"].as_array() {
                    let v: Vec<usize> = bx.iter().map(|x| x.as_u64().unwrap() as usize).collect();
                    prompts.bbox = Some((v[0], v[1], v[2], v[3]));
                }
                let mask = oracle_segment(&scene, &prompts);
                serde_json::json!({"ok": true, "image_id": "s", "rle": rle::encode(&mask), "height": 32, "width": 32})
                    .to_string()
            }
            _ => r#"{"ok":false,"error":"BadRequest"}"#.into(),
        }
    });

    let prior = BinaryMask::from_fn(32, 32, |r, c| (5..14).contains(&r) && (4..14).contains(&c));
    let backend = BridgeBackend::new(addr, Duration::from_secs(5));
    let mut session = backend.open("s", Path::new("s.png")).unwrap();
    let (mask, trace) = refine(session.as_mut(), &prior, &PirConfig::default()).unwrap();
    drop(session);
    assert_eq!(mask, a);
    assert_eq!(trace.stop, StopReason::Converged);
    assert_eq!(server.join().unwrap().len(), 2);
}

#[test]
fn features_are_loaded_from_the_returned_path() {
    let dir = tempfile::tempdir().unwrap();
    let npy: PathBuf = dir.path().join("f.npy");
    let grid = FeatureGrid::new(2, 3, 2, (0..12).map(|v| v as f32).collect()).unwrap();
    save_feature_grid(&npy, &grid).unwrap();
    let reply = serde_json::json!({"ok": true, "image_id": "x", "tensor_path": npy}).to_string();
    let (addr, server) = serve_one(move |_| reply.clone());
    let backend = BridgeBackend::new(addr, Duration::from_secs(5));
    assert_eq!(backend.fetch_features("x", Path::new("x.png")).unwrap(), grid);
    assert_eq!(
        server.join().unwrap(),
        [r#"{"op":"features","image_id":"x","image_path":"x.png"}"#]
    );
}

#[test]
fn error_codes_and_timeout() {
    let (addr, _server) = serve_one(|_| r#"{"ok":false,"error":"UnknownImage","image_id":"nope"}"#.into());
    let backend = BridgeBackend::new(addr, Duration::from_secs(5));
    assert!(matches!(backend.open("nope", Path::new("n.png")), Err(Error::UnknownImage(_))));

    // a server that accepts but never answers
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let hold = thread::spawn(move || {
        let (s, _) = listener.accept().unwrap();
        thread::sleep(Duration::from_millis(800));
        drop(s);
    });
    let mut client = BridgeClient::connect(addr, Duration::from_millis(150)).unwrap();
    assert!(matches!(client.register_image("a", Path::new("a.png")), Err(Error::Timeout)));
    hold.join().unwrap();

    // nothing listening
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap();
    let _ = TcpStream::connect(port);
    let res = BridgeBackend::new(port.to_string(), Duration::from_millis(200)).open("a", Path::new("a.png"));
    assert!(res.is_err());
}
