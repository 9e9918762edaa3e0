mod common;

use std::io::{Read, Write};
use std::net::TcpStream;
use std::sync::Arc;
use std::time::Duration;

use common::corpus;
use facret::descriptors::DescriptorMatrix;
use facret::matcher::ObjectIndex;
use facret::service::protocol::{read_frame, write_frame, FrameRead};
use facret::service::{
    build_index, load_index, local_query, prepare_query, query_remote, save_index, serve, PipelineConfig, QueryMessage,
    ResponseMessage, RetrievalClient, ServerConfig, Status,
};
use facret::ServiceError;

fn fixture() -> (Vec<DescriptorMatrix>, Vec<DescriptorMatrix>, ObjectIndex) {
    let all = corpus(8, 3, 16, 80, 3, 0.03, 21);
    let (queries, database): (Vec<_>, Vec<_>) = all.into_iter().enumerate().partition(|(i, _)| i % 3 == 0);
    let queries: Vec<_> = queries.into_iter().map(|(_, m)| m).collect();
    let database: Vec<_> = database.into_iter().map(|(_, m)| m).collect();
    let index = build_index(&database, &PipelineConfig::default()).unwrap();
    (queries, database, index)
}

fn raw_round_trip(stream: &mut TcpStream, payload: &[u8]) -> ResponseMessage {
    write_frame(stream, payload).unwrap();
    match read_frame(stream, usize::MAX).unwrap() {
        FrameRead::Frame(bytes) => ResponseMessage::decode(&bytes).unwrap(),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn held_out_view_finds_its_object() {
    let (queries, _, index) = fixture();
    let server = serve(Arc::new(index), "127.0.0.1:0", ServerConfig::default()).unwrap();
    for q in &queries {
        let list = query_remote(server.local_addr(), q, 5, 2, 5).unwrap();
        assert!(list.len() <= 5);
        assert!(list.position(q.object_id()).is_some(), "{} missing", q.image_id());
    }
    server.shutdown();
}

#[test]
fn indexed_view_matches_itself_first() {
    let (_, database, index) = fixture();
    let server = serve(Arc::new(index), "127.0.0.1:0", ServerConfig::default()).unwrap();
    let list = query_remote(server.local_addr(), &database[4], 4, 1, 5).unwrap();
    assert_eq!(list.entries[0].object_id, database[4].object_id());
}

#[test]
fn bad_frames_do_not_close_the_connection() {
    let (queries, _, index) = fixture();
    let config = ServerConfig { max_frame: 4096, ..ServerConfig::default() };
    let server = serve(Arc::new(index), "127.0.0.1:0", config).unwrap();
    let mut stream = TcpStream::connect(server.local_addr()).unwrap();
    stream.set_read_timeout(Some(Duration::from_secs(30))).unwrap();

    let good = prepare_query(&queries[0], 5, 2, 5, &PipelineConfig::default()).unwrap();
    let bytes = good.encode();

    let truncated = raw_round_trip(&mut stream, &bytes[..bytes.len() - 7]);
    assert_eq!(truncated.status, Status::MalformedFrame);
    assert!(truncated.error_text.starts_with("malformed frame"), "{}", truncated.error_text);

    let zero_eta = QueryMessage { eta: 0, ..good.clone() };
    let invalid = raw_round_trip(&mut stream, &zero_eta.encode());
    assert_eq!(invalid.status, Status::InvalidParameters);
    assert!(invalid.error_text.starts_with("invalid parameters"));

    let oversized = raw_round_trip(&mut stream, &vec![0u8; 5000]);
    assert_eq!(oversized.status, Status::MalformedFrame);

    let ok = raw_round_trip(&mut stream, &bytes);
    assert_eq!(ok.status, Status::Ok);
    let ranks: Vec<u16> = ok.results.iter().map(|e| e.rank).collect();
    assert_eq!(ranks, (1..=ok.results.len() as u16).collect::<Vec<_>>());
}

#[test]
fn remote_equals_local_under_concurrency() {
    let (queries, _, index) = fixture();
    let index = Arc::new(index);
    let server = serve(Arc::clone(&index), "127.0.0.1:0", ServerConfig::default()).unwrap();
    let addr = server.local_addr();
    let config = PipelineConfig::default();
    std::thread::scope(|s| {
        for worker in 0..16 {
            let queries = &queries;
            let index = &index;
            s.spawn(move || {
                let mut client = RetrievalClient::connect(addr, Duration::from_secs(30)).unwrap();
                for (i, q) in queries.iter().enumerate() {
                    let alpha = ((worker + i) % 6) as u16;
                    let query = prepare_query(q, 5, alpha, 5, &config).unwrap();
                    let remote = client.round_trip(&query.encode()).unwrap();
                    let local = local_query(index, q, 5, alpha, 5, &config).unwrap().encode();
                    assert_eq!(remote, local);
                }
            });
        }
    });
}

#[test]
fn remote_status_surfaces_as_error() {
    let (queries, _, index) = fixture();
    let server = serve(Arc::new(index), "127.0.0.1:0", ServerConfig::default()).unwrap();
    let mut client = RetrievalClient::connect(server.local_addr(), Duration::from_secs(30)).unwrap();
    let err = client.query(&queries[0], 3, 4, 5, &PipelineConfig::default()).unwrap_err();
    assert!(matches!(err, ServiceError::Remote { status: 2, .. }), "{err}");
}

#[test]
fn refused_connection_is_an_error() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    assert!(RetrievalClient::connect(addr, Duration::from_secs(2)).is_err());
}

#[test]
fn saved_index_serves_identically() {
    let (queries, _, index) = fixture();
    let reloaded = load_index(&save_index(&index).unwrap()).unwrap();
    let config = PipelineConfig::default();
    for q in &queries {
        let a = local_query(&index, q, 6, 2, 5, &config).unwrap();
        let b = local_query(&reloaded, q, 6, 2, 5, &config).unwrap();
        assert_eq!(a.encode(), b.encode());
    }
}

#[test]
fn uploaded_payload_size() {
    // T=128, k=24, b=5: 1920 level bytes per matrix
    let m = corpus(1, 1, 128, 600, 24, 0.0, 3).remove(0);
    let config = PipelineConfig {
        order: facret::service::OrderMode::Fixed(24),
        ..PipelineConfig::default()
    };
    let query = prepare_query(&m, 20, 2, 5, &config).unwrap();
    let id = m.image_id().len();
    assert_eq!(query.pca_blob.len(), 20 + id + 1920);
    assert_eq!(query.nmf_blob.len(), 20 + id + 1920);
    assert_eq!(query.encode().len(), 4 + 1 + 2 + 2 + 4 + 4 + 2 * (20 + id + 1920));
}

#[test]
fn server_shutdown_releases_port() {
    let (_, _, index) = fixture();
    let server = serve(Arc::new(index), "127.0.0.1:0", ServerConfig::default()).unwrap();
    let addr = server.local_addr();
    server.shutdown();
    let mut buf = [0u8; 1];
    // any connection that still succeeds must be closed without a reply
    if let Ok(mut s) = TcpStream::connect(addr) {
        s.set_read_timeout(Some(Duration::from_millis(200))).unwrap();
        let _ = s.write_all(&[0, 0, 0, 0]);
        assert!(!matches!(s.read(&mut buf), Ok(n) if n > 0));
    }
}
